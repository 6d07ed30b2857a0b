"""One-hot input matrices and the per-symbol binary edit distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .strings import Alphabet, edit_distance

# Placeholder symbol for restricted strings; outside every byte alphabet.
BOTTOM = 256


@dataclass(frozen=True)
class OneHotMatrix:
    rows: np.ndarray  # (alphabet.size, L) uint8
    source_len: int

    @property
    def width(self) -> int:
        return self.rows.shape[1]


def one_hot(s: bytes, alphabet: Alphabet, L: int) -> OneHotMatrix:
    if len(s) > L:
        raise ValueError(f"string of length {len(s)} exceeds L={L}")
    ords = alphabet.encode(s)
    rows = np.zeros((alphabet.size, L), dtype=np.uint8)
    rows[ords, np.arange(len(ords))] = 1
    return OneHotMatrix(rows, len(s))


def one_hot_batch(ords: list[np.ndarray], n_channels: int, L: int, dtype=np.float64) -> np.ndarray:
    """Stack pre-encoded ordinal arrays into a (B, n_channels, L) float tensor."""
    out = np.zeros((len(ords), n_channels, L), dtype=dtype)
    for b, o in enumerate(ords):
        if len(o) > L:
            raise ValueError(f"string of length {len(o)} exceeds L={L}")
        out[b, o, np.arange(len(o))] = 1
    return out


def from_one_hot(X: OneHotMatrix, alphabet: Alphabet) -> bytes:
    cols = X.rows[:, : X.source_len]
    if not np.all(cols.sum(axis=0) == 1):
        raise ValueError("not a valid one-hot encoding")
    return alphabet.decode(np.argmax(cols, axis=0))


def binary_edit_distance(X: OneHotMatrix, Y: OneHotMatrix) -> int:
    """Sum over symbols of the edit distance between matching rows.

    Rows are compared at their source lengths; shared zero padding is not
    part of either string.
    """
    if X.rows.shape[0] != Y.rows.shape[0]:
        raise ValueError(f"alphabet sizes differ: {X.rows.shape[0]} vs {Y.rows.shape[0]}")
    M, N = X.source_len, Y.source_len
    return sum(edit_distance(X.rows[i, :M], Y.rows[i, :N]) for i in range(X.rows.shape[0]))


def restrict_to_char(s: bytes, c: int) -> tuple[np.ndarray, int]:
    """Keep occurrences of ``c`` and replace every other symbol with BOTTOM.

    Returns the restricted symbol array and the number of occurrences of ``c``.
    """
    arr = np.frombuffer(bytes(s), dtype=np.uint8).astype(np.int32)
    keep = arr == c
    return np.where(keep, arr, BOTTOM), int(keep.sum())


def one_hot_bounds(delta: int, n_symbols: int, M: int, N: int) -> tuple[int, int]:
    """Lower/upper bound on the binary edit distance given the true distance."""
    return n_symbols * delta - (n_symbols - 1) * (M + N), n_symbols * delta
