"""CGK randomized embedding of edit distance into Hamming space."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .strings import StringDataset

PRNG_NAME = "numpy.PCG64"
CGKE_MAGIC = b"CGKE"
CGKE_VERSION = 1


@dataclass(frozen=True)
class CgkMatrix:
    """Random 3L x |D| bit matrix R; row j is the step function pi_j."""

    bits: np.ndarray
    seed: int
    prng: str = field(default=PRNG_NAME)

    @property
    def L(self) -> int:
        return self.bits.shape[0] // 3

    @property
    def n_symbols(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def generate(cls, L: int, n_symbols: int, seed: int) -> "CgkMatrix":
        rng = np.random.Generator(np.random.PCG64(seed))
        bits = rng.integers(0, 2, size=(3 * L, n_symbols), dtype=np.uint8)
        return cls(bits, seed)


def cgk_embed(ords: np.ndarray, R: CgkMatrix, trace: list | None = None) -> np.ndarray:
    """Embed an ordinal-encoded string into 3L symbols, padding with |D|.

    If ``trace`` is given, the pointer value before every step is appended
    to it.
    """
    n = len(ords)
    if n > R.L:
        raise ValueError(f"string of length {n} exceeds L={R.L}")
    bottom = R.n_symbols
    out = np.empty(3 * R.L, dtype=np.int32)
    i = 0
    for j in range(3 * R.L):
        if trace is not None:
            trace.append(i)
        if i < n:
            out[j] = ords[i]
            i += R.bits[j, ords[i]]
        else:
            out[j] = bottom
    return out


@njit(cache=True)
def _embed_packed(flat, offsets, bits):
    steps = bits.shape[0]
    bottom = bits.shape[1]
    n_strings = offsets.shape[0] - 1
    out = np.empty((n_strings, steps), dtype=np.int32)
    for s in range(n_strings):
        lo = offsets[s]
        n = offsets[s + 1] - lo
        i = 0
        for j in range(steps):
            if i < n:
                c = flat[lo + i]
                out[s, j] = c
                i += bits[j, c]
            else:
                out[s, j] = bottom
    return out


def cgk_embed_batch(ords: list[np.ndarray], R: CgkMatrix) -> np.ndarray:
    """Embed many ordinal strings; returns an (n, 3L) int32 matrix."""
    lengths = np.array([len(o) for o in ords], dtype=np.int64)
    if lengths.size and lengths.max() > R.L:
        raise ValueError(f"string of length {lengths.max()} exceeds L={R.L}")
    offsets = np.zeros(len(ords) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(lengths)
    flat = np.concatenate(ords).astype(np.int32) if ords else np.empty(0, np.int32)
    return _embed_packed(flat, offsets, R.bits)


def embed_dataset(ds: StringDataset, R: CgkMatrix) -> np.ndarray:
    return cgk_embed_batch([ds.alphabet.encode(s) for s in ds.strings], R)


def hamming(y1: np.ndarray, y2: np.ndarray) -> int:
    if len(y1) != len(y2):
        raise ValueError(f"length mismatch: {len(y1)} vs {len(y2)}")
    return int(np.count_nonzero(np.asarray(y1) != np.asarray(y2)))


@dataclass
class DistortionReport:
    n_pairs: int
    violations: int
    ratios: np.ndarray  # d_H / edit distance over pairs with nonzero edit distance
    hamming: np.ndarray
    edit: np.ndarray

    @property
    def violation_fraction(self) -> float:
        return self.violations / self.n_pairs

    def quantiles(self, qs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict[float, float]:
        if self.ratios.size == 0:
            return {q: float("nan") for q in qs}
        return {q: float(np.quantile(self.ratios, q)) for q in qs}


def cgk_distortion_report(ds: StringDataset, pairs: int, seed: int, R: CgkMatrix | None = None) -> DistortionReport:
    """Sample string pairs and count where Hamming distance undercuts edit distance."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    if R is None:
        R = CgkMatrix.generate(ds.max_len, ds.alphabet.size, seed)
    n = len(ds)
    left = rng.integers(0, n, size=pairs)
    right = rng.integers(0, n, size=pairs)
    if n > 1:
        # Resample self-pairs so each pair is two distinct items.
        same = left == right
        while same.any():
            right[same] = rng.integers(0, n, size=int(same.sum()))
            same = left == right
    emb = embed_dataset(ds, R)
    ham = np.count_nonzero(emb[left] != emb[right], axis=1)
    ed = ds.packed.pairs(left, right)
    nz = ed > 0
    return DistortionReport(
        n_pairs=pairs,
        violations=int(np.count_nonzero(ham < ed)),
        ratios=ham[nz] / ed[nz],
        hamming=ham,
        edit=ed,
    )


def write_cgke(path: str | Path, emb: np.ndarray, L: int, n_symbols: int) -> None:
    """Dump ordinal CGK embeddings (bottom encoded as n_symbols) as CGKE."""
    emb = np.asarray(emb)
    if emb.ndim != 2 or emb.shape[1] != 3 * L:
        raise ValueError(f"expected rows of length {3 * L}, got shape {emb.shape}")
    if n_symbols > 255:
        raise ValueError("CGKE stores one byte per symbol; alphabet too large")
    header = CGKE_MAGIC + struct.pack("<IIIQ", CGKE_VERSION, L, n_symbols, emb.shape[0])
    Path(path).write_bytes(header + emb.astype(np.uint8).tobytes())


def read_cgke(path: str | Path) -> tuple[np.ndarray, int, int]:
    """Returns (embeddings, L, n_symbols)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CGKE_MAGIC:
        raise ValueError(f"{path}: not a CGKE file")
    version, L, n_symbols, count = struct.unpack_from("<IIIQ", raw, 4)
    if version != CGKE_VERSION:
        raise ValueError(f"{path}: unsupported CGKE version {version}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=24)
    if body.size != count * 3 * L:
        raise ValueError(f"{path}: truncated payload")
    return body.reshape(count, 3 * L).astype(np.int32), L, n_symbols
