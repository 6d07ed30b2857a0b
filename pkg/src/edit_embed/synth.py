"""Synthetic DNA-like corpora for tests and desk-scale experiments.

Strings come in families: each family is a random root sequence and every
member is the root after a random number of point edits, so nearest
neighbors under edit distance are meaningful (unlike i.i.d. strings,
where every pair sits near the same distance).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

DNA = b"ACGT"


def mutate(rng: np.random.Generator, s: bytearray, n_edits: int, alphabet: bytes = DNA) -> bytearray:
    s = bytearray(s)
    for _ in range(n_edits):
        op = rng.integers(3)
        if op == 0 and s:
            s[rng.integers(len(s))] = alphabet[rng.integers(len(alphabet))]
        elif op == 1:
            s.insert(rng.integers(len(s) + 1), alphabet[rng.integers(len(alphabet))])
        elif s:
            del s[rng.integers(len(s))]
    return s


def dna_corpus(
    n: int,
    seed: int = 0,
    min_len: int = 60,
    max_len: int = 100,
    family_size: int = 25,
    max_edit_frac: float = 0.3,
    alphabet: bytes = DNA,
) -> list[bytes]:
    """``n`` strings in families of about ``family_size`` mutated copies."""
    rng = np.random.default_rng(seed)
    out: list[bytes] = []
    while len(out) < n:
        root_len = int(rng.integers(min_len, max_len + 1))
        root = bytearray(alphabet[i] for i in rng.integers(0, len(alphabet), size=root_len))
        for _ in range(min(family_size, n - len(out))):
            edits = int(rng.integers(0, int(max_edit_frac * root_len) + 1))
            member = mutate(rng, root, edits, alphabet)[:max_len]
            out.append(bytes(member) if member else bytes(root[:1]))
    order = rng.permutation(n)
    return [out[i] for i in order]


def write_corpus(strings: list[bytes], path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(b"".join(s + b"\n" for s in strings))
    return path
