"""String corpora, alphabets and exact edit distance.

Strings are byte sequences throughout. The DP kernels below are the
ground truth every embedding is measured against, so they never band or
approximate. Single pairs use the plain DP; batches use a bit-parallel
kernel that computes the same exact distances.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit, prange

DEFAULT_MAX_LINE_BYTES = 65_536


class DatasetError(ValueError):
    """Raised for unreadable, empty or malformed corpora."""


@dataclass(frozen=True)
class Alphabet:
    """Ordered set of byte symbols.

    When ``reserve_unknown`` is set, one extra ordinal (``len(chars)``) is
    appended so symbols never seen at build time still get a one-hot row.
    """

    chars: tuple[int, ...]
    reserve_unknown: bool = True
    index: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.chars) < 1:
            raise ValueError("alphabet must contain at least one symbol")
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("alphabet symbols must be distinct")
        if any(not 0 <= c < 256 for c in self.chars):
            raise ValueError("alphabet symbols must be byte values")
        object.__setattr__(self, "index", {c: j for j, c in enumerate(self.chars)})

    @classmethod
    def from_strings(cls, strings: Iterable[bytes], reserve_unknown: bool = True) -> "Alphabet":
        seen: set[int] = set()
        for s in strings:
            seen.update(s)
        if not seen:
            raise ValueError("cannot derive an alphabet from empty strings")
        return cls(tuple(sorted(seen)), reserve_unknown)

    @property
    def size(self) -> int:
        """Number of one-hot rows, including the unknown row if reserved."""
        return len(self.chars) + int(self.reserve_unknown)

    @property
    def unknown(self) -> int | None:
        return len(self.chars) if self.reserve_unknown else None

    @cached_property
    def _lookup(self) -> np.ndarray:
        table = np.full(256, -1, dtype=np.int32)
        for j, c in enumerate(self.chars):
            table[c] = j
        if self.reserve_unknown:
            table[table < 0] = len(self.chars)
        return table

    def encode(self, s: bytes) -> np.ndarray:
        """Map a byte string to int32 ordinals."""
        ords = self._lookup[np.frombuffer(bytes(s), dtype=np.uint8)]
        if ords.size and ords.min() < 0:
            bad = sorted({b for b in bytes(s) if b not in self.index})
            raise KeyError(f"symbols not in alphabet: {bad}")
        return ords

    def decode(self, ords: Sequence[int]) -> bytes:
        return bytes(self.chars[int(o)] for o in ords)


@dataclass(frozen=True)
class StringDataset:
    strings: tuple[bytes, ...]
    alphabet: Alphabet
    max_len: int

    def __post_init__(self):
        if len(self.strings) < 1:
            raise DatasetError("dataset must contain at least one string")
        longest = max(len(s) for s in self.strings)
        if self.max_len != longest:
            raise DatasetError(f"max_len {self.max_len} != longest string {longest}")

    @classmethod
    def from_strings(cls, strings: Iterable[bytes | str], alphabet: Alphabet | None = None) -> "StringDataset":
        strs = tuple(s.encode() if isinstance(s, str) else bytes(s) for s in strings)
        if not strs:
            raise DatasetError("dataset must contain at least one string")
        if alphabet is None:
            alphabet = Alphabet.from_strings(strs)
        return cls(strs, alphabet, max(len(s) for s in strs))

    def __len__(self) -> int:
        return len(self.strings)

    def __getitem__(self, i: int) -> bytes:
        return self.strings[i]

    @cached_property
    def packed(self) -> "PackedStrings":
        return PackedStrings.pack(self.strings)

    @cached_property
    def sha256(self) -> str:
        h = hashlib.sha256()
        for s in self.strings:
            h.update(len(s).to_bytes(8, "little"))
            h.update(s)
        return h.hexdigest()


@dataclass(frozen=True)
class TripletSplit:
    """Disjoint train / query / base index sets covering a dataset."""

    train: np.ndarray
    query: np.ndarray
    base: np.ndarray

    def __post_init__(self):
        sets = [set(map(int, a)) for a in (self.train, self.query, self.base)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split index sets overlap")

    def to_dict(self) -> dict:
        return {name: [int(i) for i in getattr(self, name)] for name in ("train", "query", "base")}

    @classmethod
    def from_dict(cls, d: dict) -> "TripletSplit":
        return cls(*(np.asarray(d[name], dtype=np.int64) for name in ("train", "query", "base")))


def load_dataset(
    path: str | Path,
    truncate_at: int | None = None,
    max_line_bytes: int = DEFAULT_MAX_LINE_BYTES,
) -> StringDataset:
    """Read one string per LF-terminated line; CR is stripped, blank lines skipped."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    strings = []
    for lineno, line in enumerate(raw.split(b"\n"), start=1):
        line = line.rstrip(b"\r")
        if not line:
            continue
        if len(line) > max_line_bytes:
            raise DatasetError(f"{path}:{lineno}: line of {len(line)} bytes exceeds cap {max_line_bytes}")
        if truncate_at is not None:
            line = line[:truncate_at]
        strings.append(line)
    if not strings:
        raise DatasetError(f"{path}: no non-empty lines")
    return StringDataset.from_strings(strings)


def split_dataset(ds: StringDataset, n_train: int, n_query: int, seed: int) -> TripletSplit:
    n = len(ds)
    if n_train < 0 or n_query < 0 or n_train + n_query >= n:
        raise ValueError(f"n_train + n_query must be < {n}, got {n_train} + {n_query}")
    perm = np.random.default_rng(seed).permutation(n)
    return TripletSplit(
        train=np.sort(perm[:n_train]),
        query=np.sort(perm[n_train : n_train + n_query]),
        base=np.sort(perm[n_train + n_query :]),
    )


# --- exact edit distance -------------------------------------------------


@njit(cache=True, nogil=True)
def _levenshtein(a, b):
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    m = b.shape[0]
    if m == 0:
        return a.shape[0]
    prev = np.empty(m + 1, dtype=np.int32)
    cur = np.empty(m + 1, dtype=np.int32)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, a.shape[0] + 1):
        ai = a[i - 1]
        cur[0] = i
        for j in range(1, m + 1):
            best = prev[j - 1] + (ai != b[j - 1])
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


_ONE = np.uint64(1)
_ALL = np.uint64(0xFFFFFFFFFFFFFFFF)
_TOP = np.uint64(63)


@njit(cache=True)
def _peq_fill(peq, a, value):
    for i in range(a.shape[0]):
        blk = i >> 6
        if value:
            peq[a[i], blk] |= _ONE << np.uint64(i & 63)
        else:
            peq[a[i], blk] = np.uint64(0)


@njit(cache=True)
def _myers(peq, m, b, pv, mv):
    """Bit-parallel Levenshtein distance of a pattern (encoded in ``peq``) to ``b``.

    Blocked column scan over 64-row words; a word's horizontal delta at its
    top edge is carried into the next word. Matches ``_levenshtein`` exactly.
    """
    if m == 0:
        return b.shape[0]
    nblk = (m + 63) >> 6
    last = np.uint64((m - 1) & 63)
    for k in range(nblk):
        pv[k] = _ALL
        mv[k] = np.uint64(0)
    score = m
    for j in range(b.shape[0]):
        c = b[j]
        hin = 1
        for k in range(nblk):
            eq = peq[c, k]
            p = pv[k]
            q = mv[k]
            xv = eq | q
            if hin < 0:
                eq |= _ONE
            xh = (((eq & p) + p) ^ p) | eq
            ph = q | ~(xh | p)
            mh = p & xh
            if k == nblk - 1:
                score += np.int64((ph >> last) & _ONE) - np.int64((mh >> last) & _ONE)
            hout = np.int64((ph >> _TOP) & _ONE) - np.int64((mh >> _TOP) & _ONE)
            ph <<= _ONE
            mh <<= _ONE
            if hin < 0:
                mh |= _ONE
            elif hin > 0:
                ph |= _ONE
            pv[k] = mh | ~(xv | ph)
            mv[k] = ph & xv
            hin = hout
    return score


@njit(cache=True, parallel=True)
def _cross(flat, offsets, rows, cols, n_sym, max_len):
    out = np.empty((rows.shape[0], cols.shape[0]), dtype=np.int32)
    nblk = max((max_len + 63) >> 6, 1)
    for r in prange(rows.shape[0]):
        i = rows[r]
        a = flat[offsets[i] : offsets[i + 1]]
        peq = np.zeros((n_sym, nblk), dtype=np.uint64)
        pv = np.empty(nblk, dtype=np.uint64)
        mv = np.empty(nblk, dtype=np.uint64)
        _peq_fill(peq, a, True)
        for c in range(cols.shape[0]):
            j = cols[c]
            out[r, c] = _myers(peq, a.shape[0], flat[offsets[j] : offsets[j + 1]], pv, mv)
    return out


@njit(cache=True, parallel=True)
def _pairs(flat, offsets, left, right, n_sym, max_len):
    out = np.empty(left.shape[0], dtype=np.int32)
    nblk = max((max_len + 63) >> 6, 1)
    chunk = 256
    n_chunks = (left.shape[0] + chunk - 1) // chunk
    for t in prange(n_chunks):
        peq = np.zeros((n_sym, nblk), dtype=np.uint64)
        pv = np.empty(nblk, dtype=np.uint64)
        mv = np.empty(nblk, dtype=np.uint64)
        for p in range(t * chunk, min((t + 1) * chunk, left.shape[0])):
            i = left[p]
            j = right[p]
            a = flat[offsets[i] : offsets[i + 1]]
            _peq_fill(peq, a, True)
            out[p] = _myers(peq, a.shape[0], flat[offsets[j] : offsets[j + 1]], pv, mv)
            _peq_fill(peq, a, False)
    return out


def _as_symbols(s) -> np.ndarray:
    if isinstance(s, str):
        s = s.encode()
    if isinstance(s, (bytes, bytearray, memoryview)):
        return np.frombuffer(bytes(s), dtype=np.uint8).astype(np.int32)
    return np.ascontiguousarray(s, dtype=np.int32)


def edit_distance(a, b) -> int:
    """Levenshtein distance between two symbol sequences.

    Accepts ``bytes``, ``str`` (UTF-8 encoded first) or integer arrays, so
    the same kernel serves strings, one-hot rows and restricted strings.
    """
    return int(_levenshtein(_as_symbols(a), _as_symbols(b)))


@dataclass(frozen=True)
class PackedStrings:
    """Concatenated symbols plus offsets, the layout the batch kernels want."""

    flat: np.ndarray
    offsets: np.ndarray

    @cached_property
    def _shape(self) -> tuple[int, int]:
        n_sym = int(self.flat.max()) + 1 if self.flat.size else 1
        if self.flat.size and int(self.flat.min()) < 0:
            raise ValueError("symbols must be non-negative")
        max_len = int(np.diff(self.offsets).max()) if len(self.offsets) > 1 else 0
        return n_sym, max_len

    @classmethod
    def pack(cls, strings: Sequence) -> "PackedStrings":
        parts = [_as_symbols(s) for s in strings]
        offsets = np.zeros(len(parts) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(p) for p in parts])
        flat = np.concatenate(parts) if parts else np.empty(0, dtype=np.int32)
        return cls(flat.astype(np.int32, copy=False), offsets)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def cross(self, rows, cols) -> np.ndarray:
        """Distance matrix between the strings at ``rows`` and at ``cols``."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        return _cross(self.flat, self.offsets, rows, cols, *self._shape)

    def pairs(self, left, right) -> np.ndarray:
        left = np.asarray(left, dtype=np.int64)
        right = np.asarray(right, dtype=np.int64)
        if left.shape != right.shape:
            raise ValueError("pair index arrays differ in shape")
        return _pairs(self.flat, self.offsets, left, right, *self._shape)


def edit_distance_matrix(a: Sequence, b: Sequence) -> np.ndarray:
    packed = PackedStrings.pack(list(a) + list(b))
    return packed.cross(np.arange(len(a)), np.arange(len(a), len(a) + len(b)))


def distances_to(query, strings: Sequence) -> np.ndarray:
    """Edit distance from one query to every string in ``strings``."""
    return edit_distance_matrix([query], strings)[0]


def rank_by_distance(dists: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Positions sorting by (distance, id) ascending."""
    return np.lexsort((np.asarray(ids), np.asarray(dists)))


def topk_neighbors(ds: StringDataset, anchor: int, k: int, candidate_set) -> list[tuple[int, int]]:
    """The ``k`` candidates closest to ``ds[anchor]``; ties go to the smaller index."""
    candidates = np.asarray(sorted(set(int(c) for c in candidate_set)), dtype=np.int64)
    if k <= 0:
        raise ValueError("k must be positive")
    if k > len(candidates):
        raise ValueError(f"k={k} exceeds {len(candidates)} candidates")
    dists = ds.packed.cross([anchor], candidates)[0]
    order = rank_by_distance(dists, candidates)[:k]
    return [(int(candidates[o]), int(dists[o])) for o in order]
