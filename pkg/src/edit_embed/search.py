"""Embedding-based evaluation, threshold search and similarity join.

Every result returned by a search routine has been verified with exact
edit distance, so embeddings only ever cost recall, never precision.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .strings import StringDataset, distances_to, rank_by_distance

METRICS = ("euclidean", "hamming")


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingStore:
    """Row ``r`` of ``matrix`` embeds dataset string ``ids[r]``."""

    matrix: np.ndarray
    ids: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise ValueError("matrix rows must match ids")
        if self.metric == "euclidean" and not np.all(np.isfinite(self.matrix)):
            raise ValueError("embeddings must be finite")

    @classmethod
    def full(cls, matrix: np.ndarray, metric: str = "euclidean") -> "EmbeddingStore":
        return cls(np.asarray(matrix), np.arange(len(matrix)), metric)

    def __len__(self) -> int:
        return len(self.ids)

    def rows_for(self, ids) -> np.ndarray:
        """Row positions of dataset indices ``ids``."""
        lookup = {int(i): r for r, i in enumerate(self.ids)}
        return np.array([lookup[int(i)] for i in ids], dtype=np.int64)

    def distances(self, vec: np.ndarray, rows=None) -> np.ndarray:
        m = self.matrix if rows is None else self.matrix[rows]
        if self.metric == "hamming":
            return np.count_nonzero(m != vec, axis=1).astype(np.float64)
        diff = m - vec
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def cross(self, rows_a, rows_b, max_elems: int = 8_000_000) -> np.ndarray:
        """Embedding distance matrix between two row sets."""
        a = self.matrix[np.asarray(rows_a)]
        b = self.matrix[np.asarray(rows_b)]
        out = np.empty((len(a), len(b)))
        chunk = max(1, max_elems // max(1, b.size))
        for lo in range(0, len(a), chunk):
            block = a[lo : lo + chunk]
            if self.metric == "hamming":
                out[lo : lo + chunk] = np.count_nonzero(block[:, None, :] != b[None, :, :], axis=2)
            else:
                diff = block[:, None, :] - b[None, :, :]
                out[lo : lo + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return out


# --- calibration ---------------------------------------------------------


@dataclass(frozen=True)
class CalibrationFit:
    kind: str
    coefficients: tuple[float, ...]  # highest power first

    def __call__(self, x):
        return np.polyval(self.coefficients, np.asarray(x, dtype=np.float64))


IDENTITY = CalibrationFit("linear", (1.0, 0.0))


def fit_calibration(embed_dist, edit_dist, kind: str = "linear") -> CalibrationFit:
    """Least-squares map from embedding distance to edit distance."""
    degree = {"linear": 1, "quadratic": 2}.get(kind)
    if degree is None:
        raise ValueError("kind must be 'linear' or 'quadratic'")
    x = np.asarray(embed_dist, dtype=np.float64)
    y = np.asarray(edit_dist, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("expected two equal-length 1-D arrays")
    if len(x) < 3:
        raise CalibrationError("need at least 3 pairs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise CalibrationError("distances must be finite")
    design = np.vander(x, degree + 1)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < degree + 1:
        raise CalibrationError(f"rank-deficient design for a {kind} fit (too few distinct distances)")
    return CalibrationFit(kind, tuple(float(c) for c in coef))


# --- evaluation ----------------------------------------------------------


def estimation_error(embed_dists: np.ndarray, edit_dists: np.ndarray, fit: CalibrationFit) -> float:
    """Mean of |g(embedding distance) - edit distance| / edit distance.

    Pairs at edit distance 0 are skipped.
    """
    embed_dists = np.asarray(embed_dists, dtype=np.float64)
    edit_dists = np.asarray(edit_dists, dtype=np.float64)
    valid = edit_dists > 0
    if not valid.any():
        raise ValueError("no pairs with nonzero edit distance")
    est = fit(embed_dists[valid])
    return float(np.mean(np.abs(est - edit_dists[valid]) / edit_dists[valid]))


def pair_errors(embed_dists, edit_dists, fit: CalibrationFit) -> np.ndarray:
    """Per-pair relative error; NaN where the edit distance is 0."""
    embed_dists = np.asarray(embed_dists, dtype=np.float64)
    edit_dists = np.asarray(edit_dists, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(fit(embed_dists) - edit_dists) / edit_dists
    return np.where(edit_dists > 0, err, np.nan)


def recall_item_curve(
    embed_dists: np.ndarray,
    edit_dists: np.ndarray,
    base_ids: np.ndarray,
    k: int,
    T_grid: Sequence[int],
) -> list[tuple[int, float]]:
    """Mean recall of the true top-k within the top-T items by embedding distance.

    ``embed_dists`` and ``edit_dists`` are (queries x base) matrices; both
    rankings break ties by base id.
    """
    embed_dists = np.atleast_2d(embed_dists)
    edit_dists = np.atleast_2d(edit_dists)
    base_ids = np.asarray(base_ids)
    n_base = len(base_ids)
    if n_base == 0:
        raise ValueError("empty base set")
    if not 1 <= k <= n_base:
        raise ValueError(f"k must be in [1, {n_base}]")
    if any(not 0 <= t <= n_base for t in T_grid):
        raise ValueError(f"T values must be in [0, {n_base}]")
    hits_by_T = np.zeros(len(T_grid))
    for q in range(edit_dists.shape[0]):
        truth = rank_by_distance(edit_dists[q], base_ids)[:k]
        order = rank_by_distance(embed_dists[q], base_ids)
        position = np.empty(n_base, dtype=np.int64)
        position[order] = np.arange(n_base)
        ranks = np.sort(position[truth])
        hits_by_T += np.searchsorted(ranks, np.asarray(T_grid), side="left")
    recall = hits_by_T / (k * edit_dists.shape[0])
    return [(int(t), float(r)) for t, r in zip(T_grid, recall)]


def default_T_grid(n_base: int) -> list[int]:
    grid = [t for t in (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000) if t < n_base]
    return grid + [n_base]


# --- threshold search and join -------------------------------------------


@dataclass(frozen=True)
class SearchParams:
    tau: int
    mu: float = 2.0
    T: int | None = None

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if not self.mu > 1:
            raise ValueError("mu must be > 1")
        if self.T is not None and self.T < 0:
            raise ValueError("T must be >= 0")


@dataclass
class SearchResult:
    ids: np.ndarray  # dataset indices within tau, ascending
    distances: np.ndarray
    n_candidates: int
    n_dp_calls: int


def _verify(query: bytes, ds: StringDataset, cand_ids: np.ndarray, tau: int) -> SearchResult:
    cand_ids = np.asarray(cand_ids, dtype=np.int64)
    d = distances_to(query, [ds.strings[i] for i in cand_ids]) if len(cand_ids) else np.empty(0, np.int32)
    keep = d <= tau
    order = np.argsort(cand_ids[keep], kind="stable")
    return SearchResult(cand_ids[keep][order], d[keep][order], len(cand_ids), len(cand_ids))


def exact_threshold_search(query: bytes, ds: StringDataset, tau: int, ids=None) -> SearchResult:
    """Brute-force oracle: DP against every item."""
    ids = np.arange(len(ds)) if ids is None else np.asarray(ids)
    return _verify(query, ds, ids, tau)


def threshold_search_filter(
    query: bytes,
    ds: StringDataset,
    store: EmbeddingStore,
    embed: Callable[[bytes], np.ndarray],
    params: SearchParams,
    calibration: CalibrationFit | None = None,
) -> SearchResult:
    """Keep items whose embedding distance is within mu * tau, then verify.

    With ``calibration`` the filter compares g(distance) instead of the raw
    distance.
    """
    dist = store.distances(embed(query))
    if calibration is not None:
        dist = calibration(dist)
    cand = store.ids[dist <= _filter_bound(params.mu, params.tau)]
    return _verify(query, ds, np.sort(cand), params.tau)


def threshold_search_ranked(
    query: bytes,
    ds: StringDataset,
    store: EmbeddingStore,
    embed: Callable[[bytes], np.ndarray],
    tau: int,
    T: int,
) -> SearchResult:
    """Verify the T embedding-nearest items, in ranked order."""
    if not 0 <= T <= len(store):
        raise ValueError(f"T must be in [0, {len(store)}]")
    dist = store.distances(embed(query))
    order = rank_by_distance(dist, store.ids)[:T]
    return _verify(query, ds, store.ids[order], tau)


def recall(result: SearchResult, exact: SearchResult) -> float:
    truth = set(map(int, exact.ids))
    if not truth:
        return 1.0
    return len(truth & set(map(int, result.ids))) / len(truth)


@dataclass
class JoinResult:
    pairs: list[tuple[int, int]]
    n_candidates: int
    n_dp_calls: int


def _filter_bound(mu: float, tau: int) -> float:
    # inf * 0 is NaN; an unbounded blow-up admits everything.
    return math.inf if math.isinf(mu) else mu * tau


def similarity_join(ds: StringDataset, store: EmbeddingStore, tau: int, mu: float, chunk: int = 256) -> JoinResult:
    """All pairs (i < j) within tau among the stored items, embedding-filtered.

    Uses a full pairwise scan of embedding distances.
    """
    if not mu > 1:
        raise ValueError("mu must be > 1")
    n = len(store)
    bound = _filter_bound(mu, tau)
    left, right = [], []
    rows = np.arange(n)
    for lo in range(0, n, chunk):
        block = store.cross(rows[lo : lo + chunk], rows)
        r, c = np.nonzero(block <= bound)
        r = r + lo
        upper = r < c
        left.append(r[upper])
        right.append(c[upper])
    li = store.ids[np.concatenate(left)] if left else np.empty(0, np.int64)
    ri = store.ids[np.concatenate(right)] if right else np.empty(0, np.int64)
    d = ds.packed.pairs(li, ri) if len(li) else np.empty(0, np.int32)
    keep = d <= tau
    a, b = np.minimum(li[keep], ri[keep]), np.maximum(li[keep], ri[keep])
    pairs = sorted(set(zip(a.tolist(), b.tolist())))
    return JoinResult(pairs, len(li), len(li))


def all_pairs_join(ds: StringDataset, tau: int, ids=None) -> list[tuple[int, int]]:
    """Brute-force join oracle over ``ids`` (default: the whole dataset)."""
    ids = np.arange(len(ds)) if ids is None else np.sort(np.asarray(ids))
    iu, ju = np.triu_indices(len(ids), k=1)
    d = ds.packed.pairs(ids[iu], ids[ju])
    keep = d <= tau
    return sorted(zip(ids[iu][keep].tolist(), ids[ju][keep].tolist()))


# --- CEMB store files ----------------------------------------------------

CEMB_MAGIC = b"CEMB"
CEMB_VERSION = 1


def write_cemb(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix)
    buf = CEMB_MAGIC + struct.pack("<IIQ", CEMB_VERSION, matrix.shape[1], matrix.shape[0])
    buf += np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    Path(path).write_bytes(buf + struct.pack("<I", zlib.crc32(buf)))


def read_cemb(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CEMB_MAGIC:
        raise ValueError(f"{path}: not a CEMB file")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise ValueError(f"{path}: checksum mismatch")
    version, dim, count = struct.unpack_from("<IIQ", raw, 4)
    if version != CEMB_VERSION:
        raise ValueError(f"{path}: unsupported CEMB version {version}")
    if len(raw) - 4 - 20 != 4 * dim * count:
        raise ValueError(f"{path}: payload size does not match header")
    return np.frombuffer(raw, dtype="<f4", offset=20, count=dim * count).reshape(count, dim).astype(np.float64)
