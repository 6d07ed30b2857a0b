"""Ground truth, calibration and the per-store evaluation report."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .cache import cache_path
from .search import (
    CalibrationFit,
    EmbeddingStore,
    default_T_grid,
    estimation_error,
    fit_calibration,
    recall_item_curve,
)
from .strings import StringDataset, TripletSplit

log = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10, 50, 100)
CALIBRATION_PAIRS = 10_000


def ground_truth(ds: StringDataset, query_ids, base_ids, use_cache: bool = True) -> np.ndarray:
    """Exact (query x base) edit-distance matrix, cached on disk."""
    q = np.asarray(query_ids, dtype=np.int64)
    b = np.asarray(base_ids, dtype=np.int64)
    key = hashlib.sha256(f"{ds.sha256}:{len(q)}:".encode() + q.tobytes() + b.tobytes()).hexdigest()
    path = cache_path("truth", key + ".npy") if use_cache else None
    if path is not None and path.exists():
        return np.load(path)
    log.info("computing %d x %d exact distances", len(q), len(b))
    dist = ds.packed.cross(q, b)
    if path is not None:
        np.save(path, dist)
    return dist


def calibration_pairs(ds: StringDataset, train_ids, n_pairs: int = CALIBRATION_PAIRS, seed: int = 0):
    """Distinct random training pairs and their edit distances."""
    train_ids = np.asarray(train_ids, dtype=np.int64)
    n = len(train_ids)
    if n < 2:
        raise ValueError("calibration needs at least two training strings")
    total = n * (n - 1) // 2
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(n_pairs, total), replace=False)
    flat.sort()
    iu, ju = _unrank(flat, n)
    left, right = train_ids[iu], train_ids[ju]
    return left, right, ds.packed.pairs(left, right)


def _unrank(flat: np.ndarray, n: int):
    """Map row-major upper-triangle positions to (i, j) with i < j."""
    # Row i starts at offset i*n - i*(i+1)/2 in the row-major upper triangle.
    starts = np.arange(n) * n - np.arange(n) * (np.arange(n) + 1) // 2
    i = np.searchsorted(starts, flat, side="right") - 1
    j = flat - starts[i] + i + 1
    return i, j


def calibrate(store: EmbeddingStore, left, right, edit, kind: str) -> CalibrationFit:
    diff = store.matrix[store.rows_for(left)] - store.matrix[store.rows_for(right)]
    if store.metric == "hamming":
        emb = np.count_nonzero(diff, axis=1).astype(np.float64)
    else:
        emb = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return fit_calibration(emb, edit, kind)


@dataclass
class EvalReport:
    estimation_error: float
    calibration: CalibrationFit
    curves: dict[int, list[tuple[int, float]]]  # k -> [(T, recall)]

    def recall_at(self, k: int, T: int) -> float:
        return dict(self.curves[k])[T]


def evaluate_store(
    ds: StringDataset,
    split: TripletSplit,
    store: EmbeddingStore,
    kind: str | None = None,
    ks=DEFAULT_KS,
    T_grid=None,
    calibration_seed: int = 0,
    use_cache: bool = True,
) -> EvalReport:
    """Estimation error on query x base (g fitted on training pairs) and recall-item curves.

    ``kind`` defaults to a linear fit for Euclidean stores and a quadratic
    one for Hamming (CGK) stores.
    """
    if kind is None:
        kind = "quadratic" if store.metric == "hamming" else "linear"
    truth = ground_truth(ds, split.query, split.base, use_cache=use_cache)
    emb = store.cross(store.rows_for(split.query), store.rows_for(split.base))
    left, right, edit = calibration_pairs(ds, split.train, seed=calibration_seed)
    fit = calibrate(store, left, right, edit, kind)
    err = estimation_error(emb, truth, fit)
    n_base = len(split.base)
    if T_grid is None:
        T_grid = default_T_grid(n_base)
    curves = {k: recall_item_curve(emb, truth, split.base, k, T_grid) for k in ks if k <= n_base}
    return EvalReport(err, fit, curves)
