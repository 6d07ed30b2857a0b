"""Triplet sampling, the triplet + approximation loss, and mini-batch SGD."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cache import cache_path
from .model import ModelConfig, ModelParams, backward, encode_batch, forward, init_model
from .strings import StringDataset, TripletSplit, rank_by_distance

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    batch_triplets: int = 64
    epochs: int = 50
    topk: int = 100
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.batch_triplets < 1:
            raise ValueError("batch_triplets must be >= 1")
        if self.topk < 2:
            raise ValueError("topk must be >= 2 to draw two neighbors")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    d_ap: int
    d_an: int

    def __post_init__(self):
        if self.d_ap > self.d_an:
            raise ValueError("positive must not be farther than negative")


@dataclass(frozen=True)
class LossBreakdown:
    triplet_term: float
    approx_term: float
    alpha: float

    @property
    def total(self) -> float:
        return self.triplet_term + self.alpha * self.approx_term


# --- neighbor lists ------------------------------------------------------


def pairwise_matrix(ds: StringDataset, ids: np.ndarray) -> np.ndarray:
    """Symmetric edit-distance matrix among ``ids``, computing each pair once."""
    n = len(ids)
    iu, ju = np.triu_indices(n, k=1)
    d = ds.packed.pairs(ids[iu], ids[ju])
    out = np.zeros((n, n), dtype=np.int32)
    out[iu, ju] = d
    out[ju, iu] = d
    return out


@dataclass
class NeighborTable:
    """Top-k neighbor lists of every training string within the training set.

    Lists exclude the anchor itself but keep exact duplicates of it.
    ``dist`` holds all training-pair distances, so any sampled pair's edit
    distance is a lookup.
    """

    train_ids: np.ndarray
    dist: np.ndarray
    topk: np.ndarray  # (n_train, k) positions into train_ids
    computations: int = 0

    @property
    def k(self) -> int:
        return self.topk.shape[1]

    @classmethod
    def build(cls, ds: StringDataset, train_ids, k: int, use_cache: bool = True) -> "NeighborTable":
        train_ids = np.asarray(train_ids, dtype=np.int64)
        n = len(train_ids)
        if n <= k:
            raise ValueError(f"training set of {n} needs more than k={k} items")
        key = hashlib.sha256(f"{ds.sha256}:{k}:".encode() + train_ids.tobytes()).hexdigest()
        path = cache_path("neighbors", key + ".npz") if use_cache else None
        if path is not None and path.exists():
            with np.load(path) as z:
                return cls(train_ids, z["dist"], z["topk"], computations=0)
        dist = pairwise_matrix(ds, train_ids)
        topk = np.empty((n, k), dtype=np.int64)
        positions = np.arange(n)
        for a in range(n):
            order = rank_by_distance(dist[a], train_ids)
            order = order[order != a][:k]
            topk[a] = positions[order]
        if path is not None:
            np.savez(path, dist=dist, topk=topk)
        return cls(train_ids, dist, topk, computations=n)


def sample_triplets(table: NeighborTable, rng: np.random.Generator, size: int):
    """Draw ``size`` triplets as train-position arrays plus their distances.

    The closer of the two sampled neighbors becomes the positive; equal
    distances go to the lower dataset index.
    """
    n, k = table.topk.shape
    anchor = rng.integers(0, n, size=size)
    first = rng.integers(0, k, size=size)
    second = rng.integers(0, k - 1, size=size)
    second += second >= first
    c1 = table.topk[anchor, first]
    c2 = table.topk[anchor, second]
    d1 = table.dist[anchor, c1]
    d2 = table.dist[anchor, c2]
    ids = table.train_ids
    first_pos = (d1 < d2) | ((d1 == d2) & (ids[c1] < ids[c2]))
    pos = np.where(first_pos, c1, c2)
    neg = np.where(first_pos, c2, c1)
    return anchor, pos, neg, table.dist[anchor, pos], table.dist[anchor, neg], table.dist[pos, neg]


def sample_triplet(table: NeighborTable, rng: np.random.Generator) -> Triplet:
    a, p, n, d_ap, d_an, _ = sample_triplets(table, rng, 1)
    ids = table.train_ids
    return Triplet(int(ids[a[0]]), int(ids[p[0]]), int(ids[n[0]]), int(d_ap[0]), int(d_an[0]))


# --- losses --------------------------------------------------------------


def _dist_and_unit(u: np.ndarray):
    norm = np.linalg.norm(u, axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    # Zero-distance pairs get a zero gradient.
    unit = np.where((norm > 0)[..., None], u / safe[..., None], 0.0)
    return norm, unit


def triplet_loss(ya, yp, yn, d_ap, d_an) -> float:
    eta = d_ap - d_an
    return float(max(0.0, np.linalg.norm(ya - yp) - np.linalg.norm(ya - yn) - eta))


def approx_loss(ya, yp, yn, d_ap, d_an, d_pn) -> float:
    return float(
        abs(np.linalg.norm(ya - yp) - d_ap) + abs(np.linalg.norm(ya - yn) - d_an) + abs(np.linalg.norm(yp - yn) - d_pn)
    )


def batch_loss(ya, yp, yn, d_ap, d_an, d_pn, alpha: float):
    """Mean combined loss over a batch of triplets and its gradients.

    Returns (LossBreakdown, (grad_a, grad_p, grad_n)), gradients of the
    mean total w.r.t. each (B, d) embedding block.
    """
    B = ya.shape[0]
    d_ap, d_an, d_pn = (np.asarray(v, dtype=np.float64) for v in (d_ap, d_an, d_pn))
    e_ap, u_ap = _dist_and_unit(ya - yp)
    e_an, u_an = _dist_and_unit(ya - yn)
    e_pn, u_pn = _dist_and_unit(yp - yn)

    hinge = e_ap - e_an - (d_ap - d_an)
    active = (hinge > 0).astype(np.float64)[:, None]
    trip = np.maximum(hinge, 0.0)
    s_ap, s_an, s_pn = (np.sign(e - d)[:, None] for e, d in ((e_ap, d_ap), (e_an, d_an), (e_pn, d_pn)))
    approx = np.abs(e_ap - d_ap) + np.abs(e_an - d_an) + np.abs(e_pn - d_pn)

    # d/dy of each distance is +/- the unit difference vector.
    g_ap = active + alpha * s_ap
    g_an = -active + alpha * s_an
    g_pn = alpha * s_pn
    ga = (g_ap * u_ap + g_an * u_an) / B
    gp = (-g_ap * u_ap + g_pn * u_pn) / B
    gn = (-g_an * u_an - g_pn * u_pn) / B
    return LossBreakdown(float(trip.mean()), float(approx.mean()), alpha), (ga, gp, gn)


def loss_and_grads(params: ModelParams, cfg: ModelConfig, xa, xp, xn, d_ap, d_an, d_pn, alpha: float):
    """Forward the three blocks as one batch, return (LossBreakdown, param grads)."""
    B = xa.shape[0]
    emb, cache = forward(params, cfg, np.concatenate([xa, xp, xn]))
    ya, yp, yn = emb[:B], emb[B : 2 * B], emb[2 * B :]
    breakdown, (ga, gp, gn) = batch_loss(ya, yp, yn, d_ap, d_an, d_pn, alpha)
    grads = backward(params, cfg, cache, np.concatenate([ga, gp, gn]))
    return breakdown, grads


# --- training loop -------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    mean_total: float
    mean_triplet: float
    mean_approx: float


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[EpochStats] = field(default_factory=list)
    table: NeighborTable | None = None


def train_epochs(
    ds: StringDataset,
    split: TripletSplit,
    cfg: TrainConfig,
    mcfg: ModelConfig,
    params: ModelParams | None = None,
    table: NeighborTable | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> TrainResult:
    """Plain SGD over sampled triplets; an epoch uses ceil(n_train / batch) batches."""
    if len(split.train) == 0:
        raise ValueError("training set is empty")
    if table is None:
        table = NeighborTable.build(ds, split.train, cfg.topk)
    if params is None:
        params = init_model(mcfg, cfg.seed)
    params = params.copy()
    rng = np.random.default_rng(cfg.seed)
    train_strings = [ds.strings[i] for i in table.train_ids]
    n_batches = math.ceil(len(table.train_ids) / cfg.batch_triplets)
    result = TrainResult(params, table=table)
    for epoch in range(1, cfg.epochs + 1):
        totals = np.zeros(3)
        for _ in range(n_batches):
            a, p, n, d_ap, d_an, d_pn = sample_triplets(table, rng, cfg.batch_triplets)
            xa, xp, xn = (encode_batch([train_strings[i] for i in idx], ds.alphabet, mcfg) for idx in (a, p, n))
            loss, grads = loss_and_grads(params, mcfg, xa, xp, xn, d_ap, d_an, d_pn, cfg.alpha)
            if not math.isfinite(loss.total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            for name, g in grads.items():
                params.tensors[name] -= cfg.learning_rate * g
            totals += (loss.total, loss.triplet_term, loss.approx_term)
        stats = EpochStats(epoch, *(float(v) for v in totals / n_batches))
        log.info("epoch %d: total %.4f triplet %.4f approx %.4f", epoch, *(totals / n_batches))
        result.trace.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    result.params = params.round_to_f32()
    return result


def write_loss_csv(trace: list[EpochStats], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_total", "mean_triplet", "mean_approx"])
        for s in trace:
            w.writerow([s.epoch, repr(float(s.mean_total)), repr(float(s.mean_triplet)), repr(float(s.mean_approx))])
