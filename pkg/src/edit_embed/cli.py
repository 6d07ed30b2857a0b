"""Command-line entry point: train, embed, eval, search, join, props."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import check_one_hot_bounds, check_pooling_bounds
from .cgk import CgkMatrix, cgk_distortion_report, embed_dataset, read_cgke, write_cgke
from .evaluation import DEFAULT_KS, calibrate, calibration_pairs, evaluate_store, ground_truth
from .gradcheck import gradient_suite
from .model import ModelConfig, embed_batch, init_model, load_model, save_model
from .search import (
    EmbeddingStore,
    SearchParams,
    SearchResult,
    read_cemb,
    similarity_join,
    threshold_search_filter,
    threshold_search_ranked,
    write_cemb,
)
from .strings import DEFAULT_MAX_LINE_BYTES, DatasetError, StringDataset, TripletSplit, load_dataset, split_dataset
from .synth import dna_corpus
from .train import TrainConfig, TrainingDiverged, train_epochs, write_loss_csv

log = logging.getLogger("edit_embed")

RUN_CONFIG = "run_config.json"


# --- argument parsing ----------------------------------------------------


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, type=Path, help="corpus file, one string per line")
    p.add_argument("--truncate-at", type=int, default=None, help="truncate strings to this many bytes")
    p.add_argument("--max-line-bytes", type=int, default=DEFAULT_MAX_LINE_BYTES)
    p.add_argument("--train-size", type=int, default=1000)
    p.add_argument("--query-size", type=int, default=1000)
    p.add_argument("--split-seed", type=int, default=0, help="seed of the train/query/base partition")


def _common_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--kernels", type=int, default=8)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--pool", choices=("max", "avg"), default="max")
    p.add_argument("--activation", choices=("relu", "none"), default="relu")


def _store_args(p: argparse.ArgumentParser, multiple: bool = False) -> None:
    if multiple:
        p.add_argument("--store", required=True, type=Path, action="append", help="CEMB or CGKE file (repeatable)")
    else:
        p.add_argument("--store", required=True, type=Path, help="CEMB or CGKE file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edit-embed", description="Edit-distance embeddings with a 1D CNN.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a CNN embedding and save a checkpoint")
    _data_args(p)
    _common_args(p)
    _model_args(p)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--topk", type=int, default=100)

    p = sub.add_parser("embed", help="embed every corpus string into a store file")
    _data_args(p)
    _common_args(p)
    _model_args(p)
    p.add_argument("--method", choices=("cnn", "random-cnn", "cgk"), default="cnn")
    p.add_argument("--checkpoint", type=Path, help="trained model (required for --method cnn)")

    p = sub.add_parser("eval", help="estimation error and recall-item curves of one or more stores")
    _data_args(p)
    _common_args(p)
    _store_args(p, multiple=True)
    p.add_argument("--k", type=int, action="append", help="top-k ground truth sizes (repeatable)")
    p.add_argument("--T", type=int, action="append", help="item budgets of the curve (repeatable)")
    p.add_argument("--errors", action="store_true", help="also write per-pair estimation errors")

    p = sub.add_parser("search", help="threshold search for every query string")
    _data_args(p)
    _common_args(p)
    _store_args(p)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--mu", type=float, default=2.0)
    p.add_argument("--mode", choices=("filter", "ranked"), default="filter")
    p.add_argument("--T", type=int, default=None, help="verification budget in ranked mode")
    p.add_argument("--calibrated", action="store_true", help="filter on the calibrated distance estimate")

    p = sub.add_parser("join", help="similarity join over every corpus string")
    _data_args(p)
    _common_args(p)
    _store_args(p)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--mu", type=float, default=2.0)

    p = sub.add_parser("props", help="edit-distance bound suites, gradient checks and CGK distortion")
    _common_args(p)
    p.add_argument("--pairs", type=int, default=10_000)

    p = sub.add_parser("synth", help="write a synthetic DNA corpus with near-duplicate families")
    _common_args(p)
    p.add_argument("--count", type=int, default=5000)
    p.add_argument("--min-len", type=int, default=20)
    p.add_argument("--max-len", type=int, default=200)
    return parser


# --- helpers -------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows) -> None:
    """RFC-4180 CSV: header row, CRLF line ends, minimal quoting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def _prepare_out(args: argparse.Namespace) -> Path:
    """Create the output directory and record the exact run configuration in it."""
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    config = dict(vars(args), version=__version__)
    (out / RUN_CONFIG).write_text(json.dumps(config, indent=2, sort_keys=True, default=str) + "\n")
    return out


def _load(args) -> tuple[StringDataset, TripletSplit]:
    ds = load_dataset(args.data, truncate_at=args.truncate_at, max_line_bytes=args.max_line_bytes)
    split = split_dataset(ds, args.train_size, args.query_size, args.split_seed)
    log.info("%d strings, L=%d, |D|=%d; split %d/%d/%d", len(ds), ds.max_len, ds.alphabet.size,
             len(split.train), len(split.query), len(split.base))
    return ds, split


def _model_config(args, ds: StringDataset) -> ModelConfig:
    return ModelConfig(
        input_channels=ds.alphabet.size,
        input_width=ds.max_len,
        n_conv_layers=args.layers,
        kernels_per_layer=args.kernels,
        output_dim=args.dim,
        pool=args.pool,
        activation=args.activation,
    )


def load_store(path: Path, n_expected: int | None = None) -> EmbeddingStore:
    if path.suffix == ".cgke":
        emb, _, _ = read_cgke(path)
        store = EmbeddingStore.full(emb, "hamming")
    else:
        store = EmbeddingStore.full(read_cemb(path))
    if n_expected is not None and len(store) != n_expected:
        raise ValueError(f"{path}: store has {len(store)} rows but the corpus has {n_expected} strings")
    return store


# --- commands ------------------------------------------------------------


def cmd_train(args) -> int:
    ds, split = _load(args)
    out = _prepare_out(args)
    mcfg = _model_config(args, ds)
    tcfg = TrainConfig(alpha=args.alpha, batch_triplets=args.batch, epochs=args.epochs, topk=args.topk,
                       learning_rate=args.lr, seed=args.seed)
    log.info("model has %d parameters", mcfg.param_count)
    (out / "split.json").write_text(json.dumps(split.to_dict()) + "\n")
    res = train_epochs(ds, split, tcfg, mcfg, on_epoch=lambda s: log.info("epoch %d loss %.4f", s.epoch, s.mean_total))
    save_model(res.params, mcfg, ds.alphabet, out / "model.cned")
    write_loss_csv(res.trace, out / "loss.csv")
    return 0


def cmd_embed(args) -> int:
    ds, _ = _load(args)
    out = _prepare_out(args)
    if args.method == "cgk":
        R = CgkMatrix.generate(ds.max_len, ds.alphabet.size, args.seed)
        write_cgke(out / "store.cgke", embed_dataset(ds, R), ds.max_len, ds.alphabet.size)
        return 0
    if args.method == "cnn":
        if args.checkpoint is None:
            raise SystemExit("--method cnn needs --checkpoint")
        ck = load_model(args.checkpoint)
        if ck.config.input_width < ds.max_len:
            raise ValueError(f"checkpoint input width {ck.config.input_width} < corpus max length {ds.max_len}")
        params, mcfg, alphabet = ck
    else:
        mcfg = _model_config(args, ds)
        params, alphabet = init_model(mcfg, args.seed), ds.alphabet
        save_model(params, mcfg, alphabet, out / "model.cned")
    write_cemb(out / "store.cemb", embed_batch(list(ds.strings), params, mcfg, alphabet))
    return 0


def cmd_eval(args) -> int:
    ds, split = _load(args)
    out = _prepare_out(args)
    ks = tuple(args.k) if args.k else DEFAULT_KS
    summary = []
    names = _store_names(args.store)
    for path, name in zip(args.store, names):
        store = load_store(path, len(ds))
        report = evaluate_store(ds, split, store, ks=ks, T_grid=args.T, calibration_seed=args.split_seed)
        summary.append([name, path.name, store.metric, report.calibration.kind,
                        " ".join(_fmt(c) for c in report.calibration.coefficients), _fmt(report.estimation_error)])
        for k, curve in report.curves.items():
            _write_csv(out / f"recall_{name}_k{k}.csv", ["T", "recall"], [[t, _fmt(r)] for t, r in curve])
        if args.errors:
            truth = ground_truth(ds, split.query, split.base)
            emb = store.cross(store.rows_for(split.query), store.rows_for(split.base))
            with np.errstate(divide="ignore", invalid="ignore"):
                err = np.abs(report.calibration(emb) - truth) / truth
            rows = ([int(q), int(b), _fmt(err[i, j])] for i, q in enumerate(split.query)
                    for j, b in enumerate(split.base) if truth[i, j] > 0)
            _write_csv(out / f"errors_{name}.csv", ["query", "item", "error"], rows)
    _write_csv(out / "summary.csv", ["name", "store", "metric", "calibration", "coefficients", "estimation_error"], summary)
    return 0


def _store_names(paths: list[Path]) -> list[str]:
    """File stems, suffixed with their position when two stores share a stem.

    Names depend only on file names so outputs of runs in different
    directories compare byte for byte.
    """
    stems = [p.stem for p in paths]
    return [s if stems.count(s) == 1 else f"{s}{i}" for i, s in enumerate(stems)]


def _exact_answers(truth: np.ndarray, base: np.ndarray, tau: int) -> list[set[int]]:
    return [set(base[row <= tau].tolist()) for row in truth]


def cmd_search(args) -> int:
    ds, split = _load(args)
    full = load_store(args.store, len(ds))
    params = SearchParams(args.tau, args.mu, args.T)
    if args.mode == "ranked" and args.T is None:
        raise SystemExit("--mode ranked needs --T")
    out = _prepare_out(args)
    base_store = EmbeddingStore(full.matrix[split.base], split.base, full.metric)
    calibration = None
    if args.calibrated:
        kind = "quadratic" if full.metric == "hamming" else "linear"
        calibration = calibrate(full, *calibration_pairs(ds, split.train, seed=args.split_seed), kind)
    truth = ground_truth(ds, split.query, split.base)
    exact = _exact_answers(truth, split.base, args.tau)
    results, stats = [], []
    for qi, q in enumerate(split.query):
        query = ds.strings[q]
        embed = lambda _s, q=q: full.matrix[q]
        start = time.perf_counter()
        if args.mode == "filter":
            res: SearchResult = threshold_search_filter(query, ds, base_store, embed, params, calibration)
        else:
            res = threshold_search_ranked(query, ds, base_store, embed, args.tau, args.T)
        wall = time.perf_counter() - start
        found = set(res.ids.tolist())
        rec = len(found & exact[qi]) / len(exact[qi]) if exact[qi] else 1.0
        results += [[int(q), int(i), int(d)] for i, d in zip(res.ids, res.distances)]
        stats.append([int(q), res.n_candidates, res.n_dp_calls, len(found), len(exact[qi]), _fmt(rec), f"{wall * 1e3:.3f}"])
    _write_csv(out / "results.csv", ["query", "item", "distance"], results)
    _write_csv(out / "stats.csv", ["query", "candidates", "dp_calls", "results", "exact_results", "recall", "wall_ms"], stats)
    mean_recall = float(np.mean([float(s[5]) for s in stats])) if stats else 1.0
    print(f"{len(stats)} queries, mean recall {mean_recall:.4f}, "
          f"mean DP calls {np.mean([s[2] for s in stats]) if stats else 0:.1f} of {len(split.base)}")
    return 0


def cmd_join(args) -> int:
    ds = load_dataset(args.data, truncate_at=args.truncate_at, max_line_bytes=args.max_line_bytes)
    store = load_store(args.store, len(ds))
    if not args.mu > 1:
        raise SystemExit("--mu must be > 1")
    out = _prepare_out(args)
    start = time.perf_counter()
    res = similarity_join(ds, store, args.tau, args.mu)
    wall = time.perf_counter() - start
    left = np.array([i for i, _ in res.pairs], dtype=np.int64)
    right = np.array([j for _, j in res.pairs], dtype=np.int64)
    dist = ds.packed.pairs(left, right) if res.pairs else []
    _write_csv(out / "pairs.csv", ["i", "j", "distance"], [[i, j, int(d)] for (i, j), d in zip(res.pairs, dist)])
    _write_csv(out / "stats.csv", ["pairs", "candidates", "dp_calls", "wall_ms"],
               [[len(res.pairs), res.n_candidates, res.n_dp_calls, f"{wall * 1e3:.3f}"]])
    print(f"{len(res.pairs)} pairs from {res.n_candidates} candidates")
    return 0


def cmd_props(args) -> int:
    out = _prepare_out(args)
    rows, ok = [], True
    for rep in check_one_hot_bounds(n_pairs=args.pairs, seed=args.seed) + check_pooling_bounds(n_pairs=args.pairs, seed=args.seed):
        print(rep.line())
        rows.append([rep.name, rep.checked, rep.violations, "", int(rep.passed)])
        ok &= rep.passed
    for rep in gradient_suite(seed=args.seed):
        print(rep.line())
        rows.append([f"gradient {rep.name}", rep.instances, int(not rep.passed), _fmt(rep.max_error), int(rep.passed)])
        ok &= rep.passed
    ds = StringDataset.from_strings(dna_corpus(2000, seed=args.seed, min_len=1, max_len=64, family_size=4))
    dist = cgk_distortion_report(ds, 1000, args.seed)
    passed = dist.violation_fraction <= 0.05
    print(f"{'PASS' if passed else 'FAIL'} CGK distortion: {dist.violations}/{dist.n_pairs} pairs with d_H < edit distance")
    rows.append(["cgk distortion", dist.n_pairs, dist.violations, _fmt(dist.violation_fraction), int(passed)])
    ok &= passed
    _write_csv(out / "props.csv", ["check", "checked", "violations", "value", "passed"], rows)
    _write_csv(out / "cgk_ratio_quantiles.csv", ["quantile", "ratio"],
               [[q, _fmt(v)] for q, v in dist.quantiles().items()])
    return 0 if ok else 1


def cmd_synth(args) -> int:
    out = _prepare_out(args)
    strings = dna_corpus(args.count, seed=args.seed, min_len=args.min_len, max_len=args.max_len)
    (out / "corpus.txt").write_bytes(b"".join(s + b"\n" for s in strings))
    return 0


COMMANDS = {
    "train": cmd_train,
    "embed": cmd_embed,
    "eval": cmd_eval,
    "search": cmd_search,
    "join": cmd_join,
    "props": cmd_props,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    # numba probes for an optional TBB threading layer and warns when it is too old.
    warnings.filterwarnings("ignore", message=".*TBB.*")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        return COMMANDS[args.command](args)
    except (DatasetError, TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
