import csv
import json

import numpy as np
import pytest

from edit_embed.cli import main
from edit_embed.model import load_model
from edit_embed.search import read_cemb
from edit_embed.synth import dna_corpus, write_corpus

SPLIT = ["--train-size", "60", "--query-size", "10"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "dna.txt"
    return write_corpus(dna_corpus(150, seed=3, min_len=10, max_len=40, family_size=5), path)


def run(*argv):
    assert main([str(a) for a in argv]) == 0


def read_csv(path):
    raw = path.read_bytes()
    assert raw.endswith(b"\r\n")
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def small_model():
    return ["--layers", "3", "--kernels", "4", "--dim", "16", "--topk", "10"]


class TestTrainEmbedEval:
    def test_train_defaults(self):
        from edit_embed.cli import build_parser

        args = build_parser().parse_args(["train", "--data", "x", "--out", "o"])
        assert (args.layers, args.kernels, args.dim, args.alpha, args.batch, args.topk, args.epochs) == (
            10, 8, 128, 0.1, 64, 100, 50,
        )
        assert (args.lr, args.pool, args.activation) == (1e-3, "max", "relu")

    def test_pipeline_reproducible(self, corpus, tmp_path):
        outputs = []
        for rep in ("a", "b"):
            t, e, v = tmp_path / f"train_{rep}", tmp_path / f"embed_{rep}", tmp_path / f"eval_{rep}"
            run("train", "--data", corpus, *SPLIT, *small_model(), "--epochs", "2", "--seed", "7", "--out", t)
            run("embed", "--data", corpus, *SPLIT, "--checkpoint", t / "model.cned", "--out", e)
            run("eval", "--data", corpus, *SPLIT, "--store", e / "store.cemb", "--out", v)
            outputs.append((t, e, v))
        (ta, ea, va), (tb, eb, vb) = outputs
        assert (ta / "model.cned").read_bytes() == (tb / "model.cned").read_bytes()
        assert (ta / "loss.csv").read_bytes() == (tb / "loss.csv").read_bytes()
        assert (ea / "store.cemb").read_bytes() == (eb / "store.cemb").read_bytes()
        for f in va.glob("*.csv"):
            assert f.read_bytes() == (vb / f.name).read_bytes()
        config = json.loads((ta / "run_config.json").read_text())
        assert config["command"] == "train" and config["seed"] == 7 and config["epochs"] == 2
        assert json.loads((ta / "split.json").read_text())["train"]
        assert read_csv(ta / "loss.csv")[0] == ["epoch", "mean_total", "mean_triplet", "mean_approx"]
        assert len(read_csv(ta / "loss.csv")) == 3
        ck = load_model(ta / "model.cned")
        assert ck.config.n_conv_layers == 3
        assert read_cemb(ea / "store.cemb").shape == (150, 16)
        summary = read_csv(va / "summary.csv")
        assert summary[0][-1] == "estimation_error" and len(summary) == 2
        curve = read_csv(va / "recall_store_k10.csv")
        assert curve[0] == ["T", "recall"] and float(curve[-1][1]) == 1.0

    def test_alpha_zero_still_reports_approx(self, corpus, tmp_path):
        run("train", "--data", corpus, *SPLIT, *small_model(), "--epochs", "1", "--alpha", "0", "--out", tmp_path)
        _, row = read_csv(tmp_path / "loss.csv")
        assert float(row[1]) == float(row[2]) and float(row[3]) > 0

    def test_cgk_and_random_reproducible(self, corpus, tmp_path):
        for rep in ("a", "b"):
            run("embed", "--data", corpus, *SPLIT, "--method", "cgk", "--seed", "3", "--out", tmp_path / f"g{rep}")
            run("embed", "--data", corpus, *SPLIT, "--method", "random-cnn", "--layers", "3", "--out", tmp_path / f"r{rep}")
        assert (tmp_path / "ga/store.cgke").read_bytes() == (tmp_path / "gb/store.cgke").read_bytes()
        assert (tmp_path / "ra/store.cemb").read_bytes() == (tmp_path / "rb/store.cemb").read_bytes()
        run("eval", "--data", corpus, *SPLIT, "--store", tmp_path / "ga/store.cgke", "--store", tmp_path / "ra/store.cemb",
            "--k", "10", "--T", "10", "--T", "80", "--errors", "--out", tmp_path / "v")
        summary = read_csv(tmp_path / "v/summary.csv")
        assert [r[2:4] for r in summary[1:]] == [["hamming", "quadratic"], ["euclidean", "linear"]]
        assert read_csv(tmp_path / "v/errors_store0.csv")[0] == ["query", "item", "error"]

    def test_cnn_needs_checkpoint(self, corpus, tmp_path):
        with pytest.raises(SystemExit):
            main(["embed", "--data", str(corpus), *SPLIT, "--out", str(tmp_path)])

    def test_missing_corpus(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o")]) == 2


class TestSearchJoin:
    @pytest.fixture
    def unique_corpus(self, tmp_path):
        strings = sorted(set(dna_corpus(120, seed=5, min_len=8, max_len=20, family_size=4)))
        path = write_corpus(strings, tmp_path / "u.txt")
        run("embed", "--data", path, *SPLIT, "--method", "cgk", "--out", tmp_path / "g")
        return path, tmp_path / "g/store.cgke", len(strings)

    def test_tau_zero_exact_only(self, unique_corpus, tmp_path):
        path, store, _ = unique_corpus
        run("search", "--data", path, *SPLIT, "--store", store, "--tau", "0", "--mu", "2", "--out", tmp_path / "s")
        # Queries are disjoint from the base and all strings are unique.
        assert len(read_csv(tmp_path / "s/results.csv")) == 1
        stats = read_csv(tmp_path / "s/stats.csv")
        assert stats[0][:3] == ["query", "candidates", "dp_calls"] and len(stats) == 11

    def test_ranked_full_budget(self, unique_corpus, tmp_path):
        path, store, n = unique_corpus
        n_base = n - 70
        run("search", "--data", path, *SPLIT, "--store", store, "--tau", "6", "--mode", "ranked", "--T", n_base,
            "--out", tmp_path / "s")
        assert all(float(r[5]) == 1.0 for r in read_csv(tmp_path / "s/stats.csv")[1:])

    def test_ranked_needs_T(self, unique_corpus, tmp_path):
        path, store, _ = unique_corpus
        with pytest.raises(SystemExit):
            main(["search", "--data", str(path), *SPLIT, "--store", str(store), "--tau", "1", "--mode", "ranked",
                  "--out", str(tmp_path / "s")])

    def test_mu_rejected(self, unique_corpus, tmp_path):
        path, store, _ = unique_corpus
        assert main(["search", "--data", str(path), *SPLIT, "--store", str(store), "--tau", "1", "--mu", "1",
                     "--out", str(tmp_path / "s")]) == 2

    def test_join_three_strings(self, tmp_path):
        path = write_corpus([b"aa", b"ab", b"zz"], tmp_path / "t.txt")
        run("embed", "--data", path, "--train-size", "0", "--query-size", "0", "--method", "cgk", "--out", tmp_path / "g")
        run("join", "--data", path, "--store", tmp_path / "g/store.cgke", "--tau", "1", "--mu", "1e9", "--out", tmp_path / "j")
        assert read_csv(tmp_path / "j/pairs.csv") == [["i", "j", "distance"], ["0", "1", "1"]]
        assert (tmp_path / "j/run_config.json").exists()


def test_props(tmp_path, capsys):
    run("props", "--pairs", "200", "--seed", "1", "--out", tmp_path)
    rows = read_csv(tmp_path / "props.csv")
    assert all(r[-1] == "1" for r in rows[1:])
    assert "FAIL" not in capsys.readouterr().out
