import numpy as np
import pytest

from leporid.cli import run
from leporid.embeddings import load_embeddings
from leporid.interactions import load_split


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--clusters", "2", "--users", "40", "--items", "30", "--p-in", "0.4",
                "--p-out", "0.02", "--out", str(root / "s.tsv")]) == 0
    assert run(["ingest", str(root / "s.tsv"), "--out", str(root / "split"), "--min-count", "3"]) == 0
    assert run(["graph", str(root / "split"), "--out", str(root / "g"), "--k", "10"]) == 0
    return root


def test_synth_reproducible_byte_for_byte(tmp_path):
    args = ["synth", "--clusters", "4", "--users", "200", "--items", "200", "--p-in", "0.3",
            "--p-out", "0.01", "--seed", "123"]
    assert run(args + ["--out", str(tmp_path / "a.tsv")]) == 0
    assert run(args + ["--out", str(tmp_path / "b.tsv")]) == 0
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert run(args[:-1] + ["124", "--out", str(tmp_path / "c.tsv")]) == 0
    assert (tmp_path / "a.tsv").read_bytes() != (tmp_path / "c.tsv").read_bytes()


def test_ingest_roundtrip(pipeline):
    split = load_split(pipeline / "split")
    raw = [line.split("\t") for line in (pipeline / "s.tsv").read_text().splitlines()]
    assert len(split.train) + len(split.validation) + len(split.test) == len(raw)


def test_embed_alpha_zero_equals_le(pipeline):
    base = ["embed", str(pipeline / "split"), "--graph-dir", str(pipeline / "g"), "--dim", "6", "--k", "10"]
    assert run(base + ["--out", str(pipeline / "e" / "a0"), "--alpha", "0"]) == 0
    assert run(base + ["--out", str(pipeline / "e" / "le"), "--method", "le"]) == 0
    for side in ("users", "items"):
        a = load_embeddings(pipeline / "e" / f"a0.{side}.lepo")
        b = load_embeddings(pipeline / "e" / f"le.{side}.lepo")
        assert np.array_equal(a.values, b.values) and a.entity_ids == b.entity_ids
        assert a.provenance["method"] != b.provenance["method"]


def test_embed_tsv_and_eval(pipeline, capsys):
    assert run(["embed", str(pipeline / "split"), "--graph-dir", str(pipeline / "g"), "--dim", "6",
                "--k", "10", "--format", "tsv", "--out", str(pipeline / "e" / "t")]) == 0
    tsv = pipeline / "rep.tsv"
    assert run(["eval", str(pipeline / "split"), "--model", "embedding", "--user-repr", "item_mean",
                "--user-emb", str(pipeline / "e" / "t.users.tsv"), "--item-emb", str(pipeline / "e" / "t.items.tsv"),
                "--tsv", str(tsv), "--cutoffs", "10"]) == 0
    lines = tsv.read_text().splitlines()
    assert lines[0].startswith("label\tstage\tslice\tN")
    assert len(lines) == 3
    assert "HR" in capsys.readouterr().out


@pytest.mark.parametrize("model", ["toppop", "userknn", "itemknn"])
def test_eval_baselines(pipeline, model):
    assert run(["eval", str(pipeline / "split"), "--model", model, "--knn-k", "5"]) == 0


def test_sweep_enumerates_default_grid(pipeline, capsys):
    out = pipeline / "sweep"
    assert run(["sweep", str(pipeline / "split"), "--k", "10", "--dim", "4", "--out", str(out)]) == 0
    rows = [l.split("\t") for l in capsys.readouterr().out.splitlines()[1:]]
    assert sorted({r[0] for r in rows}, key=float) == ["0", "0.3", "0.5", "0.7", "1"]
    assert len(list(out.glob("report_*.tsv"))) == 5
    assert (out / "sweep.png").stat().st_size > 0


def test_train_writes_artifacts(pipeline):
    out = pipeline / "train"
    assert run(["train", str(pipeline / "split"), "--out", str(out), "--init", "random", "--dim", "4",
                "--steps", "5", "--batch-size", "8"]) == 0
    for name in ("model.lepo", "loss_curve.tsv", "loss_curve.png", "report_test.tsv"):
        assert (out / name).stat().st_size > 0
    assert len((out / "loss_curve.tsv").read_text().splitlines()) == 6


def test_simulate_writes_curve_and_figure(tmp_path):
    assert run(["simulate", "--m0", "5", "--n", "25", "--m-attach", "3", "--graphs", "1",
                "--insertions", "2", "--dim", "6", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "degree_curve.tsv").read_text().splitlines()[-1].startswith("# spearman=")
    assert (tmp_path / "degree_curve.png").stat().st_size > 0


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run(["eval", str(tmp_path / "missing"), "--model", "toppop"]) == 1
    assert "error" in capsys.readouterr().err
    assert run(["embed", str(tmp_path), "--out", str(tmp_path / "x"), "--method", "le", "--alpha", "0.3"]) == 1
    assert run(["embed", str(tmp_path), "--out", "x", "--method", "nope"]) == 2
    assert run([]) != 0
