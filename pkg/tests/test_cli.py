import json

import numpy as np
import pytest

from tdhtr.cli import main
from tdhtr.data import DEFAULT_ALPHABET, LineDataset, write_pgm

TINY = ["--set", "data.n_train=8", "--set", "data.n_val=3", "--set", "data.n_test=2",
        "--set", "data.max_glyphs=4", "--set", "train.max_epochs=1", "--set", "finetune.max_epochs=1",
        "--set", "wfst.order=2", "--set", "analyze.gammas=[1.0, 0.1]"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(TINY + ["--seed", "3", "gen-data", "--out", str(d / "data")]) == 0
    assert main(TINY + ["--seed", "3", "train", "--data", str(d / "data"), "--out", str(d / "base")]) == 0
    return d


def test_gen_data_layout(workdir):
    for split, n in (("train", 8), ("val", 3), ("test", 2)):
        assert len(LineDataset.load(workdir / "data" / split)) == n
    spec = json.loads((workdir / "data" / "spec.json").read_text())
    assert spec["seed"] == 3 and spec["n_train"] == 8


def test_train_outputs(workdir):
    for name in ("best.ckpt", "train_log.csv", "td_telemetry.csv"):
        assert (workdir / "base" / name).exists()


def test_finetune_eval_and_inspect(workdir, capsys):
    d = workdir
    assert main(TINY + ["finetune", "--base", str(d / "base" / "best.ckpt"), "--data", str(d / "data"),
                        "--out", str(d / "td"), "--td-image-rate", "0.3", "--td-encoder-rate", "0.5"]) == 0
    assert main(TINY + ["build-graph", "--data", str(d / "data"), "--out", str(d / "graph")]) == 0
    capsys.readouterr()
    assert main(TINY + ["eval", "--ckpt", str(d / "td" / "best.ckpt"), "--data", str(d / "data"),
                        "--graph", str(d / "graph"), "--out", str(d / "eval")]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert set(metrics) == {"label_error", "cer", "wer"}
    assert (d / "eval" / "hypotheses.tsv").exists()
    assert main(["inspect", str(d / "td" / "best.ckpt")]) == 0
    manifest = json.loads(capsys.readouterr().out)
    assert manifest["model_config"]["alphabet"] == DEFAULT_ALPHABET
    assert manifest["extra"]["train_config"]["mode"] == "td"


def test_decode_and_analyze(workdir, capsys):
    d = workdir
    img = LineDataset.load(d / "data" / "test").images[0]
    write_pgm(d / "line.pgm", img)
    capsys.readouterr()
    assert main(["decode", "--ckpt", str(d / "base" / "best.ckpt"), str(d / "line.pgm")]) == 0
    assert capsys.readouterr().out.startswith(str(d / "line.pgm") + "\t")
    assert main(TINY + ["analyze", "--ckpt", str(d / "base" / "best.ckpt"), "--data", str(d / "data"),
                        "--out", str(d / "analysis")]) == 0
    for name in ("magnitude_sorted.csv", "magnitude_unsorted.csv", "clip_sweep.csv", "clip_sweep.svg"):
        assert (d / "analysis" / name).exists()


def test_build_graph_from_arpa(workdir, tmp_path):
    assert main(TINY + ["build-graph", "--data", str(workdir / "data"), "--out", str(tmp_path / "g1")]) == 0
    assert main(TINY + ["build-graph", "--arpa", str(tmp_path / "g1" / "grammar.arpa"),
                        "--out", str(tmp_path / "g2")]) == 0
    a = (tmp_path / "g1" / "S.fst.txt").read_text().split()
    b = (tmp_path / "g2" / "S.fst.txt").read_text().split()
    # the log10 round trip through ARPA may move weights by an ulp
    assert len(a) == len(b) and np.allclose(np.array(a, float), np.array(b, float), rtol=1e-12, atol=1e-12)


def test_exit_codes(workdir, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense: {\n")
    assert main(["--config", str(bad), "inspect", "x"]) == 2
    bad.write_text("unknown_section: 1\n")
    assert main(["--config", str(bad), "inspect", "x"]) == 2
    assert main(["--set", "train.lr", "inspect", "x"]) == 2
    assert main(["inspect", str(tmp_path / "missing.ckpt")]) == 4
    data = (workdir / "base" / "best.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-100])
    assert main(["decode", "--ckpt", str(tmp_path / "cut.ckpt"), "x.pgm"]) == 4
    assert main(TINY + ["--set", "train.td_image_rate=0.5", "train", "--data", str(workdir / "data"),
                        "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err
