import csv
import json
import os

import numpy as np
import pytest
from sklearn.base import clone

from tdhtr import checkpoint as ckmod
from tdhtr import pipeline
from tdhtr.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from tdhtr.data import (DEFAULT_ALPHABET, FONT, LineDataset, SyntheticDatasetSpec, generate_dataset, read_pgm,
                        render_line, write_pgm)
from tdhtr.estimator import CRNNRecognizer, check_line_images, check_transcripts
from tdhtr.exceptions import (ChecksumError, ConfigurationError, DimensionError, DomainError, NumericError,
                              VersionError)
from tdhtr.model import CRNN, ModelConfig
from tdhtr.numerics import Rng
from tdhtr.training import TrainConfig, finetune, label_error, make_checkpoint, model_from_checkpoint, train
from tdhtr.wfst import GrammarModel, build_search_graph


def _model(alphabet=DEFAULT_ALPHABET, seed=0, **kw):
    return CRNN(ModelConfig.preset("desk", alphabet, **kw), seed=seed)


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


# -- dataset ---------------------------------------------------------------------

def test_dataset_is_deterministic(tmp_path):
    spec = SyntheticDatasetSpec(n_train=6, n_val=2, n_test=2, seed=11)
    generate_dataset(spec, tmp_path / "a")
    generate_dataset(spec, tmp_path / "b")
    for split in ("train", "val", "test"):
        a, b = tmp_path / "a" / split, tmp_path / "b" / split
        assert (a / "index.tsv").read_bytes() == (b / "index.tsv").read_bytes()
        for name in os.listdir(a / "images"):
            assert (a / "images" / name).read_bytes() == (b / "images" / name).read_bytes()


def test_index_has_one_entry_per_line(tmp_path):
    spec = SyntheticDatasetSpec(n_train=100, n_val=1, n_test=1, seed=2)
    generate_dataset(spec, tmp_path)
    rows = _read_csv(tmp_path / "train" / "index.tsv")
    assert rows[0] == ["id\twidth\ttranscript"]
    assert len(rows) == 101
    ds = LineDataset.load(tmp_path / "train")
    assert len(ds) == 100
    for im in ds.images:
        assert im.shape[0] == 64 and im.shape[1] % 4 == 0
        assert im.min() >= 0 and im.max() <= 1


def test_zero_jitter_line_is_bitmap_concatenation():
    spec = SyntheticDatasetSpec(jitter_x=0, jitter_y=0, width_variation=False)
    img = render_line("ab", spec)
    s, top = spec.scale, (64 - 7 * spec.scale) // 2
    x = spec.margin
    for ch in "ab":
        bmp = np.kron(FONT[ch], np.ones((s, s)))
        assert np.array_equal(img[top:top + 7 * s, x:x + bmp.shape[1]], bmp)
        x += bmp.shape[1] + spec.gap
    ink = sum(int(FONT[c].sum()) * s * s for c in "ab")
    assert img.sum() == ink and img.shape[1] % 4 == 0


def test_pgm_round_trip(tmp_path, rng):
    img = (rng.random((64, 12)) > 0.5).astype(np.float32)
    write_pgm(tmp_path / "x.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "x.pgm"), img)
    (tmp_path / "y.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(DomainError):
        read_pgm(tmp_path / "y.pgm")


def test_spec_validation():
    with pytest.raises(DomainError):
        SyntheticDatasetSpec(alphabet="aé")
    with pytest.raises(DomainError):
        SyntheticDatasetSpec(min_glyphs=5, max_glyphs=3)


# -- checkpoints -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def one_epoch(tiny_splits, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    tr = tiny_splits["train"].subset(range(10))
    m = _model()
    res = train(m, tr, tiny_splits["val"], TrainConfig(max_epochs=1, seed=3), out)
    return m, res, out


def test_one_epoch_smoke(one_epoch):
    m, res, out = one_epoch
    rows = _read_csv(out / "train_log.csv")
    assert rows[0] == ["epoch", "step", "loss", "val_error"] and len(rows) == 2
    loaded = model_from_checkpoint(res.checkpoint_path)
    for k in m.params:
        assert np.array_equal(loaded.params[k], m.params[k])


def test_checkpoint_round_trip_bit_identical(one_epoch, tmp_path):
    ck = load_checkpoint(one_epoch[1].checkpoint_path)
    save_checkpoint(ck, tmp_path / "c.ckpt")
    again = load_checkpoint(tmp_path / "c.ckpt")
    for group in ("params", "buffers"):
        a, b = getattr(ck, group), getattr(again, group)
        assert a.keys() == b.keys()
        assert all(a[k].dtype == b[k].dtype and a[k].tobytes() == b[k].tobytes() for k in a)
    assert again.rng_state == ck.rng_state and again.step == ck.step
    for slot, g in ck.optimizer["slots"].items():
        assert all(np.array_equal(g[k], again.optimizer["slots"][slot][k]) for k in g)
    assert (tmp_path / "c.ckpt").read_bytes() == open(one_epoch[1].checkpoint_path, "rb").read()


def test_truncated_or_corrupt_checkpoint(one_epoch, tmp_path):
    data = open(one_epoch[1].checkpoint_path, "rb").read()
    (tmp_path / "t.ckpt").write_bytes(data[: len(data) // 2])
    with pytest.raises(ChecksumError):
        load_checkpoint(tmp_path / "t.ckpt")
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 1
    (tmp_path / "f.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(ChecksumError):
        load_checkpoint(tmp_path / "f.ckpt")


def test_manifest_only_inspection(one_epoch, tmp_path):
    data = open(one_epoch[1].checkpoint_path, "rb").read()
    head = read_manifest(one_epoch[1].checkpoint_path)
    cut = 16 + len(json.dumps(head, sort_keys=True).encode())
    (tmp_path / "h.ckpt").write_bytes(data[:cut])  # header only, no arrays
    m = read_manifest(tmp_path / "h.ckpt")
    assert m["model_config"]["alphabet"] == DEFAULT_ALPHABET
    assert m["model_config"]["peepholes"] is True and m["model_config"]["g_activation"] == "tanh"


def test_version_mismatch(one_epoch, tmp_path, monkeypatch):
    ck = load_checkpoint(one_epoch[1].checkpoint_path)
    monkeypatch.setattr(ckmod, "FORMAT_VERSION", 99)
    save_checkpoint(ck, tmp_path / "v.ckpt")
    monkeypatch.undo()
    with pytest.raises(VersionError):
        load_checkpoint(tmp_path / "v.ckpt")
    with pytest.raises(VersionError):
        read_manifest(tmp_path / "v.ckpt")


# -- training protocol -------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(td_image_rate=1.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(mode="magic")
    with pytest.raises(ConfigurationError):
        TrainConfig(td_schedule="odd")


def test_zero_rate_finetune_equals_plain_continuation(one_epoch, tiny_splits):
    tr, va = tiny_splits["train"], tiny_splits["val"]
    ck = load_checkpoint(one_epoch[1].checkpoint_path)
    _, res = finetune(ck, tr, va, TrainConfig(mode="td", max_epochs=1, seed=5))
    plain = model_from_checkpoint(ck)
    ref = train(plain, tr, va, TrainConfig(max_epochs=1, seed=5), optimizer_state=ck.optimizer)
    assert res.history[0][2] == ref.history[0][2]


def test_odd_batches_are_dropout_free(one_epoch, tiny_splits, tmp_path):
    cfg = TrainConfig(mode="td", td_image_rate=0.5, td_encoder_rate=0.5, max_epochs=2, seed=1, batch_size=4)
    finetune(one_epoch[1].checkpoint_path, tiny_splits["train"], tiny_splits["val"], cfg, tmp_path)
    rows = _read_csv(tmp_path / "td_telemetry.csv")[1:]
    assert rows
    for epoch, batch, active, img_keep, enc_keep in rows:
        if int(batch) % 2:
            assert active == "0" and float(img_keep) == 1.0 and float(enc_keep) == 1.0
        else:
            assert active == "1"
    even = [float(r[3]) for r in rows if int(r[1]) % 2 == 0] + [float(r[4]) for r in rows if int(r[1]) % 2 == 0]
    assert min(even) < 1.0


def test_finetune_mode_mismatch(one_epoch, tiny_splits):
    tr, va = tiny_splits["train"], tiny_splits["val"]
    with pytest.raises(ConfigurationError):
        finetune(one_epoch[1].checkpoint_path, tr, va, TrainConfig(mode="baseline", max_epochs=1))
    m = _model()
    m.add_cir_decoder(Rng(0))
    ck = make_checkpoint(m)
    with pytest.raises(ConfigurationError):
        finetune(ck, tr, va, TrainConfig(mode="td", max_epochs=1))
    with pytest.raises(ConfigurationError):
        train(_model(), tr, va, TrainConfig(mode="cir", max_epochs=1))


def test_cir_finetune_runs(one_epoch, tiny_splits):
    model, res = finetune(one_epoch[1].checkpoint_path, tiny_splits["train"].subset(range(8)),
                          tiny_splits["val"], TrainConfig(mode="cir", td_encoder_rate=0.5, max_epochs=1))
    assert model.config.cir and any(k.startswith("cir.") for k in model.params)
    assert np.isfinite(res.history[0][2])


def test_divergence_is_reported(tiny_splits):
    m = _model()
    m.params["dec.proj.b"][...] = np.nan
    with pytest.raises(NumericError):
        train(m, tiny_splits["train"], tiny_splits["val"], TrainConfig(max_epochs=1))


def test_equal_seeds_give_identical_logs(tiny_splits, tmp_path):
    tr = tiny_splits["train"].subset(range(12))
    for name in ("a", "b"):
        train(_model(seed=4), tr, tiny_splits["val"], TrainConfig(max_epochs=2, seed=4), tmp_path / name)
    assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()


def test_training_reduces_loss(tiny_splits):
    res = train(_model(seed=1), tiny_splits["train"], tiny_splits["val"], TrainConfig(max_epochs=4, patience=0))
    assert res.history[-1][2] < res.history[0][2]


# -- evaluation ---------------------------------------------------------------------------

class Scripted:
    """Stand-in model returning fixed logits for every image."""

    def __init__(self, alphabet, logits):
        self.config = ModelConfig.preset("desk", alphabet)
        self.logits = np.asarray(logits, np.float32)

    def forward_batch(self, images, frames, train=False, clip=None):
        return np.repeat(self.logits[None], len(images), axis=0), None


def _toy(texts):
    return LineDataset([np.zeros((64, 16), np.float32)] * len(texts), texts)


def test_evaluate_unambiguous_toy_greedy_equals_wfst(tmp_path):
    frames = [0, 1, 2, 1]  # a b blank b
    m = Scripted("ab", 10.0 * np.eye(3)[frames])
    graph = build_search_graph(GrammarModel.uniform("ab"), "ab")
    ev = pipeline.evaluate(m, _toy(["abb"]), graph, tmp_path)
    assert ev.label_error == 0 and ev.cer == 0 and ev.wer == 0
    assert ev.hypotheses[0][2] == ev.hypotheses[0][3] == "abb"
    rows = (tmp_path / "hypotheses.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["id", "reference", "greedy", "wfst", "greedy_errors"]
    assert json.loads((tmp_path / "metrics.json").read_text())["label_error"] == 0


def test_evaluate_all_blank_is_all_deletions():
    m = Scripted("ab", 10.0 * np.eye(3)[[2, 2, 2, 2]])
    ev = pipeline.evaluate(m, _toy(["ab", "b"]))
    assert ev.label_error == 1.0 and ev.cer is None


def test_evaluate_alphabet_mismatch():
    m = Scripted("ab", np.zeros((4, 3)))
    graph = build_search_graph(GrammarModel.uniform("abc"), "abc")
    with pytest.raises(ConfigurationError):
        pipeline.evaluate(m, _toy(["a"]), graph)
    with pytest.raises(DomainError):
        pipeline.evaluate(m, _toy(["z"]))


def test_repeated_evaluation_is_bit_identical(one_epoch, tiny_splits):
    m = one_epoch[0]
    a = pipeline.evaluate(m, tiny_splits["val"])
    b = pipeline.evaluate(m, tiny_splits["val"])
    assert a.hypotheses == b.hypotheses and a.label_error == b.label_error


def test_overfit_toy_reaches_zero_error():
    spec = SyntheticDatasetSpec(n_train=5, n_val=1, n_test=1, min_glyphs=2, max_glyphs=3, seed=9,
                                alphabet="adehino")
    tr = generate_dataset(spec)["train"]
    m = _model("adehino", seed=0)
    res = train(m, tr, tr, TrainConfig(lr=3e-3, batch_size=5, max_epochs=300, patience=0, seed=0))
    assert res.best_val_error == 0.0
    assert label_error(m, tr) == 0.0


# -- configuration -----------------------------------------------------------------------------

def test_config_layers(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("train:\n  lr: 0.01\nwfst:\n  order: 3\n")
    cfg = pipeline.load_config(p, ["train.batch_size=2", "seed=7"])
    assert cfg["train"]["lr"] == 0.01 and cfg["train"]["batch_size"] == 2 and cfg["wfst"]["order"] == 3
    tc = pipeline.train_config(cfg)
    assert tc.seed == 7 and tc.lr == 0.01
    p.write_text("bogus: 1\n")
    with pytest.raises(ConfigurationError):
        pipeline.load_config(p)
    with pytest.raises(ConfigurationError):
        pipeline.load_config(None, ["train.lr"])
    with pytest.raises(ConfigurationError):
        pipeline.train_config(pipeline.load_config(None, ["train.unknown=1"]))


def test_graph_save_load(tmp_path):
    graph, grammar = pipeline.graph_from_texts(["ab ba", "a b"], "ab ", order=2)
    pipeline.save_graph(graph, tmp_path, grammar)
    for name in ("S.fst.txt", "isyms.txt", "osyms.txt", "graph.json", "grammar.arpa"):
        assert (tmp_path / name).exists()
    back = pipeline.load_graph(tmp_path)
    assert back.alphabet == "ab " and back.output_symbols == graph.output_symbols
    assert back.fst.num_arcs == graph.fst.num_arcs


# -- estimator -----------------------------------------------------------------------------------

def test_estimator_params_and_clone():
    est = CRNNRecognizer(mode="td", td_encoder_rate=0.5, max_epochs=3)
    p = est.get_params()
    assert p["mode"] == "td" and p["td_encoder_rate"] == 0.5 and p["max_epochs"] == 3
    c = clone(est).set_params(lr=1e-4)
    assert c.lr == 1e-4 and est.lr == 1e-3


def test_estimator_fit_predict_and_warm_start(tiny_splits):
    tr, va = tiny_splits["train"], tiny_splits["val"]
    est = CRNNRecognizer(max_epochs=1, seed=2)
    est.fit(tr.images[:8], tr.texts[:8], va.images, va.texts)
    pred = est.predict(va.images)
    assert len(pred) == len(va) and all(isinstance(t, str) for t in pred)
    # one minus the error rate; insertions can push it below zero
    assert est.score(va.images, va.texts) <= 1.0
    assert est.decision_function(va.images[0])[0].shape[1] == len(DEFAULT_ALPHABET) + 1
    est.set_params(warm_start=True, mode="cir", td_encoder_rate=0.5)
    est.fit(tr.images[:8], tr.texts[:8])
    assert est.model_.config.cir


def test_validation_helpers():
    with pytest.raises(DimensionError):
        check_line_images([np.zeros((32, 8))])
    with pytest.raises(DimensionError):
        check_line_images([np.zeros((64, 2))])
    with pytest.raises(DomainError):
        check_line_images([np.full((64, 8), np.nan)])
    with pytest.raises(DomainError):
        check_line_images([])
    assert check_line_images(np.zeros((64, 6)))[0].shape == (64, 8)
    with pytest.raises(DimensionError):
        check_transcripts(["a"], "ab", 2)
    with pytest.raises(DomainError):
        check_transcripts(["z"], "ab")
    with pytest.raises(Exception):
        CRNNRecognizer().predict([np.zeros((64, 8))])
