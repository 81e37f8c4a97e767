"""Evaluation, search-graph persistence and run configuration."""

import copy
import csv
import json
import os
from dataclasses import dataclass, fields

import numpy as np
import yaml

from .analysis import corpus_error_rate, edit_distance
from .ctc import log_softmax
from .data import SyntheticDatasetSpec, encode_text
from .exceptions import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig, greedy_transcripts, predict_logits
from .wfst import Fst, GrammarModel, SearchGraph, build_search_graph, decode, read_symbols, write_symbols

def _without_seed(d):
    # section seeds fall back to the top-level seed unless set explicitly
    d.pop("seed", None)
    return d


DEFAULTS = {
    "seed": 0,
    "data": SyntheticDatasetSpec().to_dict(),
    "model": {"preset": "desk"},
    "train": _without_seed(TrainConfig().to_dict()),
    "finetune": {**_without_seed(TrainConfig(mode="td", td_image_rate=0.3, td_encoder_rate=0.5, lr=3e-4,
                                             max_epochs=30, patience=10).to_dict()), "cir_noise": 0.01},
    "wfst": {"order": 8, "beam": 16.0, "acoustic_scale": 1.0, "max_states": 1_000_000},
    "analyze": {"gammas": [2.0, 1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05]},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=()):
    """Defaults, then a YAML file, then ``section.key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        with open(path, encoding="utf-8") as f:
            user = yaml.safe_load(f) or {}
        if not isinstance(user, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"{path}: unknown sections {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigurationError(f"unknown config section in {key!r}")
            node = node[p]
        node[parts[-1]] = yaml.safe_load(value)
    return cfg


def _dataclass_from(cls, d, what):
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise ConfigurationError(f"{what}: unknown keys {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigurationError(f"{what}: {e}") from None


def dataset_spec(cfg):
    return _dataclass_from(SyntheticDatasetSpec, dict(cfg["data"]), "data")


def model_config(cfg, alphabet):
    d = dict(cfg["model"])
    preset = d.pop("preset", "desk")
    if "widths" in d:
        d["widths"] = tuple(d["widths"])
    return ModelConfig.preset(preset, alphabet, **d)


def train_config(cfg, section="train"):
    d = {k: v for k, v in cfg[section].items() if k != "cir_noise"}
    d.setdefault("seed", cfg["seed"])
    return _dataclass_from(TrainConfig, d, section)


# -- search graphs ---------------------------------------------------------------

def save_graph(graph, out_dir, grammar=None):
    os.makedirs(out_dir, exist_ok=True)
    graph.fst.write(os.path.join(out_dir, "S.fst.txt"))
    chars = {i + 1: c for i, c in enumerate(graph.alphabet)}
    chars[len(graph.alphabet) + 1] = "<blank>"
    write_symbols(os.path.join(out_dir, "isyms.txt"), chars)
    write_symbols(os.path.join(out_dir, "osyms.txt"), graph.output_symbols)
    with open(os.path.join(out_dir, "graph.json"), "w", encoding="utf-8") as f:
        json.dump({"alphabet": graph.alphabet, "lg_states": graph.lg_states,
                   "states": graph.fst.num_states, "arcs": graph.fst.num_arcs}, f, indent=1)
    if grammar is not None:
        grammar.write_arpa(os.path.join(out_dir, "grammar.arpa"))


def load_graph(graph_dir):
    with open(os.path.join(graph_dir, "graph.json"), encoding="utf-8") as f:
        meta = json.load(f)
    fst = Fst.read(os.path.join(graph_dir, "S.fst.txt")).validate()
    return SearchGraph(fst, meta["alphabet"], read_symbols(os.path.join(graph_dir, "osyms.txt")),
                       meta.get("lg_states", 0))


def graph_from_texts(texts, alphabet, order=8, max_states=1_000_000):
    grammar = GrammarModel.train(texts, order=order, vocab=list(alphabet))
    return build_search_graph(grammar, alphabet, max_states=max_states), grammar


# -- evaluation ------------------------------------------------------------------

@dataclass
class Evaluation:
    label_error: float
    cer: float = None
    wer: float = None
    hypotheses: list = None  # (id, reference, greedy, wfst)

    def to_dict(self):
        return {"label_error": self.label_error, "cer": self.cer, "wer": self.wer}


def wfst_transcripts(model, images, graph, beam=16.0, acoustic_scale=1.0):
    out = []
    for y in predict_logits(model, images):
        res = decode(log_softmax(y.astype(np.float64)), graph, beam=beam, acoustic_scale=acoustic_scale)
        out.append(graph.labels_to_text(res.labels) if res.found else "")
    return out


def evaluate(model, dataset, graph=None, out_dir=None, beam=16.0, acoustic_scale=1.0):
    """Greedy label error and, with a graph, WFST CER/WER.

    Writes ``hypotheses.tsv`` and ``metrics.json`` to ``out_dir`` when given.
    """
    alphabet = model.config.alphabet
    for t in dataset.texts:
        encode_text(t, alphabet)
    greedy = greedy_transcripts(model, dataset.images)
    ev = Evaluation(corpus_error_rate(list(zip(dataset.texts, greedy)), "label"))
    wf = [None] * len(greedy)
    if graph is not None:
        if graph.alphabet != alphabet:
            raise ConfigurationError("search graph and model alphabets differ")
        wf = wfst_transcripts(model, dataset.images, graph, beam, acoustic_scale)
        pairs = list(zip(dataset.texts, wf))
        ev.cer = corpus_error_rate(pairs, "char")
        ev.wer = corpus_error_rate(pairs, "word")
    ev.hypotheses = list(zip(dataset.ids, dataset.texts, greedy, wf))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "hypotheses.tsv"), "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar="\\")
            w.writerow(("id", "reference", "greedy", "wfst", "greedy_errors"))
            for i, ref, g, h in ev.hypotheses:
                w.writerow((i, ref, g, "" if h is None else h, edit_distance(ref, g).errors))
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as f:
            json.dump(ev.to_dict(), f, indent=1)
    return ev
