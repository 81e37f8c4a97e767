"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 configuration or input domain,
3 numeric failure, 4 I/O (including checkpoint errors).
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
import yaml

from . import pipeline
from .analysis import clip_sweep, magnitude_profile, svg_bars, svg_lines
from .checkpoint import read_manifest
from .ctc import log_softmax
from .data import LineDataset, generate_dataset, read_pgm
from .exceptions import TdhtrError
from .model import CRNN
from .training import finetune, greedy_transcripts, model_from_checkpoint, train
from .wfst import GrammarModel, build_search_graph, decode

log = logging.getLogger("tdhtr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _split(data_dir, name):
    return LineDataset.load(os.path.join(data_dir, name))


def cmd_gen_data(args, cfg):
    spec = pipeline.dataset_spec(cfg)
    generate_dataset(spec, args.out)
    with open(os.path.join(args.out, "spec.json"), "w", encoding="utf-8") as f:
        json.dump(spec.to_dict(), f, indent=1, sort_keys=True)
    print(f"wrote {spec.n_train}/{spec.n_val}/{spec.n_test} lines to {args.out}")


def cmd_train(args, cfg):
    tr, va = _split(args.data, "train"), _split(args.data, "val")
    tc = pipeline.train_config(cfg, "train")
    model = CRNN(pipeline.model_config(cfg, cfg["data"]["alphabet"]), seed=tc.seed)
    res = train(model, tr, va, tc, args.out)
    print(f"best val label error {res.best_val_error:.4f} at epoch {res.best_epoch}; {res.checkpoint_path}")


def cmd_finetune(args, cfg):
    tr, va = _split(args.data, "train"), _split(args.data, "val")
    tc = pipeline.train_config(cfg, "finetune")
    _, res = finetune(args.base, tr, va, tc, args.out, cfg["finetune"].get("cir_noise", 0.01))
    print(f"best val label error {res.best_val_error:.4f} at epoch {res.best_epoch}; {res.checkpoint_path}")


def cmd_eval(args, cfg):
    model = model_from_checkpoint(args.ckpt)
    ds = _split(args.data, args.split)
    graph = pipeline.load_graph(args.graph) if args.graph else None
    ev = pipeline.evaluate(model, ds, graph, args.out, beam=cfg["wfst"]["beam"],
                           acoustic_scale=cfg["wfst"]["acoustic_scale"])
    print(json.dumps(ev.to_dict()))


def cmd_decode(args, cfg):
    model = model_from_checkpoint(args.ckpt)
    graph = pipeline.load_graph(args.graph) if args.graph else None
    for path in args.images:
        img = read_pgm(path)
        if graph is None:
            text = greedy_transcripts(model, [LineDataset([img], [""]).images[0]])[0]
        else:
            y = model.logits(LineDataset([img], [""]).images[0])
            res = decode(log_softmax(y.astype(np.float64)), graph, beam=cfg["wfst"]["beam"],
                         acoustic_scale=cfg["wfst"]["acoustic_scale"])
            text = graph.labels_to_text(res.labels) if res.found else ""
        print(f"{path}\t{text}")


def cmd_analyze(args, cfg):
    model = model_from_checkpoint(args.ckpt)
    ds = _split(args.data, args.split)
    os.makedirs(args.out, exist_ok=True)
    prof = magnitude_profile(model, ds.images)
    prof.write_csv(args.out)
    sweep = clip_sweep(model, ds, cfg["analyze"]["gammas"])
    sweep.write_csv(args.out)
    svg_bars(prof.sorted[1], os.path.join(args.out, "magnitude_sorted.svg"), "sorted feature magnitude")
    svg_bars(prof.values, os.path.join(args.out, "magnitude_unsorted.svg"), "feature magnitude")
    svg_lines(sweep.gammas, {"error": sweep.errors}, os.path.join(args.out, "clip_sweep.svg"), "clipping sweep")
    print(json.dumps({"profile_std": prof.std, "unclipped_error": sweep.unclipped,
                      "sweep": dict(zip(map(str, sweep.gammas), sweep.errors))}))


def cmd_build_graph(args, cfg):
    alphabet = cfg["data"]["alphabet"]
    if args.arpa:
        grammar = GrammarModel.read_arpa(args.arpa)
    else:
        texts = _split(args.data, "train").texts
        grammar = GrammarModel.train(texts, order=cfg["wfst"]["order"], vocab=list(alphabet))
    graph = build_search_graph(grammar, alphabet, max_states=cfg["wfst"]["max_states"])
    pipeline.save_graph(graph, args.out, grammar)
    print(f"search graph: {graph.fst.num_states} states, {graph.fst.num_arcs} arcs -> {args.out}")


def cmd_inspect(args, cfg):
    print(json.dumps(read_manifest(args.ckpt), indent=1, sort_keys=True, default=str))


def build_parser():
    p = _Parser(prog="tdhtr", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    p.add_argument("--seed", type=int, help="seed for data generation and training")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="render the synthetic line dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train a baseline model")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", help="finetune a checkpoint with temporal dropout")
    s.add_argument("--base", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("td", "cir"))
    s.add_argument("--td-image-rate", type=float)
    s.add_argument("--td-encoder-rate", type=float)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("eval", help="label error (greedy) and CER/WER (with --graph)")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="val")
    s.add_argument("--graph")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("decode", help="transcribe PGM line images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--graph")
    s.add_argument("images", nargs="+")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("analyze", help="feature magnitude profile and clipping sweep")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="val")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("build-graph", help="compile the decoding graph from transcripts or an ARPA file")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--arpa")
    s.add_argument("--out", required=True)
    s.add_argument("--order", type=int)
    s.set_defaults(func=cmd_build_graph)

    s = sub.add_parser("inspect", help="print a checkpoint manifest")
    s.add_argument("ckpt")
    s.set_defaults(func=cmd_inspect)
    return p


def _overrides(args):
    out = list(args.set)
    if args.seed is not None:
        out += [f"seed={args.seed}", f"data.seed={args.seed}", f"train.seed={args.seed}",
                f"finetune.seed={args.seed}"]
    for flag, key in (("n_train", "data.n_train"), ("mode", "finetune.mode"),
                      ("td_image_rate", "finetune.td_image_rate"),
                      ("td_encoder_rate", "finetune.td_encoder_rate"), ("order", "wfst.order")):
        v = getattr(args, flag, None)
        if v is not None:
            out.append(f"{key}={v}")
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = pipeline.load_config(args.config, _overrides(args))
        args.func(args, cfg)
    except TdhtrError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except yaml.YAMLError as e:
        print(f"error: bad config file: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
