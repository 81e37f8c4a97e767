"""Mini-batch CTC training, temporal-dropout finetuning and evaluation.

Randomness is split into named sub-streams of one seed (``shuffle``,
``td_image``, ``td_encoder``), so enabling dropout never perturbs the batch
order and a zero dropout rate reproduces plain training bit for bit.

During finetuning temporal dropout is active on even-numbered mini-batches
(0, 2, 4, ... counted from zero within each epoch) and off on odd ones.
Off batches use all-ones masks; a dual-decoder model then feeds the full
sequence to both decoders, exactly as at inference.
"""

import csv
import logging
import os
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import corpus_error_rate
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .ctc import ctc_loss_batch, greedy_decode
from .data import FRAME_WIDTH, decode_labels, encode_text, iter_batches
from .exceptions import ConfigurationError, NumericError, ShapeError
from .model import CRNN, ModelConfig
from .numerics import Rng, bernoulli_vector
from .regularize import apply_image_mask, DropoutMask

log = logging.getLogger(__name__)

MODES = ("baseline", "td", "cir")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    clip_norm: float = 5.0
    batch_size: int = 8
    max_epochs: int = 60
    patience: int = 8
    td_image_rate: float = 0.0
    td_encoder_rate: float = 0.0
    td_schedule: str = "even"  # "even" or "all"
    mode: str = "baseline"
    seed: int = 0
    single_thread: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.td_schedule not in ("even", "all"):
            raise ConfigurationError(f"td_schedule must be 'even' or 'all', got {self.td_schedule!r}")
        for name in ("td_image_rate", "td_encoder_rate"):
            r = getattr(self, name)
            if not 0.0 <= r < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self):
        return asdict(self)


# -- optimizers -------------------------------------------------------------

class SGD:
    name = "sgd"

    def __init__(self, lr):
        self.lr = lr
        self.step_count = 0
        self.slots = {}

    def step(self, params, grads):
        self.step_count += 1
        for k, g in grads.items():
            params[k] -= (self.lr * g).astype(params[k].dtype)

    def state(self):
        return {"name": self.name, "hyper": {"lr": self.lr}, "step": self.step_count, "slots": self.slots}


class Adam:
    name = "adam"

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.slots = {"m": {}, "v": {}}

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        m, v = self.slots["m"], self.slots["v"]
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, g in grads.items():
            if k not in m:
                m[k] = np.zeros_like(params[k])
                v[k] = np.zeros_like(params[k])
            m[k] *= self.beta1
            m[k] += (1.0 - self.beta1) * g
            v[k] *= self.beta2
            v[k] += (1.0 - self.beta2) * g * g
            upd = self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)
            params[k] -= upd.astype(params[k].dtype)

    def state(self):
        return {"name": self.name,
                "hyper": {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps},
                "step": self.step_count, "slots": self.slots}


def make_optimizer(config, saved=None):
    opt = Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)
    if saved and saved.get("name") == opt.name:
        opt.step_count = int(saved.get("step", 0))
        for slot, group in saved.get("slots", {}).items():
            opt.slots[slot] = {k: v.copy() for k, v in group.items()}
    return opt


def clip_grad_norm(grads, max_norm):
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if not np.isfinite(total):
        raise NumericError("non-finite gradient norm")
    if max_norm and total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] *= grads[k].dtype.type(scale)
    return total


# -- evaluation -------------------------------------------------------------

def predict_logits(model, images, clip=None):
    """Inference logits per image; equal-width images share one forward pass."""
    out = [None] * len(images)
    by_width = {}
    for i, im in enumerate(images):
        by_width.setdefault(im.shape[1], []).append(i)
    for w in sorted(by_width):
        idx = by_width[w]
        batch = np.stack([images[i] for i in idx])
        y, _ = model.forward_batch(batch, [w // FRAME_WIDTH] * len(idx), train=False, clip=clip)
        for j, i in enumerate(idx):
            out[i] = y[j]
    return out


def greedy_transcripts(model, images, clip=None):
    alphabet = model.config.alphabet
    return [decode_labels(greedy_decode(y), alphabet) for y in predict_logits(model, images, clip)]


def label_error(model, dataset, clip=None):
    hyps = greedy_transcripts(model, dataset.images, clip)
    return corpus_error_rate(list(zip(dataset.texts, hyps)), unit="label")


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    best_val_error: float
    best_epoch: int
    history: list
    checkpoint_path: str = None
    optimizer_state: dict = None  # optimizer state saved with the best weights


def _thread_guard(single):
    if not single:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(1)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x))


def make_checkpoint(model, opt=None, rngs=None, step=0, epoch=0, extra=None):
    return Checkpoint(model_config=model.config.to_dict(), params=model.params, buffers=model.buffers,
                      optimizer=opt.state() if opt else {},
                      rng_state={k: r.get_state() for k, r in (rngs or {}).items()},
                      step=step, epoch=epoch, extra=extra or {})


def model_from_checkpoint(ckpt):
    if isinstance(ckpt, (str, os.PathLike)):
        ckpt = load_checkpoint(ckpt)
    config = ModelConfig.from_dict(ckpt.model_config)
    ref = CRNN(config, seed=0)
    for group, got, want in (("param", ckpt.params, ref.params), ("buffer", ckpt.buffers, ref.buffers)):
        if set(got) != set(want):
            raise ShapeError(f"checkpoint {group} names do not match the model configuration")
        for k in want:
            if got[k].shape != want[k].shape:
                raise ShapeError(f"{k}: checkpoint shape {got[k].shape} != expected {want[k].shape}")
    # copies, so training the model never edits the checkpoint object
    return CRNN(config, params={k: v.copy() for k, v in ckpt.params.items()},
                buffers={k: v.copy() for k, v in ckpt.buffers.items()})


def train(model, train_set, val_set, config, out_dir=None, optimizer_state=None, on_epoch=None):
    """Train ``model`` in place with mini-batch CTC.

    Logs ``train_log.csv`` (epoch, step, loss, val_error) and
    ``td_telemetry.csv`` to ``out_dir`` and keeps the best-validation weights
    in ``best.ckpt``. The model is left holding the best weights.
    """
    alphabet = model.config.alphabet
    if config.mode == "cir" and not model.config.cir:
        raise ConfigurationError("cir mode needs a dual-decoder model")
    if config.mode != "cir" and model.config.cir:
        raise ConfigurationError(f"{config.mode} mode cannot train a dual-decoder model")
    if config.mode == "baseline" and (config.td_image_rate or config.td_encoder_rate):
        raise ConfigurationError("baseline mode takes no temporal dropout rates")
    targets = [encode_text(t, alphabet) for t in train_set.texts]
    root = Rng(config.seed)
    rngs = {"shuffle": root.child("shuffle"), "td_image": root.child("td_image"),
            "td_encoder": root.child("td_encoder")}
    opt = make_optimizer(config, optimizer_state)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    td_on = config.mode != "baseline"
    history, telemetry = [], []
    best = (np.inf, -1, None, None, None)
    stale = 0
    with _thread_guard(config.single_thread):
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            losses = []
            for b, (idx, images, frames) in enumerate(iter_batches(train_set, config.batch_size, rngs["shuffle"])):
                active = td_on and (config.td_schedule == "all" or b % 2 == 0)
                img_keep, enc_mask = 1.0, None
                if active:
                    images, img_keep = _image_dropout(images, frames, config.td_image_rate, rngs["td_image"])
                    enc_mask = _frame_mask(frames, images.shape[2] // FRAME_WIDTH,
                                           config.td_encoder_rate, rngs["td_encoder"])
                enc_keep = _valid_mean(enc_mask, frames)
                logits, cache = model.forward_batch(images, frames, train=True, enc_mask=enc_mask)
                loss, dlogits = ctc_loss_batch(logits, frames, [targets[i] for i in idx])
                mean_loss = float(np.mean(loss))
                if not np.isfinite(mean_loss):
                    raise NumericError(f"loss diverged at epoch {epoch}, batch {b}")
                grads = model.backward_batch(dlogits / len(idx), cache)
                clip_grad_norm(grads, config.clip_norm)
                opt.step(model.params, grads)
                losses.append(mean_loss)
                telemetry.append((epoch, b, int(active), _fmt(img_keep), _fmt(enc_keep)))
            val_err = label_error(model, val_set)
            epoch_loss = float(np.mean(losses))
            history.append((epoch, opt.step_count, epoch_loss, val_err))
            log.info("epoch %d loss %.4f val %.4f (%.1fs)", epoch, epoch_loss, val_err,
                     time.perf_counter() - t0)
            if on_epoch:
                on_epoch(epoch, epoch_loss, val_err)
            # ties keep the later weights; patience counts strict improvements only
            stale = 0 if val_err < best[0] else stale + 1
            if val_err <= best[0]:
                best = (val_err, epoch, {k: v.copy() for k, v in model.params.items()},
                        {k: v.copy() for k, v in model.buffers.items()}, _snapshot(opt))
                if out_dir:
                    save_checkpoint(make_checkpoint(model, opt, rngs, opt.step_count, epoch,
                                                    {"train_config": config.to_dict(), "val_error": val_err}),
                                    os.path.join(out_dir, "best.ckpt"))
            if out_dir:
                _write_csv(os.path.join(out_dir, "train_log.csv"), ("epoch", "step", "loss", "val_error"),
                           [(e, s, _fmt(l), _fmt(v)) for e, s, l, v in history])
                _write_csv(os.path.join(out_dir, "td_telemetry.csv"),
                           ("epoch", "batch", "td_active", "image_keep", "encoder_keep"), telemetry)
            if config.patience and stale >= config.patience:
                break
    if best[2] is not None:
        model.params.update(best[2])
        model.buffers.update(best[3])
    path = os.path.join(out_dir, "best.ckpt") if out_dir else None
    return TrainResult(best[0], best[1], history, path, best[4])


def _snapshot(opt):
    state = opt.state()
    state["slots"] = {k: {n: a.copy() for n, a in g.items()} for k, g in state["slots"].items()}
    return state


def _image_dropout(images, frames, rate, rng):
    """Per-line frame dropout on a padded batch; returns (images, keep fraction)."""
    out = images
    kept = total = 0
    for j, n in enumerate(frames):
        mask = DropoutMask(bernoulli_vector(rng, int(n), 1.0 - rate), rate, "train")
        kept += int(mask.m.sum())
        total += int(n)
        if not mask.m.all():
            if out is images:
                out = images.copy()
            w = int(n) * FRAME_WIDTH
            out[j, :, :w] = apply_image_mask(images[j, :, :w], mask)
    return out, kept / max(total, 1)


def _frame_mask(frames, steps, rate, rng):
    m = np.ones((len(frames), steps), np.int8)
    for j, n in enumerate(frames):
        m[j, :n] = bernoulli_vector(rng, int(n), 1.0 - rate)
    return m


def _valid_mean(mask, frames):
    if mask is None:
        return 1.0
    return float(sum(int(mask[j, :n].sum()) for j, n in enumerate(frames)) / max(int(np.sum(frames)), 1))


def finetune(base, train_set, val_set, config, out_dir=None, cir_noise=0.01):
    """Continue training a converged checkpoint with temporal dropout.

    ``base`` is a checkpoint path or :class:`Checkpoint`. For ``cir`` mode a
    single-decoder base gains a second decoder initialised as a noisy copy
    of the first.
    """
    if config.mode not in ("td", "cir"):
        raise ConfigurationError("finetune mode must be 'td' or 'cir'")
    ckpt = load_checkpoint(base) if isinstance(base, (str, os.PathLike)) else base
    model = model_from_checkpoint(ckpt)
    if config.mode == "cir" and not model.config.cir:
        model.add_cir_decoder(Rng(config.seed, "cir_init"), cir_noise)
    elif config.mode == "td" and model.config.cir:
        raise ConfigurationError("td finetuning expects a single-decoder base model")
    saved_opt = ckpt.optimizer if config.mode == "td" else None
    result = train(model, train_set, val_set, config, out_dir, optimizer_state=saved_opt)
    return model, result
