"""CTC loss, gradient and best-path decoding.

The blank is the last class: for an alphabet of ``A`` labels, logits have
``A + 1`` columns and the blank index is ``A``.

All lattice arithmetic runs in float64 log space. ``log_beta[t, s]`` is the
log-probability of completing the target from state ``s`` at frame ``t``,
excluding the emission at ``t``, so ``log_alpha + log_beta`` is the
log-mass of all paths through ``(t, s)``.
"""

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import DimensionError, DomainError, InfeasibleAlignmentError

NEG_INF = -np.inf


@dataclass
class CtcLattice:
    log_alpha: np.ndarray  # (T, 2L+1)
    log_beta: np.ndarray
    log_prob: float

    def log_prob_from_beta(self, log_emit0):
        """Total log-probability recovered from the backward scores."""
        return float(np.logaddexp.reduce(self.log_beta[0, :2] + log_emit0[:2]))


def log_softmax(x):
    x = np.asarray(x, dtype=np.float64)
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def min_frames(target):
    """Frames needed to emit ``target``: one per label plus one blank per repeat."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _check_target(target, n_classes):
    blank = n_classes - 1
    for lab in target:
        if not 0 <= lab < blank:
            raise DomainError(f"label {lab} outside [0, {blank}) (blank is {blank})")


def _shift(a, k):
    """Shift along the state axis by ``k`` (positive = later), filling -inf."""
    out = np.full_like(a, NEG_INF)
    n = a.shape[1]
    if abs(k) < n:
        if k > 0:
            out[:, k:] = a[:, :n - k]
        else:
            out[:, :n + k] = a[:, -k:]
    return out


def _lattice_batch(logp, lengths, targets):
    """Forward/backward over a padded batch. ``logp`` is (B, T, K)."""
    bsz, steps, k = logp.shape
    blank = k - 1
    S = max(2 * len(t) + 1 for t in targets)
    ext = np.full((bsz, S), blank, dtype=np.int64)
    valid = np.zeros((bsz, S), dtype=bool)
    skip = np.zeros((bsz, S), dtype=bool)
    for b, tgt in enumerate(targets):
        s_b = 2 * len(tgt) + 1
        ext[b, 1:s_b:2] = tgt
        valid[b, :s_b] = True
        for s in range(3, s_b, 2):
            skip[b, s] = ext[b, s] != ext[b, s - 2]
    lengths = np.asarray(lengths)
    emit = np.take_along_axis(logp, np.broadcast_to(ext[:, None, :], (bsz, steps, S)), axis=2)
    emit = np.where(valid[:, None, :], emit, NEG_INF)

    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.full((steps, bsz, S), NEG_INF)
        alpha[0, :, 0] = emit[:, 0, 0]
        if S > 1:
            alpha[0, :, 1] = emit[:, 0, 1]
        for t in range(1, steps):
            a = alpha[t - 1]
            a1 = _shift(a, 1)
            a2 = np.where(skip, _shift(a, 2), NEG_INF)
            new = np.logaddexp(np.logaddexp(a, a1), a2) + emit[:, t]
            alpha[t] = np.where((t < lengths)[:, None], new, a)

        beta = np.full((steps, bsz, S), NEG_INF)
        init = np.full((bsz, S), NEG_INF)
        for b, tgt in enumerate(targets):
            s_b = 2 * len(tgt) + 1
            init[b, s_b - 1] = 0.0
            if s_b > 1:
                init[b, s_b - 2] = 0.0
        skip_next = np.zeros_like(skip)
        skip_next[:, :-2] = skip[:, 2:]
        nxt = np.full((bsz, S), NEG_INF)
        for t in reversed(range(steps)):
            if t + 1 < steps:
                be = beta[t + 1] + emit[:, t + 1]
                b1 = _shift(be, -1)
                b2 = np.where(skip_next, _shift(be, -2), NEG_INF)
                nxt = np.logaddexp(np.logaddexp(be, b1), b2)
            last = (t == lengths - 1)[:, None]
            inside = (t < lengths - 1)[:, None]
            beta[t] = np.where(last, init, np.where(inside, nxt, NEG_INF))

        rows = np.arange(bsz)
        final = alpha[lengths - 1, rows]  # (B, S)
        s_last = np.array([2 * len(t) for t in targets])
        log_prob = final[rows, s_last]
        has_prev = s_last >= 1
        prev = np.where(has_prev, final[rows, np.maximum(s_last - 1, 0)], NEG_INF)
        log_prob = np.logaddexp(log_prob, prev)
    return alpha, beta, log_prob, ext, emit


def ctc_loss_batch(logits, lengths, targets):
    """Per-sample CTC losses and logit gradients for a padded batch.

    ``logits`` is (B, T, K); frames at or beyond ``lengths[b]`` are ignored
    and receive zero gradient. Returns ``(losses, grads)``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 3 or logits.shape[1] == 0:
        raise DomainError("CTC needs non-empty (batch, time, classes) logits")
    bsz, steps, k = logits.shape
    lengths = np.asarray(lengths, dtype=np.int64)
    for b, tgt in enumerate(targets):
        _check_target(tgt, k)
        if not 1 <= lengths[b] <= steps:
            raise DomainError(f"sequence length {lengths[b]} outside [1, {steps}]")
        if lengths[b] < min_frames(tgt):
            raise InfeasibleAlignmentError(
                f"{lengths[b]} frames cannot align a target needing {min_frames(tgt)}")
    logp = log_softmax(logits)
    alpha, beta, log_prob, ext, _ = _lattice_batch(logp, lengths, targets)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        post = np.exp(alpha + beta - log_prob[None, :, None])  # (T, B, S)
    post = np.nan_to_num(post).transpose(1, 0, 2)
    onehot = np.zeros((bsz, ext.shape[1], k))
    np.put_along_axis(onehot, ext[..., None], 1.0, axis=2)
    occupancy = post @ onehot  # (B, T, K); padded ext entries carry zero mass
    grads = np.exp(logp) - occupancy
    grads[np.arange(steps)[None, :] >= lengths[:, None]] = 0.0
    return -log_prob, grads.astype(logits.dtype)


def ctc_loss(logits, target):
    """``-log P(target | softmax(logits))`` and its gradient w.r.t. logits."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise DomainError("ctc_loss needs non-empty (time, classes) logits")
    losses, grads = ctc_loss_batch(logits[None], [logits.shape[0]], [list(target)])
    return float(losses[0]), grads[0]


def ctc_lattice(logits, target):
    logits = np.asarray(logits)
    target = list(target)
    _check_target(target, logits.shape[1])
    if logits.shape[0] < min_frames(target):
        raise InfeasibleAlignmentError("too few frames for target")
    alpha, beta, log_prob, _, emit = _lattice_batch(log_softmax(logits)[None], [logits.shape[0]], [target])
    lat = CtcLattice(alpha[:, 0], beta[:, 0], float(log_prob[0]))
    return lat, emit[0, 0]


def collapse(frames, blank):
    """Merge repeats, then drop blanks."""
    out = []
    prev = None
    for f in frames:
        f = int(f)
        if f != prev and f != blank:
            out.append(f)
        prev = f
    return out


def greedy_decode(logits):
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise DomainError("greedy_decode needs non-empty (time, classes) logits")
    return collapse(logits.argmax(axis=1), logits.shape[1] - 1)


@lru_cache(maxsize=32)
def _paths_by_output(steps, k):
    groups = {}
    for i, path in enumerate(itertools.product(range(k), repeat=steps)):
        groups.setdefault(tuple(collapse(path, k - 1)), []).append(i)
    paths = np.array(list(itertools.product(range(k), repeat=steps)), dtype=np.int64)
    return paths, {key: np.array(v) for key, v in groups.items()}


def ctc_brute_force(logits, target, max_paths=10 ** 7):
    """Probability of ``target`` summed over every frame path (test oracle)."""
    logits = np.asarray(logits, dtype=np.float64)
    steps, k = logits.shape
    if k ** steps > max_paths:
        raise DomainError(f"{k}^{steps} paths exceeds the enumeration bound {max_paths}")
    paths, groups = _paths_by_output(steps, k)
    members = groups.get(tuple(int(x) for x in target))
    if members is None:
        return 0.0
    logp = log_softmax(logits)
    path_logp = logp[np.arange(steps)[None, :], paths[members]].sum(axis=1)
    return float(np.exp(path_logp).sum())
