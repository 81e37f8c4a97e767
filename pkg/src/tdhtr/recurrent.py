"""Peephole LSTM, bidirectional stacks and backpropagation through time.

Gate weights are stored stacked in one matrix ``W`` of shape
``(4 * hidden, input + hidden)`` with row blocks ordered i, f, o, g; it
multiplies the concatenation ``[x_t, h_{t-1}]``. Peepholes are diagonal:
``p_i * c_{t-1}`` and ``p_f * c_{t-1}`` enter the input and forget gates,
``p_o * c_t`` the output gate.

Sequences are batched as ``(batch, time, dim)`` arrays with a ``lengths``
vector. Padded frames sit at the end of each row; the reverse direction
flips only the valid prefix, so padding never leaks into valid outputs.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, DomainError
from .numerics import sigmoid

GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    W: np.ndarray
    b: np.ndarray
    peephole: np.ndarray = None  # (3, hidden) rows i, f, o; None disables
    g_activation: str = "tanh"

    def __post_init__(self):
        four_h = self.W.shape[0]
        if four_h % 4 or self.b.shape != (four_h,):
            raise DimensionError(f"inconsistent LSTM shapes W{self.W.shape} b{self.b.shape}")
        if self.peephole is not None and self.peephole.shape != (3, four_h // 4):
            raise DimensionError(f"peephole must be (3, {four_h // 4}), got {self.peephole.shape}")
        if self.g_activation not in ("tanh", "sigmoid"):
            raise DomainError(f"g_activation must be 'tanh' or 'sigmoid', got {self.g_activation!r}")

    @property
    def hidden(self):
        return self.W.shape[0] // 4

    @property
    def input_dim(self):
        return self.W.shape[1] - self.hidden

    def gate(self, name):
        """Weight block of one gate, e.g. ``gate('f')`` is W_f."""
        k = GATES.index(name)
        h = self.hidden
        return self.W[k * h:(k + 1) * h]


@dataclass
class LstmState:
    c: np.ndarray
    h: np.ndarray
    i: np.ndarray = None
    f: np.ndarray = None
    o: np.ndarray = None
    g: np.ndarray = None


@dataclass(frozen=True)
class BlstmConfig:
    input_dim: int = 512
    hidden: int = 256
    layers: int = 3
    n_out: int = 2  # labels + 1 (CTC blank)
    peepholes: bool = True
    g_activation: str = "tanh"


def _g(z, mode):
    return np.tanh(z) if mode == "tanh" else sigmoid(z)


def _g_grad(g, mode):
    return 1.0 - g * g if mode == "tanh" else g * (1.0 - g)


def lstm_forward(xs, W, b, peep, g_mode="tanh", h0=None, c0=None):
    """Unrolled forward pass over ``xs`` of shape (batch, time, input)."""
    bsz, steps, d = xs.shape
    hid = W.shape[0] // 4
    if W.shape[1] != d + hid:
        raise DimensionError(f"input dim {d} does not match W {W.shape}")
    dtype = xs.dtype
    Wx, Wh = W[:, :d], W[:, d:]
    xw = xs @ Wx.T + b  # (batch, time, 4H)
    h = np.zeros((bsz, hid), dtype) if h0 is None else h0
    c = np.zeros((bsz, hid), dtype) if c0 is None else c0
    I = np.empty((steps, bsz, hid), dtype)
    F, O, G, C, TC, Hs = (np.empty_like(I) for _ in range(6))
    Cprev, Hprev = np.empty_like(I), np.empty_like(I)
    for t in range(steps):
        z = xw[:, t] + h @ Wh.T
        if peep is not None:
            z[:, :hid] += peep[0] * c
            z[:, hid:2 * hid] += peep[1] * c
        if_ = sigmoid(z[:, :2 * hid])
        i, f = if_[:, :hid], if_[:, hid:]
        g = _g(z[:, 3 * hid:], g_mode)
        Cprev[t], Hprev[t] = c, h
        c = f * c + i * g
        zo = z[:, 2 * hid:3 * hid]
        if peep is not None:
            zo += peep[2] * c
        o = sigmoid(zo)
        tc = np.tanh(c)
        h = o * tc
        I[t], F[t], O[t], G[t], C[t], TC[t], Hs[t] = i, f, o, g, c, tc, h
    cache = (xs, W, peep, g_mode, I, F, O, G, C, TC, Cprev, Hprev)
    return Hs.transpose(1, 0, 2), cache


def lstm_backward(dH, cache, dh_last=None, dc_last=None):
    """BPTT. ``dH`` is (batch, time, hidden).

    Returns ``(dxs, dW, db, dpeep, dh0, dc0)``; ``dpeep`` is None without
    peepholes.
    """
    xs, W, peep, g_mode, I, F, O, G, C, TC, Cprev, Hprev = cache
    bsz, steps, d = xs.shape
    hid = W.shape[0] // 4
    Wh = W[:, d:]
    dtype = dH.dtype
    dZ = np.empty((steps, bsz, 4 * hid), dtype)
    dh_next = np.zeros((bsz, hid), dtype) if dh_last is None else dh_last
    dc_next = np.zeros((bsz, hid), dtype) if dc_last is None else dc_last
    dpeep = np.zeros((3, hid), dtype) if peep is not None else None
    for t in reversed(range(steps)):
        dh = dH[:, t] + dh_next
        i, f, o, g, c, tc, cp = I[t], F[t], O[t], G[t], C[t], TC[t], Cprev[t]
        dzo = dh * tc * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tc * tc)
        if peep is not None:
            dc = dc + dzo * peep[2]
        dzi = dc * g * i * (1.0 - i)
        dzg = dc * i * _g_grad(g, g_mode)
        dzf = dc * cp * f * (1.0 - f)
        dc_next = dc * f
        if peep is not None:
            dc_next = dc_next + dzi * peep[0] + dzf * peep[1]
            dpeep[0] += (dzi * cp).sum(axis=0)
            dpeep[1] += (dzf * cp).sum(axis=0)
            dpeep[2] += (dzo * c).sum(axis=0)
        dz = dZ[t]
        dz[:, :hid], dz[:, hid:2 * hid], dz[:, 2 * hid:3 * hid], dz[:, 3 * hid:] = dzi, dzf, dzo, dzg
        dh_next = dz @ Wh
    dzf_ = dZ.reshape(-1, 4 * hid)
    xs_t = xs.transpose(1, 0, 2).reshape(-1, d)
    dW = np.concatenate([dzf_.T @ xs_t, dzf_.T @ Hprev.reshape(-1, hid)], axis=1)
    db = dzf_.sum(axis=0)
    dxs = (dZ @ W[:, :d]).transpose(1, 0, 2)
    return dxs, dW, db, dpeep, dh_next, dc_next


def reverse_index(lengths, steps):
    """Per-row time index that flips the first ``lengths[b]`` frames."""
    t = np.arange(steps)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def _flip(xs, idx):
    return np.take_along_axis(xs, idx[..., None], axis=1)


# -- single-sequence API --------------------------------------------------

def lstm_step(x_t, prev, params):
    """One time step for a single vector; returns the new state with gates."""
    x_t = np.asarray(x_t)
    if x_t.shape != (params.input_dim,) or prev.c.shape != (params.hidden,):
        raise DimensionError("x_t / state dimensions do not match the LSTM parameters")
    hs, cache = lstm_forward(x_t[None, None], params.W, params.b, params.peephole,
                             params.g_activation, prev.h[None], prev.c[None])
    I, F, O, G, C = cache[4:9]
    return LstmState(c=C[0, 0], h=hs[0, 0], i=I[0, 0], f=F[0, 0], o=O[0, 0], g=G[0, 0])


def lstm_sequence(xs, params, direction="fwd"):
    """Run one LSTM over a ``(time, input)`` sequence from zero state."""
    xs = np.asarray(xs)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise DomainError("lstm_sequence needs a non-empty (time, input) sequence")
    if direction not in ("fwd", "bwd"):
        raise DomainError(f"direction must be 'fwd' or 'bwd', got {direction!r}")
    seq = xs[::-1] if direction == "bwd" else xs
    hs, _ = lstm_forward(seq[None], params.W, params.b, params.peephole, params.g_activation)
    return hs[0, ::-1] if direction == "bwd" else hs[0]


# -- bidirectional stack --------------------------------------------------

def init_blstm(config, rng, dtype=np.float32, prefix="dec"):
    params = {}
    d = config.input_dim
    h = config.hidden
    for layer in range(config.layers):
        for side in ("fwd", "bwd"):
            p = f"{prefix}.{layer}.{side}"
            params[p + ".W"] = rng.normal((4 * h, d + h), 0.1, dtype)
            b = np.zeros(4 * h, dtype)
            b[h:2 * h] = 1.0  # forget gate
            params[p + ".b"] = b
            if config.peepholes:
                params[p + ".peep"] = rng.normal((3, h), 0.1, dtype)
        d = 2 * h
    params[f"{prefix}.proj.W"] = rng.normal((config.n_out, h), 0.1, dtype)
    params[f"{prefix}.proj.b"] = np.zeros(config.n_out, dtype)
    return params


def blstm_forward_batch(params, xs, lengths, config, prefix="dec", clip=None):
    """Stacked BLSTM + projection over a padded batch.

    Intermediate layers pass ``[fwd, bwd]`` upward; the top layer's two
    directions are summed and projected to ``n_out`` logits. ``clip``
    clamps both top-layer direction outputs to ``[-clip, clip]`` before the
    sum. Returns ``(logits, top_forward_features, cache)``.
    """
    bsz, steps, d = xs.shape
    if steps == 0:
        raise DomainError("empty feature sequence")
    if d != config.input_dim:
        raise DimensionError(f"decoder expects input dim {config.input_dim}, got {d}")
    idx = reverse_index(lengths, steps)
    x = xs
    layer_caches = []
    for layer in range(config.layers):
        pf, pb = f"{prefix}.{layer}.fwd", f"{prefix}.{layer}.bwd"
        hf, cf = lstm_forward(x, params[pf + ".W"], params[pf + ".b"],
                              params.get(pf + ".peep"), config.g_activation)
        hb_r, cb = lstm_forward(_flip(x, idx), params[pb + ".W"], params[pb + ".b"],
                                params.get(pb + ".peep"), config.g_activation)
        hb = _flip(hb_r, idx)
        layer_caches.append((cf, cb))
        if layer < config.layers - 1:
            x = np.concatenate([hf, hb], axis=2)
    top_f, top_b = hf, hb
    if clip is not None and np.isfinite(clip):
        top_f = np.clip(hf, -clip, clip)
        top_b = np.clip(hb, -clip, clip)
    combined = top_f + top_b
    logits = combined @ params[f"{prefix}.proj.W"].T + params[f"{prefix}.proj.b"]
    cache = (layer_caches, idx, combined, hf, hb, clip)
    return logits, hf, cache


def blstm_backward_batch(dlogits, params, cache, config, prefix="dec"):
    """Returns ``(grads, dxs)`` for :func:`blstm_forward_batch`."""
    layer_caches, idx, combined, hf, hb, clip = cache
    grads = {}
    PW = params[f"{prefix}.proj.W"]
    n_out = PW.shape[0]
    grads[f"{prefix}.proj.W"] = dlogits.reshape(-1, n_out).T @ combined.reshape(-1, combined.shape[2])
    grads[f"{prefix}.proj.b"] = dlogits.reshape(-1, n_out).sum(axis=0)
    dcomb = dlogits @ PW
    dhf = dhb = dcomb
    if clip is not None and np.isfinite(clip):
        dhf = dcomb * (np.abs(hf) <= clip)
        dhb = dcomb * (np.abs(hb) <= clip)
    h = config.hidden
    dx = None
    for layer in reversed(range(config.layers)):
        cf, cb = layer_caches[layer]
        pf, pb = f"{prefix}.{layer}.fwd", f"{prefix}.{layer}.bwd"
        dxf, grads[pf + ".W"], grads[pf + ".b"], dpf, _, _ = lstm_backward(dhf, cf)
        dxb_r, grads[pb + ".W"], grads[pb + ".b"], dpb, _, _ = lstm_backward(_flip(dhb, idx), cb)
        if dpf is not None:
            grads[pf + ".peep"], grads[pb + ".peep"] = dpf, dpb
        dx = dxf + _flip(dxb_r, idx)
        if layer > 0:
            dhf, dhb = dx[..., :h], dx[..., h:]
    return grads, dx


def blstm_forward(features, params, config, prefix="dec"):
    """Single ``(time, input_dim)`` sequence to ``(time, n_out)`` logits."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DomainError("blstm_forward needs a non-empty (time, dim) sequence")
    logits, _, _ = blstm_forward_batch(params, features[None], [features.shape[0]], config, prefix)
    return logits[0]


@dataclass
class Decoder:
    """A BLSTM + projection bound to its parameter namespace."""
    params: dict
    config: BlstmConfig
    prefix: str = "dec"

    def forward_batch(self, xs, lengths, clip=None):
        return blstm_forward_batch(self.params, xs, lengths, self.config, self.prefix, clip)

    def backward_batch(self, dlogits, cache):
        return blstm_backward_batch(dlogits, self.params, cache, self.config, self.prefix)

    def __call__(self, features):
        return blstm_forward(features, self.params, self.config, self.prefix)
