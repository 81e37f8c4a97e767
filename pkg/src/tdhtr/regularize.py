"""Temporal dropout: whole time frames are zeroed at random during training.

Two placements share one mask convention. At the image level a frame is a
4-pixel-wide column band (the encoder emits one feature vector per 4 pixel
columns), blanked to the background value. At the encoder output a frame
is one feature vector, multiplied by 0 or 1. Survivors are never rescaled.

The complementary variant routes the kept frames to one decoder and the
dropped frames to a second decoder and sums their logits.

``drop_rate`` is the probability of dropping a frame; the Bernoulli keep
decision is drawn with probability ``1 - drop_rate``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DimensionError, DomainError
from .numerics import Rng, bernoulli_vector

FRAME_WIDTH = 4
DEFAULT_IMAGE_RATE = 0.3
DEFAULT_ENCODER_RATE = 0.5


@dataclass
class DropoutMask:
    m: np.ndarray  # int8 {0, 1}, one entry per frame
    drop_rate: float
    phase: str

    @property
    def keep_fraction(self):
        return float(self.m.mean()) if self.m.size else 1.0

    @property
    def complement(self):
        return (1 - self.m).astype(np.int8)


@dataclass
class CirOutput:
    y: np.ndarray
    contributions: tuple


def _check_rate(drop_rate):
    if not 0.0 <= drop_rate < 1.0:
        raise DomainError(f"drop_rate must lie in [0, 1), got {drop_rate}")


def _check_phase(phase):
    if phase not in ("train", "infer"):
        raise DomainError(f"phase must be 'train' or 'infer', got {phase!r}")


def sample_mask(n_frames, drop_rate, rng, phase="train"):
    """Draw a per-frame keep mask; all ones in the infer phase (no draws)."""
    _check_rate(drop_rate)
    _check_phase(phase)
    if phase == "infer":
        return DropoutMask(np.ones(n_frames, np.int8), drop_rate, phase)
    return DropoutMask(bernoulli_vector(rng, n_frames, 1.0 - drop_rate), drop_rate, phase)


def apply_image_mask(image, mask, background=0.0):
    """Blank every dropped 4-column frame of a ``(..., 64, W)`` image."""
    w = image.shape[-1]
    if w % FRAME_WIDTH:
        raise DimensionError(f"image width {w} is not a multiple of {FRAME_WIDTH}")
    n = w // FRAME_WIDTH
    if mask.m.shape[0] < n:
        raise DimensionError(f"mask has {mask.m.shape[0]} frames, image needs {n}")
    cols = np.repeat(mask.m[:n].astype(bool), FRAME_WIDTH)
    if cols.all():
        return image
    out = image.copy()
    out[..., ~cols] = background
    return out


def image_td(image, drop_rate, rng, phase="train", background=0.0):
    """Temporal dropout on a ``1 x 64 x W`` (or ``64 x W``) line image."""
    _check_rate(drop_rate)
    _check_phase(phase)
    w = image.shape[-1]
    if w % FRAME_WIDTH:
        raise DimensionError(f"image width {w} is not a multiple of {FRAME_WIDTH}")
    if phase == "infer":
        return image
    mask = sample_mask(w // FRAME_WIDTH, drop_rate, rng, phase)
    return apply_image_mask(image, mask, background)


def apply_sequence_mask(features, m):
    """``m[t] * x_t`` on a ``(time, dim)`` or ``(batch, time, dim)`` array."""
    return features * m[..., None].astype(features.dtype)


def sequence_td(features, drop_rate, rng, phase="train"):
    """Temporal dropout on a ``(time, dim)`` feature sequence.

    Returns ``(dropped, mask)``; the mask is reused by the complementary
    decoder.
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise DomainError("sequence_td needs a non-empty (time, dim) sequence")
    mask = sample_mask(features.shape[0], drop_rate, rng, phase)
    if phase == "infer":
        return features, mask
    return apply_sequence_mask(features, mask.m), mask


def cir_inputs(features, m):
    """Kept and complementary inputs ``(m * x, (1 - m) * x)``."""
    mm = m[..., None].astype(features.dtype)
    return features * mm, features * (1 - mm)


def cir_forward(features, mask, decoder_a, decoder_b, phase="train"):
    """Sum of two decoders fed complementary frame sets.

    In the train phase decoder A sees ``m * x`` and decoder B sees
    ``(1 - m) * x``; in the infer phase both see the full sequence.
    ``decoder_a`` / ``decoder_b`` are :class:`tdhtr.recurrent.Decoder`.
    """
    _check_phase(phase)
    ca, cb = decoder_a.config, decoder_b.config
    if ca.input_dim != cb.input_dim or ca.n_out != cb.n_out:
        raise DimensionError(
            f"decoders disagree: in {ca.input_dim}/{cb.input_dim}, out {ca.n_out}/{cb.n_out}")
    features = np.asarray(features)
    if phase == "infer":
        xa = xb = features
    else:
        xa, xb = cir_inputs(features, mask.m)
    ya = decoder_a(xa)
    yb = decoder_b(xb)
    return CirOutput(ya + yb, (ya, yb))


class TemporalDropout(TransformerMixin, BaseEstimator):
    """Frame-level dropout as a scikit-learn transformer.

    ``level='sequence'`` transforms a list of ``(time, dim)`` arrays,
    ``level='image'`` a list of ``(64, W)`` line images. Nothing is learned;
    ``fit`` only validates. With ``phase='infer'`` the transform is the
    identity.
    """

    def __init__(self, drop_rate=DEFAULT_ENCODER_RATE, level="sequence", phase="train",
                 background=0.0, random_state=0):
        self.drop_rate = drop_rate
        self.level = level
        self.phase = phase
        self.background = background
        self.random_state = random_state

    def fit(self, X, y=None):
        _check_rate(self.drop_rate)
        _check_phase(self.phase)
        if self.level not in ("sequence", "image"):
            raise DomainError(f"level must be 'sequence' or 'image', got {self.level!r}")
        self.rng_ = Rng(self.random_state, "td_" + self.level)
        self.masks_ = []
        return self

    def transform(self, X):
        if not hasattr(self, "rng_"):
            self.fit(X)
        out = []
        self.masks_ = []
        for x in X:
            x = np.asarray(x)
            if self.level == "sequence":
                xt, mask = sequence_td(x, self.drop_rate, self.rng_, self.phase)
            else:
                n = x.shape[-1] // FRAME_WIDTH
                mask = sample_mask(n, self.drop_rate, self.rng_, self.phase)
                xt = x if self.phase == "infer" else apply_image_mask(x, mask, self.background)
            out.append(xt)
            self.masks_.append(mask)
        return out
