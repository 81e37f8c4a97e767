"""CRNN assembly: encoder -> (temporal dropout) -> BLSTM decoder(s) -> logits.

Parameters live in one flat ``{name: array}`` dict so optimizers,
checkpoints and gradient checks can treat the model uniformly. Batch-norm
running statistics live in a separate ``buffers`` dict.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import FULL_WIDTHS, FULL_POOLS, EncoderConfig, encoder_backward, encoder_forward, init_encoder
from .exceptions import ConfigurationError
from .numerics import Rng
from .recurrent import BlstmConfig, Decoder, init_blstm
from .regularize import apply_sequence_mask, cir_inputs

PRESETS = {
    # the architecture described for the real corpora
    "full": dict(widths=FULL_WIDTHS, hidden=256),
    # same schedule, narrower layers; trainable on a CPU in minutes
    "desk": dict(widths=(4, 8, 16, 16, 32, 32, 32), hidden=32),
}


@dataclass
class ModelConfig:
    alphabet: str
    widths: tuple = FULL_WIDTHS
    hidden: int = 256
    layers: int = 3
    peepholes: bool = True
    g_activation: str = "tanh"
    cir: bool = False
    dtype: str = "float32"

    @classmethod
    def preset(cls, name, alphabet, **overrides):
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        kw = dict(PRESETS[name])
        kw.update(overrides)
        return cls(alphabet=alphabet, **kw)

    @property
    def n_labels(self):
        return len(self.alphabet)

    @property
    def encoder(self):
        return EncoderConfig(widths=tuple(self.widths), pools=FULL_POOLS)

    @property
    def decoder(self):
        return BlstmConfig(input_dim=self.widths[-1], hidden=self.hidden, layers=self.layers,
                           n_out=self.n_labels + 1, peepholes=self.peepholes,
                           g_activation=self.g_activation)

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


class CRNN:
    """Convolutional encoder + BLSTM decoder trained with CTC.

    With ``config.cir`` a second decoder (prefix ``cir``) runs in parallel
    and its logits are added to the first decoder's.
    """

    def __init__(self, config, params=None, buffers=None, seed=0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        if params is None:
            rng = Rng(seed, "init")
            params, buffers = init_encoder(config.encoder, rng.child("encoder"), self.dtype)
            params.update(init_blstm(config.decoder, rng.child("decoder"), self.dtype, "dec"))
            if config.cir:
                params.update(init_blstm(config.decoder, rng.child("cir"), self.dtype, "cir"))
        self.params = params
        self.buffers = buffers

    @property
    def decoders(self):
        decs = [Decoder(self.params, self.config.decoder, "dec")]
        if self.config.cir:
            decs.append(Decoder(self.params, self.config.decoder, "cir"))
        return decs

    def add_cir_decoder(self, rng, noise_std=0.01):
        """Turn a single-decoder model into a dual one; B starts as A plus noise."""
        if self.config.cir:
            raise ConfigurationError("model already has a complementary decoder")
        for name in [k for k in self.params if k.startswith("dec.")]:
            a = self.params[name]
            self.params["cir" + name[3:]] = a + rng.normal(a.shape, noise_std, a.dtype)
        self.config = ModelConfig.from_dict({**self.config.to_dict(), "cir": True})

    def n_parameters(self):
        return int(sum(v.size for v in self.params.values()))

    # -- batched training path ---------------------------------------------

    def forward_batch(self, images, frame_lengths, train, enc_mask=None, clip=None):
        """Logits ``(batch, frames, labels + 1)`` for a padded image batch.

        ``enc_mask`` (batch, frames) applies encoder-output temporal dropout;
        for a dual-decoder model it splits frames between the decoders. When
        it is None, every decoder sees the full feature sequence.
        """
        feats, enc_cache = encoder_forward(self.params, self.buffers, images.astype(self.dtype, copy=False),
                                           self.config.encoder, train)
        decs = self.decoders
        if enc_mask is None:
            inputs = [feats] * len(decs)
        elif len(decs) == 1:
            inputs = [apply_sequence_mask(feats, enc_mask)]
        else:
            inputs = list(cir_inputs(feats, enc_mask))
        logits = None
        dec_caches, features = [], []
        for dec, x in zip(decs, inputs):
            y, top_fwd, cache = dec.forward_batch(x, frame_lengths, clip)
            logits = y if logits is None else logits + y
            dec_caches.append(cache)
            features.append(top_fwd)
        return logits, (enc_cache, dec_caches, enc_mask, features)

    def backward_batch(self, dlogits, cache):
        enc_cache, dec_caches, enc_mask, _ = cache
        grads = {}
        dfeat = None
        for i, (dec, dc) in enumerate(zip(self.decoders, dec_caches)):
            g, dx = dec.backward_batch(dlogits, dc)
            grads.update(g)
            if enc_mask is not None:
                m = enc_mask[..., None].astype(dx.dtype)
                dx = dx * (m if i == 0 else 1 - m)
            dfeat = dx if dfeat is None else dfeat + dx
        grads.update(encoder_backward(dfeat, enc_cache))
        return grads

    # -- inference ---------------------------------------------------------

    def logits(self, image, clip=None):
        """Inference logits for one ``64 x W`` image (W a multiple of 4)."""
        y, _ = self.forward_batch(image[None], [image.shape[1] // 4], train=False, clip=clip)
        return y[0]

    def top_features(self, image):
        """Forward-direction top-layer outputs of the first decoder, (frames, hidden)."""
        _, cache = self.forward_batch(image[None], [image.shape[1] // 4], train=False)
        return cache[3][0][0]
