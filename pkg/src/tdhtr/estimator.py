"""scikit-learn style wrapper around model construction, training and decoding."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .analysis import corpus_error_rate
from .data import DEFAULT_ALPHABET, FRAME_WIDTH, LINE_HEIGHT, LineDataset, encode_text, pad_width
from .exceptions import ConfigurationError, DimensionError, DomainError
from .model import CRNN, ModelConfig
from .numerics import Rng
from .training import TrainConfig, greedy_transcripts, predict_logits, train


def check_line_images(X):
    """Validate a sequence of line images; returns float32 arrays padded to a multiple of 4 wide."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    out = []
    for i, im in enumerate(X):
        im = np.asarray(im, dtype=np.float32)
        if im.ndim != 2 or im.shape[0] != LINE_HEIGHT:
            raise DimensionError(f"image {i}: expected shape ({LINE_HEIGHT}, W), got {im.shape}")
        if im.shape[1] < FRAME_WIDTH:
            raise DimensionError(f"image {i}: width {im.shape[1]} is below one frame")
        if not np.all(np.isfinite(im)):
            raise DomainError(f"image {i}: non-finite pixels")
        out.append(pad_width(im))
    if not out:
        raise DomainError("no images given")
    return out


def check_transcripts(y, alphabet, n=None):
    y = [str(t) for t in y]
    if n is not None and len(y) != n:
        raise DimensionError(f"{n} images but {len(y)} transcripts")
    for t in y:
        encode_text(t, alphabet)
    return y


class CRNNRecognizer(BaseEstimator):
    """Line recognizer: ``fit(images, transcripts)``, ``predict(images)``.

    ``mode`` is ``baseline``, ``td`` or ``cir``. With ``warm_start`` a
    second ``fit`` continues from the current weights (and optimizer
    state), which is how temporal-dropout finetuning is run; ``cir`` then
    adds the complementary decoder.
    """

    def __init__(self, alphabet=DEFAULT_ALPHABET, preset="desk", mode="baseline", td_image_rate=0.0,
                 td_encoder_rate=0.0, td_schedule="even", lr=1e-3, batch_size=8, max_epochs=60,
                 patience=8, seed=0, warm_start=False, out_dir=None):
        self.alphabet = alphabet
        self.preset = preset
        self.mode = mode
        self.td_image_rate = td_image_rate
        self.td_encoder_rate = td_encoder_rate
        self.td_schedule = td_schedule
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.warm_start = warm_start
        self.out_dir = out_dir

    def _train_config(self):
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, td_image_rate=self.td_image_rate,
                           td_encoder_rate=self.td_encoder_rate, td_schedule=self.td_schedule,
                           mode=self.mode, seed=self.seed)

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_line_images(X)
        y = check_transcripts(y, self.alphabet, len(X))
        config = self._train_config()
        if X_val is None:
            val = LineDataset(X, y)
        else:
            X_val = check_line_images(X_val)
            val = LineDataset(X_val, check_transcripts(y_val, self.alphabet, len(X_val)))
        opt_state = None
        if self.warm_start and hasattr(self, "model_"):
            model = self.model_
            if self.mode == "cir" and not model.config.cir:
                model.add_cir_decoder(Rng(self.seed, "cir_init"))
            elif self.mode != "cir" and model.config.cir:
                raise ConfigurationError(f"{self.mode} mode cannot continue a dual-decoder model")
            if self.mode != "cir":
                opt_state = getattr(self, "optimizer_state_", None)
        else:
            model = CRNN(ModelConfig.preset(self.preset, self.alphabet, cir=self.mode == "cir"), seed=self.seed)
        result = train(model, LineDataset(X, y), val, config, self.out_dir, optimizer_state=opt_state)
        self.model_ = model
        self.history_ = result.history
        self.best_val_error_ = result.best_val_error
        self.optimizer_state_ = result.optimizer_state
        return self

    def decision_function(self, X):
        """Per-image inference logits ``(frames, labels + 1)``."""
        check_is_fitted(self, "model_")
        return predict_logits(self.model_, check_line_images(X))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return greedy_transcripts(self.model_, check_line_images(X))

    def score(self, X, y):
        """One minus the corpus label error rate."""
        X = check_line_images(X)
        y = check_transcripts(y, self.alphabet, len(X))
        return 1.0 - corpus_error_rate(list(zip(y, self.predict(X))), "label")

