"""scikit-learn style wrappers around the mantissa quantizer and the trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import packer
from ._validation import check_float_array, check_labels, check_width
from .floatcore import from_bits, get_format, split_seed, to_bits, truncate_bits
from .trainer import ToyModel, TrainConfig, fit_model, predict_proba


class MantissaQuantizer(TransformerMixin, BaseEstimator):
    """Round to ``fmt`` and keep the top ``man_width`` mantissa bits.

    ``fit`` is a no-op apart from recording the compressed footprint of the
    training data at the chosen width (``footprint_`` , a packer size account).
    """

    def __init__(self, fmt="fp32", man_width=None, variant="delta"):
        self.fmt = fmt
        self.man_width = man_width
        self.variant = variant

    def _width(self):
        fmt = get_format(self.fmt)
        return fmt.m if self.man_width is None else check_width(self.man_width, fmt)

    def fit(self, X, y=None):
        X = check_float_array(X)
        width = self._width()
        bits = truncate_bits(to_bits(X, get_format(self.fmt)), width, get_format(self.fmt))
        signless = not np.any(bits >> (get_format(self.fmt).width - 1))
        self.footprint_ = packer.size_account(bits, self.fmt, width, signless, self.variant)
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def transform(self, X):
        check_is_fitted(self, "footprint_")
        X = check_float_array(X)
        fmt = get_format(self.fmt)
        bits = truncate_bits(to_bits(X, fmt), self._width(), fmt)
        return from_bits(bits, fmt).astype(np.float64)


class QuantizedMLPClassifier(ClassifierMixin, BaseEstimator):
    """Small MLP trained with SGD while its stored tensors are width-limited.

    ``quantizer`` is ``"none"``, ``"qm"`` (learned per-tensor widths) or
    ``"bitchop"`` (loss-driven network-wide activation width).
    """

    def __init__(self, hidden=(32, 32), quantizer="none", fmt="fp32", epochs=30, batch_size=32,
                 lr=0.05, weight_decay=1e-4, bit_lr=10.0, random_state=0):
        self.hidden = hidden
        self.quantizer = quantizer
        self.fmt = fmt
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.bit_lr = bit_lr
        self.random_state = random_state

    def _config(self, n_classes):
        return TrainConfig(
            hidden=tuple(self.hidden), quantizer=self.quantizer, format=self.fmt,
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weight_decay=self.weight_decay, bit_lr=self.bit_lr, seed=self.random_state,
            n_classes=n_classes, test_fraction=0.0,
        )

    def fit(self, X, y):
        X = check_float_array(X, ndim=2)
        y_enc, self.classes_ = check_labels(y, X.shape[0])
        cfg = self._config(len(self.classes_))
        _, _, init_seed, shuffle_seed, quant_seed = split_seed(cfg.seed, 5)
        model = ToyModel.init((X.shape[1], *cfg.hidden, len(self.classes_)), init_seed)
        self.result_ = fit_model(model, X, y_enc, X[:0], y_enc[:0], cfg, shuffle_seed, quant_seed)
        self.model_ = self.result_.model
        self.widths_ = self.result_.final_widths
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_float_array(X, ndim=2)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return predict_proba(self.model_, X, self.widths_, self.fmt)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    @property
    def mean_bits_(self) -> float:
        check_is_fitted(self, "model_")
        params = self.result_.qm_params
        if params:
            return sum(p.lam * p.n for p in params) / sum(p.lam for p in params)
        return float(np.mean(list(self.widths_.values())))
