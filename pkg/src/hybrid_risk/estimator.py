"""scikit-learn compatible wrappers.

Both estimators take sequence arrays shaped ``[n_samples, T, F]``. A 2-D
``[n_samples, F]`` array is read as static data with ``T = 1``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset, fit_standardization
from .model import Model, ModelConfig
from .training import TrainConfig, fit


def _as_sequences(X) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError(f"expected [n_samples, T, F] input, got {X.ndim} dimensions")
    return X


class SequenceStandardizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring pooled over samples and time steps."""

    def fit(self, X, y=None):
        X = _as_sequences(X)
        stats = fit_standardization(Dataset(X, np.zeros(len(X)), tuple(range(X.shape[2]))))
        self.mean_, self.scale_ = stats.mean, stats.std
        self.n_features_in_ = X.shape[2]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = _as_sequences(X)
        if X.shape[2] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[2]} features, expected {self.n_features_in_}")
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return _as_sequences(X) * self.scale_ + self.mean_


class HybridRiskClassifier(ClassifierMixin, BaseEstimator):
    """Binary CNN + transformer sequence classifier.

    ``variant`` selects the full model or one of the ablations
    (``without_cnn``, ``without_transformer``). Inputs are standardized
    internally unless ``standardize=False``. ``validation_fraction > 0``
    holds out a stratified slice whose loss picks the returned epoch.
    """

    def __init__(self, variant="full", conv_layers=((16, 3, 1),), conv_padding=1, d_model=16,
                 n_heads=2, d_k=8, d_v=8, n_blocks=1, ffn_dim=32,
                 positional_encoding="sinusoidal", dropout_rate=0.0, epochs=60, batch_size=32,
                 learning_rate=1e-3, optimizer="adam", early_stop_patience=None,
                 validation_fraction=0.0, standardize=True, threshold=0.5, random_state=0):
        self.variant = variant
        self.conv_layers = conv_layers
        self.conv_padding = conv_padding
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_k
        self.d_v = d_v
        self.n_blocks = n_blocks
        self.ffn_dim = ffn_dim
        self.positional_encoding = positional_encoding
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.early_stop_patience = early_stop_patience
        self.validation_fraction = validation_fraction
        self.standardize = standardize
        self.threshold = threshold
        self.random_state = random_state

    def _model_config(self, seq_len, n_features) -> ModelConfig:
        return ModelConfig(
            seq_len=seq_len, n_features=n_features, conv_layers=self.conv_layers,
            conv_padding=self.conv_padding, d_model=self.d_model, n_heads=self.n_heads,
            d_k=self.d_k, d_v=self.d_v, n_blocks=self.n_blocks, ffn_dim=self.ffn_dim,
            variant=self.variant, positional_encoding=self.positional_encoding,
            dropout_rate=self.dropout_rate, seed=self.random_state)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            optimizer=self.optimizer, seed=self.random_state,
            early_stop_patience=self.early_stop_patience)

    def fit(self, X, y):
        X = _as_sequences(X)
        X, y = X, check_X_y(X.reshape(len(X), -1), y)[1]
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification needs 2 classes, got {self.classes_}")
        y01 = (y == self.classes_[1]).astype(np.int64)
        self.n_features_in_ = X.shape[2]
        self.seq_len_ = X.shape[1]

        if self.standardize:
            self.standardizer_ = SequenceStandardizer().fit(X)
            X = self.standardizer_.transform(X)
        else:
            self.standardizer_ = None

        names = tuple(f"f{j}" for j in range(X.shape[2]))
        if self.validation_fraction > 0:
            X_tr, X_va, y_tr, y_va = train_test_split(
                X, y01, test_size=self.validation_fraction, stratify=y01,
                random_state=self.random_state)
            val = Dataset(X_va, y_va, names)
        else:
            X_tr, y_tr, val = X, y01, None
        mcfg = self._model_config(X.shape[1], X.shape[2])
        state = fit(self._train_config(), mcfg, Dataset(X_tr, y_tr, names), val,
                    progress=lambda _line: None)
        self.model_ = state.to_model()
        self.history_ = state.history_dict()
        return self

    def _prepare(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = _as_sequences(X)
        if X.shape[1:] != (self.seq_len_, self.n_features_in_):
            raise ValueError(f"X has shape {X.shape[1:]}, model expects "
                             f"({self.seq_len_}, {self.n_features_in_})")
        return self.standardizer_.transform(X) if self.standardizer_ is not None else X

    def predict_proba(self, X) -> np.ndarray:
        X = self._prepare(X)
        p = self.model_.predict_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p >= self.threshold).astype(int)]

    @property
    def model(self) -> Model:
        check_is_fitted(self, "model_")
        return self.model_
