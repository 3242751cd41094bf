"""Binary cross-entropy training with SGD or Adam."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import Dataset
from .exceptions import ConfigurationError, NonFiniteLossError, UsageError
from .model import Model, ModelConfig, forward, init_params

logger = logging.getLogger(__name__)

BCE_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle_each_epoch: bool = True
    early_stop_patience: int | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ConfigurationError("early_stop_patience must be >= 1 when set")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12]."""
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise UsageError(f"probabilities {probs.shape} and labels {labels.shape} differ in shape")
    p = ag.clip(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = ag.log(p) * labels + ag.log(1.0 - p) * (1.0 - labels)
    return -ag.mean(ll)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, params: dict) -> None:
        for p in params.values():
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad

    def state_dict(self) -> dict:
        return {}


class Adam:
    """Bias-corrected Adam."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            if p.grad is None:
                continue
            m = self.m.get(name, 0.0) * self.beta1 + (1.0 - self.beta1) * p.grad
            v = self.v.get(name, 0.0) * self.beta2 + (1.0 - self.beta2) * p.grad ** 2
            self.m[name], self.v[name] = m, v
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)


@dataclass
class TrainState:
    params: dict
    optimizer: object
    model_config: ModelConfig
    rng: np.random.Generator
    dropout_rng: np.random.Generator
    epoch: int = 0
    steps: int = 0
    loss_history: list = field(default_factory=list)
    best_epoch: int | None = None
    best_loss: float = float("inf")
    best_params: dict | None = None
    stopped_early: bool = False

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def to_model(self, standardization=None) -> Model:
        return Model(self.model_config, self.params, standardization)

    def history_dict(self) -> dict:
        return {
            "epochs": [
                {"epoch": e, "train_loss": tr, "val_loss": va} for e, tr, va in self.loss_history
            ],
            "best_epoch": self.best_epoch,
            "best_loss": self.best_loss if self.best_epoch is not None else None,
            "stopped_early": self.stopped_early,
            "steps": self.steps,
        }


def init_state(model_config: ModelConfig, train_config: TrainConfig,
               params: dict | None = None) -> TrainState:
    params = init_params(model_config) if params is None else params
    return TrainState(
        params=params,
        optimizer=make_optimizer(train_config),
        model_config=model_config,
        rng=np.random.default_rng(train_config.seed),
        dropout_rng=np.random.default_rng([train_config.seed, 1]),
    )


def _first_nonfinite(params: dict, attr: str) -> str | None:
    for name, p in params.items():
        arr = getattr(p, attr)
        if arr is not None and not np.all(np.isfinite(arr)):
            return name
    return None


def step(state: TrainState, X: np.ndarray, y: np.ndarray, config: TrainConfig) -> float:
    """One forward/backward/update on a batch; returns the batch loss."""
    probs = forward(X, state.params, state.model_config, training=True, rng=state.dropout_rng)
    loss = bce_loss(probs, y)
    value = float(loss.data)
    if not np.isfinite(value):
        bad = _first_nonfinite(state.params, "data")
        raise NonFiniteLossError(
            f"non-finite loss {value} at step {state.steps}; "
            + (f"parameter {bad} holds non-finite values" if bad else "all parameters finite"),
            parameter=bad)
    loss.backward()
    bad = _first_nonfinite(state.params, "grad")
    if bad is not None:
        raise NonFiniteLossError(f"non-finite gradient for parameter {bad} at step {state.steps}",
                                 parameter=bad)
    state.optimizer.update(state.params)
    for p in state.params.values():
        p.grad = None
    state.steps += 1
    return value


def dataset_loss(params: dict, model_config: ModelConfig, ds: Dataset,
                 batch_size: int = 512) -> float:
    total = 0.0
    with ag.no_grad():
        for start in range(0, len(ds), batch_size):
            xb, yb = ds.X[start:start + batch_size], ds.y[start:start + batch_size]
            total += float(bce_loss(forward(xb, params, model_config), yb).data) * len(yb)
    return total / len(ds)


def _snapshot(params: dict) -> dict:
    return {k: Tensor(v.data.copy(), requires_grad=True) for k, v in params.items()}


def fit(train_config: TrainConfig, model_config: ModelConfig, train_ds: Dataset,
        val_ds: Dataset | None = None, params: dict | None = None,
        progress: Callable[[str], None] | None = None) -> TrainState:
    """Train and restore the parameters of the epoch with the lowest monitored loss.

    The monitored loss is the validation loss when ``val_ds`` is given,
    otherwise the full-pass training loss.
    """
    if len(train_ds) == 0:
        raise UsageError("training split is empty")
    if (train_ds.seq_len, train_ds.n_features) != (model_config.seq_len, model_config.n_features):
        raise ConfigurationError(
            f"data is T={train_ds.seq_len}, F={train_ds.n_features} but model expects "
            f"T={model_config.seq_len}, F={model_config.n_features}")
    state = init_state(model_config, train_config, params)
    n = len(train_ds)
    order = np.arange(n)
    since_best = 0
    emit = progress or logger.info

    for epoch in range(1, train_config.epochs + 1):
        if train_config.shuffle_each_epoch:
            order = state.rng.permutation(n)
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            step(state, train_ds.X[idx], train_ds.y[idx], train_config)
        train_loss = dataset_loss(state.params, model_config, train_ds)
        val_loss = dataset_loss(state.params, model_config, val_ds) if val_ds is not None else None
        state.epoch = epoch
        state.loss_history.append((epoch, train_loss, val_loss))
        monitored = val_loss if val_loss is not None else train_loss
        if monitored < state.best_loss:
            state.best_loss, state.best_epoch = monitored, epoch
            state.best_params = _snapshot(state.params)
            since_best = 0
        else:
            since_best += 1
        line = f"epoch {epoch:4d}  train_loss {train_loss:.6f}"
        if val_loss is not None:
            line += f"  val_loss {val_loss:.6f}"
        emit(line)
        patience = train_config.early_stop_patience
        if patience is not None and since_best >= patience:
            state.stopped_early = True
            emit(f"early stop at epoch {epoch} (best epoch {state.best_epoch})")
            break

    if state.best_params is not None:
        state.params = state.best_params
    return state
