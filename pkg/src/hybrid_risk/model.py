"""CNN encoder -> transformer encoder -> mean pooling -> sigmoid head.

Parameters live in a flat ``dict`` keyed by dotted path (``cnn.layer0.kernels``,
``attn.block0.head1.W_Q``, ``head.W_y`` ...). Feature sequences are row-major
``[T, F]`` per sample (``[B, T, F]`` for a batch); the convolution runs over
time with features as input channels.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ConfigurationError, DimensionError

VARIANTS = ("full", "without_cnn", "without_transformer")
POSITIONAL_ENCODINGS = ("sinusoidal", "none")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``conv_layers`` holds one ``(out_channels, kernel_size, pool_window)``
    triple per convolution stage. Pooling stride equals the window.
    """

    seq_len: int = 12
    n_features: int = 4
    conv_layers: tuple = ((16, 3, 1),)
    conv_padding: int = 1
    d_model: int = 16
    n_heads: int = 2
    d_k: int = 8
    d_v: int = 8
    n_blocks: int = 1
    ffn_dim: int = 32
    variant: str = "full"
    positional_encoding: str = "sinusoidal"
    dropout_rate: float = 0.0
    layer_norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_layers",
                           tuple(tuple(int(v) for v in stage) for stage in self.conv_layers))
        self.validate()

    def validate(self) -> None:
        positive = ("seq_len", "n_features", "d_model", "n_heads", "d_k", "d_v", "n_blocks",
                    "ffn_dim")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.positional_encoding not in POSITIONAL_ENCODINGS:
            raise ConfigurationError(
                f"positional_encoding must be one of {POSITIONAL_ENCODINGS}, "
                f"got {self.positional_encoding!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.layer_norm_eps <= 0:
            raise ConfigurationError("layer_norm_eps must be positive")
        if self.conv_padding < 0:
            raise ConfigurationError("conv_padding must be non-negative")
        if self.variant != "without_cnn":
            if not self.conv_layers:
                raise ConfigurationError("the CNN encoder needs at least one conv stage")
            for stage in self.conv_layers:
                if len(stage) != 3 or min(stage) < 1:
                    raise ConfigurationError(
                        f"conv stage must be (out_channels, kernel_size, pool_window) "
                        f"of positive ints, got {stage}")
            self.encoded_length()

    def encoded_length(self) -> int:
        """Sequence length seen by the transformer (T')."""
        if self.variant == "without_cnn":
            return self.seq_len
        length = self.seq_len
        for i, (_, kernel, pool) in enumerate(self.conv_layers):
            try:
                length = ag.conv1d_output_length(length, kernel, 1, self.conv_padding)
            except ConfigurationError as exc:
                raise ConfigurationError(f"conv stage {i}: {exc}") from None
            if pool > length:
                raise ConfigurationError(
                    f"conv stage {i}: pool window {pool} exceeds length {length}")
            length = (length - pool) // pool + 1
        return length

    @property
    def uses_cnn(self) -> bool:
        return self.variant != "without_cnn"

    @property
    def uses_transformer(self) -> bool:
        return self.variant != "without_transformer"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_layers"] = [list(stage) for stage in self.conv_layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def with_variant(self, variant: str) -> "ModelConfig":
        return replace(self, variant=variant)

    def fingerprint(self) -> str:
        """Short hash of every field except ``seed``."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------- parameters

def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Names and shapes of every trainable tensor, in a fixed order."""
    shapes: dict[str, tuple] = {}
    if config.uses_cnn:
        c_in = config.n_features
        for i, (c_out, kernel, _) in enumerate(config.conv_layers):
            shapes[f"cnn.layer{i}.kernels"] = (c_out, c_in, kernel)
            shapes[f"cnn.layer{i}.bias"] = (c_out,)
            c_in = c_out
        shapes["cnn.proj.W"] = (c_in, config.d_model)
        shapes["cnn.proj.b"] = (config.d_model,)
    else:
        shapes["embed.W"] = (config.n_features, config.d_model)
        shapes["embed.b"] = (config.d_model,)
    if config.uses_transformer:
        d, h = config.d_model, config.n_heads
        for b in range(config.n_blocks):
            pre = f"attn.block{b}"
            for j in range(h):
                shapes[f"{pre}.head{j}.W_Q"] = (d, config.d_k)
                shapes[f"{pre}.head{j}.W_K"] = (d, config.d_k)
                shapes[f"{pre}.head{j}.W_V"] = (d, config.d_v)
            shapes[f"{pre}.W_o"] = (h * config.d_v, d)
            shapes[f"{pre}.ln1.gain"] = (d,)
            shapes[f"{pre}.ln1.shift"] = (d,)
            shapes[f"{pre}.ffn.W1"] = (d, config.ffn_dim)
            shapes[f"{pre}.ffn.b1"] = (config.ffn_dim,)
            shapes[f"{pre}.ffn.W2"] = (config.ffn_dim, d)
            shapes[f"{pre}.ffn.b2"] = (d,)
            shapes[f"{pre}.ln2.gain"] = (d,)
            shapes[f"{pre}.ln2.shift"] = (d,)
    shapes["head.W_y"] = (config.d_model, 1)
    shapes["head.b"] = (1,)
    return shapes


def _is_weight(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("kernels", "W", "W_Q", "W_K", "W_V", "W_o", "W1", "W2", "W_y")


def glorot_bound(shape: tuple) -> float:
    if len(shape) == 3:  # conv kernels [C_out, C_in, K]
        fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: ModelConfig, seed: int | None = None) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases and shifts, unit layer-norm gains."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if _is_weight(name):
            bound = glorot_bound(shape)
            data = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def check_params(params: dict, config: ModelConfig) -> None:
    expected = param_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigurationError(
            f"parameters do not match config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ConfigurationError(
                f"parameter {name} has shape {params[name].shape}, config implies {shape}")


# ---------------------------------------------------------------- stages

def sinusoidal_encoding(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def cnn_encode(x: Tensor, params: dict, config: ModelConfig) -> Tensor:
    """``[..., F, T]`` -> ``[..., T', d_model]`` via conv -> relu -> maxpool stages."""
    if not config.uses_cnn:
        raise ConfigurationError("cnn_encode called on a without_cnn model")
    if x.shape[-2:] != (config.n_features, config.seq_len):
        raise ConfigurationError(
            f"input shape {x.shape} does not end in (F={config.n_features}, T={config.seq_len})")
    h = x
    for i, (_, _, pool) in enumerate(config.conv_layers):
        h = ag.conv1d(h, params[f"cnn.layer{i}.kernels"], params[f"cnn.layer{i}.bias"],
                      stride=1, padding=config.conv_padding)
        h = ag.maxpool1d(ag.relu(h), pool, pool)
    return ag.transpose(h) @ params["cnn.proj.W"] + params["cnn.proj.b"]


def attention(Q: Tensor, K: Tensor, V: Tensor, weights_out: list | None = None) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d_k)) V over the last two axes."""
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query/key widths differ: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"key/value lengths differ: {K.shape} vs {V.shape}")
    d_k = Q.shape[-1]
    scores = (Q @ ag.transpose(K)) * (1.0 / math.sqrt(d_k))
    weights = ag.softmax_rows(scores)
    if weights_out is not None:
        weights_out.append(weights.data)
    return weights @ V


def multi_head_attention(f: Tensor, params: dict, config: ModelConfig, block: int = 0,
                         weights_out: list | None = None) -> Tensor:
    if f.shape[-1] != config.d_model:
        raise ConfigurationError(f"attention input width {f.shape[-1]} != d_model {config.d_model}")
    pre = f"attn.block{block}"
    heads = []
    for j in range(config.n_heads):
        try:
            wq, wk, wv = (params[f"{pre}.head{j}.{w}"] for w in ("W_Q", "W_K", "W_V"))
        except KeyError as exc:
            raise ConfigurationError(f"missing attention parameter {exc}") from None
        heads.append(attention(f @ wq, f @ wk, f @ wv, weights_out))
    w_o = params[f"{pre}.W_o"]
    if w_o.shape != (config.n_heads * config.d_v, config.d_model):
        raise ConfigurationError(f"{pre}.W_o has shape {w_o.shape}, expected "
                                 f"({config.n_heads * config.d_v}, {config.d_model})")
    return ag.concat_last(heads) @ w_o


def transformer_block(f: Tensor, params: dict, config: ModelConfig, block: int = 0,
                      weights_out: list | None = None,
                      rng: np.random.Generator | None = None) -> Tensor:
    pre = f"attn.block{block}"
    eps = config.layer_norm_eps
    attended = ag.dropout(multi_head_attention(f, params, config, block, weights_out),
                          config.dropout_rate, rng)
    y = ag.layer_norm(f + attended, params[f"{pre}.ln1.gain"], params[f"{pre}.ln1.shift"], eps)
    hidden = ag.relu(y @ params[f"{pre}.ffn.W1"] + params[f"{pre}.ffn.b1"])
    ffn = ag.dropout(hidden @ params[f"{pre}.ffn.W2"] + params[f"{pre}.ffn.b2"],
                     config.dropout_rate, rng)
    return ag.layer_norm(y + ffn, params[f"{pre}.ln2.gain"], params[f"{pre}.ln2.shift"], eps)


def pool_sequence(z: Tensor) -> Tensor:
    """Mean over the time axis: ``[..., T, d]`` -> ``[..., d]``."""
    return ag.mean(z, axis=-2)


def classify(z_final: Tensor, params: dict) -> Tensor:
    """Positive-class probability, one per leading index."""
    w_y = params["head.W_y"]
    if z_final.shape[-1] != w_y.shape[0]:
        raise DimensionError(f"head input width {z_final.shape[-1]} != W_y rows {w_y.shape[0]}")
    # Row-wise weighted sum rather than a matrix-vector product: BLAS gemv
    # rounds differently by row position, which would make a sample's
    # probability depend (by one ulp) on where it sits in the batch.
    w = ag.reshape(w_y, (w_y.shape[0],))
    logit = ag.sum(z_final * w, axis=-1) + ag.reshape(params["head.b"], ())
    return ag.sigmoid(logit)


def embed_steps(x: Tensor, params: dict) -> Tensor:
    """Per-step linear map F -> d_model used when the CNN is removed."""
    return x @ params["embed.W"] + params["embed.b"]


def forward(x, params: dict, config: ModelConfig, training: bool = False,
            rng: np.random.Generator | None = None,
            weights_out: list | None = None) -> Tensor:
    """Probabilities for ``[T, F]`` (scalar result) or ``[B, T, F]`` (shape ``[B]``)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim not in (2, 3) or x.shape[-2:] != (config.seq_len, config.n_features):
        raise ConfigurationError(
            f"input shape {x.shape} does not match (T={config.seq_len}, F={config.n_features})")
    check_params(params, config)
    drop_rng = rng if training else None

    if config.uses_cnn:
        f = cnn_encode(ag.transpose(x), params, config)
    else:
        f = embed_steps(x, params)
    if config.uses_transformer:
        if config.positional_encoding == "sinusoidal":
            f = f + sinusoidal_encoding(f.shape[-2], config.d_model)
        for b in range(config.n_blocks):
            f = transformer_block(f, params, config, b, weights_out, drop_rng)
    return classify(pool_sequence(f), params)


@dataclass
class Model:
    """A configured parameter set plus the standardization it was trained under."""

    config: ModelConfig
    params: dict = field(default_factory=dict)
    standardization: object | None = None
    feature_names: tuple = ()

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int | None = None) -> "Model":
        return cls(config, init_params(config, seed))

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        with ag.no_grad():
            return forward(X, self.params, self.config).data

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)

    def parameter_names(self) -> Iterable[str]:
        return param_shapes(self.config).keys()
