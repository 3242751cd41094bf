"""Randomized gradient checks for every differentiable op and the composed model."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .gradcheck import grad_check
from .model import ModelConfig, forward, init_params
from .training import bce_loss

OP_TOL = 1e-6
MODEL_TOL = 1e-4
REFERENCE_EPS = 1e-5

TINY_MODEL = ModelConfig(seq_len=4, n_features=3, conv_layers=((4, 2, 1),), d_model=4,
                         n_heads=2, d_k=2, d_v=2, n_blocks=1, ffn_dim=8)


def scaled_tolerance(base: float, eps: float) -> float:
    """Central differences err by O(eps^2); loosen the bound when eps grows."""
    return base * max(1.0, (eps / REFERENCE_EPS) ** 2)


def _flip_grad(t: Tensor) -> Tensor:
    # Deliberately wrong backward, used to prove the checker catches sign errors.
    return ag._make(t.data, "flip", (t,), lambda g: (-g,))


def _dims(rng, lo=1, hi=4):
    return int(rng.integers(lo, hi + 1))


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ag.sum(out * w)


def _case(rng, op: str, flip: bool):
    """Return ``(f, x)`` with ``f`` scalar-valued and random weights baked in."""
    wrap = _flip_grad if flip else (lambda t: t)
    m, n = _dims(rng), _dims(rng)

    def unary(fn, x):
        # Readout weights bounded away from 0 keep every true gradient O(1),
        # so the relative error measures the backward pass, not roundoff.
        shape = np.shape(fn(Tensor(x)).data)
        w = rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.5, 1.5, size=shape)
        return (lambda t: _weighted(wrap(fn(t)), w)), x

    if op == "matmul":
        k = _dims(rng)
        b = Tensor(rng.normal(size=(k, n)))
        return unary(lambda t: ag.matmul(t, b), rng.normal(size=(m, k)))
    if op == "matmul_rhs":
        k = _dims(rng)
        a = Tensor(rng.normal(size=(m, k)))
        return unary(lambda t: ag.matmul(a, t), rng.normal(size=(k, n)))
    if op in ("conv1d", "conv1d_kernels", "conv1d_bias"):
        c_in, c_out, t_len = _dims(rng, 1, 3), _dims(rng, 1, 3), _dims(rng, 2, 4)
        k, stride, pad = _dims(rng, 1, t_len), _dims(rng, 1, 2), int(rng.integers(0, 2))
        x = rng.normal(size=(c_in, t_len))
        kern = rng.normal(size=(c_out, c_in, k))
        bias = rng.normal(size=c_out)
        if op == "conv1d":
            return unary(lambda t: ag.conv1d(t, Tensor(kern), Tensor(bias), stride, pad), x)
        if op == "conv1d_kernels":
            return unary(lambda t: ag.conv1d(Tensor(x), t, Tensor(bias), stride, pad), kern)
        return unary(lambda t: ag.conv1d(Tensor(x), Tensor(kern), t, stride, pad), bias)
    if op == "relu":
        return unary(ag.relu, rng.normal(size=(m, n)))
    if op == "maxpool1d":
        t_len = _dims(rng, 2, 4)
        window, stride = _dims(rng, 1, t_len), _dims(rng, 1, 2)
        return unary(lambda t: ag.maxpool1d(t, window, stride), rng.normal(size=(m, t_len)))
    if op == "softmax_rows":
        # a single column is constant 1 with zero gradient
        return unary(ag.softmax_rows, rng.normal(size=(m, _dims(rng, 2, 4))))
    if op == "sigmoid":
        return unary(ag.sigmoid, rng.normal(size=(m, n)) * 2)
    if op in ("layer_norm", "layer_norm_gain", "layer_norm_shift"):
        # width 2 normalizes to exactly +/-1, a flat function
        d = _dims(rng, 3, 4)
        x, gain, shift = rng.normal(size=(m, d)), rng.normal(size=d), rng.normal(size=d)
        if op == "layer_norm":
            return unary(lambda t: ag.layer_norm(t, Tensor(gain), Tensor(shift), 1e-5), x)
        if op == "layer_norm_gain":
            return unary(lambda t: ag.layer_norm(Tensor(x), t, Tensor(shift), 1e-5), gain)
        return unary(lambda t: ag.layer_norm(Tensor(x), Tensor(gain), t, 1e-5), shift)
    if op == "concat_last":
        other = Tensor(rng.normal(size=(m, _dims(rng))))
        return unary(lambda t: ag.concat_last([t, other, t]), rng.normal(size=(m, n)))
    if op == "split_last":
        sizes = [1, n]
        return unary(lambda t: ag.split_last(t, sizes)[1], rng.normal(size=(m, n + 1)))
    if op == "add":
        b = Tensor(rng.normal(size=(n,)))
        return unary(lambda t: ag.add(t, b), rng.normal(size=(m, n)))
    if op == "mul":
        b = Tensor(rng.normal(size=(m, n)))
        return unary(lambda t: ag.mul(t, b) * t, rng.normal(size=(m, n)))
    if op == "transpose":
        return unary(ag.transpose, rng.normal(size=(m, n)))
    if op == "mean":
        return unary(lambda t: ag.mean(t, axis=0), rng.normal(size=(m, n)))
    if op == "exp":
        return unary(ag.exp, rng.normal(size=(m, n)))
    if op == "log":
        return unary(ag.log, rng.uniform(0.5, 2.0, size=(m, n)))
    if op == "clip":
        return unary(lambda t: ag.clip(t, -0.5, 0.5), rng.normal(size=(m, n)))
    if op == "reshape":
        return unary(lambda t: ag.reshape(t, (m * n,)), rng.normal(size=(m, n)))
    raise KeyError(op)


OPS = ("matmul", "matmul_rhs", "conv1d", "conv1d_kernels", "conv1d_bias", "relu", "maxpool1d",
       "softmax_rows", "sigmoid", "layer_norm", "layer_norm_gain", "layer_norm_shift",
       "concat_last", "split_last", "add", "mul", "transpose", "mean", "exp", "log", "clip",
       "reshape")


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    tolerance: float
    kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def check_ops(n_seeds: int = 100, eps: float = REFERENCE_EPS, ops=OPS,
              flip: frozenset = frozenset()) -> list[SuiteResult]:
    tol = scaled_tolerance(OP_TOL, eps)
    results = []
    for op in ops:
        worst, kinks = 0.0, 0
        for seed in range(n_seeds):
            rng = np.random.default_rng([seed, OPS.index(op) if op in OPS else 0])
            f, x = _case(rng, op, op in flip)
            report = grad_check(f, x, eps)
            worst = max(worst, report.max_rel_error)
            kinks += len(report.kinks)
        results.append(SuiteResult(op, worst, tol, kinks))
    return results


def model_loss_fn(config: ModelConfig, params: dict, X: np.ndarray, y: np.ndarray,
                  name: str) -> Callable[[Tensor], Tensor]:
    """Loss as a function of one parameter (or of the input when ``name == 'input'``)."""
    def f(t: Tensor) -> Tensor:
        if name == "input":
            return bce_loss(forward(t, params, config), y)
        swapped = dict(params)
        swapped[name] = t
        return bce_loss(forward(X, swapped, config), y)
    return f


def check_model(config: ModelConfig = TINY_MODEL, seed: int = 0, eps: float = REFERENCE_EPS,
                batch: int = 2) -> SuiteResult:
    """Gradient check of forward + BCE w.r.t. every parameter and the input."""
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    # Non-trivial biases / norms so no gradient path is accidentally zero.
    for name, p in params.items():
        if not name.endswith((".kernels", ".W", ".W_Q", ".W_K", ".W_V", ".W_o", ".W1", ".W2",
                              ".W_y")):
            p.data = p.data + 0.1 * rng.normal(size=p.shape)
    X = rng.normal(size=(batch, config.seq_len, config.n_features))
    y = np.arange(batch) % 2
    worst, kinks = 0.0, 0
    for name in ["input", *params]:
        x0 = X if name == "input" else params[name].data
        report = grad_check(model_loss_fn(config, params, X, y, name), x0, eps)
        worst = max(worst, report.max_rel_error)
        kinks += len(report.kinks)
    label = f"model[{config.variant}]"
    return SuiteResult(label, worst, scaled_tolerance(MODEL_TOL, eps), kinks)


def run_suite(n_seeds: int = 100, eps: float = REFERENCE_EPS,
              flip: frozenset = frozenset()) -> list[SuiteResult]:
    results = check_ops(n_seeds, eps, flip=flip)
    for variant in ("full", "without_cnn", "without_transformer"):
        results.append(check_model(replace(TINY_MODEL, variant=variant), eps=eps))
    return results
