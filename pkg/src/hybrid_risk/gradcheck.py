"""Central-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd
from .autograd import Tensor
from .exceptions import UsageError


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    # Flat indices whose +/- eps perturbation flipped a ReLU, clip or max-pool
    # decision; the finite difference is meaningless there, so they are skipped.
    kinks: list[int] = field(default_factory=list)
    worst_index: int | None = None

    @property
    def has_kinks(self) -> bool:
        return bool(self.kinks)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def _evaluate(f, x: np.ndarray) -> tuple[float, list]:
    autograd._local.patterns = []
    try:
        with autograd.no_grad():
            value = f(Tensor(x))
        return float(np.asarray(value.data).reshape(-1)[0]), autograd._local.patterns
    finally:
        autograd._local.patterns = None


def _same_pattern(p: list, q: list) -> bool:
    return len(p) == len(q) and all(
        a[0] == b[0] and np.array_equal(a[1], b[1]) for a, b in zip(p, q))


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> GradCheckReport:
    """Compare ``backward`` against central differences of scalar ``f`` at ``x``.

    The relative error per coordinate is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise UsageError(f"grad_check needs a scalar function, got shape {out.shape}")
    if out.requires_grad:
        autograd.backward(out)
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad

    _, base_pattern = _evaluate(f, x0)
    worst, worst_idx, kinks, checked = 0.0, None, [], 0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = flat[i]
        f_plus, p_plus = _evaluate(f, x0)
        flat[i] = orig - eps
        lo = flat[i]
        f_minus, p_minus = _evaluate(f, x0)
        flat[i] = orig
        if not (_same_pattern(base_pattern, p_plus) and _same_pattern(base_pattern, p_minus)):
            kinks.append(i)
            continue
        # divide by the step actually taken, not the nominal 2 * eps
        numeric = (f_plus - f_minus) / (hi - lo)
        a = analytic.reshape(-1)[i]
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        checked += 1
        if rel > worst:
            worst, worst_idx = rel, i
    return GradCheckReport(worst, checked, kinks, worst_idx)
