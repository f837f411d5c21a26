"""Finite-difference gradient checking.

The checker perturbs raw buffers and reruns the forward function, so it is
independent of the backward rules it audits. Relative error is measured
element-wise as |analytic - fd| / (|fd| + 1e-8).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, graph


def finite_difference_grad(fn: Callable[[], Tensor], param: Tensor,
                           eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar-valued forward pass."""
    fd = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = fd.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn().item()
        graph().clear()
        flat[i] = orig - eps
        lo = fn().item()
        graph().clear()
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return fd


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor],
                    eps: float = 1e-5, rtol: float = 1e-4) -> float:
    """Compare analytic gradients of ``fn()`` against central differences.

    Returns the worst relative error over all parameters; raises
    AssertionError when it exceeds ``rtol``.
    """
    for p in params:
        p.zero_grad()
    loss = fn()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        fd = finite_difference_grad(fn, p, eps=eps)
        rel = np.abs(analytic - fd) / (np.abs(fd) + 1e-8)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    if worst > rtol:
        raise AssertionError(f"gradient check failed: max relative error "
                             f"{worst:.3e} > {rtol:.1e}")
    return worst
