"""Central-difference validation of analytic gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import NonFiniteError, Tensor, backward


class GradCheckError(ArithmeticError):
    """The checked function produced a non-finite value."""

    def __init__(self, index: int, message: str):
        super().__init__(f"coordinate {index}: {message}")
        self.index = index


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-3) -> float:
    """Maximum relative error between backprop and central differences.

    ``f`` maps a tensor to a scalar tensor. The check runs in float64 so
    that rounding does not swamp the ``O(h^2)`` truncation error; any
    float32 parameters closed over by ``f`` are promoted by numpy.

    Returns:
        ``max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|)``.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(base) if xt.grad is None else xt.grad.astype(np.float64)

    flat = base.reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        vals = []
        for step in (h, -h):
            probe = flat.copy()
            probe[i] += step
            try:
                v = float(f(Tensor(probe.reshape(base.shape))).data.reshape(-1)[0])
            except NonFiniteError as exc:
                raise GradCheckError(i, str(exc)) from None
            if not np.isfinite(v):
                raise GradCheckError(i, "function value is not finite")
            vals.append(v)
        numeric[i] = (vals[0] - vals[1]) / (2.0 * h)
    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / np.maximum(1e-8, np.abs(a) + np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0
