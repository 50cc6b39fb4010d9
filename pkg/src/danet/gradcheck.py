"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from danet.tensor import Tensor, backward, no_grad


def numeric_grad(graph: Callable[[], Tensor], param: Tensor, epsilon: float) -> np.ndarray:
    flat = param.data.reshape(-1)
    out = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = graph().item()
            flat[i] = orig - epsilon
            down = graph().item()
            flat[i] = orig
            out[i] = (up - down) / (2.0 * epsilon)
    return out.reshape(param.shape)


def gradient_check(graph: Callable[[], Tensor], params: Sequence[Tensor],
                   epsilon: float = 1e-6) -> float:
    """Max over all parameter entries of |analytic - numeric| / max(1, |numeric|).

    ``graph`` rebuilds the scalar output from the current parameter values
    and must be deterministic (no dropout, fixed batch statistics or a fixed
    batch).  A non-finite intermediate surfaces as ``FloatingPointError``
    naming the op that produced it.
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in (0, 1e-3], got {epsilon}")
    for p in params:
        if not np.isfinite(p.data).all():
            raise ValueError("gradient_check: parameters must be finite")
        p.grad = None
    loss = graph()
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        numeric = numeric_grad(graph, p, epsilon)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
