"""Finite-difference certification of analytic gradients.

The oracle never looks at how a gradient was computed: it re-evaluates the
function at perturbed points and compares central differences against what
`backward` produced. Run it in float64; float32 rounding drowns the signal
at usable step sizes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import GraphError, Tensor, backward


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor,
                            h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Error per entry is |analytic - fd| / max(1, |analytic|); the max over
    entries is returned. `f` must be deterministic and scalar-valued; `x`
    must be float64.
    """
    if x.data.dtype != np.float64:
        raise GraphError("finite_difference_check requires a float64 input")
    probe = Tensor(x.data.copy(), requires_grad=True, dtype=np.float64)
    out = f(probe)
    if out.data.size != 1:
        raise GraphError(f"function under test returned shape {out.shape}, "
                         "expected a scalar")
    if out.requires_grad:
        backward(out)
    analytic = (probe.grad if probe.grad is not None
                else np.zeros_like(probe.data))

    flat = probe.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(probe.data.copy(), dtype=np.float64)).item()
        flat[i] = orig - h
        lo = f(Tensor(probe.data.copy(), dtype=np.float64)).item()
        flat[i] = orig
        fd[i] = (hi - lo) / (2.0 * h)

    ana = analytic.reshape(-1)
    rel = np.abs(ana - fd) / np.maximum(1.0, np.abs(ana))
    return float(rel.max()) if rel.size else 0.0
