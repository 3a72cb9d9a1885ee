"""Analytical-vs-finite-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, NonFiniteError
from .engine import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    param_count: int
    per_param_errors: list = field(default_factory=list)


def grad_check(loss_fn, params, probe_step: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of ``loss_fn`` against central differences.

    ``loss_fn`` takes no arguments and rebuilds the computation from the
    current contents of ``params`` (a name -> Tensor mapping or a list of
    Tensors). Every parameter entry is perturbed by +/- ``probe_step`` and the
    relative error uses the denominator max(|g|, |g_fd|, 1e-8).
    """
    if probe_step <= 0.0:
        raise DomainError("probe_step must be positive")
    if isinstance(params, dict):
        tensors = list(params.values())
    else:
        tensors = list(params)
    if not tensors:
        return GradCheckReport(max_rel_error=0.0, param_count=0)

    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError("loss is non-finite at the probe point")
    loss.backward()
    analytic = [
        np.zeros_like(t.data) if t.grad is None else np.array(t.grad, dtype=np.float64)
        for t in tensors
    ]

    errors: list[float] = []
    for t, grads in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = grads.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + probe_step
            f_plus = float(loss_fn().data)
            flat[i] = original - probe_step
            f_minus = float(loss_fn().data)
            flat[i] = original
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError("loss is non-finite at a perturbed point")
            fd = (f_plus - f_minus) / (2.0 * probe_step)
            denom = max(abs(gflat[i]), abs(fd), 1e-8)
            errors.append(abs(gflat[i] - fd) / denom)

    return GradCheckReport(
        max_rel_error=max(errors),
        param_count=len(errors),
        per_param_errors=errors,
    )
