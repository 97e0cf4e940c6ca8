"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def grad_check(build, inputs, eps=1e-6, floor=1e-6):
    """Compare autodiff gradients of ``build`` with central differences.

    ``build`` maps a dict of tensors (same keys as ``inputs``) to a scalar
    tensor and must be deterministic.  Every coordinate of every input is
    perturbed.  The check runs in float64 so that the comparison measures the
    backward pass rather than f32 rounding.

    Returns the worst relative error ``|a - n| / max(|a|, |n|, floor)``.
    """
    base = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in base.items()}
    out = build(tensors)
    out.backward()
    worst = 0.0
    for name, arr in base.items():
        analytic = tensors[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            vals = []
            for sign in (1.0, -1.0):
                pert = {k: v.copy() for k, v in base.items()}
                pert[name].reshape(-1)[i] += sign * eps
                vals.append(float(build({k: Tensor(v) for k, v in pert.items()}).data))
            numeric = (vals[0] - vals[1]) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
