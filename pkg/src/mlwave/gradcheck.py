"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def grad_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
               eps: float = 1e-6, samples: int | None = None, seed: int = 0,
               atol: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps the parameter list to a scalar Tensor. All parameters must be
    float64. With ``samples`` set, that many coordinates are drawn at random
    across all parameters; otherwise every coordinate is checked.
    Relative error is ``|a - n| / max(|a|, |n|, atol)``.
    """
    params = [p if p.requires_grad else p.detach(requires_grad=True) for p in params]
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check requires float64 parameters")

    with Tape() as tape:
        loss = f(params)
    grads = tape.backward(loss)
    analytic = [grads.get(p, np.zeros(p.shape)) for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if samples is not None and samples < len(coords):
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[k] for k in sorted(picks)]

    worst = 0.0
    for i, j in coords:
        base = params[i].data.reshape(-1)

        def shifted(delta):
            arr = base.copy()
            arr[j] += delta
            trial = list(params)
            trial[i] = Tensor(arr.reshape(params[i].shape), dtype=np.float64)
            return f(trial).item()

        numeric = (shifted(eps) - shifted(-eps)) / (2 * eps)
        a = float(analytic[i].reshape(-1)[j])
        err = abs(a - numeric) / max(abs(a), abs(numeric), atol)
        worst = max(worst, err)
    return worst
