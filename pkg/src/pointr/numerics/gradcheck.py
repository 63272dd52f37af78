"""Central finite-difference probes against analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)`` over a vector of probes."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def probe_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float,
    n_probes: int,
    rng: np.random.Generator,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """For each tensor, return (analytic, numeric) derivatives at ``n_probes`` random coordinates.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of ``params``.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    results = []
    for p in params:
        grad = np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
        flat_idx = rng.choice(p.size, size=min(n_probes, p.size), replace=False)
        analytic, numeric = [], []
        for fi in flat_idx:
            idx = np.unravel_index(fi, p.shape)
            orig = p.data[idx].copy()
            p.data[idx] = orig + h
            hi = float(p.data[idx])
            up = float(loss_fn().data)
            p.data[idx] = orig - h
            lo = float(p.data[idx])
            down = float(loss_fn().data)
            p.data[idx] = orig
            analytic.append(grad[idx])
            # divide by the step actually stored, which differs from 2h in f32
            numeric.append((up - down) / (hi - lo))
        results.append((np.array(analytic), np.array(numeric)))
    return results
