"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .core import backward, no_grad


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn, params, rng, n_coords=50, step=1e-5, skip=None):
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``params`` is a list of leaf tensors (``requires_grad=True``). Coordinates
    are sampled so that every tensor is probed at least once, then uniformly
    over all entries until ``n_coords`` are reached. ``skip(param_index,
    flat_index)`` may veto coordinates sitting on a kink.

    Returns the maximum relative error and the per-coordinate records.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    sizes = np.array([p.size for p in params])
    coords = [(i, int(rng.integers(p.size))) for i, p in enumerate(params)]
    while len(coords) < n_coords:
        i = int(rng.choice(len(params), p=sizes / sizes.sum()))
        coords.append((i, int(rng.integers(params[i].size))))

    records = []
    with no_grad():
        for i, j in coords:
            if skip is not None and skip(i, j):
                continue
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + step
            up = float(loss_fn().data)
            flat[j] = orig - step
            down = float(loss_fn().data)
            flat[j] = orig
            numeric = (up - down) / (2 * step)
            analytic = float(grads[i].reshape(-1)[j])
            records.append((i, j, analytic, numeric, relative_error(analytic, numeric)))
    worst = max((r[-1] for r in records), default=0.0)
    return worst, records
