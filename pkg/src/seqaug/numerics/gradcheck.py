"""Central finite-difference gradient checking.

The oracle evaluates the loss function twice per probed coordinate and
never touches the reverse-mode machinery, so it stays an independent
reference for backward().
"""

import numpy as np

from .tensor import backward


def finite_difference_check(loss_fn, tensors, n_coords=64, step=1e-5, rng=None):
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph on every call (it is re-evaluated with
    perturbed parameters). Returns the max relative error over the sampled
    coordinates of ``tensors``; relative error uses |fd| + 1e-8 as a floor.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [None if t.grad is None else t.grad.copy() for t in tensors]

    sizes = np.array([t.data.size for t in tensors])
    total = int(sizes.sum())
    n = min(n_coords, total)
    picks = rng.choice(total, size=n, replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat_idx in picks:
        ti = int(np.searchsorted(bounds, flat_idx, side="right"))
        local = int(flat_idx - (bounds[ti - 1] if ti else 0))
        t = tensors[ti]
        flat = t.data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + step
        f_plus = float(loss_fn().data)
        flat[local] = orig - step
        f_minus = float(loss_fn().data)
        flat[local] = orig
        fd = (f_plus - f_minus) / (2.0 * step)
        an = 0.0 if analytic[ti] is None else float(analytic[ti].reshape(-1)[local])
        rel = abs(an - fd) / (abs(fd) + 1e-8)
        worst = max(worst, rel)
    return worst
