"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np


def finite_diff_check(loss_fn, arrays, grads, step=1e-5, max_coords=None, rng=None, floor=1e-6):
    """Largest relative error between ``grads`` and central differences.

    ``loss_fn()`` evaluates the loss from the current contents of ``arrays``
    (a mapping of name -> ndarray that is perturbed in place).  The relative
    error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    round-off on near-zero gradients from dominating.  When
    ``max_coords`` is set, that many coordinates per array are sampled.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        g = np.asarray(grads[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            num = (up - down) / (2 * step)
            denom = max(abs(num), abs(g[i]), floor)
            worst = max(worst, abs(num - g[i]) / denom)
    return worst
