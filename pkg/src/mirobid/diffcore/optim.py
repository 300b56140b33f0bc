"""Adaptive first/second-moment parameter updates and gradient utilities."""

from __future__ import annotations

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adaptive_update(params, grads, lr, names=None):
    """One Adam step on ``params`` in place; returns ``params``.

    Only parameters present in ``grads`` (and in ``names`` if given) move.
    Zero gradients on a fresh state leave the value unchanged.
    """
    for name, g in grads.items():
        if name not in params or (names is not None and name not in names):
            continue
        st = params.state.setdefault(name, {"m": np.zeros_like(g), "v": np.zeros_like(g), "t": 0})
        st["t"] += 1
        st["m"] = BETA1 * st["m"] + (1 - BETA1) * g
        st["v"] = BETA2 * st["v"] + (1 - BETA2) * g * g
        m_hat = st["m"] / (1 - BETA1 ** st["t"])
        v_hat = st["v"] / (1 - BETA2 ** st["t"])
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return params


def global_norm(grads):
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def add_grads(a, b, weight=1.0):
    out = dict(a)
    for k, g in b.items():
        out[k] = out[k] + weight * g if k in out else weight * g
    return out
