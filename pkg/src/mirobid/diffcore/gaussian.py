"""Diagonal Gaussians: parameter clamping, closed-form KL, sampling, NLL."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor

LOG_STD_MIN = float(np.log(1e-4))
LOG_STD_MAX = float(np.log(1e2))
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianParams:
    mean: Tensor
    log_std: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.log_std = T.clip(as_tensor(self.log_std), LOG_STD_MIN, LOG_STD_MAX)
        if self.mean.shape != self.log_std.shape:
            raise ValueError(f"mean {self.mean.shape} vs log_std {self.log_std.shape}")

    @property
    def std(self):
        return T.exp(self.log_std)

    @property
    def dim(self):
        return self.mean.shape[-1]

    def detach(self):
        return GaussianParams(T.stop_gradient(self.mean), T.stop_gradient(self.log_std))


def gaussian_head(layer_out, dim):
    """Split a (…, 2*dim) layer output into GaussianParams."""
    return GaussianParams(layer_out[..., :dim], layer_out[..., dim:])


def kl_diag_gaussians(p, q):
    """KL(p || q) summed over the last axis."""
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ValueError(f"dimension mismatch: {p.mean.shape[-1]} vs {q.mean.shape[-1]}")
    var_p = T.exp(p.log_std * 2.0)
    var_q = T.exp(q.log_std * 2.0)
    diff = p.mean - q.mean
    terms = (q.log_std - p.log_std) + (var_p + diff * diff) / (var_q * 2.0) - 0.5
    return terms.sum(axis=-1)


def reparam_sample(g, noise):
    return g.mean + g.std * as_tensor(noise)


def gaussian_nll(x, g):
    """Negative log density of ``x`` under ``g``, summed over the last axis."""
    z = (as_tensor(x) - g.mean) / g.std
    return (z * z * 0.5 + g.log_std + 0.5 * LOG_2PI).sum(axis=-1)


def unit_gaussian_nll(x, mean):
    diff = as_tensor(x) - mean
    return (diff * diff * 0.5 + 0.5 * LOG_2PI).sum(axis=-1)


def kl_monte_carlo(p, q, n, rng):
    """Monte-Carlo estimate of KL(p||q) with its standard error (numpy in, numpy out)."""
    mp, sp = np.asarray(p[0], float), np.exp(np.asarray(p[1], float))
    mq, sq = np.asarray(q[0], float), np.exp(np.asarray(q[1], float))
    x = mp + sp * rng.standard_normal((n, mp.size))
    logp = -0.5 * (((x - mp) / sp) ** 2).sum(1) - np.log(sp).sum()
    logq = -0.5 * (((x - mq) / sq) ** 2).sum(1) - np.log(sq).sum()
    d = logp - logq
    return float(d.mean()), float(d.std(ddof=1) / np.sqrt(n))
