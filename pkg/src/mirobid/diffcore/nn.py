"""Parameter container and the handful of layers the models need."""

from __future__ import annotations

import hashlib

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamSet:
    """Named parameter arrays plus per-parameter optimizer state.

    Names are unique and shapes are fixed once a parameter is created.
    """

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.state: dict[str, dict] = {}

    def add(self, name, value):
        if name in self.values:
            raise KeyError(f"duplicate parameter name {name!r}")
        self.values[name] = np.array(value, dtype=np.float64)
        return name

    def __getitem__(self, name):
        return self.values[name]

    def __setitem__(self, name, value):
        value = np.asarray(value, dtype=np.float64)
        if name not in self.values:
            raise KeyError(f"unknown parameter {name!r}")
        if value.shape != self.values[name].shape:
            raise ValueError(f"shape of {name!r} is {self.values[name].shape}, got {value.shape}")
        self.values[name] = value

    def __contains__(self, name):
        return name in self.values

    def __len__(self):
        return len(self.values)

    def names(self):
        return list(self.values)

    def leaves(self, names=None):
        """Fresh leaf tensors that record gradients."""
        names = self.values if names is None else names
        return {k: Tensor(self.values[k], requires_grad=True) for k in names}

    def constants(self):
        return {k: Tensor(v) for k, v in self.values.items()}

    def copy(self):
        out = ParamSet()
        out.values = {k: v.copy() for k, v in self.values.items()}
        out.state = {k: {kk: (vv.copy() if isinstance(vv, np.ndarray) else vv) for kk, vv in s.items()}
                     for k, s in self.state.items()}
        return out

    def subset(self, prefix):
        out = ParamSet()
        out.values = {k: v.copy() for k, v in self.values.items() if k.startswith(prefix)}
        return out

    def load_from(self, other, prefix_map=None):
        """Copy matching values from ``other`` (optionally renaming prefixes)."""
        for k, v in other.values.items():
            name = k
            for src, dst in (prefix_map or {}).items():
                if k.startswith(src):
                    name = dst + k[len(src):]
            if name in self.values:
                self[name] = v.copy()

    def digest(self):
        h = hashlib.sha256()
        for k in sorted(self.values):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.values[k], dtype="<f8").tobytes())
        return h.hexdigest()


def glorot(rng, n_in, n_out):
    lim = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class Dense:
    def __init__(self, params, name, n_in, n_out, rng, scale=1.0):
        self.W = params.add(f"{name}.W", glorot(rng, n_in, n_out) * scale)
        self.b = params.add(f"{name}.b", np.zeros(n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, P, x):
        return x @ P[self.W] + P[self.b]


class MLP:
    """tanh hidden layers, linear output."""

    def __init__(self, params, name, sizes, rng, out_scale=1.0):
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(Dense(params, f"{name}.{i}", a, b, rng, scale=out_scale if last else 1.0))

    def __call__(self, P, x):
        for i, layer in enumerate(self.layers):
            x = layer(P, x)
            if i < len(self.layers) - 1:
                x = T.tanh(x)
        return x


class GRUCell:
    def __init__(self, params, name, n_in, n_hidden, rng):
        self.n_hidden = n_hidden
        self.Wx = params.add(f"{name}.Wx", glorot(rng, n_in, 3 * n_hidden))
        self.Wh = params.add(f"{name}.Wh", np.concatenate(
            [_orthogonal(rng, n_hidden) for _ in range(3)], axis=1))
        self.bx = params.add(f"{name}.bx", np.zeros(3 * n_hidden))
        self.bh = params.add(f"{name}.bh", np.zeros(3 * n_hidden))

    def __call__(self, P, x, h):
        H = self.n_hidden
        gx = x @ P[self.Wx] + P[self.bx]
        gh = h @ P[self.Wh] + P[self.bh]
        z = T.sigmoid(gx[:, :H] + gh[:, :H])
        r = T.sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
        n = T.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
        return n + z * (h - n)

    def initial(self, batch):
        return Tensor(np.zeros((batch, self.n_hidden)))

    def run(self, P, xs, reverse=False):
        """Run over ``xs`` of shape (batch, steps, n_in).

        Returns the list of hidden states after each step, in input order.
        """
        steps = xs.shape[1]
        h = self.initial(xs.shape[0])
        out = [None] * steps
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for t in order:
            h = self(P, xs[:, t, :], h)
            out[t] = h
        return out


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))
