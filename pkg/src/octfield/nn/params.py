"""Named parameter storage, initialization and the Adam optimizer."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named trainable tensors plus Adam moment estimates."""

    def __init__(self):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data) for n, t in self.params.items())

    def load_arrays(self, arrays, strict: bool = True):
        for name, value in arrays.items():
            if name not in self.params:
                if strict:
                    raise KeyError(f"unknown parameter {name!r}")
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {self.params[name].shape}")
            self.params[name].data = value.copy()

    def dense(self, name, fan_in, fan_out, rng, zero=False):
        """Register a dense layer's weight (out, in) and bias with uniform fan-in init."""
        bound = 0.0 if zero else np.sqrt(6.0 / fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in)) if not zero else np.zeros((fan_out, fan_in))
        self.add(f"{name}.W", W)
        self.add(f"{name}.b", np.zeros(fan_out))

    def conv3d(self, name, c_in, c_out, k, rng):
        fan_in = c_in * k**3
        bound = np.sqrt(6.0 / fan_in)
        self.add(f"{name}.W", rng.uniform(-bound, bound, size=(c_out, c_in, k, k, k)))
        self.add(f"{name}.b", np.zeros(c_out))


def adam_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, names=None, lrs=None):
    """One Adam update for every parameter holding a gradient.

    Step counts are kept per parameter, so tensors that join training late get
    their own bias correction.

    ``lrs`` optionally maps a name prefix to its own learning rate.
    """
    for name, p in store.params.items():
        if p.grad is None or (names is not None and name not in names):
            continue
        g = p.grad
        m = store.m.get(name)
        v = store.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        store.m[name], store.v[name] = m, v
        t = store.t[name] = store.t.get(name, 0) + 1
        c1 = 1 - beta1**t
        c2 = 1 - beta2**t
        rate = lr
        if lrs:
            for prefix, r in lrs.items():
                if name.startswith(prefix):
                    rate = r
        p.data = p.data - rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return store
