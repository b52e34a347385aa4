"""Central-difference gradient verification."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

REL_FLOOR = 1e-6


def grad_check(fn, inputs: dict, h: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` maps a dict of Tensors (same keys as ``inputs``) to a scalar Tensor. The
    relative error of one entry is |a - n| / max(|a|, |n|, REL_FLOOR). With
    ``max_entries`` only a random subset of entries per input is probed.
    """
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tensors = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in base.items()}
    out = fn(tensors)
    out.backward()
    worst = 0.0
    for key, value in base.items():
        analytic = tensors[key].grad
        if analytic is None:
            analytic = np.zeros_like(value)
        flat = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            flat = rng.choice(value.size, size=max_entries, replace=False)
        for i in flat:
            idx = np.unravel_index(i, value.shape)
            probe = {k: v.copy() for k, v in base.items()}
            probe[key][idx] = value[idx] + h
            fp = fn({k: Tensor(v) for k, v in probe.items()}).item()
            probe[key][idx] = value[idx] - h
            fm = fn({k: Tensor(v) for k, v in probe.items()}).item()
            numeric = (fp - fm) / (2 * h)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
            worst = max(worst, err)
    return worst
