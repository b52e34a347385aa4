"""Forward/backward kernel pairs for the two layer types with real arithmetic cost."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray):
    """y = x @ W.T + b for a batch of row vectors x: (N, in), W: (out, in)."""
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"dense: input {x.shape} does not match weight {W.shape}")
    return x @ W.T + b, (W, x)


def dense_backward(cache, gy: np.ndarray):
    W, x = cache
    x2 = x.reshape(-1, x.shape[-1])
    g2 = gy.reshape(-1, gy.shape[-1])
    return g2.T @ x2, g2.sum(axis=0), gy @ W


def conv_out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv3d_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, stride: int = 2, pad: int = 1):
    """Cross-correlation. x: (N, C, D, H, W); W: (Cout, C, k, k, k)."""
    n, c = x.shape[:2]
    cout, cin, k = W.shape[:3]
    if cin != c or x.ndim != 5:
        raise DimensionError(f"conv3d: input {x.shape} does not match kernel {W.shape}")
    outs = [conv_out_extent(s, k, stride, pad) for s in x.shape[2:]]
    if min(outs) < 1:
        raise DimensionError(f"conv3d: input extent {x.shape[2:]} too small for kernel {k}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))[:, :, ::stride, ::stride, ::stride]
    win = win[:, :, : outs[0], : outs[1], : outs[2]]
    # (N, Do, Ho, Wo, C, k, k, k) -> rows of receptive fields
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7)).reshape(-1, c * k**3)
    y = cols @ W.reshape(cout, -1).T + b
    y = y.reshape(n, *outs, cout).transpose(0, 4, 1, 2, 3)
    return np.ascontiguousarray(y), (W, cols, x.shape, stride, pad, outs)


def conv3d_backward(cache, gy: np.ndarray, input_grad: bool = True):
    """Returns (gW, gb, gx); gx is None when ``input_grad`` is false."""
    W, cols, xshape, stride, pad, outs = cache
    cout, c, k = W.shape[:3]
    n = xshape[0]
    g = gy.transpose(0, 2, 3, 4, 1).reshape(-1, cout)
    gW = (g.T @ cols).reshape(W.shape)
    gb = g.sum(axis=0)
    if not input_grad:
        return gW, gb, None
    gcols = (g @ W.reshape(cout, -1)).reshape(n, *outs, c, k, k, k)
    padded = [s + 2 * pad for s in xshape[2:]]
    gxp = np.zeros((n, c, *padded))
    do, ho, wo = outs
    for i in range(k):
        for j in range(k):
            for l in range(k):
                gxp[
                    :, :,
                    i : i + stride * do : stride,
                    j : j + stride * ho : stride,
                    l : l + stride * wo : stride,
                ] += gcols[..., i, j, l].transpose(0, 4, 1, 2, 3)
    gx = gxp[:, :, pad : pad + xshape[2], pad : pad + xshape[3], pad : pad + xshape[4]]
    return gW, gb, np.ascontiguousarray(gx)
