"""Differentiable 3D layers on channels-last ``(X, Y, Z, C)`` arrays.

Every forward function returns ``(output, backward)`` where ``backward(dy)``
returns the input gradient and accumulates parameter gradients into the
``grads`` dict it was given.
"""

from __future__ import annotations

import numpy as np

_OFFSETS = [(a, b, c) for a in range(3) for b in range(3) for c in range(3)]


def _accumulate(grads, name, value):
    if grads is None:
        return
    if name in grads and grads[name] is not None:
        grads[name] += value
    else:
        grads[name] = value.copy()


def conv3(x, weight, bias, grads=None, name="conv", need_backward=True):
    """3x3x3 cross-correlation with zero padding 1 (same-size output).

    ``weight`` has shape ``(3, 3, 3, C_in, C_out)``. The padded volume is
    flattened so each kernel tap is a contiguous row slice and one GEMM.
    """
    nx, ny, nz, ci = x.shape
    co = weight.shape[-1]
    p0, p1, p2 = nx + 2, ny + 2, nz + 2
    xp = np.zeros((p0, p1, p2, ci), dtype=x.dtype)
    xp[1:-1, 1:-1, 1:-1] = x
    flat = xp.reshape(-1, ci)
    span = flat.shape[0] - (2 * p1 * p2 + 2 * p2 + 2)
    offs = [a * p1 * p2 + b * p2 + c for a, b, c in _OFFSETS]
    acc = np.zeros((flat.shape[0], co), dtype=x.dtype)
    head = acc[:span]
    for (a, b, c), off in zip(_OFFSETS, offs):
        head += flat[off:off + span] @ weight[a, b, c]
    y = acc.reshape(p0, p1, p2, co)[:nx, :ny, :nz] + bias
    if not need_backward:
        return y, None

    def backward(dy):
        dyp = np.zeros((p0, p1, p2, co), dtype=dy.dtype)
        dyp[:nx, :ny, :nz] = dy
        dyf = dyp.reshape(-1, co)[:span]
        dw = np.empty_like(weight)
        dflat = np.zeros_like(flat)
        for (a, b, c), off in zip(_OFFSETS, offs):
            dw[a, b, c] = flat[off:off + span].T @ dyf
            dflat[off:off + span] += dyf @ weight[a, b, c].T
        _accumulate(grads, name + ".weight", dw)
        _accumulate(grads, name + ".bias", dy.sum(axis=(0, 1, 2)))
        return dflat.reshape(p0, p1, p2, ci)[1:-1, 1:-1, 1:-1]

    return y, backward


def conv1(x, weight, bias, grads=None, name="conv", need_backward=True):
    """Pointwise convolution; ``weight`` is ``(C_in, C_out)``."""
    y = x @ weight + bias
    if not need_backward:
        return y, None

    def backward(dy):
        ci = x.shape[-1]
        co = dy.shape[-1]
        _accumulate(grads, name + ".weight", x.reshape(-1, ci).T @ dy.reshape(-1, co))
        _accumulate(grads, name + ".bias", dy.sum(axis=(0, 1, 2)))
        return dy @ weight.T

    return y, backward


def relu(x, need_backward=True):
    y = np.maximum(x, 0)
    if not need_backward:
        return y, None
    mask = x > 0

    def backward(dy):
        return dy * mask

    return y, backward


def batchnorm_train(x, gamma, beta, eps, grads=None, name="bn", need_backward=True):
    """Normalize each channel over the spatial axes of the single sample.

    Returns ``(y, backward, batch_mean, batch_var)``; variance is biased.
    """
    c = x.shape[-1]
    flat = x.reshape(-1, c)
    n = flat.shape[0]
    mean = flat.mean(axis=0)
    centered = flat - mean
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = (xhat * gamma + beta).reshape(x.shape)
    if not need_backward:
        return y, None, mean, var

    def backward(dy):
        dyf = dy.reshape(-1, c)
        dbeta = dyf.sum(axis=0)
        dgamma = (dyf * xhat).sum(axis=0)
        _accumulate(grads, name + ".gamma", dgamma)
        _accumulate(grads, name + ".beta", dbeta)
        dx = (gamma * inv_std / n) * (n * dyf - dbeta - xhat * dgamma)
        return dx.reshape(x.shape)

    return y, backward, mean, var


def batchnorm_eval(x, gamma, beta, running_mean, running_var, eps):
    scale = gamma / np.sqrt(running_var + eps)
    return x * scale + (beta - running_mean * scale)


def maxpool2(x, need_backward=True):
    nx, ny, nz, c = x.shape
    win = x.reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2, c).transpose(0, 2, 4, 6, 1, 3, 5)
    win = win.reshape(nx // 2, ny // 2, nz // 2, c, 8)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if not need_backward:
        return y, None

    def backward(dy):
        dwin = np.zeros(win.shape, dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dwin = dwin.reshape(nx // 2, ny // 2, nz // 2, c, 2, 2, 2).transpose(0, 4, 1, 5, 2, 6, 3)
        return dwin.reshape(nx, ny, nz, c)

    return y, backward


def upsample2(x, need_backward=True):
    """Nearest-neighbor x2 along each spatial axis."""
    y = x.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)
    if not need_backward:
        return y, None

    def backward(dy):
        nx, ny, nz, c = x.shape
        return dy.reshape(nx, 2, ny, 2, nz, 2, c).sum(axis=(1, 3, 5))

    return y, backward


def concat(a, b, need_backward=True):
    y = np.concatenate([a, b], axis=-1)
    if not need_backward:
        return y, None
    ca = a.shape[-1]

    def backward(dy):
        return dy[..., :ca], dy[..., ca:]

    return y, backward


def mse_loss(output, target):
    """Mean squared error over voxels and channels, with its gradient."""
    diff = output - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    return loss, (2.0 / diff.size) * diff
