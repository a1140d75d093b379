"""Point sampling of 3D arrays with zero padding outside the grid.

Arrays are indexed ``[x, y, z]``; coordinate arrays have a trailing axis of
length 3 holding continuous voxel indices. Taps that fall outside the grid
read 0.
"""

from __future__ import annotations

import numpy as np

_PAD = 2


def catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Weights for taps at offsets -1, 0, 1, 2 given the fractional part ``t``."""
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        axis=-1,
    )


def linear_weights(t: np.ndarray) -> np.ndarray:
    return np.stack([1.0 - t, t], axis=-1)


def _split(coords: np.ndarray, n: int):
    c = np.where(np.isfinite(coords), coords, -1e9)
    c = np.clip(c, -1e6, 1e6)
    base = np.floor(c)
    return base.astype(np.int64), c - base


def _tap_index(base: np.ndarray, offset: int, n: int) -> np.ndarray:
    # indices into the zero-padded array; anything outside lands in the pad
    return np.clip(base + offset + _PAD, 0, n + 2 * _PAD - 1)


def _sample(arr: np.ndarray, coords: np.ndarray, offsets, weight_fn) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    out_shape = coords.shape[:-1]
    pts = coords.reshape(-1, 3)
    padded = np.pad(np.asarray(arr, dtype=np.float64), _PAD)
    flat = padded.ravel()
    shape = padded.shape
    axis_idx = []
    axis_w = []
    for a in range(3):
        base, t = _split(pts[:, a], arr.shape[a])
        w = weight_fn(t)
        idx = np.stack([_tap_index(base, o, arr.shape[a]) for o in offsets], axis=-1)
        axis_idx.append(idx)
        axis_w.append(w)
    stride_x = shape[1] * shape[2]
    stride_y = shape[2]
    result = np.zeros(pts.shape[0], dtype=np.float64)
    ntap = len(offsets)
    for i in range(ntap):
        wi = axis_w[0][:, i]
        oi = axis_idx[0][:, i] * stride_x
        for j in range(ntap):
            wij = wi * axis_w[1][:, j]
            oij = oi + axis_idx[1][:, j] * stride_y
            for k in range(ntap):
                result += wij * axis_w[2][:, k] * flat[oij + axis_idx[2][:, k]]
    return result.reshape(out_shape)


def sample_cubic(arr: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Catmull-Rom (cardinal spline, tension 0.5) interpolation."""
    return _sample(arr, coords, (-1, 0, 1, 2), catmull_rom_weights)


def sample_linear(arr: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear interpolation."""
    return _sample(arr, coords, (0, 1), linear_weights)


def sample_nearest(arr: np.ndarray, coords: np.ndarray, fill=0) -> np.ndarray:
    """Nearest-neighbor lookup, rounding half up; outside the grid gives ``fill``."""
    coords = np.asarray(coords, dtype=np.float64)
    out_shape = coords.shape[:-1]
    pts = coords.reshape(-1, 3)
    finite = np.all(np.isfinite(pts), axis=1)
    idx = np.floor(np.where(finite[:, None], pts, -1.0) + 0.5)
    inside = finite.copy()
    for a in range(3):
        inside &= (idx[:, a] >= 0) & (idx[:, a] <= arr.shape[a] - 1)
    idx = np.where(inside[:, None], idx, 0).astype(np.int64)
    vals = arr[idx[:, 0], idx[:, 1], idx[:, 2]]
    out = np.where(inside, vals, np.asarray(fill, dtype=arr.dtype))
    return out.astype(arr.dtype).reshape(out_shape)


def axis_matrix(n_out: int, n_in: int, positions: np.ndarray, method: str) -> np.ndarray:
    """Dense (n_out, n_in) 1D interpolation matrix for sample ``positions``.

    Taps outside ``[0, n_in)`` are dropped, which is the same as reading 0.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    if method == "nearest":
        idx = np.floor(positions + 0.5).astype(np.int64)
        ok = (idx >= 0) & (idx < n_in)
        m[rows[ok], idx[ok]] = 1.0
        return m
    if method == "linear":
        offsets, weight_fn = (0, 1), linear_weights
    elif method == "cubic_spline":
        offsets, weight_fn = (-1, 0, 1, 2), catmull_rom_weights
    else:
        raise ValueError(f"unknown interpolation method {method!r}")
    base = np.floor(positions).astype(np.int64)
    w = weight_fn(positions - base)
    for k, o in enumerate(offsets):
        idx = base + o
        ok = (idx >= 0) & (idx < n_in)
        np.add.at(m, (rows[ok], idx[ok]), w[ok, k])
    return m


def resample_separable(arr: np.ndarray, positions, method: str) -> np.ndarray:
    """Resample on an axis-aligned grid given per-axis source positions."""
    out = np.asarray(arr, dtype=np.float64)
    for a in range(3):
        m = axis_matrix(len(positions[a]), arr.shape[a], np.asarray(positions[a], dtype=np.float64), method)
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [a])), 0, a)
    return out
