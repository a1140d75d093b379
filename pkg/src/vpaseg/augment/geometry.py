"""Rigid motion and camera transform, applied as a backward coordinate map."""

from __future__ import annotations

import numpy as np

from ..sampling import sample_cubic, sample_nearest
from .params import AugmentParams, volume_center


def rotation_matrix(angles) -> np.ndarray:
    """Rz @ Ry @ Rx for Euler angles ``(ax, ay, az)`` in radians."""
    ax, ay, az = angles
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def linear_part(params: AugmentParams) -> np.ndarray:
    """Rotation composed with global scale and the single-axis aspect factor."""
    diag = np.full(3, params.scale, dtype=np.float64)
    diag[params.aspect_axis] *= params.aspect
    return rotation_matrix(params.rotation) @ np.diag(diag)


def lens_displacement(u: np.ndarray, m: float, center: np.ndarray, width: float) -> np.ndarray:
    """Pincushion field m * r * |r|^2 with r = (c - u) / width."""
    r = (center - u) / width
    return m * r * np.sum(r * r, axis=-1, keepdims=True)


def perspective(u: np.ndarray, p, center: np.ndarray) -> np.ndarray:
    q = u - center
    divisor = q @ np.asarray(p, dtype=np.float64) + 1.0
    return center + q / divisor[..., None]


def spatial_map(u, params: AugmentParams, dims) -> np.ndarray:
    """Map destination voxel coordinates ``u`` (..., 3) to source coordinates.

    Lens distortion first, then perspective, then the linear part and
    translation, all about the volume center.
    """
    u = np.asarray(u, dtype=np.float64)
    c = volume_center(dims)
    width = float(max(dims))
    x = u
    if params.lens_m != 0.0:
        x = x + lens_displacement(x, params.lens_m, c, width)
    if any(params.perspective_p):
        x = perspective(x, params.perspective_p, c)
    m = linear_part(params)
    return (x - c) @ m.T + c + np.asarray(params.translation, dtype=np.float64)


def voxel_grid(dims) -> np.ndarray:
    axes = [np.arange(d, dtype=np.float64) for d in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def warp(image: np.ndarray, label: np.ndarray, params: AugmentParams):
    """Resample image (Catmull-Rom) and label (nearest) through ``spatial_map``.

    Catmull-Rom overshoot below zero is clipped.
    """
    src = spatial_map(voxel_grid(image.shape), params, image.shape)
    out = np.maximum(sample_cubic(image, src), 0.0).astype(np.float32)
    return out, sample_nearest(label, src, fill=0)
