"""Image reduction, spherical cropping and lighting."""

from __future__ import annotations

import numpy as np

from ..rng import Rng
from ..sampling import axis_matrix
from .params import AugmentParams, volume_center


def half_then_upsample(arr: np.ndarray, axis: int) -> np.ndarray:
    """Keep every other slice along ``axis`` then linearly upsample back.

    Upsampled positions beyond the last kept slice reuse that slice.
    """
    n = arr.shape[axis]
    kept = np.take(arr, np.arange(0, n, 2), axis=axis).astype(np.float64)
    m = kept.shape[axis]
    positions = np.minimum(np.arange(n) / 2.0, m - 1.0)
    mat = axis_matrix(n, m, positions, "linear")
    return np.moveaxis(np.tensordot(mat, kept, axes=([1], [axis])), 0, axis)


def reduce(image: np.ndarray, params: AugmentParams, rng: Rng | None = None) -> np.ndarray:
    """Per-axis subsampling followed by optional uniform noise in [0, 0.2)."""
    out = np.asarray(image, dtype=np.float64)
    for axis, flagged in enumerate(params.subsample_axes):
        if flagged:
            out = half_then_upsample(out, axis)
    if params.noise_on:
        if rng is None:
            raise ValueError("noise requires an rng")
        out = out + rng.uniform_field(out.shape, 0.0, 0.2)
    return out.astype(np.float32)


def sphere_mask(dims, center, radius: float) -> np.ndarray:
    grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")
    d2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return d2 < radius * radius


def crop_sphere(image: np.ndarray, label: np.ndarray, params: AugmentParams):
    """Fill a sphere with a constant in the image and with 0 in the label."""
    radius = params.crop_radius_frac * image.shape[0]
    inside = sphere_mask(image.shape, params.crop_center, radius)
    out_image = np.where(inside, np.float32(params.crop_fill), image).astype(np.float32)
    out_label = np.where(inside, 0, label).astype(label.dtype)
    return out_image, out_label


def apply_lighting(image: np.ndarray, params: AugmentParams, diffuse_strength: float = 0.2) -> np.ndarray:
    """Ambient offset, diffuse gradient and specular distance factor, clipped at 0."""
    out = np.asarray(image, dtype=np.float64)
    dims = out.shape
    width = float(dims[0])
    if params.ambient_on:
        out = out + params.ambient
    if params.diffuse_on or params.specular_on:
        grids = np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")
    if params.diffuse_on:
        c = volume_center(dims)
        dot = sum(d * (g - ci) for d, g, ci in zip(params.diffuse_dir, grids, c)) / width
        out = out * (1.0 + diffuse_strength * dot)
    if params.specular_on:
        dist = np.sqrt(sum((g - s) ** 2 for g, s in zip(grids, params.specular_center)))
        out = out * (dist / width)
    return np.maximum(out, 0.0).astype(np.float32)
