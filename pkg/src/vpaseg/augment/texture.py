"""Background textures: stamping and quantized Perlin noise.

Both only touch voxels whose label is 0 and mix through :func:`blend`.
"""

from __future__ import annotations

import numpy as np

from ..rng import Rng
from ..sampling import sample_linear
from .geometry import rotation_matrix, voxel_grid
from .params import AugmentParams, volume_center


def blend(s, b):
    """``s + b * f(s)`` where f(s) = 1 - s, floored at 0.1."""
    s = np.asarray(s, dtype=np.float64)
    f = np.where(1.0 - s < 0.1, 0.1, 1.0 - s)
    out = s + np.asarray(b, dtype=np.float64) * f
    return out if out.ndim else float(out)


def permutation_table(seed: int) -> np.ndarray:
    """Seeded shuffle of 0..255, repeated to length 512."""
    perm = np.asarray(Rng(seed).permutation(256), dtype=np.int64)
    return np.concatenate([perm, perm])


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _grad(h, x, y, z):
    h = h & 15
    u = np.where(h < 8, x, y)
    v = np.where(h < 4, y, np.where((h == 12) | (h == 14), x, z))
    return np.where(h & 1 == 0, u, -u) + np.where(h & 2 == 0, v, -v)


def perlin3(x, y, z, perm: np.ndarray):
    """Improved Perlin noise (2002 gradient set), vectorized over arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    fx, fy, fz = np.floor(x), np.floor(y), np.floor(z)
    xi = fx.astype(np.int64) & 255
    yi = fy.astype(np.int64) & 255
    zi = fz.astype(np.int64) & 255
    x, y, z = x - fx, y - fy, z - fz
    u, v, w = _fade(x), _fade(y), _fade(z)
    p = perm
    a = p[xi] + yi
    aa = p[a] + zi
    ab = p[a + 1] + zi
    b = p[xi + 1] + yi
    ba = p[b] + zi
    bb = p[b + 1] + zi

    def lerp(t, lo, hi):
        return lo + t * (hi - lo)

    out = lerp(
        w,
        lerp(
            v,
            lerp(u, _grad(p[aa], x, y, z), _grad(p[ba], x - 1, y, z)),
            lerp(u, _grad(p[ab], x, y - 1, z), _grad(p[bb], x - 1, y - 1, z)),
        ),
        lerp(
            v,
            lerp(u, _grad(p[aa + 1], x, y, z - 1), _grad(p[ba + 1], x - 1, y, z - 1)),
            lerp(u, _grad(p[ab + 1], x, y - 1, z - 1), _grad(p[bb + 1], x - 1, y - 1, z - 1)),
        ),
    )
    return out if out.ndim else float(out)


def perlin_texture(dims, seed: int, freq: float, levels: int) -> np.ndarray:
    """Noise banded into ``levels`` steps in [0, 1]."""
    g = voxel_grid(dims) * freq
    n = perlin3(g[..., 0], g[..., 1], g[..., 2], permutation_table(seed))
    return np.floor(levels * (n + 1.0) / 2.0) / levels


def _blend_background(image: np.ndarray, label: np.ndarray, texture: np.ndarray) -> np.ndarray:
    bg = label == 0
    mixed = blend(image, texture).astype(np.float32)
    return np.where(bg, mixed, image)


def perlin_background(image: np.ndarray, label: np.ndarray, params: AugmentParams) -> np.ndarray:
    if not params.perlin_on:
        return image
    tex = perlin_texture(image.shape, params.perlin_seed, params.perlin_freq, params.perlin_levels)
    return _blend_background(image, label, tex)


def stamp_background(image: np.ndarray, label: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Blend rotated, scaled, shifted copies of the background onto itself."""
    if not params.stamp_on:
        return image
    bg = label == 0
    if not bg.any():
        return image
    source = np.where(bg, image, np.float32(0.0)).astype(np.float64)
    c = volume_center(image.shape)
    grid = voxel_grid(image.shape) - c
    out = image
    for stamp in params.stamp_params:
        m = rotation_matrix(stamp.angles) * stamp.scale
        src = grid @ m.T + c + np.asarray(stamp.translation, dtype=np.float64)
        out = _blend_background(out, label, sample_linear(source, src))
    return out
