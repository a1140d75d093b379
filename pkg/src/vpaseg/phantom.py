"""Synthetic nested-ellipsoid "brain" for desk-scale experiments.

Label semantics follow the five tissue classes used throughout the package:
1 white matter, 2 gray matter, 3 cerebellar cortex, 4 basal ganglia,
5 ventricles/CSF.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment.geometry import rotation_matrix, voxel_grid
from .rng import Rng
from .sampling import sample_cubic, sample_nearest
from .volume import normalize_max_one

# shell/blob order: outer CSF, gray, white, basal ganglia, cerebellum
SHELL_LABELS = (5, 2, 1, 4, 3)
DEFAULT_INTENSITIES = (0.3, 0.6, 0.9, 0.5, 0.7)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (32, 32, 32)
    intensities: tuple = DEFAULT_INTENSITIES
    noise_sigma: float = 0.02
    seed: int = 0
    # stretches the whole head per axis; variants use this to differ in shape
    axis_scale: tuple = (1.0, 1.0, 1.0)
    csf_fraction: float = 0.84
    white_fraction: float = 0.6


@dataclass(frozen=True)
class Perturbation:
    """Mild geometric + photometric change turning the phantom into a 'subject'."""

    max_rotation: float = 0.12
    max_scale_change: float = 0.06
    max_shift: float = 1.5
    gamma_range: tuple = (0.7, 1.4)
    contrast_range: tuple = (0.8, 1.2)
    bias_amplitude: float = 0.2
    noise_sigma: float = 0.02
    skull_intensity: tuple = (0.25, 0.45)

    @classmethod
    def identity(cls) -> "Perturbation":
        return cls(0.0, 0.0, 0.0, (1.0, 1.0), (1.0, 1.0), 0.0, 0.0, (0.0, 0.0))

    @property
    def is_identity(self) -> bool:
        return self == Perturbation.identity()


def _ellipsoid(grid, center, semi_axes):
    r = (grid - center) / semi_axes
    return np.sum(r * r, axis=-1)


def make_phantom(spec: PhantomSpec = PhantomSpec()):
    """Return ``(image float32, label uint8)``, image scaled to max 1."""
    dims = tuple(int(d) for d in spec.dims)
    if any(d < 16 for d in dims):
        raise ValueError(f"phantom needs dims >= 16 per axis, got {dims}")
    d = np.asarray(dims, dtype=np.float64)
    grid = voxel_grid(dims)
    c = (d - 1.0) / 2.0
    s = np.asarray(spec.axis_scale, dtype=np.float64)

    outer = _ellipsoid(grid, c + np.array([0.0, 0.03, 0.04]) * d, np.array([0.42, 0.44, 0.36]) * d * s)
    cereb = _ellipsoid(grid, c + np.array([0.0, -0.24, -0.2]) * d, np.array([0.22, 0.13, 0.11]) * d * s)
    ganglia = _ellipsoid(grid, c + np.array([0.0, 0.06, 0.06]) * d, np.array([0.15, 0.13, 0.11]) * d * s)

    label = np.zeros(dims, dtype=np.uint8)
    label[outer <= 1.0] = 5
    label[outer <= spec.csf_fraction ** 2] = 2
    label[outer <= spec.white_fraction ** 2] = 1
    label[ganglia <= 1.0] = 4
    label[cereb <= 1.0] = 3

    image = np.zeros(dims, dtype=np.float64)
    for lab, value in zip(SHELL_LABELS, spec.intensities):
        image[label == lab] = value
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    fg = label != 0
    image[fg] += rng.normal(0.0, spec.noise_sigma, int(fg.sum()))
    image = np.maximum(image, 0.0)

    present = set(np.unique(label[fg]).tolist())
    if present != set(SHELL_LABELS):
        raise ValueError(f"dims {dims} too small to fit every tissue shell")
    counts = np.bincount(label[fg], minlength=6)[1:]
    if counts.min() < 0.01 * fg.sum():
        raise ValueError(f"dims {dims} too small: a class covers < 1% of the foreground")
    return normalize_max_one(image.astype(np.float32)), label


def _skull(dims, label_outer_scale: np.ndarray):
    d = np.asarray(dims, dtype=np.float64)
    grid = voxel_grid(dims)
    c = (d - 1.0) / 2.0
    e = _ellipsoid(grid, c + np.array([0.0, 0.0, 0.02]) * d, np.array([0.485, 0.49, 0.46]) * d * label_outer_scale)
    return (e <= 1.0) & (e >= 0.91 ** 2)


def make_evaluation_subject(spec: PhantomSpec = PhantomSpec(), perturb_seed: int = 1,
                            perturbation: Perturbation = Perturbation()):
    """Phantom under a fixed mild perturbation, as a stand-in held-out subject.

    The perturbation draws from its own stream keyed by ``perturb_seed`` and
    adds a skull-like ring in the background.
    """
    image, label = make_phantom(spec)
    if perturbation.is_identity:
        return image, label
    dims = image.shape
    rng = Rng(perturb_seed ^ 0x5EED_0F_E7A1)
    p = perturbation

    angles = [rng.uniform(-p.max_rotation, p.max_rotation) for _ in range(3)]
    scales = [1.0 + rng.uniform(-p.max_scale_change, p.max_scale_change) for _ in range(3)]
    shift = np.array([rng.uniform(-p.max_shift, p.max_shift) for _ in range(3)])
    m = rotation_matrix(angles) @ np.diag(scales)
    c = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    src = (voxel_grid(dims) - c) @ m.T + c + shift
    warped = np.maximum(sample_cubic(image, src), 0.0)
    new_label = sample_nearest(label, src, fill=0)

    gamma = rng.uniform(*p.gamma_range)
    contrast = rng.uniform(*p.contrast_range)
    out = contrast * np.power(np.clip(warped, 0.0, None), gamma)
    direction = np.asarray(rng.unit_vector())
    ramp = ((voxel_grid(dims) - c) @ direction) / dims[0]
    out = out * (1.0 + p.bias_amplitude * 2.0 * ramp)

    skull_value = rng.uniform(*p.skull_intensity)
    if skull_value > 0:
        skull = _skull(dims, np.asarray(spec.axis_scale)) & (new_label == 0)
        out = np.where(skull, skull_value, out)
    if p.noise_sigma > 0:
        noise = np.random.Generator(np.random.PCG64(rng.next_u64())).normal(0.0, p.noise_sigma, dims)
        out = out + np.where((out > 0) | (new_label != 0), noise, 0.0)
    out = np.maximum(out, 0.0)
    return normalize_max_one(out.astype(np.float32)), new_label.astype(np.uint8)
