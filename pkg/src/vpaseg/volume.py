"""Volume containers, intensity normalization, resampling and error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sampling import resample_separable

METHODS = ("cubic_spline", "linear", "nearest")
DEFAULT_NUM_CLASSES = 5


class DegenerateVolumeError(ValueError):
    pass


def _check_dims_spacing(shape, spacing):
    if len(shape) != 3 or any(d < 1 for d in shape):
        raise ValueError(f"volume dims must be three values >= 1, got {shape}")
    if len(spacing) != 3 or any(not (s > 0) for s in spacing):
        raise ValueError(f"voxel spacing must be three values > 0, got {spacing}")


@dataclass(frozen=True)
class Volume:
    """Scalar float32 field indexed ``[x, y, z]`` with spacing in mm/voxel."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        spacing = tuple(float(s) for s in self.spacing)
        _check_dims_spacing(data.shape, spacing)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class LabelVolume:
    """Integer class ids, 0 = background, 1..K = tissue classes."""

    labels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.size and (raw.min() < 0 or raw.max() > self.num_classes):
            raise ValueError(
                f"label values must lie in 0..{self.num_classes}, got range "
                f"{raw.min()}..{raw.max()}"
            )
        labels = raw.astype(np.uint8)
        spacing = tuple(float(s) for s in self.spacing)
        _check_dims_spacing(labels.shape, spacing)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        return tuple(self.labels.shape)


@dataclass(frozen=True)
class ErrorSplit:
    """MSE partitioned by label == 0 (background) vs label != 0 (foreground).

    A component is ``None`` when its voxel set is empty.
    """

    foreground_mse: Optional[float]
    background_mse: Optional[float]
    total_mse: float
    foreground_count: int = field(default=0, compare=False)
    background_count: int = field(default=0, compare=False)

    def recombined(self) -> float:
        n = self.foreground_count + self.background_count
        fg = (self.foreground_mse or 0.0) * self.foreground_count
        bg = (self.background_mse or 0.0) * self.background_count
        return (fg + bg) / n


def normalize_max_one(v):
    """Scale intensities so the maximum equals one.

    Accepts a :class:`Volume` or a bare array and returns the same kind.
    """
    data = v.data if isinstance(v, Volume) else np.asarray(v)
    if data.size == 0 or not np.all(np.isfinite(data)):
        raise DegenerateVolumeError("degenerate volume")
    peak = float(data.max())
    if peak <= 0.0:
        raise DegenerateVolumeError("degenerate volume")
    if peak == 1.0:
        out = np.array(data, dtype=np.float32)
    else:
        out = (data.astype(np.float64) / peak).astype(np.float32)
    if isinstance(v, Volume):
        return Volume(out, v.spacing)
    return out


def grid_positions(src_dims, src_spacing, dst_dims, dst_spacing):
    """Source voxel coordinate of every destination voxel, per axis.

    Both grids share the physical position of voxel 0.
    """
    return [
        np.arange(dst_dims[a], dtype=np.float64) * (dst_spacing[a] / src_spacing[a])
        for a in range(3)
    ]


def resample(v, target_dims, target_spacing=None, method: str = "cubic_spline"):
    """Resample a volume onto a new grid.

    Out-of-bounds source taps read 0. Works on :class:`Volume`,
    :class:`LabelVolume` (use ``method="nearest"``) or a bare array with unit
    spacing.
    """
    if method not in METHODS:
        raise ValueError(f"unknown interpolation method {method!r}")
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != 3 or any(d < 1 for d in target_dims):
        raise ValueError(f"target dims must be >= 1, got {target_dims}")
    if isinstance(v, LabelVolume):
        arr, spacing = v.labels, v.spacing
    elif isinstance(v, Volume):
        arr, spacing = v.data, v.spacing
    else:
        arr, spacing = np.asarray(v), (1.0, 1.0, 1.0)
    if target_spacing is None:
        target_spacing = tuple(spacing[a] * arr.shape[a] / target_dims[a] for a in range(3))
    target_spacing = tuple(float(s) for s in target_spacing)

    if target_dims == arr.shape and target_spacing == tuple(spacing):
        out = np.array(arr)
    else:
        pos = grid_positions(arr.shape, spacing, target_dims, target_spacing)
        out = resample_separable(arr, pos, method)

    if isinstance(v, LabelVolume):
        return LabelVolume(np.rint(out).astype(np.uint8), target_spacing, v.num_classes)
    if isinstance(v, Volume):
        return Volume(out.astype(np.float32), target_spacing)
    return out.astype(arr.dtype if method == "nearest" else np.float32)


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """Channels-last one-hot target; label 0 maps to the all-zero vector."""
    labels = np.asarray(labels)
    if labels.size and int(labels.max()) > num_classes:
        raise ValueError(f"label value {int(labels.max())} exceeds class count {num_classes}")
    out = np.zeros(labels.shape + (num_classes,), dtype=dtype)
    for k in range(1, num_classes + 1):
        out[..., k - 1] = labels == k
    return out


def mse_split(output: np.ndarray, target_labels: np.ndarray, mask_labels: np.ndarray | None = None) -> ErrorSplit:
    """Squared error against the one-hot target, split by foreground/background.

    ``output`` is channels-last ``(X, Y, Z, K)``. The per-voxel error is the
    channel mean; the foreground/background partition comes from
    ``mask_labels`` (defaults to ``target_labels``).
    """
    output = np.asarray(output)
    k = output.shape[-1]
    target_labels = np.asarray(target_labels)
    if output.shape[:-1] != target_labels.shape:
        raise ValueError(f"dims mismatch: output {output.shape[:-1]} vs label {target_labels.shape}")
    mask_labels = target_labels if mask_labels is None else np.asarray(mask_labels)
    if mask_labels.shape != target_labels.shape:
        raise ValueError("mask label dims mismatch")
    diff = output.astype(np.float64) - one_hot(target_labels, k, np.float64)
    per_voxel = np.mean(diff * diff, axis=-1)
    fg = mask_labels != 0
    n_fg = int(fg.sum())
    n_bg = int(fg.size - n_fg)
    fg_mse = float(per_voxel[fg].mean()) if n_fg else None
    bg_mse = float(per_voxel[~fg].mean()) if n_bg else None
    return ErrorSplit(fg_mse, bg_mse, float(per_voxel.mean()), n_fg, n_bg)


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap of two boolean masks; 1.0 when both are empty."""
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / denom


def dice_per_class(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> dict:
    return {k: dice(pred == k, truth == k) for k in range(1, num_classes + 1)}
