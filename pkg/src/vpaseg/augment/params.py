"""Augmentation configuration and per-sample parameter draws."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..rng import Rng

STAMP_COUNT = 5
MIN_PERSPECTIVE_DIVISOR = 0.05


@dataclass(frozen=True)
class AugmentConfig:
    """Stage switches plus the ranges every sampled quantity is drawn from.

    Intervals are ``(low, high)`` pairs. Rotation and translation magnitudes
    get an independent random sign per axis.
    """

    enable_reduction: bool = True
    enable_cropping: bool = False
    enable_lighting: bool = True
    enable_rigid: bool = True
    enable_camera: bool = True
    enable_textures: bool = True

    subsample_prob: float = 0.5
    noise_prob: float = 0.5
    noise_range: tuple = (0.0, 0.2)
    crop_prob: float = 0.5
    crop_radius_frac: tuple = (0.1, 0.2)
    crop_fill: tuple = (0.0, 2.0)
    light_prob: float = 0.5
    ambient_range: tuple = (0.0, 2.0)
    diffuse_strength: float = 0.2
    lens_k: tuple = (0.0, 0.1)
    perspective_range: tuple = (-0.5, 0.5)
    rotation_rad: tuple = (0.0, 0.2)
    translation_frac: tuple = (0.0, 0.2)
    scale_range: tuple = (0.8, 1.25)
    aspect_range: tuple = (1.0, 1.25)
    texture_prob: float = 0.5
    stamp_scale: tuple = (0.8, 1.25)
    stamp_translation_frac: float = 0.5
    perlin_cells: tuple = (8.0, 8.0)
    perlin_levels: tuple = (4, 4)

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (tuple, list)):
                if len(value) != 2:
                    raise ValueError(f"{f.name}: expected a (low, high) pair")
                lo, hi = value
                if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                    raise ValueError(f"{f.name}: invalid range {value}")
                object.__setattr__(self, f.name, (lo, hi))
            elif f.name.endswith("_prob") and not 0.0 <= value <= 1.0:
                raise ValueError(f"{f.name}: probability {value} outside [0, 1]")
        if self.perlin_levels[0] < 1:
            raise ValueError("perlin_levels must be >= 1")

    @classmethod
    def preset(cls, mode: str = "standard", **overrides) -> "AugmentConfig":
        """``"standard"`` (no cropping) or ``"tumor"`` (cropping enabled)."""
        if mode == "standard":
            base = cls()
        elif mode == "tumor":
            base = cls(enable_cropping=True)
        else:
            raise ValueError(f"unknown augmentation mode {mode!r}")
        return replace(base, **overrides)

    @classmethod
    def all_off(cls) -> "AugmentConfig":
        return cls(
            enable_reduction=False,
            enable_cropping=False,
            enable_lighting=False,
            enable_rigid=False,
            enable_camera=False,
            enable_textures=False,
        )

    @classmethod
    def only(cls, *stages: str) -> "AugmentConfig":
        """Config with just the named stages (``"rigid"``, ``"camera"``...)."""
        flags = {f"enable_{s}": True for s in stages}
        return replace(cls.all_off(), **flags)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class StampParams:
    angles: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0


@dataclass
class AugmentParams:
    """Every random quantity used to augment one sample."""

    subsample_axes: tuple = (False, False, False)
    noise_on: bool = False
    crop_on: bool = False
    crop_center: tuple = (0.0, 0.0, 0.0)
    crop_radius_frac: float = 0.0
    crop_fill: float = 0.0
    ambient_on: bool = False
    ambient: float = 0.0
    diffuse_on: bool = False
    diffuse_dir: tuple = (1.0, 0.0, 0.0)
    specular_on: bool = False
    specular_center: tuple = (0.0, 0.0, 0.0)
    lens_m: float = 0.0
    perspective_p: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = (0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0
    aspect: float = 1.0
    aspect_axis: int = 0
    stamp_on: bool = False
    stamp_params: list = field(default_factory=list)
    perlin_on: bool = False
    perlin_seed: int = 0
    perlin_freq: float = 0.0
    perlin_levels: int = 1

    def to_text(self) -> str:
        """One ``name = json`` line per field, in declaration order."""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "stamp_params":
                value = [[list(s.angles), list(s.translation), s.scale] for s in value]
            elif isinstance(value, tuple):
                value = list(value)
            lines.append(f"{f.name} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AugmentParams":
        kinds = {f.name: f for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            name, _, raw = line.partition("=")
            name = name.strip()
            if name not in kinds:
                raise ValueError(f"unknown parameter {name!r}")
            value = json.loads(raw)
            if name == "stamp_params":
                value = [StampParams(tuple(a), tuple(t), s) for a, t, s in value]
            elif isinstance(value, list):
                value = tuple(value)
            values[name] = value
        return cls(**values)


def volume_center(dims) -> np.ndarray:
    return (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0


def _perspective_ok(p, dims) -> bool:
    c = volume_center(dims)
    for corner in np.ndindex(2, 2, 2):
        q = np.asarray(corner) * (np.asarray(dims) - 1.0) - c
        if float(np.dot(p, q)) + 1.0 <= MIN_PERSPECTIVE_DIVISOR:
            return False
    return True


def sample_params(rng: Rng, config: AugmentConfig, dims) -> AugmentParams:
    """Draw one parameter set.

    Order is fixed: reduction, crop, lighting, lens, perspective, rotation,
    translation, scale, aspect, textures. Disabled stages draw nothing.
    """
    dims = tuple(int(d) for d in dims)
    if any(d < 8 for d in dims):
        raise ValueError(f"augmentation needs dims >= 8 per axis, got {dims}")
    width = float(dims[0])
    p = AugmentParams()

    if config.enable_reduction:
        p.subsample_axes = tuple(rng.coin(config.subsample_prob) for _ in range(3))
        p.noise_on = rng.coin(config.noise_prob)

    if config.enable_cropping:
        p.crop_on = rng.coin(config.crop_prob)
        p.crop_center = tuple(rng.uniform(0.0, d - 1.0) for d in dims)
        p.crop_radius_frac = rng.uniform(*config.crop_radius_frac)
        p.crop_fill = rng.uniform(*config.crop_fill)

    if config.enable_lighting:
        p.ambient_on = rng.coin(config.light_prob)
        p.ambient = rng.uniform(*config.ambient_range)
        p.diffuse_on = rng.coin(config.light_prob)
        p.diffuse_dir = rng.unit_vector()
        p.specular_on = rng.coin(config.light_prob)
        p.specular_center = tuple(rng.uniform(0.0, d - 1.0) for d in dims)

    if config.enable_camera:
        p.lens_m = 0.5 * max(dims) * rng.uniform(*config.lens_k)
        while True:
            persp = tuple(rng.uniform(*config.perspective_range) / d for d in dims)
            if _perspective_ok(persp, dims):
                break
        p.perspective_p = persp

    if config.enable_rigid:
        p.rotation = tuple(rng.signed(*config.rotation_rad) for _ in range(3))
        p.translation = tuple(rng.signed(*config.translation_frac) * d for d in dims)

    if config.enable_camera:
        p.scale = rng.uniform(*config.scale_range)
        p.aspect = rng.uniform(*config.aspect_range)
        p.aspect_axis = rng.integer(3)

    if config.enable_textures:
        p.stamp_on = rng.coin(config.texture_prob)
        stamps = []
        half = config.stamp_translation_frac * width
        for _ in range(STAMP_COUNT):
            angles = tuple(rng.uniform(0.0, 2.0 * math.pi) for _ in range(3))
            shift = tuple(rng.uniform(-half, half) for _ in range(3))
            stamps.append(StampParams(angles, shift, rng.uniform(*config.stamp_scale)))
        p.stamp_params = stamps
        p.perlin_on = rng.coin(config.texture_prob)
        p.perlin_seed = rng.next_u64()
        p.perlin_freq = rng.uniform(*config.perlin_cells) / width
        lo, hi = config.perlin_levels
        p.perlin_levels = int(lo) + rng.integer(int(hi) - int(lo) + 1)

    return p
