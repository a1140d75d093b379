"""Full augmentation chain and an ordered, optionally threaded sample stream."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..rng import MASK64, Rng, derive_seed
from ..volume import DegenerateVolumeError, normalize_max_one
from .geometry import warp
from .intensity import apply_lighting, crop_sphere, reduce
from .params import AugmentConfig, AugmentParams, sample_params
from .texture import perlin_background, stamp_background

log = logging.getLogger(__name__)

MAX_RETRIES = 8


def _augment_with(image, label, config: AugmentConfig, seed: int):
    rng = Rng(seed)
    params = sample_params(rng, config, image.shape)
    out = reduce(image, params, rng)
    lab = label
    if params.crop_on:
        out, lab = crop_sphere(out, lab, params)
    out = apply_lighting(out, params, config.diffuse_strength)
    out, lab = warp(out, lab, params)
    out = stamp_background(out, lab, params)
    out = perlin_background(out, lab, params)
    return normalize_max_one(out), lab, params


def augment_once(template: np.ndarray, label: np.ndarray, config: AugmentConfig, seed: int,
                 return_params: bool = False):
    """Produce one augmented (image, label) pair, fully determined by ``seed``.

    A pipeline that ends with an all-zero image is retried with seed + 1, up
    to eight times.
    """
    template = np.asarray(template, dtype=np.float32)
    label = np.asarray(label, dtype=np.uint8)
    if template.shape != label.shape:
        raise ValueError(f"template dims {template.shape} != label dims {label.shape}")
    for attempt in range(MAX_RETRIES + 1):
        try:
            image, lab, params = _augment_with(template, label, config, (seed + attempt) & MASK64)
        except DegenerateVolumeError:
            log.debug("degenerate augmentation for seed %d, retrying", seed + attempt)
            continue
        if return_params:
            return image, lab, params
        return image, lab
    raise DegenerateVolumeError(f"augmentation stayed degenerate after {MAX_RETRIES} retries (seed {seed})")


class AugmentStream:
    """Augmented samples indexed by a global counter.

    Sample ``i`` uses seed ``splitmix64(master_seed ^ i)``; results come back
    in index order whatever the worker count.
    """

    def __init__(self, template, label, config: AugmentConfig, master_seed: int, threads: int = 1):
        self.template = np.asarray(template, dtype=np.float32)
        self.label = np.asarray(label, dtype=np.uint8)
        self.config = config
        self.master_seed = int(master_seed)
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def seed_for(self, index: int) -> int:
        return derive_seed(self.master_seed, index)

    def sample(self, index: int):
        return augment_once(self.template, self.label, self.config, self.seed_for(index))

    def batch(self, start: int, count: int) -> list:
        indices = range(start, start + count)
        if self._pool is None:
            return [self.sample(i) for i in indices]
        return list(self._pool.map(self.sample, indices))

    def submit_batch(self, start: int, count: int):
        """Start producing a batch in the background; returns a callable that waits for it."""
        if self._pool is None:
            return lambda: self.batch(start, count)
        futures = [self._pool.submit(self.sample, i) for i in range(start, start + count)]
        return lambda: [f.result() for f in futures]

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
