"""Brain mask, skull stripping, discrete labels and probability maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)


class NoBrainFoundError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationResult:
    brain_mask: np.ndarray
    skull_stripped: np.ndarray
    label: np.ndarray
    prob_maps: np.ndarray


def largest_component(binary: np.ndarray) -> np.ndarray:
    """Largest 6-connected component.

    Ties go to the component containing the lowest x-fastest flat index.
    """
    comps, n = ndimage.label(binary, structure=FACE_CONNECTIVITY)
    if n == 0:
        return np.zeros_like(binary, dtype=bool)
    sizes = np.bincount(comps.ravel())[1:]
    best = np.flatnonzero(sizes == sizes.max()) + 1
    if len(best) > 1:
        flat = comps.ravel(order="F")
        first = {c: int(np.argmax(flat == c)) for c in best}
        winner = min(best, key=first.__getitem__)
    else:
        winner = best[0]
    return comps == winner


def build_mask(output: np.ndarray) -> np.ndarray:
    """Clamp channels to [0, 1], sum, threshold at 0.5, keep the largest component."""
    output = np.asarray(output)
    if output.ndim != 4 or output.shape[-1] < 1:
        raise ValueError(f"expected a channels-last (X, Y, Z, K) output, got {output.shape}")
    total = np.clip(output, 0.0, 1.0).sum(axis=-1)
    binary = total >= 0.5
    if not binary.any():
        raise NoBrainFoundError("no brain found")
    return largest_component(binary)


def finalize(image: np.ndarray, output: np.ndarray) -> SegmentationResult:
    """Apply the brain mask to the input and the clamped channels; label by argmax.

    Labels are channel index + 1 (lowest index wins ties) inside the mask, 0
    outside.
    """
    image = np.asarray(image)
    output = np.asarray(output)
    if image.shape != output.shape[:-1]:
        raise ValueError(f"image dims {image.shape} != output dims {output.shape[:-1]}")
    mask = build_mask(output)
    clamped = np.clip(output, 0.0, 1.0)
    # argmax before the float32 cast, so near-ties resolve at the output's own precision
    label = np.where(mask, clamped.argmax(axis=-1) + 1, 0).astype(np.uint8)
    probs = np.where(mask[..., None], clamped, 0.0).astype(np.float32)
    stripped = np.where(mask, image, 0).astype(np.float32)
    return SegmentationResult(mask, stripped, label, probs)
