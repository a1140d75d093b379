"""PNG montages of augmented pairs and log-scale error curves."""

from __future__ import annotations

import math

import numpy as np
from PIL import Image

# label 0 is black; classes 1..5 get fixed distinct colours, higher labels cycle
PALETTE = np.array(
    [
        (0, 0, 0),
        (230, 230, 230),
        (200, 60, 60),
        (60, 160, 220),
        (240, 200, 40),
        (80, 190, 90),
        (170, 90, 200),
        (240, 140, 40),
    ],
    dtype=np.uint8,
)


def gray_slice(volume: np.ndarray) -> np.ndarray:
    """Central axial slice mapped [0, 1] -> [0, 255], displayed with y up."""
    v = np.asarray(volume)
    sl = v[:, :, v.shape[2] // 2]
    return np.round(np.clip(sl, 0.0, 1.0) * 255.0).astype(np.uint8).T[::-1]


def label_slice(label: np.ndarray) -> np.ndarray:
    lab = np.asarray(label)
    sl = lab[:, :, lab.shape[2] // 2].astype(np.int64)
    idx = np.where(sl == 0, 0, (sl - 1) % (len(PALETTE) - 1) + 1)
    return PALETTE[idx].transpose(1, 0, 2)[::-1]


def montage(pairs, path, columns: int = 8, gap: int = 2, min_side: int = 96) -> None:
    """Contact sheet: each tile is the image slice on the left, its label on the right.

    Small volumes are enlarged by an integer nearest-neighbour zoom so each
    half-tile is at least ``min_side`` pixels high.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("montage needs at least one pair")
    tiles = []
    for image, label in pairs:
        g = gray_slice(image)
        rgb = np.repeat(g[..., None], 3, axis=-1)
        tile = np.concatenate([rgb, label_slice(label)], axis=1)
        zoom = max(1, -(-min_side // tile.shape[0]))
        tiles.append(tile.repeat(zoom, axis=0).repeat(zoom, axis=1))
    th, tw = tiles[0].shape[:2]
    cols = min(columns, len(tiles))
    rows = math.ceil(len(tiles) / cols)
    sheet = np.zeros((rows * (th + gap) + gap, cols * (tw + gap) + gap, 3), dtype=np.uint8)
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        y = gap + r * (th + gap)
        x = gap + c * (tw + gap)
        sheet[y:y + tile.shape[0], x:x + tile.shape[1]] = tile
    Image.fromarray(sheet).save(path, format="PNG")


def error_curves(results: dict, path) -> None:
    """One panel per arm with template/evaluation fg/bg MSE on a log axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(results)
    if not names:
        raise ValueError("no arms to plot")
    cols = min(4, len(names))
    rows = math.ceil(len(names) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), squeeze=False, sharey=True)
    series = (
        ("template fg", lambda e: e.template_error.foreground_mse, "tab:red", "-"),
        ("template bg", lambda e: e.template_error.background_mse, "tab:red", ":"),
        ("eval fg", lambda e: e.evaluation_error.foreground_mse if e.evaluation_error else None, "tab:blue", "-"),
        ("eval bg", lambda e: e.evaluation_error.background_mse if e.evaluation_error else None, "tab:blue", ":"),
        ("training", lambda e: e.training_error, "0.5", "-"),
    )
    for ax, name in zip(axes.ravel(), names):
        logs = results[name]
        epochs = [e.epoch for e in logs]
        for label, get, colour, style in series:
            ys = [get(e) for e in logs]
            if any(y is None for y in ys):
                continue
            ax.plot(epochs, np.maximum(ys, 1e-8), style, color=colour, lw=1, label=label)
        ax.set_yscale("log")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("epoch", fontsize=8)
        ax.tick_params(labelsize=7)
    for ax in axes.ravel()[len(names):]:
        ax.axis("off")
    axes[0, 0].set_ylabel("MSE", fontsize=8)
    axes[0, 0].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
