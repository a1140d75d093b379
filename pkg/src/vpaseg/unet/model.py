"""3D U-Net with hand-written reverse-mode gradients."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from ..rng import Rng
from ..volume import one_hot
from . import layers as L


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    out_channels: int = 5
    levels: int = 5
    base_features: int = 8
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1 or self.base_features < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def features(self) -> list:
        return [self.base_features * 2 ** i for i in range(self.levels)]

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def block_channels(config: UNetConfig) -> list:
    """``(name, c_in, c_mid, c_out)`` for every two-convolution block, in forward order.

    The bottom block and every decoder block except the last end with as many
    channels as the skip connection one level up, so each decoder input is
    exactly twice its skip width.
    """
    f = config.features
    n = config.levels
    blocks = []
    for lvl in range(n):
        c_in = config.in_channels if lvl == 0 else f[lvl - 1]
        c_out = f[lvl - 1] if (lvl == n - 1 and n > 1) else f[lvl]
        blocks.append((f"enc{lvl}", c_in, f[lvl], c_out))
    for lvl in range(n - 2, -1, -1):
        c_out = f[lvl - 1] if lvl > 0 else f[0]
        blocks.append((f"dec{lvl}", 2 * f[lvl], f[lvl], c_out))
    return blocks


class UNetModel:
    """Parameters, batch-norm running statistics and a gradient buffer."""

    def __init__(self, config: UNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.meta: dict[str, np.ndarray] = {}
        self._init(seed)

    # -- construction -------------------------------------------------------

    def _init(self, seed: int):
        rng = Rng(seed)
        for name, c_in, c_mid, c_out in block_channels(self.config):
            for i, (a, b) in enumerate(((c_in, c_mid), (c_mid, c_out))):
                bound = 1.0 / np.sqrt(27 * a)
                w = rng.uniform_field((3, 3, 3, a, b), -bound, bound)
                self.params[f"{name}.conv{i}.weight"] = w.astype(self.dtype)
                self.params[f"{name}.conv{i}.bias"] = np.zeros(b, self.dtype)
                self.params[f"{name}.bn{i}.gamma"] = np.ones(b, self.dtype)
                self.params[f"{name}.bn{i}.beta"] = np.zeros(b, self.dtype)
                self.buffers[f"{name}.bn{i}.running_mean"] = np.zeros(b, self.dtype)
                self.buffers[f"{name}.bn{i}.running_var"] = np.ones(b, self.dtype)
        f0 = self.config.features[0]
        bound = 1.0 / np.sqrt(f0)
        w = rng.uniform_field((f0, self.config.out_channels), -bound, bound)
        self.params["final.weight"] = w.astype(self.dtype)
        self.params["final.bias"] = np.zeros(self.config.out_channels, self.dtype)

    def astype(self, dtype) -> "UNetModel":
        other = UNetModel.__new__(UNetModel)
        other.config = self.config
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in self.params.items()}
        other.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        other.grads = {}
        other.meta = dict(self.meta)
        return other

    def copy(self) -> "UNetModel":
        return self.astype(self.dtype)

    def tensors(self) -> dict:
        """Every persistent tensor: parameters, then running statistics, then metadata."""
        out = dict(self.params)
        out.update(self.buffers)
        out.update(self.meta)
        return out

    def state_checksum(self, extra=()) -> str:
        h = hashlib.sha256()
        for group in (self.params, self.buffers, self.grads, *extra):
            for k in sorted(group):
                h.update(k.encode())
                h.update(np.ascontiguousarray(group[k]).tobytes())
        return h.hexdigest()

    # -- gradient buffer ----------------------------------------------------

    @property
    def has_grads(self) -> bool:
        return bool(self.grads)

    def zero_grad(self):
        self.grads.clear()

    # -- forward / backward -------------------------------------------------

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[..., None]
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise ShapeError(
                f"expected input (X, Y, Z[, {self.config.in_channels}]), got {x.shape}"
            )
        div = self.config.divisor
        for axis, n in zip("xyz", x.shape[:3]):
            if n % div:
                raise ShapeError(f"axis {axis} has size {n}, not divisible by {div}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        return np.ascontiguousarray(x, dtype=self.dtype)

    def _block(self, x, name, train, update_stats, tape):
        cfg = self.config
        p = self.params
        for i in range(2):
            pre = f"{name}.conv{i}"
            x, back = L.conv3(x, p[pre + ".weight"], p[pre + ".bias"], self.grads, pre, tape is not None)
            tape_push(tape, back)
            x, back = L.relu(x, tape is not None)
            tape_push(tape, back)
            bn = f"{name}.bn{i}"
            if train:
                x, back, mean, var = L.batchnorm_train(
                    x, p[bn + ".gamma"], p[bn + ".beta"], cfg.bn_epsilon, self.grads, bn, tape is not None
                )
                tape_push(tape, back)
                if update_stats:
                    n = x.shape[0] * x.shape[1] * x.shape[2]
                    mom = cfg.bn_momentum
                    unbiased = var * (n / max(n - 1, 1))
                    rm = self.buffers[bn + ".running_mean"]
                    rv = self.buffers[bn + ".running_var"]
                    self.buffers[bn + ".running_mean"] = ((1 - mom) * rm + mom * mean).astype(self.dtype)
                    self.buffers[bn + ".running_var"] = ((1 - mom) * rv + mom * unbiased).astype(self.dtype)
            else:
                x = L.batchnorm_eval(
                    x,
                    p[bn + ".gamma"],
                    p[bn + ".beta"],
                    self.buffers[bn + ".running_mean"],
                    self.buffers[bn + ".running_var"],
                    cfg.bn_epsilon,
                )
        return x

    def _run(self, x, train: bool, update_stats: bool, tape):
        n = self.config.levels
        skips = []
        h = x
        for lvl in range(n):
            h = self._block(h, f"enc{lvl}", train, update_stats, tape)
            if lvl < n - 1:
                skips.append(h)
                h, back = L.maxpool2(h, tape is not None)
                tape_push(tape, ("pool", lvl, back))
        for lvl in range(n - 2, -1, -1):
            h, back = L.upsample2(h, tape is not None)
            tape_push(tape, back)
            h, back = L.concat(skips[lvl], h, tape is not None)
            tape_push(tape, ("concat", lvl, back))
            h = self._block(h, f"dec{lvl}", train, update_stats, tape)
        h, back = L.conv1(h, self.params["final.weight"], self.params["final.bias"], self.grads, "final", tape is not None)
        tape_push(tape, back)
        return h

    def forward(self, x, mode: str = "eval", update_stats: bool = True) -> np.ndarray:
        """K-channel channels-last output with the input's spatial dims.

        ``mode="train"`` normalizes with per-sample statistics (and updates
        the running statistics unless ``update_stats`` is false); ``"eval"``
        uses the running statistics and mutates nothing.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return self._run(self._prepare(x), mode == "train", update_stats, None)

    def backward(self, x, label, update_stats: bool = True) -> float:
        """Train-mode forward + reverse pass; gradients add into ``self.grads``.

        Returns the MSE loss against the one-hot target of ``label``.
        """
        x = self._prepare(x)
        label = np.asarray(label)
        if label.shape != x.shape[:3]:
            raise ShapeError(f"label dims {label.shape} != input dims {x.shape[:3]}")
        target = one_hot(label, self.config.out_channels, self.dtype)
        tape: list = []
        out = self._run(x, True, update_stats, tape)
        loss, grad = L.mse_loss(out, target)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        self._reverse(tape, grad.astype(self.dtype))
        return loss

    def _reverse(self, tape, grad):
        skip_grads: dict[int, np.ndarray] = {}
        g = grad
        for entry in reversed(tape):
            if isinstance(entry, tuple):
                kind, lvl, back = entry
                if kind == "concat":
                    g_skip, g = back(g)
                    skip_grads[lvl] = g_skip
                else:
                    # the pooled tensor was also the skip; merge both paths
                    g = back(g) + skip_grads.pop(lvl)
            else:
                g = entry(g)
        return g


def tape_push(tape, item):
    if tape is not None:
        tape.append(item)


def loss_mse(output: np.ndarray, label: np.ndarray) -> float:
    """MSE between a channels-last output and the one-hot of ``label``."""
    output = np.asarray(output)
    target = one_hot(label, output.shape[-1], np.float64)
    if output.shape != target.shape:
        raise ShapeError(f"output {output.shape} does not match label dims {np.shape(label)}")
    d = output.astype(np.float64) - target
    return float(np.mean(d * d))
