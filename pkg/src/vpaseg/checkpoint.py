"""Binary model checkpoints.

Layout (all little-endian)::

    b"VPAU" | u32 version | u32 in_channels | u32 out_channels | u32 levels
    | u32 base_features | u32 n_tensors | n_tensors * tensor
    | u8 has_training_state [| u64 adam_step | u32 epoch | u32 n | n * tensor]

    tensor = u32 name_len | name (utf-8) | u32 rank | rank * u32 dim | float32 data

Tensors are the model parameters, then batch-norm running statistics, then
``meta.*`` entries. Training-state tensors are named ``adam.m.<param>`` and
``adam.v.<param>``.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from .unet.model import UNetConfig, UNetModel
from .unet.optim import AdamState

MAGIC = b"VPAU"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_tensor(f, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    arr = np.asarray(arr)
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    blob = f.read(n)
    if len(blob) != n:
        raise CheckpointError("truncated checkpoint")
    return blob


def _read_tensor(f):
    (name_len,) = struct.unpack("<I", _read_exact(f, 4))
    if name_len > 4096:
        raise CheckpointError("corrupt tensor name length")
    try:
        name = _read_exact(f, name_len).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("corrupt tensor name") from exc
    (rank,) = struct.unpack("<I", _read_exact(f, 4))
    if rank > 8:
        raise CheckpointError(f"corrupt rank {rank} for tensor {name!r}")
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float32)


def save_checkpoint(model: UNetModel, path, adam: AdamState | None = None, epoch: int = 0) -> None:
    cfg = model.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IIIII", VERSION, cfg.in_channels, cfg.out_channels, cfg.levels, cfg.base_features))
    tensors = model.tensors()
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        _write_tensor(buf, name, arr)
    if adam is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<QI", adam.step, epoch))
        moments = [(f"adam.m.{k}", v) for k, v in adam.m.items()] + [(f"adam.v.{k}", v) for k, v in adam.v.items()]
        buf.write(struct.pack("<I", len(moments)))
        for name, arr in moments:
            _write_tensor(buf, name, arr)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path, with_state: bool = False):
    """Load a model; with ``with_state`` also return ``(adam_state | None, epoch)``."""
    with open(path, "rb") as fh:
        f = io.BytesIO(fh.read())
    if _read_exact(f, 4) != MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    in_ch, out_ch, levels, base = struct.unpack("<IIII", _read_exact(f, 16))
    try:
        config = UNetConfig(in_channels=in_ch, out_channels=out_ch, levels=levels, base_features=base)
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid architecture ({exc})") from exc
    model = UNetModel(config)
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    seen = set()
    for _ in range(count):
        name, data = _read_tensor(f)
        if name in model.params:
            group = model.params
        elif name in model.buffers:
            group = model.buffers
        elif name.startswith("meta."):
            model.meta[name] = data
            continue
        else:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        if group[name].shape != data.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {data.shape}, config expects {group[name].shape}"
            )
        group[name] = data.copy()
        seen.add(name)
    missing = (set(model.params) | set(model.buffers)) - seen
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:3]}")
    (flag,) = struct.unpack("<B", _read_exact(f, 1))
    state, epoch = None, 0
    if flag:
        step, epoch = struct.unpack("<QI", _read_exact(f, 12))
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        state = AdamState(step=step)
        for _ in range(n):
            name, data = _read_tensor(f)
            kind, _, pname = name.partition(".")[2].partition(".")
            if pname not in model.params or model.params[pname].shape != data.shape:
                raise CheckpointError(f"{path}: bad optimizer tensor {name!r}")
            (state.m if kind == "m" else state.v)[pname] = data.copy()
    if with_state:
        return model, state, epoch
    return model
