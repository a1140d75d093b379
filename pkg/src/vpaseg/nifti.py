"""Minimal single-file NIfTI-1 reader/writer (.nii and .nii.gz).

Only datatypes uint8 (2), int16 (4) and float32 (16) are handled. Orientation
fields are carried through untouched in ``NiftiHeader.raw`` but never
interpreted.
"""

from __future__ import annotations

import gzip
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .volume import DEFAULT_NUM_CLASSES, LabelVolume, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16

_DTYPES = {
    DT_UINT8: np.dtype("u1"),
    DT_INT16: np.dtype("<i2"),
    DT_FLOAT32: np.dtype("<f4"),
}
_DATATYPE_NAMES = {"uint8": DT_UINT8, "int16": DT_INT16, "float32": DT_FLOAT32}

# offsets of the fields this module reads or writes
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_MAGIC = 344


class NiftiError(ValueError):
    pass


class BadMagicError(NiftiError):
    pass


class UnsupportedDatatypeError(NiftiError):
    pass


class TruncatedDataError(NiftiError):
    pass


class ValueRangeError(NiftiError):
    pass


@dataclass
class NiftiHeader:
    dims: tuple
    datatype: int
    pixdim: tuple
    vox_offset: float = float(VOX_OFFSET)
    scl_slope: float = 1.0
    scl_inter: float = 0.0
    magic: bytes = MAGIC
    raw: bytes = field(default=b"", repr=False)

    @property
    def spacing(self) -> tuple:
        return tuple(float(p) if p > 0 else 1.0 for p in self.pixdim[:3])


def _datatype_code(datatype) -> int:
    if isinstance(datatype, str):
        if datatype not in _DATATYPE_NAMES:
            raise UnsupportedDatatypeError(f"unsupported datatype {datatype!r}")
        return _DATATYPE_NAMES[datatype]
    if int(datatype) not in _DTYPES:
        raise UnsupportedDatatypeError(f"unsupported datatype code {datatype}")
    return int(datatype)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] == b"\x1f\x8b":
        try:
            blob = gzip.decompress(blob)
        except (OSError, EOFError) as exc:
            raise TruncatedDataError(f"{path}: corrupt gzip stream ({exc})") from exc
    return blob


def parse_header(blob: bytes) -> NiftiHeader:
    if len(blob) < HEADER_SIZE:
        raise TruncatedDataError(f"header needs {HEADER_SIZE} bytes, got {len(blob)}")
    hdr = blob[:HEADER_SIZE]
    magic = hdr[_OFF_MAGIC:_OFF_MAGIC + 4]
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    endian = "<"
    if np.frombuffer(hdr, "<i4", 1, 0)[0] != HEADER_SIZE:
        if np.frombuffer(hdr, ">i4", 1, 0)[0] != HEADER_SIZE:
            raise NiftiError("sizeof_hdr is not 348")
        endian = ">"
    dim = np.frombuffer(hdr, endian + "i2", 8, _OFF_DIM)
    ndim = int(dim[0])
    if not 1 <= ndim <= 7:
        raise NiftiError(f"invalid dim[0] = {ndim}")
    sizes = [int(d) for d in dim[1:ndim + 1]]
    if any(s < 1 for s in sizes):
        raise NiftiError(f"invalid dims {sizes}")
    if any(s != 1 for s in sizes[3:]):
        raise NiftiError(f"only 3D volumes are supported, got dims {sizes}")
    sizes = (sizes + [1, 1, 1])[:3]
    datatype = int(np.frombuffer(hdr, endian + "i2", 1, _OFF_DATATYPE)[0])
    pixdim = tuple(float(p) for p in np.frombuffer(hdr, endian + "f4", 8, _OFF_PIXDIM)[1:4])
    return NiftiHeader(
        dims=tuple(sizes),
        datatype=datatype,
        pixdim=pixdim,
        vox_offset=float(np.frombuffer(hdr, endian + "f4", 1, _OFF_VOX_OFFSET)[0]),
        scl_slope=float(np.frombuffer(hdr, endian + "f4", 1, _OFF_SCL_SLOPE)[0]),
        scl_inter=float(np.frombuffer(hdr, endian + "f4", 1, _OFF_SCL_INTER)[0]),
        magic=magic,
        raw=hdr if endian == "<" else b"",
    )


def read_nifti(path, kind: str = "auto"):
    """Read a single-file NIfTI-1 volume.

    ``kind`` is ``"image"``, ``"label"`` or ``"auto"`` (unscaled uint8 data is
    returned as a :class:`LabelVolume`). Returns ``(volume, header)``.
    """
    blob = _read_bytes(path)
    hdr = parse_header(blob)
    if hdr.datatype not in _DTYPES:
        raise UnsupportedDatatypeError(f"{path}: unsupported datatype code {hdr.datatype}")
    endian = "<" if np.frombuffer(blob, "<i4", 1, 0)[0] == HEADER_SIZE else ">"
    dtype = _DTYPES[hdr.datatype].newbyteorder(endian)
    count = int(np.prod(hdr.dims))
    start = int(hdr.vox_offset) if hdr.vox_offset >= HEADER_SIZE else VOX_OFFSET
    need = start + count * dtype.itemsize
    if len(blob) < need:
        raise TruncatedDataError(f"{path}: expected {need} bytes, file has {len(blob)}")
    raw = np.frombuffer(blob, dtype, count, start).reshape(hdr.dims, order="F")

    scaled = hdr.scl_slope != 0 and not (hdr.scl_slope == 1 and hdr.scl_inter == 0)
    if kind == "auto":
        kind = "label" if hdr.datatype == DT_UINT8 and not scaled else "image"
    if kind == "label":
        data = raw.astype(np.float64) * hdr.scl_slope + hdr.scl_inter if scaled else raw
        labels = np.rint(data).astype(np.int64)
        k = max(DEFAULT_NUM_CLASSES, int(labels.max()) if labels.size else 0)
        return LabelVolume(labels, hdr.spacing, k), hdr
    if kind != "image":
        raise ValueError(f"unknown kind {kind!r}")
    if scaled:
        data = (raw.astype(np.float64) * hdr.scl_slope + hdr.scl_inter).astype(np.float32)
    else:
        data = raw.astype(np.float32)
    return Volume(data, hdr.spacing), hdr


def _build_header(dims, spacing, code: int, template: NiftiHeader | None) -> bytes:
    if template is not None and len(template.raw) == HEADER_SIZE:
        buf = bytearray(template.raw)
    else:
        buf = bytearray(HEADER_SIZE)
        np.frombuffer(buf, "<i4", 1, 0)[0] = HEADER_SIZE
        buf[39] = 0
        # pixdim[0] is qfac
        np.frombuffer(buf, "<f4", 1, _OFF_PIXDIM)[0] = 1.0
        buf[123] = 2 | 8  # mm, seconds
    dim = np.zeros(8, "<i2")
    dim[0] = 3
    dim[1:4] = dims
    dim[4:] = 1
    buf[_OFF_DIM:_OFF_DIM + 16] = dim.tobytes()
    buf[_OFF_DATATYPE:_OFF_DATATYPE + 2] = np.array([code], "<i2").tobytes()
    buf[_OFF_BITPIX:_OFF_BITPIX + 2] = np.array([_DTYPES[code].itemsize * 8], "<i2").tobytes()
    pix = np.frombuffer(bytes(buf[_OFF_PIXDIM:_OFF_PIXDIM + 32]), "<f4").copy()
    if pix[0] not in (1.0, -1.0):
        pix[0] = 1.0
    pix[1:4] = spacing
    buf[_OFF_PIXDIM:_OFF_PIXDIM + 32] = pix.tobytes()
    buf[_OFF_VOX_OFFSET:_OFF_VOX_OFFSET + 4] = np.array([VOX_OFFSET], "<f4").tobytes()
    buf[_OFF_SCL_SLOPE:_OFF_SCL_SLOPE + 8] = np.array([1.0, 0.0], "<f4").tobytes()
    buf[_OFF_MAGIC:_OFF_MAGIC + 4] = MAGIC
    return bytes(buf)


def write_nifti(volume, path, datatype="float32", header: NiftiHeader | None = None) -> None:
    """Write a volume as single-file NIfTI-1; ``.gz`` suffix selects gzip.

    ``header`` (from :func:`read_nifti`) donates its orientation fields.
    """
    code = _datatype_code(datatype)
    if isinstance(volume, LabelVolume):
        arr, spacing = volume.labels, volume.spacing
    elif isinstance(volume, Volume):
        arr, spacing = volume.data, volume.spacing
    else:
        arr, spacing = np.asarray(volume), (1.0, 1.0, 1.0)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {arr.shape}")
    dtype = _DTYPES[code]
    if code != DT_FLOAT32:
        info = np.iinfo(dtype)
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < info.min or arr.max() > info.max):
            raise ValueRangeError(
                f"values {arr.min()}..{arr.max()} out of range for {dtype.name} [{info.min}, {info.max}]"
            )
        data = np.rint(arr).astype(dtype) if arr.dtype.kind == "f" else arr.astype(dtype)
    else:
        data = arr.astype(dtype)
    payload = (
        _build_header(arr.shape, spacing, code, header)
        + b"\x00" * (VOX_OFFSET - HEADER_SIZE)
        + data.ravel(order="F").tobytes()
    )
    path = os.fspath(path)
    if path.endswith(".gz"):
        bio = io.BytesIO()
        # mtime=0 keeps output byte-identical across runs
        with gzip.GzipFile(fileobj=bio, mode="wb", mtime=0) as gz:
            gz.write(payload)
        payload = bio.getvalue()
    with open(path, "wb") as f:
        f.write(payload)
