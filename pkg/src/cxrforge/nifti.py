"""Minimal NIfTI-1 single-file reader/writer (``.nii`` and ``.nii.gz``).

Only what CT/label volumes need: up to 3 spatial dims (a 4th singleton dim is
tolerated), scalar datatypes, scaling, and the sform/qform affine.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER_SIZE = 348

_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
    1024: np.int64,
    1280: np.uint64,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class NiftiFormatError(ValueError):
    """The file is not a readable NIfTI-1 volume."""


@dataclass
class NiftiImage:
    data: np.ndarray
    pixdim: tuple[float, float, float]
    affine: np.ndarray | None  # None when neither sform nor qform is set


def _quaternion_affine(b, c, d, qx, qy, qz, pixdim, qfac) -> np.ndarray:
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    aff = np.eye(4)
    aff[:3, :3] = rot @ np.diag([pixdim[0], pixdim[1], qfac * pixdim[2]])
    aff[:3, 3] = (qx, qy, qz)
    return aff


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiFormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read_nifti(path) -> NiftiImage:
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: truncated header ({len(raw)} bytes)")

    for endian in "<>":
        if struct.unpack_from(endian + "i", raw, 0)[0] == HEADER_SIZE:
            break
    else:
        raise NiftiFormatError(f"{path}: sizeof_hdr is not 348")

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiFormatError(f"{path}: bad magic {magic!r}")
    if magic == b"ni1\x00":
        raise NiftiFormatError(f"{path}: two-file NIfTI (.hdr/.img) is not supported")

    dim = struct.unpack_from(endian + "8h", raw, 40)
    datatype = struct.unpack_from(endian + "h", raw, 70)[0]
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(endian + "3f", raw, 108)
    qform_code, sform_code = struct.unpack_from(endian + "2h", raw, 252)
    quat = struct.unpack_from(endian + "6f", raw, 256)
    srow = struct.unpack_from(endian + "12f", raw, 280)

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f"{path}: invalid dim[0]={ndim}")
    shape = list(dim[1 : ndim + 1])
    if any(n < 1 for n in shape):
        raise NiftiFormatError(f"{path}: non-positive dimension in {shape}")
    while len(shape) > 3 and shape[-1] == 1:
        shape.pop()
    if len(shape) > 3:
        raise NiftiFormatError(f"{path}: only 3D volumes are supported, got shape {shape}")
    shape += [1] * (3 - len(shape))

    if datatype not in _DTYPES:
        raise NiftiFormatError(f"{path}: unsupported datatype code {datatype}")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder(endian)

    offset = int(vox_offset)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if offset < HEADER_SIZE or len(raw) < offset + nbytes:
        raise NiftiFormatError(
            f"{path}: truncated data (need {offset + nbytes} bytes, have {len(raw)})"
        )
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    data = data.reshape(shape, order="F").astype(dtype.newbyteorder("="))

    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        if np.isfinite(scl_slope) and scl_slope != 0.0:
            data = data.astype(np.float64) * scl_slope + scl_inter

    spacing = tuple(float(abs(p)) for p in pixdim[1:4])
    if sform_code > 0:
        affine = np.eye(4)
        affine[:3, :] = np.asarray(srow, dtype=np.float64).reshape(3, 4)
    elif qform_code > 0:
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        affine = _quaternion_affine(*quat, pixdim=spacing, qfac=qfac)
    else:
        affine = None
    return NiftiImage(data=np.ascontiguousarray(data), pixdim=spacing, affine=affine)


def write_nifti(path, data: np.ndarray, spacing=(1.0, 1.0, 1.0), affine=None, origin=None) -> None:
    """Write a 3D array as NIfTI-1.

    Pass ``affine=False`` to write a header without any orientation (both
    form codes zero). Otherwise the affine defaults to a diagonal spacing
    matrix translated to ``origin``.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError("write_nifti expects a 3D array")
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    dtype = data.dtype.newbyteorder("=")
    if np.dtype(dtype) not in _CODES:
        raise ValueError(f"unsupported dtype {data.dtype}")

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    hdr[38] = ord("r")
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, _CODES[np.dtype(dtype)])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *[float(s) for s in spacing], 0, 0, 0, 0)
    struct.pack_into("<3f", hdr, 108, 352.0, 1.0, 0.0)
    hdr[123] = 2  # mm
    if affine is not False:
        if affine is None:
            affine = np.diag([*map(float, spacing), 1.0])
            if origin is not None:
                affine[:3, 3] = origin
        affine = np.asarray(affine, dtype=np.float64)
        struct.pack_into("<2h", hdr, 252, 0, 1)
        struct.pack_into("<12f", hdr, 280, *affine[:3, :].ravel())
    hdr[344:348] = b"n+1\x00"

    payload = bytes(hdr) + b"\x00" * 4 + data.astype(dtype.newbyteorder("<")).tobytes(order="F")
    if path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)
