"""Voxel-grid data type, frame-stack ingestion, VVOL file I/O, trilinear sampling.

A volume is a dense grid of float32 samples in [0, 1]. Arrays are stored
C-ordered with shape ``(nz, ny, nx)`` so that the flat sample order is
x-fastest, then y, then z; ``dims`` is always reported as ``(nx, ny, nz)``.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    BadMagic,
    EmptyStack,
    MismatchedFrameSize,
    TruncatedPayload,
    UnsupportedDtype,
)

VVOL_MAGIC = b"VVOL"
VVOL_VERSION = 0x01
VVOL_DTYPE_F32 = 0x00
_HEADER = struct.Struct("<4sBBH3I3f")


@dataclass(frozen=True)
class Volume:
    """Dense 3D scalar grid with physical spacing.

    ``data`` has shape (nz, ny, nx), float32, every sample finite in [0, 1].
    ``spacing`` is millimeters per voxel along (x, y, z), all positive.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("volume samples must all be finite")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("volume samples must lie in [0, 1]")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 or not np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing components must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class FrameStack:
    """Ordered stack of equally sized 2D grayscale frames plus spacing."""

    frames: tuple[np.ndarray, ...]
    pixel_spacing: tuple[float, float] = (1.0, 1.0)
    slice_spacing: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        _check_frames(self.frames)


def _check_frames(frames) -> None:
    if len(frames) < 2:
        raise EmptyStack(f"need at least 2 frames, got {len(frames)}")
    shape = frames[0].shape
    for k, frame in enumerate(frames):
        if frame.ndim != 2:
            raise MismatchedFrameSize(f"frame {k} is not 2D (shape {frame.shape})")
        if frame.shape != shape:
            raise MismatchedFrameSize(
                f"frame {k} has shape {frame.shape}, expected {shape}"
            )


_DTYPE_PEAK = {np.dtype(np.uint8): 255.0, np.dtype(np.uint16): 65535.0}


def ingest_frames(stack: FrameStack) -> Volume:
    """Stack 2D grayscale frames into a Volume, frame k on z-slice k.

    Pixel values are normalized by the dtype's maximum (255 for 8-bit,
    65535 for 16-bit) so samples land in [0, 1].
    """
    _check_frames(stack.frames)
    data = []
    for k, frame in enumerate(stack.frames):
        peak = _DTYPE_PEAK.get(np.dtype(frame.dtype))
        if peak is None:
            raise UnsupportedDtype(
                f"frame {k} has dtype {frame.dtype}; expected uint8 or uint16"
            )
        data.append(np.asarray(frame, dtype=np.float32) / peak)
    sx, sy = stack.pixel_spacing
    return Volume(np.stack(data, axis=0), (sx, sy, stack.slice_spacing))


def write_vvol(volume: Volume, path) -> None:
    """Write a volume in the VVOL format (atomically: temp file, then rename)."""
    nx, ny, nz = volume.dims
    header = _HEADER.pack(
        VVOL_MAGIC, VVOL_VERSION, VVOL_DTYPE_F32, 0, nx, ny, nz, *volume.spacing
    )
    payload = np.ascontiguousarray(volume.data, dtype="<f4").tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".vvol.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.chmod(tmp, 0o644)  # mkstemp defaults to 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def volume_from_vvol_bytes(blob: bytes) -> Volume:
    """Parse VVOL bytes into a Volume."""
    if len(blob) < 4 or blob[:4] != VVOL_MAGIC:
        raise BadMagic("not a VVOL payload (bad magic)")
    if len(blob) < _HEADER.size:
        raise TruncatedPayload("VVOL header truncated")
    magic, version, dtype, _, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(blob)
    if version != VVOL_VERSION:
        raise UnsupportedDtype(f"unsupported VVOL version {version}")
    if dtype != VVOL_DTYPE_F32:
        raise UnsupportedDtype(f"unsupported VVOL sample dtype {dtype:#x}")
    count = nx * ny * nz
    body = blob[_HEADER.size :]
    if len(body) < count * 4:
        raise TruncatedPayload(
            f"payload holds {len(body) // 4} samples, header declares {count}"
        )
    samples = np.frombuffer(body, dtype="<f4", count=count)
    return Volume(samples.reshape(nz, ny, nx).copy(), (sx, sy, sz))


def read_vvol(path) -> Volume:
    """Read a VVOL file written by :func:`write_vvol`."""
    with open(path, "rb") as fh:
        return volume_from_vvol_bytes(fh.read())


def trilinear_sample(grid, points) -> np.ndarray:
    """Trilinearly sample a volume (or raw grid) at continuous voxel coordinates.

    ``points`` is array-like with shape (..., 3) in (x, y, z) voxel
    coordinates. Points strictly outside [0, nx-1] x [0, ny-1] x [0, nz-1]
    evaluate to 0. Returns an array of shape ``points.shape[:-1]`` (or a
    scalar for a single point).
    """
    data = grid.data if isinstance(grid, Volume) else np.asarray(grid)
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    nz, ny, nx = data.shape
    coords = np.stack([pts[..., 2], pts[..., 1], pts[..., 0]])  # (z, y, x) order
    values = ndimage.map_coordinates(
        data, coords.reshape(3, -1), order=1, mode="constant", cval=0.0
    ).reshape(pts.shape[:-1])
    limits = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    outside = ((pts < 0.0) | (pts > limits)).any(axis=-1)
    values = np.where(outside, 0.0, values)
    return float(values[0]) if scalar else values
