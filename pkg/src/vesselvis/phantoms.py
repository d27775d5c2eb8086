"""Analytic test volumes: cylinder, sphere, ramp, step, and speckled variants."""

from __future__ import annotations

import numpy as np

from .errors import BadGeometry
from .volume import Volume

_AXES = {"x": 0, "y": 1, "z": 2}


def _index_grids(dims):
    nx, ny, nz = dims
    z, y, x = np.meshgrid(
        np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij"
    )
    return x, y, z


def _check_dims(dims):
    if len(dims) != 3 or any(int(n) < 1 for n in dims):
        raise BadGeometry(f"dims must be three positive integers, got {dims}")
    return tuple(int(n) for n in dims)


def cylinder(dims, radius: float = 3.0, axis: str = "z", value: float = 1.0,
             background: float = 0.0, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Solid cylinder of the given radius along one volume axis.

    The axis passes through (nx//2, ny//2, nz//2) so the stated center voxel
    is always inside.
    """
    dims = _check_dims(dims)
    if radius <= 0:
        raise BadGeometry(f"radius must be positive, got {radius}")
    if axis not in _AXES:
        raise BadGeometry(f"axis must be one of x/y/z, got {axis!r}")
    x, y, z = _index_grids(dims)
    centers = [n // 2 for n in dims]
    coords = [x, y, z]
    cross = [c - centers[i] for i, c in enumerate(coords) if i != _AXES[axis]]
    inside = cross[0] ** 2 + cross[1] ** 2 <= radius**2
    data = np.where(inside, np.float32(value), np.float32(background))
    return Volume(data, spacing)


def sphere(dims, radius: float = 3.0, center=None, value: float = 1.0,
           background: float = 0.0, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Solid sphere, centered at dims//2 unless a center is given."""
    dims = _check_dims(dims)
    if radius <= 0:
        raise BadGeometry(f"radius must be positive, got {radius}")
    if center is None:
        center = tuple(n // 2 for n in dims)
    x, y, z = _index_grids(dims)
    dist2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    data = np.where(dist2 <= radius**2, np.float32(value), np.float32(background))
    return Volume(data, spacing)


def ramp(dims, axis: str = "x", spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Linear ramp from 0 to 1 along one axis: f = i / (n - 1)."""
    dims = _check_dims(dims)
    if axis not in _AXES:
        raise BadGeometry(f"axis must be one of x/y/z, got {axis!r}")
    n = dims[_AXES[axis]]
    if n < 2:
        raise BadGeometry("ramp axis needs at least 2 voxels")
    grid = _index_grids(dims)[_AXES[axis]]
    return Volume((grid / (n - 1)).astype(np.float32), spacing)


def step(dims, axis: str = "x", position: int | None = None, low: float = 0.0,
         high: float = 1.0, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Axis-aligned step edge: ``low`` below ``position``, ``high`` from it on."""
    dims = _check_dims(dims)
    if axis not in _AXES:
        raise BadGeometry(f"axis must be one of x/y/z, got {axis!r}")
    n = dims[_AXES[axis]]
    if position is None:
        position = n // 2
    if not 0 < position < n:
        raise BadGeometry(f"step position {position} outside (0, {n})")
    grid = _index_grids(dims)[_AXES[axis]]
    data = np.where(grid >= position, np.float32(high), np.float32(low))
    return Volume(data, spacing)


def speckle(volume: Volume, amplitude: float = 0.3, seed: int = 0) -> Volume:
    """Multiplicative speckle: I * (1 + eta), eta uniform on [-amplitude, amplitude].

    Deterministic for a fixed seed; output clipped back to [0, 1].
    """
    if not 0 <= amplitude < 1:
        raise BadGeometry(f"speckle amplitude must be in [0, 1), got {amplitude}")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-amplitude, amplitude, size=volume.data.shape)
    noisy = np.clip(volume.data * (1.0 + eta), 0.0, 1.0)
    return Volume(noisy.astype(np.float32), volume.spacing)


def make_phantom(kind: str, dims=(32, 32, 32), spacing=(1.0, 1.0, 1.0),
                 **params) -> Volume:
    """Dispatch on phantom kind: cylinder, sphere, ramp, step, or noisy.

    ``noisy`` wraps a base phantom (``base`` parameter, default cylinder)
    with seeded multiplicative speckle.
    """
    if kind == "cylinder":
        return cylinder(dims, spacing=spacing, **params)
    if kind == "sphere":
        return sphere(dims, spacing=spacing, **params)
    if kind == "ramp":
        return ramp(dims, spacing=spacing, **params)
    if kind == "step":
        return step(dims, spacing=spacing, **params)
    if kind == "noisy":
        base = params.pop("base", "cylinder")
        amplitude = params.pop("amplitude", 0.3)
        seed = params.pop("seed", 0)
        return speckle(make_phantom(base, dims, spacing, **params), amplitude, seed)
    raise BadGeometry(f"unknown phantom kind {kind!r}")
