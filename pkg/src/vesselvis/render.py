"""Orthographic projection of volumes: MIP and front-to-back compositing.

The camera orbits the volume center: extrinsic rotations about the center's
x, y, z axes (applied in that order), orthographic rays along the rotated -z.
The image window is the square spanning the volume's bounding-sphere
diameter, so any rotation fits and the framing does not depend on the view
direction. Rays are marched at a fixed step (default half the smallest voxel
spacing) with trilinear sampling; samples outside the volume read 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from PIL import Image

from .fusion import FusedVolume
from .volume import Volume, trilinear_sample


class RenderMode(enum.Enum):
    MIP = "mip"
    COMPOSITE = "composite"


@dataclass(frozen=True)
class Camera:
    """Extrinsic rotation (degrees, x->y->z order) and output raster size."""

    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    output_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        width, height = (int(v) for v in self.output_size)
        if width < 1 or height < 1:
            raise ValueError(f"output size must be >= 1, got {self.output_size}")
        object.__setattr__(self, "rotation", tuple(float(r) for r in self.rotation))
        object.__setattr__(self, "output_size", (width, height))


@dataclass(frozen=True)
class RenderedImage:
    """RGBA raster, channels float in [0, 1], pixels shaped (height, width, 4)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 3 or pixels.shape[2] != 4:
            raise ValueError(f"pixels must be (H, W, 4), got {pixels.shape}")
        if not np.isfinite(pixels).all():
            raise ValueError("pixel channels must be finite")
        if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
            raise ValueError("pixel channels must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """Extrinsic rotation about x, then y, then z (degrees)."""
    ax, ay, az = (math.radians(a) for a in (rx, ry, rz))
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rot_z @ rot_y @ rot_x


def camera_rays(dims, spacing, camera: Camera, step_voxels: float = 0.5):
    """Build the orthographic ray grid for a volume.

    Returns (origins, direction, ts): per-pixel ray origins in voxel
    coordinates shaped (width*height, 3) in row-major pixel order, the ray
    direction in voxel coordinates, and the world-unit parameter grid ts;
    sample k of pixel p sits at ``origins[p] + ts[k] * direction``. The step
    never exceeds ``step_voxels`` of the smallest voxel spacing.
    """
    if step_voxels <= 0:
        raise ValueError(f"step_voxels must be positive, got {step_voxels}")
    nx, ny, nz = dims
    sx, sy, sz = spacing
    extent = np.array([(nx - 1) * sx, (ny - 1) * sy, (nz - 1) * sz])
    center = extent / 2.0
    side = max(float(np.linalg.norm(extent)), min(spacing))

    rot = rotation_matrix(*camera.rotation)
    right, up = rot[:, 0], rot[:, 1]
    view = -rot[:, 2]

    width, height = camera.output_size
    pixel_size = side / min(width, height)
    cols = (np.arange(width) - (width - 1) / 2.0) * pixel_size
    rows = ((height - 1) / 2.0 - np.arange(height)) * pixel_size

    # Depth range: tightest slab of the volume's corners along the view axis.
    corners = np.array(
        [[cx, cy, cz] for cx in (0, extent[0]) for cy in (0, extent[1])
         for cz in (0, extent[2])]
    )
    depth = (corners - center) @ view
    # pull the endpoints a hair inside the slab so rotation round-off cannot
    # push boundary samples out of bounds (where they would read 0)
    pad = 1e-9 * side
    t_enter = side / 2.0 + float(depth.min()) + pad
    t_exit = max(side / 2.0 + float(depth.max()) - pad, t_enter)

    step = step_voxels * min(spacing)
    # the 1e-12 guard keeps symmetric view directions from rounding to
    # different sample counts when the depth range is an exact multiple
    nsteps = max(1, int(math.ceil((t_exit - t_enter) / step * (1.0 - 1e-12))))
    ts = np.linspace(t_enter, t_exit, nsteps + 1)

    plane = center - (side / 2.0) * view
    origins_world = (
        plane[None, None, :]
        + rows[:, None, None] * up[None, None, :]
        + cols[None, :, None] * right[None, None, :]
    ).reshape(-1, 3)
    spacing_arr = np.array([sx, sy, sz], dtype=np.float64)
    return origins_world / spacing_arr, view / spacing_arr, ts


@njit(inline="always")
def _trilinear(grid, x, y, z):
    nz, ny, nx = grid.shape
    if x < 0.0 or x > nx - 1 or y < 0.0 or y > ny - 1 or z < 0.0 or z > nz - 1:
        return 0.0
    ix, iy, iz = int(x), int(y), int(z)
    if ix > nx - 2:
        ix = nx - 2
    if iy > ny - 2:
        iy = ny - 2
    if iz > nz - 2:
        iz = nz - 2
    fx, fy, fz = x - ix, y - iy, z - iz
    c00 = grid[iz, iy, ix] * (1 - fx) + grid[iz, iy, ix + 1] * fx
    c10 = grid[iz, iy + 1, ix] * (1 - fx) + grid[iz, iy + 1, ix + 1] * fx
    c01 = grid[iz + 1, iy, ix] * (1 - fx) + grid[iz + 1, iy, ix + 1] * fx
    c11 = grid[iz + 1, iy + 1, ix] * (1 - fx) + grid[iz + 1, iy + 1, ix + 1] * fx
    return (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz


@njit(parallel=True, cache=True)
def _mip_kernel(grid, origins, direction, ts):
    npix = origins.shape[0]
    out = np.zeros(npix, dtype=np.float64)
    for p in prange(npix):
        best = 0.0
        for k in range(ts.shape[0]):
            t = ts[k]
            v = _trilinear(
                grid,
                origins[p, 0] + t * direction[0],
                origins[p, 1] + t * direction[1],
                origins[p, 2] + t * direction[2],
            )
            if v > best:
                best = v
        out[p] = best
    return out


@njit(parallel=True, cache=True)
def _mip_argmax_kernel(grid, origins, direction, ts):
    npix = origins.shape[0]
    best = np.zeros(npix, dtype=np.float64)
    best_step = np.full(npix, -1, dtype=np.int64)
    for p in prange(npix):
        for k in range(ts.shape[0]):
            t = ts[k]
            v = _trilinear(
                grid,
                origins[p, 0] + t * direction[0],
                origins[p, 1] + t * direction[1],
                origins[p, 2] + t * direction[2],
            )
            if v > best[p]:
                best[p] = v
                best_step[p] = k
    return best, best_step


@njit(parallel=True, cache=True)
def _composite_kernel(alpha_grid, red, green, blue, origins, direction, ts,
                      alpha_exponent):
    npix = origins.shape[0]
    out = np.zeros((npix, 4), dtype=np.float64)
    for p in prange(npix):
        transparency = 1.0
        r = 0.0
        g = 0.0
        b = 0.0
        for k in range(ts.shape[0]):
            t = ts[k]
            x = origins[p, 0] + t * direction[0]
            y = origins[p, 1] + t * direction[1]
            z = origins[p, 2] + t * direction[2]
            raw = _trilinear(alpha_grid, x, y, z)
            if raw > 0.0:
                step_alpha = 1.0 - (1.0 - raw) ** alpha_exponent
                weight = transparency * step_alpha
                r += weight * _trilinear(red, x, y, z)
                g += weight * _trilinear(green, x, y, z)
                b += weight * _trilinear(blue, x, y, z)
                transparency *= 1.0 - step_alpha
                if transparency < 0.01:
                    break
        out[p, 0] = r
        out[p, 1] = g
        out[p, 2] = b
        out[p, 3] = 1.0 - transparency
    return out


def render_mip(volume: Volume, camera: Camera, step_voxels: float = 0.5) -> RenderedImage:
    """Grayscale maximum-intensity projection; alpha is 1 everywhere."""
    origins, direction, ts = camera_rays(volume.dims, volume.spacing, camera,
                                         step_voxels)
    values = _mip_kernel(volume.data, origins, direction, ts)
    width, height = camera.output_size
    gray = values.reshape(height, width).astype(np.float32)
    pixels = np.empty((height, width, 4), dtype=np.float32)
    pixels[..., 0] = gray
    pixels[..., 1] = gray
    pixels[..., 2] = gray
    pixels[..., 3] = 1.0
    return RenderedImage(pixels)


def render_fused(fused: FusedVolume, camera: Camera, mode: RenderMode,
                 step_voxels: float = 0.5) -> RenderedImage:
    """Project a fused volume.

    MIP picks, per pixel, the sample with the highest opacity and emits its
    color with that opacity as alpha. COMPOSITE accumulates front-to-back
    (C += (1-A) * a_i * c_i; A += (1-A) * a_i) with step-size-corrected
    alphas and early termination once A exceeds 0.99. Background pixels stay
    transparent black.
    """
    origins, direction, ts = camera_rays(fused.dims, fused.spacing, camera,
                                         step_voxels)
    width, height = camera.output_size
    alpha_grid = np.ascontiguousarray(fused.opacity, dtype=np.float32)

    if mode is RenderMode.MIP:
        best, best_step = _mip_argmax_kernel(alpha_grid, origins, direction, ts)
        pixels = np.zeros((height * width, 4), dtype=np.float32)
        hit = best_step >= 0
        if hit.any():
            points = origins[hit] + ts[best_step[hit], None] * direction[None, :]
            for ch in range(3):
                pixels[hit, ch] = trilinear_sample(fused.color[..., ch], points)
            pixels[hit, 3] = best[hit]
        return RenderedImage(pixels.reshape(height, width, 4))

    if mode is RenderMode.COMPOSITE:
        if len(ts) > 1:
            step_world = float(ts[1] - ts[0])
        else:
            step_world = step_voxels * min(fused.spacing)
        alpha_exponent = step_world / min(fused.spacing)
        channels = [
            np.ascontiguousarray(fused.color[..., ch], dtype=np.float32)
            for ch in range(3)
        ]
        out = _composite_kernel(alpha_grid, channels[0], channels[1], channels[2],
                                origins, direction, ts, alpha_exponent)
        return RenderedImage(
            np.clip(out, 0.0, 1.0).reshape(height, width, 4).astype(np.float32)
        )

    raise ValueError(f"unknown render mode {mode!r}")


def to_uint8(image: RenderedImage) -> np.ndarray:
    """Quantize channels to 8 bits: round(c * 255)."""
    return np.rint(np.clip(image.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(image: RenderedImage, path) -> None:
    """Write a standard 8-bit RGBA PNG."""
    Image.fromarray(to_uint8(image), mode="RGBA").save(path, format="PNG")


def png_bytes(image: RenderedImage) -> bytes:
    """Encode the image as PNG in memory (deterministic for equal pixels)."""
    import io

    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def warm_up() -> None:
    """Compile the ray-march kernels on a tiny volume (cached across runs)."""
    tiny = Volume(np.zeros((2, 2, 2), dtype=np.float32))
    cam = Camera(output_size=(2, 2))
    render_mip(tiny, cam)
    fused = FusedVolume(
        np.zeros((2, 2, 2)),
        np.zeros((2, 2, 2), dtype=np.float32),
        np.zeros((2, 2, 2, 3), dtype=np.float32),
    )
    render_fused(fused, cam, RenderMode.MIP)
    render_fused(fused, cam, RenderMode.COMPOSITE)
