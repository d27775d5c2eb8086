"""Volumetric visualization of vessels in B-mode ultrasound.

Pipeline: ingest 2D frame stacks into a volume, despeckle with a bilateral
filter, extract Sobel/GVF/vesselness feature volumes, fuse them into
per-voxel importance, color, and opacity under user-steered weights, and
project via MIP or front-to-back compositing.
"""

import os as _os

# The bundled TBB is too old for numba's probe; pin the OpenMP threading
# layer before any submodule imports numba.
_os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from . import errors
from .features import (
    FeatureConfig,
    FeatureSet,
    FrangiParams,
    GvfParams,
    VectorField3,
    build_feature_set,
    frangi_vesselness,
    gvf_energy,
    gvf_feature,
    gvf_field,
    load_feature_set,
    save_feature_set,
    sobel_gradient,
)
from .filters import BilateralParams, bilateral_direct, bilateral_fast, mse, psnr
from .fusion import (
    FusedVolume,
    FusionParams,
    combine_color,
    fuse,
    hsl_to_rgb,
    importance,
    normalize_weights,
    opacity,
)
from .phantoms import make_phantom, speckle
from .render import (
    Camera,
    RenderedImage,
    RenderMode,
    camera_rays,
    png_bytes,
    render_fused,
    render_mip,
    rotation_matrix,
    to_uint8,
    write_png,
)
from .volume import (
    FrameStack,
    Volume,
    ingest_frames,
    read_vvol,
    trilinear_sample,
    volume_from_vvol_bytes,
    write_vvol,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "Volume",
    "FrameStack",
    "ingest_frames",
    "read_vvol",
    "write_vvol",
    "volume_from_vvol_bytes",
    "trilinear_sample",
    "BilateralParams",
    "bilateral_direct",
    "bilateral_fast",
    "mse",
    "psnr",
    "FeatureSet",
    "VectorField3",
    "FrangiParams",
    "GvfParams",
    "FeatureConfig",
    "sobel_gradient",
    "gvf_field",
    "gvf_feature",
    "gvf_energy",
    "frangi_vesselness",
    "build_feature_set",
    "save_feature_set",
    "load_feature_set",
    "FusionParams",
    "FusedVolume",
    "normalize_weights",
    "importance",
    "combine_color",
    "opacity",
    "fuse",
    "hsl_to_rgb",
    "Camera",
    "RenderedImage",
    "RenderMode",
    "camera_rays",
    "render_mip",
    "render_fused",
    "rotation_matrix",
    "write_png",
    "png_bytes",
    "to_uint8",
    "make_phantom",
    "speckle",
    "__version__",
]
