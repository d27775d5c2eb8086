"""Transfer-function-free voxel classification.

Feature volumes are fused per voxel into three grids:

* importance: a feature-weighted significance score, the convex combination
  of per-feature boosts (n*k_j)^2 weighted by the feature responses;
* color: HSL values combined from per-feature hue/saturation picks, with
  lightness taken from the voxel intensity, then converted to RGB;
* opacity: the intensity-times-gradient base opacity, amplified by
  1 + gain * ln(n * importance + 1) and clamped to [0, 1].

Setting the gain to 0, or a voxel having zero importance, leaves that
voxel's opacity at its base value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroWeights, DimsMismatch, NegativeGain
from .features import FeatureSet, sobel_gradient
from .volume import Volume

WEIGHT_SUM_TOL = 1e-9


def normalize_weights(raw) -> list[float]:
    """Scale nonnegative raw weights so they sum to 1."""
    values = [float(v) for v in raw]
    if any(v < 0 for v in values):
        raise ValueError(f"raw weights must be nonnegative, got {values}")
    total = sum(values)
    if total <= 0:
        raise AllZeroWeights("at least one raw weight must be positive")
    return [v / total for v in values]


@dataclass(frozen=True)
class FusionParams:
    """User-steered fusion knobs: per-feature weights and colors, global gain.

    ``weights`` maps feature name to its normalized significance k_j (the
    values must sum to 1); ``colors`` maps feature name to (hue degrees in
    [0, 360), saturation in [0, 1]); ``gain`` is the opacity amplification
    knob, >= 0.
    """

    weights: dict[str, float]
    colors: dict[str, tuple[float, float]]
    gain: float = 1.0

    def __post_init__(self):
        weights = {str(k): float(v) for k, v in self.weights.items()}
        if not weights:
            raise ValueError("weights must not be empty")
        if any(not 0.0 <= v <= 1.0 for v in weights.values()):
            raise ValueError(f"weights must lie in [0, 1], got {weights}")
        if abs(sum(weights.values()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(
                f"weights must sum to 1 within {WEIGHT_SUM_TOL}, "
                f"got {sum(weights.values())}"
            )
        colors = {}
        for name, (hue, sat) in self.colors.items():
            hue, sat = float(hue), float(sat)
            if not 0.0 <= hue < 360.0:
                raise ValueError(f"hue for {name!r} must be in [0, 360), got {hue}")
            if not 0.0 <= sat <= 1.0:
                raise ValueError(f"saturation for {name!r} must be in [0, 1], got {sat}")
            colors[str(name)] = (hue, sat)
        if self.gain < 0:
            raise NegativeGain(f"gain must be >= 0, got {self.gain}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "gain", float(self.gain))

    @classmethod
    def from_json(cls, text_or_obj) -> "FusionParams":
        """Load from the JSON schema; raw weights are normalized on load."""
        obj = json.loads(text_or_obj) if isinstance(text_or_obj, (str, bytes)) else text_or_obj
        names = list(obj["weights"].keys())
        normalized = normalize_weights([obj["weights"][n] for n in names])
        colors = {
            name: (spec["h"], spec["s"]) for name, spec in obj.get("colors", {}).items()
        }
        for name in names:
            colors.setdefault(name, (0.0, 0.0))
        return cls(dict(zip(names, normalized)), colors, obj.get("gain", 1.0))

    def to_json(self) -> str:
        return json.dumps(
            {
                "weights": self.weights,
                "colors": {n: {"h": h, "s": s} for n, (h, s) in self.colors.items()},
                "gain": self.gain,
            }
        )


@dataclass(frozen=True)
class FusedVolume:
    """Per-voxel importance, opacity, and RGB color, ready for projection."""

    importance: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        shape = self.importance.shape
        if self.opacity.shape != shape or self.color.shape != shape + (3,):
            raise DimsMismatch(
                f"fused grids disagree: importance {shape}, "
                f"opacity {self.opacity.shape}, color {self.color.shape}"
            )
        if self.importance.size:
            if self.importance.min() < 0:
                raise ValueError("importance must be nonnegative")
            if self.opacity.min() < 0 or self.opacity.max() > 1:
                raise ValueError("opacity must lie in [0, 1]")
            if self.color.min() < 0 or self.color.max() > 1:
                raise ValueError("color channels must lie in [0, 1]")

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.importance.shape
        return (nx, ny, nz)


def _aligned_weights(features: FeatureSet, weights) -> np.ndarray:
    if isinstance(weights, dict):
        missing = [n for n in features.names if n not in weights]
        if missing:
            raise ValueError(f"weights missing for features {missing}")
        values = [weights[n] for n in features.names]
    else:
        values = list(weights)
        if len(values) != features.n:
            raise DimsMismatch(
                f"{len(values)} weights for {features.n} features"
            )
    if abs(sum(values) - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1, got {sum(values)}")
    return np.asarray(values, dtype=np.float64)


def importance(features: FeatureSet, weights) -> np.ndarray:
    """Per-voxel significance: sum_j X_j * (n*k_j)^2 / sum_j X_j.

    Voxels where every feature response is zero get importance 0.
    """
    k = _aligned_weights(features, weights)
    n = features.n
    boost = (n * k) ** 2
    num = np.zeros(features.features[0][1].shape, dtype=np.float64)
    den = np.zeros_like(num)
    for boost_j, (_, data) in zip(boost, features.features):
        x = data.astype(np.float64)
        num += x * boost_j
        den += x
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0.0)
    return out


def hsl_to_rgb(hue_deg: np.ndarray, saturation: np.ndarray,
               lightness: np.ndarray) -> np.ndarray:
    """Vectorized HSL to RGB. Inputs broadcast; output shape (..., 3) in [0, 1]."""
    h = np.asarray(hue_deg, dtype=np.float32) % np.float32(360.0)
    s = np.asarray(saturation, dtype=np.float32)
    lig = np.asarray(lightness, dtype=np.float32)
    h, s, lig = np.broadcast_arrays(h, s, lig)
    a = s * np.minimum(lig, 1.0 - lig)
    rgb = np.empty(h.shape + (3,), dtype=np.float32)
    for ch, offset in enumerate((0.0, 8.0, 4.0)):  # R, G, B phase offsets
        k = (np.float32(offset) + h / np.float32(30.0)) % np.float32(12.0)
        rgb[..., ch] = lig - a * np.clip(np.minimum(k - 3.0, 9.0 - k), -1.0, 1.0)
    return np.clip(rgb, 0.0, 1.0)


def combine_color(features: FeatureSet, params: FusionParams,
                  base_intensity: Volume) -> np.ndarray:
    """Blend per-feature (hue, saturation) picks into a per-voxel RGB grid.

    Feature j contributes with weight w_j = X_j * (n*k_j)^2. Saturation is
    the w-weighted mean of the feature saturations; hue is the mean weighted
    by w_j * saturation_j. Lightness comes from the voxel intensity, so the
    anatomical grayscale survives colorization. Voxels with zero total weight
    are achromatic.
    """
    if base_intensity.dims != features.source_dims:
        raise DimsMismatch(
            f"intensity dims {base_intensity.dims} != feature dims {features.source_dims}"
        )
    k = _aligned_weights(features, params.weights)
    n = features.n
    boost = (n * k) ** 2

    shape = features.features[0][1].shape
    w_sum = np.zeros(shape, dtype=np.float32)
    ws_sum = np.zeros_like(w_sum)  # weights * feature saturation
    wsh_sum = np.zeros_like(w_sum)  # weights * saturation * hue
    for boost_j, (name, data) in zip(boost, features.features):
        hue_j, sat_j = params.colors.get(name, (0.0, 0.0))
        w = data * np.float32(boost_j)
        w_sum += w
        ws_sum += w * np.float32(sat_j)
        wsh_sum += w * np.float32(sat_j * hue_j)

    saturation = np.zeros_like(w_sum)
    np.divide(ws_sum, w_sum, out=saturation, where=w_sum > 0.0)
    hue = np.zeros_like(w_sum)
    np.divide(wsh_sum, ws_sum, out=hue, where=ws_sum > 0.0)

    return hsl_to_rgb(hue, saturation, base_intensity.data)


def opacity(base: Volume, gradient_magnitude: np.ndarray,
            importance_grid: np.ndarray, gain: float, n_features: int) -> np.ndarray:
    """Base opacity intensity*gradient, amplified by importance.

    O_d = int(s) * gm(s); O_e = clamp(O_d * (1 + gain * ln(n*importance + 1))).
    gain = 0 or importance = 0 leaves O_e = O_d.
    """
    if gain < 0:
        raise NegativeGain(f"gain must be >= 0, got {gain}")
    if base.data.shape != gradient_magnitude.shape or base.data.shape != importance_grid.shape:
        raise DimsMismatch(
            f"opacity inputs disagree: {base.data.shape}, "
            f"{gradient_magnitude.shape}, {importance_grid.shape}"
        )
    base_opacity = base.data.astype(np.float64) * gradient_magnitude.astype(np.float64)
    if gain == 0:
        amplified = base_opacity
    else:
        amplified = base_opacity * (
            1.0 + gain * np.log1p(n_features * importance_grid.astype(np.float64))
        )
    return np.clip(amplified, 0.0, 1.0)


def fuse(volume: Volume, features: FeatureSet, params: FusionParams) -> FusedVolume:
    """Assemble importance, color, and opacity grids for one volume.

    The gradient magnitude for the base opacity comes from the "sobel"
    feature when present, otherwise it is computed on demand.
    """
    if volume.dims != features.source_dims:
        raise DimsMismatch(
            f"volume dims {volume.dims} != feature dims {features.source_dims}"
        )
    significance = importance(features, params.weights)
    color = combine_color(features, params, volume)
    if "sobel" in features.names:
        gm = features.array("sobel")
    else:
        _, gm = sobel_gradient(volume)
    alpha = opacity(volume, gm, significance, params.gain, features.n)
    return FusedVolume(significance, alpha, color, volume.spacing)
