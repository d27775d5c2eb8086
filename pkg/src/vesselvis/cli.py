"""Batch command line: phantom generation, ingestion, filtering, feature
extraction, fusion, rendering, the full pipeline, and the HTTP service.

Exit codes: 0 success, 1 usage error, 2 stage failure (the diagnostic names
the failing stage).
"""

from __future__ import annotations

import contextlib
import json
import os
import sys

import click
import numpy as np

from .features import (
    FeatureConfig,
    FrangiParams,
    GvfParams,
    build_feature_set,
    load_feature_set,
    save_feature_set,
)
from .filters import BilateralParams, bilateral_direct, bilateral_fast, mse, psnr
from .fusion import FusedVolume, FusionParams, fuse, normalize_weights
from .phantoms import make_phantom
from .render import Camera, RenderMode, render_fused, render_mip, write_png
from .volume import FrameStack, Volume, ingest_frames, read_vvol, write_vvol

DEFAULT_COLORS = {
    "frangi": (0.0, 0.9),
    "sobel": (180.0, 0.7),
    "gvf": (60.0, 0.7),
}
MODES = ("mip", "mip-color", "composite")


class StageFailure(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except StageFailure:
        raise
    except click.ClickException:
        raise
    except Exception as exc:
        raise StageFailure(name, exc) from exc


def _parse_triple(text: str, kind=float):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != 3:
        raise click.BadParameter(f"expected three comma-separated values, got {text!r}")
    return tuple(kind(p) for p in parts)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        width, height = text.lower().split("x")
        return (int(width), int(height))
    except ValueError:
        raise click.BadParameter(f"expected WxH, got {text!r}") from None


def _parse_weights(text: str) -> dict[str, float]:
    weights = {}
    for item in text.split(","):
        if not item:
            continue
        try:
            name, value = item.split("=")
            weights[name.strip()] = float(value)
        except ValueError:
            raise click.BadParameter(
                f"expected name=value pairs, got {item!r}"
            ) from None
    if not weights:
        raise click.BadParameter("no weights given")
    return weights


def _parse_scales(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(",") if p)
    except ValueError:
        raise click.BadParameter(f"bad scales {text!r}") from None


def _load_frames(directory: str) -> list[np.ndarray]:
    from PIL import Image

    names = sorted(
        f for f in os.listdir(directory) if f.lower().endswith(".png")
    )
    if not names:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = []
    for name in names:
        img = Image.open(os.path.join(directory, name))
        if img.mode == "L":
            frames.append(np.asarray(img, dtype=np.uint8))
        elif img.mode in ("I;16", "I"):
            arr = np.asarray(img)
            if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
                raise ValueError(f"{name}: sample values exceed 16-bit range")
            frames.append(arr.astype(np.uint16))
        else:
            raise ValueError(f"{name}: mode {img.mode!r} is not 8/16-bit grayscale")
    return frames


def _load_input_volume(path: str, spacing) -> Volume:
    if os.path.isdir(path):
        frames = _load_frames(path)
        sx, sy, sz = spacing
        return ingest_frames(FrameStack(tuple(frames), (sx, sy), sz))
    return read_vvol(path)


def _fusion_params(feature_names, config_obj=None, weights=None, gain=None,
                   colors=None) -> FusionParams:
    if config_obj is not None:
        params = FusionParams.from_json(config_obj)
    else:
        uniform = normalize_weights([1.0] * len(feature_names))
        params = FusionParams(
            dict(zip(feature_names, uniform)),
            {n: DEFAULT_COLORS.get(n, (0.0, 0.0)) for n in feature_names},
            1.0,
        )
    if weights is not None:
        names = list(weights)
        normalized = normalize_weights([weights[n] for n in names])
        params = FusionParams(dict(zip(names, normalized)), params.colors, params.gain)
    if colors is not None:
        merged = dict(params.colors)
        merged.update(colors)
        params = FusionParams(params.weights, merged, params.gain)
    if gain is not None:
        params = FusionParams(params.weights, params.colors, gain)
    return params


def _save_fused(fused: FusedVolume, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    write_vvol(Volume(fused.opacity, fused.spacing),
               os.path.join(directory, "opacity.vvol"))
    for ch, name in enumerate(("color_r", "color_g", "color_b")):
        write_vvol(Volume(np.ascontiguousarray(fused.color[..., ch]), fused.spacing),
                   os.path.join(directory, f"{name}.vvol"))
    np.save(os.path.join(directory, "importance.npy"), fused.importance)
    with open(os.path.join(directory, "fused.json"), "w") as fh:
        json.dump({"spacing": list(fused.spacing)}, fh)


def _load_fused(directory: str) -> FusedVolume:
    opacity = read_vvol(os.path.join(directory, "opacity.vvol"))
    channels = [
        read_vvol(os.path.join(directory, f"color_{c}.vvol")).data
        for c in ("r", "g", "b")
    ]
    importance = np.load(os.path.join(directory, "importance.npy"))
    return FusedVolume(importance, opacity.data, np.stack(channels, axis=-1),
                       opacity.spacing)


def _render(volume, fused, mode: str, rotation, size, step: float):
    camera = Camera(rotation=rotation, output_size=size)
    if mode == "mip":
        source = volume if fused is None else Volume(fused.opacity, fused.spacing)
        return render_mip(source, camera, step)
    if fused is None:
        raise ValueError(f"mode {mode!r} needs fused inputs")
    kind = RenderMode.MIP if mode == "mip-color" else RenderMode.COMPOSITE
    return render_fused(fused, camera, kind, step)


@click.group()
def cli():
    """Vessel-oriented volumetric visualization for B-mode ultrasound."""


@cli.command()
@click.option("--kind", type=click.Choice(["cylinder", "sphere", "ramp", "step", "noisy"]),
              required=True)
@click.option("--dims", default="32,32,32", show_default=True)
@click.option("--radius", type=float, default=3.0, show_default=True)
@click.option("--axis", default="z", show_default=True)
@click.option("--value", type=float, default=1.0, show_default=True)
@click.option("--background", type=float, default=0.0, show_default=True)
@click.option("--base", default="cylinder", show_default=True,
              help="base phantom for kind=noisy")
@click.option("--amplitude", type=float, default=0.3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--spacing", default="1,1,1", show_default=True)
@click.option("--output", required=True, type=click.Path())
def phantom(kind, dims, radius, axis, value, background, base, amplitude, seed,
            spacing, output):
    """Write an analytic phantom volume as VVOL."""
    dims = _parse_triple(dims, int)
    spacing = _parse_triple(spacing)
    geometry = base if kind == "noisy" else kind
    params = {}
    if geometry in ("cylinder", "sphere"):
        params.update(radius=radius, value=value, background=background)
        if geometry == "cylinder":
            params["axis"] = axis
    elif geometry in ("ramp", "step"):
        params["axis"] = axis
    if kind == "noisy":
        params.update(base=base, amplitude=amplitude, seed=seed)
    with _stage("phantom"):
        vol = make_phantom(kind, dims, spacing, **params)
        write_vvol(vol, output)
    click.echo(f"wrote {output} dims={vol.dims}")


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--spacing", default="1,1,1", show_default=True)
@click.option("--output", required=True, type=click.Path())
def ingest(input_path, spacing, output):
    """Stack a directory of grayscale PNG frames into a VVOL volume."""
    spacing = _parse_triple(spacing)
    with _stage("ingest"):
        vol = _load_input_volume(input_path, spacing)
        write_vvol(vol, output)
    click.echo(f"wrote {output} dims={vol.dims}")


@cli.command("filter")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--output", required=True, type=click.Path())
@click.option("--sigma-spatial", type=float, default=2.0, show_default=True)
@click.option("--sigma-range", type=float, default=0.1, show_default=True)
@click.option("--window-radius", type=int, default=4, show_default=True)
@click.option("--method", type=click.Choice(["fast", "direct"]), default="fast",
              show_default=True)
@click.option("--reference", type=click.Path(), default=None,
              help="clean volume for MSE/PSNR reporting")
def filter_cmd(input_path, output, sigma_spatial, sigma_range, window_radius,
               method, reference):
    """Despeckle a volume with the 3D bilateral filter."""
    with _stage("filter"):
        vol = read_vvol(input_path)
        params = BilateralParams(sigma_spatial, sigma_range, window_radius)
        filt = (bilateral_fast if method == "fast" else bilateral_direct)(vol, params)
        write_vvol(filt, output)
        if reference:
            ref = read_vvol(reference)
            click.echo(f"input    vs reference: mse={mse(vol, ref):.6f} "
                       f"psnr={psnr(vol, ref):.2f} dB")
            click.echo(f"filtered vs reference: mse={mse(filt, ref):.6f} "
                       f"psnr={psnr(filt, ref):.2f} dB")
    click.echo(f"wrote {output}")


def _feature_config(features, scales, frangi_alpha, frangi_beta, frangi_c,
                    bright_vessels, gvf_mu, gvf_iterations, gvf_dt) -> FeatureConfig:
    return FeatureConfig(
        select=tuple(features.split(",")),
        frangi=FrangiParams(scales=_parse_scales(scales), alpha=frangi_alpha,
                            beta=frangi_beta, c=frangi_c,
                            bright_vessels=bright_vessels),
        gvf=GvfParams(mu=gvf_mu, iterations=gvf_iterations, dt=gvf_dt),
    )


_FEATURE_OPTIONS = [
    click.option("--features", default="sobel,gvf,frangi", show_default=True),
    click.option("--scales", default="1,2,3,4", show_default=True),
    click.option("--frangi-alpha", type=float, default=0.5, show_default=True),
    click.option("--frangi-beta", type=float, default=0.5, show_default=True),
    click.option("--frangi-c", type=float, default=None),
    click.option("--bright-vessels/--dark-vessels", default=False, show_default=True),
    click.option("--gvf-mu", type=float, default=0.2, show_default=True),
    click.option("--gvf-iterations", type=int, default=80, show_default=True),
    click.option("--gvf-dt", type=float, default=None),
]


def _with_feature_options(fn):
    for option in reversed(_FEATURE_OPTIONS):
        fn = option(fn)
    return fn


@cli.command("features")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--output", required=True, type=click.Path())
@_with_feature_options
def features_cmd(input_path, output, features, scales, frangi_alpha, frangi_beta,
                 frangi_c, bright_vessels, gvf_mu, gvf_iterations, gvf_dt):
    """Compute feature volumes and write them plus a JSON manifest."""
    with _stage("features"):
        vol = read_vvol(input_path)
        config = _feature_config(features, scales, frangi_alpha, frangi_beta,
                                 frangi_c, bright_vessels, gvf_mu, gvf_iterations,
                                 gvf_dt)
        fs = build_feature_set(vol, config)
        manifest = save_feature_set(fs, output, vol.spacing)
    click.echo(f"wrote {manifest} ({', '.join(fs.names)})")


@cli.command("fuse")
@click.option("--input", "input_path", required=True, type=click.Path(),
              help="filtered volume (VVOL)")
@click.option("--features", "features_path", required=True, type=click.Path(),
              help="feature manifest.json or its directory")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="fusion params JSON")
@click.option("--weights", default=None, help="name=k,... raw weights")
@click.option("--gain", type=float, default=None)
@click.option("--output", required=True, type=click.Path())
def fuse_cmd(input_path, features_path, config_path, weights, gain, output):
    """Fuse features into per-voxel importance, color, and opacity grids."""
    weights = _parse_weights(weights) if weights else None
    with _stage("fuse"):
        vol = read_vvol(input_path)
        manifest = features_path
        if os.path.isdir(manifest):
            manifest = os.path.join(manifest, "manifest.json")
        fs = load_feature_set(manifest)
        config_obj = None
        if config_path:
            with open(config_path) as fh:
                config_obj = json.load(fh)
        params = _fusion_params(fs.names, config_obj, weights, gain)
        fused = fuse(vol, fs, params)
        _save_fused(fused, output)
    click.echo(f"wrote {output}")


@cli.command("render")
@click.option("--input", "input_path", type=click.Path(), default=None,
              help="volume VVOL (grayscale MIP)")
@click.option("--fused", "fused_path", type=click.Path(), default=None,
              help="fused directory from the fuse command")
@click.option("--mode", type=click.Choice(MODES), default="mip", show_default=True)
@click.option("--rotation", default="0,0,0", show_default=True)
@click.option("--size", default="256x256", show_default=True)
@click.option("--step", type=float, default=0.5, show_default=True)
@click.option("--output", required=True, type=click.Path())
def render_cmd(input_path, fused_path, mode, rotation, size, step, output):
    """Project a volume or fused volume to a PNG."""
    rotation = _parse_triple(rotation)
    size = _parse_size(size)
    if input_path is None and fused_path is None:
        raise click.UsageError("one of --input or --fused is required")
    with _stage("render"):
        volume = read_vvol(input_path) if input_path else None
        fused = _load_fused(fused_path) if fused_path else None
        image = _render(volume, fused, mode, rotation, size, step)
        write_png(image, output)
    click.echo(f"wrote {output}")


def _resolve(ctx, name, flag_value, config, *keys):
    """Flag value if given on the command line, else the config file's, else
    the flag default."""
    source = ctx.get_parameter_source(name)
    if source is not None and source.name == "COMMANDLINE":
        return flag_value
    node = config
    for key in keys:
        if not isinstance(node, dict) or key not in node:
            return flag_value
        node = node[key]
    return node


@cli.command("pipeline")
@click.option("--input", "input_path", type=click.Path(), default=None,
              help="frame directory or VVOL path")
@click.option("--output", "output_dir", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="pipeline config JSON (fusion params schema embedded)")
@click.option("--spacing", default="1,1,1", show_default=True)
@click.option("--sigma-spatial", type=float, default=2.0, show_default=True)
@click.option("--sigma-range", type=float, default=0.1, show_default=True)
@click.option("--window-radius", type=int, default=4, show_default=True)
@_with_feature_options
@click.option("--weights", default=None, help="name=k,... raw weights")
@click.option("--gain", type=float, default=None)
@click.option("--rotation", default="0,0,0", show_default=True)
@click.option("--mode", type=click.Choice(MODES), default="mip-color", show_default=True)
@click.option("--size", default="256x256", show_default=True)
@click.option("--step", type=float, default=0.5, show_default=True)
@click.option("--reference", type=click.Path(), default=None)
@click.pass_context
def pipeline(ctx, input_path, output_dir, config_path, spacing, sigma_spatial,
             sigma_range, window_radius, features, scales, frangi_alpha,
             frangi_beta, frangi_c, bright_vessels, gvf_mu, gvf_iterations,
             gvf_dt, weights, gain, rotation, mode, size, step, reference):
    """Run ingest -> filter -> features -> fuse -> render, writing all artifacts.

    Every setting can come from a JSON config file; explicit flags win.
    """
    config = {}
    if config_path:
        with _stage("config"):
            with open(config_path) as fh:
                config = json.load(fh)

    input_path = _resolve(ctx, "input_path", input_path, config, "input")
    output_dir = _resolve(ctx, "output_dir", output_dir, config, "output")
    if not input_path or not output_dir:
        raise click.UsageError("--input and --output are required "
                               "(flags or config file)")
    spacing = _resolve(ctx, "spacing", spacing, config, "spacing")
    sigma_spatial = _resolve(ctx, "sigma_spatial", sigma_spatial, config,
                             "bilateral", "sigma_spatial")
    sigma_range = _resolve(ctx, "sigma_range", sigma_range, config,
                           "bilateral", "sigma_range")
    window_radius = _resolve(ctx, "window_radius", window_radius, config,
                             "bilateral", "window_radius")
    features = _resolve(ctx, "features", features, config, "features", "select")
    scales = _resolve(ctx, "scales", scales, config, "features", "scales")
    bright_vessels = _resolve(ctx, "bright_vessels", bright_vessels, config,
                              "features", "bright_vessels")
    gvf_mu = _resolve(ctx, "gvf_mu", gvf_mu, config, "features", "gvf_mu")
    gvf_iterations = _resolve(ctx, "gvf_iterations", gvf_iterations, config,
                              "features", "gvf_iterations")
    rotation = _resolve(ctx, "rotation", rotation, config, "render", "rotation")
    mode = _resolve(ctx, "mode", mode, config, "render", "mode")
    size = _resolve(ctx, "size", size, config, "render", "size")
    step = _resolve(ctx, "step", step, config, "render", "step")
    reference = _resolve(ctx, "reference", reference, config, "reference")

    if isinstance(spacing, str):
        spacing = _parse_triple(spacing)
    else:
        spacing = tuple(float(v) for v in spacing)
    if isinstance(rotation, str):
        rotation = _parse_triple(rotation)
    else:
        rotation = tuple(float(v) for v in rotation)
    size = _parse_size(size) if isinstance(size, str) else tuple(int(v) for v in size)
    if isinstance(features, (list, tuple)):
        features = ",".join(features)
    if isinstance(scales, (list, tuple)):
        scales = ",".join(str(s) for s in scales)
    weights = _parse_weights(weights) if weights else None
    if mode not in MODES:
        raise click.UsageError(f"mode must be one of {MODES}, got {mode!r}")

    with _stage("input"):
        vol = _load_input_volume(input_path, spacing)
        os.makedirs(output_dir, exist_ok=True)
    with _stage("filter"):
        params = BilateralParams(sigma_spatial, sigma_range, window_radius)
        filt = bilateral_fast(vol, params)
        write_vvol(filt, os.path.join(output_dir, "filtered.vvol"))
        if reference:
            ref = read_vvol(reference)
            click.echo(f"input    vs reference: mse={mse(vol, ref):.6f} "
                       f"psnr={psnr(vol, ref):.2f} dB")
            click.echo(f"filtered vs reference: mse={mse(filt, ref):.6f} "
                       f"psnr={psnr(filt, ref):.2f} dB")
    with _stage("features"):
        feature_config = _feature_config(features, scales, frangi_alpha,
                                         frangi_beta, frangi_c, bright_vessels,
                                         gvf_mu, gvf_iterations, gvf_dt)
        fs = build_feature_set(filt, feature_config)
        save_feature_set(fs, os.path.join(output_dir, "features"), filt.spacing)
    with _stage("fuse"):
        fusion_params = _fusion_params(fs.names, config.get("fusion"),
                                       weights, gain)
        fused = fuse(filt, fs, fusion_params)
    with _stage("render"):
        image = _render(filt, fused, mode, rotation, size, step)
        write_png(image, os.path.join(output_dir, "render.png"))
    click.echo(f"pipeline complete: {output_dir}")


@cli.command("serve")
@click.option("--port", type=int, default=8787, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--max-upload-mb", type=int, default=256, show_default=True)
@click.option("--session-cap", type=int, default=4, show_default=True)
def serve(port, host, max_upload_mb, session_cap):
    """Run the local HTTP rendering service."""
    import uvicorn

    from .service import create_app

    app = create_app(max_upload_bytes=max_upload_mb * 1024 * 1024,
                     session_cap=session_cap)
    uvicorn.run(app, host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except StageFailure as exc:
        click.echo(f"error in stage '{exc.stage}': {exc.cause}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
