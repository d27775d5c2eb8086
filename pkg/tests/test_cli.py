import json
import os

import numpy as np
import pytest
from PIL import Image

from vesselvis import Volume, make_phantom, read_vvol, write_vvol
from vesselvis.cli import main


def run_cli(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture
def noisy_cylinder(tmp_path):
    path = tmp_path / "noisy.vvol"
    code = run_cli("phantom", "--kind", "noisy", "--dims", "24,24,24",
                   "--radius", "4", "--background", "0.4", "--seed", "7",
                   "--output", path)
    assert code == 0
    return path


class TestPhantomCommand:
    def test_cylinder_geometry(self, tmp_path):
        path = tmp_path / "cyl.vvol"
        assert run_cli("phantom", "--kind", "cylinder", "--dims", "32,32,32",
                       "--radius", "3", "--output", path) == 0
        vol = read_vvol(path)
        for k in range(32):
            assert vol.data[k, 16, 16] == 1.0
        assert vol.data[0, 0, 0] == 0.0

    def test_sphere_geometry(self, tmp_path):
        path = tmp_path / "sph.vvol"
        assert run_cli("phantom", "--kind", "sphere", "--dims", "32,32,32",
                       "--radius", "3", "--output", path) == 0
        vol = read_vvol(path)
        assert vol.data[16, 16, 16] == 1.0
        assert vol.data[0, 0, 0] == 0.0

    def test_noisy_seed_determinism(self, tmp_path):
        a = tmp_path / "a.vvol"
        b = tmp_path / "b.vvol"
        for path in (a, b):
            assert run_cli("phantom", "--kind", "noisy", "--dims", "16,16,16",
                           "--radius", "3", "--seed", "42", "--output", path) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_geometry_is_stage_failure(self, tmp_path):
        assert run_cli("phantom", "--kind", "cylinder", "--radius", "-1",
                       "--output", tmp_path / "x.vvol") == 2


class TestFilterCommand:
    def test_writes_output_and_metrics(self, tmp_path, noisy_cylinder, capsys):
        clean = tmp_path / "clean.vvol"
        run_cli("phantom", "--kind", "cylinder", "--dims", "24,24,24",
                "--radius", "4", "--background", "0.4", "--output", clean)
        out = tmp_path / "filt.vvol"
        code = run_cli("filter", "--input", noisy_cylinder, "--output", out,
                       "--reference", clean)
        assert code == 0
        captured = capsys.readouterr().out
        assert "psnr" in captured and "mse" in captured
        assert out.exists()

    def test_direct_method_flag(self, tmp_path, noisy_cylinder):
        out = tmp_path / "filt.vvol"
        assert run_cli("filter", "--input", noisy_cylinder, "--output", out,
                       "--method", "direct", "--sigma-spatial", "1",
                       "--window-radius", "2") == 0
        assert read_vvol(out).dims == (24, 24, 24)


class TestFeatureAndFuseCommands:
    def test_features_then_fuse_then_render(self, tmp_path, noisy_cylinder):
        filt = tmp_path / "filt.vvol"
        assert run_cli("filter", "--input", noisy_cylinder, "--output", filt) == 0
        featdir = tmp_path / "features"
        assert run_cli("features", "--input", filt, "--output", featdir,
                       "--scales", "1,2", "--bright-vessels",
                       "--gvf-iterations", "20") == 0
        manifest = json.loads((featdir / "manifest.json").read_text())
        assert [f["name"] for f in manifest["features"]] == ["sobel", "gvf", "frangi"]
        assert manifest["source_dims"] == [24, 24, 24]

        fuseddir = tmp_path / "fused"
        assert run_cli("fuse", "--input", filt, "--features", featdir,
                       "--weights", "frangi=0.8,sobel=0.1,gvf=0.1",
                       "--output", fuseddir) == 0
        assert (fuseddir / "opacity.vvol").exists()

        png = tmp_path / "out.png"
        assert run_cli("render", "--fused", fuseddir, "--mode", "composite",
                       "--rotation", "10,20,0", "--size", "48x48",
                       "--output", png) == 0
        img = np.asarray(Image.open(png))
        assert img.shape == (48, 48, 4)

    def test_render_gray_mip_from_volume(self, tmp_path, noisy_cylinder):
        png = tmp_path / "mip.png"
        assert run_cli("render", "--input", noisy_cylinder, "--mode", "mip",
                       "--size", "32x32", "--output", png) == 0
        img = np.asarray(Image.open(png))
        assert np.array_equal(img[..., 0], img[..., 1])


class TestPipelineCommand:
    def pipeline_args(self, source, outdir):
        return ("pipeline", "--input", source, "--output", outdir,
                "--weights", "frangi=0.8,sobel=0.1,gvf=0.1",
                "--bright-vessels", "--scales", "1,2",
                "--gvf-iterations", "20", "--mode", "mip-color",
                "--size", "64x64", "--rotation", "0,30,0")

    def test_happy_path_artifacts(self, tmp_path, noisy_cylinder):
        outdir = tmp_path / "out"
        assert run_cli(*self.pipeline_args(noisy_cylinder, outdir)) == 0
        assert (outdir / "filtered.vvol").exists()
        assert (outdir / "features" / "manifest.json").exists()
        assert (outdir / "features" / "frangi.vvol").exists()
        assert (outdir / "render.png").exists()

    def test_deterministic_output(self, tmp_path, noisy_cylinder):
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        assert run_cli(*self.pipeline_args(noisy_cylinder, out1)) == 0
        assert run_cli(*self.pipeline_args(noisy_cylinder, out2)) == 0
        assert (out1 / "render.png").read_bytes() == (out2 / "render.png").read_bytes()
        assert (out1 / "filtered.vvol").read_bytes() == (out2 / "filtered.vvol").read_bytes()

    def test_missing_input_names_stage(self, tmp_path, capsys):
        code = run_cli("pipeline", "--input", tmp_path / "missing",
                       "--output", tmp_path / "out")
        assert code == 2
        assert "input" in capsys.readouterr().err

    def test_config_file_drives_pipeline(self, tmp_path, noisy_cylinder):
        config = {
            "input": str(noisy_cylinder),
            "output": str(tmp_path / "cfg_out"),
            "bilateral": {"sigma_spatial": 2.0, "sigma_range": 0.1,
                          "window_radius": 4},
            "features": {"select": ["sobel", "frangi"], "scales": [1, 2],
                         "bright_vessels": True},
            "fusion": {"weights": {"frangi": 3, "sobel": 1},
                       "colors": {"frangi": {"h": 0, "s": 0.9}},
                       "gain": 1.0},
            "render": {"mode": "mip-color", "rotation": [0, 45, 0],
                       "size": [48, 48]},
        }
        config_path = tmp_path / "pipeline.json"
        config_path.write_text(json.dumps(config))
        assert run_cli("pipeline", "--config", config_path) == 0
        outdir = tmp_path / "cfg_out"
        assert (outdir / "render.png").exists()
        manifest = json.loads((outdir / "features" / "manifest.json").read_text())
        assert [f["name"] for f in manifest["features"]] == ["sobel", "frangi"]
        # an explicit flag overrides the config file
        assert run_cli("pipeline", "--config", config_path, "--output",
                       tmp_path / "cfg_out2", "--size", "24x24") == 0
        img = Image.open(tmp_path / "cfg_out2" / "render.png")
        assert img.size == (24, 24)

    def test_config_without_input_is_usage_error(self, tmp_path):
        config_path = tmp_path / "empty.json"
        config_path.write_text("{}")
        assert run_cli("pipeline", "--config", config_path) == 1

    def test_ingest_from_frames(self, tmp_path):
        framedir = tmp_path / "frames"
        framedir.mkdir()
        rng = np.random.default_rng(0)
        for k in range(4):
            arr = rng.integers(0, 256, (8, 6)).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(framedir / f"frame_{k:03d}.png")
        out = tmp_path / "vol.vvol"
        assert run_cli("ingest", "--input", framedir, "--spacing", "0.5,0.5,1.5",
                       "--output", out) == 0
        vol = read_vvol(out)
        assert vol.dims == (6, 8, 4)
        assert vol.spacing == pytest.approx((0.5, 0.5, 1.5))


class TestExitCodes:
    def test_usage_error_is_one(self):
        assert run_cli("render", "--mode", "bogus", "--output", "/tmp/x.png") == 1
        assert run_cli("no-such-command") == 1

    def test_bad_flag_value_is_one(self, tmp_path):
        assert run_cli("phantom", "--kind", "cylinder", "--dims", "1,2",
                       "--output", tmp_path / "x.vvol") == 1

    def test_stage_failure_is_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.vvol"
        bad.write_bytes(b"XXXX" + b"\x00" * 64)
        assert run_cli("filter", "--input", bad, "--output", tmp_path / "o.vvol") == 2
        assert "filter" in capsys.readouterr().err

    def test_help_is_zero(self):
        assert run_cli("--help") == 0
