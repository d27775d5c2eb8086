import math

import numpy as np
import pytest
from scipy import ndimage

from vesselvis import (
    FeatureConfig,
    FrangiParams,
    GvfParams,
    Volume,
    build_feature_set,
    errors,
    frangi_vesselness,
    gvf_energy,
    gvf_feature,
    gvf_field,
    load_feature_set,
    make_phantom,
    save_feature_set,
    sobel_gradient,
)
from vesselvis.features import FeatureSet, _symmetric_eigvals3, hessian_at_scale


def smooth_random_volume(shape, sigma=2.0, seed=0):
    rng = np.random.default_rng(seed)
    data = ndimage.gaussian_filter(rng.random(shape), sigma)
    data -= data.min()
    data /= data.max()
    return Volume(data.astype(np.float32))


class TestSobel:
    def test_constant_volume(self):
        vol = Volume(np.full((8, 8, 8), 0.5, dtype=np.float32))
        field, mag = sobel_gradient(vol)
        assert np.all(field.u == 0) and np.all(field.v == 0) and np.all(field.w == 0)
        assert np.all(mag == 0)

    def test_linear_ramp_interior(self):
        # f = x/(nx-1) on 8^3. Central-difference oracle gives direction
        # (+1, 0, 0); the separable kernel (derivative [-1,0,1], smoothing
        # [1,2,1] twice) sums to 32, so the unnormalized response is 32*step.
        vol = make_phantom("ramp", (8, 8, 8), axis="x")
        step = 1.0 / 7.0
        field, mag = sobel_gradient(vol)
        interior = (slice(1, -1),) * 3
        assert np.allclose(field.u[interior], 32 * step, atol=1e-5)
        assert np.allclose(field.v[interior], 0, atol=1e-6)
        assert np.allclose(field.w[interior], 0, atol=1e-6)
        oracle = np.gradient(vol.data.astype(np.float64), axis=2)
        assert np.all(oracle[interior] > 0)
        assert np.allclose(mag[interior], 1.0, atol=1e-6)

    def test_axis_swap_symmetry(self):
        ramp_x = make_phantom("ramp", (8, 8, 8), axis="x")
        ramp_z = make_phantom("ramp", (8, 8, 8), axis="z")
        _, mag_x = sobel_gradient(ramp_x)
        field_z, mag_z = sobel_gradient(ramp_z)
        assert np.allclose(np.sort(mag_x.ravel()), np.sort(mag_z.ravel()), atol=1e-6)
        interior = (slice(1, -1),) * 3
        assert np.allclose(field_z.w[interior], 32 / 7, atol=1e-5)
        assert np.allclose(field_z.u[interior], 0, atol=1e-6)

    def test_permutation_commutes(self):
        vol = smooth_random_volume((10, 10, 10), seed=5)
        _, mag = sobel_gradient(vol)
        swapped = Volume(np.ascontiguousarray(vol.data.transpose(2, 1, 0)))
        _, mag_swapped = sobel_gradient(swapped)
        assert np.allclose(mag_swapped, mag.transpose(2, 1, 0), atol=1e-6)

    def test_too_small(self):
        with pytest.raises(errors.VolumeTooSmall):
            sobel_gradient(Volume(np.zeros((2, 4, 4), dtype=np.float32)))


class TestGvf:
    def test_zero_edge_map_fixed_point(self):
        vol = Volume(np.zeros((8, 8, 8), dtype=np.float32))
        field = gvf_field(vol, GvfParams(iterations=20))
        assert np.all(field.u == 0) and np.all(field.v == 0) and np.all(field.w == 0)

    def test_data_term_dominates_at_strong_gradients(self):
        # With mu tiny the energy is dominated by the fidelity term, so the
        # field stays pinned to grad(f) wherever |grad f|^2 is large.
        vol = make_phantom("step", (12, 12, 12), axis="x", position=6)
        params = GvfParams(mu=1e-4, iterations=200, dt=1.0)
        field = gvf_field(vol, params)
        f = vol.data.astype(np.float64)
        fx = np.gradient(f, axis=2)
        b = fx**2
        strong = b >= 0.9 * b.max()
        assert np.abs(field.u - fx)[strong].max() <= 1e-3 * np.abs(fx).max()

    def test_step_edge_field_points_inward(self):
        # Ridge edge map at plane x=12: along x the converged field is the
        # exact minimizer of the 1D energy, solvable as a linear system
        # (the 3D problem is y/z-invariant so it reduces to 1D).
        n = 24
        x = np.arange(n)
        ridge = np.exp(-((x - 12.0) ** 2) / (2 * 2.0**2))
        data = np.broadcast_to(ridge[None, None, :], (8, 8, n)).astype(np.float32)
        edge = Volume(data.copy())
        params = GvfParams(iterations=2000)
        field = gvf_field(edge, params)
        profile = field.u[4, 4, :]

        fx = np.gradient(ridge)
        b = fx**2
        laplacian = np.zeros((n, n))
        for i in range(n):
            for j in (i - 1, i + 1):
                if 0 <= j < n:
                    laplacian[i, i] -= 1.0
                    laplacian[i, j] += 1.0
        exact = np.linalg.solve(-params.mu * laplacian + np.diag(b), b * fx)

        band = np.abs(exact) > 0.05 * np.abs(exact).max()
        assert np.all(np.sign(profile[band]) == np.sign(exact[band]))
        assert np.all(profile[8:12] > 0)   # left of the ridge points right
        assert np.all(profile[13:17] < 0)  # right of the ridge points left
        rel = np.linalg.norm(profile - exact) / np.linalg.norm(exact)
        assert rel < 0.05

    def test_energy_non_increasing(self):
        rng = np.random.default_rng(7)
        edge = Volume(rng.random((16, 16, 16)).astype(np.float32))
        params = GvfParams()
        field = None
        energies = []
        for _ in range(80):
            field = gvf_field(edge, GvfParams(iterations=1), initial=field)
            energies.append(gvf_energy(field, edge, params.mu))
        diffs = np.diff(energies)
        assert np.all(diffs <= 1e-12 * abs(energies[0]))

    def test_unstable_timestep_rejected(self):
        with pytest.raises(errors.UnstableTimestep):
            GvfParams(mu=0.2, dt=1.0)  # bound is 1/(6*0.2) = 0.8333

    def test_gvf_feature_contract(self):
        const = Volume(np.full((8, 8, 8), 0.3, dtype=np.float32))
        assert np.all(gvf_feature(const, GvfParams(iterations=5)) == 0)

        cyl = make_phantom("cylinder", (24, 24, 24), radius=5)
        feat = gvf_feature(cyl, GvfParams(iterations=30))
        assert feat.min() >= 0 and feat.max() == pytest.approx(1.0, abs=1e-6)

    def test_gvf_feature_ridge_near_wall(self):
        cyl = make_phantom("cylinder", (24, 24, 24), radius=5)
        feat = gvf_feature(cyl, GvfParams(iterations=30))
        _, sobel_mag = sobel_gradient(cyl)
        mid = feat[12]  # central z-slice
        radius = np.hypot(*np.meshgrid(np.arange(24) - 12, np.arange(24) - 12,
                                       indexing="ij"))
        peak_r = radius.ravel()[np.argmax(mid.ravel())]
        sobel_peak_r = radius.ravel()[np.argmax(sobel_mag[12].ravel())]
        assert abs(peak_r - sobel_peak_r) <= 2.0


class TestFrangi:
    def test_constant_volume(self):
        vol = Volume(np.full((16, 16, 16), 0.7, dtype=np.float32))
        out = frangi_vesselness(vol, FrangiParams(scales=(1.0, 2.0), bright_vessels=True))
        assert np.all(out == 0)

    def brute_force_response(self, vol, sigma, alpha, beta, c, probe):
        """Independent probe: finite-difference Hessian of the smoothed
        phantom, LAPACK eigenvalues, scalar vesselness formula."""
        smoothed = ndimage.gaussian_filter(vol.data.astype(np.float64), sigma)
        pz, py, px = probe
        hess = np.zeros((3, 3))
        # axes here are (z, y, x) -> matrix in (x, y, z) ordering below
        for (a, b_) in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]:
            axes = [2, 1, 0]  # x, y, z -> array axes
            g = np.gradient(smoothed, axis=axes[a])
            gg = np.gradient(g, axis=axes[b_])
            hess[a, b_] = hess[b_, a] = gg[pz, py, px]
        hess *= sigma**2
        eigs = np.linalg.eigvalsh(hess)
        l1, l2, l3 = eigs[np.argsort(np.abs(eigs))]
        if l2 > 0 or l3 > 0 or abs(l3) == 0:
            return 0.0
        ra2 = (l2 / l3) ** 2
        rb2 = l1**2 / abs(l2 * l3)
        s2 = l1**2 + l2**2 + l3**2
        return ((1 - math.exp(-ra2 / (2 * alpha**2)))
                * math.exp(-rb2 / (2 * beta**2))
                * (1 - math.exp(-s2 / (2 * c**2))))

    def test_cylinder_versus_background_and_sphere(self):
        params = FrangiParams(scales=(1.0, 2.0, 3.0, 4.0), bright_vessels=True)
        cyl = make_phantom("cylinder", (32, 32, 32), radius=3)
        sph = make_phantom("sphere", (32, 32, 32), radius=3)
        v_cyl = frangi_vesselness(cyl, params)
        v_sph = frangi_vesselness(sph, params)

        axis_response = v_cyl[16, 16, 16]
        x, y = np.meshgrid(np.arange(32) - 16, np.arange(32) - 16, indexing="ij")
        background = (x**2 + y**2) >= 7.0**2  # >= 4 voxels beyond the surface
        bg_response = v_cyl[:, background].max()
        sphere_response = v_sph[16, 16, 16]

        assert axis_response >= 5 * max(bg_response, 1e-12)
        assert sphere_response < 0.5 * axis_response

        # the independent probe agrees on the discrimination
        probes = []
        for vol in (cyl, sph):
            best = 0.0
            for sigma in params.scales:
                hess_c = math.sqrt(max(
                    (hessian_at_scale(vol.data.astype(np.float64), sigma)["xx"] ** 2).max(),
                    1e-30))
                response = self.brute_force_response(
                    vol, sigma, params.alpha, params.beta,
                    self._half_max_frobenius(vol, sigma), (16, 16, 16))
                best = max(best, response)
            probes.append(best)
        assert probes[0] > 2 * probes[1]  # cylinder beats sphere at the center

    def _half_max_frobenius(self, vol, sigma):
        h = hessian_at_scale(vol.data.astype(np.float64), sigma)
        frob = np.sqrt(h["xx"]**2 + h["yy"]**2 + h["zz"]**2
                       + 2 * (h["xy"]**2 + h["xz"]**2 + h["yz"]**2))
        return max(float(frob.max()) / 2.0, 1e-12)

    def test_offset_invariance(self):
        params = FrangiParams(scales=(1.0, 2.0), bright_vessels=True)
        cyl = make_phantom("cylinder", (24, 24, 24), radius=3, value=0.7)
        shifted = Volume(np.clip(cyl.data + 0.2, 0, 1))
        base = frangi_vesselness(cyl, params)
        offset = frangi_vesselness(shifted, params)
        assert np.allclose(base, offset, atol=1e-5)

    def test_dark_vessel_polarity(self):
        params_dark = FrangiParams(scales=(1.0, 2.0), bright_vessels=False)
        dark_cyl = make_phantom("cylinder", (24, 24, 24), radius=3, value=0.0,
                                background=1.0)
        response = frangi_vesselness(dark_cyl, params_dark)
        assert response[12, 12, 12] == pytest.approx(1.0, abs=1e-6)

    def test_permutation_commutes(self):
        params = FrangiParams(scales=(1.0, 2.0), bright_vessels=True)
        vol = smooth_random_volume((12, 12, 12), seed=9)
        out = frangi_vesselness(vol, params)
        swapped = Volume(np.ascontiguousarray(vol.data.transpose(2, 1, 0)))
        out_swapped = frangi_vesselness(swapped, params)
        assert np.allclose(out_swapped, out.transpose(2, 1, 0), atol=1e-6)

    def test_hessian_gradient_check(self):
        # Gaussian-derivative Hessian vs central differences of the smoothed
        # quadratic phantom; both are exact for polynomials, so interior
        # agreement is tight.
        n = 16
        z, y, x = np.meshgrid(np.arange(n), np.arange(n), np.arange(n),
                              indexing="ij")
        xf, yf, zf = x / (n - 1), y / (n - 1), z / (n - 1)
        poly = (0.15 * xf**2 + 0.1 * yf**2 + 0.05 * zf**2 + 0.1 * xf * yf
                + 0.08 * yf * zf + 0.06 * xf * zf + 0.1 * xf + 0.05)
        vol = Volume(poly.astype(np.float32))
        sigma = 1.0
        hess = hessian_at_scale(vol.data.astype(np.float64), sigma)
        smoothed = ndimage.gaussian_filter(vol.data.astype(np.float64), sigma)

        def second_diff(f, axis):
            out = np.zeros_like(f)
            inner = [slice(1, -1)] * 3
            lo = list(inner)
            hi = list(inner)
            lo[axis] = slice(0, -2)
            hi[axis] = slice(2, None)
            out[tuple(inner)] = (f[tuple(hi)] - 2 * f[tuple(inner)] + f[tuple(lo)])
            return out

        def cross_diff(f, ax1, ax2):
            return np.gradient(np.gradient(f, axis=ax1), axis=ax2)

        margin = (slice(6, -6),) * 3
        checks = {
            "xx": second_diff(smoothed, 2), "yy": second_diff(smoothed, 1),
            "zz": second_diff(smoothed, 0), "xy": cross_diff(smoothed, 2, 1),
            "xz": cross_diff(smoothed, 2, 0), "yz": cross_diff(smoothed, 1, 0),
        }
        worst = max(
            np.abs(hess[key] - sigma**2 * ref)[margin].max()
            for key, ref in checks.items()
        )
        assert worst <= 1e-4

    def test_eigensolver_matches_lapack(self):
        rng = np.random.default_rng(5)
        mats = rng.standard_normal((2000, 3, 3))
        mats = (mats + mats.transpose(0, 2, 1)) / 2
        l1, l2, l3 = _symmetric_eigvals3(
            mats[:, 0, 0], mats[:, 0, 1], mats[:, 0, 2],
            mats[:, 1, 1], mats[:, 1, 2], mats[:, 2, 2],
        )
        ref = np.linalg.eigvalsh(mats)
        ref = np.take_along_axis(ref, np.argsort(np.abs(ref), axis=1), axis=1)
        assert np.abs(np.stack([l1, l2, l3], axis=1) - ref).max() < 1e-10

    def test_too_small_for_scale(self):
        with pytest.raises(errors.VolumeTooSmall):
            frangi_vesselness(Volume(np.zeros((6, 6, 6), dtype=np.float32)),
                              FrangiParams(scales=(4.0,)))

    def test_param_validation(self):
        with pytest.raises(ValueError):
            FrangiParams(scales=())
        with pytest.raises(ValueError):
            FrangiParams(scales=(2.0, 1.0))
        with pytest.raises(ValueError):
            FrangiParams(alpha=0.0)
        with pytest.raises(ValueError):
            FrangiParams(c=-1.0)


class TestFeatureSet:
    def test_default_build_has_three_features(self):
        vol = make_phantom("cylinder", (16, 16, 16), radius=3)
        fs = build_feature_set(vol, FeatureConfig(
            frangi=FrangiParams(scales=(1.0, 2.0), bright_vessels=True),
            gvf=GvfParams(iterations=10),
        ))
        assert fs.names == ("sobel", "gvf", "frangi")
        assert fs.n == 3
        for _, data in fs.features:
            assert data.shape == (16, 16, 16)
            assert data.min() >= 0 and data.max() <= 1

    def test_subset_selection(self):
        vol = make_phantom("cylinder", (16, 16, 16), radius=3)
        fs = build_feature_set(vol, FeatureConfig(
            select=("frangi",),
            frangi=FrangiParams(scales=(1.0, 2.0), bright_vessels=True),
        ))
        assert fs.names == ("frangi",)

    def test_all_features_peak_near_cylinder(self):
        vol = make_phantom("cylinder", (24, 24, 24), radius=4)
        fs = build_feature_set(vol, FeatureConfig(
            frangi=FrangiParams(scales=(1.0, 2.0, 3.0), bright_vessels=True),
            gvf=GvfParams(iterations=30),
        ))
        radius = np.hypot(*np.meshgrid(np.arange(24) - 12, np.arange(24) - 12,
                                       indexing="ij"))
        for name, expected_r in (("sobel", 4.0), ("gvf", 4.0), ("frangi", 0.0)):
            mid = fs.array(name)[12]
            peak_r = radius.ravel()[np.argmax(mid.ravel())]
            assert abs(peak_r - expected_r) <= 2.0, name

    def test_invariants_enforced(self):
        good = np.zeros((4, 4, 4), dtype=np.float32)
        with pytest.raises(ValueError):
            FeatureSet((4, 4, 4), ())
        with pytest.raises(ValueError):
            FeatureSet((4, 4, 4), (("a", good), ("a", good)))
        with pytest.raises(errors.DimsMismatch):
            FeatureSet((4, 4, 4), (("a", np.zeros((3, 4, 4), dtype=np.float32)),))
        with pytest.raises(ValueError):
            FeatureSet((4, 4, 4), (("a", np.full((4, 4, 4), 1.5, dtype=np.float32)),))

    def test_save_load_round_trip(self, tmp_path):
        vol = make_phantom("cylinder", (12, 12, 12), radius=3)
        fs = build_feature_set(vol, FeatureConfig(
            select=("sobel", "frangi"),
            frangi=FrangiParams(scales=(1.0, 2.0), bright_vessels=True),
        ))
        manifest = save_feature_set(fs, tmp_path / "feats", vol.spacing)
        back = load_feature_set(manifest)
        assert back.names == fs.names
        assert back.source_dims == fs.source_dims
        for name in fs.names:
            assert np.array_equal(back.array(name), fs.array(name))
