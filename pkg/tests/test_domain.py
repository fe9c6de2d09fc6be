import math

import numpy as np
import pytest

from nsp_stab.domain import DomainSpec, build_grid, boundary_chart, coordinate_map
from nsp_stab.domain import charts as charts_mod
from nsp_stab.domain import coords
from nsp_stab.domain import ops
from nsp_stab.errors import DegenerateMap, InvalidSpec, OutOfCollar, UnsupportedBoundary


def annulus(n=64, r0=1.0, r1=2.0):
    return build_grid(DomainSpec.annulus(r0, r1, n))


class TestBuildGrid:
    def test_radial_annulus_geometry(self):
        g = annulus(64)
        assert g.shape == (64,)
        assert g.boundary_mask[0] and g.boundary_mask[-1]
        assert np.count_nonzero(g.boundary_mask) == 2
        assert g.normal[0, 0] == -1.0 and g.normal[0, -1] == 1.0

    def test_unit_cube_weights_exact(self):
        g = build_grid(DomainSpec.box((1.0, 1.0, 1.0), 16))
        assert g.shape == (16, 16, 16)
        assert abs(np.sum(g.weights) - 1.0) < 1e-3
        norms = np.sqrt(np.sum(g.normal**2, axis=0))[g.boundary_mask]
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_annulus_weight_sum_second_order(self):
        errs = []
        for n in (64, 128):
            g = annulus(n)
            errs.append(abs(np.sum(g.weights) - g.volume) / g.volume)
        assert math.log2(errs[0] / errs[1]) > 1.8

    def test_invalid_specs_rejected(self):
        with pytest.raises(InvalidSpec):
            build_grid(DomainSpec.annulus(2.0, 1.0, 64))
        with pytest.raises(InvalidSpec):
            build_grid(DomainSpec.annulus(0.0, 1.0, 64))
        with pytest.raises(InvalidSpec):
            build_grid(DomainSpec.annulus(1.0, 2.0, 7))
        with pytest.raises(InvalidSpec):
            build_grid(DomainSpec.annulus(1.0, 2.0, 64, radial=False))

    def test_masks_partition_nodes(self):
        for spec in (DomainSpec.annulus(1.0, 2.0, 32),
                     DomainSpec.box((1.0, 2.0, 0.5), (8, 12, 10))):
            g = build_grid(spec)
            assert np.all(g.boundary_mask ^ g.interior_mask)

    def test_periodic_axis_has_no_boundary(self):
        g = build_grid(DomainSpec.box((1.0, 1.0, 1.0), 8, walls=(True, True, False)))
        assert not np.any(g.boundary_mask[:, :, 0] & g.boundary_mask[:, :, -1]
                          & (g.normal[2] != 0.0))
        assert abs(np.sum(g.weights) - 1.0) < 1e-12


class TestOps:
    def test_gradient_and_laplacian_radial(self):
        g = annulus(128)
        f = np.sin(2.0 * g.r)
        df = ops.grad(g, f)[0]
        assert np.max(np.abs(df - 2.0 * np.cos(2.0 * g.r))) < 2e-3
        lap = ops.laplacian(g, f)
        exact = -4.0 * np.sin(2.0 * g.r) + (2.0 / g.r) * 2.0 * np.cos(2.0 * g.r)
        assert np.max(np.abs(lap - exact)) < 2e-2

    def test_conservative_divergence_telescopes(self):
        g = annulus(64)
        u = np.zeros((1, 64))
        u[0, 1:-1] = np.sin(np.pi * (g.r[1:-1] - 1.0)) * g.r[1:-1]
        total = g.integrate(ops.div_conservative(g, u))
        assert abs(total) < 1e-13

    def test_box_conservative_divergence(self):
        g = build_grid(DomainSpec.box((1.0, 1.0, 1.0), 12))
        x, y, z = np.meshgrid(*g.axes, indexing="ij")
        u = np.stack([np.sin(np.pi * x) * y * (1 - y) * z * (1 - z),
                      np.zeros_like(x), np.zeros_like(x)])
        for c in range(3):
            u[c][g.boundary_mask] = 0.0
        assert abs(g.integrate(ops.div_conservative(g, u))) < 1e-14


class TestBoundaryChart:
    def test_plane_chart_is_flat(self):
        spec = DomainSpec.box((1.0, 1.0, 1.0), 16)
        chart = boundary_chart(spec, "z1")
        assert np.all(chart.m == 0.0) and np.all(chart.mp == 0.0)
        assert charts_mod.frame_orthonormality_residual(chart) < 1e-14

    def test_sphere_frame_orthonormal(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        for name in ("inner:z", "outer:z", "outer:x"):
            chart = boundary_chart(spec, name)
            assert charts_mod.frame_orthonormality_residual(chart) < 1e-10

    def test_sphere_normalization_and_frenet_fd_order(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        res = {}
        for n in (32, 64):
            chart = boundary_chart(spec, "outer:z", n_xi=n, n_zeta=n)
            res[n] = (charts_mod.chart_normalization_residual(chart),
                      charts_mod.frenet_fd_residual(chart))
        for i in range(2):
            order = math.log2(res[32][i] / res[64][i])
            assert 1.8 <= order <= 2.2

    def test_unknown_boundary_rejected(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        with pytest.raises(UnsupportedBoundary):
            boundary_chart(spec, "top")
        box = DomainSpec.box((1.0, 1.0, 1.0), 16)
        with pytest.raises(UnsupportedBoundary):
            boundary_chart(box, "w0")

    def test_two_band_charts_cover_sphere(self):
        assert charts_mod.sphere_coverage_margin() > 0.05


class TestCoordinateMap:
    def test_jacobian_at_wall_equals_zeta_norm(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        cmap = coordinate_map(boundary_chart(spec, "outer:z"), 0.25)
        assert np.max(np.abs(cmap.J[:, :, -1] - cmap.chart.z_zeta_norm)) < 1e-13

    def test_plane_jacobian_constant(self):
        spec = DomainSpec.box((1.0, 1.0, 1.0), 16)
        cmap = coordinate_map(boundary_chart(spec, "x0"), 0.25)
        assert np.max(np.abs(cmap.J - 1.0)) < 1e-14

    def test_jacobian_identity_machine_precision(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        for name in ("inner:z", "outer:x"):
            cmap = coordinate_map(boundary_chart(spec, name), 0.25)
            assert coords.jacobian_expansion_residual(cmap) < 1e-14
            assert np.min(cmap.J) > 0.0

    def test_jacobian_cross_product_order(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        errs = {}
        for n in (24, 48):
            cmap = coordinate_map(boundary_chart(spec, "outer:z", n_xi=n, n_zeta=n),
                                  0.4, n_r=9)
            errs[n] = coords.jacobian_cross_residual(cmap)
        assert 1.8 <= math.log2(errs[24] / errs[48]) <= 2.2

    def test_chain_rule_identity_order(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        errs = {}
        for n in (24, 48):
            cmap = coordinate_map(boundary_chart(spec, "inner:z", n_xi=n, n_zeta=n),
                                  0.2, n_r=9)
            errs[n] = coords.chain_rule_residual(cmap)
        assert 1.8 <= math.log2(errs[24] / errs[48]) <= 2.2

    def test_depth_shrinks_until_regular(self):
        # requesting a collar deeper than the outer radius forces a shrink
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        cmap = coordinate_map(boundary_chart(spec, "outer:z"), 5.0)
        assert cmap.depth < 5.0 and np.min(cmap.J) > 0.0

    def test_degenerate_chart_raises(self):
        import dataclasses

        spec = DomainSpec.box((1.0, 1.0, 1.0), 16)
        chart = boundary_chart(spec, "x0")
        bad = dataclasses.replace(chart, z_zeta_norm=-np.ones_like(chart.z_zeta_norm))
        with pytest.raises(DegenerateMap):
            coordinate_map(bad, 0.25)


class TestFrameDerivatives:
    def setup_method(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        self.cmap = coordinate_map(boundary_chart(spec, "outer:z"), 0.25)

    def test_constant_field_zero(self):
        f = np.ones(self.cmap.shape)
        (t1, t2), nr = coords.frame_derivatives(f, self.cmap)
        for arr in (t1, t2, nr):
            assert np.max(np.abs(arr)) < 1e-13

    def test_signed_distance_unit_normal_derivative(self):
        radius = np.sqrt(np.sum(self.cmap.points**2, axis=0))
        f = radius - 2.0
        (t1, t2), nr = coords.frame_derivatives(f, self.cmap)
        assert np.max(np.abs(nr - 1.0)) < 1e-12
        assert np.max(np.abs(t1)) < 1e-12 and np.max(np.abs(t2)) < 1e-12

    def test_gradient_reconstruction_order(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        errs = {}
        for n in (24, 48):
            cmap = coordinate_map(boundary_chart(spec, "outer:z", n_xi=n, n_zeta=n),
                                  0.4, n_r=2 * n // 6)
            x, y, z = cmap.points
            f = np.sin(1.3 * x + 0.7 * y - 0.4 * z)
            grad = coords.cartesian_gradient(f, cmap)
            c = np.cos(1.3 * x + 0.7 * y - 0.4 * z)
            exact = np.stack([1.3 * c, 0.7 * c, -0.4 * c])
            errs[n] = np.max(np.abs(grad - exact))
        assert 1.8 <= math.log2(errs[24] / errs[48]) <= 2.2

    def test_shape_mismatch_rejected(self):
        with pytest.raises(OutOfCollar):
            coords.frame_derivatives(np.zeros((3, 3, 3)), self.cmap)


class TestCommutator:
    def test_constant_not_applicable(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        cmap = coordinate_map(boundary_chart(spec, "outer:z"), 0.25)
        assert coords.commutator_residual(np.ones(cmap.shape), cmap) is None

    def test_flat_chart_commutes_to_roundoff(self):
        spec = DomainSpec.box((1.0, 1.0, 1.0), 16)
        cmap = coordinate_map(boundary_chart(spec, "y0", n_xi=24, n_zeta=24), 0.25)
        x, y, z = cmap.points
        f = np.sin(2.0 * x) * np.cos(1.0 * y) + z**2
        ratio = coords.commutator_residual(f, cmap)
        assert ratio is not None and ratio < 1e-2 * cmap.h[0]

    def test_sphere_ratio_stable_under_refinement(self):
        spec = DomainSpec.annulus(1.0, 2.0, 64)
        rng = np.random.default_rng(11)
        coeffs = rng.normal(size=(20, 3))
        maxima = {}
        for n in (24, 48):
            cmap = coordinate_map(boundary_chart(spec, "outer:z", n_xi=n, n_zeta=n),
                                  0.4, n_r=9 if n == 24 else 17)
            worst = 0.0
            for a in coeffs:
                x, y, z = cmap.points
                f = np.sin(a[0] * x + a[1] * y + a[2] * z)
                r = coords.commutator_residual(f, cmap)
                worst = max(worst, r)
            maxima[n] = worst
        assert np.isfinite(maxima[48])
        assert maxima[48] <= 1.5 * maxima[24] + 0.05
