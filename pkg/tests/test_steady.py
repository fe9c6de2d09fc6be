import math

import numpy as np
import pytest

from nsp_stab.domain import DomainSpec, build_grid
from nsp_stab import elliptic as el
from nsp_stab import steady as st
from nsp_stab.errors import NonpositiveDensity

GAMMA = 5.0 / 3.0


def radial_grid(n=128):
    return build_grid(DomainSpec.annulus(1.0, 2.0, n))


def dense_neumann_laplacian(grid):
    n = grid.n_nodes
    M = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j] = el.laplacian_neumann(grid, e)
    return M


class TestSolveSteady:
    def test_constant_background_exact(self):
        g = radial_grid()
        ss = st.solve_steady(st.constant_background(g, 1.0), GAMMA, g)
        assert abs(ss.c - GAMMA / (GAMMA - 1.0)) < 1e-12
        assert np.max(np.abs(ss.rho - 1.0)) < 1e-12
        assert np.max(np.abs(ss.phi)) < 1e-12
        r = ss.residuals
        for val in (r.momentum, r.poisson, r.mass, r.boundary_neumann):
            assert val <= 1e-12

    def test_large_variation_bump(self):
        g = radial_grid()
        ss = st.solve_steady(st.bump_background(g, 0.5), GAMMA, g)
        assert np.min(ss.rho) > 0.0
        r = ss.residuals
        assert r.momentum <= 1e-8 * (1.0 + 1.5)
        assert r.poisson <= 1e-8 * (1.0 + 1.5)
        assert r.mass <= 1e-10
        assert ss.enthalpy_residual() < 1e-12

    def test_isothermal_branch(self):
        g = radial_grid(64)
        ss = st.solve_steady(st.bump_background(g, 0.4), 1.0, g)
        assert np.max(np.abs(np.log(ss.rho) - ss.phi - ss.c)) < 1e-12
        assert ss.residuals.mass <= 1e-10

    def test_nonpositive_background_rejected(self):
        g = radial_grid(64)
        bad = st.BackgroundProfile(rho=g.scalar(1.0) - 2.0, tag="bad")
        with pytest.raises(NonpositiveDensity):
            st.solve_steady(bad, GAMMA, g)

    def test_linearized_oracle_quadratic_in_amplitude(self):
        g = radial_grid()
        L = dense_neumann_laplacian(g)
        A = GAMMA * L - np.eye(g.n_nodes)
        errs = {}
        for eps in (0.01, 0.005):
            bg = st.mode_background(g, eps, 1)
            ss = st.solve_steady(bg, GAMMA, g)
            b = (bg.rho - 1.0) / eps
            qhat = np.linalg.solve(A, -b)
            errs[eps] = np.max(np.abs((ss.rho - 1.0) - eps * qhat))
        assert errs[0.01] < 0.05 * 0.01**2 * 100   # small in absolute terms
        ratio = errs[0.01] / errs[0.005]
        assert 3.0 <= ratio <= 5.0                 # scales like eps^2

    def test_warm_start_idempotent(self):
        g = radial_grid(64)
        bg = st.bump_background(g, 0.5)
        ss = st.solve_steady(bg, GAMMA, g)
        again = st.solve_steady(bg, GAMMA, g, initial=ss)
        assert again.newton_iterations <= 2
        assert np.max(np.abs(again.rho - ss.rho)) < 1e-10

    def test_residuals_decay_second_order(self):
        vals = {}
        for n in (64, 128):
            g = radial_grid(n)
            ss = st.solve_steady(st.bump_background(g, 0.5), GAMMA, g)
            r = ss.residuals
            vals[n] = (r.momentum_pressure, r.boundary_neumann)
        for i in range(2):
            order = math.log2(vals[64][i] / vals[128][i])
            assert order >= 1.8

    def test_mass_monotone_in_c(self):
        g = radial_grid(64)
        ss = st.solve_steady(st.bump_background(g, 0.3), GAMMA, g)
        masses = [g.integrate(st.inverse_enthalpy(ss.phi + c, GAMMA))
                  for c in (ss.c - 0.2, ss.c, ss.c + 0.2)]
        assert masses[0] < masses[1] < masses[2]


class TestSteadyResidual:
    def test_perturbed_potential_shows_in_poisson(self):
        g = radial_grid(64)
        bg = st.constant_background(g, 1.0)
        ss = st.solve_steady(bg, GAMMA, g)
        mode = np.cos(np.pi * (g.r - 1.0))
        ss.phi = ss.phi + 1e-3 * mode
        res = st.steady_residual(ss, bg)
        expected = 1e-3 * np.max(np.abs(el.laplacian_neumann(g, mode)))
        assert abs(res.poisson - expected) < 0.05 * expected
        assert res.momentum > 0.0   # enthalpy relation broken too

    def test_wrong_constant_shows_in_mass(self):
        g = radial_grid(64)
        bg = st.bump_background(g, 0.3)
        ss = st.solve_steady(bg, GAMMA, g)
        shifted = st.SteadyState(grid=g, rho=st.inverse_enthalpy(ss.phi + ss.c + 0.1, GAMMA),
                                 phi=ss.phi, gamma=GAMMA, c=ss.c + 0.1)
        res = st.steady_residual(shifted, bg)
        assert res.mass > 1e-3
        assert shifted.enthalpy_residual() < 1e-12
