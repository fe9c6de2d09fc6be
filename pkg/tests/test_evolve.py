import math

import numpy as np
import pytest

from nsp_stab.domain import DomainSpec, build_grid
from nsp_stab.domain import ops
from nsp_stab import elliptic as el
from nsp_stab import steady as st
from nsp_stab import evolve as ev
from nsp_stab import energy as en
from nsp_stab.errors import CFLViolation, Incompatible, NonpositiveDensity

GAMMA = 5.0 / 3.0


def setup(n=64, r1=2.0, dt=0.004, t_end=1.0, stride=10):
    grid = build_grid(DomainSpec.annulus(1.0, r1, n))
    ss = st.constant_steady_state(grid, GAMMA, 1.0)
    params = ev.SchemeParams(dt=dt, mu=1.0, lam=0.0, gamma=GAMMA,
                             t_end=t_end, stride=stride)
    return grid, ss, params


class TestNonlinearTerms:
    def test_zero_state_all_zero(self):
        grid, ss, params = setup()
        z = ev.make_state(grid, ss, params, grid.scalar(0.0))
        terms = ev.nonlinear_terms(z, ss, params)
        for arr in (terms.f0, terms.f, terms.h, terms.g0, terms.g, terms.k):
            assert np.max(np.abs(arr)) == 0.0

    def test_gamma_two_closed_forms(self):
        grid, ss0, _ = setup()
        ss = st.constant_steady_state(grid, 2.0, 1.0)
        params = ev.SchemeParams(dt=0.004, mu=1.0, lam=0.0, gamma=2.0, t_end=1.0)
        s = ev.initial_state(grid, ss, params, "mode", 1e-2, wavenumber=2)
        terms = ev.nonlinear_terms(s, ss, params)
        assert np.max(np.abs(terms.h - s.q**2)) < 1e-15
        assert np.max(np.abs(terms.k)) < 1e-12

    def test_pressure_remainder_quadratic_leading_term(self):
        grid, ss, params = setup()
        lead = 0.5 * GAMMA * (GAMMA - 1.0) * ss.rho ** (GAMMA - 2.0)
        errs = {}
        for amp in (1e-3, 5e-4):
            q = amp * np.cos(np.pi * (grid.r - 1.0))
            h = ev.pressure_remainder(q, ss.rho, GAMMA)
            errs[amp] = np.max(np.abs(h - lead * q**2))
        # cubic remainder: halving the amplitude divides the defect by ~8
        assert 6.0 <= errs[1e-3] / errs[5e-4] <= 10.0

    def test_positive_density_required(self):
        grid, ss, params = setup()
        q = grid.scalar(0.0)
        q[3] = -2.0
        state = ev.PerturbationState(grid=grid, t=0.0, q=q, u=grid.vector(0.0),
                                     phi=grid.scalar(0.0), q_t=grid.scalar(0.0),
                                     u_t=grid.vector(0.0))
        with pytest.raises(NonpositiveDensity):
            ev.nonlinear_terms(state, ss, params)


class TestTimeDerivatives:
    def test_zero_state(self):
        grid, ss, params = setup()
        z = ev.make_state(grid, ss, params, grid.scalar(0.0))
        assert np.max(np.abs(z.q_t)) == 0.0
        assert np.max(np.abs(z.u_t)) == 0.0

    def test_divergence_free_velocity_freezes_density(self):
        # discrete curl of a stream function supported away from the walls:
        # the one-axis difference operators commute exactly, so div u = 0
        grid = build_grid(DomainSpec.box((1.0, 1.0, 1.0), 16))
        ss = st.constant_steady_state(grid, GAMMA, 1.0)
        params = ev.SchemeParams(dt=1e-3, mu=1.0, lam=0.0, gamma=GAMMA, t_end=1.0)
        x, y, z = np.meshgrid(*grid.axes, indexing="ij")
        win = np.ones(grid.shape)
        for w in (x, y, z):
            win = win * np.clip((w - 3.0 * grid.h[0]) / 0.2, 0.0, 1.0) ** 3 \
                      * np.clip((1.0 - w - 3.0 * grid.h[0]) / 0.2, 0.0, 1.0) ** 3
        psi = win * np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z)
        u = np.stack([ops.d1(grid, psi, axis=1), -ops.d1(grid, psi, axis=0),
                      np.zeros_like(psi)])
        state = ev.make_state(grid, ss, params, grid.scalar(0.0), 1e-3 * u)
        assert np.max(np.abs(state.q_t)) < 1e-12

    def test_double_implementation_oracle(self):
        # assemble u_t independently with plain numpy differencing
        grid, ss, params = setup(n=128)
        s = ev.initial_state(grid, ss, params, "mode", 1e-3, wavenumber=1)
        s.u[0][1:-1] = 1e-3 * np.sin(np.pi * (grid.r[1:-1] - 1.0)) ** 2
        q_t, u_t = ev.time_derivatives(s, ss, params)

        r = grid.r
        h = grid.h[0]
        rho = s.q + ss.rho

        def d(arr):
            return np.gradient(arr, h, edge_order=2)

        u0 = s.u[0]
        lap_u = d(d(u0)) + 2.0 * d(u0) / r - 2.0 * u0 / r**2
        hq = (s.q + ss.rho) ** GAMMA - ss.rho**GAMMA \
            - GAMMA * ss.rho ** (GAMMA - 1.0) * s.q
        f = -rho * u0 * d(u0) + s.q * d(s.phi) - d(hq)
        mom = (params.mu * lap_u + (params.mu + params.lam) * lap_u
               - d(GAMMA * ss.rho ** (GAMMA - 1.0) * s.q)
               + ss.rho * d(s.phi) + s.q * d(ss.phi) + f)
        u_t_ref = mom / rho
        inner = slice(2, -2)
        scale = np.max(np.abs(u_t_ref))
        # two distinct second-order assemblies agree to O(h^2)
        tol = 20.0 * grid.h[0] ** 2 * scale
        assert np.max(np.abs(u_t[0][inner] - u_t_ref[inner])) < tol

    def test_reduced_momentum_identity(self):
        # u_t from the primitive row satisfies the reduced row up to O(h^2)
        errs = {}
        for n in (64, 128):
            grid, ss, params = setup(n=n)
            s = ev.initial_state(grid, ss, params, "mode", 1e-3, wavenumber=1)
            s.u[0][1:-1] = 1e-3 * np.sin(np.pi * (grid.r[1:-1] - 1.0)) ** 2
            s.q_t, s.u_t = ev.time_derivatives(s, ss, params)
            terms = ev.nonlinear_terms(s, ss, params)
            rho_s = ss.rho
            L = (s.u_t - params.mu / rho_s * ops.vector_laplacian(grid, s.u)
                 - (params.mu + params.lam) / rho_s * ops.grad_div(grid, s.u)
                 + ops.grad(grid, params.gamma * rho_s ** (params.gamma - 2.0) * s.q)
                 - ops.grad(grid, s.phi))
            diff = (L - terms.g)[0][grid.interior_mask]
            errs[n] = np.max(np.abs(diff))
        assert errs[128] < errs[64]   # shrinks under refinement

    def test_linearized_scaling(self):
        grid, ss, params = setup()
        s = ev.initial_state(grid, ss, params, "mode", 1e-3, wavenumber=1)
        s.u[0][1:-1] = 1e-3 * np.sin(np.pi * (grid.r[1:-1] - 1.0))
        qt1, ut1 = ev.time_derivatives(s, ss, params, linearized=True)
        s2 = ev.PerturbationState(grid=grid, t=0.0, q=0.5 * s.q, u=0.5 * s.u,
                                  phi=0.5 * s.phi, q_t=s.q_t, u_t=s.u_t)
        qt2, ut2 = ev.time_derivatives(s2, ss, params, linearized=True)
        assert np.max(np.abs(qt2 - 0.5 * qt1)) < 1e-14
        assert np.max(np.abs(ut2 - 0.5 * ut1)) < 1e-14


class TestImexStep:
    def test_zero_state_bit_stable(self):
        grid, ss, params = setup(n=64)
        z = ev.make_state(grid, ss, params, grid.scalar(0.0))
        s = z
        for _ in range(100):
            s = ev.imex_step(s, ss, params)
        assert np.array_equal(s.q, z.q)
        assert np.array_equal(s.u, z.u)
        assert np.array_equal(s.phi, z.phi)

    def test_mass_projection_exact(self):
        grid, ss, params = setup(n=64)
        s = ev.initial_state(grid, ss, params, "mode", 1e-3)
        for _ in range(20):
            s = ev.imex_step(s, ss, params)
            assert s.mass_defect() <= 1e-12 * max(grid.l2(s.q), 1e-30)

    def test_boundary_velocity_pinned(self):
        grid, ss, params = setup(n=64)
        s = ev.initial_state(grid, ss, params, "bump", 1e-3)
        for _ in range(5):
            s = ev.imex_step(s, ss, params)
        assert s.u[0][0] == 0.0 and s.u[0][-1] == 0.0
        bn = ops.normal_derivative(grid, s.phi)
        assert np.max(np.abs(bn[grid.boundary_mask])) < 1e-4

    def test_cfl_guard(self):
        grid, ss, params = setup(n=64, dt=0.1)
        s = ev.initial_state(grid, ss, params, "mode", 1e-3)
        with pytest.raises(CFLViolation):
            ev.imex_step(s, ss, params)

    def test_local_truncation_first_order_in_h(self):
        # one step reproduces state + dt * d/dt up to O(dt^2) + O(h^2)
        # (the wall cells of the conservative update contribute O(h) there)
        errs = {}
        for n in (64, 128):
            grid, ss, params = setup(n=n, dt=0.0005)
            s = ev.initial_state(grid, ss, params, "mode", 1e-3)
            s2 = ev.imex_step(s, ss, params)
            pred_q = s.q + params.dt * s.q_t
            errs[n] = grid.l2(s2.q - pred_q) / params.dt
        assert errs[128] < 0.6 * errs[64]


class TestTrajectory:
    def test_zero_initial_zero_series(self):
        grid, ss, params = setup(n=64, t_end=0.2)
        z = ev.make_state(grid, ss, params, grid.scalar(0.0))
        traj = ev.run_trajectory(z, ss, params)
        assert traj.status == "completed"
        assert np.all(traj.series("E") == 0.0)
        assert np.all(traj.series("D") == 0.0)

    def test_mass_violating_initial_rejected(self):
        grid, ss, params = setup(n=64)
        q = grid.scalar(1e-2)
        with pytest.raises(Incompatible):
            ev.make_state(grid, ss, params, q)

    def test_small_data_gate(self):
        grid, ss, params = setup(n=64)
        params.delta = 1e-6
        s = ev.initial_state(grid, ss, params, "mode", 1e-3)
        with pytest.raises(Incompatible):
            ev.run_trajectory(s, ss, params)

    def test_energy_decays_after_transient(self):
        grid, ss, params = setup(n=64, dt=0.004, t_end=10.0, stride=50)
        mat = ev.linearized_matrix(grid, ss, params)
        assert ev.spectral_abscissa(mat) < 0.0     # spectral gap confirmed
        s = ev.initial_state(grid, ss, params, "mode", 1e-3)
        traj = ev.run_trajectory(s, ss, params)
        t, E = traj.series("t"), traj.series("E")
        assert np.all(E[t >= 1.0] < E[0])
        assert np.all(np.isfinite(E))

    def test_failed_step_keeps_partial_records(self):
        grid, ss, params = setup(n=64, dt=0.004, t_end=1.0, stride=5)
        s = ev.initial_state(grid, ss, params, "mode", 1e-3)
        params.dt = 0.1                            # violates the CFL bound
        traj = ev.run_trajectory(s, ss, params)
        assert traj.status == "failed"
        assert traj.failed_step == 1
        assert "CFLViolation" in traj.error
        assert len(traj.records) == 1              # the initial record


class TestLinearRegimeFidelity:
    def test_amplitude_rate_matches_dominant_eigenvalue(self):
        # on the thin annulus the slow spectrum accumulates at the
        # overdamped pressure-relaxation rate; the trajectory follows the
        # eigenvalue its initial data actually excites
        grid, ss, params = setup(n=64, dt=0.002, t_end=5.0, stride=25)
        mat = ev.linearized_matrix(grid, ss, params)
        eigs, vecs = np.linalg.eig(mat)
        s = ev.initial_state(grid, ss, params, "mode", 1e-3)
        z0 = np.concatenate([s.q, s.u[0][grid.interior_mask]])
        coef = np.linalg.solve(vecs, z0)
        relevant = eigs.real > -50.0
        weights = np.abs(coef) * relevant
        lam_dom = eigs[np.argmax(weights)]
        assert abs(lam_dom.imag) < 1e-8

        traj = ev.run_trajectory(s, ss, params)
        t = traj.series("t")
        amp = np.array([grid.l2(state.q) for state in traj.states])
        ts = t[: len(amp)]
        fit = np.polyfit(ts[len(ts) // 3:], np.log(amp[len(ts) // 3:]), 1)
        rate = -fit[0]
        assert abs(rate - abs(lam_dom.real)) <= 0.03 * abs(lam_dom.real)
