"""Time evolution of perturbations around a steady state.

State variables are the density perturbation q = rho - rho_s, the velocity
u (zero on walls) and the potential perturbation phi (zero Neumann data,
mean zero, lap phi = q).  The governing system is

    q_t + rho_s div u + u . grad rho_s = f0,          f0 = -div(q u)
    rho u_t - mu lap u - (mu+lam) grad div u
        + grad(gamma rho_s^(gamma-1) q) - rho_s grad phi - q grad Phi_s = f,
    f = -rho (u . grad) u + q grad phi - grad h(q),
    h(q) = (q + rho_s)^gamma - rho_s^gamma - gamma rho_s^(gamma-1) q,

with rho = q + rho_s.  The sign of the grad h term follows from subtracting
the steady balance from the momentum equation.  Dividing the momentum row
by rho gives the reduced form

    u_t - mu/rho_s lap u - (mu+lam)/rho_s grad div u
        + grad(gamma rho_s^(gamma-2) q) - grad phi = g,

whose right-hand side g collects the advection, the density-contrast
viscous correction and the quadratic enthalpy remainder k(q); the material
form of the continuity row reads dq/dt + div(rho_s u) = -q div u = g0.
These closed forms feed the diagnostic residuals and the measured
inequality ratios.

The time stepper is IMEX: the stiff viscous operator is implicit through a
single symmetric Lame solve with the density lagged one step, everything
else (pressure, electric, transport) is explicit.  The continuity update is
conservative, so the discrete mass of q is preserved to round-off and the
mean projection only removes drift.

Collocated central stencils decouple odd and even nodes: a node-alternating
density mode exerts no central pressure gradient and would linger as a
spurious slow mode.  The continuity update therefore carries a conservative
fourth-difference dissipation, coefficient c4 * c_sound * h^3, which damps
grid-scale modes at an O(1/h) rate while shifting smooth-mode decay rates
only at O(h^4); the linearized operator below includes the same term, so
the spectral oracle sees exactly the scheme it checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain.grid import Grid
from .domain import ops
from . import elliptic, steady as steady_mod
from .errors import CFLViolation, Incompatible, NonpositiveDensity


@dataclass
class SchemeParams:
    dt: float
    mu: float
    lam: float
    gamma: float
    t_end: float
    stride: int = 10
    cfl_factor: float = 0.4
    stab4: float = 0.01             # fourth-difference continuity dissipation
    delta: float | None = None      # small-data gate on the initial H^3 size

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.mu <= 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.lam + 2.0 * self.mu / 3.0 < 0.0:
            raise ValueError("lambda + 2 mu / 3 must be nonnegative")
        if self.gamma < 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if self.t_end <= 0.0 or self.stride < 1:
            raise ValueError("t_end must be positive and stride >= 1")


@dataclass
class PerturbationState:
    grid: Grid
    t: float
    q: np.ndarray
    u: np.ndarray
    phi: np.ndarray
    q_t: np.ndarray
    u_t: np.ndarray

    def density(self, steady: steady_mod.SteadyState) -> np.ndarray:
        return self.q + steady.rho

    def mass_defect(self) -> float:
        return float(abs(self.grid.integrate(self.q)))


@dataclass
class NonlinearTerms:
    f0: np.ndarray
    f: np.ndarray
    h: np.ndarray
    g0: np.ndarray
    g: np.ndarray
    k: np.ndarray


def pressure_remainder(q: np.ndarray, rho_s: np.ndarray, gamma: float) -> np.ndarray:
    """h(q): quadratic remainder of the pressure around the steady density."""
    return (q + rho_s) ** gamma - rho_s**gamma - gamma * rho_s ** (gamma - 1.0) * q


def enthalpy_remainder(q: np.ndarray, rho_s: np.ndarray, gamma: float) -> np.ndarray:
    """Quadratic remainder of the enthalpy (the potential under k)."""
    rho = q + rho_s
    if gamma == 1.0:
        return np.log(rho) - np.log(rho_s) - q / rho_s
    gg = gamma / (gamma - 1.0)
    return gg * (rho ** (gamma - 1.0) - rho_s ** (gamma - 1.0)) \
        - gamma * rho_s ** (gamma - 2.0) * q


def nonlinear_terms(state: PerturbationState, steady: steady_mod.SteadyState,
                    params: SchemeParams) -> NonlinearTerms:
    """All six quadratic source fields of the perturbation system."""
    grid = state.grid
    q, u, phi = state.q, state.u, state.phi
    rho_s = steady.rho
    rho = q + rho_s
    if np.min(rho) <= 0.0:
        raise NonpositiveDensity(f"total density reached {np.min(rho):.3e}")
    gamma = params.gamma

    f0 = -ops.div(grid, q * u)
    h = pressure_remainder(q, rho_s, gamma)
    gphi = ops.grad(grid, phi)
    f = -rho * ops.advect_vector(grid, u) + q * gphi - ops.grad(grid, h)

    divu = ops.div(grid, u)
    g0 = -q * divu
    contrast = 1.0 / rho - 1.0 / rho_s
    lap_u = ops.vector_laplacian(grid, u)
    gdiv_u = ops.grad_div(grid, u)
    # k enters the reduced momentum balance with a minus sign relative to
    # the raw enthalpy remainder; re-derived from subtracting the steady
    # balance, not taken from the display.
    k = -ops.grad(grid, enthalpy_remainder(q, rho_s, gamma))
    g = (-ops.advect_vector(grid, u) + params.mu * contrast * lap_u
         + (params.mu + params.lam) * contrast * gdiv_u + k)
    return NonlinearTerms(f0=f0, f=f, h=h, g0=g0, g=g, k=k)


def time_derivatives(state: PerturbationState, steady: steady_mod.SteadyState,
                     params: SchemeParams,
                     linearized: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Equation-derived (q_t, u_t); u_t vanishes on walls like u itself.

    With ``linearized`` the quadratic sources are dropped and the momentum
    row is divided by the steady density, so the result is exactly linear
    in the state.
    """
    grid = state.grid
    rho_s = steady.rho
    rho = state.q + rho_s
    if linearized:
        f0 = grid.scalar(0.0)
        f = grid.vector(0.0)
        rho_div = rho_s
    else:
        terms = nonlinear_terms(state, steady, params)
        f0, f = terms.f0, terms.f
        rho_div = rho
    q_t = f0 - rho_s * ops.div(grid, state.u) \
        - ops.advect_scalar(grid, state.u, rho_s)
    mom = (params.mu * ops.vector_laplacian(grid, state.u)
           + (params.mu + params.lam) * ops.grad_div(grid, state.u)
           - ops.grad(grid, params.gamma * rho_s ** (params.gamma - 1.0) * state.q)
           + rho_s * ops.grad(grid, state.phi)
           + state.q * ops.grad(grid, steady.phi)
           + f)
    u_t = mom / rho_div
    for c in range(grid.ncomp):
        u_t[c][grid.boundary_mask] = 0.0
    return q_t, u_t


def solve_potential(grid: Grid, q: np.ndarray,
                    rtol: float = elliptic.DEFAULT_RTOL,
                    x0: np.ndarray | None = None) -> np.ndarray:
    """Mean-zero potential with lap phi = q and zero Neumann data."""
    problem = elliptic.NeumannProblem(grid, q, grid.scalar(0.0))
    return elliptic.solve_neumann_poisson(problem, rtol=rtol,
                                          compute_ratio=False, x0=x0).v


def make_state(grid: Grid, steady: steady_mod.SteadyState, params: SchemeParams,
               q: np.ndarray, u: np.ndarray | None = None,
               t: float = 0.0) -> PerturbationState:
    """Assemble a consistent state from (q, u): potential and derivatives.

    Rejects q whose discrete mass is not zero (the solvability condition of
    the potential equation); u is clamped to zero on walls.
    """
    q = np.asarray(q, dtype=float)
    u = grid.vector(0.0) if u is None else np.array(u, dtype=float)
    defect = abs(grid.integrate(q))
    scale = grid.l2(q) + 1e-30
    if defect > 1e-10 * max(scale, 1.0):
        raise Incompatible(f"initial density perturbation carries mass "
                           f"{defect:.3e}; the potential equation needs zero")
    for c in range(grid.ncomp):
        u[c][grid.boundary_mask] = 0.0
    if np.min(q + steady.rho) <= 0.0:
        raise NonpositiveDensity("perturbation leaves the positive-density cone")
    phi = solve_potential(grid, q)
    state = PerturbationState(grid=grid, t=t, q=q, u=u, phi=phi,
                              q_t=grid.scalar(0.0), u_t=grid.vector(0.0))
    state.q_t, state.u_t = time_derivatives(state, steady, params)
    return state


def _project_mean_zero(grid: Grid, q: np.ndarray) -> np.ndarray:
    return q - grid.integrate(q) / float(np.sum(grid.weights))


def initial_state(grid: Grid, steady: steady_mod.SteadyState, params: SchemeParams,
                  kind: str, amplitude: float, wavenumber: int = 1,
                  seed: int | None = None) -> PerturbationState:
    """Named initial-condition families (velocity starts at rest)."""
    x, lo, hi = steady_mod._axis_coordinate(grid)
    L = hi - lo
    if kind == "mode":
        q = amplitude * np.cos(wavenumber * np.pi * (x - lo) / L)
    elif kind == "bump":
        q = amplitude * np.exp(-(((x - lo) / L - 0.5) / 0.15) ** 2)
    elif kind == "random":
        rng = np.random.default_rng(seed)
        q = grid.scalar(0.0)
        for k in range(1, 5):
            q = q + rng.normal() * np.cos(k * np.pi * (x - lo) / L)
        q *= amplitude / max(np.max(np.abs(q)), 1e-30)
    else:
        raise ValueError(f"unknown initial-condition family {kind!r}")
    q = _project_mean_zero(grid, q)
    return make_state(grid, steady, params, q)


def cfl_limit(state: PerturbationState, steady: steady_mod.SteadyState,
              params: SchemeParams) -> float:
    """Largest advectively stable step: cfl * h / max(|u| + sound speed)."""
    rho_s = steady.rho
    sound = np.sqrt(params.gamma * rho_s ** (params.gamma - 1.0))
    speed = np.sqrt(np.sum(state.u**2, axis=0)) + sound
    return params.cfl_factor * min(state.grid.h) / float(np.max(speed))


def _continuity_dissipation(grid: Grid, steady: steady_mod.SteadyState,
                            params: SchemeParams, q: np.ndarray) -> np.ndarray:
    """Conservative fourth-difference smoothing of the continuity update."""
    if params.stab4 == 0.0:
        return np.zeros_like(q)
    c_sound = float(np.sqrt(params.gamma * np.max(steady.rho) ** (params.gamma - 1.0)))
    nu4 = params.stab4 * c_sound * min(grid.h) ** 3
    w = grid.weights
    lap_q = -elliptic.stiffness_apply(grid, q) / w
    # -nu4 * lap(lap q): negative-definite, conservative, zero wall flux
    return nu4 * elliptic.stiffness_apply(grid, lap_q) / w


def imex_step(state: PerturbationState, steady: steady_mod.SteadyState,
              params: SchemeParams) -> PerturbationState:
    """One step: explicit conservative transport, implicit viscosity.

    Order of operations: conservative q update, mean projection, potential
    solve, velocity update with the viscous operator implicit (density in
    the implicit mass term lagged one step), wall clamp, then the
    equation-derived time derivatives of the new state.
    """
    grid = state.grid
    dt = params.dt
    limit = cfl_limit(state, steady, params)
    if dt > limit:
        raise CFLViolation(f"dt = {dt:.3e} exceeds the advective bound {limit:.3e}")

    rho_old = state.q + steady.rho
    if np.min(rho_old) <= 0.0:
        raise NonpositiveDensity(f"total density reached {np.min(rho_old):.3e}")

    q_new = state.q - dt * ops.div_conservative(grid, rho_old * state.u) \
        + dt * _continuity_dissipation(grid, steady, params, state.q)
    q_new = _project_mean_zero(grid, q_new)
    phi_new = solve_potential(grid, q_new, x0=state.phi)

    rho_s = steady.rho
    gamma = params.gamma
    h_new = pressure_remainder(q_new, rho_s, gamma)
    gphi = ops.grad(grid, phi_new)
    f_expl = (-rho_old * ops.advect_vector(grid, state.u)
              + q_new * gphi - ops.grad(grid, h_new))
    expl = (-ops.grad(grid, gamma * rho_s ** (gamma - 1.0) * q_new)
            + rho_s * gphi + q_new * ops.grad(grid, steady.phi) + f_expl)
    rhs = rho_old * state.u + dt * expl
    problem = elliptic.LameProblem(grid=grid, alpha=rho_old, mu=params.mu,
                                   lam=params.lam, rhs=rhs, weight=dt)
    u_new = elliptic.solve_lame_dirichlet(problem)

    if np.min(q_new + rho_s) <= 0.0:
        raise NonpositiveDensity("density left the positive cone during the step")
    new = PerturbationState(grid=grid, t=state.t + dt, q=q_new, u=u_new,
                            phi=phi_new, q_t=state.q_t, u_t=state.u_t)
    new.q_t, new.u_t = time_derivatives(new, steady, params)
    return new


@dataclass
class Trajectory:
    states: list[PerturbationState]
    records: list[dict]
    status: str = "completed"
    failed_step: int | None = None
    error: str | None = None

    def series(self, key: str) -> np.ndarray:
        return np.array([rec[key] for rec in self.records])


def run_trajectory(initial: PerturbationState, steady: steady_mod.SteadyState,
                   params: SchemeParams) -> Trajectory:
    """March to t_end recording per-stride diagnostics.

    A failing step aborts with the partial trajectory, the failing step
    index and the error message; everything recorded so far is kept.
    """
    from . import energy  # deferred: energy builds on this module

    params.validate()
    if params.delta is not None:
        from . import norms
        size = np.sqrt(norms.sobolev_norm2(initial.grid, initial.q, 3, "scalar")
                       + norms.sobolev_norm2(initial.grid, initial.u, 3, "vector"))
        if size > params.delta:
            raise Incompatible(f"initial H^3 size {size:.3e} exceeds the "
                               f"small-data gate {params.delta:.3e}")
    if initial.mass_defect() > 1e-10 * max(initial.grid.l2(initial.q), 1.0):
        raise Incompatible("initial density perturbation carries nonzero mass")

    n_steps = int(round(params.t_end / params.dt))
    traj = Trajectory(states=[initial], records=[])

    def record(state: PerturbationState, prev: PerturbationState | None) -> None:
        rep = energy.energy_functionals(state, steady)
        if not (np.isfinite(rep.E) and np.isfinite(rep.D)):
            raise FloatingPointError(f"energy became non-finite at t = {state.t:.6g}")
        ratio = energy.imp1_ratio(state)
        ident = (energy.energy_identity_residual(prev, steady, state, params)
                 if prev is not None else float("nan"))
        traj.records.append({
            "t": state.t,
            "E": rep.E,
            "D": rep.D,
            "mass_defect": state.mass_defect(),
            "imp1_ratio": float("nan") if ratio is None else ratio,
            "identity_residual": ident,
            "cfl_margin": params.dt / cfl_limit(state, steady, params),
        })

    record(initial, None)
    state = initial
    prev = None
    for step in range(1, n_steps + 1):
        try:
            new = imex_step(state, steady, params)
            prev, state = state, new
            if step % params.stride == 0 or step == n_steps:
                record(state, prev)
                traj.states.append(state)
        except Exception as exc:  # keep the partial trajectory on failure
            traj.status = "failed"
            traj.failed_step = step
            traj.error = f"{type(exc).__name__}: {exc}"
            return traj
    return traj


def linearized_matrix(grid: Grid, steady: steady_mod.SteadyState,
                      params: SchemeParams) -> np.ndarray:
    """Dense semi-discrete generator of the linearized scheme on (q, u).

    Columns are built by applying the scheme's own spatial operators to
    basis vectors; u components are restricted to interior nodes (walls are
    pinned) and the potential enters through the mean-zero Neumann solve.
    The constant-q gauge mode stays in the matrix and is excluded by the
    spectral-abscissa helper below.
    """
    rho_s = steady.rho
    gamma = params.gamma
    inter = grid.interior_mask
    nq = grid.n_nodes
    nu = int(np.count_nonzero(inter)) * grid.ncomp

    def pack(q, u):
        return np.concatenate([q.ravel()] +
                              [u[c][inter].ravel() for c in range(grid.ncomp)])

    def unpack(z):
        q = z[:nq].reshape(grid.shape)
        u = grid.vector(0.0)
        chunk = (len(z) - nq) // grid.ncomp
        for c in range(grid.ncomp):
            u[c][inter] = z[nq + c * chunk: nq + (c + 1) * chunk]
        return q, u

    def apply_linear(z):
        q, u = unpack(z)
        qdot = -ops.div_conservative(grid, rho_s * u) \
            + _continuity_dissipation(grid, steady, params, q)
        phi = solve_potential(grid, _project_mean_zero(grid, q), rtol=1e-12)
        mom = (params.mu * ops.vector_laplacian(grid, u)
               + (params.mu + params.lam) * ops.grad_div(grid, u)
               - ops.grad(grid, gamma * rho_s ** (gamma - 1.0) * q)
               + rho_s * ops.grad(grid, phi)
               + q * ops.grad(grid, steady.phi))
        udot = mom / rho_s
        return pack(qdot, udot)

    dim = nq + nu
    mat = np.zeros((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        mat[:, j] = apply_linear(e)
    return mat


def spectral_abscissa(mat: np.ndarray, gauge_tol: float = 1e-8) -> float:
    """Largest real part over the spectrum, excluding the mass gauge mode."""
    eigs = np.linalg.eigvals(mat)
    keep = np.abs(eigs) > gauge_tol
    return float(np.max(eigs[keep].real))
