"""Steady states with zero velocity over a positive background profile.

The stationary balance couples the density and the potential through

    grad p(rho) = rho grad Phi,      lap Phi = rho - rho_bar,

with zero Neumann data for Phi.  Integrating the momentum balance gives the
pointwise enthalpy relation H(rho) = Phi + c, where H is gamma/(gamma-1) *
rho^(gamma-1) for gamma > 1 and log rho for gamma = 1.  Writing psi = Phi + c
reduces the problem to one semilinear Neumann equation

    lap psi = R(psi) - rho_bar,

with R the inverse enthalpy map; R is strictly increasing, so psi is unique
and its volume mean plays the role of the constant c (the potential itself
is gauged to mean zero).  A damped Newton iteration with backtracking line
search solves the semilinear problem; a final scalar polish of c pins the
mass constraint integral(rho - rho_bar) = 0 down to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain.grid import Grid
from .domain import ops
from . import elliptic
from .errors import NewtonDiverged, NonpositiveDensity

NEWTON_MAX_ITERS = 60
LINESEARCH_FLOOR = 1e-4


@dataclass
class BackgroundProfile:
    """Fixed immobile charge background, pointwise positive."""

    rho: np.ndarray
    tag: str = "custom"

    def validate(self) -> None:
        if np.min(self.rho) <= 0.0:
            raise NonpositiveDensity(
                f"background profile {self.tag!r} has min {np.min(self.rho):.3e} <= 0")


def constant_background(grid: Grid, value: float = 1.0) -> BackgroundProfile:
    return BackgroundProfile(rho=grid.scalar(value), tag=f"constant({value})")


def _axis_coordinate(grid: Grid) -> tuple[np.ndarray, float, float]:
    """Profile coordinate: radius on the annulus, x on the box."""
    if grid.kind == "radial":
        return grid.r, grid.spec.r_inner, grid.spec.r_outer
    x = grid.axes[0][:, None, None] * np.ones(grid.shape)
    return x, 0.0, grid.spec.lengths[0]


def mode_background(grid: Grid, amplitude: float, wavenumber: int = 1) -> BackgroundProfile:
    """1 + amplitude * (single cosine mode, volume mean removed)."""
    x, lo, hi = _axis_coordinate(grid)
    mode = np.cos(wavenumber * np.pi * (x - lo) / (hi - lo))
    mode = mode - grid.mean(mode)
    return BackgroundProfile(rho=1.0 + amplitude * mode,
                             tag=f"mode(a={amplitude}, k={wavenumber})")


def bump_background(grid: Grid, amplitude: float, width: float = 0.15) -> BackgroundProfile:
    """1 + amplitude * Gaussian bump centred in the domain."""
    x, lo, hi = _axis_coordinate(grid)
    centre = 0.5 * (lo + hi)
    w = width * (hi - lo)
    return BackgroundProfile(rho=1.0 + amplitude * np.exp(-((x - centre) / w) ** 2),
                             tag=f"bump(a={amplitude}, w={width})")


def enthalpy(rho: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 1.0:
        return np.log(rho)
    return gamma / (gamma - 1.0) * rho ** (gamma - 1.0)


def inverse_enthalpy(s: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 1.0:
        return np.exp(s)
    return ((gamma - 1.0) * s / gamma) ** (1.0 / (gamma - 1.0))


def inverse_enthalpy_deriv(s: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 1.0:
        return np.exp(s)
    return inverse_enthalpy(s, gamma) / ((gamma - 1.0) * s)


@dataclass
class SteadyResiduals:
    momentum: float           # rho * grad(H(rho) - Phi), the solved form
    momentum_pressure: float  # grad(rho^gamma) - rho grad Phi, chain-rule form
    poisson: float
    mass: float
    boundary_neumann: float


@dataclass
class SteadyState:
    grid: Grid
    rho: np.ndarray
    phi: np.ndarray
    gamma: float
    c: float
    residuals: SteadyResiduals | None = None
    newton_iterations: int = 0

    def enthalpy_residual(self) -> float:
        return float(np.max(np.abs(enthalpy(self.rho, self.gamma) - self.phi - self.c)))


def constant_steady_state(grid: Grid, gamma: float, value: float = 1.0) -> SteadyState:
    """Exact steady state over a constant background (zero potential)."""
    ss = SteadyState(grid=grid, rho=grid.scalar(value), phi=grid.scalar(0.0),
                     gamma=gamma, c=float(enthalpy(np.array(value), gamma)))
    bg = constant_background(grid, value)
    ss.residuals = steady_residual(ss, bg)
    return ss


def steady_residual(ss: SteadyState, bg: BackgroundProfile) -> SteadyResiduals:
    """Audit the stationary balance; pure function of the given fields.

    The momentum residual is evaluated in the enthalpy form rho * grad(H(rho)
    - Phi), which is the discretely enforceable statement of the balance; the
    chain-rule pressure form grad(rho^gamma) - rho grad Phi is reported
    alongside and carries the O(h^2) discrete chain-rule defect.
    """
    grid = ss.grid
    ent = enthalpy(ss.rho, ss.gamma)
    mom = ss.rho * (ops.grad(grid, ent) - ops.grad(grid, ss.phi))
    mom_p = ops.grad(grid, ss.rho**ss.gamma) - ss.rho * ops.grad(grid, ss.phi)
    poisson = elliptic.laplacian_neumann(grid, ss.phi) - (ss.rho - bg.rho)
    mass = grid.integrate(ss.rho - bg.rho)
    bn = ops.normal_derivative(grid, ss.phi)
    return SteadyResiduals(
        momentum=float(np.max(np.abs(mom))),
        momentum_pressure=float(np.max(np.abs(mom_p))),
        poisson=float(np.max(np.abs(poisson))),
        mass=float(abs(mass)),
        boundary_neumann=float(np.max(np.abs(bn[grid.boundary_mask]))))


def _semilinear_residual(grid: Grid, psi: np.ndarray, rho_bar: np.ndarray,
                         gamma: float) -> np.ndarray:
    return (elliptic.laplacian_neumann(grid, psi)
            - inverse_enthalpy(psi, gamma) + rho_bar)


def _newton_linear_solve(grid: Grid, psi: np.ndarray, F: np.ndarray,
                         gamma: float) -> np.ndarray:
    """Solve (lap - R'(psi)) delta = -F; SPD after volume weighting."""
    rprime = inverse_enthalpy_deriv(psi, gamma)
    w = grid.weights

    def apply_fn(x):
        return elliptic.stiffness_apply(grid, x) + w * rprime * x

    diag = elliptic.stiffness_diag(grid) + w * rprime
    delta, _ = elliptic._run_cg(grid, apply_fn, w * F, diag,
                                rtol=1e-12, label="steady newton")
    return delta


def _polish_mass(grid: Grid, psi: np.ndarray, rho_bar: np.ndarray,
                 gamma: float) -> np.ndarray:
    """Shift psi by a constant so integral(R(psi) - rho_bar) = 0 to round-off."""
    target = grid.integrate(rho_bar)
    shift = 0.0
    for _ in range(8):
        rho = inverse_enthalpy(psi + shift, gamma)
        defect = grid.integrate(rho) - target
        slope = grid.integrate(inverse_enthalpy_deriv(psi + shift, gamma))
        if abs(defect) < 1e-15 * max(target, 1.0):
            break
        shift -= defect / slope
    return psi + shift


def solve_steady(bg: BackgroundProfile, gamma: float, grid: Grid,
                 max_iters: int = NEWTON_MAX_ITERS,
                 initial: SteadyState | None = None) -> SteadyState:
    """Damped Newton solve of the semilinear steady problem.

    ``initial`` warm-starts the iteration from a previous steady state;
    the default start is the constant-density solution of equal total mass.
    Raises NewtonDiverged when backtracking cannot reduce the residual and
    NonpositiveDensity when the iterate cannot stay in the positive cone.
    """
    bg.validate()
    if gamma < 1.0:
        raise ValueError(f"adiabatic exponent must be >= 1, got {gamma}")

    rho_bar = np.asarray(bg.rho, dtype=float)
    scale = 1.0 + float(np.max(np.abs(rho_bar)))
    # The residual evaluation bottoms out at eps * |psi| / h^2; accept a
    # stall there as long as the 1e-8 * scale contract is met.
    atol_strict = 1e-12 * scale
    atol_contract = 1e-8 * scale

    if initial is not None:
        psi = initial.phi + initial.c
    else:
        c0 = float(enthalpy(np.asarray(grid.mean(rho_bar)), gamma))
        psi = grid.scalar(c0)
    F = _semilinear_residual(grid, psi, rho_bar, gamma)
    iters = 0
    while np.max(np.abs(F)) > atol_strict:
        if iters >= max_iters:
            raise NewtonDiverged(f"no convergence in {max_iters} Newton steps, "
                                 f"residual {np.max(np.abs(F)):.3e}")
        delta = _newton_linear_solve(grid, psi, F, gamma)
        fnorm = grid.l2(F)
        finf = np.max(np.abs(F))
        step = 1.0
        positivity_blocked = False
        accepted = False
        while step >= LINESEARCH_FLOOR:
            cand = psi + step * delta
            if gamma > 1.0 and np.min(cand) <= 0.0:
                positivity_blocked = True
            else:
                positivity_blocked = False
                F_cand = _semilinear_residual(grid, cand, rho_bar, gamma)
                if grid.l2(F_cand) < fnorm:
                    psi, F = cand, F_cand
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if finf <= atol_contract:
                break                      # round-off floor, within contract
            if positivity_blocked:
                raise NonpositiveDensity(
                    "density iterate cannot stay positive under damping")
            raise NewtonDiverged("line search exhausted without decrease")
        iters += 1
        if np.max(np.abs(F)) <= atol_contract and np.max(np.abs(F)) > 0.5 * finf:
            break                          # stalled at the evaluation floor

    psi = _polish_mass(grid, psi, rho_bar, gamma)
    c = grid.mean(psi)
    phi = psi - c
    rho = inverse_enthalpy(psi, gamma)
    ss = SteadyState(grid=grid, rho=rho, phi=phi, gamma=gamma, c=float(c),
                     newton_iterations=iters)
    ss.residuals = steady_residual(ss, bg)
    return ss
