"""Energy functionals, localized norms, identity residuals and decay fits.

The two headline functionals over a perturbation state are

    E = ||(q, u, grad phi)||_3^2 + ||q_t||_2^2 + ||u_t||_1^2
    D = ||(q, grad phi)||_3^2 + ||u||_4^2 + ||q_t||_2^2 + ||u_t||_2^2

with the time derivatives taken from the equations, never from differencing
the trajectory.  E <= D holds term by term for the discrete sums as well.

Localization uses a quadratic partition: an interior cutoff plus boundary
cutoffs supported in chart collars, built from quintic-smoothstep profiles
composed with sin/cos so the squares sum exactly to one (the partition
floor).  The two band charts covering one sphere share a smooth angular
splitter with t_z^2 + t_x^2 = 1, so the per-chart weights recombine into
the radial shell weight without seams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain.grid import Grid, DomainSpec
from .domain import ops, charts as charts_mod, coords
from .domain.coords import CoordinateMap, chart_d1_arr
from . import elliptic, norms
from .norms import sobolev_norm, sobolev_norm2  # noqa: F401  (public here)
from .errors import (ChartCoverage, InsufficientData, NonpositiveEnergy,
                     ResolutionTooLow)

# angular splitter interval in w = (dir_z^2 - dir_x^2 + 1) / 2; chosen so
# both cap cutoffs vanish exactly on their chart edge rows
TAPER_LO = 0.385
TAPER_HI = 0.615
RAMP_START = 0.40    # fractions of the collar depth
RAMP_END = 0.90


def smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 + x * (-15.0 + 6.0 * x))


def ramp_down(dist: np.ndarray, d1: float, d2: float) -> np.ndarray:
    """1 on [0, d1], C^2 cosine-smoothstep decay to 0 at d2."""
    return np.cos(0.5 * np.pi * smoothstep((dist - d1) / (d2 - d1)))


# ---------------------------------------------------------------------------
# energy functionals

@dataclass
class EnergyReport:
    t: float
    E: float
    D: float
    breakdown: dict

    @property
    def e_le_d(self) -> bool:
        return self.E <= self.D + 1e-12 * max(self.D, 1.0)


def energy_functionals(state, steady) -> EnergyReport:
    """E and D with the per-term breakdown."""
    grid = state.grid
    gphi = ops.grad(grid, state.phi)
    parts = {
        "q_h3": norms.sobolev_norm2(grid, state.q, 3, "scalar"),
        "u_h3": norms.sobolev_norm2(grid, state.u, 3, "vector"),
        "grad_phi_h3": norms.sobolev_norm2(grid, gphi, 3, "vector"),
        "q_t_h2": norms.sobolev_norm2(grid, state.q_t, 2, "scalar"),
        "u_t_h1": norms.sobolev_norm2(grid, state.u_t, 1, "vector"),
        "u_h4": norms.sobolev_norm2(grid, state.u, 4, "vector"),
        "u_t_h2": norms.sobolev_norm2(grid, state.u_t, 2, "vector"),
    }
    E = parts["q_h3"] + parts["u_h3"] + parts["grad_phi_h3"] \
        + parts["q_t_h2"] + parts["u_t_h1"]
    D = parts["q_h3"] + parts["grad_phi_h3"] + parts["u_h4"] \
        + parts["q_t_h2"] + parts["u_t_h2"]
    return EnergyReport(t=state.t, E=float(E), D=float(D), breakdown=parts)


def imp1_ratio(state) -> float | None:
    """||grad phi_t|| / ||grad u|| with phi_t solved from lap phi_t = q_t.

    Returns None on states with vanishing velocity gradient (the inequality
    is not applicable there).
    """
    from . import evolve

    grid = state.grid
    den = np.sqrt(norms.dk_norm2(grid, state.u, 1, "vector"))
    if den < 1e-14:
        return None
    q_t = state.q_t - grid.integrate(state.q_t) / float(np.sum(grid.weights))
    phi_t = evolve.solve_potential(grid, q_t)
    num = np.sqrt(norms.dk_norm2(grid, phi_t, 1, "scalar"))
    return float(num / den)


def _energy_density_integral(state, steady) -> float:
    grid = state.grid
    rho = state.q + steady.rho
    gphi = ops.grad(grid, state.phi)
    dens = (rho * np.sum(state.u**2, axis=0)
            + steady.gamma * steady.rho ** (steady.gamma - 2.0) * state.q**2
            + np.sum(gphi**2, axis=0))
    return 0.5 * grid.integrate(dens)


def _dissipation_integral(state, params) -> float:
    grid = state.grid
    grad2 = norms.dk_norm2(grid, state.u, 1, "vector")
    divu = ops.div(grid, state.u)
    return params.mu * grad2 + (params.mu + params.lam) * grid.integrate(divu**2)


def _identity_source_integral(state, steady) -> float:
    from . import evolve

    grid = state.grid
    gamma = steady.gamma
    h = evolve.pressure_remainder(state.q, steady.rho, gamma)
    gphi = ops.grad(grid, state.phi)
    f0 = -ops.div(grid, state.q * state.u)
    a0 = (np.sum((state.q * gphi - ops.grad(grid, h)) * state.u, axis=0)
          + (gamma * steady.rho ** (gamma - 2.0) * state.q - state.phi) * f0)
    return grid.integrate(a0)


def energy_identity_residual(state, steady, stepped, params) -> float:
    """Defect of the discrete basic energy balance across one step.

    Difference quotient of the quadratic energy integral plus the midpoint
    dissipation minus the midpoint quadratic source; O(dt) + O(h^2) for the
    scheme, so it shrinks at order >= 1 when dt and h are halved together.
    """
    dt = stepped.t - state.t
    lhs = (_energy_density_integral(stepped, steady)
           - _energy_density_integral(state, steady)) / dt
    diss = 0.5 * (_dissipation_integral(state, params)
                  + _dissipation_integral(stepped, params))
    src = 0.5 * (_identity_source_integral(state, steady)
                 + _identity_source_integral(stepped, steady))
    return float(abs(lhs + diss - src))


# ---------------------------------------------------------------------------
# decay fit

@dataclass
class DecayFit:
    C: float
    sigma: float
    goodness: float
    n_samples: int
    window: tuple[float, float]

    @property
    def decaying(self) -> bool:
        return self.sigma > 0.0


def decay_fit(times, energies, window: tuple[float, float] | None = None,
              min_samples: int = 10) -> DecayFit:
    """Least-squares line through (t, log E); sigma is minus the slope.

    C is the fitted amplitude at t = 0, so an exact series C0 exp(-s t)
    returns (C0, s) directly.  sigma <= 0 is a valid flag for non-decay.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    if window is None:
        window = (float(t.min()), float(t.max()))
    mask = (t >= window[0]) & (t <= window[1])
    t, e = t[mask], e[mask]
    if np.any(e <= 0.0):
        raise NonpositiveEnergy(f"{int(np.sum(e <= 0.0))} samples with E <= 0 "
                                "inside the fit window")
    if len(t) < min_samples:
        raise InsufficientData(f"{len(t)} samples in window, need {min_samples}")
    y = np.log(e)
    tbar, ybar = t.mean(), y.mean()
    dt0, dy0 = t - tbar, y - ybar
    slope = float(dt0 @ dy0 / (dt0 @ dt0))
    intercept = float(ybar - slope * tbar)
    resid = y - (intercept + slope * t)
    sstot = float(dy0 @ dy0)
    goodness = 1.0 if sstot <= 1e-30 else 1.0 - float(resid @ resid) / sstot
    return DecayFit(C=float(np.exp(intercept)), sigma=-slope, goodness=goodness,
                    n_samples=len(t), window=window)


# ---------------------------------------------------------------------------
# cutoff system and localized norms

@dataclass
class ChartCutoff:
    """One boundary chart with its cutoff weight and grid-field sampler."""

    label: str
    cmap: CoordinateMap
    chi: np.ndarray                     # cutoff on the chart grid
    sampler: object                     # radial index array or box slicing spec

    def sample(self, grid: Grid, fieldv: np.ndarray) -> np.ndarray:
        if grid.kind == "radial":
            idx = self.sampler
            vals = fieldv[idx]
            return np.broadcast_to(vals, self.cmap.shape).copy()
        axis, side, m = self.sampler
        n = grid.shape[axis]
        k = np.arange(m + 1)
        j = m - k if side == 0 else (n - 1 - m) + k
        moved = np.moveaxis(fieldv, axis, 2)
        return moved[:, :, j]


@dataclass
class CutoffSystem:
    """Interior cutoff plus boundary cutoffs with a quadratic partition.

    ``shell_weights`` are the grid-level boundary cutoffs entering the
    bracketing identity; ``chart_cutoffs`` split them across charts for the
    tangential and normal localized norms.  floor_constant is the grid
    minimum of chi0^2 + sum of shell weights squared.
    """

    grid: Grid
    chi0: np.ndarray
    shell_weights: dict[str, np.ndarray]
    chart_cutoffs: list[ChartCutoff]
    depth: float
    floor_constant: float
    coverage_margin: float


def default_collar_depth(spec: DomainSpec) -> float:
    """min(quarter of the gap, depth keeping J above a tenth of its wall value)."""
    if spec.kind == "annulus":
        j_bound = (1.0 - np.sqrt(0.1)) * spec.r_outer
        return min(0.25 * (spec.r_outer - spec.r_inner), j_bound)
    walls = [L for L, w in zip(spec.lengths, spec.walls) if w]
    return 0.25 * min(walls)


def _cap_splitter(chart) -> np.ndarray:
    """Angular weight of a band chart; squares over the two caps sum to 1."""
    direction = chart.z / np.sqrt(np.sum(chart.z**2, axis=0))
    w = 0.5 * (direction[2] ** 2 - direction[0] ** 2 + 1.0)
    s = smoothstep((w - TAPER_LO) / (TAPER_HI - TAPER_LO))
    if chart.meta["cap"] == "z":
        return np.cos(0.5 * np.pi * s)
    return np.sin(0.5 * np.pi * s)


def _build_radial_cutoffs(grid: Grid, n_xi: int, n_zeta: int) -> CutoffSystem:
    spec = grid.spec
    h = grid.h[0]
    m = int(np.floor(default_collar_depth(spec) / h + 1e-12))
    if m < 4:
        raise ResolutionTooLow(f"collar of {m} cells cannot host a cutoff seam")
    depth = m * h
    d1, d2 = RAMP_START * depth, RAMP_END * depth

    r = grid.r
    w_in = ramp_down(r - spec.r_inner, d1, d2)
    w_out = ramp_down(spec.r_outer - r, d1, d2)
    chi0 = np.sqrt(np.maximum(0.0, 1.0 - w_in**2 - w_out**2))

    chart_cutoffs = []
    n = grid.shape[0]
    for side in ("inner", "outer"):
        for cap in ("z", "x"):
            chart = charts_mod.boundary_chart(spec, f"{side}:{cap}", n_xi, n_zeta)
            cmap = coords.coordinate_map(chart, depth, n_r=m + 1)
            dist = -cmap.r                          # distance to the wall
            ramp = ramp_down(dist, d1, d2)
            chi = _cap_splitter(chart)[:, :, None] * ramp[None, None, :]
            k = np.arange(m + 1)
            idx = m - k if side == "inner" else (n - 1 - m) + k
            cut = ChartCutoff(label=f"{side}:{cap}", cmap=cmap, chi=chi,
                              sampler=idx)
            _check_chart_support(cut)
            chart_cutoffs.append(cut)

    floor = float(np.min(chi0**2 + w_in**2 + w_out**2))
    return CutoffSystem(grid=grid, chi0=chi0,
                        shell_weights={"inner": w_in, "outer": w_out},
                        chart_cutoffs=chart_cutoffs, depth=depth,
                        floor_constant=floor,
                        coverage_margin=charts_mod.sphere_coverage_margin())


def _build_box_cutoffs(grid: Grid) -> CutoffSystem:
    spec = grid.spec
    chi0 = grid.scalar(1.0)
    shell_weights: dict[str, np.ndarray] = {}
    chart_cutoffs = []
    depth_used = np.inf
    for axis in range(3):
        if not spec.walls[axis]:
            continue
        h = grid.h[axis]
        m = int(np.floor(default_collar_depth(spec) / h + 1e-12))
        if m < 4:
            raise ResolutionTooLow(f"collar of {m} cells cannot host a cutoff seam")
        depth = m * h
        depth_used = min(depth_used, depth)
        d1, d2 = RAMP_START * depth, RAMP_END * depth
        x = grid.axes[axis]
        sh = [1, 1, 1]
        sh[axis] = grid.shape[axis]
        for side, dist1d in ((0, x), (1, spec.lengths[axis] - x)):
            face = f"{'xyz'[axis]}{side}"
            ramp1d = ramp_down(dist1d, d1, d2)
            shell_weights[face] = (ramp1d.reshape(sh)
                                   * np.ones(grid.shape))
            t_axes = [d for d in range(3) if d != axis]
            chart = charts_mod.boundary_chart(
                spec, face, n_xi=grid.shape[t_axes[0]], n_zeta=grid.shape[t_axes[1]])
            cmap = coords.coordinate_map(chart, depth, n_r=m + 1)
            ramp = ramp_down(-cmap.r, d1, d2)
            chi = np.ones(cmap.shape[:2])[:, :, None] * ramp[None, None, :]
            cut = ChartCutoff(label=face, cmap=cmap, chi=chi,
                              sampler=(axis, side, m))
            _check_chart_support(cut)
            chart_cutoffs.append(cut)
        comp = np.sqrt(np.maximum(
            0.0, 1.0 - shell_weights[f"{'xyz'[axis]}0"] ** 2
            - shell_weights[f"{'xyz'[axis]}1"] ** 2))
        chi0 = chi0 * comp
    total = chi0**2 + sum(w**2 for w in shell_weights.values())
    return CutoffSystem(grid=grid, chi0=chi0, shell_weights=shell_weights,
                        chart_cutoffs=chart_cutoffs, depth=float(depth_used),
                        floor_constant=float(np.min(total)),
                        coverage_margin=float("inf"))


def _check_chart_support(cut: ChartCutoff) -> None:
    """A cutoff must vanish on the open chart edges (no support leak)."""
    chi = cut.chi
    leak = max(float(np.max(np.abs(chi[0]))), float(np.max(np.abs(chi[-1]))))
    if cut.cmap.chart.kind == "plane":
        leak = 0.0           # the chart covers the whole closed face
    edge_r = float(np.max(np.abs(chi[:, :, 0])))
    if leak > 1e-12 or edge_r > 1e-12:
        raise ChartCoverage(f"cutoff {cut.label!r} leaks outside its chart "
                            f"(edge value {max(leak, edge_r):.3e})")


def build_cutoffs(grid: Grid, n_xi: int = 32, n_zeta: int = 48) -> CutoffSystem:
    if grid.kind == "radial":
        return _build_radial_cutoffs(grid, n_xi, n_zeta)
    return _build_box_cutoffs(grid)


def _tangential_stacks(cut: ChartCutoff, f: np.ndarray, order: int) -> list[np.ndarray]:
    """[|tang^0 f|^2, .., |tang^order f|^2] on the chart (tuple convention)."""
    hx, hz, _ = cut.cmap.h
    periodic = cut.cmap.chart.zeta_periodic
    levels = [[f]]
    for _ in range(order):
        nxt = []
        for arr in levels[-1]:
            nxt.append(chart_d1_arr(arr, hx, 0, periodic=False))
            nxt.append(chart_d1_arr(arr, hz, 1, periodic=periodic))
        levels.append(nxt)
    return [sum(a**2 for a in lvl) for lvl in levels]


@dataclass
class LocalizedReport:
    interior: dict
    tangential: dict
    normal: dict
    bracket: dict


def localized_norms(state, steady, cutoffs: CutoffSystem,
                    tangential_order: int = 3) -> LocalizedReport:
    """Cutoff-weighted interior, tangential and normal derivative norms of q.

    Interior: integral of chi0^2 rho_s^(gamma-4) |D^k q|^2 for k = 1..3.
    Per chart: tangential integrals chi^2 rho_s^(gamma-2) |tang^k q|^2 and
    mixed normal integrals chi^2 rho_s^(gamma-4) |tang^k d_r^m q_r|^2 for
    k + m <= 2.  The bracket block carries the grid-level first-order
    pieces whose sum is pinched between the known weight bounds times the
    global |D q|^2 integral.
    """
    grid = state.grid
    gamma = steady.gamma
    q = state.q
    w_int = steady.rho ** (gamma - 4.0)
    w_tan = steady.rho ** (gamma - 2.0)

    interior = {k: grid.integrate(cutoffs.chi0**2 * w_int
                                  * norms.pointwise_dk2(grid, q, k, "scalar"))
                for k in (1, 2, 3)}

    tangential: dict[str, dict] = {}
    normal: dict[str, dict] = {}
    for cut in cutoffs.chart_cutoffs:
        cmap = cut.cmap
        qc = cut.sample(grid, q)
        wt = cut.sample(grid, w_tan)
        wi = cut.sample(grid, w_int)
        chi2 = cut.chi**2
        stacks = _tangential_stacks(cut, qc, tangential_order)
        tangential[cut.label] = {
            k: cmap.integrate(chi2 * wt * stacks[k])
            for k in range(1, tangential_order + 1)}
        hr = cmap.h[2]
        q_r = chart_d1_arr(qc, hr, 2, periodic=False)
        mixed = {}
        for mm in range(0, 3):
            base = q_r
            for _ in range(mm):
                base = chart_d1_arr(base, hr, 2, periodic=False)
            tang = _tangential_stacks(cut, base, 2 - mm)
            for kk in range(0, 3 - mm):
                mixed[(kk, mm)] = cmap.integrate(chi2 * wi * tang[kk])
        normal[cut.label] = mixed

    dq2 = norms.pointwise_dk2(grid, q, 1, "scalar")
    pieces = {"interior": grid.integrate(cutoffs.chi0**2 * w_int * dq2)}
    for name, w in cutoffs.shell_weights.items():
        pieces[name] = grid.integrate(w**2 * w_int * dq2)
    xi_total = cutoffs.chi0**2 + sum(w**2 for w in cutoffs.shell_weights.values())
    bracket = {
        "pieces": pieces,
        "sum": float(sum(pieces.values())),
        "global_dq2": float(grid.integrate(dq2)),
        "floor_constant": cutoffs.floor_constant,
        "weight_min": float(np.min(w_int)),
        "weight_max_total": float(np.max(xi_total * w_int)),
        "lower_bound": float(cutoffs.floor_constant * np.min(w_int)
                             * grid.integrate(dq2)),
        "upper_bound": float(np.max(xi_total * w_int) * grid.integrate(dq2)),
    }
    return LocalizedReport(interior=interior, tangential=tangential,
                           normal=normal, bracket=bracket)
