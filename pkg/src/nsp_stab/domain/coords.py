"""Collar coordinates (xi, zeta, r) attached to a boundary chart.

Points near the boundary are written x = z(xi, zeta) + r n(xi, zeta) with n
the outward unit normal, so r is the signed distance to the wall and is
negative inside the domain.  The metric data of the transformation are

    A = |z_zeta| + m2' r,  B = -m1' r,  C = -m2 r,  D = 1 + m1 r,
    J = A D - B C,

and the Cartesian gradients of the chart coordinates are

    grad xi   = (A e1 + B e2) / J,
    grad zeta = (C e1 + D e2) / J,
    grad r    = n,

which turn chart-space derivatives of a sampled field into Cartesian ones.
Chart fields are arrays indexed (xi, zeta, r).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateMap, OutOfCollar
from .charts import BoundaryChart

_MIN_DEPTH_FRACTION = 1e-8


def chart_d1_arr(f: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    """Second-order first derivative of a bare array along one axis."""
    g = np.moveaxis(f, axis, 0)
    if periodic:
        out = (np.roll(g, -1, axis=0) - np.roll(g, 1, axis=0)) / (2.0 * h)
    else:
        out = np.empty_like(g)
        out[1:-1] = (g[2:] - g[:-2]) / (2.0 * h)
        out[0] = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h)
        out[-1] = (3.0 * g[-1] - 4.0 * g[-2] + g[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class CoordinateMap:
    chart: BoundaryChart
    r: np.ndarray                 # (n_r,) from -depth to 0
    depth: float
    A: np.ndarray                 # (n_xi, n_zeta, n_r)
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    J: np.ndarray
    inv_xi: np.ndarray            # (3, n_xi, n_zeta, n_r) = grad xi
    inv_zeta: np.ndarray
    inv_r: np.ndarray
    points: np.ndarray            # (3, n_xi, n_zeta, n_r)
    weights: np.ndarray           # J-weighted collar quadrature

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.J.shape

    @property
    def h(self) -> tuple[float, float, float]:
        return (self.chart.h_xi, self.chart.h_zeta, float(self.r[1] - self.r[0]))

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(self.weights * f))


def _metric(chart: BoundaryChart, r: np.ndarray):
    m1, m2, _ = (c[:, :, None] for c in chart.m)
    mp1, mp2, _ = (c[:, :, None] for c in chart.mp)
    zz = chart.z_zeta_norm[:, :, None]
    rr = r[None, None, :]
    A = zz + mp2 * rr
    B = -mp1 * rr
    C = -m2 * rr
    D = 1.0 + m1 * rr
    return A, B, C, D, A * D - B * C


def _jacobian_interval_min(chart: BoundaryChart, depth: float) -> float:
    """Exact minimum of the quadratic J(r) over the collar [-depth, 0]."""
    m1, m2, _ = chart.m
    mp1, mp2, _ = chart.mp
    zz = chart.z_zeta_norm
    c0, c1, c2 = zz, m1 * zz + mp2, m1 * mp2 - m2 * mp1
    vals = [c0, c0 - c1 * depth + c2 * depth**2]
    safe = np.where(c2 != 0.0, 2.0 * c2, 1.0)
    rstar = np.where(c2 != 0.0, -c1 / safe, np.inf)
    inside = (rstar > -depth) & (rstar < 0.0) & (c2 != 0.0)
    jstar = np.where(inside, c0 + c1 * rstar + c2 * rstar**2, np.inf)
    vals.append(jstar)
    return float(min(np.min(v) for v in vals))


def coordinate_map(chart: BoundaryChart, collar_depth: float,
                   n_r: int = 17) -> CoordinateMap:
    """Build the collar map, shrinking the depth until J stays positive.

    Positivity is checked on the exact quadratic J(r) over the whole
    collar interval, not only at the sampled nodes.
    """
    depth = float(collar_depth)
    if depth <= 0.0:
        raise DegenerateMap("collar depth must be positive")
    floor = depth * _MIN_DEPTH_FRACTION
    while _jacobian_interval_min(chart, depth) <= 0.0:
        depth *= 0.5
        if depth < floor:
            raise DegenerateMap(
                f"Jacobian stays nonpositive on chart {chart.label!r} "
                f"even at depth {depth:.3e}")
    r = np.linspace(-depth, 0.0, n_r)
    A, B, C, D, J = _metric(chart, r)

    e1 = chart.e1[:, :, :, None]
    e2 = chart.e2[:, :, :, None]
    n = chart.n[:, :, :, None] * np.ones_like(J)[None]
    inv_xi = (A[None] * e1 + B[None] * e2) / J[None]
    inv_zeta = (C[None] * e1 + D[None] * e2) / J[None]
    points = chart.z[:, :, :, None] + r[None, None, None, :] * chart.n[:, :, :, None]

    h_r = float(r[1] - r[0])
    w_xi = np.full(len(chart.xi), chart.h_xi)
    w_xi[0] = w_xi[-1] = chart.h_xi / 2.0
    if chart.zeta_periodic:
        w_zeta = np.full(len(chart.zeta), chart.h_zeta)
    else:
        w_zeta = np.full(len(chart.zeta), chart.h_zeta)
        w_zeta[0] = w_zeta[-1] = chart.h_zeta / 2.0
    w_r = np.full(n_r, h_r)
    w_r[0] = w_r[-1] = h_r / 2.0
    weights = J * w_xi[:, None, None] * w_zeta[None, :, None] * w_r[None, None, :]
    return CoordinateMap(chart=chart, r=r, depth=depth, A=A, B=B, C=C, D=D, J=J,
                         inv_xi=inv_xi, inv_zeta=inv_zeta, inv_r=n,
                         points=points, weights=weights)


def _check_collar_field(field: np.ndarray, cmap: CoordinateMap) -> np.ndarray:
    field = np.asarray(field, dtype=float)
    if field.shape != cmap.shape:
        raise OutOfCollar(f"field shape {field.shape} does not match collar "
                          f"grid {cmap.shape}")
    return field


def chart_derivatives(field: np.ndarray, cmap: CoordinateMap):
    """(f_xi, f_zeta, f_r) by second-order differences in chart space."""
    field = _check_collar_field(field, cmap)
    hx, hz, hr = cmap.h
    f_xi = chart_d1_arr(field, hx, 0, periodic=False)
    f_zeta = chart_d1_arr(field, hz, 1, periodic=cmap.chart.zeta_periodic)
    f_r = chart_d1_arr(field, hr, 2, periodic=False)
    return f_xi, f_zeta, f_r


def frame_derivatives(field: np.ndarray, cmap: CoordinateMap):
    """Tangential pair (f_xi, f_zeta) and normal derivative f_r."""
    f_xi, f_zeta, f_r = chart_derivatives(field, cmap)
    return (f_xi, f_zeta), f_r


def cartesian_gradient(field: np.ndarray, cmap: CoordinateMap) -> np.ndarray:
    """Cartesian gradient reconstructed from chart-space derivatives."""
    f_xi, f_zeta, f_r = chart_derivatives(field, cmap)
    return (cmap.inv_xi * f_xi[None] + cmap.inv_zeta * f_zeta[None]
            + cmap.inv_r * f_r[None])


def commutator_residual(field: np.ndarray, cmap: CoordinateMap) -> float | None:
    """||[d_xi, tangential] f|| / ||grad f|| over the collar.

    Returns None when the field is constant to round-off (the ratio is not
    applicable rather than a failure).
    """
    field = _check_collar_field(field, cmap)
    hx, hz, _ = cmap.h
    gradf = cartesian_gradient(field, cmap)
    den = np.sqrt(sum(cmap.integrate(gradf[i] ** 2) for i in range(3)))
    if den < 1e-14:
        return None
    num2 = 0.0
    for axis, h, periodic in ((0, hx, False), (1, hz, cmap.chart.zeta_periodic)):
        tang = chart_d1_arr(field, h, axis, periodic)
        grad_tang = cartesian_gradient(tang, cmap)
        for i in range(3):
            tang_grad = chart_d1_arr(gradf[i], h, axis, periodic)
            num2 += cmap.integrate((grad_tang[i] - tang_grad) ** 2)
    return float(np.sqrt(num2) / den)


def jacobian_expansion_residual(cmap: CoordinateMap) -> float:
    """Max |(A D - B C) - quadratic expansion of J in r| (algebraic identity)."""
    chart = cmap.chart
    m1, m2, _ = (c[:, :, None] for c in chart.m)
    mp1, mp2, _ = (c[:, :, None] for c in chart.mp)
    zz = chart.z_zeta_norm[:, :, None]
    rr = cmap.r[None, None, :]
    expansion = zz + (m1 * zz + mp2) * rr + (m1 * mp2 - m2 * mp1) * rr**2
    return float(np.max(np.abs(cmap.J - expansion)))


def jacobian_cross_residual(cmap: CoordinateMap) -> float:
    """Max |J - |x_xi cross x_zeta|| with the map differentiated numerically."""
    hx, hz, _ = cmap.h
    x_xi = chart_d1_arr(cmap.points, hx, 1, periodic=False)
    x_zeta = chart_d1_arr(cmap.points, hz, 2, periodic=cmap.chart.zeta_periodic)
    cross = np.cross(x_xi, x_zeta, axis=0)
    return float(np.max(np.abs(cmap.J - np.sqrt(np.sum(cross**2, axis=0)))))


def chain_rule_residual(cmap: CoordinateMap) -> float:
    """Max |M_inv (x_xi, x_zeta, x_r) - I| with forward columns differenced."""
    hx, hz, hr = cmap.h
    cols = [chart_d1_arr(cmap.points, hx, 1, periodic=False),
            chart_d1_arr(cmap.points, hz, 2, periodic=cmap.chart.zeta_periodic),
            chart_d1_arr(cmap.points, hr, 3, periodic=False)]
    rows = [cmap.inv_xi, cmap.inv_zeta, cmap.inv_r]
    res = 0.0
    for a in range(3):
        for b in range(3):
            prod = np.sum(rows[a] * cols[b], axis=0)
            target = 1.0 if a == b else 0.0
            res = max(res, float(np.max(np.abs(prod - target))))
    return res
