"""Analytic boundary charts for spheres and box faces.

A chart parametrizes a boundary patch by (xi, zeta) with the normalization

    |z_xi| = 1,   z_xi . z_zeta = 0,   |z_zeta| >= tau > 0,

carries the orthonormal frame (e1, e2, n) with n the outward unit normal,
and the six rotation coefficients (m1, m2, m3) and (m1', m2', m3') of the
frame along xi and zeta:

    d/dxi  (e1, e2, n)^T = [[0, -m3, -m1], [m3, 0, -m2], [m1, m2, 0]] (e1, e2, n)^T
    d/dzeta(e1, e2, n)^T = the primed analogue.

Spheres use arclength along a meridian for xi (so |z_xi| = 1 holds exactly)
and the azimuth for zeta; the azimuth direction is periodic.  A single band
chart keeps away from both poles of its own axis, and two band charts with
orthogonal axes cover a sphere with overlap.  Box faces are flat charts
with identically vanishing rotation coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UnsupportedBoundary
from .grid import DomainSpec

# Default polar band: caps with orthogonal axes overlap near theta = pi/4.
BAND_THETA_MIN = np.pi / 4.0 - 0.12
BAND_THETA_MAX = 3.0 * np.pi / 4.0 + 0.12

_CAP_ROTATIONS = {
    # pole axis of the parametrization
    "z": np.eye(3),
    "x": np.array([[0.0, 0.0, 1.0],
                   [0.0, 1.0, 0.0],
                   [-1.0, 0.0, 0.0]]),
}


@dataclass(frozen=True)
class BoundaryChart:
    kind: str                    # "sphere" or "plane"
    label: str
    xi: np.ndarray               # (n_xi,)
    zeta: np.ndarray             # (n_zeta,)
    zeta_periodic: bool
    z: np.ndarray                # (3, n_xi, n_zeta) boundary points
    e1: np.ndarray
    e2: np.ndarray
    n: np.ndarray
    m: np.ndarray                # (3, n_xi, n_zeta): m1, m2, m3
    mp: np.ndarray               # (3, n_xi, n_zeta): m1', m2', m3'
    z_zeta_norm: np.ndarray      # |z_zeta|
    tau_floor: float
    meta: dict = field(default_factory=dict)

    @property
    def h_xi(self) -> float:
        return float(self.xi[1] - self.xi[0])

    @property
    def h_zeta(self) -> float:
        return float(self.zeta[1] - self.zeta[0])


def _sphere_chart(radius: float, normal_sign: float, cap: str, label: str,
                  n_xi: int, n_zeta: int) -> BoundaryChart:
    rot = _CAP_ROTATIONS[cap]
    theta = np.linspace(BAND_THETA_MIN, BAND_THETA_MAX, n_xi)
    xi = radius * theta
    zeta = np.linspace(0.0, 2.0 * np.pi, n_zeta, endpoint=False)
    th = theta[:, None]
    ze = zeta[None, :]
    st, ct = np.sin(th), np.cos(th)
    sz, cz = np.sin(ze), np.cos(ze)

    radial = np.stack([st * cz, st * sz, ct * np.ones_like(ze)])
    e1 = np.stack([ct * cz, ct * sz, -st * np.ones_like(ze)])
    e2 = np.stack([-sz * np.ones_like(th), cz * np.ones_like(th),
                   np.zeros((n_xi, n_zeta))])
    z = radius * radial
    n = normal_sign * radial

    # rotate the cap axis into place; m coefficients are frame invariants
    z = np.einsum("ab,b...->a...", rot, z)
    e1 = np.einsum("ab,b...->a...", rot, e1)
    e2 = np.einsum("ab,b...->a...", rot, e2)
    n = np.einsum("ab,b...->a...", rot, n)

    ones = np.ones((n_xi, n_zeta))
    m = np.stack([(normal_sign / radius) * ones, 0.0 * ones, 0.0 * ones])
    mp = np.stack([0.0 * ones, normal_sign * st * ones, -ct * ones])
    z_zeta_norm = radius * st * ones
    return BoundaryChart(kind="sphere", label=label, xi=xi, zeta=zeta,
                         zeta_periodic=True, z=z, e1=e1, e2=e2, n=n, m=m, mp=mp,
                         z_zeta_norm=z_zeta_norm,
                         tau_floor=float(radius * np.sin(BAND_THETA_MIN)),
                         meta={"radius": radius, "normal_sign": normal_sign,
                               "cap": cap})


_FACES = {
    "x0": (0, 0), "x1": (0, 1),
    "y0": (1, 0), "y1": (1, 1),
    "z0": (2, 0), "z1": (2, 1),
}


def _plane_chart(spec: DomainSpec, face: str, n_xi: int, n_zeta: int) -> BoundaryChart:
    axis, side = _FACES[face]
    if not spec.walls[axis]:
        raise UnsupportedBoundary(f"axis {axis} is periodic, face {face} has no wall")
    t_axes = [d for d in range(3) if d != axis]
    L1, L2 = spec.lengths[t_axes[0]], spec.lengths[t_axes[1]]
    xi = np.linspace(0.0, L1, n_xi)
    zeta = np.linspace(0.0, L2, n_zeta)
    z = np.zeros((3, n_xi, n_zeta))
    z[t_axes[0]] = xi[:, None]
    z[t_axes[1]] = zeta[None, :]
    z[axis] = spec.lengths[axis] if side == 1 else 0.0
    ones = np.ones((n_xi, n_zeta))
    e1 = np.zeros_like(z)
    e1[t_axes[0]] = 1.0
    e2 = np.zeros_like(z)
    e2[t_axes[1]] = 1.0
    n = np.zeros_like(z)
    n[axis] = 1.0 if side == 1 else -1.0
    zero3 = np.zeros((3, n_xi, n_zeta))
    return BoundaryChart(kind="plane", label=face, xi=xi, zeta=zeta,
                         zeta_periodic=False, z=z, e1=e1, e2=e2, n=n,
                         m=zero3, mp=zero3.copy(), z_zeta_norm=ones,
                         tau_floor=1.0, meta={"axis": axis, "side": side})


def boundary_chart(spec: DomainSpec, which_boundary: str,
                   n_xi: int = 48, n_zeta: int = 48) -> BoundaryChart:
    """Build one analytic chart of the domain boundary.

    For the annulus, ``which_boundary`` is "inner" or "outer", optionally
    suffixed with the cap axis, e.g. "outer:x" (default cap axis "z").
    For the box it is one of x0, x1, y0, y1, z0, z1.
    """
    spec.validate()
    if spec.kind == "annulus":
        parts = which_boundary.split(":")
        side = parts[0]
        cap = parts[1] if len(parts) > 1 else "z"
        if side not in ("inner", "outer") or cap not in _CAP_ROTATIONS:
            raise UnsupportedBoundary(f"unknown annulus boundary {which_boundary!r}")
        if side == "inner":
            return _sphere_chart(spec.r_inner, -1.0, cap, which_boundary, n_xi, n_zeta)
        return _sphere_chart(spec.r_outer, 1.0, cap, which_boundary, n_xi, n_zeta)
    if spec.kind == "box":
        if which_boundary not in _FACES:
            raise UnsupportedBoundary(f"unknown box face {which_boundary!r}")
        return _plane_chart(spec, which_boundary, n_xi, n_zeta)
    raise UnsupportedBoundary(f"no analytic chart for domain kind {spec.kind!r}")


def covering_charts(spec: DomainSpec, n_xi: int = 48, n_zeta: int = 48) -> list[BoundaryChart]:
    """The standard chart family covering the whole wall boundary."""
    if spec.kind == "annulus":
        names = ["inner:z", "inner:x", "outer:z", "outer:x"]
    else:
        names = [f for f in _FACES if spec.walls[_FACES[f][0]]]
    return [boundary_chart(spec, name, n_xi, n_zeta) for name in names]


def sphere_coverage_margin(samples: int = 4000, seed: int = 7) -> float:
    """Smallest over random sphere directions of the best band-interior margin.

    Positive margin means every direction lies strictly inside at least one
    of the two default band charts (axes z and x).
    """
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(samples, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    margins = []
    for axis in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])):
        theta = np.arccos(np.clip(p @ axis, -1.0, 1.0))
        margins.append(np.minimum(theta - BAND_THETA_MIN, BAND_THETA_MAX - theta))
    return float(np.min(np.maximum(margins[0], margins[1])))


def frame_orthonormality_residual(chart: BoundaryChart) -> float:
    """Max deviation of (e1, e2, n) from orthonormality over chart nodes."""
    vecs = [chart.e1, chart.e2, chart.n]
    res = 0.0
    for a in range(3):
        for b in range(3):
            dot = np.sum(vecs[a] * vecs[b], axis=0)
            target = 1.0 if a == b else 0.0
            res = max(res, float(np.max(np.abs(dot - target))))
    return res


def chart_normalization_residual(chart: BoundaryChart) -> float:
    """Max violation of |z_xi| = 1, z_xi . z_zeta = 0 and |z_zeta| matching."""
    from . import coords  # local import; coords depends on charts

    z_xi = coords.chart_d1_arr(chart.z, chart.h_xi, axis=1, periodic=False)
    z_ze = coords.chart_d1_arr(chart.z, chart.h_zeta, axis=2,
                               periodic=chart.zeta_periodic)
    r1 = np.abs(np.sqrt(np.sum(z_xi**2, axis=0)) - 1.0)
    r2 = np.abs(np.sum(z_xi * z_ze, axis=0))
    r3 = np.abs(np.sqrt(np.sum(z_ze**2, axis=0)) - chart.z_zeta_norm)
    return float(max(r1.max(), r2.max(), r3.max()))


def frenet_fd_residual(chart: BoundaryChart) -> float:
    """Max mismatch between differenced frames and the rotation matrices."""
    from . import coords

    frames = np.stack([chart.e1, chart.e2, chart.n])   # (3 frame, 3 comp, nxi, nzeta)
    m1, m2, m3 = chart.m
    mp1, mp2, mp3 = chart.mp
    zero = np.zeros_like(m1)

    def rot(a, b, c):
        # antisymmetric coefficient matrix [[0,-c,-a],[c,0,-b],[a,b,0]]
        return np.stack([np.stack([zero, -c, -a]),
                         np.stack([c, zero, -b]),
                         np.stack([a, b, zero])])

    res = 0.0
    for axis, h, periodic, coeff in (
            (2, chart.h_xi, False, rot(m1, m2, m3)),
            (3, chart.h_zeta, chart.zeta_periodic, rot(mp1, mp2, mp3))):
        fd = coords.chart_d1_arr(frames, h, axis=axis, periodic=periodic)
        expected = np.einsum("fg...,gc...->fc...", coeff, frames)
        res = max(res, float(np.max(np.abs(fd - expected))))
    return res
