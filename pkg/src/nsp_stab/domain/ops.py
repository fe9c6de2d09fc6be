"""Second-order finite-difference calculus on the supported grids.

All derivative operators are central in the interior and one-sided
second-order on wall boundaries; periodic box axes wrap.  Radial vector
fields carry a single component u(r) along the outward radial direction,
and the radial forms below are exactly the three-dimensional operators
restricted to radially symmetric fields, e.g.

    div(u r^)      = u' + 2 u / r
    (lap u)_radial = u'' + 2 u'/r - 2 u/r^2

``div_conservative`` is the flux form whose weighted sum telescopes to the
boundary flux exactly; the mass projection in the time stepper then only
has to remove round-off.
"""

from __future__ import annotations

import numpy as np

from .grid import Grid


def _d1_line(f: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    """First derivative along axis 0."""
    if periodic:
        return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * h)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * h)
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return out


def _d2_line(f: np.ndarray, h: float, periodic: bool) -> np.ndarray:
    """Second derivative along axis 0."""
    h2 = h * h
    if periodic:
        return (np.roll(f, -1, axis=0) - 2.0 * f + np.roll(f, 1, axis=0)) / h2
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h2
    return out


def d1(grid: Grid, f: np.ndarray, axis: int = 0) -> np.ndarray:
    periodic = grid.kind == "box" and not grid.spec.walls[axis]
    g = np.moveaxis(f, axis, 0)
    return np.moveaxis(_d1_line(g, grid.h[axis], periodic), 0, axis)


def d2(grid: Grid, f: np.ndarray, axis: int = 0) -> np.ndarray:
    periodic = grid.kind == "box" and not grid.spec.walls[axis]
    g = np.moveaxis(f, axis, 0)
    return np.moveaxis(_d2_line(g, grid.h[axis], periodic), 0, axis)


def grad(grid: Grid, s: np.ndarray) -> np.ndarray:
    if grid.kind == "radial":
        return d1(grid, s)[None, :]
    return np.stack([d1(grid, s, axis=c) for c in range(3)])


def div(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Pointwise (product-rule) divergence."""
    if grid.kind == "radial":
        return d1(grid, v[0]) + 2.0 * v[0] / grid.r
    return sum(d1(grid, v[c], axis=c) for c in range(3))


def laplacian(grid: Grid, s: np.ndarray) -> np.ndarray:
    if grid.kind == "radial":
        return d2(grid, s) + 2.0 * d1(grid, s) / grid.r
    return sum(d2(grid, s, axis=c) for c in range(3))


def vector_laplacian(grid: Grid, v: np.ndarray) -> np.ndarray:
    if grid.kind == "radial":
        u = v[0]
        out = d2(grid, u) + 2.0 * d1(grid, u) / grid.r - 2.0 * u / grid.r**2
        return out[None, :]
    return np.stack([laplacian(grid, v[c]) for c in range(3)])


def grad_div(grid: Grid, v: np.ndarray) -> np.ndarray:
    return grad(grid, div(grid, v))


def advect_scalar(grid: Grid, u: np.ndarray, s: np.ndarray) -> np.ndarray:
    """u . grad s"""
    g = grad(grid, s)
    return np.sum(u * g, axis=0)


def advect_vector(grid: Grid, u: np.ndarray) -> np.ndarray:
    """(u . grad) u"""
    if grid.kind == "radial":
        return (u[0] * d1(grid, u[0]))[None, :]
    return np.stack([advect_scalar(grid, u, u[c]) for c in range(3)])


def _flux_divergence_line(f: np.ndarray, area: np.ndarray, cell: np.ndarray,
                          h: float, periodic: bool) -> np.ndarray:
    """Flux-form d(area*f)/dr over cells along axis 0.

    ``area`` holds the face metric at nodes (r^2 radially, 1 on boxes);
    boundary cells are the trapezoidal half cells and see the wall value of
    f itself as the wall flux.
    """
    if periodic:
        fface = 0.5 * (f + np.roll(f, -1, axis=0))
        aface = 0.5 * (area + np.roll(area, -1, axis=0))
        flux = aface * fface
        return (flux - np.roll(flux, 1, axis=0)) / (h * cell)
    fface = 0.5 * (f[:-1] + f[1:])
    aface = 0.5 * (area[:-1] + area[1:])
    flux = aface * fface                       # flux at faces i+1/2
    out = np.empty_like(f)
    out[1:-1] = (flux[1:] - flux[:-1]) / (h * cell[1:-1])
    out[0] = (flux[0] - area[0] * f[0]) / (0.5 * h * cell[0])
    out[-1] = (area[-1] * f[-1] - flux[-1]) / (0.5 * h * cell[-1])
    return out


def div_conservative(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Divergence in flux form; discrete volume sum equals the wall flux."""
    if grid.kind == "radial":
        r2 = grid.r**2
        return _flux_divergence_line(v[0], r2, r2, grid.h[0], periodic=False)
    out = np.zeros(grid.shape)
    for c in range(3):
        periodic = not grid.spec.walls[c]
        f = np.moveaxis(v[c], c, 0)
        ones = np.ones_like(f)
        contrib = _flux_divergence_line(f, ones, ones, grid.h[c], periodic)
        out += np.moveaxis(contrib, 0, c)
    return out


def normal_derivative(grid: Grid, s: np.ndarray) -> np.ndarray:
    """nu . grad s on boundary nodes (zero elsewhere)."""
    g = grad(grid, s)
    out = np.sum(grid.normal * g, axis=0)
    out[~grid.boundary_mask] = 0.0
    return out


def derivative_profiles(grid: Grid, f: np.ndarray, m: int) -> list[np.ndarray]:
    """[f, f', .., f^(m)] along the radial axis by repeated differencing."""
    profs = [np.asarray(f, dtype=float)]
    for _ in range(m):
        profs.append(d1(grid, profs[-1]))
    return profs
