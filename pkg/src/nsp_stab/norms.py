"""Discrete Sobolev norms of scalar and vector fields.

The squared seminorm of order k sums the squares of all k-fold Cartesian
partial derivatives over all index tuples (so mixed partials count with
multiplicity).  On the box this is evaluated by repeated second-order
differencing; on the radial grid the rotational symmetry collapses every
Cartesian derivative tensor to a closed form in the radial derivative
profiles, e.g. for a scalar f(r)

    |D^2 f|^2 = f''^2 + 2 (f'/r)^2

and analogously through order three (order four for radial vector fields,
whose boundary closures are order-reduced and documented as O(h) there).
"""

from __future__ import annotations

import numpy as np

from .domain.grid import Grid
from .domain import ops
from .errors import ResolutionTooLow


def _radial_scalar_dk2(r: np.ndarray, p: list[np.ndarray], k: int) -> np.ndarray:
    f, f1, f2, f3 = (p + [None] * 4)[:4]
    if k == 0:
        return f**2
    if k == 1:
        return f1**2
    if k == 2:
        return f2**2 + 2.0 * f1**2 / r**2
    if k == 3:
        return (f3**2 + 6.0 * f2**2 / r**2 - 12.0 * f1 * f2 / r**3
                + 6.0 * f1**2 / r**4)
    raise ValueError(f"radial scalar derivatives implemented through order 3, got {k}")


def _radial_vector_dk2(r: np.ndarray, p: list[np.ndarray], k: int) -> np.ndarray:
    u, u1, u2, u3, u4 = (p + [None] * 5)[:5]
    if k == 0:
        return u**2
    if k == 1:
        return u1**2 + 2.0 * u**2 / r**2
    if k == 2:
        return u2**2 + 6.0 * u1**2 / r**2 - 12.0 * u * u1 / r**3 + 6.0 * u**2 / r**4
    if k == 3:
        return (u3**2 + 12.0 * u2**2 / r**2 - 48.0 * u1 * u2 / r**3
                + (48.0 * u * u2 + 72.0 * u1**2) / r**4
                - 144.0 * u * u1 / r**5 + 72.0 * u**2 / r**6)
    if k == 4:
        return (u4**2 + 20.0 * u3**2 / r**2 - 120.0 * u2 * u3 / r**3
                + (240.0 * u1 * u3 + 300.0 * u2**2) / r**4
                - (240.0 * u * u3 + 1440.0 * u1 * u2) / r**5
                + (1440.0 * u * u2 + 1800.0 * u1**2) / r**6
                - 3600.0 * u * u1 / r**7 + 1800.0 * u**2 / r**8)
    raise ValueError(f"radial vector derivatives implemented through order 4, got {k}")


def _check_resolution(grid: Grid, m: int) -> None:
    if m > 0 and min(grid.shape) < 4 * m:
        raise ResolutionTooLow(f"order-{m} norms need at least {4 * m} nodes "
                               f"per axis, grid has {min(grid.shape)}")


def _box_dk2_pointwise(grid: Grid, comp: np.ndarray, k: int) -> np.ndarray:
    stack = comp
    for _ in range(k):
        stack = np.stack([ops.d1(grid, stack, axis=c) for c in range(3)])
    # leading axes enumerate index tuples; sum their squares pointwise
    return np.sum(stack.reshape((-1,) + grid.shape) ** 2, axis=0)


def pointwise_dk2(grid: Grid, field: np.ndarray, k: int,
                  kind: str = "scalar") -> np.ndarray:
    """|D^k field|^2 as a field (clipped at zero against round-off)."""
    _check_resolution(grid, k)
    field = np.asarray(field, dtype=float)
    if grid.kind == "radial":
        if kind == "scalar":
            profs = ops.derivative_profiles(grid, field, min(k, 3))
            integrand = _radial_scalar_dk2(grid.r, profs, k)
        else:
            profs = ops.derivative_profiles(grid, field[0], min(k, 4))
            integrand = _radial_vector_dk2(grid.r, profs, k)
    elif kind == "scalar":
        integrand = _box_dk2_pointwise(grid, field, k)
    else:
        integrand = sum(_box_dk2_pointwise(grid, field[c], k)
                        for c in range(grid.ncomp))
    return np.maximum(integrand, 0.0)


def dk_norm2(grid: Grid, field: np.ndarray, k: int, kind: str = "scalar") -> float:
    """Squared L2 norm of the order-k Cartesian derivative tensor."""
    return grid.integrate(pointwise_dk2(grid, field, k, kind))


def sobolev_norm2(grid: Grid, field: np.ndarray, m: int, kind: str = "scalar") -> float:
    _check_resolution(grid, m)
    return sum(dk_norm2(grid, field, k, kind) for k in range(m + 1))


def sobolev_norm(grid: Grid, field: np.ndarray, m: int, kind: str = "scalar") -> float:
    """H^m norm (sum of squared derivative norms through order m, rooted)."""
    return float(np.sqrt(sobolev_norm2(grid, field, m, kind)))


def l2_norm(grid: Grid, field: np.ndarray) -> float:
    return grid.l2(field)
