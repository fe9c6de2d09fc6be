"""Discretization of the bounded domain.

Two grid families are supported:

* ``annulus`` with the radially symmetric reduction: fields are sampled on
  radial nodes in [r_inner, r_outer] and carry spherical volume weights
  4*pi*r^2*dr.  Vector fields have a single radial component.
* ``box``: a uniform Cartesian product grid.  Axes flagged as walls carry
  physical boundary nodes; axes without walls wrap periodically.

Quadrature is trapezoidal (half weights on boundary nodes), so the weight
sum reproduces |Omega| to second order on the annulus and exactly on a box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidSpec

MIN_NODES_PER_AXIS = 8


@dataclass(frozen=True)
class DomainSpec:
    """Geometry and resolution of the computational domain."""

    kind: str  # "annulus" or "box"
    resolution: tuple[int, ...]
    r_inner: float = 0.0
    r_outer: float = 0.0
    radial: bool = True
    lengths: tuple[float, float, float] = (1.0, 1.0, 1.0)
    walls: tuple[bool, bool, bool] = (True, True, True)

    @staticmethod
    def annulus(r_inner: float, r_outer: float, n: int, radial: bool = True) -> "DomainSpec":
        return DomainSpec(kind="annulus", resolution=(int(n),),
                          r_inner=float(r_inner), r_outer=float(r_outer), radial=radial)

    @staticmethod
    def box(lengths, n, walls=(True, True, True)) -> "DomainSpec":
        if np.isscalar(n):
            n = (int(n),) * 3
        return DomainSpec(kind="box", resolution=tuple(int(k) for k in n),
                          lengths=tuple(float(L) for L in lengths),
                          walls=tuple(bool(w) for w in walls))

    def validate(self) -> None:
        if self.kind == "annulus":
            if not self.r_inner > 0.0:
                raise InvalidSpec(f"annulus needs r_inner > 0, got {self.r_inner}")
            if not self.r_inner < self.r_outer:
                raise InvalidSpec(f"annulus needs r_inner < r_outer, got "
                                  f"({self.r_inner}, {self.r_outer})")
            if len(self.resolution) != 1:
                raise InvalidSpec("radial annulus takes a single resolution")
            if not self.radial:
                raise InvalidSpec("annulus supports only the radially symmetric "
                                  "reduction at desk scale")
        elif self.kind == "box":
            if len(self.resolution) != 3:
                raise InvalidSpec("box takes three per-axis resolutions")
            if any(L <= 0.0 for L in self.lengths):
                raise InvalidSpec(f"box needs positive lengths, got {self.lengths}")
        else:
            raise InvalidSpec(f"unknown domain kind {self.kind!r}")
        for n in self.resolution:
            if n < MIN_NODES_PER_AXIS:
                raise InvalidSpec(f"resolution {n} < {MIN_NODES_PER_AXIS} per axis")


@dataclass(frozen=True)
class Grid:
    """Sampled domain: node coordinates, masks, normals and quadrature.

    ``weights`` integrates volume integrals, ``boundary_weight`` surface
    integrals over the wall boundary.  ``normal`` holds the unit outward
    normal on boundary nodes (zero elsewhere); box edge and corner nodes
    carry the normalized sum of the adjacent face normals.
    """

    spec: DomainSpec
    kind: str                      # "radial" or "box"
    shape: tuple[int, ...]
    ncomp: int
    h: tuple[float, ...]
    weights: np.ndarray
    boundary_mask: np.ndarray
    interior_mask: np.ndarray
    normal: np.ndarray
    boundary_weight: np.ndarray
    volume: float
    r: np.ndarray | None = None
    axes: tuple[np.ndarray, ...] = field(default=())

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def scalar(self, fill: float = 0.0) -> np.ndarray:
        return np.full(self.shape, fill, dtype=float)

    def vector(self, fill: float = 0.0) -> np.ndarray:
        return np.full((self.ncomp,) + self.shape, fill, dtype=float)

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(self.weights * f))

    def mean(self, f: np.ndarray) -> float:
        return self.integrate(f) / float(np.sum(self.weights))

    def boundary_integral(self, g: np.ndarray) -> float:
        return float(np.sum(self.boundary_weight * g))

    def l2(self, f: np.ndarray) -> float:
        """Weighted L2 norm; accepts scalar or component-stacked fields."""
        f = np.asarray(f)
        if f.shape == self.shape:
            return float(np.sqrt(np.sum(self.weights * f * f)))
        return float(np.sqrt(np.sum(self.weights * np.sum(f * f, axis=0))))


def _radial_grid(spec: DomainSpec) -> Grid:
    n = spec.resolution[0]
    r = np.linspace(spec.r_inner, spec.r_outer, n)
    h = r[1] - r[0]
    w1 = np.full(n, h)
    w1[0] = w1[-1] = h / 2.0
    weights = 4.0 * np.pi * r**2 * w1
    boundary = np.zeros(n, dtype=bool)
    boundary[0] = boundary[-1] = True
    normal = np.zeros((1, n))
    normal[0, 0] = -1.0
    normal[0, -1] = 1.0
    bw = np.zeros(n)
    bw[0] = 4.0 * np.pi * spec.r_inner**2
    bw[-1] = 4.0 * np.pi * spec.r_outer**2
    volume = 4.0 * np.pi / 3.0 * (spec.r_outer**3 - spec.r_inner**3)
    return Grid(spec=spec, kind="radial", shape=(n,), ncomp=1, h=(h,),
                weights=weights, boundary_mask=boundary, interior_mask=~boundary,
                normal=normal, boundary_weight=bw, volume=volume, r=r)


def _box_grid(spec: DomainSpec) -> Grid:
    axes, hs, w1d = [], [], []
    for L, n, wall in zip(spec.lengths, spec.resolution, spec.walls):
        if wall:
            ax = np.linspace(0.0, L, n)
            h = L / (n - 1)
            w = np.full(n, h)
            w[0] = w[-1] = h / 2.0
        else:
            h = L / n
            ax = np.arange(n) * h
            w = np.full(n, h)
        axes.append(ax)
        hs.append(h)
        w1d.append(w)
    shape = tuple(spec.resolution)
    weights = w1d[0][:, None, None] * w1d[1][None, :, None] * w1d[2][None, None, :]

    boundary = np.zeros(shape, dtype=bool)
    normal = np.zeros((3,) + shape)
    bw = np.zeros(shape)
    for ax in range(3):
        if not spec.walls[ax]:
            continue
        others = [d for d in range(3) if d != ax]
        area = np.ones(shape)
        for d in others:
            sh = [1, 1, 1]
            sh[d] = shape[d]
            area = area * w1d[d].reshape(sh)
        for side, idx in ((-1.0, 0), (1.0, shape[ax] - 1)):
            sl = [slice(None)] * 3
            sl[ax] = idx
            sl = tuple(sl)
            boundary[sl] = True
            normal[(ax,) + sl] += side
            bw[sl] += area[sl]
    norms = np.sqrt(np.sum(normal**2, axis=0))
    nz = norms > 0
    for c in range(3):
        normal[c][nz] /= norms[nz]
    volume = float(np.prod(spec.lengths))
    return Grid(spec=spec, kind="box", shape=shape, ncomp=3, h=tuple(hs),
                weights=weights, boundary_mask=boundary, interior_mask=~boundary,
                normal=normal, boundary_weight=bw, volume=volume,
                axes=tuple(axes))


def build_grid(spec: DomainSpec) -> Grid:
    """Construct the grid for a validated domain spec."""
    spec.validate()
    if spec.kind == "annulus":
        return _radial_grid(spec)
    return _box_grid(spec)
