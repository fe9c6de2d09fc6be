from .grid import DomainSpec, Grid, build_grid
from .charts import BoundaryChart, boundary_chart, covering_charts
from .coords import CoordinateMap, coordinate_map, frame_derivatives, commutator_residual

__all__ = [
    "DomainSpec", "Grid", "build_grid",
    "BoundaryChart", "boundary_chart", "covering_charts",
    "CoordinateMap", "coordinate_map", "frame_derivatives", "commutator_residual",
]
