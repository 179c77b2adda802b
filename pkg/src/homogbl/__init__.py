"""Periodic homogenization with boundary-layer correctors on the unit square.

Q1 finite elements on structured grids, cell problems of first and second
order, the unfolding and averaging operators, corrector rate studies and the
lowest Dirichlet eigenvalue.
"""

__version__ = "0.1.0"

from homogbl.cell import HomogenizedTensor, solve_cell_problems
from homogbl.corrector import SweepConfig, run_sweep
from homogbl.errors import HomogError
from homogbl.grid import CoefficientField, Grid, build_cell_grid, build_domain_grid
from homogbl.solver import SolverConfig

__all__ = [
    "CoefficientField",
    "Grid",
    "HomogError",
    "HomogenizedTensor",
    "SolverConfig",
    "SweepConfig",
    "build_cell_grid",
    "build_domain_grid",
    "run_sweep",
    "solve_cell_problems",
]
