"""Numerical verification of an exit-time perturbation bound.

For two diffusions driven by coupled noise on a common region, the gap
between their mean first-exit times is controlled by the gradient of the
mean-exit-time field times the chains' spatial gap at the first exit.  This
package solves the field on a grid, simulates coupled exits, and checks the
inequality with statistical error control.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .geometry import (
    Ball,
    Box,
    Interval,
    Region,
    region_from_dict,
    region_to_dict,
)
from .expr import parse, evaluate, eval_many, pretty
from .pde import (
    DiffusionSpec,
    MeanExitField,
    build_grid,
    assemble,
    solve_dirichlet,
    solve_mean_exit,
    sup_grad_norm,
    check_ellipticity,
)
from .sde import (
    CoupledPair,
    OutcomeBatch,
    PathConfig,
    run_replicates,
    simulate_pair,
)
from .bound import (
    BoundReport,
    NumericalFailure,
    verify_bound,
    render_table,
)
from .scenario import Scenario, ScenarioError, load_scenario

__all__ = [
    "__version__",
    "Ball",
    "Box",
    "Interval",
    "Region",
    "region_from_dict",
    "region_to_dict",
    "parse",
    "evaluate",
    "eval_many",
    "pretty",
    "DiffusionSpec",
    "MeanExitField",
    "build_grid",
    "assemble",
    "solve_dirichlet",
    "solve_mean_exit",
    "sup_grad_norm",
    "check_ellipticity",
    "CoupledPair",
    "OutcomeBatch",
    "PathConfig",
    "run_replicates",
    "simulate_pair",
    "BoundReport",
    "NumericalFailure",
    "verify_bound",
    "render_table",
    "Scenario",
    "ScenarioError",
    "load_scenario",
]
