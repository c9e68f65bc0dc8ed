"""Numerics for systems of reflected BSDEs with interconnected obstacles.

Problems are described as data (an expression DSL for every coefficient),
simulated forward with a seeded Euler scheme, and solved backward with a
regression Monte Carlo scheme for the penalized system; a direct projection
scheme, an optimal-switching lattice DP and exhaustive strategy enumeration
serve as cross-checks at desk scale.
"""

__version__ = "0.1.0"

from . import expr, forward, kernels, model, oracle, regress, solver  # noqa: F401
from .forward import PathBundle, TimeGrid, empirical_sup_moment, simulate  # noqa: F401
from .model import ProblemSpec, ValidationReport, catalog  # noqa: F401
from .oracle import LatticeSpec, SwitchingValue, solve_switching_dp  # noqa: F401
from .regress import BasisSpec, RegressionFit  # noqa: F401
from .solver import (  # noqa: F401
    ConvergenceReport,
    PenalizedSolution,
    PicardParams,
    accumulate_K,
    run_n_ladder,
    solve_penalized,
    solve_reflected_scheme,
)
