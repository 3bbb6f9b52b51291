"""Particle solver for linear conditional McKean-Vlasov FBSDEs with a
terminal state constraint, applied to optimal portfolio liquidation and to
a leader-follower liquidation game with asymmetric information."""

from .errors import (AdmissibilityError, ConvergenceError, GridError,
                     MfliqError, ModelError, NumericalError, ShapeError)
from .paths import (AdaptedField, ParticleEnsemble, TimeGrid, build_grid,
                    default_grid, project_common, regress_conditional,
                    simulate_ensemble)
from .riccati import (BoundReport, RiccatiInput, RiccatiSolution,
                      check_riccati_bounds, discount, solve_riccati)
from .core import (CoefficientSet, FeasibilityReport, PicardOptions,
                   SolutionBundle, affinity_check, check_assumptions,
                   solve_constrained, solve_penalized, weighted_norm)
from .convergence import (ConvergenceReport, cesaro, lnu_distance,
                          penalization_study)
from .liquidation import (FollowerModel, StrategyBundle, convexity_gap, cost,
                          map_to_core, optimal_strategy, verify_optimality)
from .stackelberg import (LeaderModel, StackelbergSolution, ValueReport,
                          check_game_assumptions, follower_response,
                          leader_cost, solve_adjoint_qr, solve_leader_penalized,
                          solve_pbar, solve_stackelberg, value_convergence)

__version__ = "0.1.0"

__all__ = [
    "AdaptedField", "AdmissibilityError", "BoundReport", "CoefficientSet",
    "ConvergenceError", "ConvergenceReport", "FeasibilityReport",
    "FollowerModel", "GridError", "LeaderModel", "MfliqError", "ModelError",
    "NumericalError", "ParticleEnsemble", "PicardOptions", "RiccatiInput",
    "RiccatiSolution", "ShapeError", "SolutionBundle", "StackelbergSolution",
    "StrategyBundle", "TimeGrid", "ValueReport", "affinity_check",
    "build_grid", "cesaro", "check_assumptions", "check_game_assumptions",
    "check_riccati_bounds", "convexity_gap", "cost", "default_grid",
    "discount", "follower_response", "leader_cost", "lnu_distance",
    "map_to_core", "optimal_strategy", "penalization_study", "project_common",
    "regress_conditional", "simulate_ensemble", "solve_adjoint_qr",
    "solve_constrained", "solve_leader_penalized", "solve_pbar",
    "solve_penalized", "solve_riccati", "solve_stackelberg",
    "value_convergence", "verify_optimality", "weighted_norm",
]
