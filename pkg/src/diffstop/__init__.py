"""Optimal stopping of one-dimensional diffusions with state-dependent
discounting: fundamental solutions, potentials, excessivity tests, the
value function via its least concave majorant, and a Monte-Carlo
simulator cross-validating the analytic objects."""

from .model import BoundaryKind, DiffusionProblem, build_problem, feller_boundary_check
from .odecore import (
    FundamentalPair,
    Grid,
    GridFunction,
    build_grid,
    fundamental_pair,
    hitting_transform,
    laplace_hitting,
    scale_function,
    speed_density,
)
from .calculus import (
    Potential,
    SignedMeasure,
    apply_L,
    greens_kernel,
    potential,
    potential_ac,
    potential_tilde,
    represent,
)
from .excessive import ExcessivityReport, check_excessive, transformed_concavity_check
from .solver import (
    Reward,
    ValueSolution,
    build_reward,
    check_finiteness,
    smooth_fit_report,
    solve,
    solve_with_running_reward,
    usc_envelope,
    value_at,
    verify_solution,
)
from .montecarlo import (
    Estimate,
    HitLevel,
    Immediate,
    Never,
    Pasted,
    PathBatch,
    SimConfig,
    StopAtSet,
    TwoSided,
    evaluate_strategy,
    paste_strategies,
    simulate_paths,
    tau_star_strategy,
    verify_dynkin,
)

__version__ = "0.1.0"
