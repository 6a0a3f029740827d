"""Space-fractional one-phase Stefan problem with a Caputo flux."""

from .diagnostics import Diagnostics, InvariantCheck
from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    FracStefError,
    SingularResolventError,
    StepError,
    ValidationError,
)
from .fracops import (
    FracOrder,
    OperatorMatrix,
    assemble_operator,
    caputo,
    caputo_at,
    coercivity_split,
    frac_integral,
    leibniz_rl,
    rl_deriv,
)
from .mbp import (
    BoundaryTrajectory,
    SolutionField,
    StefanParams,
    advance_step,
    flux_at_front,
    scaled_cap_data,
    solve_mbp,
)
from .numerics import Grid, GridFunction, MlfParams, gamma, make_grid, mittag_leffler
from .resolvent import ResolventProblem, resolvent_residual, resolvent_solution
from .stefan import (
    SigmaFront,
    StefanSolution,
    apply_P,
    gronwall_bound,
    integral_condition_residual,
    monotone_dependence_check,
    solve_stefan,
)

__version__ = "0.1.0"
