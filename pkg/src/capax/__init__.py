"""capax: certified channel-capacity bounds and maximum-entropy estimation.

Solvers built on Nesterov-smoothed dual fast-gradient methods with
a-priori and a-posteriori error certificates:

- ``dmc_capacity``:   discrete memoryless channels (plus Blahut-Arimoto)
- ``cont_capacity``:  continuous-input / countable-output channels
  (discrete-time Poisson channel) via output truncation
- ``maxent``:         relative-entropy minimization under noisy moment
  constraints
- ``moment_closure``: zero-information moment closure of the chemical
  master equation for reversible dimerization
"""

from . import cont_capacity, dmc_capacity, maxent, moment_closure, numkit
from .dmc_capacity import (
    CapacityCertificate,
    DiscreteChannel,
    InputCostConstraint,
    SolveConfig,
    SolverError,
    bec,
    blahut_arimoto,
    bsc,
    perturb_and_bound,
    solve_capacity,
)
from .cont_capacity import (
    ContinuousCapacityBounds,
    CountableOutputChannel,
    CtsSolveConfig,
    PoissonChannelSpec,
    choose_truncation,
    lapidoth_moser_lb,
    poisson_tail_bound,
    solve_capacity_cts,
    truncate_kernel,
)
from .maxent import MaxEntResult, MomentData, posterior_bounds, slater_point, solve_maxent
from .moment_closure import (
    DimerizationModel,
    build_moment_matrices,
    closure_phi,
    integrate_moments,
    ssa_simulate,
)

__version__ = "0.1.0"
