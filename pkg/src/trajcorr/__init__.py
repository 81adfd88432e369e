"""Neural feedback policies in ODEs with interim-point trajectory correction.

Two-stage workflow: train a bounded-output policy network against a
penalty cost, then enforce equality constraints on the performance output
at chosen time points with either a minimum-norm parameter increment or a
minimum-energy corrective control schedule, both derived from the
linearized closed loop.
"""

from .odeint import (
    TimeGrid,
    Trajectory,
    StopCondition,
    integrate_fixed,
    integrate_adaptive,
    NonFiniteState,
    StepUnderflow,
    OutOfRange,
)
from .diff import Dual, jacobian_x, jacobian_theta, jacobian_u, linearize, cost_gradient
from .policy import PolicyNetwork, forward, flatten, unflatten, init_parameters
from .correction import (
    InterimConstraintSet,
    SensitivityMatrix,
    GramianBundle,
    CorrectionResult,
    propagate_M,
    correct_parameters,
    propagate_UN,
    assemble_psi,
    correct_control,
    apply_correction,
)
from .scenario import ScenarioConfig, load_scenario, default_scenario
from .train import TrainConfig, TrainReport, train

__version__ = "0.1.0"
