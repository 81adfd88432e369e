"""Plant model library: analytic LTI test plants and the Mars descent dynamics."""

from .lti import (
    AnalyticLti,
    lti_plants,
    scalar_plant,
    double_integrator,
    scalar_param_sensitivity,
    double_integrator_param_sensitivity,
    double_integrator_gramian,
    scalar_gramian,
)
from .mars import (
    MarsParams,
    MissionSpec,
    MarsGuidance,
    DegenerateTriad,
    f_sw,
    mars_rhs,
    mission_vectors,
    cross3,
    mars_policy_network,
)

__all__ = [
    "AnalyticLti",
    "lti_plants",
    "scalar_plant",
    "double_integrator",
    "scalar_param_sensitivity",
    "double_integrator_param_sensitivity",
    "double_integrator_gramian",
    "scalar_gramian",
    "MarsParams",
    "MissionSpec",
    "MarsGuidance",
    "DegenerateTriad",
    "f_sw",
    "mars_rhs",
    "mission_vectors",
    "cross3",
    "mars_policy_network",
]
