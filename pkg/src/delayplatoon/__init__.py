"""Design, verification and simulation of delay-aware cooperative adaptive cruise control."""

from .errors import (
    CertificationError,
    ConfigError,
    DegenerateInputError,
    InsufficientHistoryError,
    NotApplicableError,
    PlatoonError,
    RegionEmptyError,
    SearchExhaustedError,
    SimulationBlowupError,
    SingularSystemError,
)
from .frequency import (
    InstabilityWitness,
    StabilityReport,
    conservative_margin_check,
    eval_H1,
    eval_Hq,
    falsify_ka_ge_1,
    internal_stability,
    robust_string_stability,
    sup_norm_over_omega,
)
from .model import ControllerGains, PlantParams, SpacingPolicy, VehicleState, gamma, gamma_r
from .simulator import (
    History,
    LeadProfile,
    Scenario,
    SimTrace,
    VehicleConfig,
    control_input_cacc,
    control_input_cacc_plus,
    simulate,
)
from .synthesis import (
    FeasibleRegion,
    SynthesisResult,
    feasible_region,
    hw_lower_bound_cacc,
    hw_lower_bound_cacc_plus,
    kp_range_given_kv,
    synthesize,
)

__version__ = "0.1.0"
