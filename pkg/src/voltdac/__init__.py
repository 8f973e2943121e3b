"""Online voltage regulation on radial feeders with a disturbance-action controller."""

from .baselines import QpProblem, direct_opt_input, no_control_input, qp_oracle_grid
from .controller import (
    ControllerState,
    CostWeights,
    compute_input,
    estimate_disturbance,
    surrogate_cost_and_gradient,
    update_params,
)
from .gradcheck import GradCheckResult, gradient_check
from .grid_model import (
    NetworkError,
    NetworkModel,
    SensitivityModel,
    build_network,
    compute_sensitivity,
    disturbance_from_loads,
    load_network,
    model_error,
    perturb_model,
    spectral_norm,
    voltage_step,
)
from .scenario import DropEvent, InputBounds, Scenario, build_scenario, capacity_bounds, generate_loads, generate_pv
from .simulator import (
    Metrics,
    SimulationConfig,
    SimulationTrace,
    build_plant,
    compute_metrics,
    paired_inaccuracy_run,
    run_closed_loop,
    sweep,
)
from .theory import (
    TheoryConstants,
    degradation_envelope,
    estimate_constants,
    gradient_norm_bound,
    init_param_caps,
    stability_learning_rate,
)

__version__ = "0.1.0"
