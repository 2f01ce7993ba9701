"""Mollified Brownian stochastic flow, its measure-valued process and coalescing limit."""
from .coalescing import (
    CoalescingEnsemble,
    CoalescingPath,
    PartitionProcess,
    bridge_merge_probability,
    kpoint_marginal,
    simulate_coalescing,
    simulate_coalescing_ensemble,
)
from .flow import (
    FlowEnsemble,
    FlowPath,
    FlowState,
    NoiseField,
    SimConfig,
    SimulationError,
    first_exit_time,
    simulate_flow,
    simulate_paths,
    simulate_wiener,
    step_covariance,
    step_field,
)
from .kernel import (
    CovarianceKernel,
    MollifierKernel,
    QuadratureError,
    diffusion_matrix,
    g_eps,
    make_mollifier,
    phi_eps,
)
from .measures import (
    EmpiricalMeasure,
    TransportPlan,
    cost_phi_n,
    moment,
    pushforward,
    tail_mass,
    wasserstein,
)
from .twosample import energy_distance, permutation_test

__version__ = "0.1.0"
