"""Crowd-dynamics Markov model: exact stationary analysis, fluid limit and simulation."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapacityError,
    ConnectivityError,
    CrowdModelError,
    IntegrationError,
    NumericalError,
)
from .graph_model import (  # noqa: E402
    CityGraph,
    ModelParams,
    check_routing_detailed_balance,
    complete_graph,
    cycle_graph,
    graph_from_edges,
    make_graph,
    path_graph,
    read_edge_list,
    routing_matrix,
    routing_stationary,
    service_rate,
)
from .exact_ctmc import (  # noqa: E402
    DiscreteDistribution,
    SimplexDistribution,
    SparseGenerator,
    build_generator,
    check_detailed_balance,
    concentration_mass,
    enumerate_states,
    occupancy_pushforward,
    product_form_stationary,
    stationary_global_balance,
    total_variation,
)
from .lambertw import lambert_w0, phi_alpha  # noqa: E402
from .fluid import (  # noqa: E402
    StationaryPointSet,
    Trajectory,
    critical_s,
    drift_finite,
    drift_gap_bound,
    drift_limit,
    find_stationary_points,
    integrate_flow,
    kurtz_conditions_report,
)
from .mc_sim import (  # noqa: E402
    RunConfig,
    SimulationTrace,
    convergence_experiment,
    empirical_stationary,
    gillespie_run,
    sup_deviation,
)
