"""Discrete-time payment-channel network simulator and routing policies."""

from .engine import (
    FluidOptions,
    SimConfig,
    SimMetrics,
    StabilityReport,
    grid_product,
    run,
    stability_diagnostic,
    sweep,
)
from .fluid import (
    CapacityCheck,
    DemandMatrix,
    FluidSolution,
    InfeasibleDemand,
    ParameterViolation,
    check_capacity_region,
    check_circulation,
    fluid_solve,
    lemma1_check,
    theorem1_bound,
)
from .ledger import ChannelState, NegativeQueue, aggregate_flow, service, step
from .policy import (
    ExactPolicy,
    FluidPolicy,
    GraphTooLarge,
    HeuristicPolicy,
    MissingFluidSolution,
    PolicyParams,
    RoutingDecision,
    WaterfillingPolicy,
    edge_weight,
    edge_weight_vector,
    route_exact,
    route_fluid,
    route_heuristic,
    route_waterfilling,
)
from .topology import (
    DisconnectedGraph,
    DuplicateEdge,
    NoPathExists,
    NonPositiveCapacity,
    PathTable,
    PaymentGraph,
    TopologyError,
    build_graph,
    enumerate_paths,
    k_shortest_paths,
    load_topology_csv,
)
from .workload import (
    ParseError,
    TraceSource,
    TransactionBatch,
    UnknownEndpoint,
    gen_arrivals,
    gen_demand_matrix,
    load_trace,
    scale_to_capacity,
)

__version__ = "0.1.0"
