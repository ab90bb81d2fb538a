"""Multiprocessor DAG scheduling under per-processor cache limits.

Model core (DAGs, architectures, schedules, costs), a two-stage
baseline scheduler, an exact ILP scheduler with warm starts and a
divide-and-conquer variant, proof-construction gadget generators, and a
CLI harness for experiments.
"""

from .dag import (
    Architecture,
    WeightedDag,
    assign_random_memory_weights,
    min_feasible_cache,
    parse_dag,
    quotient_graph,
    random_dag,
    serialize_dag,
    topological_order,
)
from .schedule import (
    Configuration,
    Kind,
    MbspSchedule,
    ProcessorSuperstep,
    Transition,
    ValidationReport,
    apply_transition,
    initial_configuration,
    parse_schedule,
    serialize_schedule,
    validate_schedule,
)
from .cost import CostBreakdown, async_cost, cost_breakdown, sync_cost

__all__ = [
    "Architecture",
    "WeightedDag",
    "assign_random_memory_weights",
    "min_feasible_cache",
    "parse_dag",
    "quotient_graph",
    "random_dag",
    "serialize_dag",
    "topological_order",
    "Configuration",
    "Kind",
    "MbspSchedule",
    "ProcessorSuperstep",
    "Transition",
    "ValidationReport",
    "apply_transition",
    "initial_configuration",
    "parse_schedule",
    "serialize_schedule",
    "validate_schedule",
    "CostBreakdown",
    "async_cost",
    "cost_breakdown",
    "sync_cost",
]
