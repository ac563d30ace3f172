"""Delayed-gratification decision modeling toolkit."""

from .params import AgentParams, Structure, TaskParams, agent_from_dict, task_from_dict
from .solver import (
    EquivalenceReport,
    GridSpec,
    GridTooCoarseError,
    GridValueSolution,
    NormalForm,
    PWLValueSolution,
    action_values,
    default_grid,
    indifference_thresholds,
    iterated_equivalence_check,
    normal_form,
    solve,
    solve_grid,
    solve_pla,
)

__all__ = [
    "AgentParams",
    "Structure",
    "TaskParams",
    "agent_from_dict",
    "task_from_dict",
    "EquivalenceReport",
    "GridSpec",
    "GridTooCoarseError",
    "GridValueSolution",
    "NormalForm",
    "PWLValueSolution",
    "action_values",
    "default_grid",
    "indifference_thresholds",
    "iterated_equivalence_check",
    "normal_form",
    "solve",
    "solve_grid",
    "solve_pla",
]

__version__ = "0.1.0"
