"""Solver and structural analysis for the incompatible-kidney acceptance MDP."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Dimensions,
    ModelSpec,
    Policy,
    SchemaError,
    Solution,
    ValidationReport,
    validate_model,
)
from .solver import (  # noqa: E402
    bellman_backup,
    evaluate_policy,
    greedy_policy,
    q_values,
    solve_value_iteration,
)
from .structure import (  # noqa: E402
    check_assumptions,
    check_ifr,
    check_stochastic_order,
    compare_dominance,
    extract_control_limits,
    verify_limit_consistency,
    verify_value_monotonicity,
)

__all__ = [
    "Dimensions", "ModelSpec", "Policy", "SchemaError", "Solution", "ValidationReport",
    "validate_model", "bellman_backup", "evaluate_policy", "greedy_policy", "q_values",
    "solve_value_iteration", "check_assumptions", "check_ifr", "check_stochastic_order",
    "compare_dominance", "extract_control_limits", "verify_limit_consistency",
    "verify_value_monotonicity",
]
