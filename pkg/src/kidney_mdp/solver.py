"""Bellman backup, value iteration and policy evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, Policy, Solution, aggregates

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_TIE_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000


def _check_value(spec: ModelSpec, V: np.ndarray) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.shape != spec.dims.value_shape:
        raise ValueError(f"value tensor has shape {V.shape}, expected {spec.dims.value_shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("value tensor has non-finite entries")
    return V


def _action_values(spec: ModelSpec, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Wait value per h (shape H+1) and transplant value per (h, k, m) (shape H+1, K, M)."""
    v, _, _ = aggregates(spec, V)
    lam = spec.discount
    c = spec.wait_reward
    wait = c + lam * spec.wait_kernel @ v
    after_failure = c + lam * spec.fail_kernel @ v
    F = spec.fail_prob
    transplant = (1.0 - F) * spec.transplant_reward + F * after_failure[:, None, None]
    return wait, transplant


def bellman_backup(spec: ModelSpec, V_in: np.ndarray) -> np.ndarray:
    """One application of the optimality operator to ``V_in``."""
    V_in = _check_value(spec, V_in)
    return _backup(spec, V_in, None)


def _backup(spec: ModelSpec, V: np.ndarray, accept: np.ndarray | None) -> np.ndarray:
    H, K = spec.dims.H, spec.dims.K
    wait, transplant = _action_values(spec, V)
    out = np.empty_like(V)
    out[:, K, :] = wait[:, None]
    w = np.broadcast_to(wait[:, None, None], transplant.shape)
    if accept is None:
        out[:, :K, :] = np.maximum(transplant, w)
    else:
        out[:H, :K, :] = np.where(accept, transplant[:H], w[:H])
    out[H] = 0.0
    return out


def q_values(spec: ModelSpec, V: np.ndarray) -> np.ndarray:
    """Q(h, k, m, a) with a = 0 (W) or 1 (T); NaN marks infeasible T."""
    V = _check_value(spec, V)
    H, K = spec.dims.H, spec.dims.K
    wait, transplant = _action_values(spec, V)
    Q = np.full(spec.dims.value_shape + (2,), np.nan)
    Q[..., 0] = wait[:, None, None]
    Q[:H, :K, :, 1] = transplant[:H]
    Q[H, :, :, 0] = 0.0
    return Q


def greedy_policy(Q: np.ndarray, tie_tol: float = DEFAULT_TIE_TOL) -> Policy:
    """Pick T wherever Q(T) >= Q(W) - tie_tol; near-equal states are flagged as ties."""
    q_wait = Q[:-1, :-1, :, 0]
    q_transplant = Q[:-1, :-1, :, 1]
    if np.any(np.isnan(q_transplant)):
        raise ValueError("Q tensor is missing transplant values on decision states")
    accept = q_transplant >= q_wait - tie_tol
    ties = np.abs(q_transplant - q_wait) <= tie_tol
    return Policy(accept, ties)


def solve_value_iteration(
    spec: ModelSpec,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    tie_tol: float = DEFAULT_TIE_TOL,
) -> Solution:
    """Iterate the Bellman backup from V = 0 until the sup-norm step is <= tol.

    If ``max_iter`` is reached first, the partial result is returned with
    ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = spec.discount
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"value iteration needs a discount in [0, 1), got {lam}")

    V = np.zeros(spec.dims.value_shape)
    residuals = []
    converged = False
    residual = np.inf
    for it in range(1, max_iter + 1):
        V_next = _backup(spec, V, None)
        residual = float(np.max(np.abs(V_next - V)))
        residuals.append(residual)
        V = V_next
        if residual <= tol:
            converged = True
            break
    if not converged:
        log.warning("value iteration stopped after %d iterations, residual %.3e", it, residual)

    Q = q_values(spec, V)
    v, U, W = aggregates(spec, V)
    return Solution(
        spec=spec,
        V=V,
        v=v,
        U=U,
        W_agg=W,
        Q_fn=Q,
        policy=greedy_policy(Q, tie_tol),
        iterations=it,
        residual=residual,
        error_bound=lam * residual / (1.0 - lam),
        converged=converged,
        residuals=residuals,
    )


@dataclass
class PolicyValue:
    V: np.ndarray
    iterations: int
    residual: float
    converged: bool


def evaluate_policy(
    spec: ModelSpec,
    policy: Policy,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PolicyValue:
    """Expected discounted reward of a fixed stationary policy.

    Same recursion as the optimality backup with the max replaced by the
    policy's action, iterated from zero.
    """
    policy.check_dims(spec.dims)
    if not 0.0 <= spec.discount < 1.0:
        raise ValueError("policy evaluation needs a discount in [0, 1)")
    V = np.zeros(spec.dims.value_shape)
    residual = np.inf
    for it in range(1, max_iter + 1):
        V_next = _backup(spec, V, policy.accept)
        residual = float(np.max(np.abs(V_next - V)))
        V = V_next
        if residual <= tol:
            return PolicyValue(V, it, residual, True)
    log.warning("policy evaluation stopped after %d iterations, residual %.3e", it, residual)
    return PolicyValue(V, it, residual, False)
