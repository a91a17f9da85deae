"""Builders for the two 70-year-old-patient experiments and the mismatch-blind baseline.

The decision period is six months; H=16 EPTS-based patient states, K=4
KDPI-based kidney classes and M=7 HLA-mismatch levels (0..6 mismatches).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

from .model import Dimensions, ModelSpec, Policy
from .solver import DEFAULT_TIE_TOL, DEFAULT_TOL, evaluate_policy, solve_value_iteration
from .structure import ControlLimitReport, extract_control_limits

log = logging.getLogger(__name__)

DIMS = Dimensions(H=16, K=4, M=7)
DISCOUNT = 0.99
WAIT_REWARD = 0.5
DEATH_BASE = 0.01
DEATH_SLOPE = {"exp1": 0.007, "exp2": 0.006}

# Offer pmf for k = 1..5 (5 = no offer) and mismatch pmf for m = 1..7, as printed.
OFFER_PMF_PRINTED = (0.0491, 0.0323, 0.1206, 0.0347, 0.7653)
MISMATCH_PMF_PRINTED = (0.0492, 0.0104, 0.0192, 0.1437, 0.2806, 0.3254, 0.1414)
PRINTED_PMF_TOL = 1e-4

# Transplant failure probability by kidney class, for m = 1 and m > 1.
FAIL_TABLE = ((0.017, 0.041), (0.037, 0.061), (0.047, 0.071), (0.073, 0.095))

# Patient state after a failed transplant, h -> phi(h); h >= 8 goes to 16.
POST_FAILURE_STATE = {1: 6, 2: 8, 3: 9, 4: 10, 5: 12, 6: 13, 7: 14}

# Expected post-transplant survival (years) for m = 1 and m = 7, rows h = 1..16,
# columns k = 1..4.
REWARD_M1 = (
    (12, 11, 10, 8.5), (11, 11, 9.5, 8.2), (9.9, 9.7, 9, 7.9), (9.6, 9.4, 8.8, 7.7),
    (9.3, 9.1, 8.5, 7.6), (8.9, 8.8, 8.3, 7.4), (8.7, 8.5, 8, 7.2), (8.5, 8.4, 7.8, 7.1),
    (8.3, 8.1, 7.7, 6.9), (8.1, 8, 7.5, 6.8), (8.1, 8, 7.5, 6.8), (8, 7.9, 7.4, 6.7),
    (7.8, 7.7, 7.3, 6.6), (7.7, 7.6, 7.2, 6.6), (7.7, 7.6, 7.1, 6.5), (7.6, 7.5, 7.1, 6.5),
)
# Row 2, column 4 is printed as "55"; read as 5.5.
REWARD_M7 = (
    (6, 5.9, 5.8, 5.5), (5.9, 5.9, 5.8, 5.5), (5.8, 5.8, 5.7, 5.4), (5.8, 5.7, 5.6, 5.3),
    (5.7, 5.7, 5.6, 5.3), (5.6, 5.6, 5.5, 5.2), (5.6, 5.6, 5.4, 5.1), (5.5, 5.5, 5.3, 5.1),
    (5.5, 5.4, 5.3, 5), (5.4, 5.4, 5.3, 5), (5.4, 5.4, 5.3, 5), (5.4, 5.4, 5.2, 4.9),
    (5.4, 5.3, 5.2, 4.9), (5.3, 5.3, 5.1, 4.8), (5.3, 5.2, 5.1, 4.8), (5.3, 5.2, 5.1, 4.8),
)

# Five-year post-transplant patient survival (%) by EPTS band (rows) and KDPI band.
EPTS_BANDS = (
    "53-54", "59-60", "67-68", "71-72", "75-76", "79-80", "83-84", "85-86",
    "89-90", "91-92", "93-94", "95-96", "97", "98", "99+",
)
FIVE_YEAR_SURVIVAL = (
    (87.5, 86.8, 83.85, 76.55), (86, 85.3, 82.2, 74.65), (83.75, 83.05, 79.75, 72),
    (82.4, 81.75, 78.35, 70.5), (80.95, 80.3, 76.8, 68.85), (79.3, 78.6, 75.05, 67.05),
    (77.6, 76.8, 73.05, 65.15), (76.65, 75.85, 71.05, 64.05), (74.45, 73.8, 69.85, 61.95),
    (73.65, 72.7, 68.7, 60.8), (72.6, 71.6, 67.45, 59.6), (71.5, 70.4, 66.15, 58.4),
    (70.6, 69.5, 65.2, 57.5), (70, 68.8, 64.5, 56.8), (69.4, 68.2, 63.8, 56.2),
)
# EPTS score of patient states 1..16, and the survival-table band each falls in.
STATE_EPTS = (53, 60, 67, 72, 76, 80, 83, 86, 89, 91, 93, 94, 96, 97, 98, 99)
STATE_BAND = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 10, 11, 12, 13, 14)

RELATIVE_RISK = (0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.6)
SURVIVAL_CLAMP = 1.0 - 1e-6
SURVIVAL_YEARS = 5


@dataclass(frozen=True)
class ExperimentParams:
    death_base: float = DEATH_BASE
    death_slope: float = DEATH_SLOPE["exp1"]
    discount: float = DISCOUNT
    wait_reward: float = WAIT_REWARD
    offer_pmf: tuple = OFFER_PMF_PRINTED
    mismatch_pmf: tuple = MISMATCH_PMF_PRINTED
    dims: Dimensions = DIMS

    @classmethod
    def for_experiment(cls, which: str) -> "ExperimentParams":
        if which not in DEATH_SLOPE:
            raise ValueError(f"unknown experiment {which!r}; expected one of {sorted(DEATH_SLOPE)}")
        return cls(death_slope=DEATH_SLOPE[which])

    def death_prob(self, h: int) -> float:
        return self.death_base + self.death_slope * (h - 1)


def normalized_offer_pmf(printed=OFFER_PMF_PRINTED) -> np.ndarray:
    """Keep the printed real-offer probabilities; no-offer takes the complement."""
    p = np.asarray(printed, dtype=float)
    total = p.sum()
    if abs(total - 1.0) > PRINTED_PMF_TOL:
        log.warning("printed offer pmf sums to %.4f; no-offer set to %.4f (was %.4f)",
                    total, 1.0 - p[:-1].sum(), p[-1])
    out = p.copy()
    out[-1] = 1.0 - p[:-1].sum()
    return out


def normalized_mismatch_pmf(printed=MISMATCH_PMF_PRINTED) -> np.ndarray:
    """Rescale the printed mismatch pmf to sum to one."""
    p = np.asarray(printed, dtype=float)
    total = p.sum()
    if abs(total - 1.0) > PRINTED_PMF_TOL:
        log.warning("printed mismatch pmf sums to %.4f; rescaled proportionally", total)
    return p / total


def poisson_tail(mu: float, n: int = SURVIVAL_YEARS) -> float:
    """P(X >= n) for X ~ Poisson(mu)."""
    if mu < n:
        # Sum the tail directly; 1 - head cancels badly for small mu.
        term = math.exp(-mu) * mu ** n / math.factorial(n)
        total, j = 0.0, n
        while term > total * 1e-17:
            total += term
            j += 1
            term *= mu / j
        return total
    head = sum(mu ** j / math.factorial(j) for j in range(n))
    return 1.0 - math.exp(-mu) * head


def poisson_mean_from_survival(p: float, xtol: float = 1e-10) -> float:
    """Poisson mean whose five-year survival P(X >= 5) equals ``p``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"survival probability must lie in (0, 1), got {p}")
    hi = 1.0
    while poisson_tail(hi) < p:
        hi *= 2.0
    return bisect(lambda mu: poisson_tail(mu) - p, 0.0, hi, xtol=xtol)


def pipeline_means() -> np.ndarray:
    """Poisson means (H, K, M) from survival / relative risk, before rescaling."""
    H, K, M = DIMS.H, DIMS.K, DIMS.M
    survival = np.asarray(FIVE_YEAR_SURVIVAL)[list(STATE_BAND)] / 100.0
    out = np.empty((H, K, M))
    for (h, k), s in np.ndenumerate(survival):
        for m, rr in enumerate(RELATIVE_RISK):
            p = s / rr
            if p >= 1.0:
                log.warning("survival %.4f / relative risk %.2f >= 1 at h=%d k=%d m=%d; clamped",
                            s, rr, h + 1, k + 1, m + 1)
                p = SURVIVAL_CLAMP
            out[h, k, m] = poisson_mean_from_survival(p)
    return out


def build_reward_tensor() -> np.ndarray:
    """Transplant reward r(h, k, m) with shape (H+1, K, M); death row is zero.

    Levels m=1 and m=7 are the printed matrices. Intermediate levels come from
    the survival/relative-risk/Poisson pipeline, mapped affinely per (h, k) so
    the pipeline's m=1 and m=7 values land on the printed ones, then trimmed
    with running minima along h and k so the tensor falls in every index.
    """
    H, K, M = DIMS.H, DIMS.K, DIMS.M
    top = np.asarray(REWARD_M1, dtype=float)
    bottom = np.asarray(REWARD_M7, dtype=float)
    mu = pipeline_means()
    span = mu[:, :, :1] - mu[:, :, -1:]
    frac = (mu - mu[:, :, -1:]) / span
    r = bottom[:, :, None] + frac * (top - bottom)[:, :, None]
    r[:, :, 0], r[:, :, -1] = top, bottom
    r = np.minimum.accumulate(r, axis=0)
    r = np.minimum.accumulate(r, axis=1)
    out = np.zeros((H + 1, K, M))
    out[:H] = r
    return out


def wait_kernel(params: ExperimentParams) -> np.ndarray:
    H = params.dims.H
    P = np.zeros((H + 1, H + 1))
    for h in range(1, H + 1):
        d = params.death_prob(h)
        P[h - 1, H] = d
        P[h - 1, min(h + 1, H) - 1] = 1.0 - d
    P[H, H] = 1.0
    return P


def fail_kernel(params: ExperimentParams) -> np.ndarray:
    H = params.dims.H
    P = np.zeros((H + 1, H + 1))
    for h in range(1, H + 1):
        d = params.death_prob(h)
        P[h - 1, H] = d
        P[h - 1, POST_FAILURE_STATE.get(h, H) - 1] = 1.0 - d
    P[H, H] = 1.0
    return P


def build_experiment_model(which: str) -> ModelSpec:
    """ModelSpec for "exp1" (death slope 0.007) or "exp2" (slope 0.006)."""
    params = ExperimentParams.for_experiment(which)
    d = params.dims
    H, K, M = d.H, d.K, d.M

    offers = np.zeros((H + 1, K + 1))
    offers[:H] = normalized_offer_pmf(params.offer_pmf)
    offers[H, K] = 1.0

    table = np.asarray(FAIL_TABLE)
    F_km = np.concatenate([table[:, :1], np.repeat(table[:, 1:], M - 1, axis=1)], axis=1)
    fail_prob = np.broadcast_to(F_km, (H + 1, K, M)).copy()

    wait_reward = np.full(H + 1, params.wait_reward)
    wait_reward[H] = 0.0
    return ModelSpec(
        dims=d,
        discount=params.discount,
        wait_kernel=wait_kernel(params),
        fail_kernel=fail_kernel(params),
        offer_pmf=offers,
        mismatch_pmf=normalized_mismatch_pmf(params.mismatch_pmf),
        fail_prob=fail_prob,
        wait_reward=wait_reward,
        transplant_reward=build_reward_tensor(),
    )


# --- mismatch-blind baseline ---------------------------------------------

@dataclass(frozen=True, eq=False)
class BaselineSpec:
    """Two-dimensional model over (h, k): transplant is terminal with a mismatch-averaged reward."""

    H: int
    K: int
    discount: float
    wait_kernel: np.ndarray
    offer_pmf: np.ndarray
    wait_reward: np.ndarray
    terminal_reward: np.ndarray      # (H+1, K)
    failure_weighted: bool = False

    def to_dict(self):
        return {
            "dims": {"H": self.H, "K": self.K},
            "discount": self.discount,
            "wait_kernel": self.wait_kernel.tolist(),
            "offer_pmf": self.offer_pmf.tolist(),
            "wait_reward": self.wait_reward.tolist(),
            "terminal_reward": self.terminal_reward.tolist(),
            "failure_weighted": self.failure_weighted,
        }


def build_baseline_model(spec: ModelSpec, failure_weighted: bool = False) -> BaselineSpec:
    """Drop the mismatch level: terminal reward is the mismatch-mean of r.

    With ``failure_weighted`` the mean is of (1 - F) r instead.
    """
    r = spec.transplant_reward
    if failure_weighted:
        r = (1.0 - spec.fail_prob) * r
    return BaselineSpec(
        H=spec.dims.H,
        K=spec.dims.K,
        discount=spec.discount,
        wait_kernel=spec.wait_kernel,
        offer_pmf=spec.offer_pmf,
        wait_reward=spec.wait_reward,
        terminal_reward=r @ spec.mismatch_pmf,
        failure_weighted=failure_weighted,
    )


@dataclass
class BaselineSolution:
    V: np.ndarray           # (H+1, K+1)
    q_wait: np.ndarray      # (H+1,)
    accept: np.ndarray      # (H, K)
    ties: np.ndarray
    iterations: int
    residual: float
    converged: bool

    def lifted_policy(self, M: int) -> Policy:
        """D1(h, k, m) = D(h, k) for every mismatch level."""
        return Policy(np.repeat(self.accept[:, :, None], M, axis=2))


def solve_baseline(
    base: BaselineSpec, tol: float = DEFAULT_TOL, max_iter: int = 100_000,
    tie_tol: float = DEFAULT_TIE_TOL,
) -> BaselineSolution:
    H, K = base.H, base.K
    lam = base.discount
    V = np.zeros((H + 1, K + 1))
    converged = False
    for it in range(1, max_iter + 1):
        v = np.einsum("hk,hk->h", base.offer_pmf, V)
        wait = base.wait_reward + lam * base.wait_kernel @ v
        nxt = np.empty_like(V)
        nxt[:, K] = wait
        nxt[:, :K] = np.maximum(base.terminal_reward, wait[:, None])
        nxt[H] = 0.0
        residual = float(np.max(np.abs(nxt - V)))
        V = nxt
        if residual <= tol:
            converged = True
            break
    v = np.einsum("hk,hk->h", base.offer_pmf, V)
    wait = base.wait_reward + lam * base.wait_kernel @ v
    wait[H] = 0.0
    T = base.terminal_reward[:H]
    accept = T >= wait[:H, None] - tie_tol
    ties = np.abs(T - wait[:H, None]) <= tie_tol
    return BaselineSolution(V, wait, accept, ties, it, residual, converged)


# --- comparison -----------------------------------------------------------

@dataclass
class ComparisonReport:
    which: str
    spec: ModelSpec
    baseline: BaselineSpec
    solution: object
    baseline_solution: BaselineSolution
    V_baseline: np.ndarray        # value of D1 in the full model
    gap: np.ndarray               # V_d - V_D1
    limits: ControlLimitReport
    baseline_limits: ControlLimitReport
    bracketing: dict = field(default_factory=dict)

    @property
    def max_gap(self) -> float:
        return float(self.gap.max())

    @property
    def min_gap(self) -> float:
        return float(self.gap.min())

    def patient_gap(self) -> np.ndarray:
        """Gap in v(h), the value before the offer is revealed."""
        s = self.spec
        g = np.einsum("hk,hkm,m->h", s.offer_pmf, self.gap, s.mismatch_pmf)
        return g

    def summary(self) -> dict:
        fams = self.limits.families()
        patient = fams["patient"]
        return {
            "experiment": self.which,
            "iterations": self.solution.iterations,
            "error_bound": self.solution.error_bound,
            "control_limits": {name: fam.exists for name, fam in fams.items()},
            "patient_based_witnesses": patient.witnesses,
            "baseline_kidney_limits": self.baseline_limits.kidney_based.limits[:, 0].tolist(),
            "bracketing_m4_m5": self.bracketing,
            "max_gap": self.max_gap,
            "min_gap": self.min_gap,
            "argmax_gap": [int(i) + 1 for i in np.unravel_index(self.gap.argmax(), self.gap.shape)],
            "patient_value_gap": self.patient_gap().tolist(),
        }


def check_bracketing(limits: ControlLimitReport, baseline_limits: ControlLimitReport,
                     m_low: int = 4, m_high: int = 5) -> dict:
    """Does K_D(h) lie between K*(h, m_low) and K*(h, m_high) for every h?"""
    kd = baseline_limits.kidney_based
    kf = limits.kidney_based
    if not (kd.exists and kf.exists):
        return {"pass": False, "reason": "kidney-based limits missing", "violations": []}
    a = kf.limits[:, m_low - 1]
    b = kf.limits[:, m_high - 1]
    base = kd.limits[:, 0]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    bad = np.flatnonzero((base < lo) | (base > hi))
    return {
        "pass": not bad.size,
        "violations": [{"h": int(h) + 1, "baseline": int(base[h]), "low": int(lo[h]),
                        "high": int(hi[h])} for h in bad],
    }


def run_comparison(
    which: str, failure_weighted: bool = False, tol: float = DEFAULT_TOL,
    tie_tol: float = DEFAULT_TIE_TOL,
) -> ComparisonReport:
    """Solve the full model and the baseline, and evaluate the lifted baseline policy."""
    spec = build_experiment_model(which)
    sol = solve_value_iteration(spec, tol=tol, tie_tol=tie_tol)
    if not sol.converged:
        raise RuntimeError(f"{which}: value iteration did not converge")
    base = build_baseline_model(spec, failure_weighted)
    bsol = solve_baseline(base, tol=tol, tie_tol=tie_tol)
    if not bsol.converged:
        raise RuntimeError(f"{which}: baseline value iteration did not converge")
    lifted = bsol.lifted_policy(spec.dims.M)
    ev = evaluate_policy(spec, lifted, tol=tol)
    if not ev.converged:
        raise RuntimeError(f"{which}: evaluation of the baseline policy did not converge")

    limits = extract_control_limits(sol.policy, spec.dims)
    baseline_limits = extract_control_limits(Policy(bsol.accept[:, :, None]))
    return ComparisonReport(
        which=which,
        spec=spec,
        baseline=base,
        solution=sol,
        baseline_solution=bsol,
        V_baseline=ev.V,
        gap=sol.V - ev.V,
        limits=limits,
        baseline_limits=baseline_limits,
        bracketing=check_bracketing(limits, baseline_limits),
    )
