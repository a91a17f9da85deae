"""Structural checks: stochastic orders, assumptions, monotonicity and control limits.

Every check is exhaustive over its index range and reports the first
violating index (1-based) as a witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import Dimensions, ModelSpec, Policy, Solution, ROW_SUM_TOL

# Slack for floating-point noise in tail sums (e.g. (1 - d) + d != 1 exactly).
ORDER_ATOL = 1e-12


@dataclass
class CheckResult:
    passed: bool
    witness: dict[str, Any] | None = None

    def __bool__(self):
        return self.passed

    def to_dict(self):
        return {"pass": self.passed, "witness": self.witness}


def _as_rows(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2:
        raise ValueError("expected a pmf or a row-stochastic matrix")
    return P


def _require_stochastic(P: np.ndarray, name: str) -> None:
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ValueError(f"{name} is not row-stochastic")


def tail_sums(P: np.ndarray) -> np.ndarray:
    """T[i, t] = sum_{j >= t} P[i, j] (0-based t)."""
    return np.cumsum(P[:, ::-1], axis=1)[:, ::-1]


def check_ifr(kernel, atol: float = ORDER_ATOL) -> CheckResult:
    """A kernel is IFR when every tail sum is nondecreasing in the current state."""
    P = _as_rows(kernel)
    _require_stochastic(P, "kernel")
    T = tail_sums(P)
    drop = T[:-1] - T[1:]
    bad = np.argwhere(drop > atol)
    if bad.size:
        i, t = bad[0]
        return CheckResult(False, {
            "i": int(i) + 1, "i_next": int(i) + 2, "t": int(t) + 1,
            "tail_i": float(T[i, t]), "tail_next": float(T[i + 1, t]),
        })
    return CheckResult(True)


def check_stochastic_order(P, Q, atol: float = ORDER_ATOL) -> CheckResult:
    """Pass iff P is stochastically greater than Q (larger index = worse).

    That is, sum_{j>=t} P(j|i) <= sum_{j>=t} Q(j|i) for every row i and t.
    """
    P, Q = _as_rows(P), _as_rows(Q)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {Q.shape}")
    _require_stochastic(P, "P")
    _require_stochastic(Q, "Q")
    TP, TQ = tail_sums(P), tail_sums(Q)
    bad = np.argwhere(TP - TQ > atol)
    if bad.size:
        i, t = bad[0]
        return CheckResult(False, {
            "i": int(i) + 1, "t": int(t) + 1,
            "tail_P": float(TP[i, t]), "tail_Q": float(TQ[i, t]),
        })
    return CheckResult(True)


def _monotone(arr: np.ndarray, axis: int, increasing: bool, atol: float, names):
    diff = np.diff(arr, axis=axis)
    bad = np.argwhere(diff < -atol) if increasing else np.argwhere(diff > atol)
    if not bad.size:
        return CheckResult(True)
    idx = tuple(int(x) for x in bad[0])
    nxt = list(idx)
    nxt[axis] += 1
    return CheckResult(False, {
        "index": {n: i + 1 for n, i in zip(names, idx)},
        "axis": names[axis],
        "value": float(arr[idx]),
        "next_value": float(arr[tuple(nxt)]),
    })


def _first_failure(*results: CheckResult) -> CheckResult:
    for r in results:
        if not r.passed:
            return r
    return CheckResult(True)


@dataclass
class AssumptionReport:
    results: dict[str, CheckResult]

    def __getitem__(self, key: str) -> CheckResult:
        return self.results[key]

    def passed(self, *keys: str) -> bool:
        return all(self.results[k].passed for k in (keys or self.results))

    def to_dict(self):
        return {k: r.to_dict() for k, r in self.results.items()}


def check_assumptions(spec: ModelSpec, atol: float = ORDER_ATOL) -> AssumptionReport:
    """Evaluate assumptions A1..A9 on a model.

    The death row of ``fail_prob`` is never read by the model, so A3 is
    checked over living patient states only.
    """
    d = spec.dims
    H, K = d.H, d.K
    Hk, Qk = spec.wait_kernel, spec.fail_kernel
    r, F, c = spec.transplant_reward, spec.fail_prob, spec.wait_reward
    lam = spec.discount
    res: dict[str, CheckResult] = {}

    res["A1"] = _first_failure(*(
        _monotone(r, ax, False, atol, ("h", "k", "m")) for ax in range(3)
    ))
    res["A2"] = _monotone(c, 0, False, atol, ("h",))
    res["A3"] = _first_failure(*(
        _monotone(F[:H], ax, True, atol, ("h", "k", "m")) for ax in range(3)
    ))

    ifr_h, ifr_q = check_ifr(Hk, atol), check_ifr(Qk, atol)
    if not ifr_h:
        res["A4"] = CheckResult(False, {"kernel": "wait", **ifr_h.witness})
    elif not ifr_q:
        res["A4"] = CheckResult(False, {"kernel": "fail", **ifr_q.witness})
    else:
        res["A4"] = CheckResult(True)

    res["A5"] = check_stochastic_order(Hk, Qk, atol)

    offers = spec.offer_pmf[:, :K]
    res["A6"] = _monotone(offers, 0, False, atol, ("h", "k"))

    # A7: tails taken through the death state, for h0 = h+1..H.
    T = tail_sums(Hk)
    res["A7"] = CheckResult(True)
    for h in range(H):
        for h0 in range(h + 1, H):
            if T[h, h0] > T[h + 1, h0] + atol:
                res["A7"] = CheckResult(False, {
                    "h": h + 1, "h0": h0 + 1,
                    "tail_h": float(T[h, h0]), "tail_h_next": float(T[h + 1, h0]),
                })
                break
        if not res["A7"]:
            break

    # A8: relative drop in expected transplant reward vs. increase in death risk.
    res["A8"] = CheckResult(True)
    eg = (1.0 - F) * r + F * c[:, None, None]
    death = Hk[:, H]
    for h in range(H - 1):
        rhs = (1.0 - F[h]) * lam * (death[h + 1] - death[h])
        num = eg[h] - eg[h + 1]
        den = eg[h + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.where(den != 0, num / np.where(den != 0, den, 1.0), np.nan)
        bad = np.where(den != 0, lhs > rhs + atol, num > 0)
        if bad.any():
            k, m = np.argwhere(bad)[0]
            res["A8"] = CheckResult(False, {
                "h": h + 1, "k": int(k) + 1, "m": int(m) + 1,
                "lhs": float(lhs[k, m]), "rhs": float(rhs[k, m]),
            })
            break

    TD = tail_sums(Qk - Hk)
    diff = TD[1:H + 1] - TD[:H]
    bad = np.argwhere(diff > atol)
    if bad.size:
        h, h0 = bad[0]
        res["A9"] = CheckResult(False, {
            "h": int(h) + 1, "h0": int(h0) + 1,
            "tail_gap_h": float(TD[h, h0]), "tail_gap_h_next": float(TD[h + 1, h0]),
        })
    else:
        res["A9"] = CheckResult(True)
    return AssumptionReport(res)


@dataclass
class MonotonicityReport:
    axes: dict[str, CheckResult]
    tolerance: float
    within_tolerance: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.axes.values())

    def to_dict(self):
        return {
            "pass": self.passed,
            "tolerance": self.tolerance,
            "axes": {k: r.to_dict() for k, r in self.axes.items()},
            "within_tolerance": self.within_tolerance,
        }


def verify_value_monotonicity(sol: Solution | np.ndarray, v=None, tolerance=None) -> MonotonicityReport:
    """Check that V falls in h, k and m and that v falls in h.

    Accepts a :class:`Solution` or a bare value tensor (with optional ``v``).
    Increases no larger than ``tolerance`` (default: twice the solver error
    bound) are recorded but do not fail the check.
    """
    if isinstance(sol, Solution):
        V, v = sol.V, sol.v
        tol = 2.0 * sol.error_bound if tolerance is None else tolerance
    else:
        V = np.asarray(sol, dtype=float)
        tol = 0.0 if tolerance is None else tolerance
    K = V.shape[1] - 1
    noted: list[dict] = []

    def scan(arr, axis, names, label):
        diff = np.diff(arr, axis=axis)
        for idx in np.argwhere((diff > 0) & (diff <= tol)):
            noted.append({"axis": label, "index": [int(i) + 1 for i in idx],
                          "increase": float(diff[tuple(idx)])})
        return _monotone(arr, axis, False, tol, names)

    axes = {
        "h": scan(V, 0, ("h", "k", "m"), "h"),
        "k": scan(V[:, :K, :], 1, ("h", "k", "m"), "k"),
        "m": scan(V, 2, ("h", "k", "m"), "m"),
    }
    # No offer is never better than any real offer.
    gap = V[:, K:K + 1, :] - V[:, :K, :]
    bad = np.argwhere(gap > tol)
    if bad.size and axes["k"].passed:
        h, k, m = bad[0]
        axes["k"] = CheckResult(False, {
            "index": {"h": int(h) + 1, "k": int(k) + 1, "m": int(m) + 1},
            "axis": "k_no_offer",
            "value": float(V[h, k, m]), "no_offer_value": float(V[h, K, m]),
        })
    if v is not None:
        axes["v"] = scan(np.asarray(v, dtype=float), 0, ("h",), "v")
    return MonotonicityReport(axes, tol, noted)


# --- control limits -------------------------------------------------------

@dataclass
class LimitFamily:
    """One control-limit family.

    ``limits`` holds 1-based limit values; slices where the accept set is not
    an interval of the required orientation hold -1 and are listed in
    ``witnesses``.
    """

    exists: bool
    limits: np.ndarray
    witnesses: list[dict] = field(default_factory=list)

    def to_dict(self):
        return {"exists": self.exists, "limits": self.limits.tolist(), "witnesses": self.witnesses}


@dataclass
class ControlLimitReport:
    """M*(h,k): accept iff m < M*.  K*(h,m): accept iff k < K*.  H*(k,m): accept iff h > H*."""

    dims: Dimensions
    match_based: LimitFamily
    kidney_based: LimitFamily
    patient_based: LimitFamily

    @property
    def all_exist(self) -> bool:
        return self.match_based.exists and self.kidney_based.exists and self.patient_based.exists

    def families(self):
        return {"match": self.match_based, "kidney": self.kidney_based, "patient": self.patient_based}

    def to_dict(self):
        return {
            "dims": self.dims.to_dict(),
            **{f"{name}_based": fam.to_dict() for name, fam in self.families().items()},
        }

    def csv_rows(self):
        """Rows (axis, coord1, coord2, limit) for every stored limit."""
        rows = []
        labels = {"match": ("h", "k"), "kidney": ("h", "m"), "patient": ("k", "m")}
        for name, fam in self.families().items():
            for (a, b), val in np.ndenumerate(fam.limits):
                rows.append((name, a + 1, b + 1, int(val)))
        return rows


def _prefix_limit(row: np.ndarray) -> int | None:
    """Length+1 of the accept prefix, or None when the accept set is not a prefix."""
    n = int(row.sum())
    if row[:n].all():
        return n + 1
    return None


def extract_control_limits(policy: Policy, dims: Dimensions | None = None) -> ControlLimitReport:
    """Derive the three limit functions from an acceptance table."""
    dims = dims or policy.dims
    policy.check_dims(dims)
    A = policy.accept
    H, K, M = dims.H, dims.K, dims.M

    def family(shape, slicer, coord_names, to_limit):
        limits = np.full(shape, -1, dtype=int)
        witnesses = []
        for a in range(shape[0]):
            for b in range(shape[1]):
                row = slicer(a, b)
                lim = to_limit(row)
                if lim is None:
                    witnesses.append({
                        coord_names[0]: a + 1, coord_names[1]: b + 1,
                        "accept_pattern": "".join("T" if x else "W" for x in row),
                    })
                else:
                    limits[a, b] = lim
        return LimitFamily(not witnesses, limits, witnesses)

    match = family((H, K), lambda h, k: A[h, k, :], ("h", "k"), _prefix_limit)
    kidney = family((H, M), lambda h, m: A[h, :, m], ("h", "m"), _prefix_limit)

    def suffix(row):
        lim = _prefix_limit(row[::-1])
        return None if lim is None else H - (lim - 1)

    patient = family((K, M), lambda k, m: A[:, k, m], ("k", "m"), suffix)
    return ControlLimitReport(dims, match, kidney, patient)


def policy_from_limits(report: ControlLimitReport, family: str) -> Policy:
    """Rebuild the acceptance table from one existing limit family."""
    d = report.dims
    h = np.arange(1, d.H + 1)[:, None, None]
    k = np.arange(1, d.K + 1)[None, :, None]
    m = np.arange(1, d.M + 1)[None, None, :]
    fam = report.families()[family]
    if not fam.exists:
        raise ValueError(f"{family}-based limits do not exist")
    L = fam.limits
    if family == "match":
        return Policy(m < L[:, :, None])
    if family == "kidney":
        return Policy(k < L[:, None, :])
    if family == "patient":
        return Policy(h > L[None, :, :])
    raise ValueError(f"unknown family {family!r}")


@dataclass
class ConsistencyReport:
    checks: dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self):
        return {"pass": self.passed, "checks": {k: c.to_dict() for k, c in self.checks.items()}}


def verify_limit_consistency(report: ControlLimitReport) -> ConsistencyReport:
    """Monotonicity of the limit functions and the six inverse identities."""
    missing = [n for n, f in report.families().items() if not f.exists]
    if missing:
        raise ValueError(f"limit families missing: {', '.join(missing)}")
    d = report.dims
    Ms = report.match_based.limits      # (H, K)
    Ks = report.kidney_based.limits     # (H, M)
    Hs = report.patient_based.limits    # (K, M)
    checks: dict[str, CheckResult] = {
        "K*_nonincreasing_in_m": _monotone(Ks, 1, False, 0, ("h", "m")),
        "K*_nondecreasing_in_h": _monotone(Ks, 0, True, 0, ("h", "m")),
        "M*_nonincreasing_in_k": _monotone(Ms, 1, False, 0, ("h", "k")),
        "M*_nondecreasing_in_h": _monotone(Ms, 0, True, 0, ("h", "k")),
        "H*_nondecreasing_in_k": _monotone(Hs, 0, True, 0, ("k", "m")),
        "H*_nondecreasing_in_m": _monotone(Hs, 1, True, 0, ("k", "m")),
    }
    hs = np.arange(1, d.H + 1)
    ks = np.arange(1, d.K + 1)
    ms = np.arange(1, d.M + 1)

    def first(mask, values, empty):
        return int(values[mask][0]) if mask.any() else empty

    def last(mask, values, empty):
        return int(values[mask][-1]) if mask.any() else empty

    # Each identity: (name, target array, coordinate grid, inverse computed at (a, b), names)
    identities = {
        "M*=K^-M": (Ms, lambda h, k: first(k + 1 >= Ks[h, :], ms, d.M + 1), ("h", "k")),
        "K*=M^-K": (Ks, lambda h, m: first(m + 1 >= Ms[h, :], ks, d.K + 1), ("h", "m")),
        "H*=K^-H": (Hs, lambda k, m: last(k + 1 >= Ks[:, m], hs, 0), ("k", "m")),
        "H*=M^-H": (Hs, lambda k, m: last(m + 1 >= Ms[:, k], hs, 0), ("k", "m")),
        "M*=H^-M": (Ms, lambda h, k: first(h + 1 <= Hs[k, :], ms, d.M + 1), ("h", "k")),
        "K*=H^-K": (Ks, lambda h, m: first(h + 1 <= Hs[:, m], ks, d.K + 1), ("h", "m")),
    }
    for name, (target, inverse, names) in identities.items():
        result = CheckResult(True)
        for (a, b), val in np.ndenumerate(target):
            inv = inverse(a, b)
            if inv != val:
                result = CheckResult(False, {
                    names[0]: a + 1, names[1]: b + 1, "limit": int(val), "inverse": inv,
                })
                break
        checks[name] = result
    return ConsistencyReport(checks)


# --- dominance -----------------------------------------------------------

_MODE_FIELDS = {
    "offer": ("offer_pmf",),
    "transition": ("wait_kernel", "fail_kernel"),
}


@dataclass
class DominanceReport:
    mode: str
    precondition: dict[str, CheckResult]
    conclusion: CheckResult
    tolerance: float

    @property
    def precondition_ok(self) -> bool:
        return all(r.passed for r in self.precondition.values())

    def to_dict(self):
        return {
            "mode": self.mode,
            "precondition": {k: r.to_dict() for k, r in self.precondition.items()},
            "conclusion": self.conclusion.to_dict(),
            "tolerance": self.tolerance,
        }


def compare_dominance(
    spec1: ModelSpec, spec2: ModelSpec, sol1: Solution, sol2: Solution, mode: str
) -> DominanceReport:
    """Check the stochastic-order hypothesis and V1 >= V2 pointwise.

    ``mode`` is "offer" (models differ only in the offer pmf) or "transition"
    (models differ only in the wait/fail kernels).
    """
    if mode not in _MODE_FIELDS:
        raise ValueError(f"unknown dominance mode {mode!r}")
    if spec1.dims != spec2.dims:
        raise ValueError("models have different dimensions")
    allowed = _MODE_FIELDS[mode]
    for name in ModelSpec.__dataclass_fields__:
        if name in ("dims",) or name in allowed:
            continue
        a, b = getattr(spec1, name), getattr(spec2, name)
        if not np.array_equal(a, b):
            raise ValueError(f"models differ in {name}, not permitted in {mode} mode")
    if not (sol1.converged and sol2.converged):
        raise ValueError("both solutions must be converged")

    if mode == "offer":
        pre = {"K1>=K2": check_stochastic_order(spec1.offer_pmf, spec2.offer_pmf)}
    else:
        pre = {
            "H1>=H2": check_stochastic_order(spec1.wait_kernel, spec2.wait_kernel),
            "Q1>=Q2": check_stochastic_order(spec1.fail_kernel, spec2.fail_kernel),
        }
    tol = 2.0 * (sol1.error_bound + sol2.error_bound)
    gap = sol1.V - sol2.V
    bad = np.argwhere(gap < -tol)
    if bad.size:
        h, k, m = bad[0]
        conclusion = CheckResult(False, {
            "h": int(h) + 1, "k": int(k) + 1, "m": int(m) + 1,
            "V1": float(sol1.V[h, k, m]), "V2": float(sol2.V[h, k, m]),
        })
    else:
        conclusion = CheckResult(True)
    return DominanceReport(mode, pre, conclusion, tol)
