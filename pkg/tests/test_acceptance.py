"""Acceptance suite: one test per release criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""

import time

import numpy as np
import pytest

from kidney_mdp import (
    Dimensions,
    check_assumptions,
    compare_dominance,
    extract_control_limits,
    solve_value_iteration,
    verify_value_monotonicity,
)
from kidney_mdp.experiments import build_experiment_model, run_comparison
from kidney_mdp.generators import (
    offer_dominated_pair,
    random_model,
    random_structured_model,
    transition_dominated_pair,
)
from kidney_mdp.sim import SimConfig, simulate

from oracles import brute_force_value

pytestmark = pytest.mark.acceptance


def test_criterion_01_exp1_all_limits_exist(report):
    spec = build_experiment_model("exp1")
    t0 = time.perf_counter()
    sol = solve_value_iteration(spec, tol=1e-10)
    elapsed = time.perf_counter() - t0
    limits = extract_control_limits(sol.policy, spec.dims)
    n_states = int(np.prod(spec.dims.value_shape))
    ok = sol.converged and elapsed < 10.0 and limits.all_exist and n_states == 595
    report(1, "exp1 solves fast and has match-, kidney- and patient-based limits", ok,
           f"{n_states} states, {sol.iterations} iterations, {elapsed:.2f}s, "
           f"exists={ {k: f.exists for k, f in limits.families().items()} }")
    assert ok


def test_criterion_02_exp2_patient_limit_absent(report):
    spec = build_experiment_model("exp2")
    sol = solve_value_iteration(spec, tol=1e-10)
    limits = extract_control_limits(sol.policy, spec.dims)
    patient = limits.patient_based
    witness_at_m7 = any(w["m"] == 7 for w in patient.witnesses)
    ok = (limits.match_based.exists and limits.kidney_based.exists
          and not patient.exists and witness_at_m7)
    report(2, "exp2 has match- and kidney-based limits but no patient-based limit (witness at m=7)",
           ok, f"exists={ {k: f.exists for k, f in limits.families().items()} }, "
               f"witnesses={patient.witnesses}")
    assert ok


def test_criterion_03_assumption_checker(report):
    r1 = check_assumptions(build_experiment_model("exp1"))
    r2 = check_assumptions(build_experiment_model("exp2"))
    got = {
        "exp1 A4": r1["A4"].passed, "exp1 A5": r1["A5"].passed,
        "exp1 A7": r1["A7"].passed, "exp1 A9": r1["A9"].passed,
        "exp2 A8": r2["A8"].passed,
    }
    want = {"exp1 A4": True, "exp1 A5": True, "exp1 A7": True, "exp1 A9": False, "exp2 A8": False}
    ok = got == want
    report(3, "exp1 A4/A5/A7 pass and A9 fails; exp2 A8 fails", ok, str(got))
    assert ok


def test_criterion_04_value_monotonicity(report):
    sol = solve_value_iteration(build_experiment_model("exp1"), tol=1e-10)
    mono = verify_value_monotonicity(sol)
    ok = mono.passed and mono.tolerance == pytest.approx(2 * sol.error_bound)
    report(4, "exp1 V nonincreasing in h, k, m and v nonincreasing in h", ok,
           f"tolerance {mono.tolerance:.2e}, {len(mono.within_tolerance)} within-tolerance increases, "
           f"axes={ {k: r.passed for k, r in mono.axes.items()} }")
    assert ok


def test_criterion_05_baseline_bracketing(report):
    cmp = run_comparison("exp1")
    kd = cmp.baseline_limits.kidney_based.limits[:, 0]
    k4 = cmp.limits.kidney_based.limits[:, 3]
    k5 = cmp.limits.kidney_based.limits[:, 4]
    lo, hi = np.minimum(k4, k5), np.maximum(k4, k5)
    ok = bool(np.all((lo <= kd) & (kd <= hi)))
    assert ok == cmp.bracketing["pass"]
    report(5, "baseline kidney-based curve lies between the m=4 and m=5 curves", ok,
           f"K_D={kd.tolist()}, K*(.,4)={k4.tolist()}, K*(.,5)={k5.tolist()}")
    assert ok


def test_criterion_06_life_expectancy_gap(report):
    cmp = run_comparison("exp1")
    gap = cmp.max_gap
    where = tuple(int(i) + 1 for i in np.unravel_index(cmp.gap.argmax(), cmp.gap.shape))
    ok = 0.5 <= gap <= 2.0
    report(6, "max gap V_d1 - V_D1 on exp1 lies in [0.5, 2.0] years", ok,
           f"max gap {gap:.4f} at (h,k,m)={where}, patient-level gap v(1) {cmp.patient_gap()[0]:.4f}")
    assert ok


def test_criterion_07_brute_force_oracle(report):
    rng = np.random.default_rng(20240607)
    dims = Dimensions(3, 2, 2)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(50):
        spec = random_model(rng, dims, discount=0.9)
        sol = solve_value_iteration(spec, tol=1e-12)
        assert sol.converged
        worst = max(worst, float(np.max(np.abs(sol.V - brute_force_value(spec)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 30.0
    report(7, "value iteration matches brute-force enumeration on 50 random H=3,K=2,M=2 models", ok,
           f"max error {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_08_structured_models_have_limits(report):
    rng = np.random.default_rng(8)
    failures = []
    for i in range(100):
        dims = Dimensions(int(rng.integers(2, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 6)))
        spec = random_structured_model(rng, dims, discount=float(rng.uniform(0.5, 0.99)))
        assert check_assumptions(spec).passed("A1", "A2", "A3", "A4", "A5", "A6")
        rep = extract_control_limits(solve_value_iteration(spec).policy, dims)
        if not (rep.match_based.exists and rep.kidney_based.exists):
            failures.append((i, dims, rep.match_based.witnesses, rep.kidney_based.witnesses))
    ok = not failures
    report(8, "100 random A1-A6 models all have match- and kidney-based limits", ok,
           f"{len(failures)} failures" + (f", first {failures[0]}" if failures else ""))
    assert ok


def test_criterion_09_dominance(report):
    rng = np.random.default_rng(9)
    results = {"offer": [], "transition": []}
    for mode, make in (("offer", offer_dominated_pair), ("transition", transition_dominated_pair)):
        for _ in range(50):
            dims = Dimensions(int(rng.integers(2, 7)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
            s1, s2 = make(rng, dims, discount=float(rng.uniform(0.5, 0.99)))
            rep = compare_dominance(s1, s2, solve_value_iteration(s1), solve_value_iteration(s2), mode)
            assert rep.precondition_ok
            results[mode].append(rep.conclusion.passed)
    ok = all(all(v) for v in results.values())
    report(9, "V1 >= V2 on 50 offer-dominated and 50 transition-dominated random pairs", ok,
           ", ".join(f"{m}: {sum(v)}/{len(v)}" for m, v in results.items()))
    assert ok


def test_criterion_10_simulator_cross_validation(report):
    spec = build_experiment_model("exp1")
    sol = solve_value_iteration(spec, tol=1e-10)
    d = spec.dims
    rng = np.random.default_rng(10)
    starts = {(int(rng.integers(1, d.H + 1)), int(rng.integers(1, d.K + 2)), int(rng.integers(1, d.M + 1)))
              for _ in range(40)}
    starts = sorted(starts)[:10]
    assert len(starts) == 10
    seed = 0
    z_scores = []
    replay_ok = True
    for s in starts:
        cfg = SimConfig(n_trajectories=200_000, seed=seed, start_state=s)
        res = simulate(spec, sol.policy, cfg)
        exact = sol.V[s[0] - 1, s[1] - 1, s[2] - 1]
        z_scores.append(abs(res.mean - exact) / res.std_error)
        again = simulate(spec, sol.policy, cfg)
        replay_ok &= again.mean == res.mean and np.array_equal(again.returns, res.returns)
    ok = max(z_scores) <= 3.0 and replay_ok
    report(10, "exp1 Monte Carlo estimates within 3 SE at 10 start states, replay bit-exact", ok,
           f"max |z| {max(z_scores):.2f}, replay {'exact' if replay_ok else 'DIFFERS'}")
    assert ok
