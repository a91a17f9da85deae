import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import poisson

from kidney_mdp import check_assumptions, solve_value_iteration, validate_model
from kidney_mdp.experiments import (
    FAIL_TABLE,
    MISMATCH_PMF_PRINTED,
    OFFER_PMF_PRINTED,
    POST_FAILURE_STATE,
    REWARD_M1,
    REWARD_M7,
    build_baseline_model,
    build_experiment_model,
    build_reward_tensor,
    check_bracketing,
    normalized_mismatch_pmf,
    normalized_offer_pmf,
    poisson_mean_from_survival,
    poisson_tail,
    solve_baseline,
)


# --- kernels and parameters -----------------------------------------------------

def test_exp1_wait_kernel_entries(exp1_spec):
    Hk = exp1_spec.wait_kernel
    assert Hk[0, 16] == pytest.approx(0.01)
    assert Hk[1, 16] == pytest.approx(0.017)
    assert Hk[0, 1] == pytest.approx(0.99)
    # the sickest living state stays put when it survives
    assert Hk[15, 15] == pytest.approx(1 - (0.01 + 0.007 * 15))


def test_exp2_death_at_last_state(exp2_spec):
    assert exp2_spec.wait_kernel[15, 16] == pytest.approx(0.10)


def test_fail_kernel_jump_table(exp1_spec):
    Q = exp1_spec.fail_kernel
    for h in range(1, 17):
        target = POST_FAILURE_STATE.get(h, 16)
        d = 0.01 + 0.007 * (h - 1)
        assert Q[h - 1, 16] == pytest.approx(d)
        assert Q[h - 1, target - 1] == pytest.approx(1 - d)
    assert POST_FAILURE_STATE[1] == 6 and POST_FAILURE_STATE[7] == 14


def test_fail_probabilities_from_table(exp1_spec):
    F = exp1_spec.fail_prob
    for k, (good, other) in enumerate(FAIL_TABLE):
        assert np.all(F[:, k, 0] == good)
        assert np.all(F[:, k, 1:] == other)
    assert FAIL_TABLE[0] == (0.017, 0.041) and FAIL_TABLE[3] == (0.073, 0.095)


def test_other_parameters(exp1_spec):
    assert exp1_spec.discount == 0.99
    assert exp1_spec.dims.value_shape == (17, 5, 7)
    assert np.all(exp1_spec.wait_reward[:16] == 0.5) and exp1_spec.wait_reward[16] == 0


def test_offer_pmf_keeps_printed_offers(caplog):
    with caplog.at_level(logging.WARNING, logger="kidney_mdp.experiments"):
        p = normalized_offer_pmf()
    assert "offer pmf" in caplog.text
    np.testing.assert_array_equal(p[:4], OFFER_PMF_PRINTED[:4])
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert 1 - p[-1] == pytest.approx(0.2367)


def test_mismatch_pmf_rescaled(caplog):
    with caplog.at_level(logging.WARNING, logger="kidney_mdp.experiments"):
        p = normalized_mismatch_pmf()
    assert "mismatch pmf" in caplog.text
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    ratio = p / np.asarray(MISMATCH_PMF_PRINTED)
    np.testing.assert_allclose(ratio, ratio[0])


def test_exact_pmf_not_adjusted(caplog):
    with caplog.at_level(logging.WARNING, logger="kidney_mdp.experiments"):
        p = normalized_mismatch_pmf((0.25, 0.75))
    assert caplog.text == ""
    np.testing.assert_array_equal(p, [0.25, 0.75])


def test_unknown_experiment():
    with pytest.raises(ValueError):
        build_experiment_model("exp3")


def test_experiment_models_satisfy_table_assumptions(exp1_spec, exp2_spec):
    for spec in (exp1_spec, exp2_spec):
        assert validate_model(spec).ok
        assert check_assumptions(spec).passed("A1", "A2", "A3", "A4", "A5", "A6", "A7")


# --- rewards ------------------------------------------------------------------------

def test_printed_reward_entries():
    r = build_reward_tensor()
    assert r[0, 0, 0] == 12
    assert r[0, 3, 0] == 8.5
    assert r[15, 3, 6] == 4.8
    np.testing.assert_array_equal(r[:16, :, 0], REWARD_M1)
    np.testing.assert_array_equal(r[:16, :, 6], REWARD_M7)
    assert np.all(r[16] == 0)


def test_typo_entry_repaired():
    r = np.asarray(REWARD_M7)
    assert r[1, 3] == 5.5


def test_intermediate_rewards_bracketed_and_monotone():
    r = build_reward_tensor()
    assert 6 < r[0, 0, 3] < 12
    assert np.all(r[:16, :, 1:6] <= r[:16, :, :1]) and np.all(r[:16, :, 1:6] >= r[:16, :, 6:])
    for ax in range(3):
        assert np.all(np.diff(r, axis=ax) <= 0)


def test_poisson_tail_against_scipy():
    for mu in (0.3, 1.0, 4.67, 12.0, 40.0):
        assert poisson_tail(mu) == pytest.approx(poisson.sf(4, mu), rel=1e-12, abs=1e-15)


def test_poisson_mean_half():
    mu = poisson_mean_from_survival(0.5)
    assert mu == pytest.approx(4.67, abs=0.005)
    # independent check via scipy's survival function
    assert poisson.sf(4, mu) == pytest.approx(0.5, abs=1e-9)


def test_poisson_mean_limits():
    # P(X >= 5) ~ mu^5 / 120 near zero
    mus = [poisson_mean_from_survival(p) for p in (1e-5, 1e-10, 1e-15, 1e-20)]
    assert all(a > b for a, b in zip(mus, mus[1:]))
    assert mus[-1] == pytest.approx((120e-20) ** 0.2, rel=1e-3)
    with pytest.raises(ValueError):
        poisson_mean_from_survival(0.0)
    with pytest.raises(ValueError):
        poisson_mean_from_survival(1.0)
    with pytest.raises(ValueError):
        poisson_mean_from_survival(-0.2)


@settings(max_examples=100, deadline=None)
@given(p=st.floats(1e-6, 1 - 1e-6))
def test_property_poisson_round_trip(p):
    assert poisson_tail(poisson_mean_from_survival(p)) == pytest.approx(p, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(p=st.floats(1e-4, 0.99), q=st.floats(1e-4, 0.99))
def test_property_poisson_mean_increasing(p, q):
    if p == q:
        return
    lo, hi = sorted((p, q))
    if hi - lo < 1e-6:
        return
    assert poisson_mean_from_survival(lo) < poisson_mean_from_survival(hi)


# --- baseline ---------------------------------------------------------------------

def test_baseline_terminal_reward(exp1_spec):
    base = build_baseline_model(exp1_spec)
    r = exp1_spec.transplant_reward
    expected = sum(exp1_spec.mismatch_pmf[m] * r[0, 0, m] for m in range(7))
    assert base.terminal_reward[0, 0] == pytest.approx(expected, rel=1e-14)
    assert 6 < base.terminal_reward[0, 0] < 12


def test_baseline_failure_weighted(exp1_spec):
    base = build_baseline_model(exp1_spec, failure_weighted=True)
    r, F = exp1_spec.transplant_reward, exp1_spec.fail_prob
    expected = ((1 - F[0, 0]) * r[0, 0]) @ exp1_spec.mismatch_pmf
    assert base.terminal_reward[0, 0] == pytest.approx(expected)
    assert base.failure_weighted


def test_baseline_point_mass(exp1_spec):
    pm = np.zeros(7)
    pm[0] = 1.0
    base = build_baseline_model(exp1_spec.replace(mismatch_pmf=pm))
    np.testing.assert_array_equal(base.terminal_reward, exp1_spec.transplant_reward[:, :, 0])


def test_baseline_waits_when_healthy(exp1_spec):
    bsol = solve_baseline(build_baseline_model(exp1_spec))
    assert bsol.converged
    assert not bsol.accept[:3].any()


def test_baseline_matches_full_model_without_mismatch_or_failure(exp1_spec):
    spec = exp1_spec.replace(mismatch_pmf=np.eye(7)[2], fail_prob=np.zeros((17, 4, 7)))
    full = solve_value_iteration(spec)
    bsol = solve_baseline(build_baseline_model(spec))
    np.testing.assert_allclose(bsol.V, full.V[:, :, 2], atol=1e-8)
    np.testing.assert_array_equal(bsol.accept, full.policy.accept[:, :, 2])


# --- comparison ---------------------------------------------------------------------

def test_comparison_optimum_dominates(exp1_comparison):
    cmp = exp1_comparison
    assert cmp.min_gap >= -2 * cmp.solution.error_bound


def test_comparison_bracketing(exp1_comparison):
    assert exp1_comparison.bracketing["pass"], exp1_comparison.bracketing


def test_bracketing_detects_violation(exp1_comparison):
    cmp = exp1_comparison
    import copy

    base = copy.deepcopy(cmp.baseline_limits)
    base.kidney_based.limits[0, 0] = 99
    out = check_bracketing(cmp.limits, base)
    assert not out["pass"]
    assert out["violations"][0]["h"] == 1


def test_comparison_gap_where_both_accept(exp1_comparison):
    # Where d and D1 both transplant, the values differ only through the failure branch.
    cmp = exp1_comparison
    s = cmp.spec
    H, K = s.dims.H, s.dims.K
    both = cmp.solution.policy.accept & cmp.baseline_solution.lifted_policy(s.dims.M).accept
    assert both.any()
    v_gap = cmp.patient_gap()
    expected = s.fail_prob[:H] * s.discount * (s.fail_kernel @ v_gap)[:H, None, None]
    tol = 4 * cmp.solution.error_bound + 1e-9
    np.testing.assert_allclose(cmp.gap[:H, :K][both], expected[both], atol=tol)
    assert np.max(cmp.gap[:H, :K][both]) < 0.01


def test_comparison_summary(exp1_comparison):
    s = exp1_comparison.summary()
    assert s["control_limits"] == {"match": True, "kidney": True, "patient": True}
    assert len(s["patient_value_gap"]) == 17
    assert s["argmax_gap"] == [1, 1, 1]
