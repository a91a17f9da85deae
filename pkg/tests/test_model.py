import json

import numpy as np
import pytest

from kidney_mdp import Dimensions, ModelSpec, Policy, SchemaError, validate_model
from kidney_mdp.generators import random_model

from oracles import hand_model


def codes(spec):
    return {v.code for v in validate_model(spec).violations}


def test_dimensions_reject_nonpositive():
    with pytest.raises(ValueError):
        Dimensions(0, 1, 1)
    with pytest.raises(ValueError):
        Dimensions(2, -1, 1)


def test_shapes():
    d = Dimensions(3, 2, 4)
    assert d.value_shape == (4, 3, 4)
    assert d.decision_shape == (3, 2, 4)


def test_wrong_array_shape_is_schema_error():
    spec = hand_model()
    with pytest.raises(SchemaError, match="offer_pmf"):
        spec.replace(offer_pmf=np.ones((3, 3)) / 3)


def test_arrays_are_read_only():
    spec = hand_model()
    with pytest.raises(ValueError):
        spec.wait_kernel[0, 0] = 0.7


def test_experiment_model_validates(exp1_spec, exp2_spec):
    assert validate_model(exp1_spec).ok
    assert validate_model(exp2_spec).ok
    # direct summation, independent of the validator
    for spec in (exp1_spec, exp2_spec):
        for name in ("wait_kernel", "fail_kernel", "offer_pmf"):
            np.testing.assert_allclose(getattr(spec, name).sum(axis=1), 1.0, atol=1e-12)
        assert abs(spec.mismatch_pmf.sum() - 1.0) < 1e-12


def test_row_sum_violation_names_row():
    spec = hand_model()
    W = spec.wait_kernel.copy()
    W[0] = [0.5, 0.2, 0.2]
    report = validate_model(spec.replace(wait_kernel=W))
    assert not report.ok
    bad = [v for v in report.violations if v.code == "row_sum"]
    assert len(bad) == 1
    assert bad[0].index == (1,)
    assert "wait_kernel row 1" in bad[0].message


def test_terminal_reward_at_death():
    spec = hand_model()
    r = spec.transplant_reward.copy()
    r[-1, 0, 0] = 1.0
    report = validate_model(spec.replace(transplant_reward=r))
    assert "terminal reward at death nonzero" in report.messages()


@pytest.mark.parametrize("field,mutate,code", [
    ("discount", lambda s: 1.5, "discount"),
    ("wait_reward", lambda s: np.array([1.0, 0.5, 0.3]), "death_wait_reward"),
    ("fail_prob", lambda s: np.full(s.fail_prob.shape, 1.0), "fail_prob"),
    ("offer_pmf", lambda s: np.array([[0.4, 0.6], [0.25, 0.75], [0.5, 0.5]]), "offer_after_death"),
    ("wait_kernel", lambda s: np.array([[0.5, 0.3, 0.2], [0.0, 0.6, 0.4], [0.1, 0.0, 0.9]]),
     "death_absorbing"),
    ("transplant_reward", lambda s: np.array([[[-1.0]], [[6.0]], [[0.0]]]), "negative"),
])
def test_constructed_violations(field, mutate, code):
    spec = hand_model()
    assert validate_model(spec).ok
    assert code in codes(spec.replace(**{field: mutate(spec)}))


def test_json_round_trip(tmp_path, exp1_spec):
    path = tmp_path / "m.json"
    exp1_spec.to_json(path)
    back = ModelSpec.from_json(path)
    assert back.dims == exp1_spec.dims
    for name in ModelSpec.__dataclass_fields__:
        if name != "dims":
            np.testing.assert_array_equal(getattr(back, name), getattr(exp1_spec, name))


def test_from_dict_rejects_missing_field():
    data = hand_model().to_dict()
    del data["fail_kernel"]
    with pytest.raises(SchemaError, match="fail_kernel"):
        ModelSpec.from_dict(data)


def test_from_dict_rejects_bad_row_sum():
    data = hand_model().to_dict()
    data["offer_pmf"][0] = [0.4, 0.5]
    with pytest.raises(SchemaError, match="offer_pmf row 1"):
        ModelSpec.from_dict(data)


def test_from_dict_rejects_non_numeric_and_nonfinite():
    data = hand_model().to_dict()
    data["wait_reward"] = ["a", "b", "c"]
    with pytest.raises(SchemaError):
        ModelSpec.from_dict(data)
    data = hand_model().to_dict()
    data["wait_reward"] = [float("nan"), 0.5, 0.0]
    with pytest.raises(SchemaError):
        ModelSpec.from_dict(data)


def test_from_json_rejects_garbage(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(SchemaError):
        ModelSpec.from_json(path)
    path.write_text(json.dumps([1, 2, 3]))
    with pytest.raises(SchemaError):
        ModelSpec.from_json(path)


def test_random_models_validate():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert validate_model(random_model(rng, Dimensions(4, 3, 2))).ok


def test_policy_helpers():
    d = Dimensions(2, 2, 3)
    p = Policy.always_wait(d)
    assert p.action(1, 1, 1) == "W"
    q = Policy.always_transplant(d)
    assert q.action(2, 2, 3) == "T"
    # no-offer and death states are always W
    assert q.action(2, 3, 1) == "W"
    assert q.action(3, 1, 1) == "W"
    assert p != q
    assert Policy(q.accept.copy()) == q


def test_policy_ties_report_both_actions():
    accept = np.array([[[True]]])
    p = Policy(accept, ties=np.array([[[True]]]))
    assert p.optimal_actions(1, 1, 1) == {"W", "T"}
    assert Policy(accept).optimal_actions(1, 1, 1) == {"T"}


def test_policy_dimension_check():
    with pytest.raises(ValueError):
        Policy(np.zeros((2, 2), dtype=bool))
    with pytest.raises(ValueError):
        Policy.always_wait(Dimensions(2, 2, 2)).check_dims(Dimensions(2, 2, 3))
