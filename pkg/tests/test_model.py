"""System declarations, term algebra, parameters, and zero masks."""

import json

import numpy as np
import pytest

from logitpath import (ModelSpecError, ParameterSet, SystemSpec, VariableSpec,
                       validate_system)
from logitpath.model import (INTERCEPT, Term, ZeroMask, column_value,
                             linear_predictor, zero_out)
from conftest import make_system, random_params


def two_level_spec():
    return make_system(1, treatment="binary", covariate=True,
                       extra_terms=("X:W1", "C:W1"))


# -- terms -----------------------------------------------------------------

def test_term_parse_and_str():
    assert Term.parse("1") == INTERCEPT
    ab = Term.parse("X:W1")
    assert ab == Term.parse("W1:X")
    assert ab.order == 2
    assert str(Term.parse("1")) == "1"
    assert Term.parse(str(ab)) == ab


def test_term_parse_rejects_garbage():
    with pytest.raises(ModelSpecError):
        Term.parse("")
    with pytest.raises(ModelSpecError):
        Term.parse("X:X")


def test_variable_spec_validation():
    with pytest.raises(ModelSpecError):
        VariableSpec("X", "sidecar", "binary")
    with pytest.raises(ModelSpecError):
        VariableSpec("X", "treatment", "flavour")
    with pytest.raises(ModelSpecError):
        VariableSpec("X", "treatment", "categorical")  # needs levels
    with pytest.raises(ModelSpecError):
        VariableSpec("W", "mediator", "binary")  # needs an index
    with pytest.raises(ModelSpecError):
        VariableSpec("W", "mediator", "binary", mediator_index=0)


# -- system validation -----------------------------------------------------

def test_valid_system_has_no_problems():
    spec = two_level_spec()
    report = validate_system(spec)
    assert report.ok and bool(report) and not report.problems
    spec.require_valid()


def test_outcome_must_be_binary():
    spec = SystemSpec.build(
        [VariableSpec("Y", "outcome", "continuous"),
         VariableSpec("X", "treatment", "binary")],
        {"Y": ["1", "X"]})
    assert any("must be binary" in p for p in spec.validate())


def test_mediator_index_gap_detected():
    spec = SystemSpec.build(
        [VariableSpec("Y", "outcome", "binary"),
         VariableSpec("A", "mediator", "binary", mediator_index=1),
         VariableSpec("B", "mediator", "binary", mediator_index=3),
         VariableSpec("X", "treatment", "binary")],
        {"Y": ["1", "X", "A", "B"], "A": ["1", "X", "B"], "B": ["1", "X"]})
    assert any("no gaps" in p for p in spec.validate())


def test_hierarchy_violation_detected():
    spec = SystemSpec.build(
        [VariableSpec("Y", "outcome", "binary"),
         VariableSpec("W", "mediator", "binary", mediator_index=1),
         VariableSpec("X", "treatment", "binary")],
        {"Y": ["1", "W", "X:W"], "W": ["1", "X"]})
    assert any("hierarchy" in p for p in spec.validate())


def test_recursivity_violation_detected():
    spec = SystemSpec.build(
        [VariableSpec("Y", "outcome", "binary"),
         VariableSpec("W", "mediator", "binary", mediator_index=1),
         VariableSpec("X", "treatment", "binary")],
        {"Y": ["1", "X", "W"], "W": ["1", "X", "Y"]})
    assert any("recursivity" in p for p in spec.validate())


def test_undeclared_variable_detected():
    spec = SystemSpec.build(
        [VariableSpec("Y", "outcome", "binary"),
         VariableSpec("X", "treatment", "binary")],
        {"Y": ["1", "X", "Z"]})
    assert any("undeclared" in p for p in spec.validate())


def test_covariate_cannot_be_response():
    spec = SystemSpec.build(
        [VariableSpec("Y", "outcome", "binary"),
         VariableSpec("X", "treatment", "binary"),
         VariableSpec("C", "covariate", "binary")],
        {"Y": ["1", "X"], "C": ["1", "X"]})
    assert any("cannot be a response" in p for p in spec.validate())


def test_missing_mediator_equation_detected():
    spec = SystemSpec.build(
        [VariableSpec("Y", "outcome", "binary"),
         VariableSpec("W", "mediator", "binary", mediator_index=1),
         VariableSpec("X", "treatment", "binary")],
        {"Y": ["1", "X", "W"]})
    assert any("has no equation" in p for p in spec.validate())


def test_ordering_outcome_first_then_mediators_then_treatment():
    spec = make_system(2, covariate=True)
    assert spec.ordering == ("Y", "W1", "W2", "X", "C")
    assert [m.name for m in spec.mediators] == ["W1", "W2"]


# -- column expansion ------------------------------------------------------

def test_categorical_expansion_reference_first():
    spec = make_system(1, treatment="categorical")
    labels = [spec.column_label(c) for c in spec.columns("Y")]
    assert "X{2,1}" in labels and "X{3,1}" in labels
    assert not any(lab == "X" for lab in labels)


def test_column_label_round_trip():
    spec = make_system(1, treatment="categorical", covariate=True,
                       extra_terms=("X:W1",))
    for resp in spec.responses:
        for col in spec.columns(resp):
            lab = spec.column_label(col)
            assert spec.parse_column_label(lab) == col


def test_column_value_categorical_indicator():
    spec = make_system(1, treatment="categorical")
    col = spec.parse_column_label("X{3,1}")
    assert column_value(col, {"X": 3}) == 1.0
    assert column_value(col, {"X": 2}) == 0.0


def test_column_value_missing_variable_raises():
    spec = make_system(1)
    col = spec.parse_column_label("X")
    with pytest.raises(ModelSpecError, match="no value"):
        column_value(col, {})


# -- parameter sets --------------------------------------------------------

def test_flatten_round_trip():
    rng = np.random.default_rng(3)
    spec = make_system(2, treatment="categorical", covariate=True,
                       extra_terms=("X:W1",))
    params = random_params(spec, rng)
    vec = params.flatten()
    again = ParameterSet.from_vector(spec, vec)
    assert np.array_equal(again.flatten(), vec)


def test_from_nested_fills_missing_with_zero():
    spec = make_system(1)
    params = ParameterSet.from_nested(spec, {"Y": {"X": 2.0}})
    assert params.get("Y", "X") == 2.0
    assert params.get("Y", "1") == 0.0


def test_from_nested_strict_rejects_unknown():
    spec = make_system(1)
    with pytest.raises(ModelSpecError):
        ParameterSet.from_nested(spec, {"Y": {"Q": 1.0}}, strict=True)


def test_linear_predictor_matches_hand_computation():
    spec = two_level_spec()
    params = ParameterSet.from_nested(spec, {
        "Y": {"1": -1.0, "X": 2.0, "C": 0.5, "W1": 1.5, "X:W1": -0.25,
              "C:W1": 0.75},
        "W1": {"1": -0.5, "X": 1.0, "C": 0.0}})
    got = params.linear_predictor("Y", {"X": 1, "C": 1, "W1": 1})
    assert got == pytest.approx(-1.0 + 2.0 + 0.5 + 1.5 - 0.25 + 0.75)
    got = linear_predictor(params, "W1", {"X": 0, "C": 1})
    assert got == pytest.approx(-0.5)


def test_linear_predictor_requires_every_predictor():
    spec = make_system(1)
    params = ParameterSet.zeros(spec)
    with pytest.raises(ModelSpecError, match="no value"):
        params.linear_predictor("Y", {"X": 1})  # W1 not supplied


def test_replace_accepts_labels():
    spec = make_system(1)
    params = ParameterSet.zeros(spec).replace({("Y", "X"): 3.0})
    assert params.get("Y", "X") == 3.0


# -- zero masks ------------------------------------------------------------

def test_zero_out_takes_interactions_with_it():
    spec = two_level_spec()
    rng = np.random.default_rng(4)
    params = random_params(spec, rng)
    masked = zero_out(params, [("Y", "X")])
    assert masked.get("Y", "X{2,1}" if False else "X") == 0.0
    assert masked.get("Y", "X:W1") == 0.0
    assert masked.get("Y", "W1") == params.get("Y", "W1")
    assert masked.get("W1", "X") == params.get("W1", "X")


def test_zero_out_absent_target_is_noop():
    spec = make_system(2)  # W2 equation has no W-effect on W1? it does; use C
    rng = np.random.default_rng(5)
    params = random_params(spec, rng)
    masked = params.zero_out([("W2", "W1")])  # W1 never appears in W2's eq
    assert masked.values == params.values


def test_zero_mask_rejects_unknown_response_or_variable():
    spec = make_system(1)
    with pytest.raises(ModelSpecError):
        ZeroMask.from_targets(spec, [("X", "W1")])  # X has no equation
    with pytest.raises(ModelSpecError):
        ZeroMask.from_targets(spec, [("Y", "Q")])


def test_zero_mask_union_and_idempotence():
    spec = two_level_spec()
    rng = np.random.default_rng(6)
    params = random_params(spec, rng)
    m1 = ZeroMask.from_targets(spec, [("Y", "X")])
    m2 = ZeroMask.from_targets(spec, [("Y", "W1")])
    both = m1 | m2
    once = both.apply(params)
    assert once.values == both.apply(once).values
    assert once.get("Y", "X") == 0.0 and once.get("Y", "W1") == 0.0


# -- serialization ---------------------------------------------------------

def test_spec_json_round_trip():
    spec = make_system(2, treatment="categorical", covariate=True,
                       extra_terms=("X:W1", "C:W1"))
    blob = json.dumps(spec.to_json_dict())
    again = SystemSpec.from_json_dict(json.loads(blob))
    assert again.ordering == spec.ordering
    assert again.equations == spec.equations
    assert [v.kind for v in again.variables] == [v.kind for v in spec.variables]


def test_spec_from_json_rejects_bad_role():
    doc = {"variables": [{"name": "Y", "role": "hero", "kind": "binary"}],
           "equations": {}}
    with pytest.raises(ModelSpecError):
        SystemSpec.from_json_dict(doc)
