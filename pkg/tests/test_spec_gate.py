from __future__ import annotations

import json

import pytest

from edmpipe.spec_gate import (
    PredictorChoice,
    SchemaError,
    TaskType,
    ViolationCode,
    parse_spec,
    spec_from_dict,
    validate_spec,
)
from tests.conftest import make_spec


def codes(violations) -> list[ViolationCode]:
    return [v.code for v in violations]


class TestValidateSpec:
    def test_happy_spec_has_no_violations(self, registry, happy_spec):
        assert validate_spec(happy_spec, registry) == []

    def test_low_novelty(self, registry):
        violations = validate_spec(make_spec(novelty=2), registry)
        assert codes(violations) == [ViolationCode.NOVELTY_TOO_LOW]

    def test_temporal_leakage_later_wave_predictor(self, registry):
        # First-follow-up predictor against a base-year outcome must be rejected.
        spec = make_spec(
            predictors=["X2TXMTSCOR", "X1SES", "S1HRSHOMEWK"],
            outcome="X1TXMTSCOR",
            outcome_wave="base_year",
            task=TaskType.REGRESSION,
        )
        violations = validate_spec(spec, registry)
        assert ViolationCode.TEMPORAL_LEAKAGE in codes(violations)
        leaky = [v for v in violations if v.code is ViolationCode.TEMPORAL_LEAKAGE]
        assert {v.variable for v in leaky} >= {"X2TXMTSCOR"}

    def test_same_wave_predictor_is_leakage(self, registry):
        spec = make_spec(predictors=["X1TXMTSCOR", "X1SES", "X4PSLAST"])
        violations = validate_spec(spec, registry)
        assert any(
            v.code is ViolationCode.TEMPORAL_LEAKAGE and v.variable == "X4PSLAST"
            for v in violations
        )

    def test_excluded_predictor(self, registry):
        spec = make_spec(predictors=["W1STUDENT", "X1SES", "X1TXMTSCOR"])
        violations = validate_spec(spec, registry)
        assert any(
            v.code is ViolationCode.EXCLUDED_VARIABLE and v.variable == "W1STUDENT"
            for v in violations
        )

    def test_unknown_outcome(self, registry):
        spec = make_spec(outcome="X4NOTREAL")
        violations = validate_spec(spec, registry)
        assert ViolationCode.UNKNOWN_OUTCOME in codes(violations)

    @pytest.mark.parametrize(
        "count,violating",
        [(2, True), (3, False), (30, False), (31, True)],
    )
    def test_predictor_count_window(self, registry, count, violating):
        # Pad with distinct unknown-but-wave-valid names; their other
        # violations (rationale) are irrelevant to the count gate.
        base = ["X1TXMTSCOR", "X1SES"]
        extras = [f"S1PAD{i:02d}" for i in range(count - len(base))]
        spec = make_spec(predictors=(base + extras)[:count])
        present = ViolationCode.PREDICTOR_COUNT_OUT_OF_RANGE in codes(
            validate_spec(spec, registry)
        )
        assert present is violating

    def test_outcome_as_predictor_is_duplicate(self, registry):
        spec = make_spec(predictors=["X4EVRATNDCLG", "X1SES", "X1TXMTSCOR"])
        violations = validate_spec(spec, registry)
        assert any(
            v.code is ViolationCode.DUPLICATE_OUTCOME and v.variable == "X4EVRATNDCLG"
            for v in violations
        )

    def test_repeated_predictor_is_duplicate(self, registry):
        spec = make_spec(predictors=["X1SES", "X1SES", "X1TXMTSCOR"])
        assert ViolationCode.DUPLICATE_OUTCOME in codes(validate_spec(spec, registry))

    def test_tier2_needs_long_rationale(self, registry):
        short = PredictorChoice(name="S2ABSENT", rationale="short reason")
        spec = make_spec(predictors=[short, "X1SES", "X1TXMTSCOR"])
        violations = validate_spec(spec, registry)
        assert any(
            v.code is ViolationCode.MISSING_RATIONALE and v.variable == "S2ABSENT"
            for v in violations
        )
        long = PredictorChoice(name="S2ABSENT", rationale="x" * 80)
        spec_ok = make_spec(predictors=[long, "X1SES", "X1TXMTSCOR"])
        assert ViolationCode.MISSING_RATIONALE not in codes(validate_spec(spec_ok, registry))

    def test_pitfall_pair_flags_near_duplicate_composite(self, registry):
        spec = make_spec(
            predictors=["X3TGPAMAT", "X1SES", "X1TXMTSCOR"],
            outcome="X3TGPATOT",
            outcome_wave="second_follow_up",
            task=TaskType.REGRESSION,
        )
        violations = validate_spec(spec, registry)
        assert any(
            v.code is ViolationCode.TEMPORAL_LEAKAGE
            and v.variable == "X3TGPAMAT"
            and "near-duplicate" in v.detail
            for v in violations
        )

    def test_excluded_subgroup_dimension(self, registry):
        spec = make_spec(subgroups=("STU_ID",))
        violations = validate_spec(spec, registry)
        assert any(
            v.code is ViolationCode.EXCLUDED_VARIABLE and v.variable == "STU_ID"
            for v in violations
        )

    def test_violations_are_deterministically_sorted(self, registry):
        spec = make_spec(
            predictors=["W1STUDENT", "X4PSLAST", "X1SES"], novelty=1
        )
        first = validate_spec(spec, registry)
        second = validate_spec(spec, registry)
        assert first == second
        keys = [(v.code.value, v.variable or "") for v in first]
        assert keys == sorted(keys)

    def test_adding_violating_predictor_never_removes_violations(self, registry):
        base = make_spec(predictors=["X1TXMTSCOR", "X1SES", "S1HRSHOMEWK"], novelty=2)
        before = set(validate_spec(base, registry))
        widened = make_spec(
            predictors=["X1TXMTSCOR", "X1SES", "S1HRSHOMEWK", "W1STUDENT"], novelty=2
        )
        after = set(validate_spec(widened, registry))
        assert before <= after
        assert any(v.code is ViolationCode.EXCLUDED_VARIABLE for v in after - before)


class TestParseSpec:
    def golden_doc(self) -> dict:
        return json.loads(json.dumps(make_spec().to_dict()))

    def test_golden_round_trip(self):
        doc = self.golden_doc()
        spec = spec_from_dict(doc)
        assert spec == make_spec()

    def test_parse_accepts_wrapped_form(self):
        wrapped = json.dumps({"research_spec": self.golden_doc(), "literature_context": {}})
        spec = parse_spec(wrapped)
        assert spec.outcome.name == "X4EVRATNDCLG"

    def test_missing_novelty_named_in_error(self):
        doc = self.golden_doc()
        del doc["novelty_score"]
        with pytest.raises(SchemaError) as excinfo:
            spec_from_dict(doc)
        assert "novelty_score" in str(excinfo.value)

    def test_novelty_out_of_range(self):
        doc = self.golden_doc()
        doc["novelty_score"] = 0
        with pytest.raises(SchemaError):
            spec_from_dict(doc)

    def test_error_lists_every_problem(self):
        doc = self.golden_doc()
        del doc["novelty_score"]
        del doc["population"]
        doc["predictors"] = []
        with pytest.raises(SchemaError) as excinfo:
            spec_from_dict(doc)
        message = str(excinfo.value)
        assert "novelty_score" in message
        assert "population" in message
        assert "predictors" in message

    def test_bad_task_rejected(self):
        doc = self.golden_doc()
        doc["outcome"]["task"] = "clustering"
        with pytest.raises(SchemaError):
            spec_from_dict(doc)

    def test_invalid_json_is_schema_error(self):
        with pytest.raises(SchemaError):
            parse_spec("{broken")
