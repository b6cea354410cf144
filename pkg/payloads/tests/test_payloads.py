from __future__ import annotations

import json

import pandas as pd
import pytest

from edmpipe.metrics import ResultsReport, auc, regression_metrics, validate_results
from edmpipe.sandbox import (
    ErrorCategory,
    ExecutionStatus,
    classify_error,
    execute,
    lint_network,
)
from edmpipe.sandbox import SHAP_TIMEOUT_SENTINEL as ENGINE_SENTINEL

from edmpayloads import (
    DESK_BATTERY,
    DESK_BATTERY_REGRESSION,
    FAILING_MODES,
    FULL_BATTERY,
    SHAP_TIMEOUT_SENTINEL,
    failing_manifest,
    failing_payload,
    reference_analysis_script,
    reference_manifest,
    write_payload,
)


def load_report(workdir) -> ResultsReport:
    return ResultsReport.from_dict(
        json.loads((workdir / "results.json").read_text(encoding="utf-8"))
    )


class TestReferenceClassification:
    def test_runs_clean(self, classification_run):
        _, _, result, _ = classification_run
        assert result.status is ExecutionStatus.OK
        assert result.exit_code == 0

    def test_every_manifest_artifact_produced(self, classification_run):
        workdir, manifest, result, _ = classification_run
        for artifact in manifest.expected_artifacts:
            assert (workdir / artifact).exists(), artifact
            assert artifact in result.artifacts

    def test_results_pass_engine_validation(self, classification_run):
        workdir, _, _, _ = classification_run
        assert validate_results(load_report(workdir), DESK_BATTERY) == []

    def test_engine_recomputation_agrees(self, classification_run):
        workdir, _, _, _ = classification_run
        report = load_report(workdir)
        for model in report.per_model:
            preds = pd.read_csv(workdir / model.prediction_file)
            assert abs(auc(preds["score"], preds["y_true"]) - model.point["auc"]) < 1e-9
            accuracy = float((preds["y_true"] == preds["label"]).mean())
            assert abs(accuracy - model.point["accuracy"]) < 1e-9

    def test_best_model_matches_engine_rule(self, classification_run):
        from edmpipe.metrics import best_model_name
        from edmpipe.spec_gate import TaskType

        workdir, _, _, _ = classification_run
        report = load_report(workdir)
        assert report.best_model == best_model_name(
            report.per_model, TaskType.CLASSIFICATION, DESK_BATTERY
        )

    def test_subgroups_follow_engine_thresholds(self, classification_run):
        workdir, _, _, _ = classification_run
        report = load_report(workdir)
        assert {s.attribute for s in report.subgroups} == {"X1SEX", "X1RACE"}
        for subgroup in report.subgroups:
            for group in subgroup.groups:
                assert group.unreliable == (group.n < 50 or group.value is None)
            assert subgroup.gap_flagged == (subgroup.max_gap > 0.05)

    def test_stacking_has_no_importance_but_rankings_present(self, classification_run):
        workdir, _, _, _ = classification_run
        report = load_report(workdir)
        stacking = report.model("stacking_ensemble")
        assert stacking is not None and stacking.importance == ()
        assert report.importance_rankings


class TestReferenceRegression:
    def test_runs_clean_with_artifacts(self, regression_run):
        workdir, manifest, result, _ = regression_run
        assert result.status is ExecutionStatus.OK
        for artifact in manifest.expected_artifacts:
            assert (workdir / artifact).exists(), artifact

    def test_results_pass_engine_validation(self, regression_run):
        workdir, _, _, _ = regression_run
        assert validate_results(load_report(workdir), DESK_BATTERY_REGRESSION) == []

    def test_engine_rmse_agrees(self, regression_run):
        workdir, _, _, _ = regression_run
        report = load_report(workdir)
        for model in report.per_model:
            preds = pd.read_csv(workdir / model.prediction_file)
            engine = regression_metrics(preds["y_true"], preds["y_pred"])
            assert abs(engine["rmse"] - model.point["rmse"]) < 1e-9
            assert abs(engine["mae"] - model.point["mae"]) < 1e-9

    def test_best_model_is_min_rmse(self, regression_run):
        workdir, _, _, _ = regression_run
        report = load_report(workdir)
        best = min(report.per_model, key=lambda m: m.point["rmse"])
        assert report.best_model == best.model_name


class TestGenerator:
    def test_unknown_task_refused(self):
        with pytest.raises(ValueError):
            reference_analysis_script(task="clustering")

    def test_empty_battery_refused(self):
        with pytest.raises(ValueError):
            reference_analysis_script(battery=[])

    def test_unknown_failure_mode_refused(self):
        with pytest.raises(ValueError, match="unknown failure mode"):
            failing_payload("CosmicRayError")

    def test_scripts_never_touch_the_network(self):
        scripts = [
            reference_analysis_script("classification", FULL_BATTERY),
            reference_analysis_script("regression"),
        ] + [failing_payload(mode) for mode in FAILING_MODES]
        for script in scripts:
            assert lint_network(script) == []

    def test_sentinel_constant_matches_engine_protocol(self):
        assert SHAP_TIMEOUT_SENTINEL == ENGINE_SENTINEL

    def test_failing_modes_cover_engine_taxonomy(self):
        assert set(FAILING_MODES) == {c.value for c in ErrorCategory}

    def test_every_battery_member_renders(self):
        text = reference_analysis_script("classification", FULL_BATTERY)
        for name in FULL_BATTERY:
            assert name in text


class TestFullBattery:
    def test_six_model_run_validates_against_six_model_expectation(
        self, tmp_path_factory, fixture_data
    ):
        from tests.conftest import prepare_and_run

        workdir, manifest, result, _ = prepare_and_run(
            tmp_path_factory, fixture_data, "classification", FULL_BATTERY, "full_run"
        )
        assert result.status is ExecutionStatus.OK, result.stderr[-2000:]
        report = load_report(workdir)
        assert [m.model_name for m in report.per_model] == list(FULL_BATTERY)
        assert validate_results(report, FULL_BATTERY) == []
        for artifact in manifest.expected_artifacts:
            assert (workdir / artifact).exists(), artifact


class TestFailingPayloads:
    @pytest.mark.parametrize("mode", FAILING_MODES)
    def test_each_mode_classifies_into_its_class(self, mode, tmp_path):
        manifest = failing_manifest(mode)
        script = write_payload(failing_payload(mode), tmp_path, manifest)
        result = execute(script, tmp_path, timeout=30)
        assert result.status is ExecutionStatus.FAILED
        assert result.exit_code != 0
        classified = classify_error(result.stderr)
        assert classified.category is ErrorCategory(mode)

    def test_missing_input_file_classifies_as_file_not_found(self, tmp_path):
        # The reference payload itself, run without staged splits.
        manifest = reference_manifest("classification", DESK_BATTERY)
        script = write_payload(
            reference_analysis_script("classification", DESK_BATTERY), tmp_path, manifest
        )
        result = execute(script, tmp_path, timeout=60)
        assert result.status is ExecutionStatus.FAILED
        assert classify_error(result.stderr).category is ErrorCategory.FILE_NOT_FOUND

    def test_sentinel_mode_declares_its_sentinel(self):
        manifest = failing_manifest("SHAPTimeout")
        assert manifest.phase_sentinels == (SHAP_TIMEOUT_SENTINEL,)
