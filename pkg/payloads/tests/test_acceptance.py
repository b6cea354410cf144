"""Payload acceptance: agreement with the engine, schema validation, and
failure-taxonomy coverage, inside the stated runtime budget.

Run with: pytest tests/test_acceptance.py -v -s
"""

from __future__ import annotations

import json
import time

import pandas as pd

from edmpipe.metrics import ResultsReport, auc, regression_metrics, validate_results
from edmpipe.sandbox import ErrorCategory, ExecutionStatus, classify_error, execute

from edmpayloads import (
    DESK_BATTERY,
    DESK_BATTERY_REGRESSION,
    FAILING_MODES,
    failing_manifest,
    failing_payload,
    write_payload,
)


def test_payload_agreement(classification_run, regression_run, tmp_path):
    start = time.monotonic()

    # Engine recomputation of payload-reported metrics from its own
    # prediction files, for both tasks, within 1e-9.
    cls_dir, cls_manifest, cls_result, cls_elapsed = classification_run
    assert cls_result.status is ExecutionStatus.OK
    cls_report = ResultsReport.from_dict(
        json.loads((cls_dir / "results.json").read_text(encoding="utf-8"))
    )
    assert validate_results(cls_report, DESK_BATTERY) == []
    for model in cls_report.per_model:
        preds = pd.read_csv(cls_dir / model.prediction_file)
        assert abs(auc(preds["score"], preds["y_true"]) - model.point["auc"]) < 1e-9
        accuracy = float((preds["y_true"] == preds["label"]).mean())
        assert abs(accuracy - model.point["accuracy"]) < 1e-9

    reg_dir, _, reg_result, reg_elapsed = regression_run
    assert reg_result.status is ExecutionStatus.OK
    reg_report = ResultsReport.from_dict(
        json.loads((reg_dir / "results.json").read_text(encoding="utf-8"))
    )
    assert validate_results(reg_report, DESK_BATTERY_REGRESSION) == []
    for model in reg_report.per_model:
        preds = pd.read_csv(reg_dir / model.prediction_file)
        engine = regression_metrics(preds["y_true"], preds["y_pred"])
        assert abs(engine["rmse"] - model.point["rmse"]) < 1e-9

    # Every failing payload lands in its intended taxonomy class.
    for mode in FAILING_MODES:
        workdir = tmp_path / mode
        workdir.mkdir()
        script = write_payload(failing_payload(mode), workdir, failing_manifest(mode))
        result = execute(script, workdir, timeout=30)
        assert result.exit_code != 0, mode
        assert classify_error(result.stderr).category is ErrorCategory(mode), mode

    total = (time.monotonic() - start) + cls_elapsed + reg_elapsed
    assert total < 120.0, f"payload agreement took {total:.1f}s, budget 120s"
    print(f"[ACCEPTANCE] payload agreement: PASS ({total:.1f}s < 120s)")
