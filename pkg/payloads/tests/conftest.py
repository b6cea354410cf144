from __future__ import annotations

import time
from pathlib import Path

import pytest

from edmpipe.dataprep import DataPrepConfig, load_raw_table, run_protocol, write_outputs
from edmpipe.fixtures import gen_fixture
from edmpipe.registry import load_registry
from edmpipe.sandbox import execute
from edmpipe.spec_gate import OutcomeSpec, PredictorChoice, ResearchSpec, TaskType

from edmpayloads import (
    DESK_BATTERY,
    DESK_BATTERY_REGRESSION,
    reference_analysis_script,
    reference_manifest,
    write_payload,
)


def _spec(outcome: str, wave: str, task: TaskType, predictors, subgroups) -> ResearchSpec:
    return ResearchSpec(
        research_question="How well do base-year factors predict the outcome?",
        outcome=OutcomeSpec(name=outcome, wave=wave, task=task),
        predictors=tuple(
            PredictorChoice(name=n, rationale="Established precursor of the outcome.")
            for n in predictors
        ),
        population="base-year cohort",
        subgroup_dims=tuple(subgroups),
        expected_contribution="audited baseline",
        limitations=("correlational",),
        novelty_score=4,
    )


@pytest.fixture(scope="session")
def fixture_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixture")
    csv_path, registry_path = gen_fixture(rows=1000, seed=42, out_dir=out)
    return load_raw_table(csv_path), load_registry(registry_path)


def prepare_and_run(tmp_path_factory, fixture_data, task: str, battery, label: str):
    """Prepare splits with the engine, render the payload, run it in the
    sandbox; returns (workdir, manifest, ExecutionResult, elapsed seconds)."""
    raw, registry = fixture_data
    workdir = tmp_path_factory.mktemp(label)
    if task == "classification":
        spec = _spec(
            "X4EVRATNDCLG", "update_panel", TaskType.CLASSIFICATION,
            ["X1TXMTSCOR", "X1SES", "X1SCHOOLBEL", "S1HRSHOMEWK", "S1SCIINT", "P1EDUEXPECT"],
            ["X1SEX", "X1RACE"],
        )
    else:
        spec = _spec(
            "X3TGPATOT", "second_follow_up", TaskType.REGRESSION,
            ["X1TXMTSCOR", "X1SES", "X1SCHOOLBEL", "S1HRSHOMEWK"],
            ["X1SEX"],
        )
    splits, report = run_protocol(raw, spec, registry, DataPrepConfig(min_analytic_n=200))
    write_outputs(splits, report, workdir)
    manifest = reference_manifest(task, tuple(battery))
    script = write_payload(
        reference_analysis_script(task=task, battery=battery), workdir, manifest
    )
    start = time.monotonic()
    result = execute(script, workdir, timeout=300)
    elapsed = time.monotonic() - start
    return workdir, manifest, result, elapsed


@pytest.fixture(scope="session")
def classification_run(tmp_path_factory, fixture_data):
    return prepare_and_run(
        tmp_path_factory, fixture_data, "classification", DESK_BATTERY, "cls_run"
    )


@pytest.fixture(scope="session")
def regression_run(tmp_path_factory, fixture_data):
    return prepare_and_run(
        tmp_path_factory, fixture_data, "regression", DESK_BATTERY_REGRESSION, "reg_run"
    )
