from __future__ import annotations

from pathlib import Path

import pytest

from edmpipe.dataprep import RawTable, load_raw_table
from edmpipe.fixtures import gen_fixture
from edmpipe.registry import Registry, load_registry
from edmpipe.spec_gate import OutcomeSpec, PredictorChoice, ResearchSpec, TaskType

SCRIPTED_DIR = Path(__file__).resolve().parents[1] / "src" / "edmpipe" / "resources" / "scripted"


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("fixture")
    gen_fixture(rows=1000, seed=42, out_dir=out)
    return out


@pytest.fixture(scope="session")
def registry(fixture_dir) -> Registry:
    return load_registry(fixture_dir / "hsls_synth_registry.yaml")


@pytest.fixture(scope="session")
def raw_table(fixture_dir) -> RawTable:
    return load_raw_table(fixture_dir / "hsls_synth.csv")


def make_spec(
    predictors=None,
    outcome="X4EVRATNDCLG",
    outcome_wave="update_panel",
    task=TaskType.CLASSIFICATION,
    novelty=4,
    subgroups=("X1SEX", "X1RACE"),
    structural_missingness=False,
) -> ResearchSpec:
    if predictors is None:
        predictors = [
            "X1TXMTSCOR",
            "X1SES",
            "X1SCHOOLBEL",
            "S1HRSHOMEWK",
            "S1SCIINT",
            "P1EDUEXPECT",
        ]
    choices = tuple(
        p if isinstance(p, PredictorChoice) else PredictorChoice(
            name=p, rationale="Baseline context is an established precursor of the outcome."
        )
        for p in predictors
    )
    return ResearchSpec(
        research_question="How well do base-year factors predict the outcome?",
        outcome=OutcomeSpec(name=outcome, wave=outcome_wave, task=task),
        predictors=choices,
        population="base-year cohort",
        subgroup_dims=tuple(subgroups),
        expected_contribution="an audited baseline",
        limitations=("correlational only",),
        novelty_score=novelty,
        structural_missingness=structural_missingness,
    )


@pytest.fixture()
def happy_spec() -> ResearchSpec:
    return make_spec()


def build_pipeline(fixture_dir: Path, run_dir: Path, scripted_name: str, **overrides):
    from edmpipe.config import RunConfig
    from edmpipe.orchestrator import Pipeline

    settings = dict(
        data_path=str(fixture_dir / "hsls_synth.csv"),
        registry_path=str(fixture_dir / "hsls_synth_registry.yaml"),
        min_analytic_n=200,
        bootstrap_resamples=300,
        scripted_file=str(SCRIPTED_DIR / scripted_name),
        literature_mode="fixture",
        literature_fixture=str(SCRIPTED_DIR / "literature_fixture.json"),
    )
    settings.update(overrides)
    return Pipeline(RunConfig(**settings), run_dir)


def run_scripted(fixture_dir: Path, run_dir: Path, scripted_name: str, **overrides):
    pipeline = build_pipeline(fixture_dir, run_dir, scripted_name, **overrides)
    return pipeline.run()


@pytest.fixture(scope="session")
def happy_run(fixture_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("happy_run")
    return run_scripted(fixture_dir, run_dir, "demo_run.yaml"), run_dir


@pytest.fixture(scope="session")
def happy_run_repeat(fixture_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("happy_run_repeat")
    return run_scripted(fixture_dir, run_dir, "demo_run.yaml"), run_dir


@pytest.fixture(scope="session")
def revise_run(fixture_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("revise_run")
    return run_scripted(fixture_dir, run_dir, "revise_then_pass.yaml"), run_dir


@pytest.fixture(scope="session")
def abort_run(fixture_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("abort_run")
    return run_scripted(fixture_dir, run_dir, "abort_run.yaml"), run_dir


@pytest.fixture(scope="session")
def unverified_run(fixture_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("unverified_run")
    return run_scripted(fixture_dir, run_dir, "unverified_run.yaml"), run_dir
