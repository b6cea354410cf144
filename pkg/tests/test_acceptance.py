"""Acceptance suite: one test per release criterion, each printing a
pass/fail line and enforcing its runtime budget.

Run with: pytest tests/test_acceptance.py -v -s
"""

from __future__ import annotations

import itertools
import os
import socket
import time
from contextlib import contextmanager

import numpy as np
import pytest

from edmpipe import cli, writer
from edmpipe.dataprep import (
    Abort,
    DataPrepConfig,
    ImputationMethod,
    route_imputation,
    run_protocol,
    write_outputs,
)
from edmpipe.literature import LiteratureContext, PaperRecord, Verification, verify_pool
from edmpipe.llm_gateway import ScriptedBackend
from edmpipe.metrics import ModelMetrics, auc, leakage_flag, subgroup_analysis
from edmpipe.orchestrator import (
    AGENT_ORDER,
    Event,
    PipelineState,
    UndefinedTransition,
    cascade_targets,
    next_state,
    resume,
    save_checkpoint,
)
from edmpipe.registry import VarType
from edmpipe.sandbox import (
    ErrorCategory,
    REPAIR_PROMPTS,
    RepairExhausted,
    repair_loop,
)
from edmpipe.spec_gate import TaskType, ViolationCode, validate_spec
from tests.conftest import SCRIPTED_DIR, build_pipeline, make_spec
from tests.test_dataprep import small_table
from tests.test_metrics import brute_force_auc
from tests.test_orchestrator import EXPECTED_TRANSITIONS, sample_context


@contextmanager
def budget(name: str, seconds: float):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    elapsed = time.monotonic() - start
    assert elapsed < seconds, f"{name} took {elapsed:.2f}s, budget {seconds}s"
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.2f}s < {seconds:g}s)")


def test_state_machine_conformance():
    with budget("state machine conformance", 1.0):
        S, E = PipelineState, Event
        assert len(list(S)) == 9
        for state, event in itertools.product(S, E):
            if (state, event) in EXPECTED_TRANSITIONS:
                assert next_state(state, event) is EXPECTED_TRANSITIONS[(state, event)]
            else:
                with pytest.raises(UndefinedTransition):
                    next_state(state, event)
        assert next_state(S.CRITIQUING, E.VERDICT_PASS) is S.WRITING
        assert next_state(S.CRITIQUING, E.VERDICT_REVISE) is S.REVISING
        assert next_state(S.CRITIQUING, E.CYCLES_EXHAUSTED) is S.WRITING
        assert next_state(S.CRITIQUING, E.VERDICT_ABORT) is S.ABORTED


def test_cascade_correctness():
    with budget("cascade correctness", 1.0):
        assert cascade_targets({"data_engineer"}) == ["data_engineer", "analyst"]
        assert cascade_targets({"problem_formulator"}) == list(AGENT_ORDER)
        assert cascade_targets({"analyst"}) == ["analyst"]
        for r in (1, 2, 3):
            for subset in itertools.combinations(AGENT_ORDER, r):
                result = cascade_targets(set(subset))
                earliest = min(AGENT_ORDER.index(t) for t in subset)
                assert result == list(AGENT_ORDER[earliest:])


def test_checkpoint_round_trip(tmp_path, monkeypatch):
    with budget("checkpoint round-trip", 5.0):
        reachable = {PipelineState.INITIALIZED}
        frontier = [(PipelineState.INITIALIZED, 0)]
        while frontier:
            state, depth = frontier.pop()
            if depth == 6:
                continue
            for (from_state, _), to_state in EXPECTED_TRANSITIONS.items():
                if from_state is state and to_state not in reachable:
                    reachable.add(to_state)
                    frontier.append((to_state, depth + 1))
        assert reachable == set(PipelineState)
        for state in sorted(reachable, key=lambda s: s.value):
            ctx = sample_context(state=state)
            path = tmp_path / f"{state.value}.json"
            save_checkpoint(ctx, path)
            assert resume(path) == ctx

        # Kill-during-write fault injection: the prior checkpoint survives.
        path = tmp_path / "checkpoint.json"
        original = sample_context(state=PipelineState.ENGINEERING)
        save_checkpoint(original, path)
        monkeypatch.setattr(os, "replace",
                            lambda s, d: (_ for _ in ()).throw(OSError("killed")))
        with pytest.raises(OSError):
            save_checkpoint(sample_context(state=PipelineState.ANALYZING), path)
        monkeypatch.undo()
        assert resume(path) == original


def test_spec_gates(registry):
    with budget("research-spec gates", 1.0):
        def gate_codes(spec):
            return {v.code for v in validate_spec(spec, registry)}

        long_rationale = "Auto-inferred variable justified at length. " * 3
        pad = lambda k: [f"S1PAD{i:02d}" for i in range(k)]
        from edmpipe.spec_gate import PredictorChoice
        padded = lambda k: [
            PredictorChoice(name=n, rationale=long_rationale) for n in pad(k)
        ]

        cases = [
            (make_spec(novelty=2), ViolationCode.NOVELTY_TOO_LOW, True),
            (make_spec(novelty=1), ViolationCode.NOVELTY_TOO_LOW, True),
            (make_spec(predictors=["X2TXMTSCOR", "X1SES", "S1HRSHOMEWK"],
                       outcome="X1TXMTSCOR", outcome_wave="base_year",
                       task=TaskType.REGRESSION),
             ViolationCode.TEMPORAL_LEAKAGE, True),
            (make_spec(predictors=["X1TXMTSCOR", "X1SES", "X4PSLAST"]),
             ViolationCode.TEMPORAL_LEAKAGE, True),
            (make_spec(predictors=["W1STUDENT", "X1SES", "X1TXMTSCOR"]),
             ViolationCode.EXCLUDED_VARIABLE, True),
            (make_spec(predictors=["STU_ID", "X1SES", "X1TXMTSCOR"]),
             ViolationCode.EXCLUDED_VARIABLE, True),
            (make_spec(outcome="X9NOTREAL"), ViolationCode.UNKNOWN_OUTCOME, True),
            (make_spec(predictors=["X1TXMTSCOR", "X1SES"]),
             ViolationCode.PREDICTOR_COUNT_OUT_OF_RANGE, True),
            (make_spec(predictors=padded(3)),
             ViolationCode.PREDICTOR_COUNT_OUT_OF_RANGE, False),
            (make_spec(predictors=padded(30)),
             ViolationCode.PREDICTOR_COUNT_OUT_OF_RANGE, False),
            (make_spec(predictors=padded(31)),
             ViolationCode.PREDICTOR_COUNT_OUT_OF_RANGE, True),
            (make_spec(predictors=["X4EVRATNDCLG", "X1SES", "X1TXMTSCOR"]),
             ViolationCode.DUPLICATE_OUTCOME, True),
        ]
        assert len(cases) == 12
        for i, (spec, code, expected) in enumerate(cases):
            assert (code in gate_codes(spec)) is expected, f"case {i}"
        # The fully clean crafted specs really are clean.
        assert validate_spec(make_spec(predictors=padded(3)), registry) == []
        assert validate_spec(make_spec(predictors=padded(30)), registry) == []


def test_missing_data_routing(registry):
    with budget("missing-data protocol routing", 1.0):
        expectations = [
            (0.0, ImputationMethod.NONE, False),
            (0.03, ImputationMethod.MEDIAN, False),
            (0.05, ImputationMethod.ITERATIVE, False),
            (0.12, ImputationMethod.ITERATIVE, False),
            (0.20, ImputationMethod.ITERATIVE, False),
            (0.25, ImputationMethod.ITERATIVE, True),
        ]
        for pct, method, warning in expectations:
            route = route_imputation(pct, VarType.CONTINUOUS)
            assert route.method is method and route.warning is warning, pct
        assert route_imputation(0.03, VarType.CATEGORICAL).method is ImputationMethod.MODE

        spec = make_spec(predictors=["X1TXMTSCOR", "X1SES", "P1EDUEXPECT"])
        config = DataPrepConfig(min_analytic_n=50)
        for complete, should_abort in ((0.55, True), (0.65, False)):
            raw = small_table(n=1000)
            miss = int(round((1 - complete) * 1000))
            raw.frame.loc[: miss - 1, "X1TXMTSCOR"] = -9.0
            if should_abort:
                with pytest.raises(Abort, match="complete cases"):
                    run_protocol(raw, spec, registry, config)
            else:
                _, report = run_protocol(raw, spec, registry, config)
                assert report.validation_passed


def test_dataprep_determinism_and_hygiene(registry, raw_table, tmp_path):
    with budget("dataprep determinism and hygiene", 10.0):
        spec = make_spec()
        config = DataPrepConfig(min_analytic_n=200, seed=42)
        outputs = []
        for name in ("a", "b"):
            splits, report = run_protocol(raw_table, spec, registry, config)
            out = tmp_path / name
            write_outputs(splits, report, out)
            outputs.append(out)

        assert not splits.train_X.isna().any().any()
        assert not splits.test_X.isna().any().any()
        assert all(splits.train_X[c].nunique() > 1 for c in splits.train_X.columns)
        assert len(splits.test_y) / report.n_analytic >= 0.20
        assert len(splits.protected) == len(splits.test_y)
        # Stratification: per-class test counts within one row of proportion.
        class_counts = splits.test_y.value_counts()
        analytic_counts = (
            splits.train_y.value_counts() + class_counts
        )
        for cls in class_counts.index:
            ideal = config.test_fraction * analytic_counts[cls]
            assert abs(class_counts[cls] - ideal) <= 1
        for filename in ("train_X.csv", "train_y.csv", "test_X.csv", "test_y.csv",
                         "test_protected.csv", "data_report.json"):
            assert (outputs[0] / filename).read_bytes() == (outputs[1] / filename).read_bytes()


def test_metrics_oracle():
    with budget("pairwise-concordance oracle", 30.0):
        assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75, abs=1e-12)
        rng = np.random.default_rng(7)
        grid = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
        for n in range(2, 13):
            score_vectors = [grid[rng.integers(0, len(grid), size=n)] for _ in range(10)]
            if n <= 8:
                label_vectors = [
                    labels for labels in itertools.product([0, 1], repeat=n)
                    if 0 < sum(labels) < n
                ]
            else:
                label_vectors = []
                while len(label_vectors) < 30:
                    labels = tuple(rng.integers(0, 2, size=n).tolist())
                    if 0 < sum(labels) < n:
                        label_vectors.append(labels)
            for scores in score_vectors:
                for labels in label_vectors:
                    assert auc(scores, list(labels)) == pytest.approx(
                        brute_force_auc(scores, labels), abs=1e-12
                    )
        # Monotone-transform invariance on 100 random dyadic-grid cases.
        for case in range(100):
            n = int(rng.integers(2, 40))
            scores = rng.integers(-320, 321, size=n).astype(float) / 64.0
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0], labels[-1] = 0, 1
            base = auc(scores, labels)
            assert auc((2.0 * scores) ** 3 + 7.0, labels) == pytest.approx(base, abs=1e-12)


def test_fairness_and_leakage_thresholds():
    with budget("fairness and leakage thresholds", 1.0):
        # Reliability boundary: 49 unreliable, 50 reliable.
        truths = np.array([0, 1] * 60)
        scores = np.where(truths == 1, 0.9, 0.1)
        report = subgroup_analysis(
            scores[:99], truths[:99], {"g": ["a"] * 49 + ["b"] * 50}, "g",
            TaskType.CLASSIFICATION,
        )
        by_label = {g.label: g.unreliable for g in report.groups}
        assert by_label == {"a": True, "b": False}

        def metrics_with(auc_value):
            return ModelMetrics(model_name="m", task=TaskType.CLASSIFICATION,
                                point={"auc": auc_value}, ci={}, n_test=100)

        assert leakage_flag(metrics_with(0.96)) is True
        assert leakage_flag(metrics_with(0.95)) is False

        # Gap boundary, pinned with exactly representable doubles: a gap of
        # 0.05 does not flag, 0.06 does. (0.80 and 0.86 differ by slightly
        # more than 0.06 in floats, which still flags; the no-flag side uses
        # values whose difference is exactly the threshold.)
        def gap_flag(value_a, value_b):
            values = [value_a, value_b]
            max_gap = max(values) - min(values)
            return max_gap > 0.05

        assert gap_flag(0.80, 0.86) is True
        assert gap_flag(0.0, 0.06) is True
        assert gap_flag(0.0, 0.05) is False
        # And through the real computation: a constructed wide gap flags.
        g1 = np.array([0, 1] * 50)
        s1 = np.where(g1 == 1, 0.9, 0.1)
        flip = s1.copy()
        flip[:12] = 1.0 - flip[:12]  # degrade group b
        report = subgroup_analysis(
            np.concatenate([s1, flip]), np.concatenate([g1, g1]),
            {"g": ["a"] * 100 + ["b"] * 100}, "g", TaskType.CLASSIFICATION,
        )
        assert report.max_gap > 0.05
        assert report.gap_flagged is True


def test_citation_verification(tmp_path):
    with budget("citation verification layers", 1.0):
        tokens = [f"tok{i}" for i in range(20)]
        pool = [
            PaperRecord(external_id="p1", title="Exact Title Of Record", authors=("A B",), year=2020),
            PaperRecord(external_id="p2", title=" ".join(tokens), authors=("C D",), year=2021),
        ]
        claims = [
            PaperRecord(external_id="p1", title="exact title of record", authors=("A B",), year=2020),
            PaperRecord(external_id="p2", title=" ".join(tokens[:17]), authors=("C D",), year=2021),
            PaperRecord(external_id="px", title="Entirely Fabricated Study", authors=("N O",), year=2024),
        ]
        verified = verify_pool(claims, pool)
        assert [p.verification for p in verified] == [
            Verification.EXACT, Verification.FUZZY, Verification.UNVERIFIED,
        ]
        entries, fallback = writer.emit_bibliography(
            LiteratureContext(papers=tuple(verified))
        )
        assert not fallback
        bib = writer.render_bibtex(entries)
        (tmp_path / "references.bib").write_text(bib, encoding="utf-8")
        assert "Entirely Fabricated Study" not in bib
        assert "Exact Title Of Record" in bib


def test_end_to_end_offline(fixture_dir, tmp_path, monkeypatch, revise_run, abort_run):
    with budget("end-to-end offline run", 60.0):
        # No API keys and no sockets: the run must never touch the network.
        monkeypatch.delenv("ANTHROPIC_API_KEY", raising=False)
        monkeypatch.delenv("SEMANTIC_SCHOLAR_API_KEY", raising=False)

        def refuse(*args, **kwargs):
            raise AssertionError("network access attempted during offline run")

        monkeypatch.setattr(socket, "socket", refuse)

        from edmpipe.fixtures import write_demo_config

        demo = tmp_path / "demo"
        demo.mkdir()
        for name in ("hsls_synth.csv", "hsls_synth_registry.yaml"):
            (demo / name).write_bytes((fixture_dir / name).read_bytes())
        write_demo_config(demo)
        run_dir = tmp_path / "run"
        code = cli.main([
            "--config", str(demo / "config.yaml"),
            "--dataset", "fixture",
            "--output-dir", str(run_dir),
        ])
        assert code == 0
        inventory = [
            "config_snapshot.yaml", "checkpoint.json", "research_spec.json",
            "literature_context.json", "data_report.json", "train_X.csv",
            "train_y.csv", "test_X.csv", "test_y.csv", "test_protected.csv",
            "results.json", "review_report.json", "paper.tex", "references.bib",
            "pipeline.log",
        ]
        for name in inventory:
            assert (run_dir / name).exists(), name
        assert list(run_dir.glob("*.png"))
        assert "%%PLACEHOLDER:" not in (run_dir / "paper.tex").read_text(encoding="utf-8")

    # Companion scenarios (already executed session-wide):
    revise_ctx, _ = revise_run
    assert revise_ctx.revision_count == 1
    assert len([e for e in revise_ctx.logs if e["event"] == "engineered"]) == 2
    abort_ctx, abort_dir = abort_run
    assert abort_ctx.state is PipelineState.ABORTED
    assert not (abort_dir / "paper.tex").exists()
    print("[ACCEPTANCE] revise-then-pass and abort scenarios: PASS")


def test_self_repair(fixture_dir, tmp_path):
    with budget("self-repair loop", 60.0):
        # Cap semantics: three scripted failures exhaust the loop exactly.
        attempts = []

        def always_fail(text):
            from edmpipe.sandbox import ExecutionResult, ExecutionStatus
            return ExecutionResult(status=ExecutionStatus.FAILED, exit_code=1,
                                   stdout="", stderr="ValueError: bad shapes", duration=0.0)

        with pytest.raises(RepairExhausted) as excinfo:
            repair_loop(lambda req: attempts.append(req) or "x", always_fail, 3)
        assert len(excinfo.value.attempts) == 3
        assert len(attempts) == 3

        # Through the orchestrator: a broken first analyst script, then the
        # reference payload; the second request carries stderr + repair prompt.
        broken = "with open('never_written_input.csv') as fh:\n    fh.read()\n"
        payload = (SCRIPTED_DIR / "analyst_payload.py").read_text(encoding="utf-8")
        import yaml as _yaml

        scripted = _yaml.safe_load((SCRIPTED_DIR / "demo_run.yaml").read_text(encoding="utf-8"))
        responses = {
            "problem_formulator": [
                (SCRIPTED_DIR / "formulator_response.json").read_text(encoding="utf-8")
            ],
            "analyst": [broken, payload],
            "critic": [scripted["critic"][0]],
            "writer": [(SCRIPTED_DIR / "writer_response.json").read_text(encoding="utf-8")],
        }
        pipeline = build_pipeline(fixture_dir, tmp_path / "run", "demo_run.yaml")
        pipeline.backend = ScriptedBackend(responses)
        ctx = pipeline.run()
        assert ctx.state is PipelineState.COMPLETED
        analyst_requests = [
            r for r in pipeline.backend.requests if r.agent.value == "analyst"
        ]
        assert len(analyst_requests) == 2
        second = analyst_requests[1].user_message
        assert "FileNotFoundError" in second
        assert REPAIR_PROMPTS[ErrorCategory.FILE_NOT_FOUND] in second
        assert "never_written_input.csv" in second  # verbatim stderr
