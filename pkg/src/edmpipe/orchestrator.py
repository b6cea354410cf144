"""Finite-state orchestration of the research pipeline.

The state machine has nine states; forward transitions follow the agent
sequence (formulating, engineering, analyzing, critiquing), the review
verdict routes out of critiquing (pass to writing, revise to revising
while revision cycles remain, cycle exhaustion to writing with the
unverified flag, abort to aborted), revising loops back to critiquing,
and any stage error aborts. Everything else is an undefined transition
and raises.

A revise verdict names agents; the cascade re-runs the earliest named
agent in the dependency order and every agent downstream of it, because
later stages consume earlier outputs.

The whole pipeline context is serialized at every transition via an
atomic write, so an interrupted run resumes at its recorded state with
completed stages skipped.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional

import yaml

from . import critic as critic_mod
from . import writer as writer_mod
from .config import RunConfig
from .critic import ReviewReport, VerdictKind
from .dataprep import DataPrepConfig, DataReport, RawTable, load_raw_table, run_protocol, write_outputs
from .literature import (
    LiteratureClient,
    LiteratureContext,
    fixture_transport,
    verify_pool,
    _record_from_api,
)
from .llm_gateway import (
    Agent,
    Backend,
    CompletionRequest,
    LiveBackend,
    ScriptedBackend,
    Transcript,
    complete,
    load_agent_prompt,
    parse_fenced_json,
)
from .metrics import ResultsReport, validate_results
from .registry import Registry, load_registry
from .sandbox import Isolation, RepairRequest, execute, repair_loop
from .spec_gate import ResearchSpec, spec_from_dict, validate_spec

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.json"

AGENT_ORDER = ("problem_formulator", "data_engineer", "analyst")


class OrchestratorError(Exception):
    pass


class UndefinedTransition(OrchestratorError):
    pass


class EmptyTargets(OrchestratorError):
    pass


class CheckpointCorrupt(OrchestratorError):
    pass


class SpecRejected(OrchestratorError):
    def __init__(self, violations):
        self.violations = violations
        details = "; ".join(f"{v.code.value}({v.variable or '-'})" for v in violations)
        super().__init__(f"research spec rejected: {details}")


class AnalysisRejected(OrchestratorError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("analysis results rejected: " + "; ".join(violations))


class ReviewRejected(OrchestratorError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("review report rejected: " + "; ".join(violations))


class PipelineState(str, Enum):
    INITIALIZED = "initialized"
    FORMULATING = "formulating"
    ENGINEERING = "engineering"
    ANALYZING = "analyzing"
    CRITIQUING = "critiquing"
    REVISING = "revising"
    WRITING = "writing"
    COMPLETED = "completed"
    ABORTED = "aborted"


class Event(str, Enum):
    OK = "ok"
    ERROR = "error"
    VERDICT_PASS = "verdict_pass"
    VERDICT_REVISE = "verdict_revise"
    VERDICT_ABORT = "verdict_abort"
    CYCLES_EXHAUSTED = "cycles_exhausted"


_TRANSITIONS: dict[tuple[PipelineState, Event], PipelineState] = {
    (PipelineState.INITIALIZED, Event.OK): PipelineState.FORMULATING,
    (PipelineState.FORMULATING, Event.OK): PipelineState.ENGINEERING,
    (PipelineState.ENGINEERING, Event.OK): PipelineState.ANALYZING,
    (PipelineState.ANALYZING, Event.OK): PipelineState.CRITIQUING,
    (PipelineState.CRITIQUING, Event.VERDICT_PASS): PipelineState.WRITING,
    (PipelineState.CRITIQUING, Event.VERDICT_REVISE): PipelineState.REVISING,
    (PipelineState.CRITIQUING, Event.VERDICT_ABORT): PipelineState.ABORTED,
    (PipelineState.CRITIQUING, Event.CYCLES_EXHAUSTED): PipelineState.WRITING,
    (PipelineState.REVISING, Event.OK): PipelineState.CRITIQUING,
    (PipelineState.WRITING, Event.OK): PipelineState.COMPLETED,
}
# An unrecoverable error aborts from anywhere.
for _state in PipelineState:
    _TRANSITIONS[(_state, Event.ERROR)] = PipelineState.ABORTED


def next_state(current: PipelineState, event: Event) -> PipelineState:
    try:
        return _TRANSITIONS[(current, event)]
    except KeyError:
        raise UndefinedTransition(f"no transition for ({current.value}, {event.value})") from None


def cascade_targets(targets) -> list[str]:
    """Earliest targeted agent plus all downstream, in dependency order."""
    targets = set(targets)
    if not targets:
        raise EmptyTargets("revision cascade needs at least one target agent")
    unknown = targets - set(AGENT_ORDER)
    if unknown:
        raise ValueError(f"targets outside the revisable agents: {sorted(unknown)}")
    start = min(AGENT_ORDER.index(t) for t in targets)
    return list(AGENT_ORDER[start:])


@dataclass
class PipelineContext:
    state: PipelineState = PipelineState.INITIALIZED
    spec: Optional[ResearchSpec] = None
    literature: Optional[LiteratureContext] = None
    data_report: Optional[DataReport] = None
    results: Optional[ResultsReport] = None
    review: Optional[ReviewReport] = None
    revision_count: int = 0
    unverified: bool = False
    run_dir: str = ""
    config_snapshot: dict = field(default_factory=dict)
    logs: list[dict] = field(default_factory=list)

    def log(self, event: str, detail: str = "") -> None:
        self.logs.append({"ts": time.time(), "event": event, "detail": detail})
        logger.info("%s %s", event, detail)

    def to_dict(self) -> dict:
        return {
            "state": self.state.value,
            "spec": self.spec.to_dict() if self.spec else None,
            "literature": self.literature.to_dict() if self.literature else None,
            "data_report": self.data_report.to_dict() if self.data_report else None,
            "results": self.results.to_dict() if self.results else None,
            "review": self.review.to_dict() if self.review else None,
            "revision_count": self.revision_count,
            "unverified": self.unverified,
            "run_dir": self.run_dir,
            "config_snapshot": self.config_snapshot,
            "logs": self.logs,
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "PipelineContext":
        return PipelineContext(
            state=PipelineState(doc["state"]),
            spec=spec_from_dict(doc["spec"]) if doc.get("spec") else None,
            literature=LiteratureContext.from_dict(doc["literature"]) if doc.get("literature") else None,
            data_report=DataReport.from_dict(doc["data_report"]) if doc.get("data_report") else None,
            results=ResultsReport.from_dict(doc["results"]) if doc.get("results") else None,
            review=critic_mod.parse_review(doc["review"]) if doc.get("review") else None,
            revision_count=int(doc.get("revision_count", 0)),
            unverified=bool(doc.get("unverified", False)),
            run_dir=str(doc.get("run_dir", "")),
            config_snapshot=dict(doc.get("config_snapshot", {})),
            logs=list(doc.get("logs", [])),
        )


def save_checkpoint(ctx: PipelineContext, path: str | Path) -> None:
    """Atomic checkpoint write: temp file in the same directory, then rename."""
    path = Path(path)
    envelope = {
        "version": CHECKPOINT_VERSION,
        "saved_at": time.time(),
        "context": ctx.to_dict(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(envelope, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def resume(path: str | Path) -> PipelineContext:
    """Load a checkpoint, refusing (never silently restarting) when the
    file is missing, unparseable, or from a different schema version."""
    path = Path(path)
    if not path.exists():
        raise CheckpointCorrupt(f"no checkpoint file at {path}")
    try:
        envelope = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointCorrupt(f"{path}: not valid JSON ({exc})") from exc
    version = envelope.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointCorrupt(
            f"{path}: checkpoint version {version!r} does not match engine version "
            f"{CHECKPOINT_VERSION}; re-run without --resume or use a matching engine"
        )
    try:
        return PipelineContext.from_dict(envelope["context"])
    except Exception as exc:
        raise CheckpointCorrupt(f"{path}: context does not deserialize ({exc})") from exc


class Pipeline:
    """Wires the stages to their collaborators and drives the state machine."""

    def __init__(
        self,
        config: RunConfig,
        run_dir: str | Path,
        registry: Optional[Registry] = None,
        raw_table: Optional[RawTable] = None,
        backend: Optional[Backend] = None,
        literature_client: Optional[LiteratureClient] = None,
    ):
        self.config = config
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.registry = registry if registry is not None else load_registry(config.registry_path)
        self._raw_table = raw_table
        self.backend = backend if backend is not None else self._build_backend()
        self.literature_client = (
            literature_client if literature_client is not None else self._build_literature_client()
        )
        self.transcript = Transcript(self.run_dir / "llm_transcript.jsonl")
        self.prompt_dir = config.resolved_prompt_dir()
        self.user_prompt: Optional[str] = None

    # -- collaborator construction -------------------------------------------------

    def _build_backend(self) -> Backend:
        if self.config.backend_mode == "scripted":
            if not self.config.scripted_file:
                raise OrchestratorError("scripted backend selected but no scripted_file configured")
            return ScriptedBackend.from_file(
                self.config.scripted_file, strict=self.config.scripted_strict
            )
        return LiveBackend(
            endpoint=self.config.endpoint,
            api_key_env=self.config.api_key_env,
        )

    def _build_literature_client(self) -> Optional[LiteratureClient]:
        if self.config.literature_mode == "fixture":
            return LiteratureClient(transport=fixture_transport(self.config.literature_fixture))
        if self.config.literature_mode == "live":
            return LiteratureClient(timeout=self.config.literature_timeout)
        return None

    @property
    def raw_table(self) -> RawTable:
        if self._raw_table is None:
            self._raw_table = load_raw_table(self.config.data_path)
        return self._raw_table

    # -- driving loop ---------------------------------------------------------------

    def run(
        self, user_prompt: Optional[str] = None, resume_from: Optional[str | Path] = None
    ) -> PipelineContext:
        if resume_from is not None:
            ctx = resume(resume_from)
            ctx.run_dir = str(self.run_dir)
            ctx.log("resume", f"re-entering at state {ctx.state.value}")
        else:
            ctx = PipelineContext(
                state=PipelineState.INITIALIZED,
                run_dir=str(self.run_dir),
                config_snapshot=self.config.to_dict(),
            )
        self.user_prompt = user_prompt
        handler = _attach_run_logger(self.run_dir)
        try:
            self._snapshot_config()
            while ctx.state not in (PipelineState.COMPLETED, PipelineState.ABORTED):
                try:
                    event = self._dispatch(ctx)
                except Exception as exc:
                    ctx.log("stage_error", f"{type(exc).__name__}: {exc}")
                    event = Event.ERROR
                previous = ctx.state
                ctx.state = next_state(ctx.state, event)
                ctx.log("transition", f"{previous.value} --{event.value}--> {ctx.state.value}")
                save_checkpoint(ctx, self.run_dir / CHECKPOINT_NAME)
        finally:
            _detach_run_logger(handler)
        return ctx

    def _snapshot_config(self) -> None:
        snapshot_path = self.run_dir / "config_snapshot.yaml"
        if not snapshot_path.exists():
            snapshot_path.write_text(
                yaml.safe_dump(self.config.to_dict(), sort_keys=True), encoding="utf-8"
            )

    def _dispatch(self, ctx: PipelineContext) -> Event:
        state = ctx.state
        if state is PipelineState.INITIALIZED:
            return Event.OK
        if state is PipelineState.FORMULATING:
            self._do_formulate(ctx)
            return Event.OK
        if state is PipelineState.ENGINEERING:
            self._do_engineer(ctx)
            return Event.OK
        if state is PipelineState.ANALYZING:
            self._do_analyze(ctx)
            return Event.OK
        if state is PipelineState.CRITIQUING:
            return self._do_critique(ctx)
        if state is PipelineState.REVISING:
            self._do_revise(ctx)
            return Event.OK
        if state is PipelineState.WRITING:
            self._do_write(ctx)
            return Event.OK
        raise UndefinedTransition(f"no stage handler for state {state.value}")

    # -- stages ----------------------------------------------------------------------

    def _model_for(self, agent: Agent) -> str:
        return self.config.models.get(agent.value, "general-model")

    def _temperature_for(self, agent: Agent) -> Optional[float]:
        return self.config.temperatures.get(agent.value)

    def _request(self, agent: Agent, user_message: str, context: Optional[dict] = None) -> str:
        request = CompletionRequest.build(
            agent=agent,
            system_prompt=load_agent_prompt(agent, self.prompt_dir, context),
            user_message=user_message,
            model_id=self._model_for(agent),
            temperature=self._temperature_for(agent),
            max_tokens=self.config.max_tokens_for(agent.value),
        )
        return complete(request, self.backend, self.transcript)

    def _do_formulate(self, ctx: PipelineContext) -> None:
        query = self.user_prompt or (
            self.registry.canonical_questions[0]
            if self.registry.canonical_questions
            else f"prediction study on {self.registry.dataset}"
        )
        if self.literature_client is None:
            pool = LiteratureContext(
                papers=(), retrieval_failed=True, failure_note="literature retrieval disabled"
            )
        else:
            pool = self.literature_client.search_papers(query, self.config.literature_limit)
        ctx.log("literature", f"retrieved {len(pool.papers)} papers, failed={pool.retrieval_failed}")

        response = self._request(
            Agent.PROBLEM_FORMULATOR,
            _formulator_message(self.registry, pool, self.user_prompt),
            context={"dataset": self.registry.dataset},
        )
        doc = parse_fenced_json(response)
        spec = spec_from_dict(doc)
        violations = validate_spec(spec, self.registry)
        if violations:
            raise SpecRejected(violations)

        claimed_docs = []
        if isinstance(doc, Mapping):
            claimed_docs = (doc.get("literature_context") or {}).get("papers", []) or []
        claimed = [_record_from_api(item) for item in claimed_docs]
        if pool.retrieval_failed:
            ctx.literature = pool
        else:
            verified = verify_pool(claimed, pool.papers, self.config.crossref_enabled)
            ctx.literature = LiteratureContext(papers=verified, retrieval_failed=False)
        ctx.spec = spec

        (self.run_dir / "research_spec.json").write_text(
            json.dumps(
                {
                    "research_spec": spec.to_dict(),
                    "literature_context": ctx.literature.to_dict(),
                },
                indent=2,
                sort_keys=True,
            ) + "\n",
            encoding="utf-8",
        )
        (self.run_dir / "literature_context.json").write_text(
            json.dumps(ctx.literature.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        ctx.log("formulated", f"outcome={spec.outcome.name} predictors={len(spec.predictors)}")

    def _do_engineer(self, ctx: PipelineContext) -> None:
        if ctx.spec is None:
            raise OrchestratorError("engineering entered without a research spec")
        prep = DataPrepConfig(
            seed=self.config.seed,
            test_fraction=self.config.test_fraction,
            min_analytic_n=self.config.min_analytic_n,
            recode_codes=frozenset(self.config.recode_codes),
            categorical_threshold=self.config.categorical_threshold,
        )
        splits, report = run_protocol(self.raw_table, ctx.spec, self.registry, prep)
        write_outputs(splits, report, self.run_dir)
        ctx.data_report = report
        ctx.log(
            "engineered",
            f"n_analytic={report.n_analytic} train={report.n_train} test={report.n_test}",
        )

    def _do_analyze(self, ctx: PipelineContext) -> None:
        if ctx.data_report is None:
            raise OrchestratorError("analyzing entered without a data report")
        base_message = _analyst_message(ctx, self.config)

        def generate(request: RepairRequest) -> str:
            message = base_message
            if request.previous_stderr is not None:
                message += (
                    "\n\nThe previous script failed. Verbatim stderr:\n"
                    + request.previous_stderr
                    + "\nRepair guidance: "
                    + (request.repair_prompt or "")
                )
            response = self._request(Agent.ANALYST, message)
            return _strip_fence(response)

        def execute_fn(script_text: str):
            script_path = self.run_dir / "analysis_script.py"
            script_path.write_text(script_text, encoding="utf-8")
            return execute(
                script_path,
                self.run_dir,
                timeout=self.config.sandbox_timeout,
                isolation=Isolation(self.config.sandbox_isolation),
                image=self.config.sandbox_image or None,
            )

        result, attempts = repair_loop(generate, execute_fn, self.config.max_repair_attempts)
        ctx.log("analysis_executed", f"attempts={len(attempts)} duration={result.duration:.1f}s")

        results_path = self.run_dir / "results.json"
        if not results_path.exists():
            raise AnalysisRejected(["analysis script exited cleanly but wrote no results.json"])
        report = ResultsReport.from_dict(json.loads(results_path.read_text(encoding="utf-8")))
        violations = validate_results(report, self.config.expected_models)
        if violations:
            raise AnalysisRejected(violations)
        ctx.results = report
        ctx.log("analyzed", f"best_model={report.best_model}")

    def _do_critique(self, ctx: PipelineContext) -> Event:
        if ctx.data_report is None or ctx.results is None or ctx.spec is None:
            raise OrchestratorError("critiquing entered without upstream artifacts")
        issues = critic_mod.precheck_flags(ctx.data_report, ctx.results)
        issues += critic_mod.missing_battery_issues(ctx.results, self.config.expected_models)
        bundle = {
            "research_spec": ctx.spec.to_dict(),
            "data_report": ctx.data_report.to_dict(),
            "results": ctx.results.to_dict(),
            "precheck_issues": [i.to_dict() for i in issues],
            "revision_count": ctx.revision_count,
        }
        report = critic_mod.request_review(
            bundle,
            self.backend,
            system_prompt=load_agent_prompt(Agent.CRITIC, self.prompt_dir),
            model_id=self._model_for(Agent.CRITIC),
            temperature=self._temperature_for(Agent.CRITIC) or 0.0,
            max_tokens=self.config.max_tokens_for(Agent.CRITIC.value),
            transcript=self.transcript,
        )
        violations = critic_mod.validate_review(report)
        if violations:
            raise ReviewRejected(violations)
        ctx.review = report
        (self.run_dir / "review_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        kind = report.verdict.kind
        ctx.log("critiqued", f"verdict={kind.value} quality={report.quality_score}")
        if kind is VerdictKind.PASS:
            return Event.VERDICT_PASS
        if kind is VerdictKind.ABORT:
            return Event.VERDICT_ABORT
        if ctx.revision_count >= self.config.max_revisions:
            ctx.unverified = True
            ctx.log("cycles_exhausted", f"revision_count={ctx.revision_count}")
            return Event.CYCLES_EXHAUSTED
        return Event.VERDICT_REVISE

    def _do_revise(self, ctx: PipelineContext) -> None:
        if ctx.review is None:
            raise OrchestratorError("revising entered without a review")
        ctx.revision_count += 1
        order = cascade_targets(ctx.review.verdict.revision_targets)
        ctx.log("revising", f"cycle={ctx.revision_count} cascade={order}")
        stage_for = {
            "problem_formulator": self._do_formulate,
            "data_engineer": self._do_engineer,
            "analyst": self._do_analyze,
        }
        for agent in order:
            ctx.log("revise_step", agent)
            stage_for[agent](ctx)

    def _do_write(self, ctx: PipelineContext) -> None:
        if ctx.spec is None or ctx.results is None:
            raise OrchestratorError("writing entered without upstream artifacts")
        literature = ctx.literature or LiteratureContext(retrieval_failed=True)
        entries, fallback = writer_mod.emit_bibliography(literature)
        (self.run_dir / "references.bib").write_text(
            writer_mod.render_bibtex(entries), encoding="utf-8"
        )
        response = self._request(Agent.WRITER, _writer_message(ctx, entries, fallback))
        doc = parse_fenced_json(response)
        if not isinstance(doc, Mapping):
            raise writer_mod.WriterError("writer response must be a JSON object of slot -> prose")
        contents = {
            str(slot).upper(): writer_mod.slot_content(str(slot).upper(), str(prose))
            for slot, prose in doc.items()
        }
        template = writer_mod.ManuscriptTemplate.from_file(self.config.resolved_template_file())
        manuscript = writer_mod.fill_template(template, contents)
        for warning in writer_mod.check_word_targets(contents, self.config.word_targets):
            ctx.log("word_target", warning)
        if ctx.unverified:
            if ctx.review is None:
                raise OrchestratorError("unverified manuscript requires the final review")
            manuscript = writer_mod.mark_unverified(manuscript, ctx.review)
        (self.run_dir / "paper.tex").write_text(manuscript, encoding="utf-8")
        ctx.log("written", f"slots={sorted(contents)} bibliography={len(entries)}")


def run_pipeline(
    config: RunConfig,
    run_dir: str | Path,
    user_prompt: Optional[str] = None,
    resume_from: Optional[str | Path] = None,
) -> PipelineContext:
    pipeline = Pipeline(config, run_dir)
    return pipeline.run(user_prompt=user_prompt, resume_from=resume_from)


# -- message rendering ----------------------------------------------------------------


def _strip_fence(text: str) -> str:
    stripped = text.strip()
    if stripped.startswith("```"):
        first_newline = stripped.find("\n")
        if first_newline != -1 and stripped.endswith("```"):
            return stripped[first_newline + 1 : -3].strip() + "\n"
    return stripped + "\n"


def _formulator_message(registry: Registry, pool: LiteratureContext, user_prompt: Optional[str]) -> str:
    lines = [
        f"Dataset: {registry.dataset}",
        f"Waves (temporal order): {' < '.join(registry.wave_order.waves)}",
        "",
        "Curated variables:",
    ]
    for name in sorted(registry.entries):
        entry = registry.entries[name]
        lines.append(
            f"- {name} [{entry.tier.value}, {entry.var_type.value}, {entry.wave}]: {entry.label}"
        )
    if registry.canonical_questions:
        lines.append("")
        lines.append("Canonical research questions:")
        lines.extend(f"- {q}" for q in registry.canonical_questions)
    if registry.common_pitfalls:
        lines.append("")
        lines.append("Known pitfalls:")
        lines.extend(f"- {p}" for p in registry.common_pitfalls)
    lines.append("")
    if user_prompt:
        lines.append(f"User request: {user_prompt}")
    if pool.retrieval_failed:
        lines.append("Literature retrieval failed; proceed without citations.")
    else:
        lines.append("Retrieved papers:")
        lines.extend(
            f"- [{p.external_id}] {p.title} ({p.year})" for p in pool.papers
        )
    lines.append(
        "Respond with JSON carrying two top-level keys: research_spec and literature_context."
    )
    return "\n".join(lines)


def _analyst_message(ctx: PipelineContext, config: RunConfig) -> str:
    assert ctx.spec is not None and ctx.data_report is not None
    return "\n".join(
        [
            "Write a complete Python analysis script for the prepared splits in the",
            "current working directory: train_X.csv, train_y.csv, test_X.csv,",
            "test_y.csv, test_protected.csv.",
            f"Task: {ctx.spec.outcome.task.value} of {ctx.spec.outcome.name}.",
            f"Subgroup attributes: {list(ctx.spec.subgroup_dims)}.",
            f"Models to train: {list(config.expected_models)}.",
            f"Bootstrap resamples: {config.bootstrap_resamples}. Seed: {config.seed}.",
            "The script must write results.json plus per-model prediction CSVs,",
            "importance rankings, and at least one figure (PNG). No network access.",
            "Data report summary: " + json.dumps(ctx.data_report.to_dict(), sort_keys=True),
        ]
    )


def _writer_message(ctx: PipelineContext, entries, fallback: bool) -> str:
    assert ctx.spec is not None and ctx.results is not None
    citation_note = (
        "Literature retrieval failed: cite with bracketed [Author, Year] placeholders."
        if fallback
        else "Cite only these bibliography keys: " + ", ".join(e.key for e in entries)
    )
    payload = {
        "research_spec": ctx.spec.to_dict(),
        "data_report": ctx.data_report.to_dict() if ctx.data_report else None,
        "results": ctx.results.to_dict(),
        "review": ctx.review.to_dict() if ctx.review else None,
        "unverified": ctx.unverified,
    }
    return (
        "Fill the manuscript template slots. Respond with a JSON object mapping\n"
        "slot names (ABSTRACT, INTRODUCTION, RELATED_WORK, METHODS, RESULTS,\n"
        "DISCUSSION, LIMITATIONS) to LaTeX prose.\n"
        + citation_note
        + "\nPipeline artifacts:\n"
        + json.dumps(payload, indent=2, sort_keys=True)
    )


# -- per-run file logging ---------------------------------------------------------------


def _attach_run_logger(run_dir: Path) -> logging.Handler:
    handler = logging.FileHandler(run_dir / "pipeline.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    handler.setLevel(logging.INFO)
    package_logger = logging.getLogger("edmpipe")
    package_logger.addHandler(handler)
    if package_logger.level == logging.NOTSET:
        package_logger.setLevel(logging.INFO)
    return handler


def _detach_run_logger(handler: logging.Handler) -> None:
    logging.getLogger("edmpipe").removeHandler(handler)
    handler.close()
