"""Methodological review gate: deterministic prechecks plus an LLM-backed
four-dimension review with verdict routing.

Prechecks run before any model call and are pure functions of the stage
artifacts: leakage-suspect AUC values, unreliable subgroups, missing
confidence intervals, missing battery members, and unaddressed data
warnings. The review response itself must parse into a well-formed
report — the review is the quality gate, so a malformed one aborts the
pipeline instead of being patched up.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

from .dataprep import DataReport
from .llm_gateway import Agent, Backend, CompletionRequest, Transcript, complete, parse_fenced_json
from .metrics import ResultsReport, leakage_flag
from .spec_gate import TaskType

logger = logging.getLogger(__name__)

DIMENSIONS = ("problem_formulation", "data_preparation", "analysis", "substantive")
REVISABLE_AGENTS = ("problem_formulator", "data_engineer", "analyst")


class ReviewMalformed(Exception):
    pass


class VerdictKind(str, Enum):
    PASS = "pass"
    REVISE = "revise"
    ABORT = "abort"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    revision_targets: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is VerdictKind.REVISE:
            if not self.revision_targets:
                raise ReviewMalformed("revise verdict without revision targets")
            bad = [t for t in self.revision_targets if t not in REVISABLE_AGENTS]
            if bad:
                raise ReviewMalformed(f"revision targets outside the revisable agents: {bad}")


class Severity(str, Enum):
    CRITICAL = "critical"
    MAJOR = "major"


@dataclass(frozen=True)
class Issue:
    severity: Severity
    description: str
    recommendation: str
    target_agent: str

    def to_dict(self) -> dict:
        return {
            "severity": self.severity.value,
            "description": self.description,
            "recommendation": self.recommendation,
            "target_agent": self.target_agent,
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "Issue":
        return Issue(
            severity=Severity(doc["severity"]),
            description=str(doc.get("description", "")),
            recommendation=str(doc.get("recommendation", "")),
            target_agent=str(doc.get("target_agent", "")),
        )


@dataclass(frozen=True)
class ReviewReport:
    verdict: Verdict
    quality_score: float
    dimension_scores: Mapping[str, float]
    issues: tuple[Issue, ...] = ()
    revision_instructions: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.kind.value,
            "quality_score": self.quality_score,
            "dimension_scores": dict(self.dimension_scores),
            "issues": [i.to_dict() for i in self.issues],
            "revision_instructions": dict(self.revision_instructions),
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "ReviewReport":
        return parse_review(doc)


def parse_review(doc: Mapping) -> ReviewReport:
    """Build a ReviewReport from a parsed response, enforcing the schema."""
    if not isinstance(doc, Mapping):
        raise ReviewMalformed("review must be a JSON object")
    verdict_raw = doc.get("verdict")
    if verdict_raw not in (v.value for v in VerdictKind):
        raise ReviewMalformed(f"verdict must be pass/revise/abort, got {verdict_raw!r}")
    instructions = doc.get("revision_instructions", {}) or {}
    if not isinstance(instructions, Mapping):
        raise ReviewMalformed("revision_instructions must be an object")
    instructions = {str(k): str(v) for k, v in instructions.items()}
    kind = VerdictKind(verdict_raw)
    targets = tuple(sorted(instructions)) if kind is VerdictKind.REVISE else ()
    verdict = Verdict(kind=kind, revision_targets=targets)

    scores_raw = doc.get("dimension_scores")
    if not isinstance(scores_raw, Mapping):
        raise ReviewMalformed("dimension_scores missing")
    scores: dict[str, float] = {}
    for dim in DIMENSIONS:
        if dim not in scores_raw or not isinstance(scores_raw[dim], (int, float)):
            raise ReviewMalformed(f"dimension score {dim!r} missing or not numeric")
        scores[dim] = float(scores_raw[dim])

    quality = doc.get("quality_score")
    if not isinstance(quality, (int, float)):
        raise ReviewMalformed("quality_score missing or not numeric")

    issues = []
    for raw in doc.get("issues", []) or []:
        try:
            issues.append(Issue.from_dict(raw))
        except (KeyError, ValueError) as exc:
            raise ReviewMalformed(f"bad issue entry: {exc}") from exc

    return ReviewReport(
        verdict=verdict,
        quality_score=float(quality),
        dimension_scores=scores,
        issues=tuple(issues),
        revision_instructions=instructions,
    )


def precheck_flags(data_report: DataReport, results: ResultsReport) -> list[Issue]:
    """Deterministic issues computed from stage artifacts before any model
    call; the same artifacts always produce the same list."""
    issues: list[Issue] = []
    if results.task is TaskType.CLASSIFICATION:
        for model in results.per_model:
            if leakage_flag(model):
                issues.append(
                    Issue(
                        severity=Severity.CRITICAL,
                        description=(
                            f"{model.model_name} reports AUC "
                            f"{model.point.get('auc'):.3f} above 0.95, a leakage suspect"
                        ),
                        recommendation="re-audit the predictor set and preparation steps "
                                       "for temporal or target leakage",
                        target_agent="data_engineer",
                    )
                )
    for subgroup in results.subgroups:
        shaky = [g.label for g in subgroup.groups if g.unreliable]
        if shaky:
            issues.append(
                Issue(
                    severity=Severity.MAJOR,
                    description=(
                        f"subgroup attribute {subgroup.attribute} has unreliable groups "
                        f"(n < 50 or undefined metric): {shaky}"
                    ),
                    recommendation="exclude unreliable groups from fairness conclusions "
                                   "or report them as descriptive only",
                    target_agent="analyst",
                )
            )
    for model in results.per_model:
        missing_ci = [k for k in model.point if k not in model.ci]
        if missing_ci:
            issues.append(
                Issue(
                    severity=Severity.MAJOR,
                    description=f"{model.model_name} lacks confidence intervals for {missing_ci}",
                    recommendation="report a bootstrap interval for every point metric",
                    target_agent="analyst",
                )
            )
    if data_report.warnings:
        addressed = {w.lower() for w in results.warnings}
        unaddressed = [w for w in data_report.warnings if w.lower() not in addressed]
        if unaddressed:
            issues.append(
                Issue(
                    severity=Severity.MAJOR,
                    description=f"data-preparation warnings not addressed in the analysis: "
                                f"{unaddressed}",
                    recommendation="acknowledge high-missingness predictors and their "
                                   "imputation burden in the analysis output",
                    target_agent="data_engineer",
                )
            )
    return issues


def missing_battery_issues(results: ResultsReport, expected_models: Sequence[str]) -> list[Issue]:
    names = {m.model_name for m in results.per_model}
    return [
        Issue(
            severity=Severity.MAJOR,
            description=f"expected model {name!r} missing from the results",
            recommendation="train and report the full configured battery",
            target_agent="analyst",
        )
        for name in expected_models
        if name not in names
    ]


def request_review(
    bundle: Mapping,
    backend: Backend,
    *,
    system_prompt: str,
    model_id: str,
    temperature: float = 0.0,
    max_tokens: int = 4096,
    transcript: Optional[Transcript] = None,
) -> ReviewReport:
    """Send the artifact bundle (with prechecks embedded) for review and
    parse the response; a malformed review is a hard error."""
    if "precheck_issues" not in bundle:
        raise ValueError("precheck issues must be computed and embedded before review")
    request = CompletionRequest.build(
        agent=Agent.CRITIC,
        system_prompt=system_prompt,
        user_message=json.dumps(bundle, indent=2, sort_keys=True, default=str),
        model_id=model_id,
        temperature=temperature,
        max_tokens=max_tokens,
    )
    response = complete(request, backend, transcript)
    try:
        doc = parse_fenced_json(response)
    except Exception as exc:
        raise ReviewMalformed(f"review response is not parseable JSON: {exc}") from exc
    return parse_review(doc)


def validate_review(report: ReviewReport) -> list[str]:
    """Review-stage checklist; violations are returned for the
    orchestrator's abort decision."""
    violations: list[str] = []
    kind = report.verdict.kind
    if kind is VerdictKind.REVISE:
        if not report.revision_instructions:
            violations.append("revise verdict without actionable revision instructions")
        empty = [k for k, v in report.revision_instructions.items() if not v.strip()]
        if empty:
            violations.append(f"revision instructions empty for: {empty}")
    if kind is VerdictKind.PASS and report.revision_instructions:
        violations.append("pass verdict with revision instructions present is inconsistent")
    for dim in DIMENSIONS:
        if dim not in report.dimension_scores:
            violations.append(f"dimension score missing: {dim}")
    for issue in report.issues:
        if issue.target_agent not in REVISABLE_AGENTS:
            violations.append(
                f"issue targets {issue.target_agent!r}, not a revisable agent"
            )
    return violations
