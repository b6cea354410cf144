"""Research-specification contract and the programmatic gates applied to it.

A ResearchSpec is the structured output of the problem-formulation stage.
``parse_spec`` enforces the document schema (presence and types of every
field); ``validate_spec`` runs the substantive gates against a loaded
registry: novelty threshold, temporal precedence of every predictor over
the outcome, exclusion-rule screening, outcome existence, predictor-count
bounds, duplicate detection, and tier-2 rationale strength. Violations
are returned, never raised, so the orchestrator can decide routing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

from .registry import Registry, Tier, UnknownWave, classify_variable, temporal_precedes

#: Gate thresholds. The novelty floor and predictor-count window are part
#: of the published quality-check contract; the rationale minimum
#: quantifies "stronger rationale" for auto-inferred variables.
MIN_NOVELTY = 3
MIN_PREDICTORS = 3
MAX_PREDICTORS = 30
TIER2_RATIONALE_MIN_CHARS = 80


class TaskType(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class ViolationCode(str, Enum):
    NOVELTY_TOO_LOW = "NoveltyTooLow"
    TEMPORAL_LEAKAGE = "TemporalLeakage"
    EXCLUDED_VARIABLE = "ExcludedVariable"
    UNKNOWN_OUTCOME = "UnknownOutcome"
    PREDICTOR_COUNT_OUT_OF_RANGE = "PredictorCountOutOfRange"
    DUPLICATE_OUTCOME = "DuplicateOutcome"
    MISSING_RATIONALE = "MissingRationale"


@dataclass(frozen=True)
class SpecViolation:
    code: ViolationCode
    detail: str
    variable: Optional[str] = None

    def to_dict(self) -> dict:
        return {"code": self.code.value, "detail": self.detail, "variable": self.variable}


@dataclass(frozen=True)
class OutcomeSpec:
    name: str
    wave: str
    task: TaskType


@dataclass(frozen=True)
class PredictorChoice:
    name: str
    rationale: str
    tier: Tier = Tier.TIER1


@dataclass(frozen=True)
class ResearchSpec:
    research_question: str
    outcome: OutcomeSpec
    predictors: tuple[PredictorChoice, ...]
    population: str
    subgroup_dims: tuple[str, ...] = ()
    expected_contribution: str = ""
    limitations: tuple[str, ...] = ()
    novelty_score: int = 3
    structural_missingness: bool = False

    def to_dict(self) -> dict:
        return {
            "research_question": self.research_question,
            "outcome": {
                "name": self.outcome.name,
                "wave": self.outcome.wave,
                "task": self.outcome.task.value,
            },
            "predictors": [
                {"name": p.name, "rationale": p.rationale, "tier": p.tier.value}
                for p in self.predictors
            ],
            "population": self.population,
            "subgroup_dims": list(self.subgroup_dims),
            "expected_contribution": self.expected_contribution,
            "limitations": list(self.limitations),
            "novelty_score": self.novelty_score,
            "structural_missingness": self.structural_missingness,
        }


class SchemaError(Exception):
    """The spec document is missing fields or has mistyped values.

    ``problems`` lists every defect found, not just the first.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _require_str(doc: Mapping, key: str, problems: list[str], default: str = "") -> str:
    value = doc.get(key)
    if value is None:
        problems.append(f"missing field {key!r}")
        return default
    if not isinstance(value, str):
        problems.append(f"field {key!r} must be a string, got {type(value).__name__}")
        return default
    return value


def _require_str_list(doc: Mapping, key: str, problems: list[str]) -> tuple[str, ...]:
    value = doc.get(key)
    if value is None:
        problems.append(f"missing field {key!r}")
        return ()
    if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
        problems.append(f"field {key!r} must be a list of strings")
        return ()
    return tuple(value)


def spec_from_dict(doc: Mapping) -> ResearchSpec:
    """Build a ResearchSpec from a parsed document, collecting all schema
    problems into one SchemaError."""
    if "research_spec" in doc:
        # Formulator responses carry two top-level keys (research_spec,
        # literature_context); accept either the wrapped or the bare form.
        doc = doc["research_spec"]
    if not isinstance(doc, Mapping):
        raise SchemaError(["research_spec must be a JSON object"])
    problems: list[str] = []

    question = _require_str(doc, "research_question", problems)
    population = _require_str(doc, "population", problems)
    contribution = _require_str(doc, "expected_contribution", problems)
    limitations = _require_str_list(doc, "limitations", problems)
    subgroup_dims = _require_str_list(doc, "subgroup_dims", problems)

    outcome_doc = doc.get("outcome")
    outcome = OutcomeSpec(name="", wave="", task=TaskType.CLASSIFICATION)
    if not isinstance(outcome_doc, Mapping):
        problems.append("missing or mistyped field 'outcome' (object with name/wave/task)")
    else:
        oproblems: list[str] = []
        name = _require_str(outcome_doc, "name", oproblems)
        wave = _require_str(outcome_doc, "wave", oproblems)
        task_raw = outcome_doc.get("task")
        task = TaskType.CLASSIFICATION
        if task_raw not in (TaskType.CLASSIFICATION.value, TaskType.REGRESSION.value):
            oproblems.append(f"outcome.task must be 'classification' or 'regression', got {task_raw!r}")
        else:
            task = TaskType(task_raw)
        problems.extend(f"outcome.{p}" if not p.startswith("outcome") else p for p in oproblems)
        outcome = OutcomeSpec(name=name, wave=wave, task=task)

    predictors: list[PredictorChoice] = []
    predictors_doc = doc.get("predictors")
    if not isinstance(predictors_doc, list) or not predictors_doc:
        problems.append("field 'predictors' must be a non-empty list")
    else:
        for i, item in enumerate(predictors_doc):
            if not isinstance(item, Mapping):
                problems.append(f"predictors[{i}] must be an object")
                continue
            pproblems: list[str] = []
            pname = _require_str(item, "name", pproblems)
            rationale = _require_str(item, "rationale", pproblems)
            tier_raw = item.get("tier", Tier.TIER1.value)
            tier = Tier.TIER1
            if tier_raw not in (Tier.TIER1.value, Tier.TIER2.value):
                pproblems.append(f"tier must be 'tier1' or 'tier2', got {tier_raw!r}")
            else:
                tier = Tier(tier_raw)
            if not rationale:
                pproblems.append("rationale must be non-empty")
            problems.extend(f"predictors[{i}].{p}" for p in pproblems)
            predictors.append(PredictorChoice(name=pname, rationale=rationale, tier=tier))

    novelty = doc.get("novelty_score")
    if isinstance(novelty, bool) or not isinstance(novelty, int):
        problems.append(f"field 'novelty_score' must be an integer, got {novelty!r}")
        novelty = 0
    if novelty not in range(1, 6):
        problems.append(f"novelty_score {novelty} outside 1..5")

    structural = doc.get("structural_missingness", False)
    if not isinstance(structural, bool):
        problems.append("field 'structural_missingness' must be a boolean")
        structural = False

    if problems:
        raise SchemaError(problems)
    return ResearchSpec(
        research_question=question,
        outcome=outcome,
        predictors=tuple(predictors),
        population=population,
        subgroup_dims=subgroup_dims,
        expected_contribution=contribution,
        limitations=limitations,
        novelty_score=int(novelty),
        structural_missingness=structural,
    )


def parse_spec(document: str) -> ResearchSpec:
    """Parse a research-spec JSON document into a ResearchSpec."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError([f"not valid JSON: {exc}"]) from exc
    if not isinstance(doc, Mapping):
        raise SchemaError(["document root must be a JSON object"])
    return spec_from_dict(doc)


def _resolve_wave(name: str, registry: Registry) -> Optional[str]:
    entry = registry.entry(name)
    if entry is not None:
        return entry.wave
    wave, _ = registry.wave_order.infer(name)
    return wave


def validate_spec(
    spec: ResearchSpec,
    registry: Registry,
    *,
    min_novelty: int = MIN_NOVELTY,
    min_predictors: int = MIN_PREDICTORS,
    max_predictors: int = MAX_PREDICTORS,
    tier2_rationale_min: int = TIER2_RATIONALE_MIN_CHARS,
) -> list[SpecViolation]:
    """Run every research-spec gate; the empty list means all gates passed.

    The result is order-stable: sorted by violation code, then variable.
    """
    violations: list[SpecViolation] = []

    if spec.novelty_score < min_novelty:
        violations.append(
            SpecViolation(
                ViolationCode.NOVELTY_TOO_LOW,
                f"novelty {spec.novelty_score} below the minimum of {min_novelty}",
            )
        )

    outcome_name = spec.outcome.name.upper()
    outcome_entry = registry.entry(outcome_name)
    outcome_tier = classify_variable(outcome_name, registry) if outcome_name else Tier.UNKNOWN
    if outcome_tier is Tier.EXCLUDED:
        violations.append(
            SpecViolation(
                ViolationCode.EXCLUDED_VARIABLE,
                "outcome matches an exclusion rule",
                variable=outcome_name,
            )
        )
    elif outcome_entry is None:
        violations.append(
            SpecViolation(
                ViolationCode.UNKNOWN_OUTCOME,
                "outcome is not a registry variable",
                variable=outcome_name or spec.outcome.name,
            )
        )
    outcome_wave = outcome_entry.wave if outcome_entry is not None else None

    n = len(spec.predictors)
    if not min_predictors <= n <= max_predictors:
        violations.append(
            SpecViolation(
                ViolationCode.PREDICTOR_COUNT_OUT_OF_RANGE,
                f"{n} predictors outside the allowed {min_predictors}..{max_predictors}",
            )
        )

    seen: set[str] = set()
    for predictor in spec.predictors:
        pname = predictor.name.upper()
        if pname in seen:
            violations.append(
                SpecViolation(
                    ViolationCode.DUPLICATE_OUTCOME,
                    "predictor listed more than once",
                    variable=pname,
                )
            )
        seen.add(pname)
        if pname == outcome_name:
            violations.append(
                SpecViolation(
                    ViolationCode.DUPLICATE_OUTCOME,
                    "outcome also appears as a predictor",
                    variable=pname,
                )
            )

        tier = classify_variable(pname, registry)
        if tier is Tier.EXCLUDED:
            violations.append(
                SpecViolation(
                    ViolationCode.EXCLUDED_VARIABLE,
                    f"predictor matches exclusion rule {registry.exclusions.match(pname)}",
                    variable=pname,
                )
            )
            continue

        if outcome_wave is not None:
            pwave = _resolve_wave(pname, registry)
            if pwave is None:
                violations.append(
                    SpecViolation(
                        ViolationCode.TEMPORAL_LEAKAGE,
                        "predictor wave cannot be established; temporal precedence unverifiable",
                        variable=pname,
                    )
                )
            else:
                try:
                    precedes = temporal_precedes(pwave, outcome_wave, registry.wave_order)
                except UnknownWave:
                    precedes = False
                if not precedes:
                    violations.append(
                        SpecViolation(
                            ViolationCode.TEMPORAL_LEAKAGE,
                            f"predictor wave {pwave!r} does not precede outcome wave {outcome_wave!r}",
                            variable=pname,
                        )
                    )
        if (outcome_name, pname) in registry.pitfall_pairs:
            violations.append(
                SpecViolation(
                    ViolationCode.TEMPORAL_LEAKAGE,
                    "predictor is a registry-listed near-duplicate composite of the outcome",
                    variable=pname,
                )
            )

        if tier in (Tier.TIER2, Tier.UNKNOWN) and len(predictor.rationale) < tier2_rationale_min:
            violations.append(
                SpecViolation(
                    ViolationCode.MISSING_RATIONALE,
                    f"auto-inferred predictors need a rationale of at least "
                    f"{tier2_rationale_min} characters (got {len(predictor.rationale)})",
                    variable=pname,
                )
            )

    for dim in spec.subgroup_dims:
        if classify_variable(dim.upper(), registry) is Tier.EXCLUDED:
            violations.append(
                SpecViolation(
                    ViolationCode.EXCLUDED_VARIABLE,
                    "subgroup dimension matches an exclusion rule",
                    variable=dim.upper(),
                )
            )

    violations.sort(key=lambda v: (v.code.value, v.variable or ""))
    return violations
