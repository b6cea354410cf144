"""Evaluation metrics, bootstrap intervals, and subgroup fairness checks.

The AUC here is the pairwise-concordance probability (ties count half),
computed with the midrank formula; the test suite pins it against a
brute-force oracle. Bootstrap intervals use the percentile method over
seeded resamples. Subgroup reports flag groups below the reliability
floor (n < 50) and performance gaps above five points of AUC; a model
with test AUC above 0.95 is flagged as a leakage suspect. All thresholds
are strict inequalities matching the published quality-check symbols.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .spec_gate import TaskType

logger = logging.getLogger(__name__)

AUC_LEAKAGE_THRESHOLD = 0.95
SUBGROUP_RELIABILITY_N = 50
AUC_GAP_THRESHOLD = 0.05
RMSE_RELATIVE_GAP_THRESHOLD = 0.10

CLASSIFICATION_BATTERY = (
    "logistic_regression",
    "random_forest",
    "gradient_boosting",
    "elastic_net",
    "mlp",
    "stacking_ensemble",
)
CLASSIFICATION_METRIC_KEYS = ("auc", "accuracy", "precision", "recall", "f1")
REGRESSION_METRIC_KEYS = ("rmse", "mae", "r2")


class MetricsError(Exception):
    pass


class SingleClass(MetricsError):
    """Labels contain only one class; ranking metrics are undefined."""


class DegenerateResamples(MetricsError):
    pass


class MissingAttribute(MetricsError):
    pass


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outscores a random negative,
    ties counted 0.5 (midrank formulation)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"need both classes, got {n_pos} positives / {n_neg} negatives")
    ranks = _midranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def classification_metrics(
    labels_true: Sequence[int], labels_pred: Sequence[int]
) -> tuple[dict[str, float], list[str]]:
    """Accuracy, precision, recall, F1 on hard labels.

    Zero-denominator cases (no predicted positives, no actual positives)
    resolve to 0.0 with a warning rather than an error.
    """
    y = np.asarray(labels_true)
    p = np.asarray(labels_pred)
    if y.shape != p.shape:
        raise ValueError("label vectors differ in length")
    warnings: list[str] = []
    tp = int(((y == 1) & (p == 1)).sum())
    fp = int(((y == 0) & (p == 1)).sum())
    fn = int(((y == 1) & (p == 0)).sum())
    accuracy = float((y == p).mean())
    if tp + fp == 0:
        precision = 0.0
        warnings.append("no predicted positives; precision set to 0")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        warnings.append("no actual positives; recall set to 0")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0.0:
        f1 = 0.0
        warnings.append("precision and recall both 0; F1 set to 0")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return (
        {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1},
        warnings,
    )


def regression_metrics(y_true: Sequence[float], y_pred: Sequence[float]) -> dict[str, float]:
    """RMSE, MAE, R². A constant truth vector gets R² = 0 by convention."""
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape:
        raise ValueError("vectors differ in length")
    err = p - y
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        logger.warning("constant truth vector; R^2 reported as 0")
        r2 = 0.0
    else:
        r2 = 1.0 - float(np.sum(err**2)) / ss_tot
    return {"rmse": rmse, "mae": mae, "r2": r2}


def bootstrap_ci(
    metric: Callable[[np.ndarray, np.ndarray], float],
    predictions: Sequence[float],
    truths: Sequence,
    resamples: int = 1000,
    seed: int = 42,
    max_redraws: int = 20,
) -> tuple[float, float]:
    """95% percentile bootstrap interval for metric(predictions, truths).

    Resamples that collapse to a single class (SingleClass from the
    metric) are redrawn a bounded number of times, then skipped with a
    warning; if more than half the resamples are lost that way, the
    interval is refused as degenerate.
    """
    p = np.asarray(predictions)
    t = np.asarray(truths)
    if len(p) != len(t) or len(p) < 2:
        raise ValueError("predictions/truths must be equal-length with at least 2 rows")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    rng = np.random.default_rng(seed)
    values: list[float] = []
    skipped = 0
    for _ in range(resamples):
        value = None
        for _ in range(max_redraws + 1):
            idx = rng.integers(0, len(p), size=len(p))
            try:
                value = float(metric(p[idx], t[idx]))
                break
            except SingleClass:
                continue
        if value is None:
            skipped += 1
        else:
            values.append(value)
    if skipped:
        logger.warning("bootstrap skipped %d degenerate resamples", skipped)
    if skipped > resamples // 2 or not values:
        raise DegenerateResamples(f"{skipped} of {resamples} resamples were single-class")
    lower, upper = np.percentile(values, [2.5, 97.5])
    return float(lower), float(upper)


@dataclass(frozen=True)
class ModelMetrics:
    model_name: str
    task: TaskType
    point: Mapping[str, float]
    ci: Mapping[str, tuple[float, float]]
    n_test: int
    prediction_file: Optional[str] = None
    importance: tuple[tuple[str, float], ...] = ()

    def to_dict(self) -> dict:
        return {
            "name": self.model_name,
            "task": self.task.value,
            "metrics": dict(self.point),
            "ci": {k: list(v) for k, v in self.ci.items()},
            "n_test": self.n_test,
            "prediction_file": self.prediction_file,
            "importance": [{"feature": f, "value": v} for f, v in self.importance],
        }

    @staticmethod
    def from_dict(doc: Mapping, task: TaskType) -> "ModelMetrics":
        importance = tuple(
            (str(item["feature"]), float(item["value"]))
            for item in doc.get("importance", []) or []
        )
        ci = {
            k: (float(v[0]), float(v[1]))
            for k, v in (doc.get("ci", {}) or {}).items()
            if isinstance(v, (list, tuple)) and len(v) == 2
        }
        return ModelMetrics(
            model_name=str(doc.get("name", "")),
            task=task,
            point={k: float(v) for k, v in (doc.get("metrics", {}) or {}).items()},
            ci=ci,
            n_test=int(doc.get("n_test", 0)),
            prediction_file=doc.get("prediction_file"),
            importance=importance,
        )


@dataclass(frozen=True)
class SubgroupEntry:
    label: str
    n: int
    value: Optional[float]
    unreliable: bool

    def to_dict(self) -> dict:
        return {"label": self.label, "n": self.n, "value": self.value, "unreliable": self.unreliable}


@dataclass(frozen=True)
class SubgroupReport:
    attribute: str
    metric: str
    groups: tuple[SubgroupEntry, ...]
    max_gap: float
    gap_flagged: bool

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "metric": self.metric,
            "groups": [g.to_dict() for g in self.groups],
            "max_gap": self.max_gap,
            "gap_flagged": self.gap_flagged,
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "SubgroupReport":
        return SubgroupReport(
            attribute=str(doc.get("attribute", "")),
            metric=str(doc.get("metric", "")),
            groups=tuple(
                SubgroupEntry(
                    label=str(g.get("label", "")),
                    n=int(g.get("n", 0)),
                    value=None if g.get("value") is None else float(g["value"]),
                    unreliable=bool(g.get("unreliable", False)),
                )
                for g in doc.get("groups", [])
            ),
            max_gap=float(doc.get("max_gap", 0.0)),
            gap_flagged=bool(doc.get("gap_flagged", False)),
        )


@dataclass
class ResultsReport:
    task: TaskType
    per_model: list[ModelMetrics]
    best_model: str
    importance_rankings: tuple[tuple[str, float], ...] = ()
    subgroups: list[SubgroupReport] = field(default_factory=list)
    figures: list[str] = field(default_factory=list)
    tables: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def model(self, name: str) -> Optional[ModelMetrics]:
        for m in self.per_model:
            if m.model_name == name:
                return m
        return None

    def to_dict(self) -> dict:
        return {
            "task": self.task.value,
            "models": [m.to_dict() for m in self.per_model],
            "best_model": self.best_model,
            "importance_rankings": [
                {"feature": f, "value": v} for f, v in self.importance_rankings
            ],
            "subgroups": [s.to_dict() for s in self.subgroups],
            "figures": list(self.figures),
            "tables": list(self.tables),
            "warnings": list(self.warnings),
            "errors": list(self.errors),
        }

    @staticmethod
    def from_dict(doc: Mapping) -> "ResultsReport":
        task = TaskType(doc.get("task", "classification"))
        return ResultsReport(
            task=task,
            per_model=[ModelMetrics.from_dict(m, task) for m in doc.get("models", [])],
            best_model=str(doc.get("best_model", "")),
            importance_rankings=tuple(
                (str(i["feature"]), float(i["value"]))
                for i in doc.get("importance_rankings", []) or []
            ),
            subgroups=[SubgroupReport.from_dict(s) for s in doc.get("subgroups", [])],
            figures=list(doc.get("figures", [])),
            tables=list(doc.get("tables", [])),
            warnings=list(doc.get("warnings", [])),
            errors=list(doc.get("errors", [])),
        )


def subgroup_analysis(
    predictions: Sequence[float],
    truths: Sequence,
    protected: Mapping[str, Sequence],
    attribute: str,
    task: TaskType,
) -> SubgroupReport:
    """Per-group performance over the pre-encoding protected labels.

    Groups under 50 rows are unreliable and excluded from the gap; so are
    groups where the metric is undefined (single-class). Classification
    gaps above 5 AUC points flag; regression flags a relative RMSE gap
    above 10% (the percentage-point rule has no direct RMSE analogue).
    """
    if attribute not in protected:
        raise MissingAttribute(f"attribute {attribute!r} not in the protected-label table")
    labels = np.asarray([_label_str(v) for v in protected[attribute]])
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths)
    if not (len(labels) == len(p) == len(t)):
        raise ValueError("protected labels are not aligned to predictions")
    metric_name = "auc" if task is TaskType.CLASSIFICATION else "rmse"
    groups: list[SubgroupEntry] = []
    for label in sorted(set(labels)):
        mask = labels == label
        n = int(mask.sum())
        value: Optional[float] = None
        if task is TaskType.CLASSIFICATION:
            try:
                value = auc(p[mask], t[mask])
            except SingleClass:
                logger.warning("subgroup %s=%s is single-class; metric undefined", attribute, label)
        else:
            value = regression_metrics(t[mask], p[mask])["rmse"]
        unreliable = n < SUBGROUP_RELIABILITY_N or value is None
        groups.append(SubgroupEntry(label=label, n=n, value=value, unreliable=unreliable))
    reliable = [g.value for g in groups if not g.unreliable and g.value is not None]
    if len(reliable) >= 2:
        max_gap = max(reliable) - min(reliable)
    else:
        max_gap = 0.0
    if task is TaskType.CLASSIFICATION:
        flagged = max_gap > AUC_GAP_THRESHOLD
    else:
        base = min(reliable) if len(reliable) >= 2 else 0.0
        flagged = base > 0 and (max_gap / base) > RMSE_RELATIVE_GAP_THRESHOLD
    return SubgroupReport(
        attribute=attribute,
        metric=metric_name,
        groups=tuple(groups),
        max_gap=float(max_gap),
        gap_flagged=flagged,
    )


def _label_str(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def leakage_flag(metrics: ModelMetrics) -> bool:
    """True iff the model's AUC exceeds the leakage-suspicion threshold."""
    if metrics.task is not TaskType.CLASSIFICATION:
        raise ValueError("leakage flag is defined for classification only")
    return float(metrics.point.get("auc", 0.0)) > AUC_LEAKAGE_THRESHOLD


def best_model_name(
    per_model: Sequence[ModelMetrics], task: TaskType, battery_order: Sequence[str]
) -> str:
    """Highest AUC (classification) or lowest RMSE (regression); ties break
    by position in the battery order."""
    if not per_model:
        raise ValueError("no models to choose from")

    def order_key(m: ModelMetrics) -> int:
        try:
            return list(battery_order).index(m.model_name)
        except ValueError:
            return len(battery_order)

    if task is TaskType.CLASSIFICATION:
        return min(per_model, key=lambda m: (-m.point.get("auc", float("-inf")), order_key(m))).model_name
    return min(per_model, key=lambda m: (m.point.get("rmse", float("inf")), order_key(m))).model_name


def validate_results(report: ResultsReport, expected_models: Sequence[str]) -> list[str]:
    """Checklist over an analysis-results report; violations are returned,
    never raised."""
    violations: list[str] = []
    names = [m.model_name for m in report.per_model]
    for expected in expected_models:
        if expected not in names:
            violations.append(f"expected model {expected!r} is missing from the results")
    metric_keys = (
        CLASSIFICATION_METRIC_KEYS if report.task is TaskType.CLASSIFICATION else REGRESSION_METRIC_KEYS
    )
    for model in report.per_model:
        for key in metric_keys:
            if key not in model.point:
                violations.append(f"{model.model_name}: metric {key!r} not computed")
            elif key not in model.ci:
                violations.append(f"{model.model_name}: no confidence interval for {key!r}")
        if model.n_test <= 0:
            violations.append(f"{model.model_name}: n_test not reported")
    if not report.subgroups:
        violations.append("no subgroup analysis present")
    documented_skip = any(
        "timeout" in w.lower() or "skip" in w.lower() for w in report.warnings
    )
    if not report.importance_rankings and not documented_skip:
        violations.append("importance rankings absent without a documented skip/timeout")
    if report.best_model not in names:
        violations.append(f"best_model {report.best_model!r} is not among the reported models")
    elif report.per_model:
        computed = best_model_name(report.per_model, report.task, expected_models)
        if computed != report.best_model:
            violations.append(
                f"best_model {report.best_model!r} inconsistent with the selection rule "
                f"(expected {computed!r})"
            )
    return violations
