"""Deterministic data-preparation protocol for survey prediction tasks.

The protocol runs in a fixed order: select the columns named by the
research spec, recode negative sentinel codes to missing, drop rows with
a missing outcome (the outcome is never imputed), assess per-column
missingness, split train/test before any transformation, persist the
pre-encoding values of subgroup variables for the test rows, impute each
predictor by its missingness route with statistics fit on the training
rows only, one-hot encode categoricals, and validate the result. Every
step is a pure function of (raw table, spec, config, seed).

The imputation router follows the survey missing-data protocol: below 5%
missing use median (continuous) or mode (categorical), between 5% and
20% inclusive use chained-equations imputation, above 20% chained
equations plus a report warning. A complete-case share below 60% of the
original sample aborts the run unless the spec declares the missingness
structural.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .registry import Registry, VarType
from .spec_gate import ResearchSpec, TaskType

logger = logging.getLogger(__name__)

DEFAULT_RECODE_CODES = frozenset({-1, -4, -7, -8, -9})
COMPLETE_CASE_MIN = 0.60
ITERATIVE_ROUNDS = 5


class DataPrepError(Exception):
    pass


class StratificationImpossible(DataPrepError):
    pass


class AllMissingColumn(DataPrepError):
    pass


class Abort(DataPrepError):
    """The protocol refuses to continue; ``reason`` is surfaced to logs."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class ImputationMethod(str, Enum):
    NONE = "none"
    MEDIAN = "median"
    MODE = "mode"
    ITERATIVE = "iterative"


@dataclass(frozen=True)
class ImputationRoute:
    variable: str
    missingness_pct: float
    method: ImputationMethod
    warning: bool = False

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "missingness_pct": self.missingness_pct,
            "method": self.method.value,
            "warning": self.warning,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ImputationRoute":
        return ImputationRoute(
            variable=doc["variable"],
            missingness_pct=doc["missingness_pct"],
            method=ImputationMethod(doc["method"]),
            warning=bool(doc.get("warning", False)),
        )


@dataclass(frozen=True)
class RawTable:
    frame: pd.DataFrame
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.frame.columns.duplicated().any():
            dupes = self.frame.columns[self.frame.columns.duplicated()].tolist()
            raise DataPrepError(f"duplicate column names: {dupes}")


def load_raw_table(path: str | Path) -> RawTable:
    return RawTable(frame=pd.read_csv(path), provenance=str(path))


@dataclass
class PreparedSplits:
    train_X: pd.DataFrame
    test_X: pd.DataFrame
    train_y: pd.Series
    test_y: pd.Series
    protected: pd.DataFrame
    seed: int


@dataclass
class DataReport:
    n_original: int
    n_analytic: int
    n_train: int
    n_test: int
    per_variable: list[ImputationRoute] = field(default_factory=list)
    class_balance: Optional[dict[str, float]] = None
    predictors_pre_encoding: int = 0
    predictors_post_encoding: int = 0
    warnings: list[str] = field(default_factory=list)
    validation_passed: bool = False

    def to_dict(self) -> dict:
        return {
            "n_original": self.n_original,
            "n_analytic": self.n_analytic,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "per_variable": [r.to_dict() for r in self.per_variable],
            "class_balance": self.class_balance,
            "predictors_pre_encoding": self.predictors_pre_encoding,
            "predictors_post_encoding": self.predictors_post_encoding,
            "warnings": list(self.warnings),
            "validation_passed": self.validation_passed,
        }

    @staticmethod
    def from_dict(doc: dict) -> "DataReport":
        return DataReport(
            n_original=doc["n_original"],
            n_analytic=doc["n_analytic"],
            n_train=doc["n_train"],
            n_test=doc["n_test"],
            per_variable=[ImputationRoute.from_dict(r) for r in doc.get("per_variable", [])],
            class_balance=doc.get("class_balance"),
            predictors_pre_encoding=doc.get("predictors_pre_encoding", 0),
            predictors_post_encoding=doc.get("predictors_post_encoding", 0),
            warnings=list(doc.get("warnings", [])),
            validation_passed=bool(doc.get("validation_passed", False)),
        )


@dataclass(frozen=True)
class DataPrepConfig:
    seed: int = 42
    test_fraction: float = 0.2
    min_analytic_n: int = 1000
    recode_codes: frozenset[int] = DEFAULT_RECODE_CODES
    iterations: int = ITERATIVE_ROUNDS
    categorical_threshold: int = 15
    complete_case_min: float = COMPLETE_CASE_MIN


def recode_sentinels(table: RawTable, codes: frozenset[int] | set[int]) -> RawTable:
    """Replace every cell whose value is a listed sentinel code with NaN."""
    if not codes:
        raise ValueError("sentinel code set must be non-empty")
    if any(c >= 0 for c in codes):
        raise ValueError(f"sentinel codes must all be negative: {sorted(codes)}")
    frame = table.frame.copy()
    numeric = frame.select_dtypes(include=[np.number]).columns
    for col in numeric:
        frame[col] = frame[col].where(~frame[col].isin(list(codes)), other=np.nan)
    return RawTable(frame=frame, provenance=table.provenance)


def route_imputation(missingness_pct: float, var_type: VarType) -> ImputationRoute:
    """Map a missingness fraction and variable type to an imputation route.

    Boundary handling is literal: strictly below 5% takes the simple
    route, the closed band [5%, 20%] takes chained equations, strictly
    above 20% adds a warning.
    """
    if not 0.0 <= missingness_pct <= 1.0:
        raise ValueError(f"missingness_pct {missingness_pct} outside [0, 1]")
    if missingness_pct == 0.0:
        method, warning = ImputationMethod.NONE, False
    elif missingness_pct < 0.05:
        simple = ImputationMethod.MEDIAN if var_type is VarType.CONTINUOUS else ImputationMethod.MODE
        method, warning = simple, False
    elif missingness_pct <= 0.20:
        method, warning = ImputationMethod.ITERATIVE, False
    else:
        method, warning = ImputationMethod.ITERATIVE, True
    return ImputationRoute(variable="", missingness_pct=missingness_pct, method=method, warning=warning)


def stratified_split(
    y: Sequence,
    test_fraction: float,
    seed: int,
    stratify: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/test index split.

    |test| is round-half-up(test_fraction * n), bumped by one row in the
    rare case rounding would land the realized fraction below the
    configured one. Stratified mode uses largest-remainder allocation per
    class, which keeps every class within one row of its proportional
    share.
    """
    values = np.asarray(y)
    n = len(values)
    if n < 2:
        raise DataPrepError(f"need at least 2 rows to split, got {n}")
    target = int(math.floor(test_fraction * n + 0.5))
    if target / n < test_fraction:
        target += 1
    target = min(max(target, 1), n - 1)
    rng = np.random.default_rng(seed)

    if not stratify:
        perm = rng.permutation(n)
        test_idx = np.sort(perm[:target])
        train_idx = np.sort(perm[target:])
        return train_idx, test_idx

    classes, counts = np.unique(values, return_counts=True)
    if (counts < 2).any():
        singletons = classes[counts < 2].tolist()
        raise StratificationImpossible(f"classes with a single member: {singletons}")
    ideals = test_fraction * counts
    base = np.floor(ideals).astype(int)
    base = np.minimum(base, counts - 1)
    remainder = target - int(base.sum())
    if remainder > 0:
        order = np.argsort(-(ideals - np.floor(ideals)), kind="stable")
        for idx in order:
            if remainder == 0:
                break
            if base[idx] < counts[idx] - 1:
                base[idx] += 1
                remainder -= 1
    test_parts = []
    for cls, take in zip(classes, base):
        members = np.flatnonzero(values == cls)
        picked = rng.permutation(len(members))[:take]
        test_parts.append(members[picked])
    test_idx = np.sort(np.concatenate(test_parts)) if test_parts else np.array([], dtype=int)
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask), test_idx


class ChainedImputer:
    """Chained-equations imputation with per-column least-squares models.

    Missing cells start at the column median; each round re-fits every
    incomplete column on all the others over the originally-observed rows
    and overwrites only the originally-missing cells. Columns are updated
    against a snapshot taken at the start of each round, so the result
    does not depend on column processing order. Observed cells never
    change. ``transform`` replays the fitted round/column coefficients on
    a second matrix, so test-set imputation uses training statistics only.
    """

    def __init__(self, iterations: int = ITERATIVE_ROUNDS, seed: int = 42):
        self.iterations = iterations
        self.seed = seed
        self.medians_: Optional[np.ndarray] = None
        self.models_: list[dict[int, np.ndarray]] = []

    def fit_transform(self, matrix: np.ndarray) -> np.ndarray:
        X = np.asarray(matrix, dtype=float).copy()
        if X.ndim != 2:
            raise ValueError("expected a 2-D matrix")
        n, p = X.shape
        miss = np.isnan(X)
        if miss.all(axis=0).any():
            bad = np.flatnonzero(miss.all(axis=0)).tolist()
            raise AllMissingColumn(f"columns with no observed values: {bad}")
        with np.errstate(all="ignore"):
            self.medians_ = np.nanmedian(X, axis=0)
        for j in range(p):
            X[miss[:, j], j] = self.medians_[j]
        self.models_ = []
        incomplete = [j for j in range(p) if miss[:, j].any()]
        if p < 2 or not incomplete:
            # No regressors (single column) or nothing missing: medians stand.
            return X
        for _ in range(self.iterations):
            snapshot = X.copy()
            round_models: dict[int, np.ndarray] = {}
            for j in incomplete:
                others = [k for k in range(p) if k != j]
                observed = ~miss[:, j]
                design = np.column_stack(
                    [np.ones(observed.sum()), snapshot[np.ix_(observed, others)]]
                )
                coef, *_ = np.linalg.lstsq(design, snapshot[observed, j], rcond=None)
                round_models[j] = coef
                target = np.column_stack(
                    [np.ones(int(miss[:, j].sum())), snapshot[np.ix_(miss[:, j], others)]]
                )
                X[miss[:, j], j] = target @ coef
            self.models_.append(round_models)
        return X

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        if self.medians_ is None:
            raise RuntimeError("fit_transform must run before transform")
        X = np.asarray(matrix, dtype=float).copy()
        n, p = X.shape
        if p != len(self.medians_):
            raise ValueError("column count differs from the fitted matrix")
        miss = np.isnan(X)
        for j in range(p):
            X[miss[:, j], j] = self.medians_[j]
        for round_models in self.models_:
            snapshot = X.copy()
            for j, coef in round_models.items():
                if not miss[:, j].any():
                    continue
                others = [k for k in range(p) if k != j]
                target = np.column_stack(
                    [np.ones(int(miss[:, j].sum())), snapshot[np.ix_(miss[:, j], others)]]
                )
                X[miss[:, j], j] = target @ coef
        return X


def impute_iterative(matrix: np.ndarray, iterations: int = ITERATIVE_ROUNDS, seed: int = 42) -> np.ndarray:
    """Chained-equations imputation of one matrix (see ChainedImputer)."""
    return ChainedImputer(iterations=iterations, seed=seed).fit_transform(matrix)


def _infer_var_type(series: pd.Series, registry: Registry, threshold: int) -> VarType:
    entry = registry.entry(str(series.name))
    if entry is not None:
        return entry.var_type
    distinct = series.dropna().unique()
    if len(distinct) == 2:
        return VarType.BINARY
    if 0 < len(distinct) <= threshold:
        return VarType.CATEGORICAL
    return VarType.CONTINUOUS


def _nearest_codes(values: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Snap each value to the nearest allowed code (ties to the lower one)."""
    pos = np.searchsorted(codes, values)
    pos = np.clip(pos, 0, len(codes) - 1)
    left = codes[np.clip(pos - 1, 0, len(codes) - 1)]
    right = codes[pos]
    return np.where(np.abs(values - left) <= np.abs(right - values), left, right)


def run_protocol(
    raw: RawTable,
    spec: ResearchSpec,
    registry: Registry,
    config: DataPrepConfig,
) -> tuple[PreparedSplits, DataReport]:
    """Execute the full preparation protocol. Raises Abort when the sample
    is too small, the complete-case share is too low, or validation fails.
    """
    outcome = spec.outcome.name.upper()
    predictors = [p.name.upper() for p in spec.predictors]
    subgroups = [s.upper() for s in spec.subgroup_dims]
    warnings: list[str] = []

    # Step 1: column selection. Subgroup-only columns ride along for the
    # protected-label file but never enter the model matrix.
    wanted = [outcome] + predictors + [s for s in subgroups if s not in predictors and s != outcome]
    missing_cols = [c for c in wanted if c not in raw.frame.columns]
    if missing_cols:
        raise Abort(f"columns missing from the raw table: {missing_cols}")
    frame = raw.frame[wanted].copy()
    n_original = len(frame)

    # Step 2: sentinel recoding.
    table = recode_sentinels(RawTable(frame=frame, provenance=raw.provenance), config.recode_codes)
    frame = table.frame

    # Step 3: the outcome is never imputed; rows without it leave the sample.
    frame = frame[frame[outcome].notna()].reset_index(drop=True)
    n_analytic = len(frame)
    if n_analytic < config.min_analytic_n:
        raise Abort(
            f"analytic sample {n_analytic} below the configured minimum {config.min_analytic_n}"
        )

    # Step 4: complete-case share, measured against the original sample.
    complete_cases = int(frame[predictors].notna().all(axis=1).sum())
    complete_fraction = complete_cases / n_original
    if complete_fraction < config.complete_case_min and not spec.structural_missingness:
        raise Abort(
            f"complete cases are {complete_fraction:.1%} of the original sample "
            f"(minimum {config.complete_case_min:.0%})"
        )

    # Step 5: per-predictor missingness and routing.
    routes: list[ImputationRoute] = []
    var_types: dict[str, VarType] = {}
    for name in predictors:
        pct = float(frame[name].isna().mean())
        vtype = _infer_var_type(frame[name], registry, config.categorical_threshold)
        var_types[name] = vtype
        route = replace(route_imputation(pct, vtype), variable=name)
        routes.append(route)
        if route.warning:
            warnings.append(
                f"{name}: {pct:.1%} missing exceeds 20%; imputed values dominate this predictor"
            )

    # Step 6: split before any encoding or transformation.
    task = spec.outcome.task
    stratify = task is TaskType.CLASSIFICATION
    if stratify:
        counts = frame[outcome].value_counts()
        if (counts < 2).any():
            raise StratificationImpossible(
                f"outcome classes with a single member: {counts[counts < 2].index.tolist()}"
            )
    train_idx, test_idx = stratified_split(
        frame[outcome].to_numpy(), config.test_fraction, config.seed, stratify
    )

    # Step 7: protected labels keep their pre-encoding values, test rows only.
    protected = frame.loc[test_idx, subgroups].reset_index(drop=True).copy() if subgroups else pd.DataFrame(index=range(len(test_idx)))

    train = frame.loc[train_idx, predictors].reset_index(drop=True).copy()
    test = frame.loc[test_idx, predictors].reset_index(drop=True).copy()
    train_y = frame.loc[train_idx, outcome].reset_index(drop=True)
    test_y = frame.loc[test_idx, outcome].reset_index(drop=True)

    # Step 8: imputation, statistics fit on the training rows only.
    simple_cols = [r.variable for r in routes if r.method in (ImputationMethod.MEDIAN, ImputationMethod.MODE)]
    for route in routes:
        name = route.variable
        if route.method is ImputationMethod.MEDIAN:
            stat = float(train[name].median())
            train[name] = train[name].fillna(stat)
            test[name] = test[name].fillna(stat)
        elif route.method is ImputationMethod.MODE:
            observed = train[name].dropna()
            stat = float(observed.mode().min())
            train[name] = train[name].fillna(stat)
            test[name] = test[name].fillna(stat)

    iterative_cols = [r.variable for r in routes if r.method is ImputationMethod.ITERATIVE]
    if iterative_cols:
        imputer = ChainedImputer(iterations=config.iterations, seed=config.seed)
        train_miss = {c: train[c].isna().to_numpy() for c in predictors}
        test_miss = {c: test[c].isna().to_numpy() for c in predictors}
        train_filled = imputer.fit_transform(train[predictors].to_numpy(dtype=float))
        test_filled = imputer.transform(test[predictors].to_numpy(dtype=float))
        for k, name in enumerate(predictors):
            train[name] = train_filled[:, k]
            test[name] = test_filled[:, k]
        # Categorical codes imputed by regression snap back to the nearest
        # code observed in training, so later encoding sees valid levels.
        for name in iterative_cols:
            if var_types[name] in (VarType.BINARY, VarType.CATEGORICAL):
                codes = np.sort(train.loc[~train_miss[name], name].unique())
                if train_miss[name].any():
                    train.loc[train_miss[name], name] = _nearest_codes(
                        train.loc[train_miss[name], name].to_numpy(), codes
                    )
                if test_miss[name].any():
                    test.loc[test_miss[name], name] = _nearest_codes(
                        test.loc[test_miss[name], name].to_numpy(), codes
                    )

    # Step 9: one-hot encoding, all levels kept, levels fixed by training data.
    train_X_parts: list[pd.DataFrame] = []
    test_X_parts: list[pd.DataFrame] = []
    post_count = 0
    for name in predictors:
        if var_types[name] is VarType.CATEGORICAL:
            levels = sorted(train[name].unique())
            unseen = set(test[name].unique()) - set(levels)
            if unseen:
                warnings.append(f"{name}: test-only levels {sorted(unseen)} encode to all zeros")
            for level in levels:
                col = f"{name}_{level:g}"
                train_X_parts.append((train[name] == level).astype(int).rename(col).to_frame())
                test_X_parts.append((test[name] == level).astype(int).rename(col).to_frame())
            post_count += len(levels)
        else:
            train_X_parts.append(train[[name]].astype(float))
            test_X_parts.append(test[[name]].astype(float))
            post_count += 1
    train_X = pd.concat(train_X_parts, axis=1)
    test_X = pd.concat(test_X_parts, axis=1)

    # Step 10: validation checklist.
    problems: list[str] = []
    if train_X.isna().any().any() or test_X.isna().any().any():
        problems.append("missing values remain after imputation")
    if train_y.isna().any() or test_y.isna().any():
        problems.append("missing outcome values survived the outcome filter")
    zero_var = [c for c in train_X.columns if train_X[c].nunique() <= 1]
    if zero_var:
        problems.append(f"zero-variance predictors after encoding: {zero_var}")
    if list(train_X.columns) != list(test_X.columns):
        problems.append("train/test column sets differ")
    realized_fraction = len(test_idx) / n_analytic
    if realized_fraction < config.test_fraction:
        problems.append(f"test share {realized_fraction:.3f} below {config.test_fraction}")
    if task is TaskType.CLASSIFICATION:
        observed = set(pd.concat([train_y, test_y]).unique())
        if not observed <= {0, 1}:
            problems.append(f"classification outcome values outside {{0, 1}}: {sorted(observed)}")
    else:
        entry = registry.entry(outcome)
        if entry is not None and entry.value_range is not None:
            lo, hi = entry.value_range
            values = pd.concat([train_y, test_y])
            if (values < lo).any() or (values > hi).any():
                problems.append(f"outcome values outside the registry range [{lo}, {hi}]")
    if len(protected) != len(test_idx):
        problems.append("protected-label rows do not match the test rows")

    class_balance = None
    if task is TaskType.CLASSIFICATION:
        balance = frame[outcome].value_counts(normalize=True).sort_index()
        class_balance = {f"{k:g}": float(v) for k, v in balance.items()}

    report = DataReport(
        n_original=n_original,
        n_analytic=n_analytic,
        n_train=len(train_idx),
        n_test=len(test_idx),
        per_variable=routes,
        class_balance=class_balance,
        predictors_pre_encoding=len(predictors),
        predictors_post_encoding=post_count,
        warnings=warnings,
        validation_passed=not problems,
    )
    if problems:
        raise Abort("validation failed: " + "; ".join(problems))

    if task is TaskType.CLASSIFICATION:
        train_y = train_y.astype(int)
        test_y = test_y.astype(int)
    splits = PreparedSplits(
        train_X=train_X,
        test_X=test_X,
        train_y=train_y.rename(outcome),
        test_y=test_y.rename(outcome),
        protected=protected,
        seed=config.seed,
    )
    return splits, report


def write_outputs(splits: PreparedSplits, report: DataReport, out_dir: str | Path) -> list[str]:
    """Write the split CSVs and data_report.json; returns the file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits.train_X.to_csv(out / "train_X.csv", index=False)
    splits.test_X.to_csv(out / "test_X.csv", index=False)
    splits.train_y.to_frame().to_csv(out / "train_y.csv", index=False)
    splits.test_y.to_frame().to_csv(out / "test_y.csv", index=False)
    splits.protected.to_csv(out / "test_protected.csv", index=False)
    (out / "data_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return [
        "train_X.csv",
        "test_X.csv",
        "train_y.csv",
        "test_y.csv",
        "test_protected.csv",
        "data_report.json",
    ]
