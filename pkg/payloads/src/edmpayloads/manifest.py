"""Payload manifests: what a payload script is called, which artifacts a
clean run must leave in the working directory, and which phase sentinels
it may print for the engine's failure classifier."""

from __future__ import annotations

from dataclasses import dataclass

#: Stderr sentinel a payload prints before entering a long explainer
#: phase. Protocol constant shared with the engine's error taxonomy: if
#: the run then dies or is killed, the failure classifies as an explainer
#: timeout rather than a generic runtime error.
SHAP_TIMEOUT_SENTINEL = "[SHAP_TIMEOUT]"

DESK_BATTERY: tuple[str, ...] = ("logistic_regression", "random_forest", "stacking_ensemble")
FULL_BATTERY: tuple[str, ...] = (
    "logistic_regression",
    "random_forest",
    "gradient_boosting",
    "elastic_net",
    "mlp",
    "stacking_ensemble",
)
DESK_BATTERY_REGRESSION: tuple[str, ...] = ("ridge_regression", "random_forest", "stacking_ensemble")

SPLIT_INPUTS: tuple[str, ...] = (
    "train_X.csv",
    "train_y.csv",
    "test_X.csv",
    "test_y.csv",
    "test_protected.csv",
)


@dataclass(frozen=True)
class PayloadManifest:
    script_name: str
    expected_artifacts: tuple[str, ...]
    phase_sentinels: tuple[str, ...] = ()


def reference_manifest(task: str, battery: tuple[str, ...]) -> PayloadManifest:
    artifacts = ["results.json", "metrics_summary.csv"]
    artifacts += [f"predictions_{name}.csv" for name in battery]
    if task == "classification":
        artifacts += [f"roc_points_{name}.csv" for name in battery]
        artifacts.append("roc_curves.png")
    else:
        artifacts.append("pred_vs_true.png")
    return PayloadManifest(
        script_name="reference_analysis.py",
        expected_artifacts=tuple(artifacts),
    )


def failing_manifest(mode: str) -> PayloadManifest:
    sentinels = (SHAP_TIMEOUT_SENTINEL,) if mode == "SHAPTimeout" else ()
    return PayloadManifest(
        script_name=f"failing_{mode.lower()}.py",
        expected_artifacts=(),
        phase_sentinels=sentinels,
    )
