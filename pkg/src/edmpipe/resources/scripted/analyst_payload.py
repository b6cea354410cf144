"""Analysis script: desk-scale model battery on the prepared splits.

Reads train_X.csv, train_y.csv, test_X.csv, test_y.csv, test_protected.csv
from the working directory; writes results.json, per-model prediction
CSVs, roc_points_*.csv, metrics_summary.csv, and roc_curves.png.
"""

import json

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from sklearn.ensemble import RandomForestClassifier, StackingClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import (
    accuracy_score,
    f1_score,
    precision_score,
    recall_score,
    roc_auc_score,
    roc_curve,
)
from sklearn.model_selection import GridSearchCV

SEED = 42
RESAMPLES = 300
BATTERY = ["logistic_regression", "random_forest", "stacking_ensemble"]

train_X = pd.read_csv("train_X.csv")
test_X = pd.read_csv("test_X.csv")
train_y = pd.read_csv("train_y.csv").iloc[:, 0].to_numpy()
test_y = pd.read_csv("test_y.csv").iloc[:, 0].to_numpy()
protected = pd.read_csv("test_protected.csv")

models = {}
models["logistic_regression"] = GridSearchCV(
    LogisticRegression(max_iter=5000, random_state=SEED),
    {"C": [0.1, 1.0]},
    cv=5,
    n_jobs=1,
)
models["random_forest"] = GridSearchCV(
    RandomForestClassifier(n_estimators=100, random_state=SEED),
    {"max_depth": [None, 8]},
    cv=5,
    n_jobs=1,
)
models["stacking_ensemble"] = StackingClassifier(
    estimators=[
        ("lr", LogisticRegression(max_iter=5000, random_state=SEED)),
        ("rf", RandomForestClassifier(n_estimators=100, random_state=SEED)),
    ],
    final_estimator=LogisticRegression(max_iter=5000, random_state=SEED),
    cv=5,
)


def point_metrics(y_true, scores, labels):
    return {
        "auc": float(roc_auc_score(y_true, scores)),
        "accuracy": float(accuracy_score(y_true, labels)),
        "precision": float(precision_score(y_true, labels, zero_division=0)),
        "recall": float(recall_score(y_true, labels, zero_division=0)),
        "f1": float(f1_score(y_true, labels, zero_division=0)),
    }


def bootstrap_cis(y_true, scores, labels, seed):
    rng = np.random.default_rng(seed)
    draws = {k: [] for k in ["auc", "accuracy", "precision", "recall", "f1"]}
    n = len(y_true)
    for _ in range(RESAMPLES):
        idx = rng.integers(0, n, size=n)
        if len(np.unique(y_true[idx])) < 2:
            continue
        sampled = point_metrics(y_true[idx], scores[idx], labels[idx])
        for key, value in sampled.items():
            draws[key].append(value)
    return {
        key: [float(np.percentile(vals, 2.5)), float(np.percentile(vals, 97.5))]
        for key, vals in draws.items()
        if vals
    }


results_models = []
roc_fig, roc_ax = plt.subplots(figsize=(6, 5))
score_by_model = {}
summary_rows = []

for name in BATTERY:
    model = models[name]
    model.fit(train_X, train_y)
    scores = model.predict_proba(test_X)[:, 1]
    labels = model.predict(test_X)
    score_by_model[name] = scores

    pred_file = f"predictions_{name}.csv"
    pd.DataFrame({"y_true": test_y, "score": scores, "label": labels}).to_csv(
        pred_file, index=False
    )
    fpr, tpr, _ = roc_curve(test_y, scores)
    pd.DataFrame({"fpr": fpr, "tpr": tpr}).to_csv(f"roc_points_{name}.csv", index=False)
    roc_ax.plot(fpr, tpr, label=name)

    fitted = model.best_estimator_ if isinstance(model, GridSearchCV) else model
    importance = []
    if hasattr(fitted, "feature_importances_"):
        pairs = zip(train_X.columns, fitted.feature_importances_)
        importance = [{"feature": f, "value": float(v)} for f, v in pairs]
    elif hasattr(fitted, "coef_"):
        pairs = zip(train_X.columns, np.abs(fitted.coef_).ravel())
        importance = [{"feature": f, "value": float(v)} for f, v in pairs]
    importance.sort(key=lambda item: -item["value"])

    point = point_metrics(test_y, scores, labels)
    summary_rows.append({"model": name, **point})
    results_models.append(
        {
            "name": name,
            "metrics": point,
            "ci": bootstrap_cis(test_y, scores, labels, SEED),
            "n_test": int(len(test_y)),
            "prediction_file": pred_file,
            "importance": importance,
        }
    )

roc_ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
roc_ax.set_xlabel("False positive rate")
roc_ax.set_ylabel("True positive rate")
roc_ax.legend()
roc_fig.tight_layout()
roc_fig.savefig("roc_curves.png", dpi=120)

pd.DataFrame(summary_rows).to_csv("metrics_summary.csv", index=False)

best = max(results_models, key=lambda m: (m["metrics"]["auc"], -BATTERY.index(m["name"])))
best_scores = score_by_model[best["name"]]

subgroups = []
for attribute in protected.columns:
    raw = protected[attribute]
    labels_col = raw.map(lambda v: str(int(v)) if float(v).is_integer() else str(v))
    groups = []
    reliable_values = []
    for group_label in sorted(labels_col.unique()):
        mask = (labels_col == group_label).to_numpy()
        n = int(mask.sum())
        if len(np.unique(test_y[mask])) < 2:
            value = None
        else:
            value = float(roc_auc_score(test_y[mask], best_scores[mask]))
        unreliable = n < 50 or value is None
        if not unreliable:
            reliable_values.append(value)
        groups.append({"label": group_label, "n": n, "value": value, "unreliable": unreliable})
    max_gap = float(max(reliable_values) - min(reliable_values)) if len(reliable_values) >= 2 else 0.0
    subgroups.append(
        {
            "attribute": attribute,
            "metric": "auc",
            "groups": groups,
            "max_gap": max_gap,
            "gap_flagged": max_gap > 0.05,
        }
    )

nonstacking = [m for m in results_models if m["name"] != "stacking_ensemble"]
ranking_source = max(nonstacking, key=lambda m: m["metrics"]["auc"])

results = {
    "task": "classification",
    "models": results_models,
    "best_model": best["name"],
    "importance_rankings": ranking_source["importance"],
    "subgroups": subgroups,
    "figures": ["roc_curves.png"],
    "tables": ["metrics_summary.csv"],
    "warnings": ["expensive explainer phase skipped at desk scale"],
    "errors": [],
}
with open("results.json", "w") as handle:
    json.dump(results, handle, indent=2, sort_keys=True)
print("analysis complete:", best["name"])
