"""Synthetic fixture generation: an HSLS-shaped raw table plus a matching
registry document, sized for desk-scale offline runs.

The table carries wave-prefixed columns across all four waves, negative
sentinel codes injected at per-column rates, a binary outcome drawn from
a known linear-logistic model over three designated signal predictors,
protected attribute columns, and decoy columns (weights, identifiers)
that the registry's exclusion rules must catch.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .registry import (
    ExclusionRules,
    Registry,
    Source,
    Tier,
    VariableEntry,
    VarType,
    WaveOrder,
    save_registry,
)

WAVES = ("base_year", "first_follow_up", "second_follow_up", "update_panel")
SENTINELS = {-1: "legitimate skip", -4: "nonrespondent", -5: "out of range",
              -6: "component not applicable", -7: "not administered",
              -8: "unit non-response", -9: "missing"}
INJECTED_CODES = (-9, -8, -7, -4, -1)

#: The outcome is a Bernoulli draw on a logistic index over these three
#: columns; everything else is noise by construction.
SIGNAL_COEFS = {"X1TXMTSCOR": 1.1, "X1SES": 0.9, "X1SCHOOLBEL": 0.7}
SIGNAL_INTERCEPT = -0.3

CSV_NAME = "hsls_synth.csv"
REGISTRY_NAME = "hsls_synth_registry.yaml"
CONFIG_NAME = "config.yaml"

#: (column, missingness rate) for sentinel injection. The default study
#: predictors jointly keep the complete-case share near 66%, safely above
#: the 60% abort line; X2TXMTSCOR exceeds 20% on purpose so the
#: warning route stays reachable.
MISSING_RATES = {
    "X1TXMTSCOR": 0.03,
    "X1SES": 0.08,
    "X1SCHOOLBEL": 0.06,
    "S1HRSHOMEWK": 0.02,
    "S1SCIINT": 0.04,
    "S2ABSENT": 0.06,
    "P1EDUEXPECT": 0.07,
    "X2TXMTSCOR": 0.25,
    "X3TGPATOT": 0.10,
    "X4EVRATNDCLG": 0.10,
}


def gen_fixture(rows: int, seed: int, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the synthetic CSV and its registry; returns both paths."""
    if rows < 50:
        raise ValueError(f"need at least 50 rows for a usable fixture, got {rows}")
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    mt = rng.normal(0.0, 1.0, rows)
    ses = rng.normal(0.0, 0.8, rows)
    belong = rng.normal(0.0, 1.0, rows)
    frame = pd.DataFrame(
        {
            "STU_ID": np.arange(10001, 10001 + rows),
            "W1STUDENT": np.round(rng.uniform(50, 500, rows), 2),
            "W2W1STU": np.round(rng.uniform(50, 500, rows), 2),
            "X1TXMTSCOR": np.round(mt, 4),
            "X1SES": np.round(ses, 4),
            "X1SCHOOLBEL": np.round(belong, 4),
            "S1HRSHOMEWK": rng.poisson(6.0, rows).astype(float),
            "S1SCIINT": rng.integers(0, 2, rows).astype(float),
            "P1EDUEXPECT": rng.choice([1, 2, 3, 4], size=rows, p=[0.2, 0.3, 0.3, 0.2]).astype(float),
            "X1SEX": rng.choice([1, 2], size=rows).astype(float),
            "X1RACE": rng.choice([1, 2, 3, 4], size=rows, p=[0.5, 0.2, 0.15, 0.15]).astype(float),
            "S2ABSENT": rng.poisson(3.0, rows).astype(float),
            "X2TXMTSCOR": np.round(0.7 * mt + rng.normal(0.0, 0.7, rows), 4),
            "X3TGPATOT": np.round(np.clip(rng.normal(2.8, 0.6, rows), 0.0, 4.0), 4),
        }
    )
    index = SIGNAL_INTERCEPT + sum(coef * frame[name] for name, coef in SIGNAL_COEFS.items())
    prob = 1.0 / (1.0 + np.exp(-index))
    frame["X4EVRATNDCLG"] = (rng.random(rows) < prob).astype(float)

    for column, rate in MISSING_RATES.items():
        count = int(round(rate * rows))
        hit = rng.choice(rows, size=count, replace=False)
        codes = rng.choice(INJECTED_CODES, size=count)
        frame.loc[hit, column] = codes.astype(float)

    csv_path = out / CSV_NAME
    frame.to_csv(csv_path, index=False)

    registry_path = out / REGISTRY_NAME
    save_registry(fixture_registry(), registry_path)
    return csv_path, registry_path


def fixture_registry() -> Registry:
    wave_order = WaveOrder(
        waves=WAVES,
        prefix_waves={"1": WAVES[0], "2": WAVES[1], "3": WAVES[2], "4": WAVES[3]},
        prefix_sources={
            "X": Source.COMPOSITE,
            "S": Source.STUDENT,
            "P": Source.PARENT,
            "T": Source.TEACHER,
            "M": Source.TEACHER,
        },
    )
    exclusions = ExclusionRules(
        exact=frozenset({"STU_ID", "SCH_ID", "STRAT_ID", "PSU", "W1STUDENT", "W2W1STU"}),
        prefixes=frozenset({"W1", "W2", "W3", "W4"}),
        suffixes=frozenset({"WT", "WGT"}),
    )

    def t1(name, label, vtype, wave, miss, source, notes, values=None, rng=None):
        return VariableEntry(
            name=name, label=label, tier=Tier.TIER1, var_type=vtype, wave=wave,
            missingness_pct=miss, value_map=values, source=source, notes=notes,
            value_range=rng,
        )

    entries = [
        t1("X1TXMTSCOR", "Mathematics assessment theta score, base year",
           VarType.CONTINUOUS, WAVES[0], 0.03, Source.COMPOSITE,
           "Standardized ability estimate; suitable as a continuous outcome or predictor.",
           rng=(-4.0, 4.0)),
        t1("X1SES", "Socioeconomic status composite, base year",
           VarType.CONTINUOUS, WAVES[0], 0.08, Source.COMPOSITE,
           "Composite of parental education, occupation, and income."),
        t1("X1SCHOOLBEL", "Sense of school belonging scale, base year",
           VarType.CONTINUOUS, WAVES[0], 0.06, Source.COMPOSITE,
           "Scale score from student engagement items; higher is stronger belonging."),
        t1("S1HRSHOMEWK", "Hours of homework per week, base year",
           VarType.CONTINUOUS, WAVES[0], 0.02, Source.STUDENT,
           "Student-reported weekly homework hours across subjects."),
        t1("S1SCIINT", "Interested in science courses, base year",
           VarType.BINARY, WAVES[0], 0.04, Source.STUDENT,
           "Student-reported interest indicator.", values={0: "no", 1: "yes"}),
        t1("P1EDUEXPECT", "Parent education expectation, base year",
           VarType.CATEGORICAL, WAVES[0], 0.07, Source.PARENT,
           "Highest education level the parent expects the student to reach.",
           values={1: "high school", 2: "associate", 3: "bachelor", 4: "graduate"}),
        t1("X1SEX", "Student sex, base year",
           VarType.BINARY, WAVES[0], 0.0, Source.COMPOSITE,
           "Protected attribute used for subgroup analysis.",
           values={1: "male", 2: "female"}),
        t1("X1RACE", "Student race/ethnicity, base year",
           VarType.CATEGORICAL, WAVES[0], 0.0, Source.COMPOSITE,
           "Protected attribute used for subgroup analysis.",
           values={1: "white", 2: "hispanic", 3: "black", 4: "asian"}),
        t1("X1PAREDU", "Highest parental education, base year",
           VarType.CATEGORICAL, WAVES[0], 0.05, Source.COMPOSITE,
           "Five-level parental education composite.",
           values={1: "less than HS", 2: "high school", 3: "associate",
                   4: "bachelor", 5: "graduate"}),
        t1("M1MTHEFF", "Math teacher self-efficacy scale, base year",
           VarType.CONTINUOUS, WAVES[0], 0.09, Source.TEACHER,
           "Teacher-reported efficacy scale for the student's math class."),
        t1("X2TXMTSCOR", "Mathematics assessment theta score, first follow-up",
           VarType.CONTINUOUS, WAVES[1], 0.25, Source.COMPOSITE,
           "Follow-up ability estimate; heavy missingness from wave attrition.",
           rng=(-4.0, 4.0)),
        t1("X3TGPATOT", "Overall transcript GPA, second follow-up",
           VarType.CONTINUOUS, WAVES[2], 0.10, Source.COMPOSITE,
           "Transcript-derived cumulative GPA on a 0-4 scale.", rng=(0.0, 4.0)),
        t1("X3TGPAMAT", "Mathematics transcript GPA, second follow-up",
           VarType.CONTINUOUS, WAVES[2], 0.12, Source.COMPOSITE,
           "Math-course GPA; near-duplicate composite of the overall GPA.",
           rng=(0.0, 4.0)),
        t1("X4EVRATNDCLG", "Ever attended college by the update panel",
           VarType.BINARY, WAVES[3], 0.10, Source.COMPOSITE,
           "Primary postsecondary enrollment outcome.", values={0: "no", 1: "yes"}),
        t1("X4PSLAST", "Last postsecondary enrollment intensity, update panel",
           VarType.CATEGORICAL, WAVES[3], 0.18, Source.COMPOSITE,
           "Enrollment intensity at last known postsecondary spell.",
           values={1: "full-time", 2: "part-time", 3: "mixed"}),
        VariableEntry(
            name="S2ABSENT", label="S2ABSENT", tier=Tier.TIER2,
            var_type=VarType.CONTINUOUS, wave=WAVES[1], missingness_pct=0.06,
            source=Source.STUDENT,
        ),
        VariableEntry(
            name="X2BEHAVIN", label="X2BEHAVIN", tier=Tier.TIER2,
            var_type=VarType.CONTINUOUS, wave=WAVES[1], missingness_pct=0.11,
            source=Source.COMPOSITE,
        ),
    ]
    return Registry(
        dataset="hsls_synth",
        entries={e.name: e for e in entries},
        wave_order=wave_order,
        exclusions=exclusions,
        canonical_questions=(
            "Which base-year student factors predict postsecondary enrollment by the update panel?",
            "How well do 9th-grade achievement and engagement measures predict later transcript GPA?",
            "Do prediction models for college enrollment perform equitably across demographic subgroups?",
        ),
        common_pitfalls=(
            "Do not model same-wave transcript composites against each other; they share source records.",
            "Survey weights and replicate weights are design variables, never predictors.",
        ),
        pitfall_pairs=frozenset({("X3TGPATOT", "X3TGPAMAT")}),
        sentinel_codes=dict(SENTINELS),
    )


def write_demo_config(out_dir: str | Path) -> Path:
    """Write a ready-to-run offline config next to the generated fixture."""
    out = Path(out_dir)
    scripted = resources.files("edmpipe") / "resources" / "scripted"
    doc = {
        "dataset": "fixture",
        "datasets": {
            "fixture": {"data": CSV_NAME, "registry": REGISTRY_NAME},
        },
        "output_root": "output",
        "seed": 42,
        "min_analytic_n": 200,
        "bootstrap_resamples": 300,
        "backend": {
            "mode": "scripted",
            "scripted_file": str(scripted / "demo_run.yaml"),
        },
        "literature": {
            "mode": "fixture",
            "fixture_file": str(scripted / "literature_fixture.json"),
        },
        "expected_models": ["logistic_regression", "random_forest", "stacking_ensemble"],
    }
    path = out / CONFIG_NAME
    path.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="edmpipe-fixture",
        description="Generate the synthetic survey fixture (CSV + registry + demo config).",
    )
    parser.add_argument("--rows", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--out", default="demo", help="output directory")
    parser.add_argument("--no-config", action="store_true",
                        help="skip writing the demo config.yaml")
    args = parser.parse_args(argv)
    csv_path, registry_path = gen_fixture(args.rows, args.seed, args.out)
    print(f"wrote {csv_path}")
    print(f"wrote {registry_path}")
    if not args.no_config:
        config_path = write_demo_config(args.out)
        print(f"wrote {config_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
