"""Payload script generation.

``reference_analysis_script`` renders the standalone analysis script a
code-generating agent would produce: it reads the prepared splits from
its working directory, trains the configured battery, and writes the
result artifacts the engine ingests. ``failing_payload`` renders tiny
scripts that fail deterministically with stderr matching exactly one
member of the engine's error taxonomy; they exist so failure handling
can be exercised end to end.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path
from string import Template
from typing import Sequence

from .manifest import (
    DESK_BATTERY,
    DESK_BATTERY_REGRESSION,
    SHAP_TIMEOUT_SENTINEL,
    PayloadManifest,
)

TASKS = ("classification", "regression")


def _template_text() -> str:
    return (resources.files("edmpayloads") / "templates" / "reference_analysis.py.tmpl").read_text(
        encoding="utf-8"
    )


def reference_analysis_script(
    task: str = "classification",
    battery: Sequence[str] | None = None,
    seed: int = 42,
    resamples: int = 300,
) -> str:
    """Render the reference analysis script for one task and battery."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if battery is None:
        battery = DESK_BATTERY if task == "classification" else DESK_BATTERY_REGRESSION
    battery = list(battery)
    if not battery:
        raise ValueError("battery must name at least one model")
    return Template(_template_text()).substitute(
        task=task,
        battery=repr(battery),
        seed=int(seed),
        resamples=int(resamples),
    )


#: Scripts that fail with stderr classifiable into exactly one taxonomy
#: member. Real exceptions are raised where a genuine trigger exists;
#: the warning and sentinel classes print their canonical marker and
#: exit nonzero, mirroring how those failures surface in practice.
_FAILING_BODIES: dict[str, str] = {
    "ImportError": "import a_module_that_does_not_exist_anywhere\n",
    "MemoryError": 'raise MemoryError("simulated allocation failure")\n',
    "ConvergenceWarning": (
        "import sys\n"
        'sys.stderr.write("ConvergenceWarning: solver did not converge after 2000 iterations\\n")\n'
        "sys.exit(2)\n"
    ),
    "FileNotFoundError": (
        "with open('an_input_that_was_never_staged.csv') as handle:\n"
        "    handle.read()\n"
    ),
    "SHAPTimeout": (
        "import sys\n"
        f'sys.stderr.write("{SHAP_TIMEOUT_SENTINEL} entering explainer phase\\n")\n'
        "sys.stderr.flush()\n"
        "sys.exit(3)\n"
    ),
    "ValueError": 'raise ValueError("simulated shape mismatch in model input")\n',
    "TypeError": 'raise TypeError("simulated argument mismatch in helper call")\n',
    "RuntimeError": (
        "import sys\n"
        'sys.stderr.write("segmentation fault (simulated hard crash)\\n")\n'
        "sys.exit(139)\n"
    ),
}

FAILING_MODES: tuple[str, ...] = tuple(_FAILING_BODIES)


def failing_payload(mode: str) -> str:
    """A script guaranteed to exit nonzero with stderr in class ``mode``."""
    if mode not in _FAILING_BODIES:
        raise ValueError(f"unknown failure mode {mode!r}; expected one of {FAILING_MODES}")
    return f'"""Deterministic {mode} failure payload (generated)."""\n' + _FAILING_BODIES[mode]


def write_payload(text: str, workdir: str | Path, manifest: PayloadManifest) -> Path:
    path = Path(workdir) / manifest.script_name
    path.write_text(text, encoding="utf-8")
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="edmpayloads-gen",
        description="Render a payload script to stdout or a file.",
    )
    parser.add_argument("--mode", default="reference",
                        help=f"'reference' or one of {', '.join(FAILING_MODES)}")
    parser.add_argument("--task", default="classification", choices=TASKS)
    parser.add_argument("--full-battery", action="store_true",
                        help="render the six-model battery instead of the desk-scale three")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--resamples", type=int, default=300)
    parser.add_argument("--out", help="write to this path instead of stdout")
    args = parser.parse_args(argv)

    if args.mode == "reference":
        battery = None
        if args.full_battery:
            from .manifest import FULL_BATTERY

            battery = FULL_BATTERY
        text = reference_analysis_script(
            task=args.task, battery=battery, seed=args.seed, resamples=args.resamples
        )
    else:
        text = failing_payload(args.mode)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
