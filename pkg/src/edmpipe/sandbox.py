"""Sandboxed execution of generated analysis scripts with self-repair.

Scripts run in an isolated working directory under a wall-clock timeout,
either in a container (networking disabled, workdir bind-mounted) or as
a plain subprocess. Subprocess mode cannot truly deny network access, so
scripts are lint-checked for network tokens before execution and refused
when they match; the residual gap is documented rather than hidden.

Failures are classified into a fixed taxonomy by first-match over an
ordered pattern table; every class carries a targeted repair prompt that
the retry loop appends to the next generation request together with the
verbatim stderr. The loop stops at the first clean run or after the
attempt cap.
"""

from __future__ import annotations

import logging
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0
DEFAULT_MAX_ATTEMPTS = 3

#: Sentinel payloads print to stderr before entering a long explainer
#: phase; if the run then dies or times out, the failure classifies as an
#: explainer timeout instead of a generic runtime error.
SHAP_TIMEOUT_SENTINEL = "[SHAP_TIMEOUT]"


class SandboxError(Exception):
    pass


class IsolationUnavailable(SandboxError):
    pass


class RepairExhausted(SandboxError):
    def __init__(self, attempts: list["AttemptRecord"]):
        self.attempts = attempts
        super().__init__(f"script still failing after {len(attempts)} attempts")


class Isolation(str, Enum):
    SUBPROCESS = "subprocess"
    CONTAINER = "container"


class ExecutionStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecutionStatus
    exit_code: int
    stdout: str
    stderr: str
    duration: float
    artifacts: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is ExecutionStatus.OK


class ErrorCategory(str, Enum):
    IMPORT_ERROR = "ImportError"
    MEMORY_ERROR = "MemoryError"
    CONVERGENCE_WARNING = "ConvergenceWarning"
    FILE_NOT_FOUND = "FileNotFoundError"
    SHAP_TIMEOUT = "SHAPTimeout"
    VALUE_ERROR = "ValueError"
    TYPE_ERROR = "TypeError"
    RUNTIME_ERROR = "RuntimeError"


@dataclass(frozen=True)
class ErrorClass:
    category: ErrorCategory
    matched_pattern: str


#: First match in this order wins; anything unmatched is a RuntimeError.
_PATTERN_TABLE: tuple[tuple[ErrorCategory, tuple[str, ...]], ...] = (
    (ErrorCategory.IMPORT_ERROR, ("ImportError", "ModuleNotFoundError")),
    (ErrorCategory.MEMORY_ERROR, ("MemoryError", "Unable to allocate")),
    (ErrorCategory.CONVERGENCE_WARNING, ("ConvergenceWarning", "did not converge")),
    (ErrorCategory.FILE_NOT_FOUND, ("FileNotFoundError", "No such file or directory")),
    (ErrorCategory.SHAP_TIMEOUT, (SHAP_TIMEOUT_SENTINEL,)),
    (ErrorCategory.VALUE_ERROR, ("ValueError",)),
    (ErrorCategory.TYPE_ERROR, ("TypeError",)),
)

REPAIR_PROMPTS: dict[ErrorCategory, str] = {
    ErrorCategory.IMPORT_ERROR: (
        "The script imports a module that is not installed. Rewrite it using only "
        "the standard scientific stack (numpy, pandas, scikit-learn, matplotlib)."
    ),
    ErrorCategory.MEMORY_ERROR: (
        "The script ran out of memory. Reduce memory use: avoid densifying large "
        "matrices, lower estimator counts, and process data in smaller pieces."
    ),
    ErrorCategory.CONVERGENCE_WARNING: (
        "A solver failed to converge. Increase max_iter, scale the inputs, or "
        "switch to a more robust solver configuration."
    ),
    ErrorCategory.FILE_NOT_FOUND: (
        "The script referenced a file that does not exist. Read inputs only from "
        "the working directory using the exact documented file names, and create "
        "output directories before writing."
    ),
    ErrorCategory.SHAP_TIMEOUT: (
        "The importance-explanation phase exceeded its time budget. Skip the "
        "expensive explainer, record the skip in the results warnings, and keep "
        "the rest of the analysis."
    ),
    ErrorCategory.VALUE_ERROR: (
        "A ValueError was raised. Check array shapes, dtypes, and NaN handling "
        "before fitting or scoring."
    ),
    ErrorCategory.TYPE_ERROR: (
        "A TypeError was raised. Check function signatures and argument types, "
        "especially DataFrame-vs-array mismatches."
    ),
    ErrorCategory.RUNTIME_ERROR: (
        "The script failed at runtime. Read the traceback, fix the root cause, "
        "and keep all required output files."
    ),
}

#: Tokens whose presence fails the pre-execution network lint. Generated
#: analysis code has no legitimate use for sockets or HTTP clients.
NETWORK_TOKENS: tuple[str, ...] = (
    "import socket",
    "import requests",
    "import httpx",
    "import urllib",
    "from urllib",
    "http.client",
    "ftplib",
    "smtplib",
    "aiohttp",
    "urlopen",
)


def lint_network(script_text: str) -> list[str]:
    """Return the network tokens found in the script (empty means clean)."""
    return [token for token in NETWORK_TOKENS if token in script_text]


def classify_error(stderr: str) -> ErrorClass:
    """Total, deterministic classification of a failure's stderr text."""
    for category, patterns in _PATTERN_TABLE:
        for pattern in patterns:
            if pattern in stderr:
                return ErrorClass(category=category, matched_pattern=pattern)
    return ErrorClass(category=ErrorCategory.RUNTIME_ERROR, matched_pattern="")


def _snapshot(workdir: Path) -> set[str]:
    return {str(p.relative_to(workdir)) for p in workdir.rglob("*") if p.is_file()}


def execute(
    script: str | Path,
    workdir: str | Path,
    timeout: float = DEFAULT_TIMEOUT,
    isolation: Isolation = Isolation.SUBPROCESS,
    image: Optional[str] = None,
) -> ExecutionResult:
    """Run a Python script confined to ``workdir`` under a wall-clock
    timeout; returns status, captured output, and the files it created."""
    # Resolve both paths first: the child runs with cwd=workdir, so a
    # relative script path would otherwise be re-rooted inside workdir.
    script = Path(script).resolve()
    workdir = Path(workdir).resolve()
    if not script.exists():
        raise SandboxError(f"script {script} does not exist")
    if not workdir.is_dir():
        raise SandboxError(f"workdir {workdir} is not a directory")

    if isolation is Isolation.CONTAINER and shutil.which("docker") is None:
        logger.warning("container isolation requested but no container runtime found; "
                       "falling back to subprocess execution")
        isolation = Isolation.SUBPROCESS

    if isolation is Isolation.SUBPROCESS:
        offending = lint_network(script.read_text(encoding="utf-8"))
        if offending:
            # Subprocess mode cannot revoke the network, so the contract is
            # enforced by refusing scripts that try to reach it.
            return ExecutionResult(
                status=ExecutionStatus.FAILED,
                exit_code=-1,
                stdout="",
                stderr=f"NetworkAccessViolation: forbidden tokens in script: {offending}",
                duration=0.0,
                artifacts=(),
            )
        cmd = [sys.executable, str(script)]
    else:
        if script.parent != workdir:
            raise SandboxError("container mode requires the script staged inside the workdir")
        cmd = [
            "docker", "run", "--rm", "--network", "none",
            "-v", f"{workdir}:/work", "-w", "/work",
            image or "python:3.11-slim",
            "python", f"/work/{script.name}",
        ]

    before = _snapshot(workdir)
    start = time.monotonic()
    try:
        proc = subprocess.run(
            cmd,
            cwd=str(workdir),
            capture_output=True,
            text=True,
            timeout=timeout,
        )
        duration = time.monotonic() - start
        status = ExecutionStatus.OK if proc.returncode == 0 else ExecutionStatus.FAILED
        exit_code, stdout, stderr = proc.returncode, proc.stdout, proc.stderr
    except subprocess.TimeoutExpired as exc:
        duration = time.monotonic() - start
        status = ExecutionStatus.TIMEOUT
        exit_code = -1
        stdout = _decode(exc.stdout)
        stderr = _decode(exc.stderr)
    artifacts = tuple(sorted(_snapshot(workdir) - before - {script.name}))
    return ExecutionResult(
        status=status,
        exit_code=exit_code,
        stdout=stdout,
        stderr=stderr,
        duration=duration,
        artifacts=artifacts,
    )


def _decode(raw) -> str:
    if raw is None:
        return ""
    if isinstance(raw, bytes):
        return raw.decode("utf-8", errors="replace")
    return str(raw)


@dataclass(frozen=True)
class RepairRequest:
    """What the next generation call sees: the attempt number plus, after a
    failure, the verbatim stderr and exactly one class-specific prompt."""

    attempt: int
    previous_stderr: Optional[str] = None
    error: Optional[ErrorClass] = None
    repair_prompt: Optional[str] = None


@dataclass(frozen=True)
class AttemptRecord:
    attempt: int
    result: ExecutionResult
    error: Optional[ErrorClass]


def repair_loop(
    generate: Callable[[RepairRequest], str],
    execute_fn: Callable[[str], ExecutionResult],
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
) -> tuple[ExecutionResult, list[AttemptRecord]]:
    """Generate/execute/repair until success or the attempt cap.

    ``generate`` maps a RepairRequest to script text; ``execute_fn`` runs
    that text and returns an ExecutionResult. Raises RepairExhausted (with
    the full attempt log) when every attempt fails.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    request = RepairRequest(attempt=1)
    attempts: list[AttemptRecord] = []
    for attempt in range(1, max_attempts + 1):
        script_text = generate(request)
        result = execute_fn(script_text)
        if result.ok:
            attempts.append(AttemptRecord(attempt=attempt, result=result, error=None))
            return result, attempts
        # Timeouts often leave their evidence on stdout (sentinel lines);
        # classify over both streams.
        classified = classify_error(result.stderr + "\n" + result.stdout)
        attempts.append(AttemptRecord(attempt=attempt, result=result, error=classified))
        logger.warning(
            "attempt %d/%d failed (%s): %s",
            attempt, max_attempts, classified.category.value, _first_line(result.stderr),
        )
        request = RepairRequest(
            attempt=attempt + 1,
            previous_stderr=result.stderr,
            error=classified,
            repair_prompt=REPAIR_PROMPTS[classified.category],
        )
    raise RepairExhausted(attempts)


def _first_line(text: str) -> str:
    return text.strip().splitlines()[0] if text.strip() else "<empty stderr>"
