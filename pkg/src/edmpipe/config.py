"""Run configuration: coded defaults, overlaid by a YAML file, overlaid by
CLI flags — the later source always wins. Paths given in the file resolve
relative to the file's own directory."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

import yaml

from .llm_gateway import DEFAULT_API_KEY_ENV

DEFAULT_ENDPOINT = "https://api.anthropic.com/v1/messages"
DEFAULT_EXPECTED_MODELS = ("logistic_regression", "random_forest", "stacking_ensemble")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    dataset: str = "fixture"
    data_path: str = ""
    registry_path: str = ""
    output_root: str = "output"
    seed: int = 42
    max_revisions: int = 2
    min_analytic_n: int = 1000
    test_fraction: float = 0.2
    bootstrap_resamples: int = 1000
    recode_codes: tuple[int, ...] = (-1, -4, -7, -8, -9)
    categorical_threshold: int = 15

    backend_mode: str = "scripted"
    scripted_file: str = ""
    scripted_strict: bool = True
    api_key_env: str = DEFAULT_API_KEY_ENV
    endpoint: str = DEFAULT_ENDPOINT
    models: dict[str, str] = field(default_factory=lambda: {
        "problem_formulator": "general-model",
        "data_engineer": "general-model",
        "analyst": "general-model",
        "critic": "review-model",
        "writer": "general-model",
    })
    temperatures: dict[str, float] = field(default_factory=dict)
    max_tokens: dict[str, int] = field(default_factory=lambda: {"default": 4096})

    literature_mode: str = "disabled"  # live | fixture | disabled
    literature_fixture: str = ""
    literature_limit: int = 10
    literature_timeout: float = 10.0
    crossref_enabled: bool = False

    sandbox_isolation: str = "subprocess"
    sandbox_image: str = ""
    sandbox_timeout: float = 600.0
    max_repair_attempts: int = 3

    expected_models: tuple[str, ...] = DEFAULT_EXPECTED_MODELS
    prompt_dir: Optional[str] = None
    template_file: Optional[str] = None
    word_targets: Optional[dict[str, tuple[int, int]]] = None

    def validate(self) -> None:
        if self.test_fraction < 0.2:
            raise ConfigError(f"test_fraction {self.test_fraction} below the 0.2 floor")
        if self.max_revisions < 0:
            raise ConfigError("max_revisions must be >= 0")
        if self.backend_mode not in ("scripted", "live"):
            raise ConfigError(f"unknown backend mode {self.backend_mode!r}")
        if self.literature_mode not in ("live", "fixture", "disabled"):
            raise ConfigError(f"unknown literature mode {self.literature_mode!r}")
        if self.sandbox_isolation not in ("subprocess", "container"):
            raise ConfigError(f"unknown sandbox isolation {self.sandbox_isolation!r}")
        if any(c >= 0 for c in self.recode_codes):
            raise ConfigError("recode_codes must all be negative")

    def resolved_prompt_dir(self) -> Path:
        if self.prompt_dir:
            return Path(self.prompt_dir)
        return Path(str(resources.files("edmpipe"))) / "resources" / "agent_prompts"

    def resolved_template_file(self) -> Path:
        if self.template_file:
            return Path(self.template_file)
        return Path(str(resources.files("edmpipe"))) / "resources" / "templates" / "paper_template.tex"

    def max_tokens_for(self, agent: str) -> int:
        return int(self.max_tokens.get(agent, self.max_tokens.get("default", 4096)))

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["recode_codes"] = list(self.recode_codes)
        doc["expected_models"] = list(self.expected_models)
        if self.word_targets is not None:
            doc["word_targets"] = {k: list(v) for k, v in self.word_targets.items()}
        return doc


def _resolve(base: Path, value: str) -> str:
    path = Path(value)
    return str(path if path.is_absolute() else (base / path))


def load_config(
    path: Optional[str | Path] = None, overrides: Optional[Mapping] = None
) -> RunConfig:
    """Build the effective RunConfig: defaults < file < overrides."""
    config = RunConfig()
    if path is not None:
        path = Path(path)
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        if doc is None:
            doc = {}
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: config file must be a mapping")
        _apply_file(config, doc, base=path.parent)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, value)
    config.validate()
    return config


def _apply_file(config: RunConfig, doc: Mapping, base: Path) -> None:
    scalars = (
        "dataset", "output_root", "seed", "max_revisions", "min_analytic_n",
        "test_fraction", "bootstrap_resamples", "categorical_threshold",
    )
    for key in scalars:
        if key in doc:
            setattr(config, key, doc[key])
    if "recode_codes" in doc:
        config.recode_codes = tuple(int(c) for c in doc["recode_codes"])
    if "expected_models" in doc:
        config.expected_models = tuple(str(m) for m in doc["expected_models"])
    if "output_root" in doc:
        config.output_root = _resolve(base, str(doc["output_root"]))
    if "prompt_dir" in doc and doc["prompt_dir"]:
        config.prompt_dir = _resolve(base, str(doc["prompt_dir"]))
    if "template_file" in doc and doc["template_file"]:
        config.template_file = _resolve(base, str(doc["template_file"]))
    if "word_targets" in doc and doc["word_targets"]:
        config.word_targets = {
            str(k).upper(): (int(v[0]), int(v[1])) for k, v in doc["word_targets"].items()
        }

    datasets = doc.get("datasets", {}) or {}
    selected = doc.get("dataset", config.dataset)
    if selected in datasets:
        entry = datasets[selected] or {}
        if "data" in entry:
            config.data_path = _resolve(base, str(entry["data"]))
        if "registry" in entry:
            config.registry_path = _resolve(base, str(entry["registry"]))
    if "data_path" in doc:
        config.data_path = _resolve(base, str(doc["data_path"]))
    if "registry_path" in doc:
        config.registry_path = _resolve(base, str(doc["registry_path"]))

    backend = doc.get("backend", {}) or {}
    if "mode" in backend:
        config.backend_mode = str(backend["mode"])
    if "scripted_file" in backend:
        config.scripted_file = _resolve(base, str(backend["scripted_file"]))
    if "strict" in backend:
        config.scripted_strict = bool(backend["strict"])
    if "api_key_env" in backend:
        config.api_key_env = str(backend["api_key_env"])
    if "endpoint" in backend:
        config.endpoint = str(backend["endpoint"])

    if "models" in doc and doc["models"]:
        config.models.update({str(k): str(v) for k, v in doc["models"].items()})
    if "temperatures" in doc and doc["temperatures"]:
        config.temperatures.update({str(k): float(v) for k, v in doc["temperatures"].items()})
    if "max_tokens" in doc and doc["max_tokens"]:
        config.max_tokens.update({str(k): int(v) for k, v in doc["max_tokens"].items()})

    literature = doc.get("literature", {}) or {}
    if "mode" in literature:
        config.literature_mode = str(literature["mode"])
    if "fixture_file" in literature:
        config.literature_fixture = _resolve(base, str(literature["fixture_file"]))
    if "limit" in literature:
        config.literature_limit = int(literature["limit"])
    if "timeout" in literature:
        config.literature_timeout = float(literature["timeout"])
    if "crossref" in literature:
        config.crossref_enabled = bool(literature["crossref"])

    sandbox = doc.get("sandbox", {}) or {}
    if "isolation" in sandbox:
        config.sandbox_isolation = str(sandbox["isolation"])
    if "image" in sandbox:
        config.sandbox_image = str(sandbox["image"])
    if "timeout" in sandbox:
        config.sandbox_timeout = float(sandbox["timeout"])
    if "max_repair_attempts" in sandbox:
        config.max_repair_attempts = int(sandbox["max_repair_attempts"])
