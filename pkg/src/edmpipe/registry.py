"""Three-tier variable registry for longitudinal survey datasets.

The registry is the domain-knowledge substrate the rest of the pipeline
consults: it records hand-curated (tier 1) and auto-inferred (tier 2)
variable metadata, the strict temporal ordering of data-collection waves,
pattern rules for variables that must never be modeled (weights, IDs,
strata), negative sentinel codes for missing data, canonical research
questions, and known methodological pitfalls.

A registry is loaded once from a YAML document, validated, and treated as
immutable afterwards; it is safe to share read-only across tasks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import yaml

logger = logging.getLogger(__name__)

#: Wave assigned to tier-2 variables whose name matches no prefix rule.
#: It is deliberately not part of the temporal ordering, so any temporal
#: comparison against it fails loudly instead of silently passing.
UNKNOWN_WAVE = "unknown"


class RegistryError(Exception):
    """Base class for registry loading/validation failures."""


class ParseError(RegistryError):
    """The registry document is malformed (not schema-conformant YAML)."""


class ConsistencyError(RegistryError):
    """The document parsed but violates a registry invariant."""


class UnknownWave(RegistryError):
    """A wave identifier is not part of the registry's temporal ordering."""


class Tier(str, Enum):
    """Classification buckets for a variable name."""

    TIER1 = "tier1"
    TIER2 = "tier2"
    EXCLUDED = "excluded"
    UNKNOWN = "unknown"


class VarType(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


class Source(str, Enum):
    STUDENT = "student"
    PARENT = "parent"
    TEACHER = "teacher"
    COMPOSITE = "composite"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class VariableEntry:
    """Metadata for a single survey variable.

    ``value_map`` maps raw integer codes to category labels for
    binary/categorical variables. ``value_range`` is an optional
    (low, high) pair used to validate continuous outcomes.
    """

    name: str
    label: str
    tier: Tier
    var_type: VarType
    wave: str
    missingness_pct: float
    value_map: Optional[dict[int, str]] = None
    source: Source = Source.UNKNOWN
    notes: Optional[str] = None
    value_range: Optional[tuple[float, float]] = None

    def to_dict(self) -> dict:
        out: dict = {
            "label": self.label,
            "tier": self.tier.value,
            "type": self.var_type.value,
            "wave": self.wave,
            "missingness": self.missingness_pct,
            "source": self.source.value,
        }
        if self.value_map is not None:
            out["values"] = {str(k): v for k, v in self.value_map.items()}
        if self.notes is not None:
            out["notes"] = self.notes
        if self.value_range is not None:
            out["range"] = list(self.value_range)
        return out


@dataclass(frozen=True)
class WaveOrder:
    """Strict temporal ordering of data-collection waves plus the
    name-prefix conventions used to infer wave and source for variables
    that lack hand-curated metadata.

    ``prefix_waves`` maps the digit in position 2 of a variable name to a
    wave; ``prefix_sources`` maps the leading letter to a data source.
    """

    waves: tuple[str, ...]
    prefix_waves: Mapping[str, str] = field(default_factory=dict)
    prefix_sources: Mapping[str, Source] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.waves)) != len(self.waves):
            raise ConsistencyError(f"wave ordering contains duplicates: {self.waves}")
        for wave in self.prefix_waves.values():
            if wave not in self.waves:
                raise ConsistencyError(f"prefix rule maps to unknown wave {wave!r}")

    def index(self, wave: str) -> int:
        try:
            return self.waves.index(wave)
        except ValueError:
            raise UnknownWave(f"wave {wave!r} is not in the ordering {list(self.waves)}") from None

    def infer(self, name: str) -> tuple[Optional[str], Source]:
        """Infer (wave, source) from a variable-name prefix.

        Returns ``(None, source)`` when the second character is not a
        recognised wave digit; the caller decides how to degrade.
        """
        upper = name.upper()
        source = Source.UNKNOWN
        if upper:
            source = self.prefix_sources.get(upper[0], Source.UNKNOWN)
        wave = None
        if len(upper) >= 2:
            wave = self.prefix_waves.get(upper[1])
        return wave, source


@dataclass(frozen=True)
class ExclusionRules:
    """Pattern rules for variables that must never be used in models.

    Matching is case-sensitive over upper-cased names: rule entries are
    normalised to upper case at load time and candidate names are
    upper-cased before comparison. Precedence is exact > prefix > suffix.
    """

    exact: frozenset[str] = frozenset()
    prefixes: frozenset[str] = frozenset()
    suffixes: frozenset[str] = frozenset()

    def match(self, name: str) -> Optional[str]:
        """Return the matching rule (for diagnostics) or None."""
        upper = name.upper()
        if upper in self.exact:
            return f"exact:{upper}"
        for prefix in sorted(self.prefixes):
            if upper.startswith(prefix):
                return f"prefix:{prefix}"
        for suffix in sorted(self.suffixes):
            if upper.endswith(suffix):
                return f"suffix:{suffix}"
        return None


@dataclass(frozen=True)
class Registry:
    """Validated, immutable registry for one dataset."""

    dataset: str
    entries: Mapping[str, VariableEntry]
    wave_order: WaveOrder
    exclusions: ExclusionRules
    canonical_questions: tuple[str, ...] = ()
    common_pitfalls: tuple[str, ...] = ()
    pitfall_pairs: frozenset[tuple[str, str]] = frozenset()
    sentinel_codes: Mapping[int, str] = field(default_factory=dict)

    def is_sentinel(self, value: float) -> bool:
        return value in self.sentinel_codes

    def entry(self, name: str) -> Optional[VariableEntry]:
        return self.entries.get(name.upper())


_VALID_SOURCES = {s.value for s in Source}
_VALID_TYPES = {t.value for t in VarType}


def _parse_entry(name: str, raw: Mapping, wave_order: WaveOrder) -> VariableEntry:
    if not isinstance(raw, Mapping):
        raise ParseError(f"variable {name!r}: entry must be a mapping, got {type(raw).__name__}")
    try:
        tier = Tier(raw.get("tier", "tier1"))
    except ValueError:
        raise ParseError(f"variable {name!r}: bad tier {raw.get('tier')!r}") from None
    if tier not in (Tier.TIER1, Tier.TIER2):
        raise ConsistencyError(f"variable {name!r}: registry entries must be tier1 or tier2")
    var_type = raw.get("type")
    if var_type not in _VALID_TYPES:
        raise ParseError(f"variable {name!r}: bad type {var_type!r}")
    wave = raw.get("wave")
    if wave not in wave_order.waves:
        raise ConsistencyError(f"variable {name!r}: unknown wave {wave!r}")
    missingness = raw.get("missingness", 0.0)
    if not isinstance(missingness, (int, float)) or not 0.0 <= float(missingness) <= 1.0:
        raise ConsistencyError(f"variable {name!r}: missingness {missingness!r} outside [0, 1]")
    source = raw.get("source", "unknown")
    if source not in _VALID_SOURCES:
        raise ParseError(f"variable {name!r}: bad source {source!r}")
    label = raw.get("label", "")
    notes = raw.get("notes")
    if tier is Tier.TIER1 and (not label or not notes):
        raise ConsistencyError(f"variable {name!r}: tier1 entries need a non-empty label and notes")
    value_map = None
    if raw.get("values") is not None:
        try:
            value_map = {int(k): str(v) for k, v in raw["values"].items()}
        except (TypeError, ValueError, AttributeError):
            raise ParseError(f"variable {name!r}: values must map integer codes to labels") from None
    value_range = None
    if raw.get("range") is not None:
        rng = raw["range"]
        if not isinstance(rng, Sequence) or len(rng) != 2:
            raise ParseError(f"variable {name!r}: range must be a [low, high] pair")
        value_range = (float(rng[0]), float(rng[1]))
    entry = VariableEntry(
        name=name.upper(),
        label=str(label),
        tier=tier,
        var_type=VarType(var_type),
        wave=wave,
        missingness_pct=float(missingness),
        value_map=value_map,
        source=Source(source),
        notes=notes,
        value_range=value_range,
    )
    _check_binary_value_map(entry)
    return entry


def _check_binary_value_map(entry: VariableEntry) -> None:
    # Sentinel codes never count as categories of a binary variable.
    if entry.var_type is VarType.BINARY and entry.value_map is not None:
        non_sentinel = [code for code in entry.value_map if code >= 0]
        if len(non_sentinel) != 2:
            raise ConsistencyError(
                f"variable {entry.name!r}: binary value_map must have exactly 2 "
                f"non-sentinel codes, found {len(non_sentinel)}"
            )


def load_registry(path: str | Path) -> Registry:
    """Load and validate a registry YAML document.

    Raises ParseError for malformed documents and ConsistencyError when
    the document violates a registry invariant (an excluded name listed
    among the entries, an unknown wave, a bad sentinel code, ...).
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ParseError(f"{path}: registry document must be a mapping")
    return registry_from_dict(doc)


def registry_from_dict(doc: Mapping) -> Registry:
    waves = doc.get("waves")
    if not isinstance(waves, Sequence) or not waves or isinstance(waves, str):
        raise ParseError("registry needs a non-empty 'waves' list")
    raw_sources = doc.get("source_prefixes", {}) or {}
    try:
        prefix_sources = {str(k).upper(): Source(v) for k, v in raw_sources.items()}
    except ValueError as exc:
        raise ParseError(f"bad source prefix map: {exc}") from exc
    wave_order = WaveOrder(
        waves=tuple(str(w) for w in waves),
        prefix_waves={str(k): str(v) for k, v in (doc.get("wave_prefixes", {}) or {}).items()},
        prefix_sources=prefix_sources,
    )

    sentinel_codes: dict[int, str] = {}
    for code, meaning in (doc.get("sentinel_codes", {}) or {}).items():
        try:
            icode = int(code)
        except (TypeError, ValueError):
            raise ParseError(f"sentinel code {code!r} is not an integer") from None
        if icode >= 0:
            raise ConsistencyError(f"sentinel codes must be negative integers, got {icode}")
        sentinel_codes[icode] = str(meaning)

    excl = doc.get("exclusions", {}) or {}
    exclusions = ExclusionRules(
        exact=frozenset(str(n).upper() for n in excl.get("exact", []) or []),
        prefixes=frozenset(str(n).upper() for n in excl.get("prefixes", []) or []),
        suffixes=frozenset(str(n).upper() for n in excl.get("suffixes", []) or []),
    )

    entries: dict[str, VariableEntry] = {}
    for name, raw in (doc.get("variables", {}) or {}).items():
        entry = _parse_entry(str(name), raw, wave_order)
        rule = exclusions.match(entry.name)
        if rule is not None:
            raise ConsistencyError(
                f"variable {entry.name!r} appears in entries but matches exclusion rule {rule}"
            )
        entries[entry.name] = entry

    pitfalls: list[str] = []
    pairs: set[tuple[str, str]] = set()
    for item in doc.get("common_pitfalls", []) or []:
        if isinstance(item, str):
            pitfalls.append(item)
        elif isinstance(item, Mapping):
            note = str(item.get("note", ""))
            if note:
                pitfalls.append(note)
            if item.get("outcome") and item.get("predictor"):
                pairs.add((str(item["outcome"]).upper(), str(item["predictor"]).upper()))
        else:
            raise ParseError(f"bad common_pitfalls item: {item!r}")

    return Registry(
        dataset=str(doc.get("dataset", "unnamed")),
        entries=entries,
        wave_order=wave_order,
        exclusions=exclusions,
        canonical_questions=tuple(str(q) for q in doc.get("canonical_questions", []) or []),
        common_pitfalls=tuple(pitfalls),
        pitfall_pairs=frozenset(pairs),
        sentinel_codes=sentinel_codes,
    )


def registry_to_dict(registry: Registry) -> dict:
    doc: dict = {
        "dataset": registry.dataset,
        "waves": list(registry.wave_order.waves),
        "wave_prefixes": dict(registry.wave_order.prefix_waves),
        "source_prefixes": {k: v.value for k, v in registry.wave_order.prefix_sources.items()},
        "sentinel_codes": {int(k): v for k, v in registry.sentinel_codes.items()},
        "exclusions": {
            "exact": sorted(registry.exclusions.exact),
            "prefixes": sorted(registry.exclusions.prefixes),
            "suffixes": sorted(registry.exclusions.suffixes),
        },
        "canonical_questions": list(registry.canonical_questions),
        "common_pitfalls": [],
        "variables": {name: entry.to_dict() for name, entry in sorted(registry.entries.items())},
    }
    for note in registry.common_pitfalls:
        doc["common_pitfalls"].append({"note": note})
    # Structured pairs are serialized separately from the prose notes; the
    # loader unions both back together.
    for outcome, predictor in sorted(registry.pitfall_pairs):
        doc["common_pitfalls"].append({"note": "", "outcome": outcome, "predictor": predictor})
    return doc


def save_registry(registry: Registry, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(registry_to_dict(registry), sort_keys=False, allow_unicode=True),
        encoding="utf-8",
    )


def classify_variable(name: str, registry: Registry) -> Tier:
    """Classify a variable name: exclusion rules win over tier membership,
    names absent from both entries and rules are UNKNOWN. Total function.
    """
    if not name:
        raise ValueError("variable name must be non-empty")
    if registry.exclusions.match(name) is not None:
        return Tier.EXCLUDED
    entry = registry.entry(name)
    if entry is None:
        return Tier.UNKNOWN
    return entry.tier


def temporal_precedes(a: str, b: str, order: WaveOrder) -> bool:
    """True iff wave ``a`` strictly precedes wave ``b``. Irreflexive."""
    return order.index(a) < order.index(b)


def infer_tier2_entry(
    name: str,
    values: Iterable[float],
    registry: Registry,
    categorical_threshold: int = 15,
) -> VariableEntry:
    """Build tier-2 metadata for an unregistered variable from its raw codes.

    Wave and source come from the name prefix; when the prefix matches no
    rule the wave degrades to UNKNOWN_WAVE with a logged warning. Type is
    binary for exactly 2 distinct non-sentinel values, categorical up to
    ``categorical_threshold`` distinct values, else continuous (also the
    fallback for all-sentinel columns). Missingness is the exact sentinel
    fraction.
    """
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError(f"variable {name!r}: cannot infer metadata from an empty column")
    if classify_variable(name, registry) is not Tier.UNKNOWN:
        raise ValueError(f"variable {name!r} is already classified; tier-2 inference not allowed")
    sentinel_count = sum(1 for v in vals if registry.is_sentinel(v))
    missingness = sentinel_count / len(vals)
    distinct = {v for v in vals if not registry.is_sentinel(v)}
    if len(distinct) == 2:
        var_type = VarType.BINARY
    elif 0 < len(distinct) <= categorical_threshold:
        # A 1-value column is degenerate but still categorical-shaped.
        var_type = VarType.CATEGORICAL
    else:
        var_type = VarType.CONTINUOUS
    wave, source = registry.wave_order.infer(name)
    if wave is None:
        logger.warning(
            "variable %s matches no wave-prefix rule; assigning wave %r", name, UNKNOWN_WAVE
        )
        wave = UNKNOWN_WAVE
    return VariableEntry(
        name=name.upper(),
        label=name.upper(),
        tier=Tier.TIER2,
        var_type=var_type,
        wave=wave,
        missingness_pct=missingness,
        source=source,
    )
