"""Manuscript assembly from a placeholder template.

The engine never generates LaTeX structure: prose is substituted into a
pre-defined template whose sections are marked %%PLACEHOLDER:SLOT_NAME%%.
Filling is pure text replacement — every marker must be covered, no
marker may remain, and nothing outside the markers changes. The
bibliography is emitted verbatim from verified retrieval metadata
(titles are byte-identical to what the API returned); papers that failed
verification are dropped with a warning rather than printed. When the
review loop ends without a pass verdict, the manuscript gets a prominent
warning banner and the full review appended as an appendix.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from .critic import ReviewReport
from .literature import LiteratureContext, PaperRecord, Verification

logger = logging.getLogger(__name__)

MARKER_RE = re.compile(r"%%PLACEHOLDER:([A-Za-z0-9_]+)%%")
CITE_RE = re.compile(r"\\cite[tp]?\{([^}]*)\}")

#: Approximate word targets per slot; outside the range is a warning,
#: never an error.
DEFAULT_WORD_TARGETS: dict[str, tuple[int, int]] = {
    "ABSTRACT": (150, 250),
    "INTRODUCTION": (800, 1200),
    "RELATED_WORK": (500, 800),
    "METHODS": (800, 1300),
    "RESULTS": (600, 1000),
    "DISCUSSION": (600, 1000),
    "LIMITATIONS": (300, 500),
}

UNVERIFIED_BANNER_MARK = "% ==== UNVERIFIED OUTPUT BANNER ===="
UNVERIFIED_BANNER = (
    UNVERIFIED_BANNER_MARK + "\n"
    "% WARNING: the automated review loop ended without a pass verdict.\n"
    "% This manuscript is UNVERIFIED and must not be circulated as a\n"
    "% reviewed research product. The full review report is appended.\n"
    "\\begin{center}\\fbox{\\parbox{0.9\\linewidth}{\\centering\\bfseries\n"
    "UNVERIFIED: automated review did not pass. See the appendix for the\n"
    "full review report.}}\\end{center}\n"
)


class WriterError(Exception):
    pass


class MissingSlot(WriterError):
    def __init__(self, slots: list[str]):
        self.slots = slots
        super().__init__(f"no content for template slots: {slots}")


class UnknownSlot(WriterError):
    def __init__(self, slots: list[str]):
        self.slots = slots
        super().__init__(f"content provided for slots not in the template: {slots}")


@dataclass(frozen=True)
class ManuscriptTemplate:
    text: str
    slots: frozenset[str]

    @staticmethod
    def from_text(text: str) -> "ManuscriptTemplate":
        found = MARKER_RE.findall(text)
        dupes = sorted({name for name in found if found.count(name) > 1})
        if dupes:
            raise WriterError(f"template markers must be unique; repeated: {dupes}")
        return ManuscriptTemplate(text=text, slots=frozenset(found))

    @staticmethod
    def from_file(path: str | Path) -> "ManuscriptTemplate":
        return ManuscriptTemplate.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SlotContent:
    slot: str
    prose: str
    word_count: int
    citations_used: tuple[str, ...] = ()


def slot_content(slot: str, prose: str) -> SlotContent:
    """Build SlotContent with the derived word count and citation keys."""
    keys: list[str] = []
    for group in CITE_RE.findall(prose):
        keys.extend(k.strip() for k in group.split(",") if k.strip())
    return SlotContent(
        slot=slot,
        prose=prose,
        word_count=len(prose.split()),
        citations_used=tuple(dict.fromkeys(keys)),
    )


def fill_template(template: ManuscriptTemplate, contents: Mapping[str, SlotContent]) -> str:
    """Replace every marker with its prose; the rest of the template is
    untouched and no marker survives."""
    missing = sorted(template.slots - set(contents))
    if missing:
        raise MissingSlot(missing)
    unknown = sorted(set(contents) - template.slots)
    if unknown:
        raise UnknownSlot(unknown)
    out = MARKER_RE.sub(lambda m: contents[m.group(1)].prose, template.text)
    residual = MARKER_RE.findall(out)
    if residual:
        # Prose smuggling a marker in would defeat the zero-residual gate.
        raise WriterError(f"residual template markers after filling: {sorted(set(residual))}")
    return out


def check_word_targets(
    contents: Mapping[str, SlotContent],
    targets: Optional[Mapping[str, tuple[int, int]]] = None,
) -> list[str]:
    """One warning per slot outside its configured [min, max] word range."""
    targets = DEFAULT_WORD_TARGETS if targets is None else targets
    warnings = []
    for slot in sorted(contents):
        content = contents[slot]
        if slot not in targets:
            continue
        low, high = targets[slot]
        if content.word_count < low:
            warnings.append(f"{slot}: {content.word_count} words, below the {low}-word target")
        elif content.word_count > high:
            warnings.append(f"{slot}: {content.word_count} words, above the {high}-word target")
    return warnings


@dataclass(frozen=True)
class BibEntry:
    key: str
    entry_type: str
    fields: Mapping[str, str]


def citation_key(record: PaperRecord) -> str:
    """Deterministic key: first-author surname + year + 4-hex id digest."""
    surname = "anon"
    if record.authors:
        parts = record.authors[0].split()
        if parts:
            surname = re.sub(r"[^A-Za-z]", "", parts[-1]).lower() or "anon"
    year = str(record.year) if record.year else "nd"
    digest = hashlib.sha1(record.external_id.encode("utf-8")).hexdigest()[:4]
    return f"{surname}{year}{digest}"


def emit_bibliography(context: LiteratureContext) -> tuple[list[BibEntry], bool]:
    """Bibliography entries for verified papers, metadata copied verbatim.

    Returns (entries, fallback_flag); the flag is set when retrieval
    failed, telling the prose layer to use bracketed placeholder
    citations. Unverified papers never become entries.
    """
    if context.retrieval_failed:
        return [], True
    entries: list[BibEntry] = []
    for paper in context.papers:
        if paper.verification is Verification.UNVERIFIED:
            logger.warning("dropping unverified citation from bibliography: %r", paper.title)
            continue
        fields = {
            "title": paper.title,
            "author": " and ".join(paper.authors) if paper.authors else "Unknown",
            "year": str(paper.year) if paper.year else "n.d.",
        }
        if paper.venue:
            fields["journal"] = paper.venue
        entries.append(BibEntry(key=citation_key(paper), entry_type="article", fields=fields))
    return entries, False


def render_bibtex(entries: list[BibEntry]) -> str:
    chunks = []
    for entry in entries:
        lines = [f"@{entry.entry_type}{{{entry.key},"]
        for name in sorted(entry.fields):
            lines.append(f"  {name} = {{{entry.fields[name]}}},")
        lines.append("}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + ("\n" if chunks else "")


def mark_unverified(manuscript: str, review: ReviewReport) -> str:
    """Prepend the warning banner and append the serialized review as an
    appendix. Applying it twice is the same as applying it once."""
    if manuscript.startswith(UNVERIFIED_BANNER_MARK):
        return manuscript
    appendix = (
        "\n% ==== APPENDIX: FULL REVIEW REPORT ====\n"
        "\\section*{Appendix: Automated Review Report}\n"
        "\\begin{verbatim}\n"
        + json.dumps(review.to_dict(), indent=2, sort_keys=True)
        + "\n\\end{verbatim}\n"
    )
    return UNVERIFIED_BANNER + manuscript + appendix
