"""Literature retrieval and citation verification.

Retrieval talks to the Semantic Scholar paper-search endpoint through an
injectable transport, so tests and offline runs replay canned responses.
Failures never abort the pipeline: they degrade to an empty context with
``retrieval_failed`` set, and the manuscript falls back to bracketed
placeholder citations.

Verification is layered: exact normalized-title match, then token-Jaccard
fuzzy match, then an optional CrossRef lookup. A claimed paper that
survives no layer stays ``unverified`` and is dropped from the
bibliography downstream — fabricated citations must be detectable, never
silently propagated.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

logger = logging.getLogger(__name__)

SEARCH_URL = "https://api.semanticscholar.org/graph/v1/paper/search"
SEARCH_FIELDS = "title,authors,year,venue,abstract,externalIds"
API_KEY_ENV = "SEMANTIC_SCHOLAR_API_KEY"

#: Token-Jaccard threshold for the fuzzy layer: tolerates subtitle
#: truncation while rejecting mere topic-level overlap.
FUZZY_THRESHOLD = 0.8

#: (status_code, parsed_json_or_None)
Transport = Callable[[str, dict], tuple[int, Optional[dict]]]


class CrossRefUnavailable(Exception):
    """CrossRef lookup could not run; the layer is skipped, never fatal."""


class Verification(str, Enum):
    EXACT = "exact"
    FUZZY = "fuzzy"
    CROSSREF = "crossref"
    UNVERIFIED = "unverified"


@dataclass(frozen=True)
class PaperRecord:
    external_id: str
    title: str
    authors: tuple[str, ...] = ()
    year: Optional[int] = None
    venue: Optional[str] = None
    abstract: Optional[str] = None
    verification: Verification = Verification.UNVERIFIED

    def to_dict(self) -> dict:
        return {
            "external_id": self.external_id,
            "title": self.title,
            "authors": list(self.authors),
            "year": self.year,
            "venue": self.venue,
            "abstract": self.abstract,
            "verification": self.verification.value,
        }

    @staticmethod
    def from_dict(doc: dict) -> "PaperRecord":
        return PaperRecord(
            external_id=str(doc.get("external_id", "")),
            title=str(doc.get("title", "")),
            authors=tuple(doc.get("authors", []) or ()),
            year=doc.get("year"),
            venue=doc.get("venue"),
            abstract=doc.get("abstract"),
            verification=Verification(doc.get("verification", "unverified")),
        )


@dataclass(frozen=True)
class LiteratureContext:
    papers: tuple[PaperRecord, ...] = ()
    retrieval_failed: bool = False
    failure_note: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "papers": [p.to_dict() for p in self.papers],
            "retrieval_failed": self.retrieval_failed,
            "failure_note": self.failure_note,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LiteratureContext":
        return LiteratureContext(
            papers=tuple(PaperRecord.from_dict(p) for p in doc.get("papers", [])),
            retrieval_failed=bool(doc.get("retrieval_failed", False)),
            failure_note=doc.get("failure_note"),
        )


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def normalize_title(title: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_TOKEN_RE.findall(title.lower()))


def _tokens(title: str) -> frozenset[str]:
    return frozenset(_TOKEN_RE.findall(title.lower()))


def jaccard_title_similarity(a: str, b: str) -> float:
    """|tokens(a) ∩ tokens(b)| / |tokens(a) ∪ tokens(b)|; two empty token
    sets count as identical (1.0) by convention."""
    ta, tb = _tokens(a), _tokens(b)
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def _record_from_api(item: dict) -> PaperRecord:
    authors = tuple(
        a.get("name", "") for a in (item.get("authors") or []) if isinstance(a, dict)
    )
    return PaperRecord(
        external_id=str(item.get("paperId") or item.get("external_id") or ""),
        title=str(item.get("title") or ""),
        authors=authors,
        year=item.get("year"),
        venue=item.get("venue") or None,
        abstract=item.get("abstract") or None,
    )


def _requests_transport(url: str, params: dict, timeout: float = 10.0) -> tuple[int, Optional[dict]]:
    headers = {}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["x-api-key"] = api_key
    response = requests.get(url, params=params, headers=headers, timeout=timeout)
    try:
        body = response.json()
    except ValueError:
        body = None
    return response.status_code, body


def fixture_transport(path: str | Path) -> Transport:
    """Transport replaying a canned search response from a JSON file."""
    def _call(url: str, params: dict) -> tuple[int, Optional[dict]]:
        return 200, json.loads(Path(path).read_text(encoding="utf-8"))
    return _call


class LiteratureClient:
    """Search client with timeout, one backoff retry, and graceful fallback."""

    def __init__(
        self,
        transport: Optional[Transport] = None,
        timeout: float = 10.0,
        retries: int = 1,
        backoff: float = 2.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self._transport = transport or (lambda url, params: _requests_transport(url, params, timeout))
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep

    def search_papers(self, query: str, limit: int) -> LiteratureContext:
        if not 1 <= limit <= 100:
            raise ValueError(f"limit must be in [1, 100], got {limit}")
        params = {"query": query, "limit": limit, "fields": SEARCH_FIELDS}
        note = None
        for attempt in range(self.retries + 1):
            try:
                status, body = self._transport(SEARCH_URL, params)
            except Exception as exc:  # timeouts, connection errors
                note = f"retrieval error: {exc}"
                logger.warning("literature search attempt %d failed: %s", attempt + 1, exc)
            else:
                if status == 200 and isinstance(body, dict):
                    records = tuple(_record_from_api(item) for item in body.get("data", []))
                    return LiteratureContext(papers=records, retrieval_failed=False)
                note = f"retrieval returned HTTP {status}"
                logger.warning("literature search attempt %d: HTTP %s", attempt + 1, status)
            if attempt < self.retries:
                self._sleep(self.backoff * (2 ** attempt))
        return LiteratureContext(papers=(), retrieval_failed=True, failure_note=note)


def verify_citation(
    claimed: PaperRecord,
    response_pool: Sequence[PaperRecord],
    crossref_enabled: bool = False,
    crossref_lookup: Optional[Callable[[str], Optional[str]]] = None,
    fuzzy_threshold: float = FUZZY_THRESHOLD,
) -> Verification:
    """Verify one claimed citation against the raw retrieval pool.

    Layers run strongest-first and the first satisfied layer wins:
    exact > fuzzy > crossref > unverified.
    """
    claimed_norm = normalize_title(claimed.title)
    for candidate in response_pool:
        if normalize_title(candidate.title) == claimed_norm:
            return Verification.EXACT
    best = max(
        (jaccard_title_similarity(claimed.title, c.title) for c in response_pool),
        default=0.0,
    )
    if best >= fuzzy_threshold:
        return Verification.FUZZY
    if crossref_enabled:
        try:
            lookup = crossref_lookup or _crossref_title_lookup
            found = lookup(claimed.title)
            if found is not None and normalize_title(found) == claimed_norm:
                return Verification.CROSSREF
        except CrossRefUnavailable as exc:
            logger.warning("CrossRef layer skipped: %s", exc)
    return Verification.UNVERIFIED


def verify_pool(
    claimed: Sequence[PaperRecord],
    response_pool: Sequence[PaperRecord],
    crossref_enabled: bool = False,
    crossref_lookup: Optional[Callable[[str], Optional[str]]] = None,
) -> tuple[PaperRecord, ...]:
    """Verify every claimed paper, returning records with verification set.

    An exact match is canonicalized to the pool record, so downstream
    bibliography metadata is byte-identical to what retrieval returned
    even when the claim drifted in case or punctuation.
    """
    by_norm = {normalize_title(p.title): p for p in response_pool}
    verified: list[PaperRecord] = []
    for paper in claimed:
        level = verify_citation(paper, response_pool, crossref_enabled, crossref_lookup)
        if level is Verification.EXACT:
            canonical = by_norm[normalize_title(paper.title)]
            verified.append(replace(canonical, verification=level))
        else:
            verified.append(replace(paper, verification=level))
    return tuple(verified)


def _crossref_title_lookup(title: str) -> Optional[str]:
    try:
        response = requests.get(
            "https://api.crossref.org/works",
            params={"query.title": title, "rows": 1},
            timeout=10.0,
        )
    except Exception as exc:
        raise CrossRefUnavailable(str(exc)) from exc
    if response.status_code != 200:
        raise CrossRefUnavailable(f"HTTP {response.status_code}")
    try:
        items = response.json()["message"]["items"]
        if items and items[0].get("title"):
            return items[0]["title"][0]
    except (ValueError, KeyError, IndexError) as exc:
        raise CrossRefUnavailable(f"unexpected response shape: {exc}") from exc
    return None
