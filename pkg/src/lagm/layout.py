"""Layout-interchange ingestion.

Upstream parsers emit one JSON document per input file describing pages in
reading order. This module parses and validates that format, runs the
table-of-contents heuristics (keyword detection, printed/physical page
matching, remapping), and splits section text into overlapping chunks.

Interchange schema (field names are normative and case-sensitive):

    {
      "doc_name": str, "doc_type": str, "doc_path": str,
      "pages": [
        {"page_idx": int, "printed_page_number"?: str,
         "header"?: str, "footer"?: str,
         "elements": [
           {"kind": "section_header"|"paragraph"|"table"|"diagram"|"toc_candidate",
            "text": str, "level"?: int,
            "structure"?: {"rows": [[str, ...], ...]},
            "description"?: str}
         ]}
      ]
    }
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import ConfigurationError, InterchangeParseError, LayoutValidationError

DEFAULT_TOC_KEYWORDS = frozenset(
    {"table of contents", "contents", "目次", "índice", "sommaire"}
)
DEFAULT_CHUNK_TOKENS = 512
DEFAULT_CHUNK_OVERLAP = 64


class ElementKind(str, Enum):
    SECTION_HEADER = "section_header"
    PARAGRAPH = "paragraph"
    TABLE = "table"
    DIAGRAM = "diagram"
    TOC_CANDIDATE = "toc_candidate"


@dataclass
class LayoutElement:
    """One block on a page, in reading order.

    For tables ``text`` holds the linearized cell text and ``structure`` the
    rectangular cell grid. For diagrams ``text`` holds OCR output and
    ``description`` a precomputed multimodal description.
    """

    kind: ElementKind
    text: str
    level: Optional[int] = None
    structure: Optional[list[list[str]]] = None
    description: Optional[str] = None


@dataclass
class LayoutPage:
    page_idx: int
    printed_page_number: Optional[str] = None
    header: Optional[str] = None
    footer: Optional[str] = None
    elements: list[LayoutElement] = field(default_factory=list)


@dataclass
class LayoutDocument:
    doc_name: str
    doc_type: str
    doc_path: str
    pages: list[LayoutPage] = field(default_factory=list)

    @property
    def page_count(self) -> int:
        return len(self.pages)


@dataclass
class TocEntry:
    """One table-of-contents line after extraction.

    ``printed_page`` is the number as printed; ``physical_page`` is the
    0-based index after remapping, or None when the remap landed outside the
    document.
    """

    title: str
    printed_page: int
    physical_page: Optional[int] = None
    depth: int = 0


@dataclass
class TocExtraction:
    """Extraction result: parsed entries plus a count of skipped lines."""

    entries: list[TocEntry]
    skipped: int = 0


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise LayoutValidationError(message)


def _parse_element(raw: dict, where: str) -> LayoutElement:
    _expect(isinstance(raw, dict), f"{where}: element must be an object")
    try:
        kind = ElementKind(raw.get("kind"))
    except ValueError:
        raise LayoutValidationError(f"{where}: unknown element kind {raw.get('kind')!r}")
    text = raw.get("text", "")
    _expect(isinstance(text, str), f"{where}: text must be a string")

    level = raw.get("level")
    structure = None
    description = raw.get("description")

    if level is not None:
        _expect(kind is ElementKind.SECTION_HEADER, f"{where}: level only valid on section_header")
        _expect(isinstance(level, int) and level >= 0, f"{where}: level must be a non-negative int")
    if "structure" in raw and raw["structure"] is not None:
        _expect(kind is ElementKind.TABLE, f"{where}: structure only valid on table")
        rows = raw["structure"].get("rows") if isinstance(raw["structure"], dict) else None
        _expect(isinstance(rows, list) and rows, f"{where}: structure.rows must be a non-empty list")
        widths = {len(r) for r in rows}
        _expect(
            all(isinstance(r, list) and all(isinstance(c, str) for c in r) for r in rows),
            f"{where}: structure cells must be strings",
        )
        _expect(len(widths) == 1, f"{where}: table structure is not rectangular")
        structure = [list(r) for r in rows]
    if description is not None:
        _expect(kind is ElementKind.DIAGRAM, f"{where}: description only valid on diagram")
        _expect(isinstance(description, str), f"{where}: description must be a string")

    if not text:
        _expect(
            kind is ElementKind.DIAGRAM and bool(description),
            f"{where}: empty text only allowed for diagram with description",
        )
    return LayoutElement(kind=kind, text=text, level=level, structure=structure, description=description)


def parse_layout_document(raw: bytes | str) -> LayoutDocument:
    """Parse and validate an interchange document.

    Raises InterchangeParseError (with byte offset) for malformed JSON and
    LayoutValidationError for schema violations, including non-contiguous
    page indices (the message lists the missing ones).
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InterchangeParseError(
            f"malformed interchange JSON at byte {exc.pos}: {exc.msg}", offset=exc.pos
        ) from exc

    _expect(isinstance(data, dict), "top level must be an object")
    doc_name = data.get("doc_name")
    _expect(isinstance(doc_name, str) and doc_name != "", "doc_name must be a non-empty string")
    doc_type = data.get("doc_type", "")
    doc_path = data.get("doc_path", "")
    _expect(isinstance(doc_type, str), "doc_type must be a string")
    _expect(isinstance(doc_path, str), "doc_path must be a string")
    raw_pages = data.get("pages", [])
    _expect(isinstance(raw_pages, list), "pages must be a list")

    pages: list[LayoutPage] = []
    for i, rp in enumerate(raw_pages):
        where = f"pages[{i}]"
        _expect(isinstance(rp, dict), f"{where}: page must be an object")
        idx = rp.get("page_idx")
        _expect(isinstance(idx, int) and idx >= 0, f"{where}: page_idx must be a non-negative int")
        printed = rp.get("printed_page_number")
        _expect(
            printed is None or isinstance(printed, str),
            f"{where}: printed_page_number must be a string",
        )
        header = rp.get("header")
        footer = rp.get("footer")
        _expect(header is None or isinstance(header, str), f"{where}: header must be a string")
        _expect(footer is None or isinstance(footer, str), f"{where}: footer must be a string")
        elements = [
            _parse_element(re_, f"{where}.elements[{j}]")
            for j, re_ in enumerate(rp.get("elements", []))
        ]
        pages.append(
            LayoutPage(
                page_idx=idx,
                printed_page_number=printed,
                header=header,
                footer=footer,
                elements=elements,
            )
        )

    indices = [p.page_idx for p in pages]
    if indices != sorted(indices):
        raise LayoutValidationError("pages out of order: page_idx must be strictly increasing")
    if len(set(indices)) != len(indices):
        dupes = sorted({i for i in indices if indices.count(i) > 1})
        raise LayoutValidationError(f"duplicate page_idx {', '.join(map(str, dupes))}")
    if indices and indices != list(range(len(indices))):
        missing = sorted(set(range(max(indices) + 1)) - set(indices))
        raise LayoutValidationError(
            "missing page_idx " + ", ".join(str(m) for m in missing)
        )

    return LayoutDocument(doc_name=doc_name, doc_type=doc_type, doc_path=doc_path, pages=pages)


def _element_to_dict(el: LayoutElement) -> dict:
    out: dict = {"kind": el.kind.value, "text": el.text}
    if el.level is not None:
        out["level"] = el.level
    if el.structure is not None:
        out["structure"] = {"rows": el.structure}
    if el.description is not None:
        out["description"] = el.description
    return out


def document_to_dict(doc: LayoutDocument) -> dict:
    pages = []
    for p in doc.pages:
        page: dict = {"page_idx": p.page_idx}
        if p.printed_page_number is not None:
            page["printed_page_number"] = p.printed_page_number
        if p.header is not None:
            page["header"] = p.header
        if p.footer is not None:
            page["footer"] = p.footer
        page["elements"] = [_element_to_dict(e) for e in p.elements]
        pages.append(page)
    return {
        "doc_name": doc.doc_name,
        "doc_type": doc.doc_type,
        "doc_path": doc.doc_path,
        "pages": pages,
    }


def serialize_layout_document(doc: LayoutDocument) -> bytes:
    """Canonical serialization: sorted keys, compact separators, UTF-8.

    serialize(parse(serialize(doc))) is byte-identical to serialize(doc).
    """
    return json.dumps(
        document_to_dict(doc), sort_keys=True, ensure_ascii=False, separators=(",", ":")
    ).encode("utf-8")


def detect_toc_pages(
    doc: LayoutDocument, keywords: Iterable[str] = DEFAULT_TOC_KEYWORDS
) -> list[int]:
    """Pages whose section_header or toc_candidate text contains a keyword.

    Matching is case-insensitive substring. Result preserves page order and
    is a subset of existing page indices; empty when nothing matches.
    """
    kws = [k.lower() for k in keywords]
    if not kws:
        raise ConfigurationError("detect_toc_pages requires at least one keyword")
    hits = []
    for page in doc.pages:
        for el in page.elements:
            if el.kind in (ElementKind.SECTION_HEADER, ElementKind.TOC_CANDIDATE):
                low = el.text.lower()
                if any(k in low for k in kws):
                    hits.append(page.page_idx)
                    break
    return hits


_PRINTED_INT_RE = re.compile(r"^\s*(\d+)\s*$")


def compute_page_offset(doc: LayoutDocument) -> Optional[int]:
    """Modal value of (page_idx - printed page number).

    Pages whose printed number does not parse as a plain integer (roman
    numerals, blanks) are ignored. Returns None when no page has a parseable
    printed number. Ties on the mode resolve to the smallest offset.
    """
    diffs = []
    for page in doc.pages:
        if page.printed_page_number is None:
            continue
        m = _PRINTED_INT_RE.match(page.printed_page_number)
        if m:
            diffs.append(page.page_idx - int(m.group(1)))
    if not diffs:
        return None
    counts = Counter(diffs)
    best = max(counts.values())
    return min(off for off, c in counts.items() if c == best)


# Title, >=2 filler chars (dot, space, en dash), trailing integer.
_TOC_LINE_RE = re.compile(r"^(?P<title>\S.*?)[ .–]{2,}(?P<printed>\d+)$")
_LEADING_NUMBERING_RE = re.compile(r"^(\d+(?:\.\d+)*)[.)]?\s")


def _line_depth(raw_line: str, title: str) -> int:
    m = _LEADING_NUMBERING_RE.match(title + " ")
    if m:
        return m.group(1).count(".")
    indent = len(raw_line) - len(raw_line.lstrip(" "))
    return indent // 2


def extract_toc(
    doc: LayoutDocument, toc_pages: Sequence[int], offset: int
) -> TocExtraction:
    """Extract ToC entries from the given pages and remap page numbers.

    Each line matching ``<title> <filler> <number>`` becomes an entry with
    physical_page = printed_page + offset; when the remap falls outside
    [0, page_count) the entry is kept with physical_page unset. Lines that do
    not match are skipped and counted.
    """
    if not toc_pages:
        raise ConfigurationError("extract_toc requires a non-empty toc_pages sequence")
    by_idx = {p.page_idx: p for p in doc.pages}
    entries: list[TocEntry] = []
    skipped = 0
    for idx in toc_pages:
        page = by_idx.get(idx)
        if page is None:
            continue
        for el in page.elements:
            if el.kind not in (ElementKind.TOC_CANDIDATE, ElementKind.PARAGRAPH):
                continue
            for raw_line in el.text.splitlines():
                body = raw_line.strip()
                if not body:
                    continue
                m = _TOC_LINE_RE.match(body)
                if not m:
                    skipped += 1
                    continue
                printed = int(m.group("printed"))
                physical: Optional[int] = printed + offset
                if not (0 <= physical < doc.page_count):
                    physical = None
                entries.append(
                    TocEntry(
                        title=m.group("title"),
                        printed_page=printed,
                        physical_page=physical,
                        depth=_line_depth(raw_line, m.group("title")),
                    )
                )
    return TocExtraction(entries=entries, skipped=skipped)


_TOKEN_SPAN_RE = re.compile(r"\S+")


def chunk_section_spans(
    text: str,
    max_units: int = DEFAULT_CHUNK_TOKENS,
    overlap_units: int = DEFAULT_CHUNK_OVERLAP,
) -> list[tuple[int, int]]:
    """Character spans of overlapping chunks of whitespace-delimited tokens.

    Consecutive chunks share exactly ``overlap_units`` tokens, so dropping
    the first ``overlap_units`` tokens of every chunk after the first
    reconstructs the input token stream. Split points prefer a token ending
    in sentence punctuation when one exists inside the window.
    """
    if overlap_units < 0 or max_units <= overlap_units:
        raise ConfigurationError(
            f"max_units ({max_units}) must exceed overlap_units ({overlap_units}) >= 0"
        )
    spans = [(m.start(), m.end()) for m in _TOKEN_SPAN_RE.finditer(text)]
    if not spans:
        return []
    n = len(spans)
    if n <= max_units:
        return [(spans[0][0], spans[-1][1])]

    out: list[tuple[int, int]] = []
    start = 0
    while True:
        end = min(start + max_units, n)
        if end < n:
            for k in range(end, start + overlap_units + 1, -1):
                if text[spans[k - 1][1] - 1] in ".!?":
                    end = k
                    break
        out.append((spans[start][0], spans[end - 1][1]))
        if end >= n:
            return out
        start = end - overlap_units


def chunk_section(
    text: str,
    max_units: int = DEFAULT_CHUNK_TOKENS,
    overlap_units: int = DEFAULT_CHUNK_OVERLAP,
) -> list[str]:
    """Chunk text into token-bounded substrings of the original string."""
    return [text[s:e] for s, e in chunk_section_spans(text, max_units, overlap_units)]
