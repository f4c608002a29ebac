"""Retrieval pipeline: hybrid search, graph-aware boosts, expansion, re-ranking.

A query flows through ordered stages: optional ToC retrieval with LLM page
lookup, hybrid full-text + vector retrieval fused with reciprocal ranks and
unioned with LLM-generated graph traversal, cross-page merging over has_next
chains, an optional self-reflection gate followed by table/diagram expansion,
re-ranking, prompt assembly and completion. Every stage appends to a trace so
behaviour differences between presets are observable.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

from .errors import (
    CompletionFailure,
    ConfigurationError,
    MissingParameterError,
    ProviderError,
    TransportError,
)
from .graph import (
    EdgeKind,
    NodeLabel,
    PropertyGraph,
    graph_schema,
    node_title,
    render_schema,
    retrieval_text,
)
from .index import (
    Bm25Index,
    IndexEntry,
    ScoredContext,
    VectorIndex,
    highlight_spans,
    rrf_fuse,
    tokenize,
)
from .layout import TocEntry
from .query import execute_query, generate_query

logger = logging.getLogger(__name__)

HYBRID_LABELS = (
    NodeLabel.SECTION,
    NodeLabel.SECTION_CHUNK,
    NodeLabel.TABLE_CHUNK,
    NodeLabel.DIAGRAM,
)
EXPANSION_LABELS = (NodeLabel.TABLE, NodeLabel.DIAGRAM)


class Preset(str, Enum):
    SETTING1 = "setting1"
    SETTING2 = "setting2"
    SETTING3 = "setting3"


@dataclass
class PipelineConfig:
    """Stage budgets and toggles; defaults follow the reference setup
    (top 3 tables and diagrams, top 20 contexts, top 10 after re-ranking)."""

    top_tables_diagrams: int = 3
    top_contexts: int = 20
    top_rerank: int = 10
    enable_toc: bool = True
    enable_expansion: bool = True
    enable_reflection: bool = True
    enable_traversal: bool = True
    preset: Preset = Preset.SETTING3
    toc_sections: int = 5
    max_prompt_chars: int = 12000

    def __post_init__(self) -> None:
        self.preset = Preset(self.preset)
        if self.top_rerank > self.top_contexts:
            raise ConfigurationError(
                f"top_rerank ({self.top_rerank}) must not exceed top_contexts ({self.top_contexts})"
            )
        for name in ("top_tables_diagrams", "top_contexts", "top_rerank", "toc_sections"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    @classmethod
    def from_preset(cls, preset: Preset | str, **overrides) -> "PipelineConfig":
        preset = Preset(preset)
        flags = {
            Preset.SETTING1: dict(
                enable_toc=False, enable_expansion=False, enable_reflection=False,
                enable_traversal=False,
            ),
            Preset.SETTING2: dict(
                enable_toc=True, enable_expansion=True, enable_reflection=False,
                enable_traversal=True,
            ),
            Preset.SETTING3: dict(
                enable_toc=True, enable_expansion=True, enable_reflection=True,
                enable_traversal=True,
            ),
        }[preset]
        flags.update(overrides)
        return cls(preset=preset, **flags)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        known = set(self.__dataclass_fields__)
        unknown = set(overrides) - known
        if unknown:
            raise ConfigurationError(f"unknown config overrides: {sorted(unknown)}")
        return replace(self, **overrides)


@dataclass
class ReflectionDecision:
    need_tables: bool
    need_diagrams: bool
    rationale: str = ""


@dataclass
class TraceEvent:
    stage: str
    count: int
    note: str = ""

    def to_dict(self) -> dict:
        out = {"stage": self.stage, "count": self.count}
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class AnswerBundle:
    answer_text: str
    contexts: list[ScoredContext]
    confidence: float
    trace: list[TraceEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "answer_text": self.answer_text,
            "confidence": round(self.confidence, 6),
            "contexts": [c.to_dict() for c in self.contexts],
            "trace": [t.to_dict() for t in self.trace],
        }


# -- stage implementations -----------------------------------------------------


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = sum(x * x for x in a) ** 0.5
    nb = sum(x * x for x in b) ** 0.5
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def toc_retrieve(
    query: str,
    graph: PropertyGraph,
    embedder,
    k: int,
    company_docs: Optional[set[str]] = None,
) -> list[str]:
    """Top-k SECTION ids by title similarity to the query.

    Ranks SECTION and MASTER_SECTION titles; a master section stands for the
    sections under it. Documents without master sections contribute nothing,
    and the function returns [] when none exist at all.
    """

    def in_scope(node) -> bool:
        return company_docs is None or node.props.get("parentDocName") in company_docs

    masters = [n for n in graph.nodes_by_label(NodeLabel.MASTER_SECTION) if in_scope(n)]
    if not masters:
        return []
    sections = [n for n in graph.nodes_by_label(NodeLabel.SECTION) if in_scope(n)]
    candidates = [n for n in masters + sections if node_title(n).strip()]
    if not candidates:
        return []
    qvec = embedder.embed([query])[0]
    if not any(qvec):
        return []
    title_vecs = embedder.embed([node_title(n) for n in candidates])
    ranked = sorted(
        zip(candidates, title_vecs), key=lambda cv: (-_cosine(qvec, cv[1]), cv[0].id)
    )
    out: list[str] = []
    seen: set[str] = set()
    for node, _vec in ranked:
        if len(out) >= k:
            break
        if node.label is NodeLabel.SECTION:
            expansion = [node]
        else:
            expansion = [
                n
                for n in graph.neighbors(node.id, EdgeKind.IS_UNDER, "in")
                if n.label is NodeLabel.SECTION
            ]
        for sec in expansion:
            if sec.id not in seen and len(out) < k:
                seen.add(sec.id)
                out.append(sec.id)
    return out


_PAGE_LOOKUP_PROMPT = """List the physical page numbers most relevant to the query, as comma-separated integers.
Example: query "installation steps" against an entry "Installation (page 4)" -> 4
Example: query "pricing and billing" against entries on pages 2 and 9 -> 2, 9
Table of contents:
{entries}
Query: {query}
Pages:"""


def llm_page_lookup(query: str, toc_entries: Sequence[TocEntry], llm, page_count: int) -> list[int]:
    """Few-shot page extraction from the ToC; best-effort, never raises.

    Integers are pulled from the response and filtered to [0, page_count);
    transport failures or unparseable prose yield [].
    """
    listed = [e for e in toc_entries if e.physical_page is not None]
    if not listed:
        return []
    entries_text = "\n".join(f"- {e.title} (page {e.physical_page})" for e in listed)
    prompt = _PAGE_LOOKUP_PROMPT.format(entries=entries_text, query=query)
    try:
        response = llm.complete(prompt)
    except (TransportError, ProviderError):
        return []
    pages = []
    for raw in re.findall(r"-?\d+", response or ""):
        page = int(raw)
        if 0 <= page < page_count and page not in pages:
            pages.append(page)
    return pages


def _chunk_successor(graph: PropertyGraph, chunk_id: str) -> Optional[str]:
    nxt = graph.neighbors(chunk_id, EdgeKind.HAS_NEXT, "out")
    if nxt:
        return nxt[0].id
    sections = [
        p
        for p in graph.neighbors(chunk_id, EdgeKind.IS_UNDER, "out")
        if p.label is NodeLabel.SECTION
    ]
    if not sections:
        return None
    nxt_sections = graph.neighbors(sections[0].id, EdgeKind.HAS_NEXT, "out")
    if not nxt_sections:
        return None
    chunks = [
        c
        for c in graph.neighbors(nxt_sections[0].id, EdgeKind.IS_UNDER, "in")
        if c.label is NodeLabel.SECTION_CHUNK
    ]
    return chunks[0].id if chunks else None


def _merge_group(group: list[ScoredContext]) -> ScoredContext:
    if len(group) == 1:
        return group[0]
    texts = [c.text for c in group]
    merged_text = "\n".join(texts)
    spans: list[tuple[int, int]] = []
    offset = 0
    for ctx in group:
        spans.extend((s + offset, e + offset) for s, e in ctx.highlight_spans)
        offset += len(ctx.text) + 1
    scores: dict[str, float] = {}
    for ctx in group:
        for key, val in ctx.scores.items():
            scores[key] = max(scores.get(key, float("-inf")), val)
    pages = [c.page_idx for c in group if c.page_idx is not None]
    return ScoredContext(
        node_id=group[0].node_id,
        label=NodeLabel.SECTION_CHUNK,
        text=merged_text,
        doc_name=group[0].doc_name,
        page_idx=min(pages) if pages else None,
        scores=scores,
        fused_score=max(c.fused_score for c in group),
        highlight_spans=spans,
    )


def merge_cross_page(contexts: Sequence[ScoredContext], graph: PropertyGraph) -> list[ScoredContext]:
    """Merge retrieved section chunks that are adjacent on has_next chains.

    Adjacency covers sibling chunks inside a section and the last chunk of a
    section followed by the first chunk of the next section, so a passage
    split across pages comes back as one context. Merging is transitive; the
    merged context keeps the best scores and the union of highlight spans,
    re-offset into the concatenated text.
    """
    chunk_ctxs = {
        c.node_id: c
        for c in contexts
        if c.label is NodeLabel.SECTION_CHUNK and graph.has_node(c.node_id)
    }
    succ: dict[str, str] = {}
    for cid in chunk_ctxs:
        nxt = _chunk_successor(graph, cid)
        if nxt is not None and nxt in chunk_ctxs:
            succ[cid] = nxt
    has_pred = set(succ.values())

    out: list[ScoredContext] = []
    emitted: set[str] = set()
    for ctx in contexts:
        if ctx.node_id not in chunk_ctxs:
            out.append(ctx)
            continue
        if ctx.node_id in has_pred or ctx.node_id in emitted:
            continue
        group = [chunk_ctxs[ctx.node_id]]
        emitted.add(ctx.node_id)
        cursor = ctx.node_id
        while cursor in succ:
            cursor = succ[cursor]
            group.append(chunk_ctxs[cursor])
            emitted.add(cursor)
        out.append(_merge_group(group))
    return out


_REFLECT_PROMPT = """Decide whether table or diagram information is needed to answer the query.
Query: {query}
Respond exactly in the form: tables:yes|no diagrams:yes|no"""

_REFLECT_TABLES_RE = re.compile(r"tables?\s*[:=]\s*(yes|no|true|false)", re.IGNORECASE)
_REFLECT_DIAGRAMS_RE = re.compile(r"diagrams?\s*[:=]\s*(yes|no|true|false)", re.IGNORECASE)


def reflect(query: str, llm) -> ReflectionDecision:
    """Ask whether the query needs table/diagram content.

    Fails open: an unparseable response or transport failure turns both flags
    on, since dropping a relevant table costs more than extra context.
    """
    try:
        response = llm.complete(_REFLECT_PROMPT.format(query=query)) or ""
    except (TransportError, ProviderError):
        return ReflectionDecision(True, True, "transport failure; including tables and diagrams")
    tables_m = _REFLECT_TABLES_RE.search(response)
    diagrams_m = _REFLECT_DIAGRAMS_RE.search(response)
    if tables_m is None or diagrams_m is None:
        return ReflectionDecision(True, True, "unparseable response; including tables and diagrams")
    return ReflectionDecision(
        need_tables=tables_m.group(1).lower() in ("yes", "true"),
        need_diagrams=diagrams_m.group(1).lower() in ("yes", "true"),
        rationale="parsed from model response",
    )


def rerank(query: str, contexts: Sequence[ScoredContext], reranker, m: int) -> list[ScoredContext]:
    """Top-m contexts by reranker relevance; ties keep the prior fused order.

    A failing reranker passes the prior order through unchanged (logged).
    """
    contexts = list(contexts)
    if not contexts:
        return []
    m = max(0, min(m, len(contexts)))
    try:
        scores = reranker.rerank_scores(query, [c.text for c in contexts])
    except Exception as exc:
        logger.warning("reranker failed (%s); passing prior order through", exc)
        return contexts[:m]
    for ctx, score in zip(contexts, scores):
        ctx.scores["rerank"] = float(score)
    ranked = sorted(
        range(len(contexts)), key=lambda i: (-contexts[i].scores["rerank"], i)
    )
    return [contexts[i] for i in ranked[:m]]


NO_CONTEXT_MARKER = "No context available."


def assemble_prompt(query: str, contexts: Sequence[ScoredContext], max_chars: int = 12000) -> str:
    """Numbered references with provenance, then the question.

    When the assembled prompt exceeds max_chars, the lowest-ranked contexts
    are dropped from the tail first.
    """
    kept = list(contexts)

    def build(items: Sequence[ScoredContext]) -> str:
        lines = ["Answer the question using the numbered references.", ""]
        if not items:
            lines.append(NO_CONTEXT_MARKER)
            lines.append("")
        for i, ctx in enumerate(items, start=1):
            page = "?" if ctx.page_idx is None else str(ctx.page_idx)
            lines.append(f"Reference {i} (doc: {ctx.doc_name}, page: {page}):")
            lines.append(ctx.text)
            lines.append("")
        lines.append(f"Question: {query}")
        lines.append("Answer:")
        return "\n".join(lines)

    prompt = build(kept)
    while len(prompt) > max_chars and kept:
        kept = kept[:-1]
        prompt = build(kept)
    if len(prompt) > max_chars:
        prompt = prompt[:max_chars]
    return prompt


# -- engine ---------------------------------------------------------------------


class RetrievalEngine:
    """Sealed graph plus indexes plus providers; answers queries.

    Each answer() call is independent and read-only, so a single engine is
    safe to share across threads once constructed.
    """

    def __init__(
        self,
        graph: PropertyGraph,
        providers,
        config: Optional[PipelineConfig] = None,
        build_approx: bool = False,
        seal: bool = True,
        indexes: Optional[dict] = None,
    ):
        self.graph = graph
        self.completion = providers.completion
        self.embedder = providers.embedder
        self.reranker = providers.reranker
        self.config = config or PipelineConfig.from_preset(Preset.SETTING3)
        self._build_approx = build_approx
        if indexes is not None:
            self.bm25 = indexes["bm25"]
            self.vectors = indexes.get("vectors")
            self.td_bm25 = indexes["td_bm25"]
            self.td_vectors = indexes.get("td_vectors")
            self._catalog = {e.node_id: e for e in self.bm25.entries}
            self._catalog.update({e.node_id: e for e in self.td_bm25.entries})
        else:
            self._build_indexes()
        self.schema = graph_schema(graph)
        self.schema_text = render_schema(graph)
        if seal and not graph.sealed:
            graph.seal()

    # -- index construction --

    def _entry_for(self, node) -> IndexEntry:
        text = node_title(node) if node.label is NodeLabel.SECTION else retrieval_text(node)
        return IndexEntry(
            node_id=node.id,
            label=node.label,
            text=text,
            doc_name=node.props.get("parentDocName", node.props.get("docName", "")),
            page_idx=node.props.get("parentPageIdx", node.props.get("pageIdx")),
        )

    def _build_pair(self, labels) -> tuple[Bm25Index, Optional[VectorIndex]]:
        entries = [
            self._entry_for(n) for n in self.graph.nodes.values() if n.label in labels
        ]
        bm25 = Bm25Index()
        for e in entries:
            if e.text.strip():
                bm25.add(e)
        bm25.seal()
        texts = [e.text for e in entries]
        vectors = self.embedder.embed(texts) if texts else []
        vec_index: Optional[VectorIndex] = None
        for entry, vec in zip(entries, vectors):
            if not any(vec):
                continue
            if vec_index is None:
                vec_index = VectorIndex(dim=len(vec))
            vec_index.add(entry, vec)
        if vec_index is not None:
            vec_index.seal(approx=self._build_approx)
        return bm25, vec_index

    def _build_indexes(self) -> None:
        self.bm25, self.vectors = self._build_pair(set(HYBRID_LABELS))
        self.td_bm25, self.td_vectors = self._build_pair(set(EXPANSION_LABELS))
        self._catalog = {
            e.node_id: e for e in self.bm25.entries
        }
        self._catalog.update({e.node_id: e for e in self.td_bm25.entries})

    # -- helpers --

    def _company_docs(self, company: str) -> set[str]:
        from .graph import company_node_id

        cid = company_node_id(company)
        if not self.graph.has_node(cid):
            return set()
        return {
            n.props.get("docName", "")
            for n in self.graph.neighbors(cid, EdgeKind.IS_UNDER, "in")
            if n.label is NodeLabel.DOCUMENT
        }

    def has_company(self, company: str) -> bool:
        from .graph import company_node_id

        return self.graph.has_node(company_node_id(company))

    def _toc_entries(self, company_docs: set[str]) -> list[TocEntry]:
        entries: list[TocEntry] = []
        for node in self.graph.nodes_by_label(NodeLabel.TABLE_OF_CONTENTS):
            if node.props.get("parentDocName") not in company_docs:
                continue
            for raw in json.loads(node.props.get("entries", "[]")):
                entries.append(
                    TocEntry(
                        title=raw["title"],
                        printed_page=raw["printed_page"],
                        physical_page=raw.get("physical_page"),
                        depth=raw.get("depth", 0),
                    )
                )
        return entries

    def _page_count(self, company_docs: set[str]) -> int:
        pages = [
            n.props.get("pageIdx", -1)
            for n in self.graph.nodes_by_label(NodeLabel.PAGE)
            if n.props.get("parentDocName") in company_docs
        ]
        return max(pages) + 1 if pages else 0

    def _section_chunks(self, section_id: str) -> list[str]:
        return [
            n.id
            for n in self.graph.neighbors(section_id, EdgeKind.IS_UNDER, "in")
            if n.label is NodeLabel.SECTION_CHUNK
        ]

    def _context_from_id(self, node_id: str, query_terms: Sequence[str]) -> ScoredContext:
        entry = self._catalog.get(node_id)
        if entry is None:
            node = self.graph.node(node_id)
            entry = self._entry_for(node)
        return ScoredContext(
            node_id=entry.node_id,
            label=entry.label,
            text=entry.text,
            doc_name=entry.doc_name,
            page_idx=entry.page_idx,
            highlight_spans=highlight_spans(entry.text, query_terms),
        )

    # -- stages needing indexes --

    def expand_tables_diagrams(
        self,
        query: str,
        decision: ReflectionDecision,
        k: int,
        retrieved: Sequence[ScoredContext] = (),
        company_docs: Optional[set[str]] = None,
    ) -> list[ScoredContext]:
        """Top-k table/diagram contexts by fused BM25+cosine ranking.

        Tables and diagrams sharing a master section with already-retrieved
        sections are included first, inside the same k budget. The decision
        flags gate each label; both off yields [].
        """
        if k <= 0 or not (decision.need_tables or decision.need_diagrams):
            return []

        def allowed(label: NodeLabel) -> bool:
            if label is NodeLabel.TABLE:
                return decision.need_tables
            if label is NodeLabel.DIAGRAM:
                return decision.need_diagrams
            return False

        lists = []
        bm25_hits = {c.node_id: c.scores["bm25"] for c in self.td_bm25.search(query, k * 4)} if len(self.td_bm25) else {}
        if bm25_hits:
            lists.append(sorted(bm25_hits, key=lambda i: (-bm25_hits[i], i)))
        vec_hits: dict[str, float] = {}
        if self.td_vectors is not None:
            qvec = self.embedder.embed([query])[0]
            if any(qvec):
                for ctx in self.td_vectors.search(qvec, min(k * 4, len(self.td_vectors))):
                    vec_hits[ctx.node_id] = ctx.scores["vector"]
        if vec_hits:
            lists.append(sorted(vec_hits, key=lambda i: (-vec_hits[i], i)))
        fused = rrf_fuse(lists) if lists else []
        fused_rank = {node_id: score for node_id, score in fused}

        # Tables/diagrams under the same master section as retrieved sections.
        linked: list[str] = []
        seen_masters: set[str] = set()
        for ctx in retrieved:
            if not self.graph.has_node(ctx.node_id):
                continue
            node = self.graph.node(ctx.node_id)
            section_ids = []
            if node.label is NodeLabel.SECTION:
                section_ids = [node.id]
            elif node.label is NodeLabel.SECTION_CHUNK:
                section_ids = [
                    p.id
                    for p in self.graph.neighbors(node.id, EdgeKind.IS_UNDER, "out")
                    if p.label is NodeLabel.SECTION
                ]
            for sid in section_ids:
                for parent in self.graph.neighbors(sid, EdgeKind.IS_UNDER, "out"):
                    if parent.label is not NodeLabel.MASTER_SECTION or parent.id in seen_masters:
                        continue
                    seen_masters.add(parent.id)
                    for sibling in self.graph.neighbors(parent.id, EdgeKind.IS_UNDER, "in"):
                        if sibling.label in EXPANSION_LABELS and sibling.id not in linked:
                            linked.append(sibling.id)

        query_terms = tokenize(query)
        out: list[ScoredContext] = []
        picked: set[str] = set()

        def push(node_id: str) -> None:
            if node_id in picked or len(out) >= k:
                return
            node = self.graph.node(node_id)
            if not allowed(node.label):
                return
            if company_docs is not None and node.props.get("parentDocName") not in company_docs:
                return
            ctx = self._context_from_id(node_id, query_terms)
            if node_id in bm25_hits:
                ctx.scores["bm25"] = bm25_hits[node_id]
            if node_id in vec_hits:
                ctx.scores["vector"] = vec_hits[node_id]
            ctx.scores["expansion"] = 1.0
            ctx.fused_score = fused_rank.get(node_id, 0.0)
            picked.add(node_id)
            out.append(ctx)

        for node_id in sorted(linked, key=lambda i: (-fused_rank.get(i, 0.0), i)):
            push(node_id)
        for node_id, _score in fused:
            push(node_id)
        return out

    # -- full pipeline --

    def answer(self, query: str, company: str, config: Optional[PipelineConfig] = None) -> AnswerBundle:
        """Run the full retrieval and reasoning flow for one query."""
        cfg = config or self.config
        trace: list[TraceEvent] = []
        company_docs = self._company_docs(company)
        query_terms = tokenize(query)

        rank_lists: list[list[str]] = []
        score_maps: dict[str, dict[str, float]] = {"bm25": {}, "vector": {}}
        toc_pages: list[int] = []

        if cfg.enable_toc:
            section_ids = toc_retrieve(
                query, self.graph, self.embedder, cfg.toc_sections, company_docs=company_docs
            )
            toc_list: list[str] = []
            for sid in section_ids:
                for cid in self._section_chunks(sid):
                    if cid not in toc_list:
                        toc_list.append(cid)
            trace.append(TraceEvent("toc", len(section_ids)))
            toc_entries = self._toc_entries(company_docs)
            if toc_entries:
                toc_pages = llm_page_lookup(
                    query, toc_entries, self.completion, self._page_count(company_docs)
                )
                trace.append(TraceEvent("page_lookup", len(toc_pages)))
                for node in self.graph.nodes_by_label(NodeLabel.SECTION_CHUNK):
                    if (
                        node.props.get("parentDocName") in company_docs
                        and node.props.get("parentPageIdx") in toc_pages
                        and node.id not in toc_list
                    ):
                        toc_list.append(node.id)
            if toc_list:
                rank_lists.append(toc_list)

        fetch_k = max(cfg.top_contexts * 4, 20)
        bm25_results = self.bm25.search(query, min(fetch_k, max(len(self.bm25), 1)))
        bm25_list = [c.node_id for c in bm25_results if c.doc_name in company_docs][: cfg.top_contexts]
        score_maps["bm25"] = {c.node_id: c.scores["bm25"] for c in bm25_results}
        if bm25_list:
            rank_lists.append(bm25_list)

        if self.vectors is not None:
            qvec = self.embedder.embed([query])[0]
            if any(qvec):
                vec_results = self.vectors.search(qvec, min(fetch_k, len(self.vectors)))
                vec_list = [c.node_id for c in vec_results if c.doc_name in company_docs][: cfg.top_contexts]
                score_maps["vector"] = {c.node_id: c.scores["vector"] for c in vec_results}
                if vec_list:
                    rank_lists.append(vec_list)

        if cfg.enable_traversal:
            traversal_list = self._traversal_candidates(query, company_docs, toc_pages, trace)
            if traversal_list:
                rank_lists.append(traversal_list)

        fused = rrf_fuse(rank_lists) if rank_lists else []
        contexts: list[ScoredContext] = []
        for node_id, fused_score in fused[: cfg.top_contexts]:
            ctx = self._context_from_id(node_id, query_terms)
            ctx.fused_score = fused_score
            for name, mapping in score_maps.items():
                if node_id in mapping:
                    ctx.scores[name] = mapping[node_id]
            contexts.append(ctx)
        trace.append(TraceEvent("hybrid", len(contexts)))

        merged = merge_cross_page(contexts, self.graph)
        trace.append(TraceEvent("merge", len(merged)))

        expanded: list[ScoredContext] = []
        if cfg.enable_expansion:
            if cfg.enable_reflection:
                decision = reflect(query, self.completion)
                trace.append(
                    TraceEvent(
                        "reflect",
                        int(decision.need_tables) + int(decision.need_diagrams),
                        note=f"tables={decision.need_tables} diagrams={decision.need_diagrams}",
                    )
                )
            else:
                decision = ReflectionDecision(True, True, "expansion ungated")
            expanded = self.expand_tables_diagrams(
                query, decision, cfg.top_tables_diagrams, retrieved=merged,
                company_docs=company_docs,
            )
            trace.append(TraceEvent("expand", len(expanded)))

        top = rerank(query, merged, self.reranker, cfg.top_rerank)
        trace.append(TraceEvent("rerank", len(top)))

        if expanded:
            try:
                scores = self.reranker.rerank_scores(query, [c.text for c in expanded])
                for ctx, score in zip(expanded, scores):
                    ctx.scores["rerank"] = float(score)
            except Exception as exc:
                logger.warning("reranker failed on expansion contexts (%s)", exc)
        picked = {c.node_id for c in top}
        final = top + [c for c in expanded if c.node_id not in picked]

        prompt = assemble_prompt(query, final, cfg.max_prompt_chars)
        trace.append(TraceEvent("assemble", len(final)))
        confidence = (
            sum(c.scores.get("rerank", 0.0) for c in final) / len(final) if final else 0.0
        )

        for event in trace:
            logger.info("stage=%s count=%d %s", event.stage, event.count, event.note)

        try:
            answer_text = self.completion.complete(prompt)
        except (TransportError, ProviderError) as exc:
            trace.append(TraceEvent("complete", 0, note=f"completion failed: {exc}"))
            raise CompletionFailure(
                str(exc),
                bundle=AnswerBundle(
                    answer_text="", contexts=final, confidence=confidence, trace=trace
                ),
            ) from exc
        trace.append(TraceEvent("complete", 1))
        return AnswerBundle(
            answer_text=answer_text, contexts=final, confidence=confidence, trace=trace
        )

    def _traversal_candidates(
        self,
        query: str,
        company_docs: set[str],
        toc_pages: list[int],
        trace: list[TraceEvent],
    ) -> list[str]:
        try:
            ast = generate_query(
                self.completion,
                self.schema_text,
                query,
                doc_name=",".join(sorted(company_docs)),
                schema=self.schema,
            )
        except (TransportError, ProviderError) as exc:
            trace.append(TraceEvent("traversal", 0, note=f"generation failed: {exc}"))
            return []
        if ast is None:
            trace.append(TraceEvent("traversal", 0, note="no safe query generated"))
            return []
        params = {
            "doc_id": sorted(company_docs),
            "pages": [str(p) for p in toc_pages],
        }
        try:
            rows = execute_query(ast, self.graph, params)
        except MissingParameterError as exc:
            trace.append(TraceEvent("traversal", 0, note=str(exc)))
            return []
        ids: list[str] = []
        for row in rows:
            for node in row.values():
                if node.id not in ids:
                    ids.append(node.id)
        trace.append(TraceEvent("traversal", len(ids)))
        return ids
