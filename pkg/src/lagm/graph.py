"""Property graph for layout-aware document modeling.

Ten node labels mirror the document hierarchy (company, document, page,
table of contents, master section, section, chunks, table, diagram). Edges
carry one of four kinds; `is_under` edges additionally expose a label-derived
alias such as S_IS_UNDER_P so traversal queries can name the exact hop.

The store is single-writer: build and augmentation mutate it, `seal()` makes
it immutable, and sealed graphs are safe to share across query threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import (
    GraphIntegrityError,
    IngestionConflictError,
    LagmError,
    NodeNotFoundError,
    SnapshotFormatError,
    SnapshotVersionError,
)
from .layout import (
    DEFAULT_CHUNK_OVERLAP,
    DEFAULT_CHUNK_TOKENS,
    ElementKind,
    LayoutDocument,
    TocEntry,
    chunk_section_spans,
)

SNAPSHOT_VERSION = 1


class NodeLabel(str, Enum):
    COMPANY = "COMPANY"
    DOCUMENT = "DOCUMENT"
    PAGE = "PAGE"
    TABLE_OF_CONTENTS = "TABLE_OF_CONTENTS"
    MASTER_SECTION = "MASTER_SECTION"
    SECTION = "SECTION"
    SECTION_CHUNK = "SECTION_CHUNK"
    TABLE = "TABLE"
    TABLE_CHUNK = "TABLE_CHUNK"
    DIAGRAM = "DIAGRAM"


class EdgeKind(str, Enum):
    IS_UNDER = "IS_UNDER"
    HAS_NEXT = "HAS_NEXT"
    IS_SIMILAR = "IS_SIMILAR"
    HAS_STEM = "HAS_STEM"


# Single-letter abbreviations used in is_under aliases; both chunk labels
# share C, the remaining labels get short unambiguous forms.
_LABEL_ABBREV = {
    NodeLabel.COMPANY: "CO",
    NodeLabel.DOCUMENT: "DOC",
    NodeLabel.PAGE: "P",
    NodeLabel.TABLE_OF_CONTENTS: "TOC",
    NodeLabel.MASTER_SECTION: "M",
    NodeLabel.SECTION: "S",
    NodeLabel.SECTION_CHUNK: "C",
    NodeLabel.TABLE: "T",
    NodeLabel.TABLE_CHUNK: "C",
    NodeLabel.DIAGRAM: "D",
}


def edge_alias(kind: EdgeKind, src_label: NodeLabel, dst_label: NodeLabel) -> str:
    """Alias string for an edge; pure function of (kind, src label, dst label)."""
    if kind is EdgeKind.IS_UNDER:
        return f"{_LABEL_ABBREV[src_label]}_IS_UNDER_{_LABEL_ABBREV[dst_label]}"
    return kind.value


@dataclass
class LagmNode:
    id: str
    label: NodeLabel
    props: dict = field(default_factory=dict)
    embedding: Optional[list[float]] = None


@dataclass(frozen=True)
class LagmEdge:
    src: str
    dst: str
    kind: EdgeKind
    weight: Optional[float] = None


@dataclass
class GraphDelta:
    """Nodes and edges added by one mutation pass."""

    nodes: list[LagmNode] = field(default_factory=list)
    edges: list[LagmEdge] = field(default_factory=list)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)


class PropertyGraph:
    """In-process adjacency-map store with append-only insertion order."""

    def __init__(self) -> None:
        self.nodes: dict[str, LagmNode] = {}
        self.edges: list[LagmEdge] = []
        self._out: dict[str, dict[EdgeKind, list[LagmEdge]]] = {}
        self._in: dict[str, dict[EdgeKind, list[LagmEdge]]] = {}
        self._edge_keys: set[tuple[str, str, EdgeKind]] = set()
        self._sealed = False

    # -- mutation -----------------------------------------------------------

    def _check_writable(self) -> None:
        if self._sealed:
            raise LagmError("graph is sealed; mutation is not allowed")

    def add_node(self, node: LagmNode) -> LagmNode:
        self._check_writable()
        if node.id in self.nodes:
            raise LagmError(f"duplicate node id {node.id}")
        self.nodes[node.id] = node
        self._out[node.id] = {}
        self._in[node.id] = {}
        return node

    def add_edge(self, edge: LagmEdge) -> LagmEdge:
        self._check_writable()
        if edge.src not in self.nodes:
            raise NodeNotFoundError(f"edge source {edge.src} does not exist")
        if edge.dst not in self.nodes:
            raise NodeNotFoundError(f"edge target {edge.dst} does not exist")
        key = (edge.src, edge.dst, edge.kind)
        if key in self._edge_keys:
            raise LagmError(f"duplicate edge {edge.src} -{edge.kind.value}-> {edge.dst}")
        if edge.kind is EdgeKind.HAS_NEXT:
            if self.nodes[edge.src].label is not self.nodes[edge.dst].label:
                raise LagmError("HAS_NEXT requires same-label endpoints")
        if edge.kind is EdgeKind.IS_SIMILAR and edge.weight is None:
            raise LagmError("IS_SIMILAR edges carry a weight")
        if edge.weight is not None and not 0.0 <= edge.weight <= 1.0:
            raise LagmError(f"edge weight {edge.weight} outside [0, 1]")
        self.edges.append(edge)
        self._edge_keys.add(key)
        self._out[edge.src].setdefault(edge.kind, []).append(edge)
        self._in[edge.dst].setdefault(edge.kind, []).append(edge)
        return edge

    def has_edge(self, src: str, dst: str, kind: EdgeKind) -> bool:
        return (src, dst, kind) in self._edge_keys

    def seal(self) -> None:
        self._sealed = True

    @property
    def sealed(self) -> bool:
        return self._sealed

    # -- lookup -------------------------------------------------------------

    def node(self, node_id: str) -> LagmNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NodeNotFoundError(f"unknown node id {node_id}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self.nodes

    def nodes_by_label(self, label: NodeLabel) -> list[LagmNode]:
        return [n for n in self.nodes.values() if n.label is label]

    def out_edges(self, node_id: str, kind: Optional[EdgeKind] = None) -> list[LagmEdge]:
        self.node(node_id)
        buckets = self._out[node_id]
        if kind is not None:
            return list(buckets.get(kind, ()))
        return [e for k in buckets for e in buckets[k]]

    def in_edges(self, node_id: str, kind: Optional[EdgeKind] = None) -> list[LagmEdge]:
        self.node(node_id)
        buckets = self._in[node_id]
        if kind is not None:
            return list(buckets.get(kind, ()))
        return [e for k in buckets for e in buckets[k]]

    def neighbors(self, node_id: str, kind: EdgeKind, direction: str = "out") -> list[LagmNode]:
        """Adjacent nodes over `kind` edges, in insertion order."""
        if direction == "out":
            return [self.nodes[e.dst] for e in self.out_edges(node_id, kind)]
        if direction == "in":
            return [self.nodes[e.src] for e in self.in_edges(node_id, kind)]
        raise LagmError(f"direction must be 'out' or 'in', got {direction!r}")

    # -- traversal ----------------------------------------------------------

    def structural_parent(self, node_id: str) -> Optional[LagmNode]:
        """The canonical is_under parent.

        Nodes with both a logical parent (master section) and a physical one
        (page) resolve to the logical parent; the page link is kept for
        page-scoped queries only.
        """
        parents = self.neighbors(node_id, EdgeKind.IS_UNDER, "out")
        if not parents:
            return None
        non_page = [p for p in parents if p.label is not NodeLabel.PAGE]
        return non_page[0] if non_page else parents[0]

    def path_to_root(self, node_id: str) -> list[LagmNode]:
        """Structural is_under chain from the node up to its COMPANY root."""
        current = self.node(node_id)
        path = [current]
        seen = {current.id}
        while current.label is not NodeLabel.COMPANY:
            parent = self.structural_parent(current.id)
            if parent is None:
                raise GraphIntegrityError(
                    f"orphan node {current.id} ({current.label.value}) has no is_under parent"
                )
            if parent.id in seen:
                raise GraphIntegrityError(f"is_under cycle through {parent.id}")
            path.append(parent)
            seen.add(parent.id)
            current = parent
        return path

    def next_chain(self, node_id: str, n: int) -> list[LagmNode]:
        """Up to n successors over HAS_NEXT; stops at the chain end."""
        if n < 0:
            raise LagmError("next_chain requires n >= 0")
        out: list[LagmNode] = []
        seen = {node_id}
        current = self.node(node_id)
        while len(out) < n:
            nxt = self.neighbors(current.id, EdgeKind.HAS_NEXT, "out")
            if not nxt or nxt[0].id in seen:
                break
            current = nxt[0]
            seen.add(current.id)
            out.append(current)
        return out


def retrieval_text(node: LagmNode) -> str:
    """Text used for indexing, embedding and keyword matching of a node."""
    props = node.props
    if node.label is NodeLabel.DIAGRAM:
        parts = [props.get("content", ""), props.get("description", "")]
        return "\n".join(p for p in parts if p)
    if node.label is NodeLabel.SECTION:
        parts = [props.get("header", ""), props.get("content", "")]
        return "\n".join(p for p in parts if p)
    if node.label is NodeLabel.MASTER_SECTION:
        return props.get("title", "")
    return props.get("content", "")


def node_title(node: LagmNode) -> str:
    """Display/keyword title of a node, empty when it has none."""
    if node.label is NodeLabel.MASTER_SECTION:
        return node.props.get("title", "")
    return node.props.get("header", "")


# -- construction ------------------------------------------------------------


def company_node_id(company: str) -> str:
    return f"{company}/COMPANY/0"


class _IdAllocator:
    def __init__(self, company: str, doc_name: str):
        self.prefix = f"{company}/{doc_name}"
        self.counters: dict[NodeLabel, int] = {}

    def next(self, label: NodeLabel) -> str:
        ordinal = self.counters.get(label, 0)
        self.counters[label] = ordinal + 1
        return f"{self.prefix}/{label.value}/{ordinal}"


def _page_content(page) -> str:
    return "\n".join(el.text for el in page.elements if el.text)


def _master_ranges(
    toc: Sequence[TocEntry], master_ids: list[str], page_count: int
) -> list[tuple[int, int, str]]:
    """(start_page, end_page_exclusive, master_id) for entries with a physical page."""
    placed = [
        (entry.physical_page, i)
        for i, entry in enumerate(toc)
        if entry.physical_page is not None
    ]
    placed.sort()
    ranges = []
    for pos, (start, i) in enumerate(placed):
        end = placed[pos + 1][0] if pos + 1 < len(placed) else page_count
        ranges.append((start, end, master_ids[i]))
    return ranges


def _master_for_page(ranges: list[tuple[int, int, str]], page_idx: int) -> Optional[str]:
    for start, end, master_id in ranges:
        if start <= page_idx < end:
            return master_id
    return None


def build_graph(
    graph: PropertyGraph,
    doc: LayoutDocument,
    toc: Sequence[TocEntry],
    company: str,
    max_chunk_tokens: int = DEFAULT_CHUNK_TOKENS,
    chunk_overlap: int = DEFAULT_CHUNK_OVERLAP,
) -> GraphDelta:
    """Build the document subgraph under the given company.

    Creates the company root if absent, the document with its pages (chained
    with has_next), the table of contents with one master section per entry,
    sections with their chunks, tables with table chunks, and diagrams.
    Sections, tables and diagrams hang under both their page and, when the
    ToC covers their page, a master section. Chunks hang under their section
    or table and under the page the text physically appears on.
    """
    delta = GraphDelta()

    def add_node(node: LagmNode) -> LagmNode:
        graph.add_node(node)
        delta.nodes.append(node)
        return node

    def add_edge(src: str, dst: str, kind: EdgeKind, weight: Optional[float] = None) -> None:
        edge = LagmEdge(src=src, dst=dst, kind=kind, weight=weight)
        graph.add_edge(edge)
        delta.edges.append(edge)

    # Company root, keyed by name.
    company_id = company_node_id(company)
    if not graph.has_node(company_id):
        add_node(LagmNode(id=company_id, label=NodeLabel.COMPANY, props={"companyName": company}))

    for existing in graph.nodes_by_label(NodeLabel.DOCUMENT):
        if existing.props.get("docName") == doc.doc_name and graph.has_edge(
            existing.id, company_id, EdgeKind.IS_UNDER
        ):
            raise IngestionConflictError(
                f"document {doc.doc_name!r} already ingested under company {company!r}"
            )

    ids = _IdAllocator(company, doc.doc_name)
    doc_node = add_node(
        LagmNode(
            id=ids.next(NodeLabel.DOCUMENT),
            label=NodeLabel.DOCUMENT,
            props={"docName": doc.doc_name, "docType": doc.doc_type, "docPath": doc.doc_path},
        )
    )
    add_edge(doc_node.id, company_id, EdgeKind.IS_UNDER)

    # Pages, chained in order.
    page_ids: dict[int, str] = {}
    prev_page: Optional[str] = None
    for page in doc.pages:
        props = {
            "pageIdx": page.page_idx,
            "content": _page_content(page),
            "parentDocName": doc.doc_name,
        }
        if page.printed_page_number is not None:
            props["pageNumber"] = page.printed_page_number
        if page.header is not None:
            props["header"] = page.header
        if page.footer is not None:
            props["footer"] = page.footer
        node = add_node(LagmNode(id=ids.next(NodeLabel.PAGE), label=NodeLabel.PAGE, props=props))
        page_ids[page.page_idx] = node.id
        add_edge(node.id, doc_node.id, EdgeKind.IS_UNDER)
        if prev_page is not None:
            add_edge(prev_page, node.id, EdgeKind.HAS_NEXT)
        prev_page = node.id

    # Table of contents and master sections.
    master_ranges: list[tuple[int, int, str]] = []
    if toc:
        toc_node = add_node(
            LagmNode(
                id=ids.next(NodeLabel.TABLE_OF_CONTENTS),
                label=NodeLabel.TABLE_OF_CONTENTS,
                props={
                    "entries": json.dumps(
                        [
                            {
                                "title": e.title,
                                "printed_page": e.printed_page,
                                "physical_page": e.physical_page,
                                "depth": e.depth,
                            }
                            for e in toc
                        ],
                        ensure_ascii=False,
                    ),
                    "parentDocName": doc.doc_name,
                },
            )
        )
        add_edge(toc_node.id, doc_node.id, EdgeKind.IS_UNDER)
        master_ids = []
        for entry in toc:
            master = add_node(
                LagmNode(
                    id=ids.next(NodeLabel.MASTER_SECTION),
                    label=NodeLabel.MASTER_SECTION,
                    props={"title": entry.title, "depth": entry.depth, "parentDocName": doc.doc_name},
                )
            )
            master_ids.append(master.id)
            add_edge(master.id, toc_node.id, EdgeKind.IS_UNDER)
        master_ranges = _master_ranges(toc, master_ids, doc.page_count)

    # Walk elements in reading order, accumulating section text segments.
    # A section begins at a section_header and collects paragraphs until the
    # next header, possibly across pages.
    sections: list[dict] = []
    tables: list[dict] = []
    diagrams: list[dict] = []
    current: Optional[dict] = None
    for page in doc.pages:
        for el in page.elements:
            if el.kind is ElementKind.SECTION_HEADER:
                current = {
                    "header": el.text,
                    "level": el.level,
                    "page_idx": page.page_idx,
                    "segments": [],
                }
                sections.append(current)
            elif el.kind is ElementKind.PARAGRAPH:
                if current is None:
                    current = {"header": "", "level": None, "page_idx": page.page_idx, "segments": []}
                    sections.append(current)
                current["segments"].append((page.page_idx, el.text))
            elif el.kind is ElementKind.TABLE:
                tables.append({"el": el, "page_idx": page.page_idx})
            elif el.kind is ElementKind.DIAGRAM:
                diagrams.append({"el": el, "page_idx": page.page_idx})
            # toc_candidate elements feed ToC extraction, not the graph

    def attach_master(node_id: str, page_idx: int) -> None:
        master_id = _master_for_page(master_ranges, page_idx)
        if master_id is not None:
            add_edge(node_id, master_id, EdgeKind.IS_UNDER)

    def add_chunks(
        parent_id: str,
        label: NodeLabel,
        segments: list[tuple[int, str]],
    ) -> None:
        text = "\n".join(seg_text for _, seg_text in segments)
        # Map character offsets back to the page each segment came from.
        seg_starts = []
        pos = 0
        for seg_page, seg_text in segments:
            seg_starts.append((pos, seg_page))
            pos += len(seg_text) + 1
        prev_chunk: Optional[str] = None
        for start, end in chunk_section_spans(text, max_chunk_tokens, chunk_overlap):
            chunk_page = seg_starts[0][1]
            for seg_pos, seg_page in seg_starts:
                if seg_pos <= start:
                    chunk_page = seg_page
                else:
                    break
            chunk = add_node(
                LagmNode(
                    id=ids.next(label),
                    label=label,
                    props={
                        "content": text[start:end],
                        "parentDocName": doc.doc_name,
                        "parentPageIdx": chunk_page,
                    },
                )
            )
            add_edge(chunk.id, parent_id, EdgeKind.IS_UNDER)
            add_edge(chunk.id, page_ids[chunk_page], EdgeKind.IS_UNDER)
            if prev_chunk is not None:
                add_edge(prev_chunk, chunk.id, EdgeKind.HAS_NEXT)
            prev_chunk = chunk.id

    prev_section: Optional[str] = None
    for sec in sections:
        content = "\n".join(seg_text for _, seg_text in sec["segments"])
        node = add_node(
            LagmNode(
                id=ids.next(NodeLabel.SECTION),
                label=NodeLabel.SECTION,
                props={
                    "header": sec["header"],
                    "content": content,
                    "parentDocName": doc.doc_name,
                    "parentPageIdx": sec["page_idx"],
                },
            )
        )
        add_edge(node.id, page_ids[sec["page_idx"]], EdgeKind.IS_UNDER)
        attach_master(node.id, sec["page_idx"])
        if prev_section is not None:
            add_edge(prev_section, node.id, EdgeKind.HAS_NEXT)
        prev_section = node.id
        if sec["segments"]:
            add_chunks(node.id, NodeLabel.SECTION_CHUNK, sec["segments"])

    for item in tables:
        el, page_idx = item["el"], item["page_idx"]
        node = add_node(
            LagmNode(
                id=ids.next(NodeLabel.TABLE),
                label=NodeLabel.TABLE,
                props={
                    "content": el.text,
                    "structureRef": json.dumps(el.structure, ensure_ascii=False)
                    if el.structure
                    else "",
                    "parentDocName": doc.doc_name,
                    "parentPageIdx": page_idx,
                },
            )
        )
        add_edge(node.id, page_ids[page_idx], EdgeKind.IS_UNDER)
        attach_master(node.id, page_idx)
        if el.text:
            add_chunks(node.id, NodeLabel.TABLE_CHUNK, [(page_idx, el.text)])

    for item in diagrams:
        el, page_idx = item["el"], item["page_idx"]
        node = add_node(
            LagmNode(
                id=ids.next(NodeLabel.DIAGRAM),
                label=NodeLabel.DIAGRAM,
                props={
                    "content": el.text,
                    "description": el.description or "",
                    "parentDocName": doc.doc_name,
                    "parentPageIdx": page_idx,
                },
            )
        )
        add_edge(node.id, page_ids[page_idx], EdgeKind.IS_UNDER)
        attach_master(node.id, page_idx)

    return delta


# -- schema ------------------------------------------------------------------


@dataclass
class GraphSchema:
    """Catalogue of labels with attributes and of edge shapes with aliases."""

    labels: dict[str, list[str]]
    edges: list[tuple[str, str, str, str]]  # (kind, src label, dst label, alias)

    def aliases(self) -> set[str]:
        out = {alias for _, _, _, alias in self.edges}
        out.update(kind for kind, _, _, _ in self.edges)
        return out

    def attributes(self, label: Optional[str] = None) -> set[str]:
        if label is not None:
            return set(self.labels.get(label, ()))
        return {a for attrs in self.labels.values() for a in attrs}


def graph_schema(graph: PropertyGraph) -> GraphSchema:
    labels: dict[str, set[str]] = {}
    for node in graph.nodes.values():
        labels.setdefault(node.label.value, set()).update(node.props)
    shapes = set()
    for edge in graph.edges:
        src_label = graph.nodes[edge.src].label
        dst_label = graph.nodes[edge.dst].label
        shapes.add(
            (edge.kind.value, src_label.value, dst_label.value, edge_alias(edge.kind, src_label, dst_label))
        )
    return GraphSchema(
        labels={lbl: sorted(attrs) for lbl, attrs in sorted(labels.items())},
        edges=sorted(shapes, key=lambda s: (s[3], s[1], s[2], s[0])),
    )


def render_schema(graph: PropertyGraph) -> str:
    """Deterministic plain-text rendering of the graph schema."""
    schema = graph_schema(graph)
    lines = ["Node labels:"]
    for label, attrs in schema.labels.items():
        lines.append(f"  (:{label} {{{', '.join(attrs)}}})")
    lines.append("Relationships:")
    for _kind, src, dst, alias in schema.edges:
        lines.append(f"  (:{src})-[:{alias}]->(:{dst})")
    return "\n".join(lines) + "\n"


# -- persistence ---------------------------------------------------------------


def snapshot_save(graph: PropertyGraph, path) -> None:
    """Write the graph as line-delimited records with a version header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"v": SNAPSHOT_VERSION}) + "\n")
        for node in graph.nodes.values():
            rec: dict = {"id": node.id, "label": node.label.value, "props": node.props}
            if node.embedding is not None:
                rec["embedding"] = node.embedding
            fh.write(json.dumps({"n": rec}, ensure_ascii=False) + "\n")
        for edge in graph.edges:
            rec = {"src": edge.src, "dst": edge.dst, "kind": edge.kind.value}
            if edge.weight is not None:
                rec["weight"] = edge.weight
            fh.write(json.dumps({"e": rec}, ensure_ascii=False) + "\n")


def snapshot_load(path) -> PropertyGraph:
    """Load a snapshot; the returned graph is unsealed."""
    graph = PropertyGraph()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SnapshotFormatError(
                    f"corrupted snapshot at line {line_no}: {exc.msg}", line_no=line_no
                ) from exc
            if line_no == 1:
                version = record.get("v")
                if version != SNAPSHOT_VERSION:
                    raise SnapshotVersionError(
                        f"snapshot version {version!r} unsupported (expected {SNAPSHOT_VERSION})"
                    )
                continue
            if "n" in record:
                rec = record["n"]
                graph.add_node(
                    LagmNode(
                        id=rec["id"],
                        label=NodeLabel(rec["label"]),
                        props=rec["props"],
                        embedding=rec.get("embedding"),
                    )
                )
            elif "e" in record:
                rec = record["e"]
                graph.add_edge(
                    LagmEdge(
                        src=rec["src"],
                        dst=rec["dst"],
                        kind=EdgeKind(rec["kind"]),
                        weight=rec.get("weight"),
                    )
                )
            else:
                raise SnapshotFormatError(
                    f"corrupted snapshot at line {line_no}: unknown record", line_no=line_no
                )
    return graph
