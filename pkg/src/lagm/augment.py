"""Graph augmentation: similarity edges via exact KNN and lexical stem edges.

Runs in the single-writer phase between build and seal. Both passes are
idempotent; re-running adds no edges.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigurationError, PartialEmbeddingError
from .graph import EdgeKind, LagmEdge, LagmNode, NodeLabel, PropertyGraph, node_title, retrieval_text
from .index import tokenize
from .stemming import stem

logger = logging.getLogger(__name__)

DEFAULT_ELIGIBLE_LABELS = frozenset(
    {NodeLabel.SECTION, NodeLabel.SECTION_CHUNK, NodeLabel.TABLE_CHUNK, NodeLabel.DIAGRAM}
)

_STOPWORDS = frozenset(
    """the and for with that this from are was were has have had not but all can
    will its per each any when where how what which who into over under between
    also than then there here such these those""".split()
)


class Metric(str, Enum):
    COSINE = "cosine"
    JACCARD = "jaccard"
    EUCLIDEAN = "euclidean"


@dataclass
class AugmentConfig:
    k: int = 5
    metric: Metric = Metric.COSINE
    min_similarity: float = 0.75
    eligible_labels: frozenset = DEFAULT_ELIGIBLE_LABELS
    synonym_table: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        self.metric = Metric(self.metric)
        lo, hi = (-1.0, 1.0) if self.metric is Metric.COSINE else (0.0, 1.0)
        if not lo <= self.min_similarity <= hi:
            raise ConfigurationError(
                f"min_similarity {self.min_similarity} outside [{lo}, {hi}] for {self.metric.value}"
            )


def embed_nodes(graph: PropertyGraph, embedder, labels: Iterable[NodeLabel]) -> int:
    """Embed eligible nodes with non-empty text; idempotent.

    Returns the number of nodes embedded in this run. A failing embedder
    raises PartialEmbeddingError listing the node ids that failed; nodes
    embedded before the failure keep their vectors.
    """
    label_set = set(labels)
    pending = [
        node
        for node in graph.nodes.values()
        if node.label in label_set and node.embedding is None and retrieval_text(node).strip()
    ]
    if not pending:
        return 0
    texts = [retrieval_text(n) for n in pending]
    try:
        vectors = embedder.embed(texts)
    except Exception:
        vectors = None
    if vectors is not None:
        for node, vec in zip(pending, vectors):
            node.embedding = list(map(float, vec))
        return len(pending)

    # Batch call failed: retry one by one so progress survives.
    failed: list[str] = []
    embedded = 0
    for node in pending:
        try:
            node.embedding = list(map(float, embedder.embed([retrieval_text(node)])[0]))
            embedded += 1
        except Exception:
            failed.append(node.id)
    if failed:
        raise PartialEmbeddingError(failed, embedded)
    return embedded


def _eligible_nodes(graph: PropertyGraph, cfg: AugmentConfig) -> list[LagmNode]:
    return [n for n in graph.nodes.values() if n.label in cfg.eligible_labels]


def _similarity_matrix(nodes: list[LagmNode], cfg: AugmentConfig) -> np.ndarray:
    """Pairwise similarity in the metric's native similarity scale."""
    if cfg.metric is Metric.JACCARD:
        token_sets = [set(tokenize(retrieval_text(n))) for n in nodes]
        n = len(nodes)
        sims = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                a, b = token_sets[i], token_sets[j]
                union = len(a | b)
                sims[i, j] = sims[j, i] = (len(a & b) / union) if union else 0.0
        return sims

    vectors = []
    dims = set()
    for node in nodes:
        if node.embedding is None:
            raise ConfigurationError(
                f"node {node.id} has no embedding; run embed_nodes before {cfg.metric.value} KNN"
            )
        vectors.append(node.embedding)
        dims.add(len(node.embedding))
    if len(dims) > 1:
        raise ConfigurationError(f"mixed embedding dimensions {sorted(dims)}")
    mat = np.asarray(vectors, dtype=np.float64)
    if cfg.metric is Metric.COSINE:
        norms = np.linalg.norm(mat, axis=1)
        norms[norms == 0.0] = 1.0
        unit = mat / norms[:, None]
        return unit @ unit.T
    # Euclidean distance mapped onto (0, 1] via 1 / (1 + d).
    sq = np.sum(mat * mat, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (mat @ mat.T), 0.0)
    return 1.0 / (1.0 + np.sqrt(d2))


def knn_similar_edges(graph: PropertyGraph, cfg: AugmentConfig) -> list[LagmEdge]:
    """Add top-k is_similar edges per eligible node; returns the edges added.

    Candidates below min_similarity are dropped. Ties break on higher
    similarity first, then lexicographic node id, so builds are reproducible.
    Edges are stored directionally (per-node top-k) and deduplicated against
    existing ones, which makes a second run a no-op.
    """
    nodes = _eligible_nodes(graph, cfg)
    if len(nodes) < 2:
        return []
    k = min(cfg.k, len(nodes) - 1)
    sims = _similarity_matrix(nodes, cfg)
    added: list[LagmEdge] = []
    for i, node in enumerate(nodes):
        candidates = [
            (sims[i, j], nodes[j].id, j)
            for j in range(len(nodes))
            if j != i and sims[i, j] >= cfg.min_similarity
        ]
        candidates.sort(key=lambda c: (-c[0], c[1]))
        for sim, other_id, _ in candidates[:k]:
            if graph.has_edge(node.id, other_id, EdgeKind.IS_SIMILAR):
                continue
            # stored weight stays in [0, 1]; ranking uses the raw similarity
            weight = float(min(1.0, max(0.0, sim)))
            added.append(
                graph.add_edge(
                    LagmEdge(src=node.id, dst=other_id, kind=EdgeKind.IS_SIMILAR, weight=weight)
                )
            )
    logger.info("knn augmentation added %d is_similar edges", len(added))
    return added


def _keywords(node: LagmNode) -> set[str]:
    text = node_title(node) or retrieval_text(node)
    return {
        t for t in tokenize(text)
        if len(t) >= 3 and t.isalpha() and t not in _STOPWORDS
    }


def _normalized_synonyms(table: dict[str, set[str]]) -> dict[str, set[str]]:
    """Symmetric stem-level closure of the configured synonym table."""
    out: dict[str, set[str]] = {}
    for word, syns in table.items():
        ws = stem(word)
        for syn in syns:
            ss = stem(syn)
            out.setdefault(ws, set()).add(ss)
            out.setdefault(ss, set()).add(ws)
    return out


def stem_edges(graph: PropertyGraph, cfg: AugmentConfig) -> list[LagmEdge]:
    """Add has_stem edges between eligible nodes sharing a stem or synonym.

    Keyword sets come from the node title when present, otherwise content;
    tokens are lowercased alphabetic words of length >= 3 minus stopwords.
    The relation is symmetric, so both directions are stored.
    """
    nodes = _eligible_nodes(graph, cfg)
    synonyms = _normalized_synonyms(cfg.synonym_table)
    stem_sets: list[set[str]] = []
    expanded: list[set[str]] = []
    for node in nodes:
        stems = {stem(w) for w in _keywords(node)}
        stem_sets.append(stems)
        extra = set()
        for s in stems:
            extra |= synonyms.get(s, set())
        expanded.append(stems | extra)

    added: list[LagmEdge] = []
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if stem_sets[i] & expanded[j] or expanded[i] & stem_sets[j]:
                for src, dst in ((nodes[i].id, nodes[j].id), (nodes[j].id, nodes[i].id)):
                    if not graph.has_edge(src, dst, EdgeKind.HAS_STEM):
                        added.append(
                            graph.add_edge(LagmEdge(src=src, dst=dst, kind=EdgeKind.HAS_STEM))
                        )
    logger.info("stem augmentation added %d has_stem edges", len(added))
    return added


def load_synonym_table(path) -> dict[str, set[str]]:
    """Two-column UTF-8 text file: word<TAB-or-spaces>synonym per line."""
    table: dict[str, set[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) >= 2:
                table.setdefault(parts[0].lower(), set()).add(parts[1].lower())
    return table
