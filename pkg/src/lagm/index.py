"""Full-text and vector indexes over retrievable nodes, plus rank fusion.

The BM25 index is a classic inverted index (k1=1.2, b=0.75,
idf = ln(1 + (N - df + 0.5) / (df + 0.5))). The vector index supports an
exact full-scan cosine mode and an approximate navigable-small-world mode.
Rankings from the two (and any other retrievers) combine with
reciprocal-rank fusion.
"""

from __future__ import annotations

import heapq
import json
import math
import random
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, SnapshotFormatError, SnapshotVersionError
from .graph import NodeLabel

INDEX_VERSION = 1
BM25_K1 = 1.2
BM25_B = 0.75
RRF_K = 60

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase terms split on non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def token_spans(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def highlight_spans(text: str, query_terms: Sequence[str]) -> list[tuple[int, int]]:
    """Character spans of tokens matching the query terms; sorted, disjoint."""
    terms = set(query_terms)
    return [(s, e) for tok, s, e in token_spans(text) if tok in terms]


@dataclass
class ScoredContext:
    """A retrievable unit with provenance and per-retriever scores."""

    node_id: str
    label: NodeLabel
    text: str
    doc_name: str
    page_idx: Optional[int]
    scores: dict[str, float] = field(default_factory=dict)
    fused_score: float = 0.0
    highlight_spans: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "label": self.label.value,
            "text": self.text,
            "doc_name": self.doc_name,
            "page_idx": self.page_idx,
            "scores": {k: round(v, 9) for k, v in sorted(self.scores.items())},
            "fused_score": round(self.fused_score, 9),
            "highlight_spans": [list(s) for s in self.highlight_spans],
        }


@dataclass
class IndexEntry:
    node_id: str
    label: NodeLabel
    text: str
    doc_name: str
    page_idx: Optional[int]


class Bm25Index:
    """Inverted index with exact BM25 ranking."""

    def __init__(self) -> None:
        self.entries: list[IndexEntry] = []
        self._by_id: dict[str, int] = {}
        self._postings: dict[str, list[tuple[int, int]]] = {}
        self._doc_lens: list[int] = []
        self._sealed = False

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, entry: IndexEntry) -> None:
        if self._sealed:
            raise ConfigurationError("index is sealed")
        if entry.node_id in self._by_id:
            return
        ordinal = len(self.entries)
        self._by_id[entry.node_id] = ordinal
        self.entries.append(entry)
        terms = tokenize(entry.text)
        self._doc_lens.append(len(terms))
        counts: dict[str, int] = {}
        for t in terms:
            counts[t] = counts.get(t, 0) + 1
        for term, tf in counts.items():
            self._postings.setdefault(term, []).append((ordinal, tf))

    def seal(self) -> None:
        self._sealed = True

    def _idf(self, term: str) -> float:
        df = len(self._postings.get(term, ()))
        n = len(self.entries)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def score_all(self, query: str) -> dict[int, float]:
        """BM25 score per matching document ordinal; query terms counted with multiplicity."""
        if not self.entries:
            return {}
        avgdl = sum(self._doc_lens) / len(self._doc_lens)
        scores: dict[int, float] = {}
        for term in tokenize(query):
            postings = self._postings.get(term)
            if not postings:
                continue
            idf = self._idf(term)
            for ordinal, tf in postings:
                dl = self._doc_lens[ordinal]
                denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl) if avgdl else tf
                scores[ordinal] = scores.get(ordinal, 0.0) + idf * tf * (BM25_K1 + 1.0) / denom
        return scores

    def search(self, query: str, k: int) -> list[ScoredContext]:
        """Top-k by descending BM25 score, ties broken by node id."""
        if k <= 0:
            raise ConfigurationError("bm25 search requires k > 0")
        scores = self.score_all(query)
        ranked = sorted(
            scores.items(), key=lambda item: (-item[1], self.entries[item[0]].node_id)
        )[:k]
        terms = tokenize(query)
        out = []
        for ordinal, score in ranked:
            entry = self.entries[ordinal]
            out.append(
                ScoredContext(
                    node_id=entry.node_id,
                    label=entry.label,
                    text=entry.text,
                    doc_name=entry.doc_name,
                    page_idx=entry.page_idx,
                    scores={"bm25": score},
                    fused_score=score,
                    highlight_spans=highlight_spans(entry.text, terms),
                )
            )
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"v": INDEX_VERSION, "kind": "bm25"}) + "\n")
            for e in self.entries:
                fh.write(
                    json.dumps(
                        {
                            "id": e.node_id,
                            "label": e.label.value,
                            "text": e.text,
                            "doc": e.doc_name,
                            "page": e.page_idx,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path) -> "Bm25Index":
        index = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SnapshotFormatError(
                        f"corrupted index at line {line_no}: {exc.msg}", line_no=line_no
                    ) from exc
                if line_no == 1:
                    if rec.get("v") != INDEX_VERSION:
                        raise SnapshotVersionError(f"index version {rec.get('v')!r} unsupported")
                    continue
                index.add(
                    IndexEntry(
                        node_id=rec["id"],
                        label=NodeLabel(rec["label"]),
                        text=rec["text"],
                        doc_name=rec["doc"],
                        page_idx=rec["page"],
                    )
                )
        index.seal()
        return index


class _NswGraph:
    """Navigable-small-world layers for approximate cosine search."""

    def __init__(self, m: int = 16, ef_construction: int = 100, seed: int = 0):
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.rng = random.Random(seed)
        self.levels: list[int] = []
        self.neighbors: list[list[list[int]]] = []  # node -> layer -> ids
        self.entry: Optional[int] = None
        self.max_level = -1

    def _random_level(self) -> int:
        level = 0
        while self.rng.random() < 0.5:
            level += 1
        return level

    def _search_layer(self, matrix, query, entries, layer, ef):
        dists = {e: 1.0 - float(matrix[e] @ query) for e in entries}
        visited = set(entries)
        candidates = [(d, e) for e, d in dists.items()]
        heapq.heapify(candidates)
        best = [(-d, e) for e, d in dists.items()]
        heapq.heapify(best)
        while candidates:
            d, node = heapq.heappop(candidates)
            if best and d > -best[0][0] and len(best) >= ef:
                break
            bucket = self.neighbors[node][layer] if layer < len(self.neighbors[node]) else []
            fresh = [nb for nb in bucket if nb not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            fresh_dists = 1.0 - matrix[fresh] @ query
            for nb, nd in zip(fresh, fresh_dists):
                nd = float(nd)
                if len(best) < ef or nd < -best[0][0]:
                    heapq.heappush(candidates, (nd, nb))
                    heapq.heappush(best, (-nd, nb))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted((-negd, e) for negd, e in best)

    def insert(self, matrix, ordinal: int) -> None:
        level = self._random_level()
        self.levels.append(level)
        self.neighbors.append([[] for _ in range(level + 1)])
        if self.entry is None:
            self.entry = ordinal
            self.max_level = level
            return
        query = matrix[ordinal]
        current = [self.entry]
        for layer in range(self.max_level, level, -1):
            found = self._search_layer(matrix, query, current, layer, 1)
            current = [e for _, e in found]
        for layer in range(min(level, self.max_level), -1, -1):
            found = self._search_layer(matrix, query, current, layer, self.ef_construction)
            cap = self.m0 if layer == 0 else self.m
            selected = [e for _, e in found[:cap]]
            self.neighbors[ordinal][layer] = list(selected)
            for nb in selected:
                bucket = self.neighbors[nb][layer]
                bucket.append(ordinal)
                if len(bucket) > cap:
                    scored = sorted(
                        (1.0 - float(matrix[b] @ matrix[nb]), b) for b in bucket
                    )
                    self.neighbors[nb][layer] = [b for _, b in scored[:cap]]
            current = selected
        if level > self.max_level:
            self.max_level = level
            self.entry = ordinal

    def search(self, matrix, query, ef: int) -> list[int]:
        if self.entry is None:
            return []
        current = [self.entry]
        for layer in range(self.max_level, 0, -1):
            found = self._search_layer(matrix, query, current, layer, 1)
            current = [e for _, e in found]
        found = self._search_layer(matrix, query, current, 0, ef)
        return [e for _, e in found]


class VectorIndex:
    """Fixed-dimension cosine index with exact and approximate search modes."""

    def __init__(self, dim: int, seed: int = 0, ef_search: int = 96):
        if dim <= 0:
            raise ConfigurationError("vector dimension must be positive")
        self.dim = dim
        self.entries: list[IndexEntry] = []
        self._by_id: dict[str, int] = {}
        self._vectors: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = None
        self._nsw = _NswGraph(seed=seed)
        self.ef_search = ef_search
        self._sealed = False
        self._approx_built = False

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, entry: IndexEntry, vector: Sequence[float]) -> None:
        if self._sealed:
            raise ConfigurationError("index is sealed")
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ConfigurationError(
                f"vector dimension {vec.shape[0] if vec.ndim == 1 else vec.shape} "
                f"does not match index dimension {self.dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise ConfigurationError(f"non-finite vector for {entry.node_id}")
        if entry.node_id in self._by_id:
            return
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec = vec / norm
        self._by_id[entry.node_id] = len(self.entries)
        self.entries.append(entry)
        self._vectors.append(vec)
        self._matrix = None

    def seal(self, approx: bool = True) -> None:
        """Freeze the index; approx=False skips building the NSW layers."""
        self._ensure_matrix()
        if approx:
            for ordinal in range(len(self.entries)):
                self._nsw.insert(self._matrix, ordinal)
            self._approx_built = True
        self._sealed = True

    def _ensure_matrix(self) -> None:
        if self._matrix is None:
            self._matrix = (
                np.vstack(self._vectors) if self._vectors else np.zeros((0, self.dim))
            )

    def search(self, query_vec: Sequence[float], k: int, mode: str = "exact") -> list[ScoredContext]:
        """Top-k by cosine similarity; ties broken by node id."""
        if k <= 0:
            raise ConfigurationError("vector search requires k > 0")
        q = np.asarray(query_vec, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ConfigurationError(
                f"query dimension {q.shape[0] if q.ndim == 1 else q.shape} "
                f"does not match index dimension {self.dim}"
            )
        if not self.entries:
            return []
        self._ensure_matrix()
        norm = float(np.linalg.norm(q))
        if norm > 0.0:
            q = q / norm

        if mode == "exact":
            sims = self._matrix @ q
            ranked = sorted(
                range(len(self.entries)), key=lambda i: (-float(sims[i]), self.entries[i].node_id)
            )[:k]
        elif mode == "approx":
            if not self._approx_built:
                raise ConfigurationError(
                    "approximate search structure not built; seal with approx=True"
                )
            candidates = self._nsw.search(self._matrix, q, max(self.ef_search, k))
            ranked = sorted(
                candidates,
                key=lambda i: (-float(self._matrix[i] @ q), self.entries[i].node_id),
            )[:k]
        else:
            raise ConfigurationError(f"unknown vector search mode {mode!r}")

        out = []
        for ordinal in ranked:
            entry = self.entries[ordinal]
            score = float(self._matrix[ordinal] @ q)
            out.append(
                ScoredContext(
                    node_id=entry.node_id,
                    label=entry.label,
                    text=entry.text,
                    doc_name=entry.doc_name,
                    page_idx=entry.page_idx,
                    scores={"vector": score},
                    fused_score=score,
                )
            )
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"v": INDEX_VERSION, "kind": "vector", "dim": self.dim}) + "\n")
            for e, vec in zip(self.entries, self._vectors):
                fh.write(
                    json.dumps(
                        {
                            "id": e.node_id,
                            "label": e.label.value,
                            "text": e.text,
                            "doc": e.doc_name,
                            "page": e.page_idx,
                            "vec": [round(float(x), 12) for x in vec],
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path, approx: bool = False) -> "VectorIndex":
        index: Optional[VectorIndex] = None
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SnapshotFormatError(
                        f"corrupted index at line {line_no}: {exc.msg}", line_no=line_no
                    ) from exc
                if line_no == 1:
                    if rec.get("v") != INDEX_VERSION:
                        raise SnapshotVersionError(f"index version {rec.get('v')!r} unsupported")
                    index = cls(dim=rec["dim"])
                    continue
                assert index is not None
                index.add(
                    IndexEntry(
                        node_id=rec["id"],
                        label=NodeLabel(rec["label"]),
                        text=rec["text"],
                        doc_name=rec["doc"],
                        page_idx=rec["page"],
                    ),
                    rec["vec"],
                )
        if index is None:
            raise SnapshotFormatError("empty index file", line_no=1)
        index.seal(approx=approx)
        return index


def rrf_fuse(ranked_lists: Sequence[Sequence[str]], k_rrf: int = RRF_K) -> list[tuple[str, float]]:
    """Reciprocal-rank fusion: score(id) = sum over lists of 1 / (k + rank).

    Ranks are 1-based; an id absent from a list contributes nothing for that
    list. Output is descending by score with ties broken by id, and is
    invariant under permutation of the input lists.
    """
    if k_rrf < 1:
        raise ConfigurationError("k_rrf must be >= 1")
    contributions: dict[str, list[float]] = {}
    for ranked in ranked_lists:
        for rank, item in enumerate(ranked, start=1):
            contributions.setdefault(item, []).append(1.0 / (k_rrf + rank))
    # fsum over sorted terms keeps the result exact and list-order invariant
    scores = {item: math.fsum(sorted(parts)) for item, parts in contributions.items()}
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def embed_text(provider, text: str) -> list[float]:
    """Embed one text through the configured provider."""
    return list(map(float, provider.embed([text])[0]))
