import hashlib
import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagm.errors import ConfigurationError
from lagm.graph import NodeLabel
from lagm.index import (
    Bm25Index,
    IndexEntry,
    VectorIndex,
    embed_text,
    highlight_spans,
    rrf_fuse,
    tokenize,
)
from lagm.llm import HashEmbedder


def entry(node_id, text, label=NodeLabel.SECTION_CHUNK, doc="docA", page=0):
    return IndexEntry(node_id=node_id, label=label, text=text, doc_name=doc, page_idx=page)


def naive_bm25(docs, query, k1=1.2, b=0.75):
    """Independent full-scan scorer following the standard formula."""
    tokenized = {doc_id: tokenize(text) for doc_id, text in docs.items()}
    n = len(docs)
    avgdl = sum(len(t) for t in tokenized.values()) / n
    df = Counter()
    for terms in tokenized.values():
        for term in set(terms):
            df[term] += 1
    scores = {}
    for doc_id, terms in tokenized.items():
        tf = Counter(terms)
        score = 0.0
        for term in tokenize(query):
            if term not in tf:
                continue
            idf = math.log(1 + (n - df[term] + 0.5) / (df[term] + 0.5))
            norm = k1 * (1 - b + b * len(terms) / avgdl)
            score += idf * tf[term] * (k1 + 1) / (tf[term] + norm)
        if score != 0.0:
            scores[doc_id] = score
    return scores


class TestTokenize:
    def test_mixed_case_and_punctuation(self):
        assert tokenize("A B, a!") == ["a", "b", "a"]

    def test_empty(self):
        assert tokenize("") == []

    def test_golden_sentence(self):
        text = "Re-rank the top-10 contexts, then answer."
        assert tokenize(text) == ["re", "rank", "the", "top", "10", "contexts", "then", "answer"]


class TestBm25:
    def test_empty_query(self):
        index = Bm25Index()
        index.add(entry("a", "cat"))
        index.seal()
        assert index.search("", 5) == []

    def test_single_doc_hand_scored(self):
        index = Bm25Index()
        index.add(entry("a", "cat"))
        index.seal()
        (hit,) = index.search("cat", 5)
        # oracle: hand evaluation, idf = ln(1 + 0.5/1.5), tf term = 1
        expected = math.log(1 + 0.5 / 1.5) * (1.2 + 1) * 1 / (1 + 1.2 * (1 - 0.75 + 0.75 * 1))
        assert hit.node_id == "a"
        assert hit.scores["bm25"] == pytest.approx(expected, abs=1e-12)

    def test_random_corpus_matches_naive_scan(self):
        rng = random.Random(42)
        vocab = [f"w{i}" for i in range(60)]
        docs = {
            f"d{i:03d}": " ".join(rng.choices(vocab, k=rng.randint(5, 30)))
            for i in range(100)
        }
        index = Bm25Index()
        for doc_id, text in docs.items():
            index.add(entry(doc_id, text))
        index.seal()
        for _ in range(20):
            query = " ".join(rng.choices(vocab, k=rng.randint(1, 4)))
            got = index.search(query, 10)
            oracle = sorted(naive_bm25(docs, query).items(), key=lambda kv: (-kv[1], kv[0]))[:10]
            assert [c.node_id for c in got] == [doc_id for doc_id, _ in oracle]
            for ctx, (_, score) in zip(got, oracle):
                assert ctx.scores["bm25"] == pytest.approx(score, abs=1e-9)

    def test_k_must_be_positive(self):
        index = Bm25Index()
        index.seal()
        with pytest.raises(ConfigurationError):
            index.search("x", 0)

    def test_self_retrieval_rank_one(self):
        rng = random.Random(9)
        index = Bm25Index()
        docs = {}
        for i in range(30):
            text = " ".join(
                [f"shared{rng.randint(0, 5)}"] + [f"u{i}_{j}" for j in range(rng.randint(3, 8))]
            )
            docs[f"d{i:02d}"] = text
            index.add(entry(f"d{i:02d}", text))
        index.seal()
        for doc_id, text in docs.items():
            assert index.search(text, 1)[0].node_id == doc_id

    def test_roundtrip_persistence(self, tmp_path):
        index = Bm25Index()
        index.add(entry("a", "cat sat"))
        index.add(entry("b", "dog ran"))
        index.seal()
        path = tmp_path / "bm25.jsonl"
        index.save(path)
        loaded = Bm25Index.load(path)
        assert [c.node_id for c in loaded.search("cat", 2)] == ["a"]


class TestVector:
    def _random_index(self, n=50, dim=8, seed=11):
        rng = np.random.default_rng(seed)
        vectors = rng.normal(size=(n, dim))
        index = VectorIndex(dim=dim)
        for i in range(n):
            index.add(entry(f"v{i:03d}", f"text {i}"), vectors[i])
        index.seal()
        return index, vectors

    def test_exact_self_query_rank_one(self):
        index, vectors = self._random_index()
        hits = index.search(vectors[7], 3, mode="exact")
        assert hits[0].node_id == "v007"
        assert hits[0].scores["vector"] == pytest.approx(1.0)

    def test_empty_index(self):
        index = VectorIndex(dim=4)
        index.seal()
        assert index.search([1, 0, 0, 0], 5) == []

    def test_dimension_mismatch_names_both(self):
        index = VectorIndex(dim=4)
        index.add(entry("a", "t"), [1, 0, 0, 0])
        index.seal()
        with pytest.raises(ConfigurationError, match="3.*4|4.*3"):
            index.search([1, 0, 0], 2)

    def test_exact_matches_bruteforce_order(self):
        index, vectors = self._random_index(n=80)
        rng = np.random.default_rng(5)
        for _ in range(10):
            q = rng.normal(size=8)
            got = [c.node_id for c in index.search(q, 10, mode="exact")]
            # oracle: per-vector cosine, Python-side sort
            qn = q / np.linalg.norm(q)
            sims = {}
            for i in range(80):
                v = vectors[i] / np.linalg.norm(vectors[i])
                sims[f"v{i:03d}"] = float(np.dot(v, qn))
            expected = [
                node_id
                for node_id, _ in sorted(sims.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
            ]
            assert got == expected

    def test_approx_recall_on_small_instance(self):
        index, vectors = self._random_index(n=300, dim=16, seed=2)
        rng = np.random.default_rng(3)
        recalls = []
        for _ in range(20):
            q = rng.normal(size=16)
            exact = {c.node_id for c in index.search(q, 10, mode="exact")}
            approx = {c.node_id for c in index.search(q, 10, mode="approx")}
            recalls.append(len(exact & approx) / 10)
        assert sum(recalls) / len(recalls) >= 0.95

    def test_unknown_mode(self):
        index = VectorIndex(dim=2)
        index.add(entry("a", "t"), [1, 0])
        index.seal()
        with pytest.raises(ConfigurationError):
            index.search([1, 0], 1, mode="fuzzy")

    def test_roundtrip_persistence(self, tmp_path):
        index, vectors = self._random_index(n=10)
        path = tmp_path / "vec.jsonl"
        index.save(path)
        loaded = VectorIndex.load(path)
        q = vectors[3]
        assert [c.node_id for c in loaded.search(q, 3)] == [
            c.node_id for c in index.search(q, 3)
        ]


class TestRrf:
    def test_first_in_both_lists(self):
        fused = rrf_fuse([["a", "b"], ["a", "c"]], k_rrf=60)
        scores = dict(fused)
        assert scores["a"] == pytest.approx(2.0 / 61.0)

    def test_absent_excluded(self):
        fused = rrf_fuse([["a"], ["b"]])
        assert "z" not in dict(fused)

    def test_single_list_preserves_order(self):
        items = [f"x{i}" for i in range(10)]
        fused = rrf_fuse([items])
        assert [node_id for node_id, _ in fused] == items

    @settings(max_examples=50, deadline=None)
    @given(
        lists=st.lists(
            st.lists(st.sampled_from("abcdefgh"), unique=True, max_size=8),
            min_size=1,
            max_size=4,
        ),
        seed=st.integers(min_value=0, max_value=999),
    )
    def test_permutation_invariance(self, lists, seed):
        rng = random.Random(seed)
        shuffled = list(lists)
        rng.shuffle(shuffled)
        assert rrf_fuse(lists) == rrf_fuse(shuffled)

    def test_k_rrf_validated(self):
        with pytest.raises(ConfigurationError):
            rrf_fuse([["a"]], k_rrf=0)


class TestEmbedText:
    def test_identical_texts_identical_vectors(self):
        provider = HashEmbedder(32)
        assert embed_text(provider, "same words") == embed_text(provider, "same words")

    def test_empty_text_zero_vector(self):
        vec = embed_text(HashEmbedder(16), "")
        assert vec == [0.0] * 16

    def test_hand_hashed_counts(self):
        provider = HashEmbedder(64)
        vec = embed_text(provider, "cat cat dog")
        # oracle: hash each term with sha1 into 64 slots, normalize by hand
        slots = {}
        for term, count in (("cat", 2), ("dog", 1)):
            slot = int.from_bytes(hashlib.sha1(term.encode()).digest()[:8], "big") % 64
            slots[slot] = slots.get(slot, 0) + count
        norm = math.sqrt(sum(v * v for v in slots.values()))
        for slot, count in slots.items():
            assert vec[slot] == pytest.approx(count / norm)
        assert sum(x != 0 for x in vec) == len(slots)


class TestHighlight:
    def test_spans_cover_query_tokens(self):
        text = "The cat sat. A CAT!"
        spans = highlight_spans(text, ["cat"])
        assert [(s, e) for s, e in spans] == [(4, 7), (15, 18)]
        for s, e in spans:
            assert text[s:e].lower() == "cat"

    def test_spans_sorted_disjoint_in_bounds(self):
        text = "alpha beta alpha gamma alpha"
        spans = highlight_spans(text, ["alpha", "gamma"])
        assert spans == sorted(spans)
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert e1 <= s2
        for s, e in spans:
            assert 0 <= s < e <= len(text)
