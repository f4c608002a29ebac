import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from lagm.errors import ConfigurationError, ProviderError, TransportError
from lagm.llm import (
    ConcurrencyGate,
    EchoCompletion,
    HashEmbedder,
    HttpCompletion,
    HttpEmbedder,
    HttpReranker,
    JaccardReranker,
    ProviderConfig,
    ScriptedCompletion,
    ScriptedResponse,
    providers_from_env,
)


class TestScripted:
    def test_substring_match(self):
        llm = ScriptedCompletion([ScriptedResponse("Cypher", "MATCH (s) RETURN s")])
        assert llm.complete("please generate a Cypher query") == "MATCH (s) RETURN s"

    def test_ordinal_match(self):
        llm = ScriptedCompletion([ScriptedResponse(0, "first"), ScriptedResponse(1, "second")])
        assert llm.complete("x") == "first"
        assert llm.complete("x") == "second"

    def test_exhausted_safe_default(self):
        llm = ScriptedCompletion([ScriptedResponse(0, "only")], default="fallback")
        llm.complete("x")
        assert llm.complete("x") == "fallback"

    def test_repeated_calls_identical_for_substring_rules(self):
        llm = ScriptedCompletion([ScriptedResponse("abc", "hit")], default="miss")
        assert [llm.complete("abc"), llm.complete("abc")] == ["hit", "hit"]


class TestEcho:
    def test_returns_tail(self):
        llm = EchoCompletion(tail_chars=5)
        assert llm.complete("0123456789") == "56789"


class TestHashEmbedder:
    def test_empty_batch(self):
        assert HashEmbedder(8).embed([]) == []

    def test_identical_texts(self):
        vecs = HashEmbedder(16).embed(["a b", "a b"])
        assert vecs[0] == vecs[1]

    def test_batch_equals_single_calls(self):
        embedder = HashEmbedder(32)
        texts = ["alpha beta", "gamma", "delta epsilon zeta"]
        batch = embedder.embed(texts)
        singles = [embedder.embed([t])[0] for t in texts]
        # oracle: element-wise comparison
        for b, s in zip(batch, singles):
            assert b == s

    def test_unit_norm_or_zero(self):
        embedder = HashEmbedder(16)
        for text in ["some words here", ""]:
            vec = embedder.embed([text])[0]
            norm = sum(x * x for x in vec) ** 0.5
            assert norm == pytest.approx(1.0) or norm == 0.0


class TestJaccardReranker:
    def test_identical_text(self):
        assert JaccardReranker().rerank_scores("a b c", ["c b a"]) == [1.0]

    def test_disjoint(self):
        assert JaccardReranker().rerank_scores("a b", ["x y"]) == [0.0]

    def test_hand_computed_triple(self):
        scores = JaccardReranker().rerank_scores(
            "alpha beta", ["alpha beta", "alpha gamma", "delta"]
        )
        # oracle: set arithmetic by hand
        assert scores[0] == pytest.approx(1.0)
        assert scores[1] == pytest.approx(1.0 / 3.0)
        assert scores[2] == pytest.approx(0.0)

    def test_scores_in_unit_interval(self):
        scores = JaccardReranker().rerank_scores("q w e", ["q", "q w", "", "z"])
        assert all(0.0 <= s <= 1.0 for s in scores)


class TestConcurrencyGate:
    def test_in_flight_never_exceeds_limit(self):
        gate = ConcurrencyGate(3)

        def work(_):
            with gate:
                time.sleep(0.005)

        with ThreadPoolExecutor(max_workers=16) as pool:
            list(pool.map(work, range(64)))
        assert gate.max_seen <= 3
        assert gate.max_seen >= 1


def make_transport(handler):
    return httpx.MockTransport(handler)


class TestHttpProviders:
    def _cfg(self, **kw):
        return ProviderConfig(endpoint="http://provider.test/v1", credential="SECRET-XYZ", **kw)

    def test_completion_ok(self):
        def handler(request):
            assert request.headers["authorization"] == "Bearer SECRET-XYZ"
            return httpx.Response(200, json={"output": "hello"})

        client = httpx.Client(transport=make_transport(handler))
        provider = HttpCompletion(self._cfg(), client=client)
        assert provider.complete("hi") == "hello"

    def test_non_2xx_is_provider_error_with_status(self):
        client = httpx.Client(transport=make_transport(lambda r: httpx.Response(503, json={})))
        provider = HttpCompletion(self._cfg(), client=client)
        with pytest.raises(ProviderError) as err:
            provider.complete("hi")
        assert err.value.status == 503

    def test_timeout_is_retryable_transport_error(self):
        def handler(request):
            raise httpx.ReadTimeout("slow")

        client = httpx.Client(transport=make_transport(handler))
        provider = HttpCompletion(self._cfg(timeout=0.01), client=client)
        with pytest.raises(TransportError):
            provider.complete("hi")

    def test_embedder_batch_order_preserving(self):
        def handler(request):
            import json

            body = json.loads(request.content)
            return httpx.Response(
                200, json={"vectors": [[float(len(t))] for t in body["input"]]}
            )

        client = httpx.Client(transport=make_transport(handler))
        provider = HttpEmbedder(self._cfg(), client=client)
        assert provider.embed(["a", "bbb", "cc"]) == [[1.0], [3.0], [2.0]]

    def test_embedder_incomplete_batch_lists_ordinals(self):
        client = httpx.Client(
            transport=make_transport(lambda r: httpx.Response(200, json={"vectors": [[1.0]]}))
        )
        provider = HttpEmbedder(self._cfg(), client=client)
        with pytest.raises(ProviderError, match=r"\[1, 2\]"):
            provider.embed(["a", "b", "c"])

    def test_reranker_scores(self):
        client = httpx.Client(
            transport=make_transport(lambda r: httpx.Response(200, json={"scores": [0.5, 0.25]}))
        )
        provider = HttpReranker(self._cfg(), client=client)
        assert provider.rerank_scores("q", ["a", "b"]) == [0.5, 0.25]

    def test_credential_never_logged(self, caplog):
        def handler(request):
            return httpx.Response(200, json={"output": "done"})

        client = httpx.Client(transport=make_transport(handler))
        provider = HttpCompletion(self._cfg(), client=client)
        with caplog.at_level(logging.DEBUG):
            provider.complete("prompt with text")
        blob = "\n".join(rec.getMessage() for rec in caplog.records)
        assert "SECRET-XYZ" not in blob
        assert "SECRET-XYZ" not in repr(provider.cfg)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            ProviderConfig(endpoint="x", timeout=0)
        with pytest.raises(ConfigurationError):
            ProviderConfig(endpoint="x", max_concurrent=0)


class TestWiring:
    def test_offline_defaults(self, monkeypatch):
        monkeypatch.delenv("LAGM_LLM_ENDPOINT", raising=False)
        monkeypatch.delenv("LAGM_EMBED_ENDPOINT", raising=False)
        bundle = providers_from_env()
        assert isinstance(bundle.completion, EchoCompletion)
        assert isinstance(bundle.embedder, HashEmbedder)
        assert isinstance(bundle.reranker, JaccardReranker)

    def test_remote_requires_endpoint(self, monkeypatch):
        monkeypatch.delenv("LAGM_EMBED_ENDPOINT", raising=False)
        with pytest.raises(ConfigurationError):
            providers_from_env(embedder_mode="remote")

    def test_env_endpoints_build_http_providers(self, monkeypatch):
        monkeypatch.setenv("LAGM_LLM_ENDPOINT", "http://llm.test")
        monkeypatch.setenv("LAGM_LLM_KEY", "k")
        monkeypatch.setenv("LAGM_EMBED_ENDPOINT", "http://embed.test")
        bundle = providers_from_env(embedder_mode="remote")
        assert isinstance(bundle.completion, HttpCompletion)
        assert isinstance(bundle.embedder, HttpEmbedder)
