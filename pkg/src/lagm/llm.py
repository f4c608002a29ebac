"""Provider contracts for completion, embedding and re-ranking.

Real providers speak a minimal HTTP+JSON protocol (see README for the body
shapes); deterministic local providers back hermetic tests and offline use.
Credentials come from the environment and are never logged.
"""

from __future__ import annotations

import hashlib
import os
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import httpx

from .errors import ConfigurationError, ProviderError, TransportError
from .index import tokenize

ENV_LLM_ENDPOINT = "LAGM_LLM_ENDPOINT"
ENV_LLM_KEY = "LAGM_LLM_KEY"
ENV_EMBED_ENDPOINT = "LAGM_EMBED_ENDPOINT"
ENV_EMBED_KEY = "LAGM_EMBED_KEY"

DEFAULT_EMBED_DIM = 256


@dataclass
class ProviderConfig:
    endpoint: str
    credential: str = field(default="", repr=False)
    model_name: str = ""
    timeout: float = 30.0
    max_concurrent: int = 4

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ConfigurationError("provider timeout must be positive")
        if self.max_concurrent < 1:
            raise ConfigurationError("max_concurrent must be >= 1")


class ConcurrencyGate:
    """Bounded admission; tracks the in-flight high-water mark for tests."""

    def __init__(self, max_concurrent: int):
        self._sem = threading.BoundedSemaphore(max_concurrent)
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_seen = 0

    def __enter__(self):
        self._sem.acquire()
        with self._lock:
            self._in_flight += 1
            self.max_seen = max(self.max_seen, self._in_flight)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self._in_flight -= 1
        self._sem.release()
        return False


# -- deterministic local providers -------------------------------------------


@dataclass
class ScriptedResponse:
    """Match a prompt by substring (str matcher) or call ordinal (int matcher)."""

    matcher: Union[str, int]
    response: str


class ScriptedCompletion:
    """Replays canned responses; the default keeps scripts exhausted-safe."""

    def __init__(self, rules: Sequence[ScriptedResponse] = (), default: str = ""):
        self.rules = list(rules)
        self.default = default
        self.calls = 0

    def complete(self, prompt: str) -> str:
        ordinal = self.calls
        self.calls += 1
        for rule in self.rules:
            if isinstance(rule.matcher, int):
                if rule.matcher == ordinal:
                    return rule.response
            elif rule.matcher in prompt:
                return rule.response
        return self.default


class EchoCompletion:
    """Returns the prompt tail; makes end-to-end runs deterministic."""

    def __init__(self, tail_chars: int = 400):
        self.tail_chars = tail_chars

    def complete(self, prompt: str) -> str:
        return prompt[-self.tail_chars :]


class HashEmbedder:
    """Hashed bag-of-words embedding, L2-normalized.

    Each term maps to a fixed slot via sha1, so identical texts embed
    identically with no network. Empty or tokenless text yields the zero
    vector, which callers treat as unembeddable.
    """

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        if dim <= 0:
            raise ConfigurationError("embedding dimension must be positive")
        self.dim = dim

    def slot(self, term: str) -> int:
        digest = hashlib.sha1(term.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dim

    def _embed_one(self, text: str) -> list[float]:
        vec = [0.0] * self.dim
        for term in tokenize(text):
            vec[self.slot(term)] += 1.0
        norm = sum(x * x for x in vec) ** 0.5
        if norm > 0.0:
            vec = [x / norm for x in vec]
        return vec

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._embed_one(t) for t in texts]


class JaccardReranker:
    """Token-overlap Jaccard between the query and each text, in [0, 1]."""

    def rerank_scores(self, query: str, texts: Sequence[str]) -> list[float]:
        q = set(tokenize(query))
        out = []
        for text in texts:
            t = set(tokenize(text))
            union = len(q | t)
            out.append(len(q & t) / union if union else 0.0)
        return out


class FailingCompletion:
    """Always raises a transport error; used to exercise fallback paths."""

    def complete(self, prompt: str) -> str:
        raise TransportError("simulated transport failure")


# -- HTTP providers ------------------------------------------------------------


def _post_json(cfg: ProviderConfig, body: dict, client: Optional[httpx.Client]) -> dict:
    headers = {}
    if cfg.credential:
        headers["Authorization"] = f"Bearer {cfg.credential}"
    try:
        if client is not None:
            resp = client.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout)
        else:
            resp = httpx.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout)
    except httpx.TimeoutException as exc:
        raise TransportError(f"provider timeout after {cfg.timeout}s") from exc
    except httpx.HTTPError as exc:
        raise TransportError(f"provider transport failure: {type(exc).__name__}") from exc
    if resp.status_code < 200 or resp.status_code >= 300:
        raise ProviderError(f"provider returned status {resp.status_code}", status=resp.status_code)
    return resp.json()


class HttpCompletion:
    """POST {model, prompt} -> {output}."""

    def __init__(self, cfg: ProviderConfig, client: Optional[httpx.Client] = None):
        self.cfg = cfg
        self.gate = ConcurrencyGate(cfg.max_concurrent)
        self._client = client

    def complete(self, prompt: str) -> str:
        with self.gate:
            data = _post_json(
                self.cfg, {"model": self.cfg.model_name, "prompt": prompt}, self._client
            )
        return data.get("output", "")


class HttpEmbedder:
    """POST {model, input: [texts]} -> {vectors: [[...], ...]}."""

    def __init__(self, cfg: ProviderConfig, client: Optional[httpx.Client] = None):
        self.cfg = cfg
        self.gate = ConcurrencyGate(cfg.max_concurrent)
        self._client = client

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            return []
        with self.gate:
            data = _post_json(
                self.cfg, {"model": self.cfg.model_name, "input": list(texts)}, self._client
            )
        vectors = data.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            failed = list(range(len(texts))) if not isinstance(vectors, list) else [
                i for i in range(len(texts)) if i >= len(vectors)
            ]
            raise ProviderError(f"embedding batch incomplete, failed ordinals {failed}")
        return [list(map(float, v)) for v in vectors]


class HttpReranker:
    """POST {model, query, texts} -> {scores: [...]}."""

    def __init__(self, cfg: ProviderConfig, client: Optional[httpx.Client] = None):
        self.cfg = cfg
        self.gate = ConcurrencyGate(cfg.max_concurrent)
        self._client = client

    def rerank_scores(self, query: str, texts: Sequence[str]) -> list[float]:
        if not texts:
            return []
        with self.gate:
            data = _post_json(
                self.cfg,
                {"model": self.cfg.model_name, "query": query, "texts": list(texts)},
                self._client,
            )
        return [float(s) for s in data.get("scores", [])]


# -- wiring ---------------------------------------------------------------------


@dataclass
class ProviderBundle:
    completion: object
    embedder: object
    reranker: object


def providers_from_env(embedder_mode: str = "fallback", llm_mode: str = "auto") -> ProviderBundle:
    """Build providers from LAGM_* environment variables.

    Without configured endpoints (or with the fallback/echo modes) the
    deterministic local providers are used, so everything works offline.
    """
    completion = None
    if llm_mode in ("auto", "remote"):
        endpoint = os.environ.get(ENV_LLM_ENDPOINT)
        if endpoint:
            completion = HttpCompletion(
                ProviderConfig(endpoint=endpoint, credential=os.environ.get(ENV_LLM_KEY, ""))
            )
        elif llm_mode == "remote":
            raise ConfigurationError(f"{ENV_LLM_ENDPOINT} is not set")
    if completion is None:
        completion = EchoCompletion()

    embedder = None
    if embedder_mode == "remote":
        endpoint = os.environ.get(ENV_EMBED_ENDPOINT)
        if not endpoint:
            raise ConfigurationError(f"{ENV_EMBED_ENDPOINT} is not set")
        embedder = HttpEmbedder(
            ProviderConfig(endpoint=endpoint, credential=os.environ.get(ENV_EMBED_KEY, ""))
        )
    else:
        embedder = HashEmbedder()

    return ProviderBundle(completion=completion, embedder=embedder, reranker=JaccardReranker())
