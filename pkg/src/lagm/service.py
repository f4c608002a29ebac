"""HTTP front door: ingestion, querying and evidence retrieval.

State lives in an EngineStore: one property graph shared by all companies,
indexes rebuilt after each ingest, and an in-memory LRU of evidence contexts
so the UI can fetch highlighted chunks by id. Error bodies always carry
{code, message, detail} and never leak stack traces.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .augment import AugmentConfig, embed_nodes, knn_similar_edges, stem_edges
from .errors import (
    CompletionFailure,
    ConfigurationError,
    IngestionConflictError,
    InterchangeParseError,
    LagmError,
    LayoutValidationError,
    ProviderError,
    TransportError,
)
from .graph import PropertyGraph, build_graph, render_schema, snapshot_load, snapshot_save
from .index import Bm25Index, ScoredContext, VectorIndex
from .layout import compute_page_offset, detect_toc_pages, extract_toc, parse_layout_document
from .llm import ProviderBundle, providers_from_env
from .pipeline import PipelineConfig, Preset, RetrievalEngine

EVIDENCE_CAP = 10_000

GRAPH_FILE = "graph.jsonl"
HASHES_FILE = "hashes.json"
INDEX_FILES = {
    "bm25": "bm25.jsonl",
    "vectors": "vectors.jsonl",
    "td_bm25": "td_bm25.jsonl",
    "td_vectors": "td_vectors.jsonl",
}


@dataclass
class IngestResult:
    doc_name: str
    nodes_added: int
    edges_added: int
    created: bool
    toc_entries: int = 0
    toc_skipped: int = 0


class EngineStore:
    """Owns the graph, the engine, document hashes and the evidence cache.

    Mutations (ingest, augment) are serialized behind a lock; the engine is
    rebuilt after each mutation and queries run against the rebuilt state.
    """

    def __init__(
        self,
        providers: Optional[ProviderBundle] = None,
        config: Optional[PipelineConfig] = None,
        store_dir: Optional[str] = None,
    ):
        self.providers = providers or providers_from_env()
        self.config = config or PipelineConfig.from_preset(Preset.SETTING3)
        self.store_dir = store_dir
        self.graph = PropertyGraph()
        self.doc_hashes: dict[str, str] = {}
        self.engine: Optional[RetrievalEngine] = None
        self.api_token = os.environ.get("LAGM_API_TOKEN", "")
        self._write_lock = threading.Lock()
        self._evidence: OrderedDict[str, ScoredContext] = OrderedDict()
        self._evidence_seq = 0
        persisted = None
        if store_dir and Path(store_dir, GRAPH_FILE).exists():
            persisted = self._load(store_dir)
        if self.graph.nodes:
            self._rebuild_engine(indexes=persisted)

    # -- persistence --

    def _load(self, store_dir: str):
        self.graph = snapshot_load(Path(store_dir, GRAPH_FILE))
        hashes_path = Path(store_dir, HASHES_FILE)
        if hashes_path.exists():
            self.doc_hashes = json.loads(hashes_path.read_text("utf-8"))
        return self._load_indexes(store_dir)

    def _load_indexes(self, store_dir: str):
        """Persisted indexes, or None when a full set is not on disk."""
        base = Path(store_dir)
        bm25_path = base / INDEX_FILES["bm25"]
        td_path = base / INDEX_FILES["td_bm25"]
        if not (bm25_path.exists() and td_path.exists()):
            return None
        indexes = {
            "bm25": Bm25Index.load(bm25_path),
            "td_bm25": Bm25Index.load(td_path),
            "vectors": None,
            "td_vectors": None,
        }
        vectors_path = base / INDEX_FILES["vectors"]
        if vectors_path.exists():
            indexes["vectors"] = VectorIndex.load(vectors_path)
        td_vectors_path = base / INDEX_FILES["td_vectors"]
        if td_vectors_path.exists():
            indexes["td_vectors"] = VectorIndex.load(td_vectors_path)
        return indexes

    def save(self) -> None:
        if not self.store_dir:
            return
        path = Path(self.store_dir)
        path.mkdir(parents=True, exist_ok=True)
        snapshot_save(self.graph, path / GRAPH_FILE)
        (path / HASHES_FILE).write_text(json.dumps(self.doc_hashes, sort_keys=True), "utf-8")
        if self.engine is not None:
            self.engine.bm25.save(path / INDEX_FILES["bm25"])
            self.engine.td_bm25.save(path / INDEX_FILES["td_bm25"])
            if self.engine.vectors is not None:
                self.engine.vectors.save(path / INDEX_FILES["vectors"])
            if self.engine.td_vectors is not None:
                self.engine.td_vectors.save(path / INDEX_FILES["td_vectors"])

    def _rebuild_engine(self, indexes=None) -> None:
        self.engine = RetrievalEngine(
            self.graph, self.providers, config=self.config, seal=False, indexes=indexes
        )

    # -- operations --

    def ingest_document(self, company: str, raw: bytes) -> IngestResult:
        with self._write_lock:
            content_hash = hashlib.sha256(raw).hexdigest()
            doc = parse_layout_document(raw)
            key = f"{company}/{doc.doc_name}"
            if key in self.doc_hashes:
                if self.doc_hashes[key] == content_hash:
                    return IngestResult(
                        doc_name=doc.doc_name, nodes_added=0, edges_added=0, created=False
                    )
                raise IngestionConflictError(
                    f"document {doc.doc_name!r} already exists under {company!r} "
                    "with different content"
                )
            toc_pages = detect_toc_pages(doc)
            offset = compute_page_offset(doc)
            extraction = None
            if toc_pages:
                extraction = extract_toc(doc, toc_pages, offset if offset is not None else 0)
            delta = build_graph(
                self.graph, doc, extraction.entries if extraction else [], company
            )
            self.doc_hashes[key] = content_hash
            self._rebuild_engine()
            self.save()
            return IngestResult(
                doc_name=doc.doc_name,
                nodes_added=delta.node_count,
                edges_added=delta.edge_count,
                created=True,
                toc_entries=len(extraction.entries) if extraction else 0,
                toc_skipped=extraction.skipped if extraction else 0,
            )

    def augment(self, cfg: AugmentConfig) -> dict:
        with self._write_lock:
            embedded = embed_nodes(self.graph, self.providers.embedder, cfg.eligible_labels)
            similar = knn_similar_edges(self.graph, cfg)
            stems = stem_edges(self.graph, cfg)
            self._rebuild_engine()
            self.save()
            return {
                "embedded": embedded,
                "is_similar_edges": len(similar),
                "has_stem_edges": len(stems),
            }

    def store_evidence(self, contexts: list[ScoredContext]) -> list[str]:
        ids = []
        for ctx in contexts:
            self._evidence_seq += 1
            evidence_id = f"ev-{self._evidence_seq}"
            self._evidence[evidence_id] = ctx
            self._evidence.move_to_end(evidence_id)
            ids.append(evidence_id)
        while len(self._evidence) > EVIDENCE_CAP:
            self._evidence.popitem(last=False)
        return ids

    def get_evidence(self, evidence_id: str) -> Optional[ScoredContext]:
        ctx = self._evidence.get(evidence_id)
        if ctx is not None:
            self._evidence.move_to_end(evidence_id)
        return ctx


def _error_body(code: str, message: str, detail: str = "") -> dict:
    return {"code": code, "message": message, "detail": detail}


def _bundle_payload(store: EngineStore, bundle) -> dict:
    payload = bundle.to_dict()
    evidence_ids = store.store_evidence(bundle.contexts)
    for ctx_dict, evidence_id in zip(payload["contexts"], evidence_ids):
        ctx_dict["evidence_id"] = evidence_id
    return payload


def create_app(store: Optional[EngineStore] = None) -> FastAPI:
    store = store or EngineStore()
    app = FastAPI(title="layout-graph retrieval service")
    app.state.store = store

    def auth_error(request: Request) -> Optional[JSONResponse]:
        if not store.api_token:
            return None
        header = request.headers.get("authorization", "")
        if header == f"Bearer {store.api_token}":
            return None
        return JSONResponse(
            status_code=401, content=_error_body("unauthorized", "missing or bad bearer token")
        )

    @app.exception_handler(Exception)
    async def on_unexpected(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500,
            content=_error_body("internal", "internal error", detail=type(exc).__name__),
        )

    @app.post("/companies/{name}/documents")
    async def upload_document(name: str, request: Request):
        denied = auth_error(request)
        if denied:
            return denied
        raw = await request.body()
        try:
            result = store.ingest_document(name, raw)
        except InterchangeParseError as exc:
            return JSONResponse(
                status_code=400,
                content=_error_body(
                    "parse_error", str(exc), detail=f"byte_offset={exc.offset}"
                ),
            )
        except LayoutValidationError as exc:
            return JSONResponse(
                status_code=400, content=_error_body("validation_error", str(exc))
            )
        except IngestionConflictError as exc:
            return JSONResponse(status_code=409, content=_error_body("conflict", str(exc)))
        body = {
            "doc_name": result.doc_name,
            "nodes_added": result.nodes_added,
            "edges_added": result.edges_added,
        }
        return JSONResponse(status_code=201 if result.created else 200, content=body)

    @app.post("/query")
    async def run_query(request: Request):
        denied = auth_error(request)
        if denied:
            return denied
        try:
            body = await request.json()
        except Exception:
            return JSONResponse(
                status_code=400, content=_error_body("bad_request", "body must be JSON")
            )
        company = body.get("company", "")
        query = body.get("query", "")
        if not query:
            return JSONResponse(
                status_code=400, content=_error_body("bad_request", "query must be non-empty")
            )
        if store.engine is None or not store.engine.has_company(company):
            return JSONResponse(
                status_code=404, content=_error_body("unknown_company", f"no company {company!r}")
            )
        try:
            config = store.config
            if body.get("preset"):
                config = PipelineConfig.from_preset(body["preset"])
            if body.get("overrides"):
                config = config.with_overrides(body["overrides"])
        except (ConfigurationError, ValueError) as exc:
            return JSONResponse(status_code=400, content=_error_body("bad_config", str(exc)))
        try:
            bundle = store.engine.answer(query, company, config=config)
        except CompletionFailure as exc:
            payload = _bundle_payload(store, exc.bundle)
            payload["error"] = _error_body("completion_failed", str(exc))
            return JSONResponse(status_code=502, content=payload)
        return JSONResponse(status_code=200, content=_bundle_payload(store, bundle))

    @app.get("/evidence/{evidence_id}")
    async def get_evidence(evidence_id: str, request: Request):
        denied = auth_error(request)
        if denied:
            return denied
        ctx = store.get_evidence(evidence_id)
        if ctx is None:
            return JSONResponse(
                status_code=404,
                content=_error_body("unknown_evidence", f"no evidence {evidence_id!r}"),
            )
        return JSONResponse(
            status_code=200,
            content={
                "id": evidence_id,
                "text": ctx.text,
                "doc_name": ctx.doc_name,
                "page_idx": ctx.page_idx,
                "confidence": round(ctx.scores.get("rerank", 0.0), 6),
                "highlight_spans": [list(s) for s in ctx.highlight_spans],
            },
        )

    @app.get("/schema")
    async def get_schema(request: Request):
        denied = auth_error(request)
        if denied:
            return denied
        return JSONResponse(status_code=200, content={"schema": render_schema(store.graph)})

    return app
