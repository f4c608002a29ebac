"""Command-line front door: ingest | augment | query | serve | inspect.

All verbs operate on a store directory holding the graph snapshot and the
persisted indexes. Exit codes: 0 success, 1 usage error, 2 data error,
3 provider error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .augment import DEFAULT_ELIGIBLE_LABELS, AugmentConfig, Metric, load_synonym_table
from .errors import LagmError, ProviderError, QuerySyntaxError, TransportError
from .graph import render_schema
from .llm import providers_from_env
from .pipeline import PipelineConfig, Preset
from .query import execute_query, generate_query, parse_query, print_query, validate_query
from .service import EngineStore, create_app

DEFAULT_STORE = "./store"


class UsageError(LagmError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config_file(path: str) -> PipelineConfig:
    """key=value config file; a `preset` line seeds the stage toggles."""
    values: dict = {}
    preset = None
    for line in Path(path).read_text("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "preset":
            preset = value
        elif key.startswith("enable_"):
            values[key] = value.lower() in ("1", "true", "yes", "on")
        else:
            values[key] = int(value)
    base = PipelineConfig.from_preset(preset) if preset else PipelineConfig()
    return base.with_overrides(values)


def _store(args, need_engine: bool = False) -> EngineStore:
    providers = providers_from_env(
        embedder_mode=getattr(args, "embedder", "fallback"),
        llm_mode=getattr(args, "llm", "auto"),
    )
    config = None
    if getattr(args, "config", None):
        config = load_config_file(args.config)
    store = EngineStore(providers=providers, config=config, store_dir=args.store)
    if need_engine and store.engine is None:
        store._rebuild_engine()
    return store


def _cmd_ingest(args) -> int:
    store = _store(args)
    raw = Path(args.input).read_bytes()
    result = store.ingest_document(args.company, raw)
    print(
        f"ingested {result.doc_name}: {result.nodes_added} nodes, "
        f"{result.edges_added} edges (toc entries {result.toc_entries}, "
        f"skipped lines {result.toc_skipped})"
    )
    return 0


def _cmd_augment(args) -> int:
    store = _store(args)
    synonyms = load_synonym_table(args.synonyms) if args.synonyms else {}
    cfg = AugmentConfig(
        k=args.k,
        metric=Metric(args.metric),
        min_similarity=args.min_sim,
        eligible_labels=DEFAULT_ELIGIBLE_LABELS,
        synonym_table=synonyms,
    )
    counts = store.augment(cfg)
    print(
        f"augmented: {counts['embedded']} nodes embedded, "
        f"{counts['is_similar_edges']} is_similar edges, "
        f"{counts['has_stem_edges']} has_stem edges"
    )
    return 0


def _cmd_query(args) -> int:
    store = _store(args, need_engine=True)
    if store.engine is None:
        print("no context (store is empty)")
        return 0

    if args.traversal:
        schema_text = store.engine.schema_text
        ast = generate_query(
            store.providers.completion,
            schema_text,
            args.traversal,
            doc_name=args.doc or "",
            schema=store.engine.schema,
        )
        if ast is None:
            print("no safe traversal query generated")
            return 0
        print(f"query: {print_query(ast)}")
        params = {"doc_id": [args.doc] if args.doc else [], "pages": []}
        rows = execute_query(ast, store.engine.graph, params)
        for row in rows:
            for var, node in row.items():
                print(f"{var}: {node.id}")
        print(f"{len(rows)} rows")
        return 0

    if not args.q:
        raise UsageError("query requires --q <text> or --traversal <request>")
    config = store.config
    if args.preset:
        config = PipelineConfig.from_preset(args.preset)
    bundle = store.engine.answer(args.q, args.company, config=config)
    print(f"answer: {bundle.answer_text}")
    print(f"confidence: {bundle.confidence:.4f}")
    if not bundle.contexts:
        print("no context")
    for i, ctx in enumerate(bundle.contexts, start=1):
        page = "?" if ctx.page_idx is None else ctx.page_idx
        print(f"[{i}] {ctx.doc_name} p{page} ({ctx.label.value}, rerank "
              f"{ctx.scores.get('rerank', 0.0):.4f})")
        print(f"    {ctx.text[:160]}")
    return 0


def _cmd_inspect(args) -> int:
    store = _store(args)
    if args.schema:
        sys.stdout.write(render_schema(store.graph))
        return 0
    if args.node:
        node = store.graph.node(args.node)
        record = {"id": node.id, "label": node.label.value, "props": node.props}
        print(json.dumps(record, indent=2, ensure_ascii=False, sort_keys=True))
        return 0
    raise UsageError("inspect requires --schema or --node <id>")


def _cmd_serve(args) -> int:
    import uvicorn

    config = load_config_file(args.config) if args.config else None
    store = EngineStore(
        providers=providers_from_env(), config=config, store_dir=args.snapshot
    )
    app = create_app(store)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="lagm", description="layout-aware graph retrieval engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--store", default=DEFAULT_STORE, help="store directory")
        p.add_argument("--embedder", choices=["fallback", "remote"], default="fallback")
        p.add_argument("--llm", choices=["auto", "echo", "remote"], default="auto")
        p.add_argument("--config", help="pipeline config file (key=value)")

    p = sub.add_parser("ingest", help="ingest an interchange document")
    add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--company", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("augment", help="add is_similar/has_stem edges")
    add_common(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--metric", choices=[m.value for m in Metric], default="cosine")
    p.add_argument("--min-sim", dest="min_sim", type=float, default=0.75)
    p.add_argument("--synonyms", help="two-column synonym file")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("query", help="answer a question or run a traversal request")
    add_common(p)
    p.add_argument("--q", help="question text")
    p.add_argument("--company", default="default")
    p.add_argument("--preset", choices=[pr.value for pr in Preset])
    p.add_argument("--traversal", help="natural-language graph traversal request")
    p.add_argument("--doc", help="document name filter for traversal")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("inspect", help="print the schema or one node")
    add_common(p)
    p.add_argument("--schema", action="store_true")
    p.add_argument("--node")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--snapshot", default=DEFAULT_STORE)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (TransportError, ProviderError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3
    except (LagmError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
