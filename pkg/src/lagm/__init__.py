"""Layout-aware graph retrieval engine.

Ingests parsed document layouts into a property graph that preserves
structure (pages, sections, tables, diagrams, table of contents), augments it
with similarity and stem edges, and answers questions through a hybrid
retrieval pipeline with graph traversal, cross-page merging, table/diagram
expansion and re-ranking.
"""

from .augment import AugmentConfig, Metric, embed_nodes, knn_similar_edges, stem_edges
from .graph import (
    EdgeKind,
    GraphSchema,
    LagmEdge,
    LagmNode,
    NodeLabel,
    PropertyGraph,
    build_graph,
    edge_alias,
    graph_schema,
    render_schema,
    snapshot_load,
    snapshot_save,
)
from .index import Bm25Index, ScoredContext, VectorIndex, rrf_fuse, tokenize
from .layout import (
    LayoutDocument,
    LayoutElement,
    LayoutPage,
    TocEntry,
    chunk_section,
    compute_page_offset,
    detect_toc_pages,
    extract_toc,
    parse_layout_document,
    serialize_layout_document,
)
from .llm import (
    EchoCompletion,
    HashEmbedder,
    JaccardReranker,
    ProviderBundle,
    ProviderConfig,
    ScriptedCompletion,
    ScriptedResponse,
    providers_from_env,
)
from .pipeline import (
    AnswerBundle,
    PipelineConfig,
    Preset,
    ReflectionDecision,
    RetrievalEngine,
    assemble_prompt,
    llm_page_lookup,
    merge_cross_page,
    reflect,
    rerank,
    toc_retrieve,
)
from .query import (
    QueryAst,
    Violation,
    ViolationCode,
    execute_query,
    generate_query,
    parse_query,
    print_query,
    render_traversal_prompt,
    validate_query,
)
from .service import EngineStore, create_app

__version__ = "0.1.0"
