"""Walkthrough: ingest a document, build the graph, answer with each preset.

Runs fully offline with the deterministic local providers.

    python3 demos/build_and_query.py
"""

import json

from lagm import (
    HashEmbedder,
    JaccardReranker,
    PipelineConfig,
    PropertyGraph,
    ProviderBundle,
    RetrievalEngine,
    ScriptedCompletion,
    ScriptedResponse,
    build_graph,
    compute_page_offset,
    detect_toc_pages,
    extract_toc,
    parse_layout_document,
    render_schema,
)

DOC = {
    "doc_name": "handbook",
    "doc_type": "pdf",
    "doc_path": "/docs/handbook.pdf",
    "pages": [
        {
            "page_idx": 0,
            "printed_page_number": "0",
            "elements": [
                {"kind": "section_header", "text": "Table of Contents"},
                {"kind": "toc_candidate", "text": "Budget ...... 1\nTravel ...... 2"},
            ],
        },
        {
            "page_idx": 1,
            "printed_page_number": "1",
            "elements": [
                {"kind": "section_header", "text": "Budget"},
                {"kind": "paragraph",
                 "text": "The approved budget value is recorded in the quarterly table."},
                {"kind": "table", "text": "X=42",
                 "structure": {"rows": [["X", "42"]]}},
            ],
        },
        {
            "page_idx": 2,
            "printed_page_number": "2",
            "elements": [
                {"kind": "section_header", "text": "Travel"},
                {"kind": "paragraph",
                 "text": "Travel requests are approved by the finance team each month."},
            ],
        },
    ]
    + [
        {
            "page_idx": idx,
            "printed_page_number": str(idx),
            "elements": [
                {"kind": "section_header", "text": f"Policy {idx}"},
                {"kind": "paragraph",
                 "text": f"The value of policy {idx} in the handbook is reviewed in the "
                         f"table of revisions for year {2000 + idx}."},
            ],
        }
        for idx in range(3, 28)
    ],
}


def main():
    doc = parse_layout_document(json.dumps(DOC).encode())
    toc_pages = detect_toc_pages(doc)
    offset = compute_page_offset(doc) or 0
    extraction = extract_toc(doc, toc_pages, offset)
    print(f"ToC pages {toc_pages}, offset {offset}, "
          f"{len(extraction.entries)} entries, {extraction.skipped} skipped lines\n")

    graph = PropertyGraph()
    delta = build_graph(graph, doc, extraction.entries, "acme")
    print(f"built {delta.node_count} nodes / {delta.edge_count} edges\n")
    print(render_schema(graph))

    completion = ScriptedCompletion(
        rules=[
            ScriptedResponse("Cypher", ""),
            ScriptedResponse("physical page numbers", ""),
            ScriptedResponse("table or diagram information", "tables:yes diagrams:no"),
            ScriptedResponse("X=42", "The table reports X=42."),
        ],
        default="The references do not contain that value.",
    )
    providers = ProviderBundle(
        completion=completion, embedder=HashEmbedder(256), reranker=JaccardReranker()
    )
    engine = RetrievalEngine(graph, providers)

    query = "what is the value in the budget table"
    for preset in ("setting1", "setting2", "setting3"):
        bundle = engine.answer(query, "acme", config=PipelineConfig.from_preset(preset))
        stages = " -> ".join(f"{t.stage}({t.count})" for t in bundle.trace)
        print(f"{preset}: {bundle.answer_text}")
        print(f"  confidence {bundle.confidence:.3f}")
        print(f"  stages: {stages}\n")


if __name__ == "__main__":
    main()
