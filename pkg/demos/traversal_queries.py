"""Walkthrough: schema-constrained graph queries.

Shows the traversal prompt, parses and validates acceptable and generic
queries, and executes one against a small graph.

    python3 demos/traversal_queries.py
"""

import json

from lagm import (
    PropertyGraph,
    build_graph,
    execute_query,
    graph_schema,
    parse_query,
    print_query,
    render_schema,
    render_traversal_prompt,
    validate_query,
    parse_layout_document,
)

DOC = {
    "doc_name": "handbook",
    "doc_type": "pdf",
    "doc_path": "/docs/handbook.pdf",
    "pages": [
        {"page_idx": i, "elements": [
            {"kind": "section_header", "text": f"Area {i}"},
            {"kind": "paragraph", "text": f"details for area {i}."},
        ]}
        for i in range(4)
    ],
}

ACCEPTABLE = (
    "MATCH (s)-[:S_IS_UNDER_P]->(p:PAGE)\n"
    "WHERE toString(p.pageIdx) IN $pages AND s.parentDocName IN $doc_id\n"
    "RETURN s;"
)
GENERIC = (
    "MATCH (s:SECTION)\n"
    "WHERE s.parentDocName IN ['handbook']\n"
    "RETURN s;"
)


def main():
    doc = parse_layout_document(json.dumps(DOC).encode())
    graph = PropertyGraph()
    build_graph(graph, doc, [], "acme")
    schema = graph_schema(graph)
    schema_text = render_schema(graph)

    prompt = render_traversal_prompt(schema_text, "sections on page 2", "handbook")
    print("--- traversal prompt (first 12 lines) ---")
    print("\n".join(prompt.splitlines()[:12]))
    print("...\n")

    for name, text in (("acceptable", ACCEPTABLE), ("generic", GENERIC)):
        ast = parse_query(text)
        violations = validate_query(ast, schema)
        print(f"{name}: {print_query(ast)}")
        if violations:
            for v in violations:
                print(f"  violation {v.code.value}: {v.message}")
        else:
            print("  validates ok")
    print()

    ast = parse_query(ACCEPTABLE)
    rows = execute_query(ast, graph, {"pages": ["2"], "doc_id": ["handbook"]})
    for row in rows:
        section = row["s"]
        print(f"page 2 section: {section.id} header={section.props['header']!r}")


if __name__ == "__main__":
    main()
