import json

import pytest

from lagm.graph import PropertyGraph, build_graph
from lagm.layout import TocEntry, parse_layout_document


@pytest.fixture(scope="session", autouse=True)
def no_page_number_reads():
    """Across the whole suite, nothing identifies pages via pageNumber."""
    import lagm.query as query_mod

    query_mod.reset_pagenumber_counter()
    yield
    assert query_mod.PAGENUMBER_READS == 0


def interchange(doc_name="docA", doc_type="pdf", doc_path="/tmp/docA.pdf", pages=()):
    return {
        "doc_name": doc_name,
        "doc_type": doc_type,
        "doc_path": doc_path,
        "pages": list(pages),
    }


def page(idx, elements=(), printed=None, header=None, footer=None):
    out = {"page_idx": idx, "elements": list(elements)}
    if printed is not None:
        out["printed_page_number"] = printed
    if header is not None:
        out["header"] = header
    if footer is not None:
        out["footer"] = footer
    return out


def section_header(text, level=None):
    el = {"kind": "section_header", "text": text}
    if level is not None:
        el["level"] = level
    return el


def paragraph(text):
    return {"kind": "paragraph", "text": text}


def table(text, rows=None):
    el = {"kind": "table", "text": text}
    if rows is not None:
        el["structure"] = {"rows": rows}
    return el


def diagram(text, description=None):
    el = {"kind": "diagram", "text": text}
    if description is not None:
        el["description"] = description
    return el


def toc_candidate(text):
    return {"kind": "toc_candidate", "text": text}


def load(doc_dict):
    return parse_layout_document(json.dumps(doc_dict).encode("utf-8"))


@pytest.fixture
def three_page_doc():
    """Three pages with header/footer, a table and a diagram."""
    return interchange(
        pages=[
            page(
                0,
                printed="1",
                header="ACME Handbook",
                footer="confidential",
                elements=[
                    section_header("Introduction"),
                    paragraph("Welcome to the handbook. It explains every policy in detail."),
                ],
            ),
            page(
                1,
                printed="2",
                header="ACME Handbook",
                elements=[
                    section_header("Budget"),
                    paragraph("The annual budget is reviewed quarterly by the board."),
                    table("line item amount travel 1200", rows=[["line item", "amount"], ["travel", "1200"]]),
                ],
            ),
            page(
                2,
                printed="3",
                elements=[
                    section_header("Process"),
                    paragraph("The process diagram shows the approval flow end to end."),
                    diagram("start review approve", description="approval flow chart"),
                ],
            ),
        ]
    )


@pytest.fixture
def fixture_graph(three_page_doc):
    """Graph built from the three-page doc with a two-entry ToC."""
    doc = load(three_page_doc)
    graph = PropertyGraph()
    toc = [
        TocEntry(title="Budget", printed_page=2, physical_page=1, depth=0),
        TocEntry(title="Process", printed_page=3, physical_page=2, depth=0),
    ]
    delta = build_graph(graph, doc, toc, "acme")
    return graph, delta
