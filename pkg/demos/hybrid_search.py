"""Walkthrough: full-text + vector retrieval fused with reciprocal ranks.

    python3 demos/hybrid_search.py
"""

from lagm import Bm25Index, HashEmbedder, VectorIndex, rrf_fuse
from lagm.graph import NodeLabel
from lagm.index import IndexEntry

CORPUS = {
    "c0": "the quarterly budget table lists approved travel spending",
    "c1": "employee travel requests need finance approval",
    "c2": "the architecture diagram shows the approval flow",
    "c3": "budget overruns are escalated to the board",
    "c4": "quarterly results are published in the annual report",
}


def main():
    bm25 = Bm25Index()
    embedder = HashEmbedder(128)
    vectors = VectorIndex(dim=128)
    for node_id, text in CORPUS.items():
        entry = IndexEntry(node_id, NodeLabel.SECTION_CHUNK, text, "handbook", 0)
        bm25.add(entry)
        vectors.add(entry, embedder.embed([text])[0])
    bm25.seal()
    vectors.seal()

    query = "quarterly travel budget"
    lexical = bm25.search(query, 5)
    dense = vectors.search(embedder.embed([query])[0], 5, mode="exact")

    print(f"query: {query}\n")
    print("bm25:")
    for ctx in lexical:
        print(f"  {ctx.node_id}  {ctx.scores['bm25']:.4f}  {ctx.text}")
    print("vector (exact cosine):")
    for ctx in dense:
        print(f"  {ctx.node_id}  {ctx.scores['vector']:.4f}  {ctx.text}")

    fused = rrf_fuse([[c.node_id for c in lexical], [c.node_id for c in dense]])
    print("fused (reciprocal rank, k=60):")
    for node_id, score in fused:
        print(f"  {node_id}  {score:.5f}")


if __name__ == "__main__":
    main()
