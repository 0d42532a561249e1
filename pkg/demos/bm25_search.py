"""Build an inverted index over a handful of documents and search it.

Run with: python3 demos/bm25_search.py
"""

from mimicrank.corpus import Document, build_index, tokenize

DOCS = [
    Document("d1", "the quick brown fox jumps over the lazy dog"),
    Document("d2", "a quick tour of the brown university campus"),
    Document("d3", "foxes are small omnivorous mammals, quick and alert"),
    Document("d4", "lazy sunday afternoons call for long walks with the dog"),
    Document("d5", "the dog chased the fox; the fox was quicker"),
]

index = build_index(DOCS)
print(f"{len(DOCS)} documents, {len(index.vocabulary)} distinct terms")
print(f"df('quick') = {index.df('quick')}, idf('quick') = {index.idf('quick'):.4f}")
print(f"df('fox')   = {index.df('fox')},   idf('fox')   = {index.idf('fox'):.4f}")
print()

for query in ("quick fox", "lazy dog", "brown"):
    terms = tokenize(query)
    doc_idxs, scores = index.search(terms, k=3)
    print(f"query: {query!r}")
    for rank, (d, s) in enumerate(zip(doc_idxs, scores), start=1):
        print(f"  {rank}. {index.doc_ids[d]}  bm25={s:.4f}")
    print()

# scores are additive over query terms, so scoring term by term
# reproduces the combined score exactly
d = 0
combined = index.bm25_score(["quick", "fox"], d)
separate = index.bm25_score(["quick"], d) + index.bm25_score(["fox"], d)
print(f"additivity on {index.doc_ids[d]}: combined={combined:.6f} "
      f"term-by-term={separate:.6f}")
