"""Index construction, BM25, and annotation behavior."""

import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimicrank.corpus import (
    Document,
    Query,
    TrainingInstance,
    annotate_queries,
    build_index,
    load_index,
    read_annotations,
    read_corpus,
    read_queries,
    save_index,
    tokenize,
    write_annotations,
)


def docs(*texts):
    return [Document(doc_id=f"d{i}", text=t) for i, t in enumerate(texts)]


# ---------------------------------------------------------------------------
# Tokenization and index construction


def test_tokenize_lowercases_and_splits_non_alphanumeric():
    assert tokenize("Hello, World! foo-bar_baz 42x") == [
        "hello", "world", "foo", "bar", "baz", "42x"
    ]
    assert tokenize("") == []
    assert tokenize("...!!!") == []


def test_build_index_hand_counts():
    index = build_index(docs("a b", "b b c"))
    assert index.doc_count == 2
    assert index.avg_doc_length == 2.5
    b = index.vocabulary.index_of("b")
    assert index.postings[b] == [(0, 1), (1, 2)]


def test_build_index_empty_corpus():
    index = build_index([])
    assert index.doc_count == 0
    assert index.avg_doc_length == 0.0


def test_build_index_single_doc_repeated_term():
    index = build_index(docs("x x x"))
    x = index.vocabulary.index_of("x")
    assert index.postings[x] == [(0, 3)]
    assert index.avg_doc_length == 3


def test_build_index_rejects_duplicate_doc_id():
    dup = [Document("same", "a"), Document("same", "b")]
    with pytest.raises(ValueError, match="same"):
        build_index(dup)


def test_doc_terms_preserve_multiset():
    index = build_index(docs("b a b", "c a"))
    for d in range(index.doc_count):
        text = ["b a b", "c a"][d]
        assert Counter(index.doc_terms(d)) == Counter(tokenize(text))


# ---------------------------------------------------------------------------
# IDF


def test_idf_formula_values():
    # oracle: direct evaluation of ln((N+1)/(df+1))
    index = build_index(docs(*(["q filler"] * 10 + ["filler only"] * 90)))
    assert index.doc_count == 100
    assert index.df("q") == 10
    assert index.idf("q") == pytest.approx(math.log(101 / 11))


def test_idf_term_in_every_document_is_zero():
    index = build_index(docs("a x", "a y", "a z"))
    assert index.idf("a") == 0.0


def test_idf_unseen_term():
    index = build_index(docs(*(["w"] * 9)))
    assert index.doc_count == 9
    assert index.idf("never-seen") == pytest.approx(math.log(10.0))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
        min_size=1,
        max_size=12,
    )
)
def test_idf_bounds(token_lists):
    index = build_index(
        [Document(f"d{i}", " ".join(toks)) for i, toks in enumerate(token_lists)]
    )
    upper = math.log(index.doc_count + 1)
    for term in list(index.vocabulary.terms) + ["unseen"]:
        assert 0.0 <= index.idf(term) <= upper + 1e-12


# ---------------------------------------------------------------------------
# BM25


def test_bm25_no_shared_terms_is_zero():
    index = build_index(docs("a b", "c d"))
    assert index.bm25_score(["zzz", "qqq"], 0) == 0.0


def test_bm25_worked_example():
    # 2 docs of equal length: length normalizer is exactly 1, df=1, tf=1,
    # so the score collapses to ln(1 + 1.5/1.5) = ln 2.
    index = build_index(docs("a b", "c d"))
    assert index.bm25_score(["a"], 0) == pytest.approx(math.log(2.0))
    assert index.bm25_score(["a"], 1) == 0.0


def test_bm25_tf_monotone_sublinear():
    index = build_index(docs("a x", "a a", "y z"))
    s1 = index.bm25_score(["a"], 0)
    s2 = index.bm25_score(["a"], 1)
    assert s2 > s1
    assert s2 < 2 * s1


def test_bm25_repeated_query_terms_add_per_occurrence():
    index = build_index(docs("a b", "c d"))
    single = index.bm25_score(["a"], 0)
    assert index.bm25_score(["a", "a"], 0) == pytest.approx(2 * single)


def test_bm25_rejects_out_of_range_doc():
    index = build_index(docs("a"))
    with pytest.raises(ValueError):
        index.bm25_score(["a"], 1)
    with pytest.raises(ValueError):
        index.bm25_score(["a"], -1)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.lists(st.sampled_from("abcde"), min_size=1, max_size=8),
        min_size=1,
        max_size=10,
    ),
    st.lists(st.sampled_from("abcdef"), min_size=1, max_size=4),
    st.lists(st.sampled_from("abcdef"), min_size=1, max_size=4),
)
def test_bm25_additive_over_query_terms(token_lists, q1, q2):
    index = build_index(
        [Document(f"d{i}", " ".join(toks)) for i, toks in enumerate(token_lists)]
    )
    for d in range(index.doc_count):
        combined = index.bm25_score(q1 + q2, d)
        assert combined == pytest.approx(
            index.bm25_score(q1, d) + index.bm25_score(q2, d), rel=1e-12, abs=1e-15
        )


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.lists(st.sampled_from("abcd"), min_size=1, max_size=6),
        min_size=1,
        max_size=8,
    )
)
def test_posting_frequencies_match_naive_recount(token_lists):
    texts = [" ".join(toks) for toks in token_lists]
    index = build_index([Document(f"d{i}", t) for i, t in enumerate(texts)])
    naive = Counter()
    for t in texts:
        naive.update(tokenize(t))
    for term, total in naive.items():
        idx = index.vocabulary.index_of(term)
        assert sum(tf for _, tf in index.postings[idx]) == total


# ---------------------------------------------------------------------------
# Search


def test_search_ranks_by_score_then_doc_id():
    # d1 and d3 tie exactly (same tf, same length): ascending doc_id breaks it.
    documents = [
        Document("d3", "a x"),
        Document("d1", "a y"),
        Document("d2", "b c"),
    ]
    index = build_index(documents)
    ids, scores = index.search(["a"], 10)
    assert [index.doc_ids[d] for d in ids] == ["d1", "d3"]
    assert scores[0] == scores[1]


def test_search_truncates_to_k():
    index = build_index(docs("a", "a b", "a b c", "q"))
    ids, scores = index.search(["a"], 2)
    assert len(ids) == 2
    assert scores == sorted(scores, reverse=True)


def test_search_scores_match_direct_evaluation():
    index = build_index(docs("a b c", "a a", "b c d", "zzz"))
    query = ["a", "b"]
    ids, scores = index.search(query, 10)
    for d, s in zip(ids, scores):
        assert s == index.bm25_score(query, d)


# ---------------------------------------------------------------------------
# Annotation


def test_annotate_empty_queryset():
    index = build_index(docs("a b", "c d"))
    instances, report = annotate_queries(index, [], seed=1)
    assert instances == []
    assert report.queries_total == 0


def test_annotate_two_doc_pool_single_pair():
    index = build_index(docs("a a", "a b"))
    queries = [Query("q1", ("a",))]
    instances, report = annotate_queries(
        index, queries, pool_size=10, pairs_per_query=1, seed=7
    )
    assert len(instances) == 1
    inst = instances[0]
    pos = {doc_id: i for i, doc_id in enumerate(index.doc_ids)}
    # labels must match an independent recomputation
    assert inst.s1 == index.bm25_score(["a"], pos[inst.doc1_id])
    assert inst.s2 == index.bm25_score(["a"], pos[inst.doc2_id])
    assert report.pairs_emitted == 1


def test_annotate_deterministic_across_runs():
    index = build_index(docs("a b c", "a a d", "b d", "c c a", "e f"))
    queries = [Query("q1", ("a", "b")), Query("q2", ("c",))]
    first, _ = annotate_queries(index, queries, pool_size=5, pairs_per_query=3, seed=42)
    second, _ = annotate_queries(index, queries, pool_size=5, pairs_per_query=3, seed=42)
    assert first == second


def test_annotate_skips_thin_pools():
    index = build_index(docs("a b", "c d"))
    queries = [Query("q1", ("a",)), Query("q2", ("zzz",))]
    instances, report = annotate_queries(index, queries, pool_size=5, seed=0)
    assert report.queries_skipped == 2  # 1-doc pool and 0-doc pool both skip
    assert report.skipped_query_ids == ["q1", "q2"]
    assert instances == []


def test_annotate_never_emits_ties():
    # many exact ties in the pool: same text -> same score
    texts = ["a x"] * 6 + ["a a", "a y b"]
    index = build_index(docs(*texts))
    queries = [Query("q", ("a",))]
    instances, report = annotate_queries(
        index, queries, pool_size=10, pairs_per_query=30, seed=3
    )
    for inst in instances:
        assert inst.s1 != inst.s2
    assert report.ties_discarded > 0


def test_annotate_rejects_tiny_pool_size():
    index = build_index(docs("a"))
    with pytest.raises(ValueError):
        annotate_queries(index, [], pool_size=1, seed=0)


def test_training_instance_rejects_ties():
    with pytest.raises(ValueError):
        TrainingInstance("q", "d1", "d2", 1.0, 1.0, ("a",), ("x",), ("y",))


# ---------------------------------------------------------------------------
# File I/O


def test_read_corpus_and_queries(tmp_path):
    corpus_path = tmp_path / "corpus.jsonl"
    corpus_path.write_text(
        '{"id": "d1", "text": "Alpha beta"}\n\n{"id": "d2", "text": "gamma"}\n',
        encoding="utf-8",
    )
    documents = read_corpus(corpus_path)
    assert [d.doc_id for d in documents] == ["d1", "d2"]
    assert documents[0].text == "Alpha beta"

    qpath = tmp_path / "queries.tsv"
    qpath.write_text("q1\talpha beta\nq2\tGamma!\n", encoding="utf-8")
    queries = read_queries(qpath)
    assert queries[0] == Query("q1", ("alpha", "beta"))
    assert queries[1].terms == ("gamma",)


def test_read_corpus_rejects_malformed_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": "d1"}\n', encoding="utf-8")
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        read_corpus(p)


def test_read_queries_rejects_duplicates_and_missing_tab(tmp_path):
    p = tmp_path / "q.tsv"
    p.write_text("q1\ta\nq1\tb\n", encoding="utf-8")
    with pytest.raises(ValueError, match="duplicate"):
        read_queries(p)
    p.write_text("no tab here\n", encoding="utf-8")
    with pytest.raises(ValueError, match="TAB"):
        read_queries(p)


def test_annotation_file_round_trip(tmp_path):
    index = build_index(docs("a b c", "a a d", "b d", "c c a"))
    queries = [Query("q1", ("a", "b")), Query("q2", ("c",))]
    instances, _ = annotate_queries(index, queries, pool_size=4, pairs_per_query=2, seed=9)
    path = tmp_path / "ann.tsv"
    write_annotations(path, instances)
    back, dropped = read_annotations(path, queries, index)
    assert dropped == 0
    assert len(back) == len(instances)
    for orig, rt in zip(instances, back):
        assert rt.query_id == orig.query_id
        assert (rt.doc1_id, rt.doc2_id) == (orig.doc1_id, orig.doc2_id)
        # 6-decimal format bounds the score error
        assert rt.s1 == pytest.approx(orig.s1, abs=5e-7)
        assert rt.doc1_terms == orig.doc1_terms
        assert rt.query_terms == orig.query_terms


def test_read_annotations_drops_rounded_ties(tmp_path):
    index = build_index(docs("a b", "a c"))
    queries = [Query("q1", ("a",))]
    path = tmp_path / "ann.tsv"
    path.write_text("q1\td0\td1\t1.000000\t1.000000\nq1\td0\td1\t1.000000\t2.000000\n")
    back, dropped = read_annotations(path, queries, index)
    assert dropped == 1
    assert len(back) == 1


def test_read_annotations_rejects_unknown_ids(tmp_path):
    index = build_index(docs("a b", "a c"))
    queries = [Query("q1", ("a",))]
    path = tmp_path / "ann.tsv"
    path.write_text("q9\td0\td1\t1.000000\t2.000000\n")
    with pytest.raises(ValueError, match="q9"):
        read_annotations(path, queries, index)
    path.write_text("q1\tnope\td1\t1.000000\t2.000000\n")
    with pytest.raises(ValueError, match="nope"):
        read_annotations(path, queries, index)


def test_index_save_load_round_trip(tmp_path):
    index = build_index(docs("a b c", "a a d", "b d", ""))
    path = tmp_path / "index.bin"
    save_index(path, index)
    loaded = load_index(path)
    assert loaded.doc_ids == index.doc_ids
    assert loaded.doc_lengths == index.doc_lengths
    assert loaded.vocabulary == index.vocabulary
    assert loaded.postings == index.postings
    assert loaded.avg_doc_length == index.avg_doc_length
    # rewriting the loaded index reproduces the file byte for byte
    path2 = tmp_path / "index2.bin"
    save_index(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()
