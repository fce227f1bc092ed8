"""Corpus ingestion, pseudo-query attachment and flattening."""

from __future__ import annotations

import json

import pytest

from mvsearch.corpus import (
    Corpus,
    Passage,
    attach_pseudo_queries,
    build_vocabulary,
    extract_segments,
    flatten,
    load_corpus,
    region_spans,
    template_pseudo_queries,
)
from mvsearch.errors import CorpusParseError, DuplicateIdError, MissingFileError
from mvsearch.tokenization import BE, BS, EOD, QE, QS, TE, TS, WordTokenizer


def _write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


class TestLoadCorpus:
    def test_three_records(self, tmp_path):
        p = tmp_path / "c.jsonl"
        _write_jsonl(
            p,
            [
                {"id": "p1", "title": "A", "text": "one two"},
                {"id": "p2", "title": "B", "text": "three"},
                {"id": "p3", "title": "", "text": "four five six"},
            ],
        )
        corpus = load_corpus(p, "jsonl")
        assert corpus.doc_count == 3
        assert corpus.get("p2").body == "three"

    def test_missing_text_names_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        _write_jsonl(p, [{"id": "p1", "title": "A", "text": "x"}, {"id": "p2"}])
        with pytest.raises(CorpusParseError, match="line 2"):
            load_corpus(p, "jsonl")

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "c.jsonl"
        _write_jsonl(
            p,
            [{"id": "p1", "text": "x"}, {"id": "p1", "text": "y"}],
        )
        with pytest.raises(DuplicateIdError):
            load_corpus(p, "jsonl")

    def test_body_whitespace_normalized(self, tmp_path):
        p = tmp_path / "c.jsonl"
        _write_jsonl(p, [{"id": "p1", "text": "  a\t b \n c  "}])
        assert load_corpus(p, "jsonl").get("p1").body == "a b c"

    def test_invalid_json_names_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"id": "p1", "text": "x"}\n{broken\n', encoding="utf-8")
        with pytest.raises(CorpusParseError, match="line 2"):
            load_corpus(p, "jsonl")

    def test_tsv_loader(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("p1\tAlpha\tone two three\np2\t\tfour\n", encoding="utf-8")
        corpus = load_corpus(p, "tsv")
        assert corpus.doc_count == 2
        assert corpus.get("p1").title == "Alpha"
        assert corpus.get("p2").title == ""

    def test_tsv_bad_column_count(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("p1\tonly-two-fields\n", encoding="utf-8")
        with pytest.raises(CorpusParseError, match="line 1"):
            load_corpus(p, "tsv")

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_corpus(tmp_path / "absent.jsonl", "jsonl")

    def test_pseudo_queries_carried_through(self, tmp_path):
        p = tmp_path / "c.jsonl"
        _write_jsonl(p, [{"id": "p1", "text": "x", "pseudo_queries": ["q one", "q two"]}])
        assert load_corpus(p, "jsonl").get("p1").pseudo_queries == ("q one", "q two")


class TestTemplateQueries:
    def test_title_template_instantiation(self):
        passage = Passage(id="p", title="Does He Love You", body="a duet song")
        assert template_pseudo_queries(passage, k=1, seed=0) == [
            "what is does he love you about"
        ]

    def test_deterministic(self):
        passage = Passage(id="p", title="Gravity", body="force between masses pulls objects together")
        a = template_pseudo_queries(passage, k=4, seed=3)
        b = template_pseudo_queries(passage, k=4, seed=3)
        assert a == b
        assert len(a) == len(set(a)) == 4

    def test_empty_title_uses_spans_only(self):
        passage = Passage(id="p", title="", body="tidal forces shape the coastline over time")
        queries = template_pseudo_queries(passage, k=2, seed=1)
        assert len(queries) == 2
        body_words = set(passage.body.split())
        for q in queries:
            assert any(w in body_words for w in q.split())

    def test_tiny_body_falls_back_to_title(self):
        passage = Passage(id="p", title="Brief", body="ok go")
        queries = template_pseudo_queries(passage, k=3, seed=0)
        assert queries
        assert all("brief" in q for q in queries)


class TestAttachQueries:
    def test_attaches_k_queries(self):
        corpus = Corpus(
            passages=(Passage(id="p", title="Tides", body="the moon pulls the sea with gravity"),)
        )
        out = attach_pseudo_queries(corpus, template_pseudo_queries, k=5, seed=0)
        assert len(out.get("p").pseudo_queries) == 5

    def test_existing_queries_untouched(self):
        corpus = Corpus(
            passages=(
                Passage(id="p", title="T", body="b c d", pseudo_queries=("x", "y", "z")),
            )
        )
        out = attach_pseudo_queries(corpus, template_pseudo_queries, k=5, seed=0)
        assert out.get("p").pseudo_queries == ("x", "y", "z")

    def test_k_zero_is_identity(self):
        corpus = Corpus(passages=(Passage(id="p", title="T", body="b"),))
        assert attach_pseudo_queries(corpus, template_pseudo_queries, k=0) is corpus

    def test_generator_failure_warns_not_aborts(self, caplog):
        def boom(passage, k, seed):
            raise RuntimeError("no")

        corpus = Corpus(
            passages=(
                Passage(id="p1", title="T", body="b"),
                Passage(id="p2", title="U", body="c"),
            )
        )
        with caplog.at_level("WARNING"):
            out = attach_pseudo_queries(corpus, boom, k=2)
        assert out.get("p1").pseudo_queries == ()
        assert out.doc_count == 2
        assert "p1" in caplog.text


class TestFlatten:
    def test_grammar_instantiation(self):
        corpus = Corpus(
            passages=(
                Passage(id="p", title="a b", body="c d", pseudo_queries=("e",)),
            )
        )
        vocab = build_vocabulary(corpus)
        stream = flatten(corpus.passages[0], vocab)
        a, b, c, d, e = (vocab.encode_word(w)[0] for w in "abcde")
        assert stream.tokens == (TS, a, b, TE, BS, c, d, BE, QS, e, QE, EOD)

    def test_query_group_count(self):
        corpus = Corpus(
            passages=(
                Passage(id="p", title="t", body="b", pseudo_queries=("x y", "z")),
            )
        )
        vocab = build_vocabulary(corpus)
        stream = flatten(corpus.passages[0], vocab)
        assert sum(1 for t in stream.tokens if t == QS) == 2
        assert sum(1 for t in stream.tokens if t == QE) == 2

    def test_empty_title_degenerate(self):
        corpus = Corpus(passages=(Passage(id="p", title="", body="b"),))
        vocab = build_vocabulary(corpus)
        stream = flatten(corpus.passages[0], vocab)
        assert stream.tokens[0] == TS and stream.tokens[1] == TE

    def test_segment_round_trip(self):
        tok = WordTokenizer()
        passage = Passage(
            id="p",
            title="Coastal Tides",
            body="The moon pulls the sea; gravity does the rest.",
            pseudo_queries=("what pulls the sea", "moon gravity"),
        )
        corpus = Corpus(passages=(passage,))
        vocab = build_vocabulary(corpus)
        stream = flatten(passage, vocab)
        title_ids, body_ids, query_ids = extract_segments(stream.tokens)
        assert vocab.decode(title_ids) == tok.tokenize(passage.title)
        assert vocab.decode(body_ids) == tok.tokenize(passage.body)
        assert [vocab.decode(q) for q in query_ids] == [
            tok.tokenize(q) for q in passage.pseudo_queries
        ]

    def test_flatten_injective(self):
        passages = (
            Passage(id="p1", title="a", body="b c"),
            Passage(id="p2", title="", body="a b c"),
            Passage(id="p3", title="a", body="b", pseudo_queries=("c",)),
            Passage(id="p4", title="a b", body="c"),
        )
        corpus = Corpus(passages=passages)
        vocab = build_vocabulary(corpus)
        streams = {flatten(p, vocab).tokens for p in passages}
        assert len(streams) == len(passages)

    def test_region_spans_match_segments(self):
        passage = Passage(id="p", title="x y", body="z w", pseudo_queries=("v",))
        corpus = Corpus(passages=(passage,))
        vocab = build_vocabulary(corpus)
        stream = flatten(passage, vocab)
        spans = region_spans(stream.tokens)
        assert spans.title == (1, 3)
        assert spans.body == (5, 7)
        assert spans.queries == ((9, 10),)
        bad = stream.tokens[:-1]  # drop sentinel
        with pytest.raises(ValueError):
            region_spans(bad)
