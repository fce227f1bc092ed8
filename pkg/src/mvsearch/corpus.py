"""Passage ingestion, pseudo-query attachment and stream flattening.

A passage carries three views of identifiers: its title, its body (the
substring pool) and a set of pseudo-queries.  ``flatten`` turns all three
into one delimiter-tagged token stream per passage; the streams of a
corpus are what the FM-index is built over.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator, Protocol, Sequence

from .errors import CorpusParseError, DuplicateIdError, MissingFileError
from .tokenization import (
    BE,
    BS,
    EOD,
    QE,
    QS,
    TE,
    TS,
    Vocabulary,
    WordTokenizer,
)

logger = logging.getLogger(__name__)

_MIN_SPAN_TOKENS = 3
_MAX_SPAN_TOKENS = 6


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


@dataclass(frozen=True)
class Passage:
    """One retrievable unit: id, title, body text and pseudo-queries."""

    id: str
    title: str
    body: str
    pseudo_queries: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"passage {self.id!r} has an empty body")


@dataclass(frozen=True)
class Corpus:
    passages: tuple[Passage, ...]
    _by_id: dict[str, Passage] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        by_id: dict[str, Passage] = {}
        for p in self.passages:
            if p.id in by_id:
                raise DuplicateIdError(f"duplicate passage id {p.id!r}")
            by_id[p.id] = p
        object.__setattr__(self, "_by_id", by_id)

    @property
    def doc_count(self) -> int:
        return len(self.passages)

    def __len__(self) -> int:
        return len(self.passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self.passages)

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._by_id

    def get(self, passage_id: str) -> Passage:
        return self._by_id[passage_id]


@dataclass(frozen=True)
class FlatStream:
    """Delimiter-tagged token stream of one passage, sentinel-terminated.

    Layout: ``<TS> title <TE> <BS> body <BE> (<QS> query <QE>)* <EOD>``.
    """

    doc_id: str
    tokens: tuple[int, ...]


def load_corpus(path: str | Path, format: str = "jsonl") -> Corpus:
    """Load a corpus file; ``format`` is ``jsonl`` or ``tsv``.

    Raises ``CorpusParseError`` (with the offending line number),
    ``DuplicateIdError`` or ``MissingFileError``.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"corpus file not found: {path}")
    if format == "jsonl":
        records = _parse_jsonl(path)
    elif format == "tsv":
        records = _parse_tsv(path)
    else:
        raise CorpusParseError(f"unknown corpus format {format!r}")

    passages: list[Passage] = []
    seen: set[str] = set()
    for lineno, rec in records:
        if rec.id in seen:
            raise DuplicateIdError(f"duplicate passage id {rec.id!r} at line {lineno}")
        seen.add(rec.id)
        passages.append(rec)
    return Corpus(passages=tuple(passages))


def _parse_jsonl(path: Path) -> list[tuple[int, Passage]]:
    out: list[tuple[int, Passage]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusParseError(f"line {lineno}: record is not an object")
            if "id" not in obj:
                raise CorpusParseError(f"line {lineno}: missing 'id' field")
            if "text" not in obj:
                raise CorpusParseError(f"line {lineno}: missing 'text' field")
            body = _normalize_ws(str(obj["text"]))
            if not body:
                raise CorpusParseError(f"line {lineno}: empty 'text' field")
            queries = obj.get("pseudo_queries", [])
            if not isinstance(queries, list):
                raise CorpusParseError(f"line {lineno}: 'pseudo_queries' must be a list")
            out.append(
                (
                    lineno,
                    Passage(
                        id=str(obj["id"]),
                        title=_normalize_ws(str(obj.get("title", ""))),
                        body=body,
                        pseudo_queries=tuple(_normalize_ws(str(q)) for q in queries),
                    ),
                )
            )
    return out


def _parse_tsv(path: Path) -> list[tuple[int, Passage]]:
    out: list[tuple[int, Passage]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t", 2)
            if len(parts) != 3:
                raise CorpusParseError(f"line {lineno}: expected 'id<TAB>title<TAB>text'")
            pid, title, text = parts
            body = _normalize_ws(text)
            if not body:
                raise CorpusParseError(f"line {lineno}: empty 'text' field")
            out.append((lineno, Passage(id=pid, title=_normalize_ws(title), body=body)))
    return out


class PseudoQueryGenerator(Protocol):
    """Contract for pluggable query generators.

    Must be deterministic given ``(passage, seed)``; ``k`` is the number
    of queries requested.
    """

    def __call__(self, passage: Passage, k: int, seed: int) -> list[str]: ...


def template_pseudo_queries(passage: Passage, k: int, seed: int = 0) -> list[str]:
    """Desk-scale stand-in for a neural query generator.

    Builds up to ``k`` distinct queries from templates over the title and
    sampled body spans.  Bodies shorter than the minimum span length fall
    back to title-only templates.
    """
    tokenizer = WordTokenizer()
    rng = random.Random(f"{seed}:{passage.id}")
    title = tokenizer.normalize(passage.title)
    body_tokens = tokenizer.tokenize(passage.body)

    title_templates: list[Callable[[], str]] = []
    if title:
        title_templates = [
            lambda: f"what is {title} about",
            lambda: f"tell me about {title}",
            lambda: f"what does {title} refer to",
        ]

    def sample_span() -> str:
        width = rng.randint(_MIN_SPAN_TOKENS, min(_MAX_SPAN_TOKENS, len(body_tokens)))
        start = rng.randint(0, len(body_tokens) - width)
        return " ".join(body_tokens[start : start + width])

    span_templates: list[Callable[[str], str]] = [
        lambda s: f"{s} refers to what",
        lambda s: f"what does {s} mean",
        lambda s: f"which passage mentions {s}",
    ]

    queries: list[str] = []
    seen: set[str] = set()

    def add(q: str) -> None:
        if q and q not in seen:
            seen.add(q)
            queries.append(q)

    if title_templates:
        add(title_templates[0]())

    if len(body_tokens) >= _MIN_SPAN_TOKENS:
        attempts = 0
        while len(queries) < k and attempts < 20 * max(k, 1):
            template = span_templates[rng.randrange(len(span_templates))]
            add(template(sample_span()))
            attempts += 1

    # Tiny bodies: exhaust the remaining title templates instead.
    for make in title_templates[1:]:
        if len(queries) >= k:
            break
        add(make())

    return queries[:k]


def attach_pseudo_queries(
    corpus: Corpus,
    generator: PseudoQueryGenerator,
    k: int,
    seed: int = 0,
) -> Corpus:
    """Attach up to ``k`` generated queries to every passage lacking them.

    Passages that already hold at least one pseudo-query are left
    untouched, so the operation is idempotent.  A generator failure skips
    that passage with a warning and never aborts the batch.
    """
    if k <= 0:
        return corpus
    updated: list[Passage] = []
    for passage in corpus:
        if passage.pseudo_queries:
            updated.append(passage)
            continue
        try:
            queries = generator(passage, k, seed)[:k]
        except Exception as exc:
            logger.warning("pseudo-query generation failed for %r: %s", passage.id, exc)
            updated.append(passage)
            continue
        updated.append(replace(passage, pseudo_queries=tuple(queries)))
    return Corpus(passages=tuple(updated))


def build_vocabulary(corpus: Corpus, tokenizer: WordTokenizer | None = None) -> Vocabulary:
    """First pass over the corpus: collect every word token into a vocabulary."""
    tokenizer = tokenizer or WordTokenizer()
    words: set[str] = set()
    for p in corpus:
        words.update(tokenizer.tokenize(p.title))
        words.update(tokenizer.tokenize(p.body))
        for q in p.pseudo_queries:
            words.update(tokenizer.tokenize(q))
    return Vocabulary.from_words(words)


def flatten(
    passage: Passage,
    vocab: Vocabulary,
    tokenizer: WordTokenizer | None = None,
) -> FlatStream:
    """Flatten a passage's identifier views into one tagged token stream."""
    tokenizer = tokenizer or WordTokenizer()
    tokens: list[int] = [TS]
    tokens.extend(vocab.encode_words(tokenizer.tokenize(passage.title)))
    tokens.append(TE)
    tokens.append(BS)
    tokens.extend(vocab.encode_words(tokenizer.tokenize(passage.body)))
    tokens.append(BE)
    for query in passage.pseudo_queries:
        tokens.append(QS)
        tokens.extend(vocab.encode_words(tokenizer.tokenize(query)))
        tokens.append(QE)
    tokens.append(EOD)
    return FlatStream(doc_id=passage.id, tokens=tuple(tokens))


def flatten_corpus(
    corpus: Corpus,
    vocab: Vocabulary,
    tokenizer: WordTokenizer | None = None,
) -> list[FlatStream]:
    tokenizer = tokenizer or WordTokenizer()
    return [flatten(p, vocab, tokenizer) for p in corpus]


@dataclass(frozen=True)
class RegionSpans:
    """Half-open content spans of one stream, in stream coordinates."""

    title: tuple[int, int]
    body: tuple[int, int]
    queries: tuple[tuple[int, int], ...]


def region_spans(tokens: Sequence[int]) -> RegionSpans:
    """Parse a stream's delimiter structure into content spans.

    Raises ``ValueError`` if the stream violates the flattening grammar.
    """
    segs = _split_segments(tokens)
    return RegionSpans(title=segs[0], body=segs[1], queries=tuple(segs[2:]))


def extract_segments(
    tokens: Sequence[int],
) -> tuple[list[int], list[int], list[list[int]]]:
    """Recover (title ids, body ids, query id lists) from a stream."""
    segs = _split_segments(tokens)
    title_lo, title_hi = segs[0]
    body_lo, body_hi = segs[1]
    queries = [list(tokens[lo:hi]) for lo, hi in segs[2:]]
    return list(tokens[title_lo:title_hi]), list(tokens[body_lo:body_hi]), queries


def _split_segments(tokens: Sequence[int]) -> list[tuple[int, int]]:
    if not tokens or tokens[-1] != EOD:
        raise ValueError("stream must end with the sentinel")
    spans: list[tuple[int, int]] = []
    pos = 0
    pos = _expect_region(tokens, pos, TS, TE, spans)
    pos = _expect_region(tokens, pos, BS, BE, spans)
    while pos < len(tokens) - 1:
        pos = _expect_region(tokens, pos, QS, QE, spans)
    return spans


def _expect_region(
    tokens: Sequence[int],
    pos: int,
    open_id: int,
    close_id: int,
    spans: list[tuple[int, int]],
) -> int:
    if pos >= len(tokens) or tokens[pos] != open_id:
        raise ValueError(f"expected delimiter {open_id} at position {pos}")
    lo = pos + 1
    hi = lo
    while hi < len(tokens) and tokens[hi] != close_id:
        if tokens[hi] in (TS, TE, BS, BE, QS, QE, EOD):
            raise ValueError(f"unexpected delimiter {tokens[hi]} inside region at {hi}")
        hi += 1
    if hi >= len(tokens):
        raise ValueError(f"unterminated region opened at {pos}")
    spans.append((lo, hi))
    return hi + 1
