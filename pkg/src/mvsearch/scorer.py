"""Autoregressive scoring contract, training-sample builders and the
reference n-gram scorer.

The scorer is what ranks continuation tokens during constrained
generation.  Any model matching ``ScorerContract`` can be dropped in;
the bundled implementation is a query-conditioned n-gram counter that
trains in milliseconds and keeps the whole pipeline deterministic.
"""

from __future__ import annotations

import logging
import math
import random
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .corpus import Corpus, Passage
from .errors import MissingFileError, QrelsError, ScorerFormatError, VocabularyMismatchError
from .tokenization import QE, TE, Vocabulary, WordTokenizer

logger = logging.getLogger(__name__)

VIEW_TITLE = "title"
VIEW_SUBSTRING = "substring"
VIEW_PSEUDO_QUERY = "pseudo-query"
ALL_VIEWS = (VIEW_TITLE, VIEW_SUBSTRING, VIEW_PSEUDO_QUERY)

# End-of-identifier symbol the scorer learns per view.  Substrings have
# no closing delimiter: the decoder caps them by length instead.
VIEW_END_TOKEN = {VIEW_TITLE: TE, VIEW_PSEUDO_QUERY: QE}

BOS = -1

SCORER_MAGIC = b"MVSC"
SCORER_VERSION = 1

DEFAULT_ORDER = 3
DEFAULT_SMOOTHING = 0.1
DEFAULT_BG_WEIGHT = 0.25
DEFAULT_NUM_BUCKETS = 4096
SUBSTRING_LEN_RANGE = (4, 16)
OVERLAP_NGRAM = 3
OVERLAP_THRESHOLD = 0.2


@dataclass(frozen=True)
class TrainingSample:
    """One (view prefix, query) → identifier-tokens training example."""

    prefix: str
    query_tokens: tuple[str, ...]
    target_tokens: tuple[int, ...]

    def __post_init__(self):
        if self.prefix not in ALL_VIEWS:
            raise ValueError(f"unknown view prefix {self.prefix!r}")


class ScorerContract(Protocol):
    """What the decoder needs from any autoregressive scorer.

    Returns one finite log-score per candidate token, aligned with the
    candidate sequence.  Scores need not be normalized; softmax over the
    candidate set is the decoder's job.
    """

    def next_distribution(
        self,
        view: str,
        query_tokens: Sequence[str],
        output: Sequence[int],
        candidates: Sequence[int],
    ) -> np.ndarray: ...


def _char_ngrams(text: str, n: int = OVERLAP_NGRAM) -> dict[str, int]:
    grams: dict[str, int] = {}
    for i in range(len(text) - n + 1):
        g = text[i : i + n]
        grams[g] = grams.get(g, 0) + 1
    return grams


def _overlap(query_grams: dict[str, int], window_text: str) -> float:
    """|char n-gram multiset intersection| / |query n-gram multiset|."""
    total = sum(query_grams.values())
    if total == 0:
        return 0.0
    window_grams = _char_ngrams(window_text)
    shared = sum(
        min(c, window_grams.get(g, 0)) for g, c in query_grams.items()
    )
    return shared / total


def select_substring(
    query_text: str, body_tokens: Sequence[str], length: int
) -> tuple[int, int]:
    """Window of ``length`` tokens with the highest character overlap.

    Falls back to the highest-overlap window when nothing clears the
    threshold, which collapses to a plain argmax; ties break on the
    earliest start so selection is deterministic.
    """
    length = min(length, len(body_tokens))
    query_grams = _char_ngrams(WordTokenizer().normalize(query_text))
    best_start, best_score = 0, -1.0
    for start in range(len(body_tokens) - length + 1):
        window = " ".join(body_tokens[start : start + length])
        score = _overlap(query_grams, window)
        if score > best_score:
            best_start, best_score = start, score
    return best_start, best_start + length


def build_training_samples(
    pairs: Sequence[tuple[str, str]],
    corpus: Corpus,
    vocab: Vocabulary,
    ratio: tuple[int, int, int] = (3, 10, 5),
    seed: int = 0,
    substring_len_range: tuple[int, int] = SUBSTRING_LEN_RANGE,
) -> list[TrainingSample]:
    """Per (query, passage) pair, emit ratio[i] samples for view i.

    Substring targets are length-sampled windows chosen by character
    overlap with the query; pseudo-query targets are drawn uniformly
    from the passage's attached queries (skipped with a warning when a
    passage has none).  The result is shuffled under ``seed``.
    """
    if any(r < 0 for r in ratio):
        raise ValueError("ratio components must be >= 0")
    tokenizer = WordTokenizer()
    rng = random.Random(seed)
    samples: list[TrainingSample] = []
    warned: set[str] = set()
    for query_text, passage_id in pairs:
        if passage_id not in corpus:
            raise QrelsError(f"training pair references unknown passage id {passage_id!r}")
        passage = corpus.get(passage_id)
        query_tokens = tuple(tokenizer.tokenize(query_text))
        title_ids = tuple(vocab.encode_words(tokenizer.tokenize(passage.title)))
        body_tokens = tokenizer.tokenize(passage.body)

        for _ in range(ratio[0]):
            samples.append(TrainingSample(VIEW_TITLE, query_tokens, title_ids))
        for _ in range(ratio[1]):
            length = rng.randint(*substring_len_range)
            lo, hi = select_substring(query_text, body_tokens, length)
            target = tuple(vocab.encode_words(body_tokens[lo:hi]))
            samples.append(TrainingSample(VIEW_SUBSTRING, query_tokens, target))
        if ratio[2] > 0:
            if not passage.pseudo_queries:
                if passage_id not in warned:
                    warned.add(passage_id)
                    logger.warning(
                        "passage %r has no pseudo-queries; skipping its "
                        "pseudo-query samples",
                        passage_id,
                    )
            else:
                for _ in range(ratio[2]):
                    chosen = rng.choice(passage.pseudo_queries)
                    target = tuple(vocab.encode_words(tokenizer.tokenize(chosen)))
                    samples.append(
                        TrainingSample(VIEW_PSEUDO_QUERY, query_tokens, target)
                    )
    rng.shuffle(samples)
    return samples


def build_unsupervised_samples(
    corpus: Corpus,
    vocab: Vocabulary,
    per_passage: int,
    seed: int = 0,
    substring_len_range: tuple[int, int] = SUBSTRING_LEN_RANGE,
) -> list[TrainingSample]:
    """Self-supervision: a random attached pseudo-query stands in as the
    input, the passage's own identifiers are the targets, views rotating
    per sample.  Passages without pseudo-queries are skipped.
    """
    if per_passage < 0:
        raise ValueError("per_passage must be >= 0")
    tokenizer = WordTokenizer()
    rng = random.Random(seed)
    samples: list[TrainingSample] = []
    for passage in corpus:
        if not passage.pseudo_queries:
            continue
        body_tokens = tokenizer.tokenize(passage.body)
        title_ids = tuple(vocab.encode_words(tokenizer.tokenize(passage.title)))
        for j in range(per_passage):
            query_text = rng.choice(passage.pseudo_queries)
            query_tokens = tuple(tokenizer.tokenize(query_text))
            view = ALL_VIEWS[j % 3]
            if view == VIEW_TITLE:
                target = title_ids
            elif view == VIEW_SUBSTRING:
                length = rng.randint(*substring_len_range)
                lo, hi = select_substring(query_text, body_tokens, length)
                target = tuple(vocab.encode_words(body_tokens[lo:hi]))
            else:
                chosen = rng.choice(passage.pseudo_queries)
                target = tuple(vocab.encode_words(tokenizer.tokenize(chosen)))
            samples.append(TrainingSample(view, query_tokens, target))
    return samples


def _bucket(word: str, num_buckets: int) -> int:
    return zlib.crc32(word.encode("utf-8")) % num_buckets


@dataclass
class NGramScorer:
    """Conditional n-gram counts with additive smoothing.

    Continuations are keyed on (view, hashed query-word bucket, the
    order−1 preceding output tokens); a query-agnostic background table
    smooths contexts the query features never saw.  With no training
    data at all, every candidate scores equally.
    """

    order: int = DEFAULT_ORDER
    smoothing: float = DEFAULT_SMOOTHING
    bg_weight: float = DEFAULT_BG_WEIGHT
    num_buckets: int = DEFAULT_NUM_BUCKETS
    vocab_hash: str = ""
    counts: dict[tuple[str, int, tuple[int, ...], int], int] = field(default_factory=dict)
    bg_counts: dict[tuple[str, tuple[int, ...], int], int] = field(default_factory=dict)
    trained: bool = False

    def _context(self, output: Sequence[int]) -> tuple[int, ...]:
        k = self.order - 1
        if k == 0:
            return ()
        tail = [int(t) for t in output[len(output) - min(k, len(output)) :]]
        return (BOS,) * (k - len(tail)) + tuple(tail)

    def next_distribution(
        self,
        view: str,
        query_tokens: Sequence[str],
        output: Sequence[int],
        candidates: Sequence[int],
    ) -> np.ndarray:
        scores = np.zeros(len(candidates), dtype=np.float64)
        if not self.trained:
            return scores
        ctx = self._context(output)
        buckets = sorted({_bucket(w, self.num_buckets) for w in query_tokens})
        for i, cand in enumerate(candidates):
            t = int(cand)
            acc = self.smoothing + self.bg_weight * self.bg_counts.get((view, ctx, t), 0)
            for b in buckets:
                acc += self.counts.get((view, b, ctx, t), 0)
            scores[i] = math.log(acc)
        return scores


def train_ngram_scorer(
    samples: Sequence[TrainingSample],
    order: int = DEFAULT_ORDER,
    smoothing: float = DEFAULT_SMOOTHING,
    bg_weight: float = DEFAULT_BG_WEIGHT,
    num_buckets: int = DEFAULT_NUM_BUCKETS,
    vocab_hash: str = "",
) -> NGramScorer:
    """Count continuations per view; deterministic for identical input.

    Title and pseudo-query targets are extended with their closing
    delimiter so the model learns where identifiers stop; substrings
    are capped by the decoder instead.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if smoothing <= 0:
        raise ValueError("smoothing must be > 0")
    scorer = NGramScorer(
        order=order,
        smoothing=smoothing,
        bg_weight=bg_weight,
        num_buckets=num_buckets,
        vocab_hash=vocab_hash,
        trained=bool(samples),
    )
    for sample in samples:
        target = list(sample.target_tokens)
        end = VIEW_END_TOKEN.get(sample.prefix)
        if end is not None:
            target.append(end)
        buckets = sorted({_bucket(w, num_buckets) for w in sample.query_tokens})
        for i, t in enumerate(target):
            ctx = scorer._context(target[:i])
            bg_key = (sample.prefix, ctx, t)
            scorer.bg_counts[bg_key] = scorer.bg_counts.get(bg_key, 0) + 1
            for b in buckets:
                key = (sample.prefix, b, ctx, t)
                scorer.counts[key] = scorer.counts.get(key, 0) + 1
    return scorer


_VIEW_CODE = {v: i for i, v in enumerate(ALL_VIEWS)}


def save_scorer(scorer: NGramScorer, path: str | Path) -> None:
    """Versioned binary dump; keys sorted so bytes are reproducible."""
    path = Path(path)
    buf = bytearray()
    buf += SCORER_MAGIC
    buf += struct.pack("<I", SCORER_VERSION)
    vh = scorer.vocab_hash.encode("ascii")
    buf += struct.pack("<H", len(vh)) + vh
    buf += struct.pack(
        "<IddIB",
        scorer.order,
        scorer.smoothing,
        scorer.bg_weight,
        scorer.num_buckets,
        1 if scorer.trained else 0,
    )
    k = scorer.order - 1
    buf += struct.pack("<Q", len(scorer.counts))
    for (view, bucket, ctx, token), count in sorted(scorer.counts.items()):
        buf += struct.pack("<Bi", _VIEW_CODE[view], bucket)
        buf += struct.pack(f"<{k}i", *ctx) if k else b""
        buf += struct.pack("<iQ", token, count)
    buf += struct.pack("<Q", len(scorer.bg_counts))
    for (view, ctx, token), count in sorted(scorer.bg_counts.items()):
        buf += struct.pack("<B", _VIEW_CODE[view])
        buf += struct.pack(f"<{k}i", *ctx) if k else b""
        buf += struct.pack("<iQ", token, count)
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    path.write_bytes(bytes(buf))


def load_scorer(path: str | Path, vocab: Vocabulary) -> NGramScorer:
    """Load and refuse on checksum or vocabulary-hash mismatch."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"scorer file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != SCORER_MAGIC:
        raise ScorerFormatError(f"not a scorer file: {path}")
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ScorerFormatError(f"scorer file checksum mismatch: {path}")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != SCORER_VERSION:
        raise ScorerFormatError(f"unsupported scorer format version {version}")
    (vh_len,) = struct.unpack_from("<H", raw, off)
    off += 2
    vocab_hash = raw[off : off + vh_len].decode("ascii")
    off += vh_len
    if vocab_hash != vocab.content_hash():
        raise VocabularyMismatchError(
            "scorer was trained against a different vocabulary"
        )
    order, smoothing, bg_weight, num_buckets, trained = struct.unpack_from(
        "<IddIB", raw, off
    )
    off += struct.calcsize("<IddIB")
    k = order - 1
    views = list(ALL_VIEWS)
    (n_counts,) = struct.unpack_from("<Q", raw, off)
    off += 8
    counts: dict[tuple[str, int, tuple[int, ...], int], int] = {}
    for _ in range(n_counts):
        view_code, bucket = struct.unpack_from("<Bi", raw, off)
        off += 5
        ctx = struct.unpack_from(f"<{k}i", raw, off) if k else ()
        off += 4 * k
        token, count = struct.unpack_from("<iQ", raw, off)
        off += 12
        counts[(views[view_code], bucket, tuple(ctx), token)] = count
    (n_bg,) = struct.unpack_from("<Q", raw, off)
    off += 8
    bg_counts: dict[tuple[str, tuple[int, ...], int], int] = {}
    for _ in range(n_bg):
        (view_code,) = struct.unpack_from("<B", raw, off)
        off += 1
        ctx = struct.unpack_from(f"<{k}i", raw, off) if k else ()
        off += 4 * k
        token, count = struct.unpack_from("<iQ", raw, off)
        off += 12
        bg_counts[(views[view_code], tuple(ctx), token)] = count
    return NGramScorer(
        order=order,
        smoothing=smoothing,
        bg_weight=bg_weight,
        num_buckets=num_buckets,
        vocab_hash=vocab_hash,
        counts=counts,
        bg_counts=bg_counts,
        trained=bool(trained),
    )
