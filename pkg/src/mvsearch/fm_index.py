"""Succinct full-text index over the concatenated passage streams.

Supports exact pattern counting, single-token extension, successor
enumeration and mapping of matches back to (document, offset).

Layout note: the index text is the concatenation of each stream
*reversed* (sentinel first, then body tokens back to front).  Searching
a forward pattern then proceeds left to right, one classic backward
search step per appended token, which is exactly the access pattern of
the autoregressive decoder.  Successor tokens of a pattern are the BWT
characters of its interval.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import FlatStream, RegionSpans, region_spans
from .errors import IndexBuildError, IndexFormatError, MissingFileError
from .tokenization import EOD, FIRST_WORD_ID, Vocabulary

MAGIC = b"MNDR"
FORMAT_VERSION = 1
DEFAULT_BLOCK_SIZE = 128
DEFAULT_SAMPLE_RATE = 32

REGION_TITLE = "title"
REGION_BODY = "body"
REGION_QUERY = "query"


@dataclass(frozen=True)
class MatchRange:
    """Half-open interval of suffix-array rows for one pattern."""

    lo: int
    hi: int
    pattern_len: int

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def is_empty(self) -> bool:
        return self.hi <= self.lo


def _suffix_array(keys: np.ndarray) -> np.ndarray:
    """Prefix-doubling suffix sort over an integer key sequence.

    Keys must already be distinct where order matters (see build: the
    shared sentinel is re-keyed per occurrence so every suffix is
    unique).  O(n log^2 n), all in numpy.
    """
    n = len(keys)
    rank = keys.astype(np.int64)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    k = 1
    while True:
        key2 = np.full(n, -1, dtype=np.int64)
        key2[: n - k] = rank[k:]
        order = np.lexsort((key2, rank))
        r1 = rank[order]
        r2 = key2[order]
        fresh = np.empty(n, dtype=np.int64)
        fresh[0] = 0
        np.cumsum((r1[1:] != r1[:-1]) | (r2[1:] != r2[:-1]), out=fresh[1:])
        rank[order] = fresh
        if fresh[-1] == n - 1:
            return order.astype(np.int64)
        k *= 2


class FMIndex:
    """Immutable BWT index over a corpus of sentinel-terminated streams.

    All query methods are read-only and safe to call concurrently.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        bwt: np.ndarray,
        checkpoints: np.ndarray,
        block_size: int,
        sample_rate: int,
        sampled_rows: np.ndarray,
        sampled_sas: np.ndarray,
        doc_ids: tuple[str, ...],
        doc_lengths: np.ndarray,
        doc_spans: tuple[RegionSpans, ...],
        body_counts: np.ndarray,
    ):
        self.vocab = vocab
        self.bwt = bwt
        self.checkpoints = checkpoints
        self.block_size = block_size
        self.sample_rate = sample_rate
        self.sampled_rows = sampled_rows
        self.sampled_sas = sampled_sas
        self.doc_ids = doc_ids
        self.doc_lengths = doc_lengths
        self.doc_spans = doc_spans
        self.body_counts = body_counts
        self.size = len(bwt)
        self.num_docs = len(doc_ids)
        # block_starts[j] = offset of doc j's reversed stream in the index text
        self.block_starts = np.concatenate(
            ([0], np.cumsum(doc_lengths[:-1]))
        ).astype(np.int64)
        counts = np.bincount(bwt, minlength=len(vocab)).astype(np.int64)
        self.c_table = np.concatenate(([0], np.cumsum(counts)))
        self.token_counts = counts
        self._doc_index = {d: i for i, d in enumerate(doc_ids)}

    # -- construction -------------------------------------------------

    @classmethod
    def build(
        cls,
        streams: Sequence[FlatStream],
        vocab: Vocabulary,
        block_size: int = DEFAULT_BLOCK_SIZE,
        sample_rate: int = DEFAULT_SAMPLE_RATE,
    ) -> "FMIndex":
        if not streams:
            raise IndexBuildError("cannot build an index over zero streams")
        if block_size < 1 or sample_rate < 1:
            raise IndexBuildError("block_size and sample_rate must be >= 1")
        vocab_size = len(vocab)
        doc_ids: list[str] = []
        doc_spans: list[RegionSpans] = []
        pieces: list[np.ndarray] = []
        lengths: list[int] = []
        seen: set[str] = set()
        body_counts = np.zeros(vocab_size, dtype=np.int64)
        for stream in streams:
            if stream.doc_id in seen:
                raise IndexBuildError(f"duplicate doc id {stream.doc_id!r} in streams")
            seen.add(stream.doc_id)
            toks = np.asarray(stream.tokens, dtype=np.int64)
            if toks.size == 0 or toks[-1] != EOD:
                raise IndexBuildError(
                    f"stream {stream.doc_id!r} is not sentinel-terminated"
                )
            if np.count_nonzero(toks == EOD) != 1:
                raise IndexBuildError(
                    f"stream {stream.doc_id!r} contains an interior sentinel"
                )
            if toks.min() < 0 or toks.max() >= vocab_size:
                raise IndexBuildError(
                    f"stream {stream.doc_id!r} holds a token id outside the vocabulary"
                )
            try:
                spans = region_spans(stream.tokens)
            except ValueError as exc:
                raise IndexBuildError(f"stream {stream.doc_id!r}: {exc}") from exc
            lo, hi = spans.body
            body_counts += np.bincount(toks[lo:hi], minlength=vocab_size)
            doc_ids.append(stream.doc_id)
            doc_spans.append(spans)
            lengths.append(len(toks))
            pieces.append(toks[::-1])

        text = np.concatenate(pieces)
        n = len(text)
        num_docs = len(doc_ids)

        # Re-key each sentinel occurrence by position so all suffixes are
        # distinct; content tokens keep their relative order above them.
        keys = text + (num_docs - 1)
        eod_positions = np.flatnonzero(text == EOD)
        keys[eod_positions] = np.arange(num_docs, dtype=np.int64)

        sa = _suffix_array(keys)
        bwt = text[(sa - 1) % n].astype(np.int32)

        num_blocks = n // block_size + 1
        checkpoints = np.zeros((num_blocks, vocab_size), dtype=np.int32)
        for b in range(1, num_blocks):
            seg = bwt[(b - 1) * block_size : b * block_size]
            checkpoints[b] = checkpoints[b - 1] + np.bincount(
                seg, minlength=vocab_size
            ).astype(np.int32)

        # Stride samples, plus every row whose BWT char is the sentinel:
        # the locate walk stops there instead of taking an LF step through
        # a shared-sentinel row, which is not order-consistent.
        mask = np.zeros(n, dtype=bool)
        mask[::sample_rate] = True
        mask[bwt == EOD] = True
        sampled_rows = np.flatnonzero(mask).astype(np.int64)
        sampled_sas = sa[sampled_rows].astype(np.int64)

        return cls(
            vocab=vocab,
            bwt=bwt,
            checkpoints=checkpoints,
            block_size=block_size,
            sample_rate=sample_rate,
            sampled_rows=sampled_rows,
            sampled_sas=sampled_sas,
            doc_ids=tuple(doc_ids),
            doc_lengths=np.asarray(lengths, dtype=np.int64),
            doc_spans=tuple(doc_spans),
            body_counts=body_counts,
        )

    # -- rank / LF plumbing -------------------------------------------

    def _rank(self, token: int, i: int) -> int:
        """Occurrences of ``token`` in bwt[0:i]."""
        b = i // self.block_size
        base = int(self.checkpoints[b, token])
        return base + int(
            np.count_nonzero(self.bwt[b * self.block_size : i] == token)
        )

    def full_range(self) -> MatchRange:
        return MatchRange(0, self.size, 0)

    def _sentinel_final(self, r: MatchRange) -> bool:
        # Suffixes beginning with the sentinel occupy rows [0, num_docs);
        # only sentinel-final patterns can land there.
        return r.pattern_len >= 1 and r.hi <= self.num_docs

    def extend_backward(self, r: MatchRange, token: int) -> MatchRange:
        """Interval of pattern+[token] given the interval of pattern."""
        if r.is_empty:
            return MatchRange(r.lo, r.lo, r.pattern_len + 1)
        if token < 0 or token >= len(self.vocab) or self._sentinel_final(r):
            return MatchRange(r.lo, r.lo, r.pattern_len + 1)
        lo = int(self.c_table[token]) + self._rank(token, r.lo)
        hi = int(self.c_table[token]) + self._rank(token, r.hi)
        return MatchRange(lo, hi, r.pattern_len + 1)

    def search(self, pattern: Sequence[int]) -> MatchRange:
        r = self.full_range()
        for token in pattern:
            r = self.extend_backward(r, int(token))
            if r.is_empty:
                return MatchRange(r.lo, r.lo, len(pattern))
        return r

    def count(self, pattern: Sequence[int]) -> int:
        """Exact occurrence count of ``pattern`` across all streams."""
        return self.search(pattern).size

    def successors(self, pattern: Sequence[int]) -> list[tuple[int, int]]:
        """Distinct tokens that can follow ``pattern``, with counts.

        The sentinel appears as a successor when the pattern ends just
        before a stream end; a sentinel-final pattern has no successors.
        Empty pattern: every token that starts a suffix, i.e. the whole
        token census.
        """
        return self.range_successors(self.search(pattern))

    def range_successors(self, r: MatchRange) -> list[tuple[int, int]]:
        """Successors for a pattern given its interval, without re-search.

        Same contract as ``successors``; this is the decoder's per-step
        call, one BWT slice per beam.
        """
        if r.is_empty or self._sentinel_final(r):
            return []
        if r.pattern_len == 0:
            toks = np.flatnonzero(self.token_counts)
            return [(int(t), int(self.token_counts[t])) for t in toks]
        toks, counts = np.unique(self.bwt[r.lo : r.hi], return_counts=True)
        return [(int(t), int(c)) for t, c in zip(toks, counts)]

    # -- locate -------------------------------------------------------

    def _resolve_sa(self, row: int) -> int:
        """Suffix position of a row, walking LF to the nearest sample."""
        steps = 0
        while True:
            idx = int(np.searchsorted(self.sampled_rows, row))
            if idx < len(self.sampled_rows) and self.sampled_rows[idx] == row:
                return int(self.sampled_sas[idx]) + steps
            token = int(self.bwt[row])
            row = int(self.c_table[token]) + self._rank(token, row)
            steps += 1

    def _pos_to_doc(self, s: int) -> tuple[int, int]:
        """Map an index-text position to (doc index, reversed offset)."""
        j = int(np.searchsorted(self.block_starts, s, side="right")) - 1
        return j, s - int(self.block_starts[j])

    def locate(
        self,
        pattern: Sequence[int],
        limit: int | None = None,
    ) -> list[tuple[str, int]]:
        """Up to ``limit`` occurrences as (doc_id, forward token offset).

        With limit >= count(pattern) the multiset of doc ids equals a
        naive scan's.  Results are ordered by suffix-array row, which is
        stable across runs.
        """
        pattern = [int(t) for t in pattern]
        if not pattern:
            return []
        m = len(pattern)
        if EOD in pattern[:-1]:
            return []
        if pattern[-1] == EOD:
            return self._locate_sentinel_final(pattern, limit)
        r = self.search(pattern)
        out: list[tuple[str, int]] = []
        stop = r.hi if limit is None else min(r.hi, r.lo + limit)
        for row in range(r.lo, stop):
            s = self._resolve_sa(row)
            j, rev_off = self._pos_to_doc(s)
            offset = int(self.doc_lengths[j]) - rev_off - m
            out.append((self.doc_ids[j], offset))
        return out

    def _locate_sentinel_final(
        self, pattern: list[int], limit: int | None
    ) -> list[tuple[str, int]]:
        m = len(pattern)
        if m == 1:
            hits = [
                (self.doc_ids[j], int(self.doc_lengths[j]) - 1)
                for j in range(self.num_docs)
            ]
            return hits if limit is None else hits[:limit]
        # Match = content part occurring at a stream end.  Those are the
        # rows of the content interval whose BWT char is the sentinel;
        # each such row is force-sampled, so no walking is needed.
        r = self.search(pattern[:-1])
        out: list[tuple[str, int]] = []
        for row in range(r.lo, r.hi):
            if int(self.bwt[row]) != EOD:
                continue
            s = self._resolve_sa(row)
            j, _ = self._pos_to_doc(s)
            out.append((self.doc_ids[j], int(self.doc_lengths[j]) - m))
            if limit is not None and len(out) >= limit:
                break
        return out

    # -- region-aware helpers -----------------------------------------

    def doc_region_spans(self, doc_id: str) -> RegionSpans:
        return self.doc_spans[self._doc_index[doc_id]]

    def _spans_for(self, doc_idx: int, region: str) -> tuple[tuple[int, int], ...]:
        spans = self.doc_spans[doc_idx]
        if region == REGION_TITLE:
            return (spans.title,)
        if region == REGION_BODY:
            return (spans.body,)
        if region == REGION_QUERY:
            return spans.queries
        raise ValueError(f"unknown region {region!r}")

    def occurrences_in_region(
        self, pattern: Sequence[int], region: str
    ) -> list[tuple[str, int]]:
        """Occurrences falling entirely inside the given region kind."""
        m = len(pattern)
        out: list[tuple[str, int]] = []
        for doc_id, offset in self.locate(pattern):
            j = self._doc_index[doc_id]
            for lo, hi in self._spans_for(j, region):
                if lo <= offset and offset + m <= hi:
                    out.append((doc_id, offset))
                    break
        return out

    def docs_in_region(self, pattern: Sequence[int], region: str) -> set[str]:
        return {doc_id for doc_id, _ in self.occurrences_in_region(pattern, region)}

    # -- serialization ------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        buf = bytearray()
        buf += MAGIC
        buf += struct.pack("<I", FORMAT_VERSION)
        words = [
            self.vocab.id_to_token[i]
            for i in range(FIRST_WORD_ID, len(self.vocab))
        ]
        buf += struct.pack("<I", len(words))
        for w in words:
            enc = w.encode("utf-8")
            buf += struct.pack("<H", len(enc)) + enc
        buf += struct.pack("<II", self.block_size, self.sample_rate)
        buf += struct.pack("<Q", self.size)
        buf += self.bwt.astype("<i4").tobytes()
        buf += struct.pack("<II", *self.checkpoints.shape)
        buf += self.checkpoints.astype("<i4").tobytes()
        buf += struct.pack("<Q", len(self.sampled_rows))
        buf += self.sampled_rows.astype("<u4").tobytes()
        buf += self.sampled_sas.astype("<u4").tobytes()
        buf += struct.pack("<I", self.num_docs)
        for j, doc_id in enumerate(self.doc_ids):
            enc = doc_id.encode("utf-8")
            spans = self.doc_spans[j]
            buf += struct.pack("<H", len(enc)) + enc
            buf += struct.pack("<I", int(self.doc_lengths[j]))
            buf += struct.pack("<II", *spans.title)
            buf += struct.pack("<II", *spans.body)
            buf += struct.pack("<I", len(spans.queries))
            for lo, hi in spans.queries:
                buf += struct.pack("<II", lo, hi)
        nz = np.flatnonzero(self.body_counts)
        buf += struct.pack("<I", len(nz))
        for t in nz:
            buf += struct.pack("<IQ", int(t), int(self.body_counts[t]))
        buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
        path.write_bytes(bytes(buf))

    @classmethod
    def load(cls, path: str | Path) -> "FMIndex":
        path = Path(path)
        if not path.exists():
            raise MissingFileError(f"index file not found: {path}")
        raw = path.read_bytes()
        if len(raw) < 12 or raw[:4] != MAGIC:
            raise IndexFormatError(f"not an index file: {path}")
        stored_crc = struct.unpack_from("<I", raw, len(raw) - 4)[0]
        if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
            raise IndexFormatError(f"index file checksum mismatch: {path}")
        off = 4
        (version,) = struct.unpack_from("<I", raw, off)
        off += 4
        if version != FORMAT_VERSION:
            raise IndexFormatError(f"unsupported index format version {version}")
        (word_count,) = struct.unpack_from("<I", raw, off)
        off += 4
        words: list[str] = []
        for _ in range(word_count):
            (wlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            words.append(raw[off : off + wlen].decode("utf-8"))
            off += wlen
        vocab = Vocabulary.from_words(words)
        block_size, sample_rate = struct.unpack_from("<II", raw, off)
        off += 8
        (n,) = struct.unpack_from("<Q", raw, off)
        off += 8
        bwt = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int32)
        off += 4 * n
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        checkpoints = (
            np.frombuffer(raw, dtype="<i4", count=rows * cols, offset=off)
            .reshape(rows, cols)
            .astype(np.int32)
        )
        off += 4 * rows * cols
        if cols != len(vocab):
            raise IndexFormatError("checkpoint table width disagrees with vocabulary")
        (n_samples,) = struct.unpack_from("<Q", raw, off)
        off += 8
        sampled_rows = np.frombuffer(
            raw, dtype="<u4", count=n_samples, offset=off
        ).astype(np.int64)
        off += 4 * n_samples
        sampled_sas = np.frombuffer(
            raw, dtype="<u4", count=n_samples, offset=off
        ).astype(np.int64)
        off += 4 * n_samples
        (num_docs,) = struct.unpack_from("<I", raw, off)
        off += 4
        doc_ids: list[str] = []
        lengths: list[int] = []
        spans_list: list[RegionSpans] = []
        for _ in range(num_docs):
            (dlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            doc_ids.append(raw[off : off + dlen].decode("utf-8"))
            off += dlen
            (length,) = struct.unpack_from("<I", raw, off)
            off += 4
            lengths.append(length)
            t_lo, t_hi, b_lo, b_hi = struct.unpack_from("<IIII", raw, off)
            off += 16
            (qn,) = struct.unpack_from("<I", raw, off)
            off += 4
            queries = []
            for _ in range(qn):
                q_lo, q_hi = struct.unpack_from("<II", raw, off)
                off += 8
                queries.append((q_lo, q_hi))
            spans_list.append(
                RegionSpans(
                    title=(t_lo, t_hi), body=(b_lo, b_hi), queries=tuple(queries)
                )
            )
        (nz_count,) = struct.unpack_from("<I", raw, off)
        off += 4
        body_counts = np.zeros(len(vocab), dtype=np.int64)
        for _ in range(nz_count):
            t, c = struct.unpack_from("<IQ", raw, off)
            off += 12
            body_counts[t] = c
        return cls(
            vocab=vocab,
            bwt=bwt,
            checkpoints=checkpoints,
            block_size=block_size,
            sample_rate=sample_rate,
            sampled_rows=sampled_rows,
            sampled_sas=sampled_sas,
            doc_ids=tuple(doc_ids),
            doc_lengths=np.asarray(lengths, dtype=np.int64),
            doc_spans=tuple(spans_list),
            body_counts=body_counts,
        )
