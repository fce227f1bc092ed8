"""Constrained beam search over the index, one run per identifier view.

Every emitted string is guaranteed to occur in the corpus inside the
delimiter region matching its view: title and pseudo-query beams are
anchored at their opening delimiter and finish on the closing one;
substring beams may start at any body token and are capped by length,
with a final in-region check before emission.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fm_index import REGION_BODY, FMIndex, MatchRange
from .scorer import (
    ALL_VIEWS,
    VIEW_END_TOKEN,
    VIEW_PSEUDO_QUERY,
    VIEW_SUBSTRING,
    VIEW_TITLE,
    ScorerContract,
)
from .tokenization import QS, TS, WordTokenizer, is_special

DEFAULT_MAX_LEN = {VIEW_TITLE: 24, VIEW_SUBSTRING: 12, VIEW_PSEUDO_QUERY: 24}

_VIEW_ANCHOR = {VIEW_TITLE: TS, VIEW_PSEUDO_QUERY: QS}


@dataclass(frozen=True)
class Prediction:
    """One generated identifier with its language-model score."""

    view: str
    tokens: tuple[int, ...]
    text: str
    score: float


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 15
    max_len: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_MAX_LEN))
    query_length_bias: float = 0.0
    predictions_per_view: int | None = None
    # per step, per beam: only this many top-scoring candidates expand
    candidate_cap_factor: int = 2

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if any(v < 1 for v in self.max_len.values()):
            raise ValueError("max_len must be >= 1 for every view")

    @property
    def keep(self) -> int:
        return self.predictions_per_view or self.beam_size

    @property
    def candidate_cap(self) -> int:
        return self.candidate_cap_factor * self.beam_size


@dataclass(frozen=True)
class _Beam:
    tokens: tuple[int, ...]
    range: MatchRange
    score: float


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    m = float(scores.max())
    return scores - (m + math.log(float(np.exp(scores - m).sum())))


def generate_view(
    query: str,
    view: str,
    index: FMIndex,
    scorer: ScorerContract,
    config: BeamConfig,
) -> list[Prediction]:
    """Beam-search one view; predictions sorted by score descending.

    May return fewer than requested (even none) when beams dead-end;
    never an identifier absent from its view region.
    """
    if view not in ALL_VIEWS:
        raise ValueError(f"unknown view {view!r}")
    query_tokens = WordTokenizer().tokenize(query)
    max_len = config.max_len.get(view, DEFAULT_MAX_LEN[view])
    end_token = VIEW_END_TOKEN.get(view)

    if view == VIEW_SUBSTRING:
        beams = [_Beam((), index.full_range(), 0.0)]
    else:
        anchor = index.search([_VIEW_ANCHOR[view]])
        beams = [_Beam((), anchor, 0.0)]

    finished: dict[tuple[int, ...], float] = {}

    def finish(tokens: tuple[int, ...], score: float) -> None:
        if tokens and (tokens not in finished or score > finished[tokens]):
            finished[tokens] = score

    step = 0
    while beams and step <= max_len:
        expansions: list[_Beam] = []
        for beam in beams:
            candidates = _step_candidates(index, beam, view, end_token, max_len)
            if not candidates:
                if view == VIEW_SUBSTRING:
                    finish(beam.tokens, beam.score)
                continue
            logps = _log_softmax(
                np.asarray(
                    scorer.next_distribution(view, query_tokens, beam.tokens, candidates),
                    dtype=np.float64,
                )
            )
            ranked = sorted(
                zip(candidates, logps), key=lambda tc: (-tc[1], tc[0])
            )[: config.candidate_cap]
            for token, logp in ranked:
                score = beam.score + float(logp)
                if token == end_token:
                    finish(beam.tokens, score)
                    continue
                tokens = beam.tokens + (token,)
                r = index.extend_backward(beam.range, token)
                if view == VIEW_SUBSTRING and len(tokens) >= max_len:
                    finish(tokens, score)
                else:
                    expansions.append(_Beam(tokens, r, score))
        expansions.sort(key=lambda b: (-b.score, b.tokens))
        beams = expansions[: config.beam_size]
        step += 1

    return _emit(index, view, finished, config.keep)


def _step_candidates(
    index: FMIndex,
    beam: _Beam,
    view: str,
    end_token: int | None,
    max_len: int,
) -> list[int]:
    """Valid next tokens: index successors filtered by view rules."""
    if view == VIEW_SUBSTRING and not beam.tokens:
        return np.flatnonzero(index.body_counts).tolist()
    allow_content = len(beam.tokens) < max_len
    out: list[int] = []
    for token, _ in index.range_successors(beam.range):
        if token == end_token and beam.tokens:
            out.append(token)
        elif not is_special(token) and allow_content:
            out.append(token)
    return out


def _emit(
    index: FMIndex,
    view: str,
    finished: dict[tuple[int, ...], float],
    keep: int,
) -> list[Prediction]:
    vocab = index.vocab
    by_text: dict[str, tuple[float, tuple[int, ...]]] = {}
    for tokens, score in finished.items():
        if view == VIEW_SUBSTRING and not index.occurrences_in_region(
            tokens, REGION_BODY
        ):
            continue
        text = " ".join(vocab.decode(list(tokens)))
        prev = by_text.get(text)
        if prev is None or score > prev[0] or (score == prev[0] and tokens < prev[1]):
            by_text[text] = (score, tokens)
    predictions = [
        Prediction(view=view, tokens=tokens, text=text, score=score)
        for text, (score, tokens) in by_text.items()
    ]
    predictions.sort(key=lambda p: (-p.score, p.tokens))
    return predictions[:keep]


def apply_length_bias(
    predictions: Sequence[Prediction], bias_per_token: float
) -> list[Prediction]:
    """score' = score + bias × token length, reordered; pseudo-query only."""
    for p in predictions:
        if p.view != VIEW_PSEUDO_QUERY:
            raise ValueError("length bias applies only to pseudo-query predictions")
    out = [replace(p, score=p.score + bias_per_token * len(p.tokens)) for p in predictions]
    out.sort(key=lambda p: (-p.score, p.tokens))
    return out


def generate_all(
    query: str,
    index: FMIndex,
    scorer: ScorerContract,
    config: BeamConfig,
    views: Iterable[str] = ALL_VIEWS,
) -> dict[str, list[Prediction]]:
    """Per-view generation; disabled views are absent from the result."""
    requested = set(views)
    if not requested:
        raise ValueError("views must be non-empty")
    unknown = requested - set(ALL_VIEWS)
    if unknown:
        raise ValueError(f"unknown views: {sorted(unknown)}")
    out: dict[str, list[Prediction]] = {}
    for view in ALL_VIEWS:
        if view not in requested:
            continue
        predictions = generate_view(query, view, index, scorer, config)
        if view == VIEW_PSEUDO_QUERY:
            predictions = apply_length_bias(predictions, config.query_length_bias)
        out[view] = predictions
    return out
