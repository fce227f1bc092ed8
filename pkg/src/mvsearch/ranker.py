"""Passage ranking: sum the scores of the identifiers each passage covers.

A passage's rank score is the sum, over every prediction found inside
the matching identifier region of that passage, of a transformed
language-model score.  Overlapping substring matches within one passage
are counted once: predictions claim disjoint spans greedily in score
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .decoder import Prediction
from .fm_index import FMIndex, REGION_BODY, REGION_QUERY, REGION_TITLE
from .scorer import ALL_VIEWS, VIEW_PSEUDO_QUERY, VIEW_SUBSTRING, VIEW_TITLE

VIEW_REGION = {
    VIEW_TITLE: REGION_TITLE,
    VIEW_SUBSTRING: REGION_BODY,
    VIEW_PSEUDO_QUERY: REGION_QUERY,
}

Span = tuple[int, int]


@dataclass(frozen=True)
class ScoreTransform:
    """How one identifier's log-score enters the passage sum.

    ``normalized`` (default) maps a length-L log-score lp to
    exp(gamma * lp / L), keeping every contribution in (0, 1] so that
    covering more identifiers never lowers a passage.  ``raw`` adds the
    log-scores as-is, kept for study; with it, coverage can hurt.
    ``view_weights`` rescales each view's contributions.
    """

    mode: str = "normalized"
    gamma: float = 1.0
    view_weights: Mapping[str, float] = field(
        default_factory=lambda: {v: 1.0 for v in ALL_VIEWS}
    )

    def __post_init__(self):
        if self.mode not in ("normalized", "raw"):
            raise ValueError(f"unknown score transform mode {self.mode!r}")

    def apply(self, log_score: float, length: int) -> float:
        if self.mode == "raw":
            return log_score
        return math.exp(self.gamma * log_score / max(length, 1))


@dataclass(frozen=True)
class CoveredSet:
    """The predictions one passage covers, with their claimed spans."""

    passage_id: str
    entries: tuple[tuple[Prediction, tuple[Span, ...]], ...]


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def passage_ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]

    def top(self, k: int) -> list[str]:
        return [pid for pid, _ in self.entries[:k]]


def _dedupe(predictions: Sequence[Prediction]) -> list[Prediction]:
    """Within a view, identical token sequences count once (max score)."""
    best: dict[tuple[int, ...], Prediction] = {}
    for p in predictions:
        held = best.get(p.tokens)
        if held is None or p.score > held.score:
            best[p.tokens] = p
    return sorted(best.values(), key=lambda p: (-p.score, p.tokens))


def _matches_by_doc(
    predictions: Mapping[str, Sequence[Prediction]],
    index: FMIndex,
) -> list[tuple[Prediction, dict[str, list[Span]]]]:
    """One locate per distinct prediction, grouped by document."""
    out: list[tuple[Prediction, dict[str, list[Span]]]] = []
    for view in ALL_VIEWS:
        if view not in predictions:
            continue
        region = VIEW_REGION[view]
        for pred in _dedupe(predictions[view]):
            if not pred.tokens:
                continue
            by_doc: dict[str, list[Span]] = {}
            for doc_id, offset in index.occurrences_in_region(pred.tokens, region):
                by_doc.setdefault(doc_id, []).append(
                    (offset, offset + len(pred.tokens))
                )
            out.append((pred, by_doc))
    return out


def gather_candidates(
    predictions: Mapping[str, Sequence[Prediction]],
    index: FMIndex,
) -> set[str]:
    """Passages containing at least one prediction in its view region."""
    candidates: set[str] = set()
    for _, by_doc in _matches_by_doc(predictions, index):
        candidates.update(by_doc)
    return candidates


def _overlaps(a: Span, b: Span) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def _resolve(
    matched: list[tuple[Prediction, list[Span]]],
) -> list[tuple[Prediction, tuple[Span, ...]]]:
    """Per-passage covering with substring-overlap resolution.

    Substring predictions claim one span each, greedily by score (ties
    broken toward longer matches, then lexicographic text); a prediction
    whose spans are all taken is dropped.  Other views keep all spans.
    """
    entries: list[tuple[Prediction, tuple[Span, ...]]] = []
    substrings: list[tuple[Prediction, list[Span]]] = []
    for pred, spans in matched:
        if pred.view == VIEW_SUBSTRING:
            substrings.append((pred, spans))
        else:
            entries.append((pred, tuple(spans)))
    substrings.sort(key=lambda ps: (-ps[0].score, -len(ps[0].tokens), ps[0].text))
    claimed: list[Span] = []
    for pred, spans in substrings:
        for span in sorted(spans):
            if not any(_overlaps(span, c) for c in claimed):
                claimed.append(span)
                entries.append((pred, (span,)))
                break
    order = {v: i for i, v in enumerate(ALL_VIEWS)}
    entries.sort(key=lambda e: (order[e[0].view], -e[0].score, e[0].tokens))
    return entries


def cover(
    passage_id: str,
    predictions: Mapping[str, Sequence[Prediction]],
    index: FMIndex,
) -> CoveredSet:
    """All predictions occurring in one passage, overlap-resolved."""
    matched = [
        (pred, by_doc[passage_id])
        for pred, by_doc in _matches_by_doc(predictions, index)
        if passage_id in by_doc
    ]
    return CoveredSet(passage_id=passage_id, entries=tuple(_resolve(matched)))


def score_passage(
    covered: CoveredSet, transform: ScoreTransform = ScoreTransform()
) -> float:
    """Additive coverage score: weighted transformed entry scores."""
    total = 0.0
    for pred, _ in covered.entries:
        weight = transform.view_weights.get(pred.view, 1.0)
        total += weight * transform.apply(pred.score, len(pred.tokens))
    return total


def rank(
    query: str,
    predictions: Mapping[str, Sequence[Prediction]],
    index: FMIndex,
    transform: ScoreTransform = ScoreTransform(),
) -> RankedList:
    """Gather, cover and score every candidate; deterministic order.

    ``query`` is carried for logging symmetry only; ranking depends on
    the predictions alone.
    """
    del query
    matches = _matches_by_doc(predictions, index)
    candidates: set[str] = set()
    for _, by_doc in matches:
        candidates.update(by_doc)
    scored: list[tuple[str, float]] = []
    for pid in candidates:
        matched = [(pred, by_doc[pid]) for pred, by_doc in matches if pid in by_doc]
        covered = CoveredSet(passage_id=pid, entries=tuple(_resolve(matched)))
        scored.append((pid, score_passage(covered, transform)))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return RankedList(entries=tuple(scored))
