"""Retrieval metrics and batch evaluation.

Relevance is strictly id-based: a retrieved passage counts only when its
id appears in the qrels entry for the query.  Metrics are computed per
query and averaged; queries without relevance judgments are skipped and
counted, never silently dropped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import MissingFileError, QrelsError
from .ranker import RankedList

logger = logging.getLogger(__name__)

DEFAULT_METRICS = (
    ("hits", 5),
    ("hits", 20),
    ("hits", 100),
    ("recall", 5),
    ("recall", 20),
    ("recall", 100),
    ("mrr", 10),
)

Metric = tuple[str, int]


def metric_name(metric: Metric) -> str:
    return f"{metric[0]}@{metric[1]}"


def parse_metrics(spec: str) -> tuple[Metric, ...]:
    """Parse a comma-separated list like ``hits@5,recall@20,mrr@10``."""
    out: list[Metric] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, k_text = part.partition("@")
        if not sep or name not in ("hits", "recall", "mrr") or not k_text.isdigit():
            raise QrelsError(f"unknown metric {part!r}")
        k = int(k_text)
        if k < 1:
            raise QrelsError(f"metric cutoff must be >= 1: {part!r}")
        out.append((name, k))
    if not out:
        raise QrelsError("empty metric list")
    return tuple(out)


def hits_at_k(ranked: RankedList | Sequence[str], relevant: set[str], k: int) -> float:
    """1.0 iff any of the top-k passage ids is relevant."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = ranked.passage_ids() if isinstance(ranked, RankedList) else list(ranked)
    return 1.0 if any(pid in relevant for pid in ids[:k]) else 0.0


def recall_at_k(ranked: RankedList | Sequence[str], relevant: set[str], k: int) -> float:
    """Fraction of the relevant set found in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise QrelsError("recall undefined for an empty relevant set")
    ids = ranked.passage_ids() if isinstance(ranked, RankedList) else list(ranked)
    return len(set(ids[:k]) & relevant) / len(relevant)


def mrr_at_k(ranked: RankedList | Sequence[str], relevant: set[str], k: int) -> float:
    """Reciprocal rank of the first relevant passage within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = ranked.passage_ids() if isinstance(ranked, RankedList) else list(ranked)
    for i, pid in enumerate(ids[:k]):
        if pid in relevant:
            return 1.0 / (i + 1)
    return 0.0


_METRIC_FNS: dict[str, Callable[[Sequence[str], set[str], int], float]] = {
    "hits": hits_at_k,
    "recall": recall_at_k,
    "mrr": mrr_at_k,
}


def compute_metrics(
    ranked: RankedList | Sequence[str],
    relevant: set[str],
    metrics: Sequence[Metric] = DEFAULT_METRICS,
) -> dict[str, float]:
    return {
        metric_name(m): _METRIC_FNS[m[0]](ranked, relevant, m[1]) for m in metrics
    }


@dataclass(frozen=True)
class EvalReport:
    """Per-query metric values, their means, and bookkeeping counts."""

    per_query: dict[str, dict[str, float]]
    means: dict[str, float]
    evaluated: int
    skipped: int
    skipped_ids: tuple[str, ...] = ()
    extra: dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "means": self.means,
            "evaluated": self.evaluated,
            "skipped": self.skipped,
            "skipped_ids": list(self.skipped_ids),
            "per_query": self.per_query,
        }
        payload.update(self.extra)
        return json.dumps(payload, indent=2, sort_keys=True)

    def format_table(self) -> str:
        names = list(self.means)
        width = max([len(n) for n in names] + [6])
        lines = [f"{'metric':<{width}}  mean"]
        lines.append("-" * (width + 8))
        for n in names:
            lines.append(f"{n:<{width}}  {self.means[n]:.4f}")
        lines.append("-" * (width + 8))
        lines.append(f"queries evaluated: {self.evaluated}, skipped: {self.skipped}")
        return "\n".join(lines)


def evaluate_run(
    run: Mapping[str, Sequence[str]],
    qrels: Mapping[str, set[str]],
    metrics: Sequence[Metric] = DEFAULT_METRICS,
) -> EvalReport:
    """Score a stored run (query id -> ranked passage ids) against qrels.

    Queries without a qrels entry are skipped with a warning and counted
    in the report.  With no evaluable queries all means are 0.0.
    """
    per_query: dict[str, dict[str, float]] = {}
    skipped: list[str] = []
    for qid in run:
        relevant = qrels.get(qid)
        if not relevant:
            skipped.append(qid)
            continue
        per_query[qid] = compute_metrics(run[qid], relevant, metrics)
    if skipped:
        logger.warning(
            "%d run queries have no relevance judgments and were skipped",
            len(skipped),
        )
    names = [metric_name(m) for m in metrics]
    if per_query:
        means = {
            n: sum(q[n] for q in per_query.values()) / len(per_query) for n in names
        }
    else:
        logger.warning("no queries could be evaluated; all means are 0.0")
        means = {n: 0.0 for n in names}
    return EvalReport(
        per_query=per_query,
        means=means,
        evaluated=len(per_query),
        skipped=len(skipped),
        skipped_ids=tuple(sorted(skipped)),
    )


def run_eval(
    queries: Sequence[tuple[str, str]],
    qrels: Mapping[str, set[str]],
    retrieve: Callable[[str], RankedList],
    metrics: Sequence[Metric] = DEFAULT_METRICS,
) -> EvalReport:
    """Retrieve with the supplied engine and evaluate in one pass.

    ``queries`` is (query id, query text) pairs; queries missing from the
    qrels are skipped before retrieval runs for them.
    """
    run: dict[str, list[str]] = {}
    skipped: list[str] = []
    for qid, text in queries:
        if not qrels.get(qid):
            skipped.append(qid)
            continue
        run[qid] = retrieve(text).passage_ids()
    report = evaluate_run(run, qrels, metrics)
    all_skipped = tuple(sorted(set(report.skipped_ids) | set(skipped)))
    return EvalReport(
        per_query=report.per_query,
        means=report.means,
        evaluated=report.evaluated,
        skipped=len(all_skipped),
        skipped_ids=all_skipped,
        extra=report.extra,
    )


def load_qrels(path: str | Path) -> dict[str, set[str]]:
    """Read tab-separated relevance pairs: ``query_id<TAB>passage_id``."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"qrels file not found: {path}")
    qrels: dict[str, set[str]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise QrelsError(f"{path}:{lineno}: expected query_id<TAB>passage_id")
            qrels.setdefault(parts[0], set()).add(parts[1])
    return qrels


def load_queries(path: str | Path) -> list[tuple[str, str]]:
    """Read tab-separated queries: ``query_id<TAB>query text``."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"queries file not found: {path}")
    out: list[tuple[str, str]] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2 or not parts[0]:
                raise QrelsError(f"{path}:{lineno}: expected query_id<TAB>text")
            if parts[0] in seen:
                raise QrelsError(f"{path}:{lineno}: duplicate query id {parts[0]!r}")
            seen.add(parts[0])
            out.append((parts[0], parts[1]))
    return out


def load_run(path: str | Path) -> dict[str, list[str]]:
    """Read a run file: ``query_id<TAB>passage_id<TAB>rank<TAB>score``.

    Rows must arrive rank-ordered per query; ranks restart at 1.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"run file not found: {path}")
    run: dict[str, list[str]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise QrelsError(
                    f"{path}:{lineno}: expected query_id<TAB>passage_id<TAB>rank<TAB>score"
                )
            qid, pid, rank_text, score_text = parts
            rows = run.setdefault(qid, [])
            try:
                rank_val = int(rank_text)
                float(score_text)
            except ValueError:
                raise QrelsError(f"{path}:{lineno}: malformed rank or score") from None
            if rank_val != len(rows) + 1:
                raise QrelsError(
                    f"{path}:{lineno}: rank {rank_val} out of order for query {qid!r}"
                )
            rows.append(pid)
    return run
