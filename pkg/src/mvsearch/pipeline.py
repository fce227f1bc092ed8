"""End-to-end wiring: one engine shared by the CLI and the HTTP service.

Commands are plain functions over a resolved RunConfig so both frontends
behave identically.  Every randomized step is seeded from the config and
worker fan-out merges per-query results in input order, which keeps run
files byte-identical for identical inputs.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import (
    Corpus,
    attach_pseudo_queries,
    build_vocabulary,
    flatten_corpus,
    load_corpus,
    template_pseudo_queries,
)
from .decoder import BeamConfig, Prediction, generate_all
from .errors import ConfigError, OutputExistsError, QrelsError, VocabularyMismatchError
from .evaluation import (
    DEFAULT_METRICS,
    EvalReport,
    evaluate_run,
    load_qrels,
    load_queries,
    load_run,
    metric_name,
    parse_metrics,
)
from .fm_index import FMIndex
from .ranker import RankedList, ScoreTransform, rank
from .tokenization import FIRST_WORD_ID
from .scorer import (
    ALL_VIEWS,
    DEFAULT_BG_WEIGHT,
    DEFAULT_NUM_BUCKETS,
    DEFAULT_ORDER,
    DEFAULT_SMOOTHING,
    NGramScorer,
    build_training_samples,
    build_unsupervised_samples,
    load_scorer,
    save_scorer,
    train_ngram_scorer,
)

logger = logging.getLogger(__name__)

DEFAULT_METRIC_SPEC = "hits@5,hits@20,hits@100,recall@5,recall@20,recall@100,mrr@10"


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs, resolved from flags, file and defaults."""

    corpus: str | None = None
    index: str | None = None
    scorer: str | None = None
    queries: str | None = None
    qrels: str | None = None
    pairs: str | None = None
    run: str | None = None
    output: str | None = None
    format: str = "jsonl"
    beam_size: int = 15
    views: tuple[str, ...] = ALL_VIEWS
    ratio: tuple[int, int, int] = (3, 10, 5)
    query_length_bias: float = 0.0
    seed: int = 0
    workers: int = 1
    order: int = DEFAULT_ORDER
    smoothing: float = DEFAULT_SMOOTHING
    bg_weight: float = DEFAULT_BG_WEIGHT
    num_buckets: int = DEFAULT_NUM_BUCKETS
    unsupervised: int = 0
    queries_per_passage: int = 5
    top_k: int = 100
    transform: str = "normalized"
    gamma: float = 1.0
    metrics: str = DEFAULT_METRIC_SPEC
    beam_sizes: tuple[int, ...] = (5, 10, 15, 20)
    force: bool = False


def parse_views(text: str | Sequence[str]) -> tuple[str, ...]:
    if not isinstance(text, str):
        parts = list(text)
    else:
        parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("views must name at least one view")
    for v in parts:
        if v not in ALL_VIEWS:
            raise ConfigError(f"unknown view {v!r}; choose from {', '.join(ALL_VIEWS)}")
    if len(set(parts)) != len(parts):
        raise ConfigError("duplicate view names")
    return tuple(parts)


def parse_ratio(text: str | Sequence[int]) -> tuple[int, int, int]:
    if not isinstance(text, str):
        parts = list(text)
    else:
        try:
            parts = [int(p) for p in text.split(":")]
        except ValueError:
            raise ConfigError(f"ratio must look like 3:10:5, got {text!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) == 0:
        raise ConfigError(f"ratio needs three non-negative integers, not all zero: {text!r}")
    return (parts[0], parts[1], parts[2])


def parse_beam_sizes(text: str | Sequence[int]) -> tuple[int, ...]:
    if not isinstance(text, str):
        parts = list(text)
    else:
        try:
            parts = [int(p) for p in text.split(",") if p.strip()]
        except ValueError:
            raise ConfigError(f"beam sizes must be integers: {text!r}") from None
    if not parts or any(b < 1 for b in parts):
        raise ConfigError(f"beam sizes must be positive: {text!r}")
    return tuple(parts)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_STR_FIELDS = {
    "corpus", "index", "scorer", "queries", "qrels", "pairs", "run",
    "output", "metrics",
}
_INT_FIELDS = {
    "beam_size", "seed", "workers", "order", "num_buckets", "unsupervised",
    "queries_per_passage", "top_k",
}
_FLOAT_FIELDS = {"query_length_bias", "smoothing", "bg_weight", "gamma"}


def _convert(key: str, value):
    """Coerce a raw (possibly string) value to the config field's type."""
    if key in _STR_FIELDS:
        return str(value)
    if key in _INT_FIELDS:
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    if key in _FLOAT_FIELDS:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    if key == "views":
        return parse_views(value)
    if key == "ratio":
        return parse_ratio(value)
    if key == "beam_sizes":
        return parse_beam_sizes(value)
    if key == "force":
        return _parse_bool(value) if isinstance(value, str) else bool(value)
    if key == "format":
        if value not in ("jsonl", "tsv"):
            raise ConfigError(f"format must be jsonl or tsv, got {value!r}")
        return value
    if key == "transform":
        if value not in ("normalized", "raw"):
            raise ConfigError(f"transform must be normalized or raw, got {value!r}")
        return value
    raise ConfigError(f"unknown configuration key {key!r}")


def load_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment line."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        values[key.strip()] = value.strip()
    return values


def resolve_config(
    overrides: Mapping[str, object] | None = None,
    config_file: str | Path | None = None,
) -> RunConfig:
    """Defaults, overlaid by config file values, overlaid by flags."""
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    merged: dict[str, object] = {}
    if config_file is not None:
        for key, raw in load_config_file(config_file).items():
            if key not in field_names:
                raise ConfigError(f"unknown configuration key {key!r}")
            merged[key] = _convert(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in field_names:
            raise ConfigError(f"unknown configuration key {key!r}")
        merged[key] = _convert(key, value)
    config = RunConfig(**merged)
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    if config.beam_size < 1:
        raise ConfigError("beam_size must be >= 1")
    if config.workers < 1:
        raise ConfigError("workers must be >= 1")
    if config.order < 1:
        raise ConfigError("order must be >= 1")
    if config.smoothing <= 0:
        raise ConfigError("smoothing must be > 0")
    if config.bg_weight < 0:
        raise ConfigError("bg_weight must be >= 0")
    if config.num_buckets < 1:
        raise ConfigError("num_buckets must be >= 1")
    if config.unsupervised < 0:
        raise ConfigError("unsupervised must be >= 0")
    if config.queries_per_passage < 0:
        raise ConfigError("queries_per_passage must be >= 0")
    if config.top_k < 1:
        raise ConfigError("top_k must be >= 1")
    parse_metrics(config.metrics)


def _require(config: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(config, n) is None]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join(missing)}")


def _guard_output(path: str, force: bool) -> None:
    if Path(path).exists() and not force:
        raise OutputExistsError(
            f"output already exists: {path} (pass --force to overwrite)"
        )


def prepared_corpus(config: RunConfig) -> Corpus:
    """Load the corpus and attach template pseudo-queries.

    The same queries_per_passage and seed reproduce the exact queries the
    index was built with, so training and indexing stay aligned.
    """
    corpus = load_corpus(config.corpus, format=config.format)
    return attach_pseudo_queries(
        corpus,
        template_pseudo_queries,
        k=config.queries_per_passage,
        seed=config.seed,
    )


def load_pairs(path: str | Path) -> list[tuple[str, str]]:
    """Training pairs TSV: ``query text<TAB>passage_id``."""
    path = Path(path)
    if not path.is_file():
        raise QrelsError(f"pairs file not found: {path}")
    pairs: list[tuple[str, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise QrelsError(f"{path}:{lineno}: expected query<TAB>passage_id")
            pairs.append((parts[0], parts[1]))
    return pairs


def build_index_command(config: RunConfig) -> dict[str, object]:
    """Corpus file in, persisted index out; returns a printable summary."""
    _require(config, "corpus", "output")
    _guard_output(config.output, config.force)
    corpus = prepared_corpus(config)
    vocab = build_vocabulary(corpus)
    streams = flatten_corpus(corpus, vocab)
    index = FMIndex.build(streams, vocab)
    index.save(config.output)
    return {
        "documents": len(corpus),
        "tokens": int(index.size),
        "vocabulary_words": len(vocab) - FIRST_WORD_ID,
        "output": config.output,
    }


def train_scorer_command(config: RunConfig) -> dict[str, object]:
    """Build samples per ratio plus optional unsupervised ones, train, save."""
    _require(config, "corpus", "index", "output")
    _guard_output(config.output, config.force)
    index = FMIndex.load(config.index)
    corpus = prepared_corpus(config)
    vocab = build_vocabulary(corpus)
    if vocab.content_hash() != index.vocab.content_hash():
        raise VocabularyMismatchError(
            "corpus vocabulary does not match the index; "
            "rebuild the index or check queries_per_passage/seed"
        )
    pairs = load_pairs(config.pairs) if config.pairs else []
    samples = build_training_samples(
        pairs, corpus, vocab, ratio=config.ratio, seed=config.seed
    )
    per_view = {v: 0 for v in ALL_VIEWS}
    for s in samples:
        per_view[s.prefix] += 1
    unsupervised = []
    if config.unsupervised > 0:
        unsupervised = build_unsupervised_samples(
            corpus, vocab, per_passage=config.unsupervised, seed=config.seed
        )
        samples = samples + unsupervised
        random.Random(config.seed).shuffle(samples)
    scorer = train_ngram_scorer(
        samples,
        order=config.order,
        smoothing=config.smoothing,
        bg_weight=config.bg_weight,
        num_buckets=config.num_buckets,
        vocab_hash=vocab.content_hash(),
    )
    save_scorer(scorer, config.output)
    return {
        "pairs": len(pairs),
        "samples": len(samples),
        "per_view": per_view,
        "unsupervised_samples": len(unsupervised),
        "output": config.output,
    }


class Engine:
    """Index + scorer + decoding configuration, ready to answer queries."""

    def __init__(
        self,
        index: FMIndex,
        scorer: NGramScorer,
        beam_config: BeamConfig,
        views: tuple[str, ...] = ALL_VIEWS,
        transform: ScoreTransform | None = None,
    ):
        self.index = index
        self.scorer = scorer
        self.beam_config = beam_config
        self.views = views
        self.transform = transform or ScoreTransform()

    @classmethod
    def from_config(cls, config: RunConfig) -> "Engine":
        _require(config, "index", "scorer")
        index = FMIndex.load(config.index)
        scorer = load_scorer(config.scorer, index.vocab)
        beam_config = BeamConfig(
            beam_size=config.beam_size,
            query_length_bias=config.query_length_bias,
        )
        return cls(
            index=index,
            scorer=scorer,
            beam_config=beam_config,
            views=parse_views(config.views),
            transform=ScoreTransform(mode=config.transform, gamma=config.gamma),
        )

    def predictions(self, query: str) -> dict[str, list[Prediction]]:
        return generate_all(query, self.index, self.scorer, self.beam_config, self.views)

    def retrieve(self, query: str) -> RankedList:
        return rank(query, self.predictions(query), self.index, self.transform)

    def retrieve_safe(self, query: str) -> RankedList:
        """Decode failures degrade to an empty ranking, never an abort."""
        try:
            return self.retrieve(query)
        except Exception:
            logger.exception("retrieval failed for query %r", query)
            return RankedList(entries=())


def format_run_rows(qid: str, ranked: RankedList, top_k: int) -> list[str]:
    return [
        f"{qid}\t{pid}\t{i + 1}\t{score:.6f}"
        for i, (pid, score) in enumerate(ranked.entries[:top_k])
    ]


def batch_retrieve(
    engine: Engine,
    queries: Sequence[tuple[str, str]],
    workers: int = 1,
) -> list[tuple[str, RankedList]]:
    """Per-query retrieval, merged back in input order."""
    if workers <= 1:
        return [(qid, engine.retrieve_safe(text)) for qid, text in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        ranked = list(pool.map(lambda qt: engine.retrieve_safe(qt[1]), queries))
    return [(qid, r) for (qid, _), r in zip(queries, ranked)]


def retrieve_command(config: RunConfig) -> dict[str, object]:
    """Run file out: ``query_id  passage_id  rank  score`` per row."""
    _require(config, "queries", "output")
    _guard_output(config.output, config.force)
    engine = Engine.from_config(config)
    queries = load_queries(config.queries)
    results = batch_retrieve(engine, queries, workers=config.workers)
    rows: list[str] = []
    empty = 0
    for qid, ranked in results:
        if not ranked.entries:
            empty += 1
        rows.extend(format_run_rows(qid, ranked, config.top_k))
    Path(config.output).write_text(
        "".join(r + "\n" for r in rows), encoding="utf-8"
    )
    return {
        "queries": len(queries),
        "rows": len(rows),
        "empty_rankings": empty,
        "output": config.output,
    }


def evaluate_command(config: RunConfig) -> EvalReport:
    """Score a stored run file against qrels."""
    _require(config, "run", "qrels")
    if config.output is not None:
        _guard_output(config.output, config.force)
    run = load_run(config.run)
    qrels = load_qrels(config.qrels)
    report = evaluate_run(run, qrels, parse_metrics(config.metrics))
    if config.output is not None:
        Path(config.output).write_text(report.to_json() + "\n", encoding="utf-8")
    return report


def sweep_command(config: RunConfig) -> dict[str, object]:
    """Retrieve + evaluate once per beam size; one result row each."""
    _require(config, "queries", "qrels")
    if config.output is not None:
        _guard_output(config.output, config.force)
    qrels = load_qrels(config.qrels)
    queries = load_queries(config.queries)
    metrics = parse_metrics(config.metrics)
    names = [metric_name(m) for m in metrics]
    rows: list[dict[str, object]] = []
    for beam in config.beam_sizes:
        engine = Engine.from_config(dataclasses.replace(config, beam_size=beam))
        results = batch_retrieve(engine, queries, workers=config.workers)
        run = {qid: ranked.top(config.top_k) for qid, ranked in results}
        report = evaluate_run(run, qrels, metrics)
        row: dict[str, object] = {"beam_size": beam}
        row.update({n: report.means[n] for n in names})
        row["evaluated"] = report.evaluated
        row["skipped"] = report.skipped
        rows.append(row)
    result = {"beam_sizes": list(config.beam_sizes), "rows": rows}
    if config.output is not None:
        Path(config.output).write_text(
            json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return result


def format_sweep_table(result: Mapping[str, object]) -> str:
    rows: list[dict[str, object]] = list(result["rows"])  # type: ignore[arg-type]
    if not rows:
        return "no sweep rows"
    columns = list(rows[0].keys())
    widths = {
        c: max(len(c), *(len(_cell(r[c])) for r in rows)) for c in columns
    }
    lines = ["  ".join(f"{c:>{widths[c]}}" for c in columns)]
    lines.append("  ".join("-" * widths[c] for c in columns))
    for r in rows:
        lines.append("  ".join(f"{_cell(r[c]):>{widths[c]}}" for c in columns))
    return "\n".join(lines)


def _cell(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
