"""Request and response models for the HTTP service.

Fields default to None so the service only overrides what a request
actually sets; resolution against defaults happens in the pipeline's
config layer, keeping CLI and service behavior identical.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class CommandRequest(BaseModel):
    """Shared shape: any RunConfig field may be supplied."""

    model_config = ConfigDict(extra="forbid")

    corpus: str | None = None
    index: str | None = None
    scorer: str | None = None
    queries: str | None = None
    qrels: str | None = None
    pairs: str | None = None
    run: str | None = None
    output: str | None = None
    format: str | None = None
    beam_size: int | None = None
    views: list[str] | str | None = None
    ratio: list[int] | str | None = None
    query_length_bias: float | None = None
    seed: int | None = None
    workers: int | None = None
    order: int | None = None
    smoothing: float | None = None
    bg_weight: float | None = None
    num_buckets: int | None = None
    unsupervised: int | None = None
    queries_per_passage: int | None = None
    top_k: int | None = None
    transform: str | None = None
    gamma: float | None = None
    metrics: str | None = None
    beam_sizes: list[int] | str | None = None
    force: bool | None = None

    def overrides(self) -> dict[str, object]:
        return self.model_dump(exclude_none=True)


class BuildIndexResponse(BaseModel):
    documents: int
    tokens: int
    vocabulary_words: int
    output: str


class TrainScorerResponse(BaseModel):
    pairs: int
    samples: int
    per_view: dict[str, int]
    unsupervised_samples: int
    output: str


class RetrieveResponse(BaseModel):
    queries: int
    rows: int
    empty_rankings: int
    output: str


class EvaluateResponse(BaseModel):
    means: dict[str, float]
    evaluated: int
    skipped: int
    skipped_ids: list[str]
    per_query: dict[str, dict[str, float]]


class SweepRow(BaseModel):
    model_config = ConfigDict(extra="allow")

    beam_size: int
    evaluated: int
    skipped: int


class SweepResponse(BaseModel):
    beam_sizes: list[int]
    rows: list[SweepRow]


class SearchRequest(BaseModel):
    """One ad-hoc query against a stored index and scorer."""

    model_config = ConfigDict(extra="forbid")

    index: str
    scorer: str
    query: str
    beam_size: int = Field(default=15, ge=1)
    views: list[str] | str | None = None
    query_length_bias: float = 0.0
    transform: Literal["normalized", "raw"] = "normalized"
    gamma: float = 1.0
    top_k: int = Field(default=100, ge=1)
    include_predictions: bool = False


class SearchHit(BaseModel):
    passage_id: str
    rank: int
    score: float


class PredictionOut(BaseModel):
    view: str
    text: str
    score: float


class SearchResponse(BaseModel):
    query: str
    hits: list[SearchHit]
    predictions: list[PredictionOut] | None = None


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorResponse(BaseModel):
    code: str
    message: str
