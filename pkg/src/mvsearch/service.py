"""FastAPI wrapper over the retrieval pipeline.

Every command endpoint accepts the same flat configuration the CLI
takes, so a thin client can forward its flags verbatim.  Engines are
cached per (index, scorer) pair for the ad-hoc /search endpoint.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .errors import EngineError, MissingFileError
from .fm_index import FMIndex
from .pipeline import (
    Engine,
    build_index_command,
    evaluate_command,
    parse_views,
    resolve_config,
    retrieve_command,
    sweep_command,
    train_scorer_command,
)
from .ranker import ScoreTransform
from .schemas import (
    BuildIndexResponse,
    CommandRequest,
    EvaluateResponse,
    HealthResponse,
    PredictionOut,
    RetrieveResponse,
    SearchHit,
    SearchRequest,
    SearchResponse,
    SweepResponse,
    TrainScorerResponse,
)
from .scorer import ALL_VIEWS, load_scorer
from .decoder import BeamConfig

logger = logging.getLogger(__name__)

_ENGINE_CACHE_LIMIT = 4


def create_app() -> FastAPI:
    app = FastAPI(title="mvsearch", version=__version__)
    app.state.engine_cache = {}

    @app.exception_handler(EngineError)
    async def engine_error_handler(request: Request, exc: EngineError):
        status = 404 if isinstance(exc, MissingFileError) else 400
        return JSONResponse(
            status_code=status, content={"code": exc.code, "message": str(exc)}
        )

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/commands/build-index", response_model=BuildIndexResponse)
    def build_index(request: CommandRequest) -> BuildIndexResponse:
        summary = build_index_command(resolve_config(request.overrides()))
        return BuildIndexResponse(**summary)

    @app.post("/commands/train-scorer", response_model=TrainScorerResponse)
    def train_scorer(request: CommandRequest) -> TrainScorerResponse:
        summary = train_scorer_command(resolve_config(request.overrides()))
        return TrainScorerResponse(**summary)

    @app.post("/commands/retrieve", response_model=RetrieveResponse)
    def retrieve(request: CommandRequest) -> RetrieveResponse:
        summary = retrieve_command(resolve_config(request.overrides()))
        return RetrieveResponse(**summary)

    @app.post("/commands/evaluate", response_model=EvaluateResponse)
    def evaluate(request: CommandRequest) -> EvaluateResponse:
        report = evaluate_command(resolve_config(request.overrides()))
        return EvaluateResponse(
            means=report.means,
            evaluated=report.evaluated,
            skipped=report.skipped,
            skipped_ids=list(report.skipped_ids),
            per_query=report.per_query,
        )

    @app.post("/commands/sweep", response_model=SweepResponse)
    def sweep(request: CommandRequest) -> SweepResponse:
        result = sweep_command(resolve_config(request.overrides()))
        return SweepResponse(**result)

    def _engine_for(request: SearchRequest) -> Engine:
        views = parse_views(request.views) if request.views else ALL_VIEWS
        key = (
            request.index,
            request.scorer,
            request.beam_size,
            views,
            request.query_length_bias,
            request.transform,
            request.gamma,
        )
        cache: dict = app.state.engine_cache
        engine = cache.get(key)
        if engine is None:
            index = FMIndex.load(request.index)
            scorer = load_scorer(request.scorer, index.vocab)
            engine = Engine(
                index=index,
                scorer=scorer,
                beam_config=BeamConfig(
                    beam_size=request.beam_size,
                    query_length_bias=request.query_length_bias,
                ),
                views=views,
                transform=ScoreTransform(mode=request.transform, gamma=request.gamma),
            )
            if len(cache) >= _ENGINE_CACHE_LIMIT:
                cache.pop(next(iter(cache)))
            cache[key] = engine
        return engine

    @app.post("/search", response_model=SearchResponse)
    def search(request: SearchRequest) -> SearchResponse:
        engine = _engine_for(request)
        predictions = engine.predictions(request.query)
        ranked = engine.retrieve(request.query)
        hits = [
            SearchHit(passage_id=pid, rank=i + 1, score=score)
            for i, (pid, score) in enumerate(ranked.entries[: request.top_k])
        ]
        pred_out = None
        if request.include_predictions:
            pred_out = [
                PredictionOut(view=p.view, text=p.text, score=p.score)
                for view in engine.views
                for p in predictions.get(view, [])
            ]
        return SearchResponse(query=request.query, hits=hits, predictions=pred_out)

    return app


app = create_app()
