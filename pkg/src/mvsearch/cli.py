"""Command-line frontend.

Commands run the pipeline in-process by default; ``--server URL``
forwards the same resolved configuration to a running service instead.
Configuration precedence: flags > config file > defaults.  Every engine
error exits nonzero with a single ``CODE: message`` line on stderr.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import sys

import click
import httpx

from . import __version__
from .errors import EngineError
from .pipeline import (
    RunConfig,
    build_index_command,
    evaluate_command,
    format_sweep_table,
    resolve_config,
    retrieve_command,
    sweep_command,
    train_scorer_command,
)

_REMOTE_TIMEOUT = 600.0


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except EngineError as exc:
            click.echo(f"{exc.code}: {exc}", err=True)
            sys.exit(1)
        except httpx.HTTPError as exc:
            click.echo(f"E_SERVER: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _options(*opts):
    def deco(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn

    return deco


_config_opt = click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="flat key = value config file; flags win over it",
)
_server_opt = click.option(
    "--server", default=None, metavar="URL",
    help="forward the command to a running service",
)
_seed_opt = click.option("--seed", type=int, default=None, help="randomization seed")
_force_opt = click.option(
    "--force", is_flag=True, flag_value=True, default=None,
    help="overwrite an existing output file",
)
_output_opt = click.option("--output", type=click.Path(), default=None)
_corpus_opt = click.option("--corpus", type=click.Path(), default=None)
_index_opt = click.option("--index", type=click.Path(), default=None)
_scorer_opt = click.option("--scorer", type=click.Path(), default=None)
_views_opt = click.option(
    "--views", default=None, metavar="LIST",
    help="comma list from: title, substring, pseudo-query",
)
_workers_opt = click.option("--workers", type=int, default=None)
_beam_opt = click.option("--beam-size", type=int, default=None)
_qpp_opt = click.option(
    "--queries-per-passage", type=int, default=None,
    help="template pseudo-queries attached per passage (default 5)",
)


def _resolve(kwargs: dict, config_path: str | None) -> RunConfig:
    overrides = {k: v for k, v in kwargs.items() if v is not None}
    return resolve_config(overrides, config_path)


def _remote(server: str, command: str, config: RunConfig) -> dict:
    payload = {
        k: v for k, v in dataclasses.asdict(config).items() if v is not None
    }
    response = httpx.post(
        f"{server.rstrip('/')}/commands/{command}",
        json=payload,
        timeout=_REMOTE_TIMEOUT,
    )
    if response.status_code >= 400:
        try:
            data = response.json()
            line = f"{data['code']}: {data['message']}"
        except (ValueError, KeyError):
            line = f"E_SERVER: HTTP {response.status_code}"
        click.echo(line, err=True)
        sys.exit(1)
    return response.json()


def _echo_remote(data: dict) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.version_option(version=__version__, prog_name="mvsearch")
def main() -> None:
    """Generative passage retrieval over multiview identifiers."""


@main.command("build-index")
@_options(
    _corpus_opt, _output_opt,
    click.option("--format", default=None, type=click.Choice(["jsonl", "tsv"])),
    _qpp_opt, _seed_opt, _force_opt, _config_opt, _server_opt,
)
@_handle_errors
def cmd_build_index(config_path, server, **kwargs) -> None:
    """Flatten a corpus and persist the searchable index."""
    config = _resolve(kwargs, config_path)
    if server:
        _echo_remote(_remote(server, "build-index", config))
        return
    summary = build_index_command(config)
    click.echo(
        f"indexed {summary['documents']} documents, {summary['tokens']} tokens, "
        f"{summary['vocabulary_words']} vocabulary words -> {summary['output']}"
    )


@main.command("train-scorer")
@_options(
    _corpus_opt, _index_opt,
    click.option("--pairs", type=click.Path(), default=None,
                 help="training pairs TSV: query<TAB>passage_id"),
    _output_opt,
    click.option("--ratio", default=None, metavar="T:S:Q",
                 help="samples per pair per view (default 3:10:5)"),
    click.option("--order", type=int, default=None),
    click.option("--smoothing", type=float, default=None),
    click.option("--bg-weight", type=float, default=None),
    click.option("--num-buckets", type=int, default=None),
    click.option("--unsupervised", type=int, default=None,
                 help="self-supervised samples per passage"),
    _qpp_opt, _seed_opt, _force_opt, _config_opt, _server_opt,
)
@_handle_errors
def cmd_train_scorer(config_path, server, **kwargs) -> None:
    """Build training samples and fit the n-gram scorer."""
    config = _resolve(kwargs, config_path)
    if server:
        _echo_remote(_remote(server, "train-scorer", config))
        return
    summary = train_scorer_command(config)
    per_view = summary["per_view"]
    click.echo(
        f"trained on {summary['samples']} samples "
        f"(title {per_view['title']}, substring {per_view['substring']}, "
        f"pseudo-query {per_view['pseudo-query']}, "
        f"unsupervised {summary['unsupervised_samples']}) -> {summary['output']}"
    )


@main.command("retrieve")
@_options(
    _index_opt, _scorer_opt,
    click.option("--queries", type=click.Path(), default=None,
                 help="queries TSV: query_id<TAB>text"),
    _output_opt, _beam_opt, _views_opt,
    click.option("--query-length-bias", type=float, default=None),
    click.option("--transform", default=None,
                 type=click.Choice(["normalized", "raw"])),
    click.option("--gamma", type=float, default=None),
    click.option("--top-k", type=int, default=None),
    _workers_opt, _seed_opt, _force_opt, _config_opt, _server_opt,
)
@_handle_errors
def cmd_retrieve(config_path, server, **kwargs) -> None:
    """Decode identifiers per query and write the ranked run file."""
    config = _resolve(kwargs, config_path)
    if server:
        _echo_remote(_remote(server, "retrieve", config))
        return
    summary = retrieve_command(config)
    click.echo(
        f"wrote {summary['rows']} rows for {summary['queries']} queries "
        f"({summary['empty_rankings']} empty rankings) -> {summary['output']}"
    )


@main.command("evaluate")
@_options(
    click.option("--run", type=click.Path(), default=None,
                 help="run TSV: query_id<TAB>passage_id<TAB>rank<TAB>score"),
    click.option("--qrels", type=click.Path(), default=None,
                 help="qrels TSV: query_id<TAB>passage_id"),
    click.option("--metrics", default=None, metavar="LIST",
                 help="e.g. hits@5,recall@20,mrr@10"),
    _output_opt, _force_opt, _config_opt, _server_opt,
)
@_handle_errors
def cmd_evaluate(config_path, server, **kwargs) -> None:
    """Score a stored run file against relevance judgments."""
    config = _resolve(kwargs, config_path)
    if server:
        _echo_remote(_remote(server, "evaluate", config))
        return
    report = evaluate_command(config)
    click.echo(report.format_table())
    if config.output:
        click.echo(f"report written to {config.output}")


@main.command("sweep")
@_options(
    _index_opt, _scorer_opt,
    click.option("--queries", type=click.Path(), default=None),
    click.option("--qrels", type=click.Path(), default=None),
    click.option("--beam-sizes", default=None, metavar="LIST",
                 help="comma list of beam sizes (default 5,10,15,20)"),
    _views_opt,
    click.option("--metrics", default=None, metavar="LIST"),
    click.option("--transform", default=None,
                 type=click.Choice(["normalized", "raw"])),
    click.option("--gamma", type=float, default=None),
    click.option("--top-k", type=int, default=None),
    _workers_opt, _seed_opt, _output_opt, _force_opt, _config_opt, _server_opt,
)
@_handle_errors
def cmd_sweep(config_path, server, **kwargs) -> None:
    """Retrieve and evaluate once per beam size; one row per size."""
    config = _resolve(kwargs, config_path)
    if server:
        _echo_remote(_remote(server, "sweep", config))
        return
    result = sweep_command(config)
    click.echo(format_sweep_table(result))
    if config.output:
        click.echo(f"report written to {config.output}")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@_handle_errors
def cmd_serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
