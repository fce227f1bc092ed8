"""Pipeline commands and the CLI frontend, exercised on real tmp files."""

from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from mvsearch.cli import main
from mvsearch.errors import (
    ConfigError,
    OutputExistsError,
    QrelsError,
    VocabularyMismatchError,
)
from mvsearch.pipeline import (
    Engine,
    RunConfig,
    build_index_command,
    evaluate_command,
    load_config_file,
    load_pairs,
    parse_beam_sizes,
    parse_ratio,
    parse_views,
    resolve_config,
    retrieve_command,
    sweep_command,
    train_scorer_command,
)

_PASSAGES = [
    {
        "id": "p1",
        "title": "Does He Love You",
        "text": "Does He Love You is a song recorded as a duet by American "
        "country music artists Reba McEntire and Linda Davis.",
    },
    {
        "id": "p2",
        "title": "Red River Valley",
        "text": "Red River Valley is a folk song and cowboy music standard "
        "of uncertain origins known by several names.",
    },
    {
        "id": "p3",
        "title": "Blue Moon of Kentucky",
        "text": "Blue Moon of Kentucky is a waltz written in 1946 by "
        "bluegrass musician Bill Monroe and recorded by his band.",
    },
]


def _write_corpus(dirpath: Path) -> dict[str, Path]:
    paths = {
        "corpus": dirpath / "corpus.jsonl",
        "pairs": dirpath / "pairs.tsv",
        "queries": dirpath / "queries.tsv",
        "qrels": dirpath / "qrels.tsv",
        "index": dirpath / "idx.bin",
        "scorer": dirpath / "scorer.bin",
        "run": dirpath / "run.tsv",
    }
    with paths["corpus"].open("w", encoding="utf-8") as fh:
        for p in _PASSAGES:
            fh.write(json.dumps(p) + "\n")
    paths["pairs"].write_text(
        "who sings does he love you\tp1\n"
        "what is red river valley\tp2\n"
        "who wrote blue moon of kentucky\tp3\n",
        encoding="utf-8",
    )
    paths["queries"].write_text(
        "q1\twho sings does he love you\nq2\twho wrote blue moon of kentucky\n",
        encoding="utf-8",
    )
    paths["qrels"].write_text("q1\tp1\nq2\tp3\n", encoding="utf-8")
    return paths


def _built(tmp_path: Path) -> dict[str, Path]:
    paths = _write_corpus(tmp_path)
    build_index_command(
        RunConfig(corpus=str(paths["corpus"]), output=str(paths["index"]), seed=7)
    )
    train_scorer_command(
        RunConfig(
            corpus=str(paths["corpus"]),
            index=str(paths["index"]),
            pairs=str(paths["pairs"]),
            output=str(paths["scorer"]),
            unsupervised=2,
            seed=7,
        )
    )
    return paths


class TestConfigResolution:
    def test_defaults(self):
        config = resolve_config({})
        assert config.beam_size == 15
        assert config.views == ("title", "substring", "pseudo-query")
        assert config.ratio == (3, 10, 5)

    def test_flags_beat_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("beam_size = 5\nseed = 3\n# comment\n", encoding="utf-8")
        config = resolve_config({"beam_size": 9}, cfg)
        assert config.beam_size == 9
        assert config.seed == 3

    def test_config_file_beats_defaults(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("ratio = 1:2:3\nviews = title,substring\n", encoding="utf-8")
        config = resolve_config({}, cfg)
        assert config.ratio == (1, 2, 3)
        assert config.views == ("title", "substring")

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("beem_size = 5\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            resolve_config({}, cfg)
        with pytest.raises(ConfigError):
            resolve_config({"beem_size": 5})

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("beam_size 5\n", encoding="utf-8")
        with pytest.raises(ConfigError, match=":1"):
            load_config_file(cfg)

    def test_parse_views(self):
        assert parse_views("title, substring") == ("title", "substring")
        for bad in ("", "titles", "title,title"):
            with pytest.raises(ConfigError):
                parse_views(bad)

    def test_parse_ratio(self):
        assert parse_ratio("3:10:5") == (3, 10, 5)
        for bad in ("3:10", "a:b:c", "0:0:0", "-1:2:3"):
            with pytest.raises(ConfigError):
                parse_ratio(bad)

    def test_parse_beam_sizes(self):
        assert parse_beam_sizes("5,10,15") == (5, 10, 15)
        for bad in ("", "0", "x"):
            with pytest.raises(ConfigError):
                parse_beam_sizes(bad)

    def test_validation_bounds(self):
        for overrides in (
            {"beam_size": 0},
            {"workers": 0},
            {"smoothing": 0.0},
            {"order": 0},
            {"metrics": "ndcg@5"},
            {"transform": "softmax"},
            {"format": "xml"},
        ):
            with pytest.raises((ConfigError, QrelsError)):
                resolve_config(overrides)


class TestPipelineCommands:
    def test_build_index_summary(self, tmp_path):
        paths = _write_corpus(tmp_path)
        summary = build_index_command(
            RunConfig(corpus=str(paths["corpus"]), output=str(paths["index"]))
        )
        assert summary["documents"] == 3
        assert summary["tokens"] > 0
        assert Path(summary["output"]).is_file()

    def test_build_refuses_overwrite(self, tmp_path):
        paths = _write_corpus(tmp_path)
        config = RunConfig(corpus=str(paths["corpus"]), output=str(paths["index"]))
        build_index_command(config)
        with pytest.raises(OutputExistsError):
            build_index_command(config)
        build_index_command(
            RunConfig(
                corpus=str(paths["corpus"]), output=str(paths["index"]), force=True
            )
        )

    def test_train_detects_vocabulary_mismatch(self, tmp_path):
        paths = _write_corpus(tmp_path)
        build_index_command(
            RunConfig(corpus=str(paths["corpus"]), output=str(paths["index"]), seed=7)
        )
        other = tmp_path / "other.jsonl"
        other.write_text(
            json.dumps({"id": "x", "title": "t", "text": "entirely different words"})
            + "\n",
            encoding="utf-8",
        )
        with pytest.raises(VocabularyMismatchError):
            train_scorer_command(
                RunConfig(
                    corpus=str(other),
                    index=str(paths["index"]),
                    output=str(paths["scorer"]),
                    seed=7,
                )
            )

    def test_unsupervised_sample_count(self, tmp_path):
        paths = _write_corpus(tmp_path)
        build_index_command(
            RunConfig(corpus=str(paths["corpus"]), output=str(paths["index"]), seed=7)
        )
        summary = train_scorer_command(
            RunConfig(
                corpus=str(paths["corpus"]),
                index=str(paths["index"]),
                output=str(paths["scorer"]),
                unsupervised=2,
                seed=7,
            )
        )
        # every passage gets template pseudo-queries, so 2 x 3 passages
        assert summary["unsupervised_samples"] == 6

    def test_ratio_restricts_views(self, tmp_path):
        paths = _write_corpus(tmp_path)
        build_index_command(
            RunConfig(corpus=str(paths["corpus"]), output=str(paths["index"]), seed=7)
        )
        summary = train_scorer_command(
            RunConfig(
                corpus=str(paths["corpus"]),
                index=str(paths["index"]),
                pairs=str(paths["pairs"]),
                output=str(paths["scorer"]),
                ratio=(1, 0, 0),
                seed=7,
            )
        )
        assert summary["per_view"]["title"] == 3
        assert summary["per_view"]["substring"] == 0
        assert summary["per_view"]["pseudo-query"] == 0

    def test_retrieve_and_evaluate(self, tmp_path):
        paths = _built(tmp_path)
        summary = retrieve_command(
            RunConfig(
                index=str(paths["index"]),
                scorer=str(paths["scorer"]),
                queries=str(paths["queries"]),
                output=str(paths["run"]),
                beam_size=10,
            )
        )
        assert summary["queries"] == 2
        assert summary["rows"] > 0
        report = evaluate_command(
            RunConfig(run=str(paths["run"]), qrels=str(paths["qrels"]))
        )
        assert report.means["hits@5"] == 1.0
        assert report.means["mrr@10"] == 1.0

    def test_run_rows_sorted_and_formatted(self, tmp_path):
        paths = _built(tmp_path)
        retrieve_command(
            RunConfig(
                index=str(paths["index"]),
                scorer=str(paths["scorer"]),
                queries=str(paths["queries"]),
                output=str(paths["run"]),
            )
        )
        per_query: dict[str, list[tuple[int, float]]] = {}
        for line in paths["run"].read_text(encoding="utf-8").splitlines():
            qid, pid, rank_text, score_text = line.split("\t")
            per_query.setdefault(qid, []).append((int(rank_text), float(score_text)))
        for rows in per_query.values():
            assert [r for r, _ in rows] == list(range(1, len(rows) + 1))
            scores = [s for _, s in rows]
            assert scores == sorted(scores, reverse=True)

    def test_retrieval_determinism(self, tmp_path):
        paths = _built(tmp_path)
        out1 = tmp_path / "r1.tsv"
        out2 = tmp_path / "r2.tsv"
        for out in (out1, out2):
            retrieve_command(
                RunConfig(
                    index=str(paths["index"]),
                    scorer=str(paths["scorer"]),
                    queries=str(paths["queries"]),
                    output=str(out),
                    seed=11,
                )
            )
        assert out1.read_bytes() == out2.read_bytes()

    def test_workers_do_not_change_output(self, tmp_path):
        paths = _built(tmp_path)
        out1 = tmp_path / "w1.tsv"
        out4 = tmp_path / "w4.tsv"
        for out, workers in ((out1, 1), (out4, 4)):
            retrieve_command(
                RunConfig(
                    index=str(paths["index"]),
                    scorer=str(paths["scorer"]),
                    queries=str(paths["queries"]),
                    output=str(out),
                    workers=workers,
                )
            )
        assert out1.read_bytes() == out4.read_bytes()

    def test_artifact_determinism(self, tmp_path):
        paths = _write_corpus(tmp_path)
        blobs = []
        for name in ("a", "b"):
            idx = tmp_path / f"idx_{name}.bin"
            sc = tmp_path / f"sc_{name}.bin"
            build_index_command(
                RunConfig(corpus=str(paths["corpus"]), output=str(idx), seed=3)
            )
            train_scorer_command(
                RunConfig(
                    corpus=str(paths["corpus"]),
                    index=str(idx),
                    pairs=str(paths["pairs"]),
                    output=str(sc),
                    seed=3,
                )
            )
            blobs.append((idx.read_bytes(), sc.read_bytes()))
        assert blobs[0] == blobs[1]

    def test_single_view_ablation(self, tmp_path):
        paths = _built(tmp_path)
        engine = Engine.from_config(
            RunConfig(
                index=str(paths["index"]),
                scorer=str(paths["scorer"]),
                views=("title",),
            )
        )
        preds = engine.predictions("who sings does he love you")
        assert set(preds) == {"title"}

    def test_decode_failure_gives_empty_ranking(self, tmp_path):
        paths = _built(tmp_path)
        engine = Engine.from_config(
            RunConfig(index=str(paths["index"]), scorer=str(paths["scorer"]))
        )

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic decode failure")

        engine.predictions = boom
        ranked = engine.retrieve_safe("any query")
        assert ranked.entries == ()

    def test_sweep_rows(self, tmp_path):
        paths = _built(tmp_path)
        result = sweep_command(
            RunConfig(
                index=str(paths["index"]),
                scorer=str(paths["scorer"]),
                queries=str(paths["queries"]),
                qrels=str(paths["qrels"]),
                beam_sizes=(5, 10, 15, 20),
            )
        )
        assert [row["beam_size"] for row in result["rows"]] == [5, 10, 15, 20]
        for row in result["rows"]:
            assert "hits@5" in row

    def test_load_pairs(self, tmp_path):
        p = tmp_path / "pairs.tsv"
        p.write_text("who wrote it\tp1\nwhere is it\tp2\n", encoding="utf-8")
        assert load_pairs(p) == [("who wrote it", "p1"), ("where is it", "p2")]
        p.write_text("no tab here\n", encoding="utf-8")
        with pytest.raises(QrelsError):
            load_pairs(p)


class TestCli:
    def _run(self, args, **kwargs):
        return CliRunner().invoke(main, args, catch_exceptions=False, **kwargs)

    def test_full_flow(self, tmp_path):
        paths = _write_corpus(tmp_path)
        r = self._run(
            [
                "build-index",
                "--corpus", str(paths["corpus"]),
                "--output", str(paths["index"]),
                "--seed", "7",
            ]
        )
        assert r.exit_code == 0, r.output
        assert "3 documents" in r.output
        r = self._run(
            [
                "train-scorer",
                "--corpus", str(paths["corpus"]),
                "--index", str(paths["index"]),
                "--pairs", str(paths["pairs"]),
                "--output", str(paths["scorer"]),
                "--seed", "7",
            ]
        )
        assert r.exit_code == 0, r.output
        r = self._run(
            [
                "retrieve",
                "--index", str(paths["index"]),
                "--scorer", str(paths["scorer"]),
                "--queries", str(paths["queries"]),
                "--output", str(paths["run"]),
                "--beam-size", "10",
            ]
        )
        assert r.exit_code == 0, r.output
        r = self._run(
            ["evaluate", "--run", str(paths["run"]), "--qrels", str(paths["qrels"])]
        )
        assert r.exit_code == 0, r.output
        assert "hits@5" in r.output

    def test_missing_file_is_single_line_code(self, tmp_path):
        r = self._run(
            ["evaluate", "--run", str(tmp_path / "nope.tsv"), "--qrels", str(tmp_path / "q.tsv")]
        )
        assert r.exit_code == 1
        lines = [l for l in r.output.splitlines() if l]
        assert len(lines) == 1
        assert lines[0].startswith("E_MISSING_FILE: ")

    def test_overwrite_refused_then_forced(self, tmp_path):
        paths = _write_corpus(tmp_path)
        args = [
            "build-index",
            "--corpus", str(paths["corpus"]),
            "--output", str(paths["index"]),
        ]
        assert self._run(args).exit_code == 0
        r = self._run(args)
        assert r.exit_code == 1
        assert r.output.startswith("E_OUTPUT_EXISTS:")
        assert self._run(args + ["--force"]).exit_code == 0

    def test_config_file_with_flag_override(self, tmp_path):
        paths = _write_corpus(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"corpus = {paths['corpus']}\noutput = {tmp_path / 'cfg_idx.bin'}\n",
            encoding="utf-8",
        )
        r = self._run(["build-index", "--config", str(cfg)])
        assert r.exit_code == 0, r.output
        assert (tmp_path / "cfg_idx.bin").is_file()
        r = self._run(
            ["build-index", "--config", str(cfg), "--output", str(tmp_path / "o2.bin")]
        )
        assert r.exit_code == 0, r.output
        assert (tmp_path / "o2.bin").is_file()

    def test_bad_config_value_is_config_error(self, tmp_path):
        r = self._run(["retrieve", "--views", "nonsense"])
        assert r.exit_code == 1
        assert r.output.startswith("E_CONFIG:")

    def test_version(self):
        r = self._run(["--version"])
        assert r.exit_code == 0
        assert "mvsearch" in r.output
