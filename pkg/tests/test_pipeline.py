import csv
import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from topiclens import artifacts, pipeline
from topiclens.cli import main

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


def _mini_corpus_lines(seed=7):
    """~500 documents, 3 planted topics, split threshold at day 10."""
    rng = np.random.default_rng(seed)
    start = datetime(2023, 3, 1, tzinfo=timezone.utc)
    early_wave = [20, 15, 10, 5, 2, 2, 2, 4, 4, 4]  # days 0..9 -> early users
    lines = []
    users = []
    doc_no = 0

    def add(user, day, text, rt=False):
        nonlocal doc_no
        ts = start + timedelta(days=day, hours=int(rng.integers(0, 24)))
        lines.append(
            json.dumps(
                {
                    "doc_id": f"m{doc_no:04d}",
                    "user_id": user,
                    "timestamp": ts.isoformat(),
                    "text": text,
                    "is_retweet": rt,
                }
            )
        )
        doc_no += 1

    def topic_text(t):
        return " ".join(rng.choice([f"k{t}tok{j}" for j in range(30)], size=10))

    u = 0
    for day, count in enumerate(early_wave):
        for _ in range(count):
            name = f"eu{u}"
            users.append((name, day))
            add(name, day, topic_text(int(rng.integers(0, 3))))
            u += 1
    for day in range(10, 30):
        for _ in range(4):
            name = f"lu{u}"
            users.append((name, day))
            add(name, day, topic_text(int(rng.integers(0, 3))))
            u += 1
    for _ in range(280):
        name, first = users[int(rng.integers(0, len(users)))]
        day = int(rng.integers(max(10, first), 30))
        add(name, day, topic_text(int(rng.integers(0, 3))))
    for _ in range(20):
        name, first = users[int(rng.integers(0, len(users)))]
        add(name, int(rng.integers(max(10, first), 30)), "RT " + topic_text(0), rt=True)
    return lines


def _write_config(tmp: Path, overrides: dict | None = None) -> Path:
    values = {
        ("embed", "offline"): "true",
        ("embed", "offline_dim"): "32",
        ("reduce", "dim"): "2",
        ("reduce", "neighbors"): "10",
        ("reduce", "epochs"): "50",
        ("cluster", "grid"): "3,10",
        ("bias", "min_group"): "5",
        ("output", "dir"): "out",
    }
    values.update(overrides or {})
    sections: dict[str, dict[str, str]] = {"input": {"records": "records.jsonl"}}
    for (section, key), val in values.items():
        sections.setdefault(section, {})[key] = str(val)
    text = "\n".join(
        f"[{name}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items())
        for name, kv in sections.items()
    )
    path = tmp / "config.ini"
    path.write_text(text + "\n")
    return path


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("mini")
    (tmp / "records.jsonl").write_text("\n".join(_mini_corpus_lines()) + "\n")
    config_path = _write_config(tmp)
    config = pipeline.load_config(config_path)
    result = pipeline.run_pipeline(config)
    return tmp, config_path, config, result


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        (tmp_path / "records.jsonl").write_text("{}\n")
        path = _write_config(tmp_path)
        path.write_text(path.read_text() + "\n[split]\nbogus = 1\n")
        with pytest.raises(ValueError, match="bogus"):
            pipeline.load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        (tmp_path / "records.jsonl").write_text("{}\n")
        path = _write_config(tmp_path)
        path.write_text(path.read_text() + "\n[mystery]\nx = 1\n")
        with pytest.raises(ValueError, match="mystery"):
            pipeline.load_config(path)

    def test_missing_input_file_fails_before_stages(self, tmp_path):
        path = _write_config(tmp_path)  # records.jsonl not created
        with pytest.raises(ValueError, match="not found"):
            pipeline.load_config(path)

    def test_mass_range_validated(self, tmp_path):
        (tmp_path / "records.jsonl").write_text("{}\n")
        path = _write_config(tmp_path, {("bias", "mass"): "1.5"})
        with pytest.raises(ValueError, match="mass"):
            pipeline.load_config(path)

    def test_lda_space_validated(self, tmp_path):
        (tmp_path / "records.jsonl").write_text("{}\n")
        path = _write_config(tmp_path, {("bias", "lda_space"): "weird"})
        with pytest.raises(ValueError, match="lda_space"):
            pipeline.load_config(path)

    def test_defaults_filled(self, tmp_path):
        (tmp_path / "records.jsonl").write_text("{}\n")
        config = pipeline.load_config(_write_config(tmp_path))
        assert config[("split", "window")] == 7
        assert config[("diverge", "multiplier")] == 4.0


class TestRun:
    def test_primary_artifacts_produced(self, mini_run):
        tmp, _, config, result = mini_run
        out = config.output_dir
        for name in pipeline.PRIMARY_ARTIFACTS:
            assert (out / name).exists(), name
        assert (out / "tuning.csv").exists()
        assert (out / "halfline.csv").exists()
        assert sorted(p.name for p in (out / "figures").glob("*.svg"))
        assert len(result.runs) == 8
        assert result.executed_stages == list(pipeline.STAGE_ORDER)

    def test_manifest_lists_primary_artifacts_with_hashes(self, mini_run):
        _, _, config, _ = mini_run
        manifest = json.loads((config.output_dir / "manifest.json").read_text())
        assert set(manifest["artifacts"]) == set(pipeline.PRIMARY_ARTIFACTS)
        assert all(len(h) == 64 for h in manifest["artifacts"].values())

    def test_rerun_executes_nothing(self, mini_run):
        _, _, config, _ = mini_run
        result = pipeline.run_pipeline(config)
        assert result.executed_stages == []

    def test_param_change_reruns_only_dependents(self, mini_run):
        tmp, config_path, _, _ = mini_run
        # diverge param change: diverge reruns; report stays cached because
        # divergence.csv comes out byte-identical on this corpus (content
        # hashing, not timestamps, drives invalidation)
        changed = _write_config(tmp, {("diverge", "multiplier"): "3.0"})
        result = pipeline.run_pipeline(pipeline.load_config(changed))
        assert result.executed_stages == ["diverge"]
        # filter param change cascades: the filtered artifact embeds the
        # multiplier, so its bytes change and downstream stages rerun
        changed = _write_config(tmp, {("filter", "multiplier"): "2.5"})
        result = pipeline.run_pipeline(pipeline.load_config(changed))
        assert result.executed_stages == ["filter", "diverge", "bias", "report"]
        # restore for other tests
        pipeline.run_pipeline(pipeline.load_config(_write_config(tmp)))

    def test_tampered_output_triggers_rerun(self, mini_run):
        tmp, config_path, config, _ = mini_run
        out = config.output_dir
        (out / "divergence.csv").write_text("tampered\n")
        result = pipeline.run_pipeline(config)
        assert "diverge" in result.executed_stages
        assert "embed" not in result.executed_stages

    def test_stage_failure_names_stage(self, tmp_path):
        (tmp_path / "records.jsonl").write_text('{"bad": 1}\n')
        config = pipeline.load_config(_write_config(tmp_path))
        with pytest.raises(pipeline.PipelineError, match="ingest"):
            pipeline.run_pipeline(config)

    def test_divergence_csv_schema(self, mini_run):
        _, _, config, _ = mini_run
        with open(config.output_dir / "divergence.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        assert list(rows[0]) == [
            "topic_id", "n_early", "n_late", "p", "q", "score", "dominant", "outlier_flag",
        ]
        p_sum = sum(float(r["p"]) for r in rows)
        q_sum = sum(float(r["q"]) for r in rows)
        assert p_sum == pytest.approx(1.0, abs=1e-9)
        assert q_sum == pytest.approx(1.0, abs=1e-9)

    def test_bias_csv_schema(self, mini_run):
        _, _, config, _ = mini_run
        with open(config.output_dir / "bias.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows
        assert list(rows[0]) == [
            "topic_id", "n_E", "n_L", "volume_ratio_E", "ratio_E", "ratio_L",
            "shared", "only_E", "only_L", "stratum",
        ]
        for r in rows:
            total = float(r["only_E"]) + float(r["only_L"]) + float(r["shared"])
            assert total == 1.0

    def test_strata_json_schema(self, mini_run):
        _, _, config, _ = mini_run
        payload = json.loads((config.output_dir / "strata.json").read_text())
        assert len(payload["strata"]) == 3
        assert "engagement" in payload
        assert payload["engagement"]["users_early"] > 0
        assert "correlations" in payload

    def test_threshold_recovered(self, mini_run):
        _, _, config, _ = mini_run
        grouped = artifacts.load_corpus(config.output_dir / "corpus.bin")
        assert grouped.threshold_date.isoformat() == "2023-03-11"  # day 10

    def test_failed_run_resumes_from_completed_stages(self, tmp_path, monkeypatch):
        (tmp_path / "records.jsonl").write_text("\n".join(_mini_corpus_lines(seed=13)) + "\n")
        config = pipeline.load_config(_write_config(tmp_path))

        def boom(*args, **kwargs):
            raise RuntimeError("synthetic bias failure")

        monkeypatch.setattr(pipeline, "stage_bias", boom)
        with pytest.raises(pipeline.PipelineError, match="bias"):
            pipeline.run_pipeline(config)
        monkeypatch.undo()
        result = pipeline.run_pipeline(config)
        # stages before the failure resume from their cached outputs
        assert result.executed_stages == ["bias", "report"]

    def test_manifest_identical_across_fresh_runs(self, mini_run):
        tmp, _, config, _ = mini_run
        other = _write_config(tmp, {("output", "dir"): "out_twin"})
        pipeline.run_pipeline(pipeline.load_config(other))
        a = json.loads((tmp / "out" / "manifest.json").read_text())
        b = json.loads((tmp / "out_twin" / "manifest.json").read_text())
        assert a == b


class TestRemoteEmbedStage:
    def test_embed_stage_through_http_service(self, tmp_path):
        import threading
        from http.server import HTTPServer

        from test_embedder import _StubHandler

        server = HTTPServer(("127.0.0.1", 0), _StubHandler)
        server.state = {
            "requests": 0,
            "batch_sizes": [],
            "fail_remaining": 0,
            "drop_last": False,
            "dim": 16,
        }
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            (tmp_path / "records.jsonl").write_text("\n".join(_mini_corpus_lines(seed=21)) + "\n")
            corpus_bin = tmp_path / "corpus.bin"
            pipeline.stage_ingest(tmp_path / "records.jsonl", corpus_bin)
            host, port = server.server_address
            summary = pipeline.stage_embed(
                corpus_bin,
                tmp_path / "emb.bin",
                offline=False,
                model="stub-model",
                url=f"http://{host}:{port}",
                cache_dir=tmp_path / "cache",
                batch_size=64,
            )
            assert summary["source"] == "service"
            assert summary["dim"] == 16
            first_requests = server.state["requests"]
            assert first_requests >= 1
            # unchanged corpus embeds from cache only
            pipeline.stage_embed(
                corpus_bin,
                tmp_path / "emb2.bin",
                offline=False,
                model="stub-model",
                url=f"http://{host}:{port}",
                cache_dir=tmp_path / "cache",
                batch_size=64,
            )
            assert server.state["requests"] == first_requests
            assert (tmp_path / "emb.bin").read_bytes() == (tmp_path / "emb2.bin").read_bytes()
        finally:
            server.shutdown()
            thread.join(timeout=5)


class TestCli:
    def test_run_subcommand(self, tmp_path, capsys):
        (tmp_path / "records.jsonl").write_text("\n".join(_mini_corpus_lines(seed=9)) + "\n")
        config_path = _write_config(tmp_path)
        assert main(["run", "--config", str(config_path)]) == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert out["executed"] == list(pipeline.STAGE_ORDER)

    def test_stagewise_invocation(self, tmp_path, capsys):
        records = tmp_path / "records.jsonl"
        records.write_text("\n".join(_mini_corpus_lines(seed=11)) + "\n")
        corpus = tmp_path / "corpus.bin"
        emb = tmp_path / "emb.bin"
        red = tmp_path / "red.bin"
        topics = tmp_path / "topics.bin"
        filtered = tmp_path / "filtered.bin"
        assert main(["ingest", "--input", str(records), "--out", str(corpus)]) == 0
        assert main(["embed", "--corpus", str(corpus), "--offline", "--offline-dim", "32", "--out", str(emb)]) == 0
        assert main(["reduce", "--embeddings", str(emb), "--dim", "2", "--epochs", "30", "--out", str(red)]) == 0
        assert main(["cluster", "--reduced", str(red), "--grid", "3,10", "--out", str(topics), "--report", str(tmp_path / "tuning.csv")]) == 0
        assert main(["filter", "--topics", str(topics), "--corpus", str(corpus), "--out", str(filtered), "--report", str(tmp_path / "halfline.csv")]) == 0
        assert main(["diverge", "--topics", str(filtered), "--corpus", str(corpus), "--out", str(tmp_path / "div.csv")]) == 0
        assert main(["bias", "--topics", str(filtered), "--embeddings", str(emb), "--corpus", str(corpus), "--out", str(tmp_path / "bias.csv")]) == 0
        assert main(["bias-report", "--in", str(tmp_path / "bias.csv"), "--out", str(tmp_path / "strata.json")]) == 0
        assert json.loads((tmp_path / "strata.json").read_text())["n_topics"] >= 2

    def test_missing_file_is_clean_error(self, tmp_path):
        assert main(["ingest", "--input", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "c.bin")]) == 1

    def test_run_reports_stage_failures(self, tmp_path):
        (tmp_path / "records.jsonl").write_text('{"bad": true}\n')
        config_path = _write_config(tmp_path)
        assert main(["run", "--config", str(config_path)]) == 2
