import json
import time

import pytest

from eventflow.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_DATA, EXIT_OK, main

SMALL = {"synth_days": 21, "epochs": 2, "d_h": 8, "batch_size": 64, "timing_sensors": [4], "timing_repeats": 10}


def run(tmp_path, *argv, config=None):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, **(config or {})}))
    return main([*argv, "--config", str(cfg)])


def lines(path):
    return path.read_text().splitlines()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> agents -> train -> eval -> agents --evaluate, timed end to end."""
    d = tmp_path_factory.mktemp("run")
    out = str(d / "out")
    t0 = time.perf_counter()
    codes = {"synth": run(d, "synth", "--out", out), "agents": run(d, "agents", "--out", out)}
    first = lines(d / "out" / "contexts.jsonl")
    codes["train"] = run(d, "train", "--out", out)
    codes["eval"] = run(d, "eval", "--out", out)
    smoke_s = time.perf_counter() - t0
    codes["revise"] = run(d, "agents", "--out", out, "--evaluate", str(d / "out" / "error_stats.json"))
    return d / "out", codes, first, smoke_s


def test_end_to_end(pipeline):
    out, codes, first, smoke_s = pipeline
    assert set(codes.values()) == {EXIT_OK}
    assert smoke_s < 300
    for name in ("checkpoint.json", "loss_trace.json", "splits.json", "report.json", "report.csv", "error_stats.json", "resolved_config.json"):
        assert (out / name).exists(), name
    assert (out / "figdata" / "mae_by_radius.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert {"full", "persistence", "seasonal_mean"} <= set(report["slices"]["3km_2h_by_time"])


def test_agents_one_context_per_event(pipeline):
    out, _, first, _ = pipeline
    assert len(first) == len(lines(out / "events.jsonl"))


def test_revised_logic_changes_contexts(pipeline):
    out, _, first, _ = pipeline
    store = json.loads((out / "logic_store.json").read_text())
    assert store["revision"] == 2 and len(store["history"]) == 2
    second = lines(out / "contexts.jsonl")
    assert len(second) == len(first)
    before = {json.loads(l)["event_id"]: json.loads(l)["traffic_conditions"] for l in first}
    after = {json.loads(l)["event_id"]: json.loads(l)["traffic_conditions"] for l in second}
    assert any(before[k] != after[k] for k in before)


def test_synth_manifest_is_reproducible(tmp_path):
    assert run(tmp_path, "synth", "--out", str(tmp_path / "a"), "--seed", "4") == EXIT_OK
    assert run(tmp_path, "synth", "--out", str(tmp_path / "b"), "--seed", "4") == EXIT_OK
    a = (tmp_path / "a" / "manifest.json").read_text()
    assert a == (tmp_path / "b" / "manifest.json").read_text()
    assert json.loads(a)["counts"]["sensors"] == 20
    assert run(tmp_path, "synth", "--out", str(tmp_path / "c"), "--seed", "5") == EXIT_OK
    assert (tmp_path / "c" / "manifest.json").read_text() != a


def test_train_is_idempotent(tmp_path):
    out = str(tmp_path / "o")
    run(tmp_path, "synth", "--out", out)
    run(tmp_path, "agents", "--out", out)
    run(tmp_path, "train", "--out", out, "--variant", "LF")
    first = (tmp_path / "o" / "checkpoint.json").read_bytes()
    run(tmp_path, "train", "--out", out, "--variant", "LF")
    assert (tmp_path / "o" / "checkpoint.json").read_bytes() == first


def test_zero_sensors_is_config_error(tmp_path, capsys):
    assert run(tmp_path, "synth", "--out", str(tmp_path / "o"), config={"synth_n_sensors": 0}) == EXIT_CONFIG
    assert "n_sensors" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    assert run(tmp_path, "synth", "--out", str(tmp_path / "o"), config={"learning_rate": 1}) == EXIT_CONFIG


def test_missing_inputs_are_data_errors(tmp_path, capsys):
    assert run(tmp_path, "train", "--out", str(tmp_path / "empty")) == EXIT_DATA
    assert "eventflow synth" in capsys.readouterr().err


def test_empty_stats_leave_store_untouched(tmp_path, capsys):
    out = tmp_path / "o"
    run(tmp_path, "synth", "--out", str(out))
    run(tmp_path, "agents", "--out", str(out))
    store = (out / "logic_store.json").read_text()
    empty = tmp_path / "stats.json"
    empty.write_text(json.dumps({"n_windows": 0}))
    assert run(tmp_path, "agents", "--out", str(out), "--evaluate", str(empty)) == EXIT_DATA
    assert "empty" in capsys.readouterr().err
    assert (out / "logic_store.json").read_text() == store


def test_backend_failures_exit_nonzero(tmp_path, monkeypatch):
    monkeypatch.delenv("SEMOB_API_KEY", raising=False)
    out = str(tmp_path / "o")
    run(tmp_path, "synth", "--out", out)
    code = run(tmp_path, "agents", "--out", out, "--backend", "http", config={"backend_url": "http://127.0.0.1:9/none"})
    assert code == EXIT_BACKEND


def test_paper_fixture_eval(tmp_path, capsys):
    assert run(tmp_path, "eval", "--paper-fixture", "--out", str(tmp_path / "o")) == EXIT_OK
    text = capsys.readouterr().out
    assert "RMSE reduction vs best baseline (GWNET), 3km 2h by_type: 11.12%" in text
    assert "MAE reduction" in text and "13.90%" in text


def test_ablate_timing_report(tmp_path, capsys):
    out = str(tmp_path / "o")
    run(tmp_path, "synth", "--out", out)
    run(tmp_path, "agents", "--out", out)
    assert run(tmp_path, "ablate", "--out", out, config={"epochs": 1}) == EXIT_OK
    rep = json.loads((tmp_path / "o" / "ablation" / "report.json").read_text())
    assert all(len(per) == 7 for per in rep["slices"].values())
    assert run(tmp_path, "timing", "--out", out) == EXIT_OK
    assert json.loads((tmp_path / "o" / "runtime.json").read_text())["stats"]["M4"]["median_s"] > 0
    capsys.readouterr()
    assert run(tmp_path, "report", "--out", out) == EXIT_OK
    text = capsys.readouterr().out
    assert "ablation:no_STE" in text and "forward M4" in text
    assert (tmp_path / "o" / "summary" / "report.csv").exists()
