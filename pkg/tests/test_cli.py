from __future__ import annotations

import csv
import json
from importlib import resources

import pytest
import yaml
from statsmodels.stats.proportion import proportion_confint

from conftest import coin_spec
from magrisk.cli import main
from magrisk.core.events import EventKind, Trace
from magrisk.engine.runner import run_once
from magrisk.judge import DEFAULT_RULESET
from magrisk.scenarios import SCENARIO_NAMES, load_scenario, scenario_config


def shipped(name: str) -> str:
    return str(resources.files("magrisk").joinpath("data", f"{name}.yaml"))


def write_config(tmp_path, raw: dict, name: str = "cfg.yaml") -> str:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw, sort_keys=False))
    return str(path)


def coin_config(tmp_path, runs: int = 100) -> str:
    raw = {"schema": "magrisk/1", "scenario": {"inline": coin_spec(0.5).to_dict()},
           "ensemble": {"runs": runs, "seed_base": 7}, "metrics": []}
    return write_config(tmp_path, raw)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_fraud_monoculture(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", shipped("fraud-monoculture"), "--runs", "5", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["metrics"]["entropy"]["bits"] == 0.0
    assert report["ensemble"]["n"] == 5
    assert len(list((out / "traces").glob("*.jsonl"))) == 5
    assert "artifacts written" in capsys.readouterr().out


def test_malformed_config_exits_2_with_position(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("schema: magrisk/1\nscenario: {name: x\n  bad: [\n")
    assert main(["run", "--config", str(path)]) == 2
    assert f"{path}:3:6" in capsys.readouterr().err


def test_invalid_config_exits_3(tmp_path, capsys):
    path = write_config(tmp_path, {"schema": "magrisk/1", "scenario": {"name": "no-such-thing"}})
    assert main(["run", "--config", path]) == 3
    assert "invalid" in capsys.readouterr().err


def test_run_then_replay(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = shipped("supply-chain-cascade")
    assert main(["run", "--config", cfg, "--runs", "3", "--out", str(out)]) == 0
    traces = sorted(str(p) for p in (out / "traces").glob("*.jsonl"))
    assert main(["replay", "--config", cfg, "--runs", "3", *traces]) == 0
    assert capsys.readouterr().out.count("identical") == 3


def test_tampered_trace_diverges(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = shipped("power-grid-ambiguity")
    main(["run", "--config", cfg, "--runs", "1", "--out", str(out)])
    path = next((out / "traces").glob("*.jsonl"))
    trace = Trace.load(path)
    idx = next(i for i, e in enumerate(trace.events) if e.kind is EventKind.MESSAGE_SENT)
    lines = path.read_text().splitlines()
    row = json.loads(lines[idx + 1])
    row["data"]["content"] = "tampered"
    lines[idx + 1] = json.dumps(row, sort_keys=True, separators=(",", ":"))
    path.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["replay", "--config", cfg, "--runs", "1", str(path)]) == 1
    assert f"DIVERGED at event {idx}" in capsys.readouterr().out


def test_replay_under_other_config_exits_3(tmp_path):
    out = tmp_path / "out"
    cfg = shipped("retail-tom")
    main(["run", "--config", cfg, "--runs", "1", "--out", str(out)])
    path = next((out / "traces").glob("*.jsonl"))
    assert main(["replay", "--config", cfg, "--runs", "2", str(path)]) == 3


def test_sweep_over_drop_duration(tmp_path, capsys):
    raw = scenario_config("supply-chain-cascade", runs=4)
    raw["injections"] = [{"label": "cut", "trigger": {"at_step": 0},
                          "action": {"type": "DropChannel", "sender": "forecaster", "recipient": "procurement",
                                     "duration": 1}}]
    cfg = write_config(tmp_path, raw)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", cfg, "--label", "cut", "--field", "duration", "--values", "0,1,2,3",
                 "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert [r["point"] for r in rows] == ["0", "1", "2", "3"]
    assert all(r["n"] == "4" for r in rows)
    assert len(capsys.readouterr().out.splitlines()) == 4


def _self_labelled(tmp_path):
    pkg = load_scenario("strategist-conformity")
    trace = run_once(pkg.spec, pkg.seed).trace
    trace.save(tmp_path / "t.jsonl")
    rows = ["trace_file,event_index,gold_label,annotator_id"]
    cats = set()
    for i, e in enumerate(trace.events):
        if e.kind is EventKind.MESSAGE_SENT:
            label = DEFAULT_RULESET.classify_text(e.message.content).category.value
            cats.add(label)
            rows.append(f"t.jsonl,{i},{label},h1")
    path = tmp_path / "ann.csv"
    path.write_text("\n".join(rows) + "\n")
    return path, cats


def test_calibrate_judge_on_self_labelled_corpus(tmp_path, capsys):
    path, cats = _self_labelled(tmp_path)
    assert len(cats) >= 2  # otherwise kappa is undefined
    out = tmp_path / "cal"
    assert main(["calibrate-judge", "--annotations", str(path), "--out", str(out)]) == 0
    line = capsys.readouterr().out
    assert "accuracy 1.0000" in line and "kappa 1.0000" in line
    body = json.loads((out / "calibration.json").read_text())
    assert body["command"] == "calibrate-judge" and body["kappa"] == 1.0


def test_report_wilson_columns_match_statsmodels(tmp_path):
    out = tmp_path / "rep"
    assert main(["report", "--config", coin_config(tmp_path), "--out", str(out)]) == 0
    row = read_csv(out / "summary.csv")[0]
    n, k = int(row["n"]), int(row["failures"])
    assert n == 100
    lo, hi = proportion_confint(k, n, alpha=0.05, method="wilson")
    assert float(row["wilson_low"]) == pytest.approx(lo, abs=1e-4)
    assert float(row["wilson_high"]) == pytest.approx(hi, abs=1e-4)
    assert float(row["failure_rate"]) == k / n


def test_report_over_recorded_traces(tmp_path):
    cfg = coin_config(tmp_path, runs=6)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["report", "--config", cfg, "--traces", str(tmp_path / "a" / "traces"), "--out", str(tmp_path / "b")])
    live = read_csv(tmp_path / "a" / "summary.csv")[0]
    ingested = read_csv(tmp_path / "b" / "summary.csv")[0]
    assert (live["n"], live["failures"]) == (ingested["n"], ingested["failures"])


def test_reruns_are_byte_identical(tmp_path):
    cfg = coin_config(tmp_path, runs=8)
    for sub in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / sub), "--jobs", "1" if sub == "a" else "2"]) == 0
    first = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    second = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert first == second
    for rel in first:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_every_artifact_names_command_and_digest(tmp_path):
    cfg = coin_config(tmp_path, runs=3)
    out = tmp_path / "out"
    main(["run", "--config", cfg, "--out", str(out)])
    manifest = json.loads((out / "manifest.json").read_text())
    digest = manifest["config_digest"]
    assert manifest["command"] == "run"
    for name in ("summary.csv", "runs.csv"):
        rows = read_csv(out / name)
        assert rows and all(r["command"] == "run" and r["config_digest"] == digest for r in rows)
    report = json.loads((out / "report.json").read_text())
    assert (report["command"], report["config_digest"]) == ("run", digest)
    for path in (out / "traces").glob("*.jsonl"):
        meta = Trace.load(path).meta
        assert (meta["command"], meta["config_digest"]) == ("run", digest)
    assert set(manifest["files"]) >= {"summary.csv", "runs.csv", "report.json", "metrics.csv"}


def test_scenario_list_and_export(tmp_path, capsys):
    assert main(["scenario", "list"]) == 0
    listed = [line.split(":")[0] for line in capsys.readouterr().out.splitlines()]
    assert listed == list(SCENARIO_NAMES)
    path = tmp_path / "r.yaml"
    assert main(["scenario", "export", "retail-tom", "--out", str(path), "--runs", "3"]) == 0
    exported = yaml.safe_load(path.read_text())
    assert exported["ensemble"]["runs"] == 3
    assert exported["scenario"] == scenario_config("retail-tom")["scenario"]
    assert main(["scenario", "export"]) == 3
    assert main(["scenario", "export", "nope", "--out", str(path)]) == 3


def test_probe(capsys):
    pkg = load_scenario("retail-tom")
    assert main(["probe", "--config", shipped("retail-tom"), "--seed", str(pkg.seed), "--step", "2",
                 "--agent", "inventory", "--question", "What will pricing do next?"]) == 0
    assert capsys.readouterr().out.strip()


def test_probe_unknown_agent_is_runtime_error(capsys):
    assert main(["probe", "--config", shipped("retail-tom"), "--seed", "1", "--step", "0",
                 "--agent", "ghost", "--question", "?"]) in (3, 4)
