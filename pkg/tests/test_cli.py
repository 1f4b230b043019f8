import json

import pytest
from click.testing import CliRunner

from partlab.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    result = runner.invoke(main, [
        "generate", "--family", "chair", "--out", str(root / "data"),
        "--train", "8", "--test", "16", "--seed", "2",
    ])
    assert result.exit_code == 0, result.output
    return root


def invoke(args):
    runner = CliRunner()
    return runner.invoke(main, args)


def test_generate_wrote_manifests(workspace):
    data = workspace / "data"
    assert (data / "test.json").exists()
    assert (data / "train" / "train.json").exists()
    manifest = json.loads((data / "test.json").read_text())
    assert len(manifest["shapes"]) == 16


def test_simulate_deterministic_reports(workspace):
    data = workspace / "data"
    args = [
        "simulate", "--dataset", str(data / "test.json"),
        "--train-dataset", str(data / "train" / "train.json"),
        "--seed", "7", "--pool-stop", "6", "--sample-points", "2048",
    ]
    a = invoke(args + ["--out", str(workspace / "rep_a.json"),
                       "--audit", str(workspace / "audit_a.jsonl")])
    assert a.exit_code == 0, a.output
    b = invoke(args + ["--out", str(workspace / "rep_b.json"),
                       "--audit", str(workspace / "audit_b.jsonl")])
    assert b.exit_code == 0, b.output
    assert (workspace / "rep_a.json").read_bytes() == \
        (workspace / "rep_b.json").read_bytes()
    assert (workspace / "audit_a.jsonl").read_bytes() == \
        (workspace / "audit_b.jsonl").read_bytes()
    report = json.loads((workspace / "rep_a.json").read_text())
    assert report["metrics"]["part_accuracy"] == 1.0
    assert report["seed"] == 7
    assert report["config"]["pool_stop"] == 6


def test_simulate_random_proposer(workspace):
    data = workspace / "data"
    result = invoke([
        "simulate", "--dataset", str(data / "test.json"),
        "--proposer", "random", "--seed", "1", "--pool-stop", "6",
        "--sample-points", "1024",
        "--out", str(workspace / "rep_rand.json"),
    ])
    assert result.exit_code == 0, result.output
    report = json.loads((workspace / "rep_rand.json").read_text())
    assert report["metrics"]["part_accuracy"] == 1.0


def test_simulate_builtin_requires_train(workspace):
    data = workspace / "data"
    result = invoke([
        "simulate", "--dataset", str(data / "test.json"),
        "--out", str(workspace / "nope.json"),
    ])
    assert result.exit_code != 0
    assert "train-dataset" in result.output


def test_pretrain_then_simulate_with_models(workspace, tmp_path):
    data = workspace / "data"
    result = invoke([
        "pretrain", "--dataset", str(data / "train" / "train.json"),
        "--out", str(tmp_path / "models"), "--sample-points", "2048",
    ])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "models" / "models.json").exists()
    assert "chair" in result.output


def test_report_replays_audit(workspace):
    result = invoke(["report", "--session", str(workspace / "audit_a.jsonl")])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output)
    assert summary["complete"] is True
    report = json.loads((workspace / "rep_a.json").read_text())
    assert summary["cost"]["total_seconds"] == \
        report["cost"]["total_seconds"]


def test_report_truncated_log_names_line(workspace, tmp_path):
    lines = (workspace / "audit_a.jsonl").read_text().splitlines(keepends=True)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("".join(lines[:2]) + lines[2][:30])
    result = invoke(["report", "--session", str(bad)])
    assert result.exit_code != 0
    assert "line 3" in result.output


def test_ablate_emits_five_rows(workspace, tmp_path):
    data = workspace / "data"
    result = invoke([
        "ablate", "--dataset", str(data / "test.json"),
        "--train-dataset", str(data / "train" / "train.json"),
        "--seeds", "0", "--sample-points", "1024",
        "--out", str(tmp_path / "table.csv"),
    ])
    assert result.exit_code == 0, result.output
    csv_lines = (tmp_path / "table.csv").read_text().strip().splitlines()
    assert len(csv_lines) == 1 + 5  # header + five rows
    table = json.loads((tmp_path / "table.csv").with_suffix(".json")
                       .read_text())
    rows = {r["row"]: r for r in table["rows"]}
    assert set(rows) == {"modify_everything", "proposer_modify_all",
                         "flat_active", "hier_no_symmetry", "full"}
    for r in rows.values():
        assert r["per_seed"][0]["accuracy"] == 1.0
