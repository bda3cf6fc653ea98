from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from faultharness.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def _gen(runner, tmp_path, n=14, seed=7, extra=()):
    tmp_path.mkdir(parents=True, exist_ok=True)
    out = tmp_path / "suite.jsonl"
    result = runner.invoke(
        main,
        ["gen-suite", "--n", str(n), "--seed", str(seed), "--out", str(out), *extra],
    )
    assert result.exit_code == 0, result.output
    return out


def test_gen_suite_writes_cards_and_manifest(runner, tmp_path):
    out = _gen(runner, tmp_path)
    lines = out.read_text().splitlines()
    assert len(lines) == 14
    manifest = json.loads((tmp_path / "suite.jsonl.manifest.json").read_text())
    assert manifest["n_cards"] == 14
    assert manifest["spec"]["master_seed"] == 7


def test_gen_suite_rerun_is_byte_identical(runner, tmp_path):
    a = _gen(runner, tmp_path / "a", n=21, seed=9)
    b = _gen(runner, tmp_path / "b", n=21, seed=9)
    assert a.read_bytes() == b.read_bytes()


def test_gen_suite_holdout_writes_pruned_bank(runner, tmp_path):
    out = _gen(
        runner, tmp_path, n=7, seed=3,
        extra=["--hold-out", "http_503", "--clean-fraction", "0"],
    )
    bank_doc = json.loads((tmp_path / "suite.jsonl.bank.json").read_text())
    kinds = {ex["pattern"].get("kind") for ex in bank_doc["exemplars"]}
    assert "http_503" not in kinds
    cards = [json.loads(line) for line in out.read_text().splitlines()]
    assert all(c["plan"]["kind"] == "http_503" for c in cards)


def test_evaluate_writes_reports(runner, tmp_path):
    suite = _gen(runner, tmp_path, n=14, seed=5)
    result = runner.invoke(
        main,
        [
            "evaluate", "--suite", str(suite), "--agent", "paladin",
            "--seed", "42", "--out-dir", str(tmp_path / "runs"),
            "--n-resamples", "50",
        ],
    )
    assert result.exit_code == 0, result.output
    run_dirs = list((tmp_path / "runs").iterdir())
    assert len(run_dirs) == 1
    for name in ("report.json", "report.csv", "trajectories.jsonl", "manifest.json"):
        assert (run_dirs[0] / name).exists()
    report = json.loads((run_dirs[0] / "report.json").read_text())
    assert report["n_episodes"] == 14
    assert 0 <= report["tsr"] <= 1


def test_evaluate_assert_flag_sets_exit_code(runner, tmp_path):
    suite = _gen(runner, tmp_path, n=14, seed=5)
    result = runner.invoke(
        main,
        [
            "evaluate", "--suite", str(suite), "--agent", "vanilla",
            "--seed", "1", "--out-dir", str(tmp_path / "runs"),
            "--n-resamples", "10", "--assert-min-rr", "0.99",
        ],
    )
    assert result.exit_code == 1


def test_evaluate_no_retrieval_flag(runner, tmp_path):
    suite = _gen(runner, tmp_path, n=14, seed=5)
    for flag, out in ((None, "with"), ("--no-retrieval", "without")):
        args = [
            "evaluate", "--suite", str(suite), "--agent", "paladin",
            "--seed", "42", "--out-dir", str(tmp_path / out),
            "--n-resamples", "10",
        ]
        if flag:
            args.append(flag)
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.output

    def rr(base):
        run_dir = next((tmp_path / base).iterdir())
        return json.loads((run_dir / "report.json").read_text())["rr"]

    assert rr("without") < rr("with")


def test_evaluate_jobs_match_serial(runner, tmp_path):
    suite = _gen(runner, tmp_path, n=14, seed=5)
    outputs = []
    for jobs, out in (("1", "serial"), ("4", "parallel")):
        result = runner.invoke(
            main,
            [
                "evaluate", "--suite", str(suite), "--agent", "critic",
                "--seed", "11", "--out-dir", str(tmp_path / out),
                "--jobs", jobs, "--n-resamples", "10",
            ],
        )
        assert result.exit_code == 0, result.output
        run_dir = next((tmp_path / out).iterdir())
        outputs.append((run_dir / "trajectories.jsonl").read_bytes())
    assert outputs[0] == outputs[1]


def test_build_corpus_rule_teacher(runner, tmp_path):
    result = runner.invoke(
        main,
        [
            "build-corpus", "--target", "10", "--recovery-fraction", "0.8",
            "--teacher", "rule", "--seed", "3", "--out-dir", str(tmp_path / "corpus"),
        ],
    )
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "corpus" / "corpus.jsonl").read_text().splitlines()
    assert len(lines) == 10
    spans = json.loads((tmp_path / "corpus" / "spans.json").read_text())
    with_recovery = [tid for tid, s in spans.items() if s]
    assert len(with_recovery) == 8
    manifest = json.loads((tmp_path / "corpus" / "manifest.json").read_text())
    assert manifest["counts"] == {"recovery": 8, "clean": 2, "total": 10}


def test_build_corpus_remote_without_token_fails(runner, tmp_path, monkeypatch):
    monkeypatch.delenv("FAULTHARNESS_API_TOKEN", raising=False)
    result = runner.invoke(
        main,
        [
            "build-corpus", "--teacher", "remote", "--seed", "1",
            "--endpoint-url", "http://localhost:9",
            "--out-dir", str(tmp_path / "c"),
        ],
    )
    assert result.exit_code != 0
    assert "FAULTHARNESS_API_TOKEN" in result.output


def test_build_corpus_rerun_identical(runner, tmp_path):
    for name in ("a", "b"):
        result = runner.invoke(
            main,
            [
                "build-corpus", "--target", "10", "--seed", "3",
                "--out-dir", str(tmp_path / name),
            ],
        )
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a" / "corpus.jsonl").read_bytes() == (
        tmp_path / "b" / "corpus.jsonl"
    ).read_bytes()


def test_convert_dictionary(runner, tmp_path):
    src = tmp_path / "legacy.py"
    src.write_text(
        'recovery_paths = {\n'
        '  "400_422": [{"from": "Assistant", "value": "Thoughts: fix the request."}],\n'
        '  "401_403_407": [{"from": "Assistant", "value": "Thoughts: creds."}],\n'
        '  "404": [{"from": "Assistant", "value": "Thoughts: missing."}],\n'
        '  "partial_output": [{"from": "Assistant", "value": "Thoughts: partial."}],\n'
        '  "malformed_json": [{"from": "Assistant", "value": "Thoughts: parse."}],\n'
        '  "inconsistent_state": [{"from": "Assistant", "value": "Thoughts: state."}],\n'
        '  "500_503": [{"from": "Assistant", "value": "Thoughts: retry."}],\n'
        '}\n'
    )
    out = tmp_path / "bank.json"
    result = runner.invoke(
        main, ["convert-dictionary", "--src", str(src), "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(out.read_text())
    auth = next(e for e in doc["exemplars"] if e["id"] == "branch_401_403_407")
    assert auth["kinds"] == ["http_401", "http_403", "http_407"]
    assert auth["script"][-1]["action"] == "terminate_gracefully"


def test_report_diff(runner, tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(json.dumps({"tsr": 0.5, "rr": 0.4, "csr": 1.0, "es": 0.3,
                             "composite": 0.5}))
    b.write_text(json.dumps({"tsr": 0.7, "rr": 0.6, "csr": 1.0, "es": 0.2,
                             "composite": 0.7}))
    result = runner.invoke(main, ["report-diff", str(a), str(b)])
    assert result.exit_code == 0
    assert "tsr: 0.5000 -> 0.7000 (delta +0.2000)" in result.output
