"""End-to-end tests for the command line, offline backend only."""
import json

import pytest

from rarescale.cli import main


def _error_line(capsys) -> dict:
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    assert lines, "expected a JSON error line on stderr"
    return json.loads(lines[-1])


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Synthesize a KB and push it through every stage once."""
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    config = root / "pipeline.json"
    config.write_text(json.dumps({
        "simulation": {"max_attempts": 15, "min_valid": 1},
        "workers": 2,
    }), encoding="utf-8")
    common = ["--config", str(config), "--out", str(out)]
    codes = {}
    codes["kb-synth"] = main(["kb-synth", *common, "--seed", "7", "--diseases", "20", "--findings", "60"])
    kb = str(out / "kb.json")
    for command in ("kb-validate", "simulate", "chats", "split", "stats", "export-pairs"):
        codes[command] = main([command, *common, "--kb", kb, "--seed", "7"])
    codes["eval-ddx"] = main(["eval-ddx", *common, "--kb", kb, "--split", "all"])
    codes["eval-ddx-reference"] = main([
        "eval-ddx", *common, "--kb", kb, "--split", "all", "--candidates", "reference",
        "--baseline", str(out / "eval_ddx_none_all_verdicts.jsonl"),
    ])
    codes["eval-candidates"] = main([
        "eval-candidates", *common, "--kb", kb, "--split", "all", "--candidates", "reference",
    ])
    return out, codes


def test_every_stage_succeeds(run):
    _, codes = run
    assert codes == {name: 0 for name in codes}


def test_stage_outputs_exist(run):
    out, _ = run
    for name in (
        "kb.json", "cases.jsonl", "simulation_report.json", "chats.jsonl", "chats.txt",
        "corpus.jsonl", "phrase_bank.json", "chats_report.json", "train.jsonl", "val.jsonl",
        "test.jsonl", "split_report.json", "stats.json", "pairs_train.jsonl",
        "CALLS.md", "eval_ddx_none_all.json", "eval_ddx_none_all.txt",
        "eval_ddx_reference_all_verdicts.jsonl", "eval_candidates_reference_all.json",
    ):
        assert (out / name).exists(), name


def test_corpus_counts_are_consistent(run):
    out, _ = run
    chats = json.loads((out / "chats_report.json").read_text(encoding="utf-8"))
    assert chats["retained"] > 0
    assert chats["generated"] == chats["discarded"] + chats["retained"]
    split_sizes = sum(
        len((out / f"{name}.jsonl").read_text(encoding="utf-8").splitlines())
        for name in ("train", "val", "test")
    )
    assert 0 < split_sizes <= chats["retained"]
    ddx = json.loads((out / "eval_ddx_none_all.json").read_text(encoding="utf-8"))
    assert ddx["n"] == chats["retained"]


def test_reference_candidates_help_and_are_compared(run):
    out, _ = run
    plain = json.loads((out / "eval_ddx_none_all.json").read_text(encoding="utf-8"))
    boosted = json.loads((out / "eval_ddx_reference_all.json").read_text(encoding="utf-8"))
    assert plain["top5"] == 0.0
    assert boosted["top5"] == 1.0
    assert boosted["baseline"] == "eval_ddx_none_all_verdicts.jsonl"
    assert boosted["p_value"] is not None
    assert boosted["p_value"] < 0.01


def test_unknown_command_is_a_usage_error(tmp_path, capsys):
    assert main(["fly", "--out", str(tmp_path)]) == 2
    error = _error_line(capsys)
    assert error["error"] == "usage-error"
    assert error["error_type"] == "UsageError"


def test_bad_log_level_is_a_usage_error(tmp_path, capsys):
    assert main(["stats", "--out", str(tmp_path), "--log-level", "LOUD"]) == 2
    assert _error_line(capsys)["error"] == "usage-error"


def test_missing_kb_is_a_config_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--kb", str(tmp_path / "nope.json")]) == 2
    error = _error_line(capsys)
    assert error["error"] == "config-error"
    assert "nope.json" in error["message"]


def test_unknown_config_key_is_a_config_error(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"out": "o", "colour": "blue"}), encoding="utf-8")
    assert main(["kb-synth", "--config", str(config)]) == 2
    error = _error_line(capsys)
    assert error["error"] == "config-error"
    assert "colour" in error["message"]


def test_kb_validate_lists_violations(tmp_path, capsys):
    kb = tmp_path / "broken.json"
    kb.write_text(json.dumps({
        "format": "rarescale-kb",
        "version": 1,
        "findings": [{"id": "F1", "name": "fever", "kind": "symptom", "import": 2}],
        "diseases": [{"id": "D1", "name": "alpha", "categories": [],
                      "links": [{"finding": "F9", "evoking_strength": 3, "frequency": 4}]}],
    }), encoding="utf-8")
    assert main(["kb-validate", "--kb", str(kb), "--out", str(tmp_path / "out")]) == 1
    captured = capsys.readouterr()
    assert "D1" in captured.out
    error = json.loads(captured.err.strip().splitlines()[-1])
    assert error["error"] == "kb-integrity"


def test_eval_candidates_without_source_is_a_config_error(run, capsys):
    out, _ = run
    assert main(["eval-candidates", "--out", str(out), "--kb", str(out / "kb.json"), "--split", "all"]) == 2
    assert _error_line(capsys)["error"] == "config-error"
