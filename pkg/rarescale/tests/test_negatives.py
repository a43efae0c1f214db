"""Tests for negative example mining and the review sheet."""
import csv
import json

import pytest

from rarescale.case_simulator import SimTrace, Snapshot
from rarescale.errors import UnparseableVerdictError
from rarescale.llm_gateway import LlmClient, LlmConfig
from rarescale.negatives import (
    REVIEW_COLUMNS,
    negative_targets,
    parse_screen,
    run_negatives,
    write_negatives,
)
from rarescale.providers.mock import ScriptEntry, ScriptedMock
from rarescale.scorer import DdxEntry, RankedDdx


def _ddx(*ids):
    return RankedDdx(tuple(DdxEntry(d, 50 - 10 * i) for i, d in enumerate(ids)))


@pytest.fixture
def traced(make_record):
    trace = SimTrace((Snapshot(6, _ddx("D2", "D1", "D3")), Snapshot(9, _ddx("D1"))))
    return make_record("D1-0001", "D1", [("F01", "present")], trace=trace,
                       texts=("I have had a fever.", "My joints ache."))


def test_targets_are_dropped_intermediate_diagnoses(make_record, traced):
    untraced = make_record("D1-0002", "D1", [("F04", "present")])
    single = make_record("D1-0003", "D1", [("F02", "present")],
                         trace=SimTrace((Snapshot(6, _ddx("D2", "D1")),)))
    targets = negative_targets([traced, untraced, single])
    assert [(t.record.case_id, t.disease_id) for t in targets] == [("D1-0001", "D2"), ("D1-0001", "D3")]


def test_parse_screen():
    assert parse_screen("VERDICT: Yes\nEXPLANATION: Fits the rash.") == (True, "Fits the rash.")
    assert parse_screen("Some preamble\nverdict: no") == (False, "")
    with pytest.raises(UnparseableVerdictError):
        parse_screen("VERDICT: maybe\nEXPLANATION: hard to say")
    with pytest.raises(UnparseableVerdictError):
        parse_screen("EXPLANATION: forgot the verdict")


def test_screen_and_write_review_sheet(tiny_kb, traced, tmp_path):
    llm = LlmClient(LlmConfig(), mock=ScriptedMock([
        ScriptEntry("VERDICT: no\nEXPLANATION: No muscle findings.", tag="negative_screen",
                    match="RARE DISEASE: Beta syndrome"),
        ScriptEntry("VERDICT: yes\nEXPLANATION: Fever fits.", tag="negative_screen",
                    match="RARE DISEASE: Gamma disease"),
    ]))
    examples = run_negatives([traced], tiny_kb, llm, workers=2)
    assert [(e.negative_disease, e.possible, e.kept) for e in examples] == [("D2", False, True), ("D3", True, False)]
    assert examples[0].negative_name == "Beta syndrome alias beta complex"
    assert "FINDINGS" not in examples[0].transcript
    assert "PATIENT: My joints ache." in examples[0].transcript

    counts = write_negatives(tmp_path, examples)
    assert counts == {"screened": 2, "for_review": 1}
    lines = (tmp_path / "negatives.jsonl").read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["negative_disease"] for line in lines] == ["D2", "D3"]
    with open(tmp_path / "negatives_review.csv", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    assert tuple(reader.fieldnames) == REVIEW_COLUMNS
    assert len(rows) == 1
    assert rows[0]["negative_disease"] == "D2"
    assert rows[0]["screen_verdict"] == "not possible"
    assert rows[0]["reviewer_verdict"] == "" and rows[0]["reviewer_notes"] == ""


def test_unparseable_screen_propagates(tiny_kb, traced):
    llm = LlmClient(LlmConfig(), mock=ScriptedMock([ScriptEntry("I think so", repeat=True)]))
    with pytest.raises(UnparseableVerdictError):
        run_negatives([traced], tiny_kb, llm)
