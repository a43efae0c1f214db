"""Tests for metrics, judges, the DDx prompt, candidates and reports."""
import numpy as np
import pytest

from rarescale.errors import (
    EmptyInputError,
    EvaluationError,
    LengthMismatchError,
    UnknownEntityError,
    UnparseableLabelError,
    UnparseableResponseError,
    UnparseableVerdictError,
)
from rarescale.evaluation import (
    CandidateList,
    EvalReport,
    ExternalCandidates,
    ReferenceCandidates,
    SimilarityLabel,
    Verdict,
    build_ddx_prompt,
    category_breakdown,
    evaluate_candidates,
    evaluate_ddx,
    judge_binary,
    judge_similarity,
    label_distribution,
    metrics_from_ranks,
    parse_name_list,
    parse_similarity,
    parse_yes_no,
    read_verdicts,
    reciprocal_rank,
    run_ddx,
    topk_mrr,
)
from rarescale.llm_gateway import LlmClient, LlmConfig
from rarescale.providers.mock import ScriptEntry, ScriptedMock
from rarescale.providers.offline import COMMON_DIAGNOSES, RARE_GUESSES
from rarescale.scorer import CaseFindings
from rarescale.templates import render_named

CHAT = "PROVIDER: What brings you in today?\nPATIENT: I have had a fever."


def _scripted(*entries: ScriptEntry) -> LlmClient:
    return LlmClient(LlmConfig(), mock=ScriptedMock(list(entries)))


def _verdict(case_id, disease_id, rank):
    return Verdict(case_id, disease_id, "gold", (), rank)


@pytest.fixture
def records(make_record):
    return [
        make_record("D1-0001", "D1", [("F01", "present"), ("F04", "present"), ("F06", "absent")],
                    texts=("I have had a fever and my joints hurt.",)),
        make_record("D2-0001", "D2", [("F04", "present"), ("F06", "present")],
                    texts=("My joints hurt and I get headaches.",)),
    ]


# -- metrics ----------------------------------------------------------------------

def test_hand_computed_metrics():
    m = metrics_from_ranks([1, None, 3, 2])
    assert m.n == 4
    assert m.top1 == 0.25
    assert m.top5 == 0.75
    assert m.mrr == pytest.approx((1 + 1 / 3 + 1 / 2) / 4)
    assert m.to_dict()["mrr"] == pytest.approx(0.458333, abs=1e-6)


def test_topk_mrr_caps_lists_at_five():
    predictions = [
        ["Alpha fever"],
        ["a", "b", "c", "d", "e", "Alpha fever"],
        ["x", "ALPHA  fever"],
    ]
    m = topk_mrr(predictions, ["alpha fever"] * 3)
    assert m.ranks == (1, None, 2)
    assert m.top5 == pytest.approx(2 / 3)
    with pytest.raises(LengthMismatchError):
        topk_mrr(predictions, ["alpha fever"])
    with pytest.raises(EmptyInputError):
        topk_mrr([], [])


def test_reciprocal_rank_bounds():
    assert reciprocal_rank(1) == 1.0
    assert reciprocal_rank(5) == 0.2
    assert reciprocal_rank(6) == 0.0
    assert reciprocal_rank(None) == 0.0


def _oracle_metrics(predictions, golds):
    ranks = []
    for names, gold in zip(predictions, golds):
        hits = [i for i, name in enumerate(names[:5], 1) if name.casefold() == gold.casefold()]
        ranks.append(hits[0] if hits else None)
    n = len(ranks)
    top1 = sum(1 for r in ranks if r == 1) / n
    top5 = sum(1 for r in ranks if r is not None) / n
    mrr = sum(1.0 / r if r is not None else 0.0 for r in ranks) / n
    return top1, top5, mrr


def test_topk_mrr_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    pool = [f"Disease {i}" for i in range(12)]
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        predictions, golds = [], []
        for _ in range(n):
            size = int(rng.integers(0, 9))
            picks = rng.choice(len(pool), size=size, replace=False)
            names = [pool[i].upper() if rng.random() < 0.3 else pool[i] for i in picks]
            predictions.append(names)
            golds.append(pool[int(rng.integers(len(pool)))])
        m = topk_mrr(predictions, golds)
        assert (m.top1, m.top5, m.mrr) == _oracle_metrics(predictions, golds)


# -- judges -------------------------------------------------------------------------

def test_binary_judge_stops_at_first_yes():
    judge = _scripted(ScriptEntry("no", tag="judge_binary"), ScriptEntry("Yes", tag="judge_binary"))
    assert judge_binary(judge, ["a", "b", "c"], "b") == 2
    assert judge.mock.calls == 2


def test_binary_judge_asks_about_every_entry_on_a_miss():
    judge = _scripted(ScriptEntry(" no \n", tag="judge_binary", repeat=True))
    assert judge_binary(judge, ["a", "b", "c", "d"], "z") is None
    assert judge.mock.calls == 4
    assert judge_binary(judge, [], "z") is None
    assert judge.mock.calls == 4


def test_binary_judge_rejects_long_lists_and_loose_answers():
    judge = _scripted(ScriptEntry("Yes, they match.", tag="judge_binary", repeat=True))
    with pytest.raises(EvaluationError):
        judge_binary(judge, list("abcdef"), "a")
    with pytest.raises(UnparseableVerdictError):
        judge_binary(judge, ["a"], "a")


@pytest.mark.parametrize("text, expected", [("yes", True), (" NO\n", False), ("Yes", True)])
def test_parse_yes_no(text, expected):
    assert parse_yes_no(text) is expected


@pytest.mark.parametrize("text", ["y", "yes.", "no, not really", ""])
def test_parse_yes_no_is_strict(text):
    with pytest.raises(UnparseableVerdictError):
        parse_yes_no(text)


def test_similarity_labels():
    assert parse_similarity("  Exact   Match\n") is SimilarityLabel.EXACT_MATCH
    with pytest.raises(UnparseableLabelError):
        parse_similarity("very related")
    judge = _scripted(ScriptEntry("relevant", tag="judge_similarity", match="1. Beta"))
    assert judge_similarity(judge, ["Beta syndrome"], "Beta syndrome") is SimilarityLabel.RELEVANT
    counts = label_distribution([SimilarityLabel.RELEVANT, "relevant", SimilarityLabel.UNRELATED])
    assert list(counts) == ["unrelated", "somewhat related", "relevant", "extremely relevant", "exact match"]
    assert counts["relevant"] == 2 and counts["exact match"] == 0


def test_empty_ddx_is_shown_to_similarity_judge():
    judge = _scripted(ScriptEntry("unrelated", tag="judge_similarity", match="(empty)"))
    assert judge_similarity(judge, [], "Alpha fever") is SimilarityLabel.UNRELATED


# -- prompt + ddx ---------------------------------------------------------------------

def test_ddx_prompt_differs_only_by_candidate_block():
    candidates = CandidateList.of(["Fabry disease", "Pompe disease"])
    base = build_ddx_prompt(CHAT)
    with_candidates = build_ddx_prompt(CHAT, candidates)
    block = render_named("ddx_candidates", {"candidates": "- Fabry disease\n- Pompe disease"})
    assert "[RARE CANDIDATES]" not in base
    assert with_candidates.replace(block, "") == base
    assert build_ddx_prompt(CHAT, CandidateList()) == base
    with pytest.raises(EvaluationError):
        build_ddx_prompt("   ")


def test_run_ddx_truncates_and_flags_candidates(caplog):
    reply = "BEGIN DDX\n" + "\n".join(f"{i}. Dx {i}" for i in range(1, 8)) + "\nEND DDX"
    reply = reply.replace("2. Dx 2", "2. alpha  FEVER")
    llm = _scripted(ScriptEntry(reply, tag="ddx"))
    result = run_ddx(llm, CHAT, CandidateList.of(["Alpha fever"]))
    assert result.names == ("Dx 1", "alpha  FEVER", "Dx 3", "Dx 4", "Dx 5")
    assert result.from_candidates == (False, True, False, False, False)
    assert result.warnings and "truncated" in result.warnings[0]
    assert "truncated" in caplog.text


def test_run_ddx_needs_markers():
    llm = _scripted(ScriptEntry("1. Alpha fever", tag="ddx"))
    with pytest.raises(UnparseableResponseError):
        run_ddx(llm, CHAT)


def test_parse_name_list_variants():
    text = "preamble\nBEGIN LIST\n1) One\n- Two\n* Three\n\nFour\nEND LIST"
    assert parse_name_list(text, "BEGIN LIST", "END LIST") == ["One", "Two", "Three", "Four"]
    assert parse_name_list("1. A\n2. B", "BEGIN LIST", "END LIST", require_markers=False) == ["A", "B"]
    with pytest.raises(UnparseableResponseError):
        parse_name_list("BEGIN LIST\n1. A", "BEGIN LIST", "END LIST")


def test_candidate_list_rules():
    assert CandidateList.of(["A", " a ", "", "B", "C", "D", "E", "F"]).names == ("A", "B", "C", "D", "E")
    with pytest.raises(EvaluationError):
        CandidateList(("A", "a"))
    with pytest.raises(EvaluationError):
        CandidateList(tuple("abcdef"))
    assert not CandidateList()


# -- candidate backends ------------------------------------------------------------------

def test_reference_candidates_stay_in_rare_world(tiny_kb, weights):
    backend = ReferenceCandidates(tiny_kb, weights)
    case = CaseFindings.of([("F01", "present"), ("F04", "present"), ("F06", "absent")])
    assert backend.generate(case).names == ("Alpha fever", "Beta syndrome alias beta complex")
    # headache points at D3, which is not rare
    assert "Gamma disease" not in backend.generate(CaseFindings.of([("F06", "present")])).names
    with pytest.raises(EvaluationError):
        backend.for_findings(None)


def test_external_candidates(offline_llm, records):
    backend = ExternalCandidates(offline_llm)
    assert backend.generate(records[0]).names == RARE_GUESSES
    raw = ExternalCandidates(_scripted(ScriptEntry("1. A\n2. B\n3. b", tag="candidates")), prompt="raw")
    assert raw.generate(CHAT).names == ("A", "B")
    with pytest.raises(EvaluationError):
        backend.for_text("")


# -- categories + reports ------------------------------------------------------------------

def test_category_breakdown_counts_every_category(tiny_kb):
    rows = category_breakdown([_verdict("a", "D1", 1), _verdict("b", "D2", None), _verdict("c", "D2", 2)], tiny_kb)
    by_name = {row.category: row.metrics for row in rows}
    assert [row.category for row in rows] == sorted(by_name)
    assert by_name["Infectious disease"].top1 == 1.0
    assert by_name["Immune system disorders"].n == 2
    assert by_name["Musculoskeletal disorders"].mrr == pytest.approx(0.25)
    assert "Metabolic disorders" not in by_name
    with pytest.raises(UnknownEntityError):
        category_breakdown([_verdict("d", "D404", 1)], tiny_kb)


def test_report_compare_exact_p():
    current = [_verdict(f"c{i}", "D1", 1) for i in range(6)]
    baseline = [_verdict(f"c{i}", "D1", None) for i in range(6)]
    report = EvalReport("ddx+reference", metrics_from_ranks([1] * 6))
    report.compare(current, baseline, "ddx")
    assert report.p_value == pytest.approx(0.03125)
    assert report.significance["method"] == "exact"
    assert "vs ddx: p=0.03125" in report.render()


def test_report_compare_too_few_differences():
    current = [_verdict(f"c{i}", "D1", 1) for i in range(4)]
    report = EvalReport("ddx", metrics_from_ranks([1] * 4))
    report.compare(current, current, "same")
    assert report.p_value is None
    assert report.notes and "no significance test" in report.notes[0]
    assert report.to_dict()["baseline"] == "same"


# -- batch runs ---------------------------------------------------------------------------

def test_candidate_injection_lifts_top5(tiny_kb, weights, offline_llm, records):
    plain, plain_verdicts = evaluate_ddx(records, tiny_kb, offline_llm, judge=offline_llm)
    assert plain.name == "ddx"
    assert plain.metrics.top5 == 0.0
    assert all(v.predictions == COMMON_DIAGNOSES for v in plain_verdicts)
    assert plain.labels["unrelated"] == 2

    boosted, verdicts = evaluate_ddx(
        records, tiny_kb, offline_llm, judge=offline_llm,
        candidates=ReferenceCandidates(tiny_kb, weights), workers=2,
    )
    assert boosted.name == "ddx+reference"
    assert boosted.metrics.top1 == 1.0
    assert boosted.labels["exact match"] == 2
    assert [v.case_id for v in verdicts] == ["D1-0001", "D2-0001"]
    for v in verdicts:
        assert v.from_candidates[0] is True
        assert v.candidates[0] == v.gold
    assert read_verdicts([v.to_dict() for v in verdicts]) == verdicts


def test_exact_match_fallback_without_judge(tiny_kb, weights, offline_llm, records):
    report, verdicts = evaluate_ddx(records, tiny_kb, offline_llm,
                                    candidates=ReferenceCandidates(tiny_kb, weights))
    assert report.metrics.top1 == 1.0
    assert report.labels == {}
    assert all(v.label is None for v in verdicts)


def test_evaluate_candidates(tiny_kb, weights, records):
    report, verdicts = evaluate_candidates(records, tiny_kb, ReferenceCandidates(tiny_kb, weights))
    assert report.name == "candidates:reference"
    assert [v.rank for v in verdicts] == [1, 1]
    with pytest.raises(EmptyInputError):
        evaluate_candidates([], tiny_kb, ReferenceCandidates(tiny_kb, weights))
