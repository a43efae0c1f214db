"""Tests for the additive diagnostic scorer."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rarescale.errors import CaseError, ConfigError, UnknownEntityError
from rarescale.knowledge_base import FindingKind, synth_kb
from rarescale.scorer import (
    CaseFindings,
    Polarity,
    RankedDdx,
    ScoreWeights,
    check_case,
    rank_ddx,
    score_all,
    score_disease,
)


def _case(*pairs):
    return CaseFindings.of(pairs)


def test_hand_computed_scores(tiny_kb, weights):
    """fever+, joint pain+, headache- over the tiny KB."""
    case = _case(("F01", "present"), ("F04", "present"), ("F06", "absent"))
    # D1: +40 (fever es5) +10 (joint pain es3)
    assert score_disease(tiny_kb, weights, case, "D1") == 50
    # D2: -10 (fever unlinked, import 3) +40 (joint pain es5) -4 (headache absent, freq 2)
    assert score_disease(tiny_kb, weights, case, "D2") == 26
    # D3: +1 (fever es1) -20 (joint pain unlinked, import 4) -18 (headache absent, freq 4)
    assert score_disease(tiny_kb, weights, case, "D3") == -37


def test_rank_keeps_positive_scores_in_order(tiny_kb, weights):
    case = _case(("F01", "present"), ("F04", "present"), ("F06", "absent"))
    ddx = rank_ddx(tiny_kb, weights, case)
    assert ddx.ids() == ["D1", "D2"]
    assert [e.score for e in ddx.entries] == [50, 26]
    assert ddx.seed_strictly_top("D1")
    assert not ddx.seed_strictly_top("D2")


def test_empty_case_gives_empty_ddx(tiny_kb, weights):
    assert len(rank_ddx(tiny_kb, weights, CaseFindings())) == 0


def test_ties_break_on_disease_id(tiny_kb, weights):
    # Demographics only: every disease links both sexes with es 1.
    case = _case(("dem-sex-male", "present"))
    ddx = rank_ddx(tiny_kb, weights, case)
    assert ddx.ids() == ["D1", "D2", "D3"]
    assert not ddx.seed_strictly_top("D1")


def test_restricted_closed_world(tiny_kb, weights):
    case = _case(("F06", "present"))
    assert rank_ddx(tiny_kb, weights, case).ids()[0] == "D3"
    assert "D3" not in rank_ddx(tiny_kb, weights, case, disease_ids=tiny_kb.rare_disease_ids()).ids()


def test_max_n_caps_the_list(tiny_kb, weights):
    case = _case(("dem-sex-male", "present"))
    assert rank_ddx(tiny_kb, weights, case, max_n=2).ids() == ["D1", "D2"]
    with pytest.raises(ValueError):
        rank_ddx(tiny_kb, weights, case, max_n=-1)


def test_unknown_finding_raises(tiny_kb, weights):
    with pytest.raises(UnknownEntityError):
        rank_ddx(tiny_kb, weights, _case(("F99", "present")))


def test_check_case_rejects_repeats_and_group_conflicts(tiny_kb):
    check_case(tiny_kb, _case(("F02", "present"), ("F03", "absent")))
    with pytest.raises(CaseError):
        check_case(tiny_kb, _case(("F01", "present"), ("F01", "absent")))
    with pytest.raises(CaseError):
        check_case(tiny_kb, _case(("F02", "present"), ("F03", "present")))


def test_weights_validation():
    assert ScoreWeights.from_dict({}).es_weight == (1, 4, 10, 20, 40)
    with pytest.raises(ConfigError):
        ScoreWeights(es_weight=(1, 2, 2, 3, 4))
    with pytest.raises(ConfigError):
        ScoreWeights(freq_penalty=(1, 2, 3))
    with pytest.raises(ConfigError):
        ScoreWeights.from_dict({"bonus": [1, 2, 3, 4, 5]})
    w = ScoreWeights.from_dict({"es_weight": [2, 5, 11, 21, 41]})
    assert ScoreWeights.from_dict(w.to_dict()) == w


def test_ranked_ddx_list_round_trip(tiny_kb, weights):
    ddx = rank_ddx(tiny_kb, weights, _case(("F04", "present")))
    assert RankedDdx.from_list(ddx.to_list()) == ddx


# -- properties ---------------------------------------------------------------

_KB = synth_kb(5, 25, 60)
_CLINICAL = [f.id for f in _KB.finding_records if f.kind is not FindingKind.DEMOGRAPHIC]


def _random_case(seed: int, size: int) -> CaseFindings:
    rng = np.random.default_rng(seed)
    ids = rng.choice(_CLINICAL, size=size, replace=False)
    return CaseFindings.of((str(fid), "present" if rng.random() < 0.5 else "absent") for fid in ids)


def _oracle(kb, w, case, max_n=5):
    scores = [(did, score_disease(kb, w, case, did)) for did in sorted(kb.diseases)]
    scores = [item for item in scores if item[1] > 0]
    scores.sort(key=lambda item: (-item[1], item[0]))
    return [did for did, _ in scores[:max_n]]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 20))
def test_rank_matches_brute_force_oracle(seed, size):
    w = ScoreWeights()
    case = _random_case(seed, size)
    assert rank_ddx(_KB, w, case).ids() == _oracle(_KB, w, case)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 12))
def test_adding_linked_present_finding_never_lowers_score(seed, size):
    w = ScoreWeights()
    case = _random_case(seed, size)
    rng = np.random.default_rng(seed + 1)
    disease = _KB.disease_records[int(rng.integers(len(_KB.disease_records)))]
    unused = [fid for fid in sorted(disease.links) if fid not in case.ids()
              and _KB.findings[fid].kind is not FindingKind.DEMOGRAPHIC]
    if not unused:
        return
    fid = unused[int(rng.integers(len(unused)))]
    before = score_disease(_KB, w, case, disease.id)
    after = score_disease(_KB, w, case.with_entry(fid, Polarity.PRESENT), disease.id)
    assert after > before


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 12))
def test_absent_linked_finding_lowers_and_unlinked_absent_is_neutral(seed, size):
    w = ScoreWeights()
    case = _random_case(seed, size)
    rng = np.random.default_rng(seed + 2)
    disease = _KB.disease_records[int(rng.integers(len(_KB.disease_records)))]
    fresh = [fid for fid in _CLINICAL if fid not in case.ids()]
    if not fresh:
        return
    fid = fresh[int(rng.integers(len(fresh)))]
    before = score_disease(_KB, w, case, disease.id)
    after = score_disease(_KB, w, case.with_entry(fid, Polarity.ABSENT), disease.id)
    if fid in disease.links:
        assert after < before
    else:
        assert after == before


def test_scores_are_order_independent(tiny_kb, weights):
    case = _case(("F01", "present"), ("F04", "present"), ("F06", "absent"))
    flipped = CaseFindings(tuple(reversed(case.entries)))
    assert score_all(tiny_kb, weights, case) == score_all(tiny_kb, weights, flipped)
