"""Pytest configuration and shared fixtures for rarescale tests."""
import sys
from pathlib import Path

import pytest

# Repo root so `import rarescale` works (package lives at rarescale/).
_REPO_ROOT = Path(__file__).resolve().parent.parent.parent
if str(_REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(_REPO_ROOT))

from rarescale.case_simulator import StructuredCase  # noqa: E402
from rarescale.chat_simulator import ChatMessage, ChatRecord, Speaker  # noqa: E402
from rarescale.dataset_store import CorpusRecord  # noqa: E402
from rarescale.knowledge_base import (  # noqa: E402
    DiseaseEntry,
    Finding,
    FindingKind,
    KnowledgeBase,
    Link,
    synth_kb,
)
from rarescale.llm_gateway import LlmClient, LlmConfig, reset_clients  # noqa: E402
from rarescale.logger import clear_secrets, configure_ledger  # noqa: E402
from rarescale.scorer import CaseFindings, RankedDdx, ScoreWeights  # noqa: E402

DEMOGRAPHIC_LINKS = {
    "dem-sex-female": Link(1, 3),
    "dem-sex-male": Link(1, 3),
    "dem-age-0-40": Link(1, 3),
    "dem-age-41-90": Link(1, 3),
}


def _tiny_findings() -> list[Finding]:
    return [
        Finding("dem-sex-female", "sex female", FindingKind.DEMOGRAPHIC, 1, exclusion_group="sex", value="female"),
        Finding("dem-sex-male", "sex male", FindingKind.DEMOGRAPHIC, 1, exclusion_group="sex", value="male"),
        Finding("dem-age-0-40", "age 0 to 40", FindingKind.DEMOGRAPHIC, 1, exclusion_group="age", value="0-40"),
        Finding("dem-age-41-90", "age over 40", FindingKind.DEMOGRAPHIC, 1, exclusion_group="age", value="41-90"),
        Finding("F01", "fever", FindingKind.SYMPTOM, 3, definition="Body temperature above 38 C."),
        Finding("F02", "red rash", FindingKind.SYMPTOM, 2, exclusion_group="skin-color"),
        Finding("F03", "pale skin", FindingKind.SYMPTOM, 2, exclusion_group="skin-color"),
        Finding("F04", "joint pain", FindingKind.SYMPTOM, 4),
        Finding("F05", "smoking history", FindingKind.PREDISPOSING, 1),
        Finding("F06", "headache", FindingKind.SYMPTOM, 1),
    ]


def _tiny_diseases() -> list[DiseaseEntry]:
    return [
        DiseaseEntry("D1", "Alpha fever", ("Infectious disease",), {
            "F01": Link(5, 5), "F02": Link(4, 4), "F04": Link(3, 3), "F05": Link(2, 2), **DEMOGRAPHIC_LINKS,
        }),
        DiseaseEntry("D2", "Beta syndrome alias beta complex", ("Immune system disorders", "Musculoskeletal disorders"), {
            "F04": Link(5, 5), "F03": Link(3, 4), "F06": Link(2, 2), **DEMOGRAPHIC_LINKS,
        }),
        DiseaseEntry("D3", "Gamma disease", ("Metabolic disorders",), {
            "F06": Link(4, 4), "F01": Link(1, 2), **DEMOGRAPHIC_LINKS,
        }, rare=False),
    ]


@pytest.fixture
def tiny_kb() -> KnowledgeBase:
    """Three diseases, six clinical findings, sex and age groups."""
    return KnowledgeBase.build(_tiny_findings(), _tiny_diseases())


@pytest.fixture
def tiny_parts():
    """Fresh finding/disease lists for tests that break the tiny KB."""
    return _tiny_findings(), _tiny_diseases()


@pytest.fixture(scope="session")
def synth():
    return synth_kb(7, 20, 60)


@pytest.fixture
def weights() -> ScoreWeights:
    return ScoreWeights()


@pytest.fixture
def offline_llm() -> LlmClient:
    """Mock backend answering from the offline responder."""
    return LlmClient(LlmConfig())


@pytest.fixture(autouse=True)
def _isolate_globals():
    yield
    reset_clients()
    configure_ledger(None)
    clear_secrets()


def _corpus_record(case_id, disease_id, pairs, *, ddx=None, texts=("I have not been feeling well.",),
                   trace=None, demographics=None, discarded=False):
    findings = CaseFindings.of(pairs)
    case = StructuredCase(case_id, disease_id, findings, ddx or RankedDdx(()), dict(demographics or {}))
    messages = [ChatMessage(Speaker.SYSTEM, "Patient profile: name: Alex Morgan; gender: male")]
    for text in texts:
        messages.append(ChatMessage(Speaker.PROVIDER, "Can you tell me more?"))
        messages.append(ChatMessage(Speaker.PATIENT, text))
    chat = ChatRecord(case_id, disease_id, "single", "mock", tuple(messages), discarded=discarded)
    if discarded:
        return chat
    return CorpusRecord(case, chat, trace, "2026-01-01T00:00:00Z")


@pytest.fixture
def make_record():
    """Factory for corpus records that skip the simulator and the LLM."""
    return _corpus_record
