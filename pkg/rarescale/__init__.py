"""
RareScale - rare-disease chat corpus and differential-diagnosis evaluation v0.3.0

Pipeline stages:

KNOWLEDGE BASE:
    load_kb / validate_kb / synth_kb   - expert-system KB (findings, diseases, links)
    rank_ddx                           - QMR-style scorer over the KB

CORPUS:
    simulate_disease / simulate_kb     - structured cases per seed disease
    simulate_chat                      - provider/patient chat per case (LLM)
    split_corpus / export_training_pairs

EVALUATION:
    topk_mrr, judge_binary, judge_similarity
    run_ddx with optional rare candidates (reference or external)
    wilcoxon_signed_rank

Key features:
- Every LLM round-trip goes through llm_gateway (remote or mock backend)
- CALLS.md ledger in the run directory records each call
- Deterministic offline responder answers every packaged prompt

Command line: python -m rarescale <subcommand> (see cli.py).
"""

from .knowledge_base import KnowledgeBase, load_kb, synth_kb, validate_kb, write_kb
from .scorer import CaseFindings, ScoreWeights, rank_ddx
from .case_simulator import SimConfig, simulate_disease, simulate_kb
from .chat_simulator import PhraseBank, simulate_chat
from .dataset_store import SplitSpec, export_training_pairs, split_corpus
from .evaluation import judge_binary, judge_similarity, run_ddx, topk_mrr
from .significance import wilcoxon_signed_rank
from .llm_gateway import LlmClient, LlmConfig, get_client
from .config import settings

__version__ = "0.3.0"
__all__ = [
    # Knowledge base
    "KnowledgeBase",
    "load_kb",
    "synth_kb",
    "validate_kb",
    "write_kb",
    "CaseFindings",
    "ScoreWeights",
    "rank_ddx",
    # Corpus
    "SimConfig",
    "simulate_disease",
    "simulate_kb",
    "PhraseBank",
    "simulate_chat",
    "SplitSpec",
    "split_corpus",
    "export_training_pairs",
    # Evaluation
    "topk_mrr",
    "judge_binary",
    "judge_similarity",
    "run_ddx",
    "wilcoxon_signed_rank",
    # LLM access
    "LlmClient",
    "LlmConfig",
    "get_client",
    # Configuration
    "settings",
]
