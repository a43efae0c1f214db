"""
RareScale command line.

    python -m rarescale <subcommand> [--config FILE] [flags]

Subcommands:
  kb-validate, kb-synth                 knowledge base
  simulate, chats, negatives            corpus generation
  split, stats, export-pairs            dataset
  eval-candidates, eval-ddx             evaluation

Results go to files under --out; a short summary goes to stdout. Any failure
prints one JSON line on stderr ({"error", "error_type", "message"}) and
exits nonzero: 2 for usage/config problems, 1 for everything else.
"""

import argparse
import json
import logging
import sys
from typing import Callable, Optional, Sequence

from .errors import ConfigError, KbIntegrityError, RareScaleError
from .llm_gateway import reset_clients
from .logger import configure_ledger, redact, setup_logging
from .pipeline import (
    CANDIDATE_SOURCES,
    PipelineConfig,
    load_pipeline_config,
    stage_chats,
    stage_eval_candidates,
    stage_eval_ddx,
    stage_export_pairs,
    stage_kb_synth,
    stage_kb_validate,
    stage_negatives,
    stage_simulate,
    stage_split,
    stage_stats,
)

logger = logging.getLogger(__name__)

LLM_STAGES = {"chats", "negatives", "eval-candidates", "eval-ddx"}


class UsageError(ConfigError):
    code = "usage-error"


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of printing usage and exiting."""

    def error(self, message):
        raise UsageError(message)


# =============================================================================
# HANDLERS
# =============================================================================

def handle_kb_validate(cfg: PipelineConfig) -> str:
    violations = stage_kb_validate(cfg)
    if violations:
        print("\n".join(str(v) for v in violations))
        raise KbIntegrityError(f"{len(violations)} violations", violations)
    return "0 violations"


def handle_kb_synth(cfg: PipelineConfig) -> str:
    return f"wrote {stage_kb_synth(cfg)}"


def handle_simulate(cfg: PipelineConfig) -> str:
    return stage_simulate(cfg).render()


def handle_chats(cfg: PipelineConfig) -> str:
    return json.dumps(stage_chats(cfg).to_dict(), indent=2, sort_keys=True)


def handle_negatives(cfg: PipelineConfig) -> str:
    return json.dumps(stage_negatives(cfg), sort_keys=True)


def handle_split(cfg: PipelineConfig) -> str:
    return json.dumps(stage_split(cfg), indent=2, sort_keys=True)


def handle_stats(cfg: PipelineConfig) -> str:
    return stage_stats(cfg)


def handle_export_pairs(cfg: PipelineConfig) -> str:
    return json.dumps(stage_export_pairs(cfg), sort_keys=True)


def handle_eval_candidates(cfg: PipelineConfig) -> str:
    return stage_eval_candidates(cfg).render()


def handle_eval_ddx(cfg: PipelineConfig) -> str:
    return stage_eval_ddx(cfg).render()


HANDLERS: dict[str, Callable[[PipelineConfig], str]] = {
    "kb-validate": handle_kb_validate,
    "kb-synth": handle_kb_synth,
    "simulate": handle_simulate,
    "chats": handle_chats,
    "negatives": handle_negatives,
    "split": handle_split,
    "stats": handle_stats,
    "export-pairs": handle_export_pairs,
    "eval-candidates": handle_eval_candidates,
    "eval-ddx": handle_eval_ddx,
}


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rarescale", description="Rare-disease chat corpus and DDx evaluation pipeline")
    parser.add_argument("command", choices=sorted(HANDLERS), help="pipeline stage to run")
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--kb", help="knowledge base JSON")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="seed for simulation, synthesis and splitting")
    parser.add_argument("--mode", choices=("single", "turnwise"), help="chat generation mode")
    parser.add_argument("--backend", choices=("mock", "remote"), help="LLM backend for every stage")
    parser.add_argument("--mock-script", help="scripted mock responses for every stage")
    parser.add_argument("--workers", type=int, help="parallel workers")
    parser.add_argument("--split", choices=("train", "val", "test", "all"), help="records to evaluate")
    parser.add_argument("--candidates", choices=CANDIDATE_SOURCES, help="rare candidate source")
    parser.add_argument("--baseline", help="verdict log of a baseline eval-ddx run")
    parser.add_argument("--diseases", type=int, help="kb-synth: number of diseases")
    parser.add_argument("--findings", type=int, help="kb-synth: number of non-demographic findings")
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    return parser


def _emit_error(error: RareScaleError) -> None:
    payload = error.to_dict()
    payload["message"] = redact(payload["message"])
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        try:
            setup_logging(args.log_level)
        except ValueError:
            raise UsageError(f"unknown log level: {args.log_level}") from None
        cfg = load_pipeline_config(
            args.config,
            kb=args.kb,
            out=args.out,
            seed=args.seed,
            mode=args.mode,
            backend=args.backend,
            mock_script=args.mock_script,
            workers=args.workers,
            split=args.split,
            candidates=args.candidates,
            baseline=args.baseline,
            n_diseases=args.diseases,
            n_findings=args.findings,
            require_kb=args.command != "kb-synth",
        )
    except ConfigError as e:
        _emit_error(e)
        return 2
    except RareScaleError as e:
        _emit_error(e)
        return 1

    cfg.out.mkdir(parents=True, exist_ok=True)
    reset_clients()
    configure_ledger(cfg.out if args.command in LLM_STAGES else None)
    try:
        summary = HANDLERS[args.command](cfg)
    except ConfigError as e:
        _emit_error(e)
        return 2
    except RareScaleError as e:
        _emit_error(e)
        return 1
    finally:
        configure_ledger(None)
    if summary:
        print(summary.rstrip("\n"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
