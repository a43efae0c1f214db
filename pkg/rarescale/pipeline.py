"""
Pipeline Stages

``PipelineConfig`` (one JSON file, CLI flags win) and one runner per stage.
Every stage reads and writes inside ``config.out``:

    kb.json                    kb-synth
    cases.jsonl                simulate (one line per case, with its trace)
    simulation_report.json     simulate
    chats.jsonl, chats.txt     chats (every chat, discarded ones included)
    corpus.jsonl               chats (retained chats joined to their cases)
    phrase_bank.json           chats
    negatives.jsonl            negatives
    negatives_review.csv       negatives
    train/val/test.jsonl       split
    split_report.json          split
    stats.json                 stats
    pairs_<split>.jsonl        export-pairs
    eval_*.json / *.txt        eval-candidates, eval-ddx (+ verdict logs)
    CALLS.md                   every stage that talks to an LLM
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .case_simulator import SimConfig, case_record, parse_case_record, simulate_kb
from .chat_simulator import MODES, ChatRecord, PhraseBank, render_chat, simulate_chat
from .dataset_store import (
    SPLIT_NAMES,
    CorpusRecord,
    SplitSpec,
    build_corpus,
    corpus_stats,
    downsample_by_disease,
    export_training_pairs,
    read_corpus,
    render_stats,
    split_corpus,
    write_corpus,
)
from .errors import (
    ConfigError,
    DatasetError,
    ProfileContradictionError,
    UnparseableResponseError,
)
from .evaluation import (
    ExternalCandidates,
    ReferenceCandidates,
    evaluate_candidates,
    evaluate_ddx,
    read_verdicts,
)
from .jsonl import read_jsonl, write_jsonl
from .knowledge_base import KnowledgeBase, load_kb, synth_kb, validate_kb, write_kb
from .llm_gateway import LlmConfig, get_client
from .negatives import run_negatives, write_negatives
from .pool import WorkPool
from .scorer import ScoreWeights

logger = logging.getLogger(__name__)

STAGES = ("chat", "checker", "profile", "ddx", "judge", "candidates", "screen")
CANDIDATE_SOURCES = ("none", "reference", "external")
JUDGE_MODES = ("llm", "exact")
TOP_LEVEL_KEYS = {
    "kb", "out", "weights", "simulation", "llm", "split", "workers", "chat_mode",
    "candidates", "candidate_prompt", "judge_mode", "similarity", "templates",
    "phrase_bank", "eval_split", "baseline", "downsample", "synth",
}
SYNTH_DEFAULTS = {"n_diseases": 30, "n_findings": 120, "n_categories": 6}


@dataclass(frozen=True)
class PipelineConfig:
    out: Path
    kb: Optional[Path] = None
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    simulation: SimConfig = field(default_factory=SimConfig)
    llm: dict = field(default_factory=lambda: {stage: LlmConfig() for stage in STAGES})
    split: SplitSpec = field(default_factory=SplitSpec)
    workers: int = 1
    chat_mode: str = "single"
    candidates: str = "none"
    candidate_prompt: str = "rare_candidates"
    judge_mode: str = "llm"
    similarity: bool = True
    phrase_bank: Optional[Path] = None
    eval_split: str = "test"
    baseline: Optional[Path] = None
    downsample: Optional[float] = None
    synth: dict = field(default_factory=lambda: dict(SYNTH_DEFAULTS))

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.chat_mode not in MODES:
            raise ConfigError(f"unknown chat mode: {self.chat_mode}")
        if self.candidates not in CANDIDATE_SOURCES:
            raise ConfigError(f"unknown candidate source: {self.candidates}")
        if self.judge_mode not in JUDGE_MODES:
            raise ConfigError(f"unknown judge mode: {self.judge_mode}")
        if self.eval_split not in (*SPLIT_NAMES, "all"):
            raise ConfigError(f"unknown split: {self.eval_split}")
        missing = set(STAGES) - set(self.llm)
        if missing:
            raise ConfigError(f"missing LLM stage configs: {sorted(missing)}")

    def stage(self, name: str) -> LlmConfig:
        return self.llm[name]

    def path(self, name: str) -> Path:
        return self.out / name

    def to_dict(self) -> dict:
        """Serializable view; LLM configs hold env var names, never secrets."""
        return {
            "kb": str(self.kb) if self.kb else None,
            "out": str(self.out),
            "weights": self.weights.to_dict(),
            "simulation": self.simulation.to_dict(),
            "llm": {stage: cfg.to_dict() for stage, cfg in sorted(self.llm.items())},
            "split": self.split.to_dict(),
            "workers": self.workers,
            "chat_mode": self.chat_mode,
            "candidates": self.candidates,
            "candidate_prompt": self.candidate_prompt,
            "judge_mode": self.judge_mode,
            "similarity": self.similarity,
            "phrase_bank": str(self.phrase_bank) if self.phrase_bank else None,
            "eval_split": self.eval_split,
            "baseline": str(self.baseline) if self.baseline else None,
            "downsample": self.downsample,
            "synth": dict(self.synth),
        }


def _resolve(base: Path, value: Optional[Union[str, Path]]) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value).expanduser()
    return path if path.is_absolute() else (base / path)


def _must_exist(path: Optional[Path], what: str) -> None:
    if path is not None and not path.exists():
        raise ConfigError(f"{what} not found: {path}")


def _stage_configs(raw: Mapping, base: Path, flags: Mapping[str, Any]) -> dict[str, LlmConfig]:
    unknown = set(raw) - {"default", *STAGES}
    if unknown:
        raise ConfigError(f"unknown LLM stages: {sorted(unknown)}")
    default = LlmConfig.from_dict(raw.get("default", {}))
    common: dict[str, Any] = {}
    if flags.get("backend"):
        common["backend"] = flags["backend"]
    if flags.get("mock_script"):
        common["mock_script"] = flags["mock_script"]
    configs = {}
    for stage in STAGES:
        cfg = default.merged(raw.get(stage, {})).merged(common)
        script = _resolve(base, cfg.mock_script)
        templates = _resolve(base, cfg.template_dir)
        if cfg.backend == "mock":
            _must_exist(script, f"mock script for stage {stage}")
        _must_exist(templates, f"template directory for stage {stage}")
        configs[stage] = cfg.merged({
            "mock_script": str(script) if script else None,
            "template_dir": str(templates) if templates else None,
        })
    return configs


def load_pipeline_config(
    path: Optional[Union[str, Path]] = None,
    **flags: Any,
) -> PipelineConfig:
    """Read the JSON config (if any) and apply non-None flag overrides.

    Relative paths in the file resolve against the file's directory; flag
    paths resolve against the working directory.
    """
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e.msg} (line {e.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        base = path.resolve().parent
        unknown = set(raw) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    flags = {k: v for k, v in flags.items() if v is not None}
    cwd = Path.cwd()

    if "templates" in raw:
        llm_raw = dict(raw.get("llm", {}))
        llm_raw["default"] = {"template_dir": raw["templates"], **llm_raw.get("default", {})}
    else:
        llm_raw = raw.get("llm", {})
    if flags.get("mock_script"):
        flags["mock_script"] = str(_resolve(cwd, flags["mock_script"]))

    simulation = dict(raw.get("simulation", {}))
    split = dict(raw.get("split", {}))
    if "seed" in flags:
        simulation["rng_seed"] = flags["seed"]
        split["seed"] = flags["seed"]

    kb = _resolve(cwd, flags["kb"]) if "kb" in flags else _resolve(base, raw.get("kb"))
    out = _resolve(cwd, flags["out"]) if "out" in flags else _resolve(base, raw.get("out"))
    if out is None:
        raise ConfigError("no output directory configured (set 'out' or pass --out)")
    if flags.get("require_kb", True):
        _must_exist(kb, "knowledge base")
    phrase_bank = _resolve(base, raw.get("phrase_bank"))
    _must_exist(phrase_bank, "phrase bank")
    baseline = _resolve(cwd, flags["baseline"]) if "baseline" in flags else _resolve(base, raw.get("baseline"))
    _must_exist(baseline, "baseline verdict file")

    synth = {**SYNTH_DEFAULTS, **raw.get("synth", {})}
    for key in ("n_diseases", "n_findings"):
        if key in flags:
            synth[key] = flags[key]
    unknown = set(synth) - {*SYNTH_DEFAULTS, "links_per_disease"}
    if unknown:
        raise ConfigError(f"unknown synth keys: {sorted(unknown)}")

    return PipelineConfig(
        out=out,
        kb=kb,
        weights=ScoreWeights.from_dict(raw.get("weights", {})),
        simulation=SimConfig.from_dict(simulation),
        llm=_stage_configs(llm_raw, base, flags),
        split=SplitSpec.from_dict(split),
        workers=int(flags.get("workers", raw.get("workers", 1))),
        chat_mode=flags.get("mode", raw.get("chat_mode", "single")),
        candidates=flags.get("candidates", raw.get("candidates", "none")),
        candidate_prompt=raw.get("candidate_prompt", "rare_candidates"),
        judge_mode=raw.get("judge_mode", "llm"),
        similarity=bool(raw.get("similarity", True)),
        phrase_bank=phrase_bank,
        eval_split=flags.get("split", raw.get("eval_split", "test")),
        baseline=baseline,
        downsample=raw.get("downsample"),
        synth=synth,
    )


def _write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _require_kb(cfg: PipelineConfig) -> KnowledgeBase:
    if cfg.kb is None:
        raise ConfigError("no knowledge base configured (set 'kb' or pass --kb)")
    return load_kb(cfg.kb)


# =============================================================================
# STAGES
# =============================================================================

def stage_kb_validate(cfg: PipelineConfig) -> list:
    if cfg.kb is None:
        raise ConfigError("no knowledge base configured (set 'kb' or pass --kb)")
    return validate_kb(load_kb(cfg.kb, validate=False))


def stage_kb_synth(cfg: PipelineConfig) -> Path:
    synth = dict(cfg.synth)
    kb = synth_kb(
        cfg.simulation.rng_seed,
        int(synth.pop("n_diseases")),
        int(synth.pop("n_findings")),
        **synth,
    )
    path = write_kb(kb, cfg.path("kb.json"))
    logger.info("wrote synthetic KB with %d diseases to %s", len(kb.disease_records), path)
    return path


def stage_simulate(cfg: PipelineConfig):
    kb = _require_kb(cfg)
    report = simulate_kb(kb, cfg.weights, cfg.simulation, workers=cfg.workers)
    write_jsonl(cfg.path("cases.jsonl"), (case_record(c, t) for c, t in report.cases()))
    _write_json(cfg.path("simulation_report.json"), report.to_dict())
    return report


def read_cases(cfg: PipelineConfig):
    return [parse_case_record(row) for row in read_jsonl(cfg.path("cases.jsonl"))]


@dataclass
class ChatRun:
    chats: list[ChatRecord]
    failures: dict[str, str]
    records: list[CorpusRecord]

    def to_dict(self) -> dict:
        return {
            "cases": len(self.chats) + len(self.failures),
            "generated": len(self.chats),
            "discarded": sum(1 for c in self.chats if c.discarded),
            "retained": len(self.records),
            "failed": dict(sorted(self.failures.items())),
            "repair_attempts": sum(c.repair_attempts for c in self.chats),
        }


def stage_chats(cfg: PipelineConfig) -> ChatRun:
    kb = _require_kb(cfg)
    cases = read_cases(cfg)
    bank = PhraseBank.load(cfg.phrase_bank) if cfg.phrase_bank else PhraseBank()
    chat_llm = get_client(cfg.stage("chat"))
    checker = get_client(cfg.stage("checker"))
    profile_llm = get_client(cfg.stage("profile"))

    def one(pair):
        case, _ = pair
        try:
            return simulate_chat(kb, case, chat_llm, bank, cfg.chat_mode, checker, profile_llm)
        except (UnparseableResponseError, ProfileContradictionError) as e:
            logger.warning("%s: chat generation failed: %s", case.case_id, e)
            return e

    results = WorkPool(cfg.workers, label="chats").map(one, cases)
    chats = [r for r in results if isinstance(r, ChatRecord)]
    failures = {case.case_id: r.code for (case, _), r in zip(cases, results) if not isinstance(r, ChatRecord)}
    records = build_corpus(cases, chats)

    write_jsonl(cfg.path("chats.jsonl"), (c.to_dict() for c in chats))
    cfg.path("chats.txt").write_text("\n".join(render_chat(c, kb) for c in chats), encoding="utf-8")
    write_corpus(cfg.path("corpus.jsonl"), records)
    bank.save(cfg.path("phrase_bank.json"))
    run = ChatRun(chats, failures, records)
    _write_json(cfg.path("chats_report.json"), run.to_dict())
    return run


def stage_negatives(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    records = read_corpus(cfg.path("corpus.jsonl"))
    examples = run_negatives(records, kb, get_client(cfg.stage("screen")), cfg.workers)
    return write_negatives(cfg.out, examples)


def stage_split(cfg: PipelineConfig) -> dict:
    records = read_corpus(cfg.path("corpus.jsonl"))
    result = split_corpus(records, cfg.split)
    if cfg.downsample is not None:
        train = tuple(downsample_by_disease(result.train, cfg.downsample, cfg.split.seed))
        result = replace(result, train=train)
    for name, recs in result.as_dict().items():
        write_corpus(cfg.path(f"{name}.jsonl"), recs)
    report = {**result.report(), "spec": cfg.split.to_dict(), "downsample": cfg.downsample}
    _write_json(cfg.path("split_report.json"), report)
    return report


def read_split(cfg: PipelineConfig, name: str) -> list[CorpusRecord]:
    if name == "all":
        return read_corpus(cfg.path("corpus.jsonl"))
    return read_corpus(cfg.path(f"{name}.jsonl"))


def stage_stats(cfg: PipelineConfig) -> str:
    splits = {name: read_split(cfg, name) for name in SPLIT_NAMES}
    stats = corpus_stats({name: recs for name, recs in splits.items() if recs})
    _write_json(cfg.path("stats.json"), {name: s.to_dict() for name, s in stats.items()})
    return render_stats(stats)


def stage_export_pairs(cfg: PipelineConfig) -> dict[str, int]:
    kb = _require_kb(cfg)
    counts = {}
    for name in SPLIT_NAMES:
        counts[name] = export_training_pairs(read_split(cfg, name), cfg.path(f"pairs_{name}.jsonl"), kb)
    return counts


def _candidate_backend(cfg: PipelineConfig, kb: KnowledgeBase):
    if cfg.candidates == "reference":
        return ReferenceCandidates(kb, cfg.weights)
    if cfg.candidates == "external":
        return ExternalCandidates(get_client(cfg.stage("candidates")), cfg.candidate_prompt)
    return None


def _judge(cfg: PipelineConfig):
    return get_client(cfg.stage("judge")) if cfg.judge_mode == "llm" else None


def _write_eval(cfg: PipelineConfig, stem: str, report, verdicts) -> None:
    write_jsonl(cfg.path(f"{stem}_verdicts.jsonl"), (v.to_dict() for v in verdicts))
    _write_json(cfg.path(f"{stem}.json"), report.to_dict())
    cfg.path(f"{stem}.txt").write_text(report.render(), encoding="utf-8")


def stage_eval_candidates(cfg: PipelineConfig):
    kb = _require_kb(cfg)
    backend = _candidate_backend(cfg, kb)
    if backend is None:
        raise ConfigError("eval-candidates needs --candidates reference or external")
    records = read_split(cfg, cfg.eval_split)
    report, verdicts = evaluate_candidates(
        records, kb, backend, judge=_judge(cfg), similarity=cfg.similarity, workers=cfg.workers,
    )
    _write_eval(cfg, f"eval_candidates_{backend.name}_{cfg.eval_split}", report, verdicts)
    return report


def stage_eval_ddx(cfg: PipelineConfig):
    kb = _require_kb(cfg)
    records = read_split(cfg, cfg.eval_split)
    report, verdicts = evaluate_ddx(
        records,
        kb,
        get_client(cfg.stage("ddx")),
        judge=_judge(cfg),
        candidates=_candidate_backend(cfg, kb),
        similarity=cfg.similarity,
        workers=cfg.workers,
    )
    if cfg.baseline is not None:
        try:
            baseline = read_verdicts(read_jsonl(cfg.baseline))
        except (KeyError, ValueError) as e:
            raise DatasetError(f"baseline verdict file is malformed: {e}") from None
        report.compare(verdicts, baseline, cfg.baseline.name)
    _write_eval(cfg, f"eval_ddx_{cfg.candidates}_{cfg.eval_split}", report, verdicts)
    return report
