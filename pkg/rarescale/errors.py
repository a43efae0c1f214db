"""
Error types shared across the pipeline.

Every error carries a stable ``code`` so the CLI can emit one machine-parsable
line (``{"error": code, "error_type": ..., "message": ...}``) for it.
"""

from typing import Optional


class RareScaleError(Exception):
    """Base class for all pipeline errors."""

    code = "rarescale-error"

    def to_dict(self) -> dict:
        return {
            "error": self.code,
            "error_type": type(self).__name__,
            "message": str(self),
        }


class ConfigError(RareScaleError):
    code = "config-error"


# -- knowledge base ----------------------------------------------------------

class KbParseError(RareScaleError):
    code = "kb-parse"


class KbIntegrityError(RareScaleError):
    """Loaded KB violates an invariant. ``violations`` lists every problem found."""

    code = "kb-integrity"

    def __init__(self, message: str, violations: Optional[list] = None):
        super().__init__(message)
        self.violations = list(violations or [])


class KbRangeError(KbIntegrityError):
    code = "kb-range"


class InfeasibleParametersError(RareScaleError, ValueError):
    code = "infeasible-parameters"


class UnknownEntityError(RareScaleError, LookupError):
    code = "unknown-entity"


class CaseError(RareScaleError, ValueError):
    """Case findings break the no-duplicate or exclusion-group rule."""

    code = "invalid-case"


class TooFewSnapshotsError(RareScaleError):
    code = "too-few-snapshots"


# -- prompts / LLM -------------------------------------------------------------

class TemplateError(RareScaleError):
    code = "template-error"


class MissingVariableError(TemplateError):
    code = "missing-variable"

    def __init__(self, name: str):
        super().__init__(f"missing template variable: {name}")
        self.name = name


class UnknownPlaceholderError(TemplateError):
    code = "unknown-placeholder"

    def __init__(self, name: str):
        super().__init__(f"unknown placeholder in template: {name}")
        self.name = name


class LlmError(RareScaleError):
    code = "llm-error"


class TransientLlmError(LlmError):
    """Retryable provider failure (429, 5xx, connection reset, timeout)."""

    code = "llm-transient"

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class LlmTransportError(LlmError):
    code = "llm-transport"


class LlmRateLimitedError(LlmTransportError):
    code = "rate-limited"


class MockScriptExhaustedError(LlmError):
    code = "mock-script-exhausted"


class MalformedResponseError(LlmError):
    code = "malformed-response"


# -- chat generation -----------------------------------------------------------

class UnparseableResponseError(RareScaleError):
    code = "unparseable-response"


class UnknownAnnotationError(UnparseableResponseError):
    code = "unknown-annotation"


class ProfileContradictionError(RareScaleError):
    code = "profile-contradiction"


# -- dataset -------------------------------------------------------------------

class DatasetError(RareScaleError):
    code = "dataset-error"


class EmptyInputError(DatasetError, ValueError):
    code = "empty-input"


class DegenerateRatiosError(DatasetError, ValueError):
    code = "degenerate-ratios"


class LabelLeakError(DatasetError):
    code = "label-leak"


# -- evaluation ----------------------------------------------------------------

class EvaluationError(RareScaleError):
    code = "evaluation-error"


class LengthMismatchError(EvaluationError, ValueError):
    code = "length-mismatch"


class UnparseableVerdictError(EvaluationError):
    code = "unparseable-verdict"


class UnparseableLabelError(EvaluationError):
    code = "unparseable-label"


class TooFewDifferencesError(EvaluationError, ValueError):
    code = "too-few-differences"
