"""Boolean correctness check: execute a candidate program, compare to the answer.

The check is total: every candidate, however malformed, maps to a
:class:`VerificationOutcome` rather than an exception. Program execution is
pluggable through :class:`ProgramExecutor` so a different sandbox can
replace the built-in interpreter without touching acquisition or
evaluation code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol

from . import mwp_lang


class Status(str, Enum):
    CORRECT = "correct"
    WRONG_ANSWER = "wrong_answer"
    PARSE_FAILURE = "parse_failure"
    EVAL_FAILURE = "eval_failure"


@dataclass(frozen=True)
class Tolerance:
    """Absolute/relative tolerance for comparing produced and expected values.

    A value v is accepted when ``|v - expected| <= atol + rtol * max(1, |expected|)``.
    Exact float equality is brittle under re-associated arithmetic; 1e-6 sits
    safely below the gap between distinct answers at these magnitudes.
    """

    atol: float = 1e-6
    rtol: float = 1e-6

    def accepts(self, produced: float, expected: float) -> bool:
        return abs(produced - expected) <= self.atol + self.rtol * max(1.0, abs(expected))


DEFAULT_TOLERANCE = Tolerance()


@dataclass(frozen=True)
class VerificationOutcome:
    status: Status
    produced_value: Optional[float]
    detail: str


class ProgramExecutor(Protocol):
    """Executes candidate source text, returning the numeric result.

    Raises ``mwp_lang.ParseError`` for source outside the accepted language
    and ``mwp_lang.EvalError`` for runtime failures.
    """

    def run(self, source: str) -> float: ...


class MwpExecutor:
    """Default executor: the straight-line arithmetic interpreter."""

    def run(self, source: str) -> float:
        return mwp_lang.evaluate(mwp_lang.parse_program(source))


_DEFAULT_EXECUTOR = MwpExecutor()


def verify(
    candidate_source: str,
    expected: float,
    tolerance: Tolerance = DEFAULT_TOLERANCE,
    executor: ProgramExecutor = _DEFAULT_EXECUTOR,
) -> VerificationOutcome:
    """Execute a candidate and compare the result to the expected answer.

    Args:
        candidate_source: untrusted program text.
        expected: the finite expected numeric answer.
        tolerance: acceptance band around the expected value.
        executor: program runner; defaults to the built-in interpreter.

    Returns:
        A total outcome; parse and runtime failures become statuses, never
        exceptions.
    """
    if not math.isfinite(expected):
        raise ValueError(f"expected answer must be finite, got {expected!r}")
    try:
        produced = executor.run(candidate_source)
    except mwp_lang.ParseError as exc:
        return VerificationOutcome(Status.PARSE_FAILURE, None, str(exc))
    except mwp_lang.EvalError as exc:
        return VerificationOutcome(Status.EVAL_FAILURE, None, str(exc))
    if not math.isfinite(produced):  # defensive: custom executors
        return VerificationOutcome(
            Status.EVAL_FAILURE, None, f"executor produced non-finite value {produced!r}"
        )
    if tolerance.accepts(produced, expected):
        return VerificationOutcome(Status.CORRECT, produced, "")
    return VerificationOutcome(
        Status.WRONG_ANSWER, produced, f"produced {produced!r}, expected {expected!r}"
    )


def is_correct(outcome: VerificationOutcome) -> bool:
    return outcome.status is Status.CORRECT
