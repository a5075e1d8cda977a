"""pass@k evaluation over per-example sample files.

Two estimators: the empirical definition (an example passes when any of its
first k samples verifies correct, averaged over examples) and the unbiased
combinatorial estimator 1 - C(n-c, k)/C(n, k), computed in product form so
no large factorials appear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .dataset import SpecExample
from .verifier import DEFAULT_TOLERANCE, Status, Tolerance, verify


class EvaluatorError(Exception):
    pass


class UnknownExampleId(EvaluatorError):
    pass


class EmptySampleList(EvaluatorError):
    pass


class InsufficientSamples(EvaluatorError):
    pass


class DomainError(EvaluatorError):
    pass


class SampleFileError(EvaluatorError):
    pass


@dataclass(frozen=True)
class ExampleEvalResult:
    example_id: str
    n_samples: int
    n_correct: int
    outcomes: tuple[str, ...]  # lowercase status strings, in sample order


@dataclass(frozen=True)
class EvalReport:
    k_values: tuple[int, ...]
    pass_at_k: dict[int, float]
    estimator: str  # "empirical" | "unbiased"
    per_example: tuple[ExampleEvalResult, ...]
    decode_mode: str  # "greedy" | "temperature(t)"


def evaluate_samples(
    samples: Mapping[str, Sequence[str]],
    dataset: Sequence[SpecExample],
    tolerance: Tolerance = DEFAULT_TOLERANCE,
) -> list[ExampleEvalResult]:
    """Verify every sample of every example against its expected answer."""
    by_id = {ex.id: ex for ex in dataset}
    results = []
    for example_id, texts in samples.items():
        if example_id not in by_id:
            raise UnknownExampleId(f"sampled example {example_id!r} is not in the dataset")
        if not texts:
            raise EmptySampleList(f"example {example_id!r} has no samples")
        outcomes = tuple(
            verify(text, by_id[example_id].answer, tolerance).status.value for text in texts
        )
        results.append(
            ExampleEvalResult(
                example_id=example_id,
                n_samples=len(texts),
                n_correct=sum(1 for s in outcomes if s == Status.CORRECT.value),
                outcomes=outcomes,
            )
        )
    return results


def pass_at_k_empirical(results: Sequence[ExampleEvalResult], k: int) -> float:
    """Fraction of examples whose first k samples contain a correct one."""
    if not results:
        raise EmptySampleList("no evaluation results")
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    for result in results:
        if result.n_samples < k:
            raise InsufficientSamples(
                f"example {result.example_id!r} has {result.n_samples} samples, need {k}"
            )
    hits = sum(
        1
        for result in results
        if any(s == Status.CORRECT.value for s in result.outcomes[:k])
    )
    return hits / len(results)


def pass_at_k_unbiased(n: int, c: int, k: int) -> float:
    """Probability that a uniformly random size-k subset of n samples hits a correct one.

    Evaluates 1 - C(n-c, k)/C(n, k) as a running product, which is exact in
    the integers' range and never forms a large factorial.
    """
    if not 0 <= c <= n:
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    miss = 1.0
    for i in range(k):
        miss *= (n - c - i) / (n - i)
    return 1.0 - miss


def pass_at_k_unbiased_mean(results: Sequence[ExampleEvalResult], k: int) -> float:
    """Average the unbiased estimator over examples."""
    if not results:
        raise EmptySampleList("no evaluation results")
    return sum(pass_at_k_unbiased(r.n_samples, r.n_correct, k) for r in results) / len(results)


def build_report(
    results: Sequence[ExampleEvalResult],
    k_values: Sequence[int],
    estimator: str = "empirical",
    decode_mode: str = "unknown",
) -> EvalReport:
    if estimator not in ("empirical", "unbiased"):
        raise DomainError(f"unknown estimator {estimator!r}")
    pass_at_k = {}
    for k in k_values:
        if estimator == "empirical":
            pass_at_k[k] = pass_at_k_empirical(results, k)
        else:
            pass_at_k[k] = pass_at_k_unbiased_mean(results, k)
    ordered = tuple(sorted(results, key=lambda r: r.example_id))
    return EvalReport(
        k_values=tuple(k_values),
        pass_at_k=pass_at_k,
        estimator=estimator,
        per_example=ordered,
        decode_mode=decode_mode,
    )


# --------------------------------------------------------------------------
# Sample-file and report I/O
# --------------------------------------------------------------------------

def decode_mode_label(meta: Mapping) -> str:
    mode = meta.get("decode_mode", "unknown")
    if mode == "temperature":
        return f"temperature({meta.get('temperature')})"
    return str(mode)


def load_sample_file(path: Union[str, Path]) -> tuple[dict, dict[str, list[str]]]:
    """Read a sample JSONL file: a meta line, then per-sample records.

    Samples are grouped by example and ordered by ``sample_index``; a
    duplicate index for the same example is a schema violation.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise SampleFileError(f"{path}: no samples")
    records = []
    for i, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SampleFileError(f"{path}:{i}: invalid JSON: {exc}") from None
    meta = records[0]
    if meta.get("type") != "meta":
        raise SampleFileError(f"{path}: first line must be the meta record")
    indexed: dict[str, dict[int, str]] = {}
    for i, record in enumerate(records[1:], start=2):
        if record.get("type") != "sample":
            raise SampleFileError(f"{path}:{i}: expected a sample record")
        try:
            example_id = str(record["example_id"])
            sample_index = int(record["sample_index"])
            program = str(record["program"])
        except KeyError as exc:
            raise SampleFileError(f"{path}:{i}: sample record missing {exc}") from None
        slots = indexed.setdefault(example_id, {})
        if sample_index in slots:
            raise SampleFileError(
                f"{path}:{i}: duplicate sample_index {sample_index} for {example_id!r}"
            )
        slots[sample_index] = program
    if not indexed:
        raise SampleFileError(f"{path}: no samples")
    samples = {
        example_id: [slots[j] for j in sorted(slots)] for example_id, slots in indexed.items()
    }
    return meta, samples


def save_sample_file(
    path: Union[str, Path],
    samples: Mapping[str, Sequence[str]],
    model_id: str,
    decode_mode: str,
    temperature: Optional[float],
    num_samples: int,
    seed: int,
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "type": "meta",
            "model_id": model_id,
            "decode_mode": decode_mode,
            "temperature": temperature,
            "num_samples": num_samples,
            "seed": seed,
        }
        fh.write(json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n")
        for example_id, texts in samples.items():
            for i, text in enumerate(texts):
                fh.write(
                    json.dumps(
                        {
                            "type": "sample",
                            "example_id": example_id,
                            "sample_index": i,
                            "program": text,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )


def report_to_json(report: EvalReport) -> str:
    """Pretty-printed report with stable key order; pass@k keyed by str(k)."""
    payload = {
        "k_values": list(report.k_values),
        "pass_at_k": {str(k): v for k, v in report.pass_at_k.items()},
        "estimator": report.estimator,
        "decode_mode": report.decode_mode,
        "per_example": [
            {
                "example_id": r.example_id,
                "n_samples": r.n_samples,
                "n_correct": r.n_correct,
                "outcomes": list(r.outcomes),
            }
            for r in report.per_example
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
