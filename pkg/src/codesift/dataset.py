"""Weakly-supervised dataset handling: question text plus numeric answer.

Ingests GSM8k-style JSONL records, extracts the final numeric answer from
the answer text, and manages the deterministic train/validation split.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

logger = logging.getLogger(__name__)

_ANSWER_MARKER = "####"


class DatasetError(Exception):
    pass


class MalformedRecord(DatasetError):
    pass


class UnparsableAnswer(DatasetError):
    pass


class InsufficientExamples(DatasetError):
    pass


@dataclass(frozen=True)
class SpecExample:
    """One weakly-supervised instance: a question and its expected numeric answer."""

    id: str
    question: str
    answer: float

    def __post_init__(self):
        if not self.question.strip():
            raise MalformedRecord(f"example {self.id!r} has an empty question")
        if not math.isfinite(self.answer):
            raise MalformedRecord(f"example {self.id!r} has non-finite answer {self.answer!r}")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[SpecExample, ...]
    validation: tuple[SpecExample, ...]
    seed: int


def extract_answer(answer_text: str) -> float:
    """Pull the final numeric answer out of GSM8k-style answer text.

    The value after the last ``####`` marker wins; without a marker the whole
    text must be a bare number. Thousands separators are stripped.
    """
    if _ANSWER_MARKER in answer_text:
        tail = answer_text.rsplit(_ANSWER_MARKER, 1)[1].strip()
        parts = tail.split()
        token = parts[0] if parts else ""
    else:
        token = answer_text.strip()
    token = token.replace(",", "")
    try:
        value = float(token)
    except ValueError:
        raise UnparsableAnswer(f"no numeric answer in {answer_text!r}") from None
    if not math.isfinite(value):
        raise UnparsableAnswer(f"non-finite answer in {answer_text!r}")
    return value


def parse_record(raw: Union[str, dict], position: int = 0) -> SpecExample:
    """Parse one raw record (JSON text or an already-decoded object).

    Expects ``question`` and ``answer`` fields; ``answer`` may be a string
    with a ``#### `` marker, a bare numeric string, or a number. A missing
    ``id`` is assigned deterministically from the record's position.
    """
    if isinstance(raw, str):
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"record is not valid JSON: {exc}") from None
    else:
        record = raw
    if not isinstance(record, dict):
        raise MalformedRecord(f"record must be an object, got {type(record).__name__}")
    if "question" not in record or "answer" not in record:
        raise MalformedRecord("record is missing 'question' or 'answer'")
    question = record["question"]
    if not isinstance(question, str):
        raise MalformedRecord("'question' must be a string")
    answer_field = record["answer"]
    if isinstance(answer_field, (int, float)) and not isinstance(answer_field, bool):
        answer = float(answer_field)
        if not math.isfinite(answer):
            raise UnparsableAnswer(f"non-finite answer {answer_field!r}")
    elif isinstance(answer_field, str):
        answer = extract_answer(answer_field)
    else:
        raise MalformedRecord("'answer' must be a string or a number")
    example_id = record.get("id")
    if example_id is None:
        example_id = f"ex{position:05d}"
    return SpecExample(id=str(example_id), question=question, answer=answer)


def split_dataset(
    examples: Sequence[SpecExample], validation_size: int, seed: int
) -> DatasetSplit:
    """Hold out a uniformly random validation subset, deterministically.

    The same seed and the same input order always produce the identical
    split; both sides keep the input order.
    """
    if validation_size > len(examples):
        raise InsufficientExamples(
            f"validation_size {validation_size} exceeds dataset size {len(examples)}"
        )
    rng = random.Random(seed)
    chosen = set(rng.sample(range(len(examples)), validation_size))
    validation = tuple(ex for i, ex in enumerate(examples) if i in chosen)
    train = tuple(ex for i, ex in enumerate(examples) if i not in chosen)
    return DatasetSplit(train=train, validation=validation, seed=seed)


def load_raw_jsonl(path: Union[str, Path]) -> list[SpecExample]:
    """Ingest a raw JSONL file, skipping records that fail to parse.

    One bad record must not poison a several-thousand-example run, so
    failures are logged and dropped. Duplicate ids are dropped the same way.
    """
    examples: list[SpecExample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for position, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                example = parse_record(line, position)
            except DatasetError as exc:
                logger.warning("skipping record %d of %s: %s", position, path, exc)
                continue
            if example.id in seen:
                logger.warning(
                    "skipping record %d of %s: duplicate id %r", position, path, example.id
                )
                continue
            seen.add(example.id)
            examples.append(example)
    return examples


def save_dataset_jsonl(examples: Iterable[SpecExample], path: Union[str, Path]) -> None:
    """Write the canonical dataset format: {id, question, answer} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"id": ex.id, "question": ex.question, "answer": ex.answer},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def load_dataset_jsonl(path: Union[str, Path]) -> list[SpecExample]:
    """Read the canonical dataset format; invalid lines raise, not skip."""
    examples: list[SpecExample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"{path}:{line_no}: invalid JSON: {exc}") from None
            example = parse_record(record, line_no - 1)
            if example.id in seen:
                raise MalformedRecord(f"{path}:{line_no}: duplicate id {example.id!r}")
            seen.add(example.id)
            examples.append(example)
    return examples


def dataset_fingerprint(examples: Sequence[SpecExample]) -> str:
    """Stable hash of (id, question, answer) triples, for provenance checks."""
    digest = hashlib.sha256()
    for ex in examples:
        digest.update(
            json.dumps([ex.id, ex.question, ex.answer], ensure_ascii=False).encode("utf-8")
        )
        digest.update(b"\n")
    return digest.hexdigest()[:16]
