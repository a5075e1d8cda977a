"""Readers for the pipeline's JSONL file contracts.

The trainer talks to the sampling/evaluation pipeline only through files:
knowledge-set JSONL in (meta line, then entry lines), dataset JSONL in for
generation, sample JSONL out. These readers implement the formats directly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union


class DataError(Exception):
    pass


@dataclass(frozen=True)
class KnowledgePair:
    example_id: str
    question: str
    program: str


@dataclass(frozen=True)
class DatasetExample:
    example_id: str
    question: str


def _read_lines(path: Union[str, Path]) -> list[dict]:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    records = []
    for i, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i}: invalid JSON: {exc}") from None
    return records


def read_knowledge_set(path: Union[str, Path]) -> list[KnowledgePair]:
    """Read training pairs from a knowledge-set file (meta line, then entries)."""
    records = _read_lines(path)
    if not records:
        raise DataError(f"{path}: empty file")
    if records[0].get("type") != "meta":
        raise DataError(f"{path}: first line must be the meta record")
    pairs = []
    for i, record in enumerate(records[1:], start=2):
        if record.get("type") != "entry":
            raise DataError(f"{path}:{i}: expected an entry record")
        try:
            pairs.append(
                KnowledgePair(
                    example_id=str(record["example_id"]),
                    question=str(record["question"]),
                    program=str(record["program"]),
                )
            )
        except KeyError as exc:
            raise DataError(f"{path}:{i}: entry missing {exc}") from None
    return pairs


def read_dataset(path: Union[str, Path]) -> list[DatasetExample]:
    """Read generation targets from a canonical dataset file ({id, question, ...})."""
    examples = []
    for i, record in enumerate(_read_lines(path), start=1):
        try:
            examples.append(
                DatasetExample(example_id=str(record["id"]), question=str(record["question"]))
            )
        except KeyError as exc:
            raise DataError(f"{path}:{i}: record missing {exc}") from None
    if not examples:
        raise DataError(f"{path}: no examples")
    return examples
