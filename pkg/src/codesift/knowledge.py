"""Knowledge-set acquisition: sample, filter by execution, keep one winner.

For each training example the sampler draws completions, each is verified
against the expected answer, and one correct sample is selected uniformly
at random (duplicates included — no heuristics). Verified triples form the
knowledge set; a coverage report counts how many examples produced at least
one correct program. Acquisition checkpoints per example so interrupted
runs resume to byte-identical output.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

from . import mwp_lang
from .dataset import SpecExample, dataset_fingerprint
from .seeds import substream_rng
from .teacher_client import (
    CompletionSampler,
    FewShotPrompt,
    SamplingConfig,
    render_prompt,
    render_zero_shot,
)
from .verifier import DEFAULT_TOLERANCE, Tolerance, VerificationOutcome, is_correct, verify

logger = logging.getLogger(__name__)


class KnowledgeError(Exception):
    pass


class IoFailure(KnowledgeError):
    pass


class SchemaViolation(KnowledgeError):
    pass


class InvariantViolation(KnowledgeError):
    pass


class EmptyDataset(KnowledgeError):
    pass


class CheckpointMismatch(KnowledgeError):
    """Checkpoint on disk was written by a differently-configured run."""


# --------------------------------------------------------------------------
# Types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KnowledgeEntry:
    """One verified (question, program, answer) triple."""

    example_id: str
    question: str
    program: str
    answer: float
    teacher_id: str
    sample_index: int
    produced_value: float


@dataclass(frozen=True)
class AcquisitionMeta:
    teacher_id: str
    temperature: float
    num_samples: int
    seed: int
    dataset_fingerprint: str


@dataclass(frozen=True)
class KnowledgeSet:
    entries: tuple[KnowledgeEntry, ...]
    meta: AcquisitionMeta

    def __post_init__(self):
        ids = [e.example_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise InvariantViolation("knowledge set holds more than one entry per example")

    def __len__(self) -> int:
        return len(self.entries)

    def covered_ids(self) -> set[str]:
        return {e.example_id for e in self.entries}


@dataclass(frozen=True)
class ExampleCoverage:
    num_samples: int
    num_correct: int


@dataclass(frozen=True)
class CoverageReport:
    covered: int
    total: int
    fraction: float
    per_example: dict[str, ExampleCoverage] = field(default_factory=dict)


def coverage(report: CoverageReport) -> float:
    """Fraction of examples for which some sample verified correct."""
    if report.total == 0:
        raise EmptyDataset("coverage is undefined for an empty dataset")
    return report.covered / report.total


# --------------------------------------------------------------------------
# Checkpointing
# --------------------------------------------------------------------------

class AcquisitionCheckpoint:
    """Per-example completion log, replayable across interrupted runs.

    The file is JSONL: a meta line first, then one completions record per
    finished example. A rerun replays recorded completions instead of
    re-sampling, so the resumed run reproduces the uninterrupted one
    byte for byte. A trailing partial line from a crash is ignored.
    """

    def __init__(self, path: Union[str, Path], meta: AcquisitionMeta):
        self.path = Path(path)
        self.meta = meta
        self.completions: dict[str, list[str]] = {}
        if self.path.exists():
            self._load()
        else:
            self._write_line({"type": "meta", **_meta_dict(meta)}, mode="w")

    def _load(self) -> None:
        with open(self.path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        parsed: list[dict] = []
        for i, line in enumerate(lines):
            try:
                parsed.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    logger.warning("dropping truncated final checkpoint line in %s", self.path)
                    break
                raise SchemaViolation(f"{self.path}:{i + 1}: invalid JSON") from None
        if not parsed or parsed[0].get("type") != "meta":
            raise SchemaViolation(f"{self.path}: first line must be the meta record")
        on_disk = {k: parsed[0].get(k) for k in _meta_dict(self.meta)}
        if on_disk != _meta_dict(self.meta):
            raise CheckpointMismatch(
                f"{self.path} was written by a different run: {on_disk} != {_meta_dict(self.meta)}"
            )
        for record in parsed[1:]:
            if record.get("type") != "completions":
                raise SchemaViolation(f"{self.path}: unexpected record type {record.get('type')!r}")
            self.completions[record["example_id"]] = list(record["completions"])

    def get(self, example_id: str) -> Optional[list[str]]:
        return self.completions.get(example_id)

    def record(self, example_id: str, completions: list[str]) -> None:
        self.completions[example_id] = completions
        self._write_line(
            {"type": "completions", "example_id": example_id, "completions": completions}
        )

    def _write_line(self, record: dict, mode: str = "a") -> None:
        with open(self.path, mode, encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def _meta_dict(meta: AcquisitionMeta) -> dict:
    return {
        "teacher_id": meta.teacher_id,
        "temperature": meta.temperature,
        "num_samples": meta.num_samples,
        "seed": meta.seed,
        "dataset_fingerprint": meta.dataset_fingerprint,
    }


# --------------------------------------------------------------------------
# Acquisition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExampleAcquisition:
    """Everything acquisition learned about one example."""

    example: SpecExample
    completions: tuple[str, ...]
    outcomes: tuple[VerificationOutcome, ...]
    correct_slots: tuple[int, ...]
    chosen_slot: Optional[int]

    def entry(self, teacher_id: str) -> Optional[KnowledgeEntry]:
        if self.chosen_slot is None:
            return None
        outcome = self.outcomes[self.chosen_slot]
        assert outcome.produced_value is not None
        return KnowledgeEntry(
            example_id=self.example.id,
            question=self.example.question,
            program=self.completions[self.chosen_slot],
            answer=self.example.answer,
            teacher_id=teacher_id,
            sample_index=self.chosen_slot,
            produced_value=outcome.produced_value,
        )


def iter_acquisition(
    dataset: Sequence[SpecExample],
    teacher: CompletionSampler,
    prompt: Optional[FewShotPrompt],
    config: SamplingConfig,
    seed: int,
    tolerance: Tolerance = DEFAULT_TOLERANCE,
    checkpoint: Optional[AcquisitionCheckpoint] = None,
) -> Iterator[ExampleAcquisition]:
    """Sample, verify, and select for each example, in dataset order.

    ``prompt=None`` renders the bare question block (for models fine-tuned
    on that format). Selection draws uniformly among the correct sample
    slots using the ``(seed, example_id)`` substream, so it depends only on
    the seed and the sampler's output, never on timing or arrival order.
    """
    for example in dataset:
        completions = checkpoint.get(example.id) if checkpoint else None
        if completions is None:
            if prompt is not None:
                rendered = render_prompt(prompt, example.question)
            else:
                rendered = render_zero_shot(example.question)
            completions = teacher.sample(example.id, rendered, config)
            if checkpoint is not None:
                checkpoint.record(example.id, completions)
        outcomes = tuple(verify(text, example.answer, tolerance) for text in completions)
        correct_slots = tuple(i for i, o in enumerate(outcomes) if is_correct(o))
        chosen: Optional[int] = None
        if correct_slots:
            rng = substream_rng(seed, "select", example.id)
            chosen = correct_slots[rng.randrange(len(correct_slots))]
        yield ExampleAcquisition(example, tuple(completions), outcomes, correct_slots, chosen)


def acquire_knowledge(
    dataset: Sequence[SpecExample],
    teacher: CompletionSampler,
    prompt: Optional[FewShotPrompt],
    config: SamplingConfig,
    seed: int,
    tolerance: Tolerance = DEFAULT_TOLERANCE,
    checkpoint_path: Optional[Union[str, Path]] = None,
) -> tuple[KnowledgeSet, CoverageReport]:
    """Run acquisition over the whole dataset.

    Examples with no correct sample are left out of the knowledge set but
    still counted in the coverage report. With a checkpoint path, progress
    is persisted per example and reruns resume deterministically.
    """
    if not dataset:
        raise EmptyDataset("cannot acquire over an empty dataset")
    meta = AcquisitionMeta(
        teacher_id=teacher.model_id,
        temperature=config.effective_temperature,
        num_samples=config.num_samples,
        seed=seed,
        dataset_fingerprint=dataset_fingerprint(dataset),
    )
    checkpoint = (
        AcquisitionCheckpoint(checkpoint_path, meta) if checkpoint_path is not None else None
    )
    entries: list[KnowledgeEntry] = []
    per_example: dict[str, ExampleCoverage] = {}
    for acq in iter_acquisition(dataset, teacher, prompt, config, seed, tolerance, checkpoint):
        per_example[acq.example.id] = ExampleCoverage(
            num_samples=len(acq.completions), num_correct=len(acq.correct_slots)
        )
        entry = acq.entry(meta.teacher_id)
        if entry is not None:
            entries.append(entry)
    covered = sum(1 for cov in per_example.values() if cov.num_correct > 0)
    report = CoverageReport(
        covered=covered,
        total=len(per_example),
        fraction=covered / len(per_example),
        per_example=per_example,
    )
    return KnowledgeSet(tuple(entries), meta), report


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def save_knowledge_set(ks: KnowledgeSet, path: Union[str, Path]) -> None:
    """Write JSONL: one meta line, then one entry line per example."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"type": "meta", **_meta_dict(ks.meta)}, ensure_ascii=False, sort_keys=True)
                + "\n"
            )
            for e in ks.entries:
                fh.write(
                    json.dumps(
                        {
                            "type": "entry",
                            "example_id": e.example_id,
                            "question": e.question,
                            "program": e.program,
                            "answer": e.answer,
                            "teacher_id": e.teacher_id,
                            "sample_index": e.sample_index,
                            "produced_value": e.produced_value,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None


_ENTRY_FIELDS = (
    "example_id", "question", "program", "answer", "teacher_id", "sample_index", "produced_value",
)


def load_knowledge_set(
    path: Union[str, Path], tolerance: Tolerance = DEFAULT_TOLERANCE
) -> KnowledgeSet:
    """Read a knowledge-set file, re-verifying every entry's invariant.

    Each program must still parse and verify correct against its recorded
    answer; a violating entry fails the load rather than slipping into
    training data.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line for line in fh.read().splitlines() if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    if not lines:
        raise SchemaViolation(f"{path}: empty file")
    records = []
    for i, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"{path}:{i}: invalid JSON: {exc}") from None
    if records[0].get("type") != "meta":
        raise SchemaViolation(f"{path}: first line must be the meta record")
    try:
        meta = AcquisitionMeta(
            teacher_id=str(records[0]["teacher_id"]),
            temperature=float(records[0]["temperature"]),
            num_samples=int(records[0]["num_samples"]),
            seed=int(records[0]["seed"]),
            dataset_fingerprint=str(records[0]["dataset_fingerprint"]),
        )
    except KeyError as exc:
        raise SchemaViolation(f"{path}: meta record missing {exc}") from None
    entries: list[KnowledgeEntry] = []
    for i, record in enumerate(records[1:], start=2):
        if record.get("type") != "entry":
            raise SchemaViolation(f"{path}:{i}: expected an entry record")
        missing = [k for k in _ENTRY_FIELDS if k not in record]
        if missing:
            raise SchemaViolation(f"{path}:{i}: entry missing fields {missing}")
        entry = KnowledgeEntry(
            example_id=str(record["example_id"]),
            question=str(record["question"]),
            program=str(record["program"]),
            answer=float(record["answer"]),
            teacher_id=str(record["teacher_id"]),
            sample_index=int(record["sample_index"]),
            produced_value=float(record["produced_value"]),
        )
        _check_entry(entry, tolerance, f"{path}:{i}")
        entries.append(entry)
    return KnowledgeSet(tuple(entries), meta)


def _check_entry(entry: KnowledgeEntry, tolerance: Tolerance, where: str) -> None:
    try:
        mwp_lang.parse_program(entry.program)
    except mwp_lang.ParseError as exc:
        raise InvariantViolation(f"{where}: program no longer parses: {exc}") from None
    outcome = verify(entry.program, entry.answer, tolerance)
    if not is_correct(outcome):
        raise InvariantViolation(
            f"{where}: entry for {entry.example_id!r} fails verification "
            f"({outcome.status.value}: {outcome.detail})"
        )
