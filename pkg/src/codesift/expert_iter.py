"""Expert-iteration baseline: self-sample, filter, retrain, repeat.

The loop bootstraps an initial knowledge set by few-shot sampling from the
untuned student, then alternates a training step (fit a fresh student on
everything known correct) with a sampling step (draw from the new student
over still-uncovered examples and merge what verifies). It stops at the
first iteration that adds nothing, then trains once more with the final
hyperparameters.

The trainer is an external process behind a small interface; tests use
in-process fakes, production uses :class:`ProcessTrainer`.
"""

from __future__ import annotations

import json
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

from .dataset import SpecExample, save_dataset_jsonl
from .knowledge import KnowledgeSet, acquire_knowledge, iter_acquisition, save_knowledge_set
from .seeds import substream_seed
from .teacher_client import CompletionSampler, FewShotPrompt, SamplingConfig, TeacherEndpoint, HttpTeacher
from .verifier import DEFAULT_TOLERANCE, Tolerance

logger = logging.getLogger(__name__)

BASE_MODEL_REF = "base"

DEFAULT_FINAL_TRAINING = {"epochs": 140, "learning_rate": 1e-4}


class TrainerFailure(Exception):
    pass


class MaxIterationsExceeded(Exception):
    """Raised with the last state attached; never silently swallowed."""

    def __init__(self, state: "EIState"):
        super().__init__(
            f"no convergence after {state.iteration} iterations "
            f"(knowledge set size {len(state.knowledge_set)})"
        )
        self.state = state


@dataclass(frozen=True)
class EIConfig:
    samples_per_example: int = 100
    temperature: float = 0.6
    per_iteration_epochs: int = 4
    per_iteration_lr: float = 5e-5
    final_training: dict = field(default_factory=lambda: dict(DEFAULT_FINAL_TRAINING))
    max_iterations: int = 50
    resume_from_previous: bool = False  # default: retrain from the base checkpoint
    resample_covered: bool = False

    def __post_init__(self):
        if min(self.samples_per_example, self.per_iteration_epochs, self.max_iterations) < 1:
            raise ValueError("counts must be >= 1")

    def sampling(self) -> SamplingConfig:
        return SamplingConfig(
            temperature=self.temperature, num_samples=self.samples_per_example
        )


@dataclass(frozen=True)
class EIHistoryItem:
    iteration: int
    knowledge_size: int
    new_entries: int


@dataclass(frozen=True)
class EIState:
    iteration: int
    knowledge_set: KnowledgeSet
    model_ref: str
    history: tuple[EIHistoryItem, ...]


class Trainer:
    """Process-boundary contract for fitting a student on a knowledge set."""

    def train(
        self,
        knowledge_set: KnowledgeSet,
        train_config: Mapping,
        base_model: str,
        tag: str,
    ) -> str:
        """Fit and return a checkpoint reference; raise TrainerFailure on error."""
        raise NotImplementedError


# A factory mapping a checkpoint reference to something that samples from it.
StudentFactory = Callable[[str], CompletionSampler]


def should_stop(prev: KnowledgeSet, curr: KnowledgeSet) -> bool:
    """Stop when the knowledge set stopped growing between iterations."""
    return len(prev) == len(curr)


def bootstrap_d0(
    student_sampler: CompletionSampler,
    dataset: Sequence[SpecExample],
    prompt: FewShotPrompt,
    config: EIConfig,
    seed: int,
    tolerance: Tolerance = DEFAULT_TOLERANCE,
) -> KnowledgeSet:
    """Build the initial knowledge set by few-shot sampling the untuned student."""
    ks, _ = acquire_knowledge(
        dataset, student_sampler, prompt, config.sampling(), seed, tolerance
    )
    return ks


def ei_step(
    state: EIState,
    trainer: Trainer,
    student_factory: StudentFactory,
    dataset: Sequence[SpecExample],
    config: EIConfig,
    seed: int,
    tolerance: Tolerance = DEFAULT_TOLERANCE,
    prompt: Optional[FewShotPrompt] = None,
) -> EIState:
    """One train-then-sample round.

    Training starts from the base checkpoint on all of K_n (configurable to
    resume from M_n instead). Sampling covers only uncovered examples by
    default; an already-covered example always keeps its existing entry.
    An empty K_n skips the training call — there is nothing to fit — and
    samples from the current model instead.
    """
    next_iteration = state.iteration + 1
    if len(state.knowledge_set) > 0:
        train_config = {
            "epochs": config.per_iteration_epochs,
            "learning_rate": config.per_iteration_lr,
            "seed": substream_seed(seed, "train", str(next_iteration)),
        }
        base = state.model_ref if config.resume_from_previous else BASE_MODEL_REF
        model_ref = trainer.train(
            state.knowledge_set, train_config, base_model=base, tag=f"iter{next_iteration:03d}"
        )
    else:
        model_ref = state.model_ref
    covered = state.knowledge_set.covered_ids()
    if config.resample_covered:
        targets: Sequence[SpecExample] = dataset
    else:
        targets = [ex for ex in dataset if ex.id not in covered]
    new_entries = []
    if targets:
        sampler = student_factory(model_ref)
        sub_seed = substream_seed(seed, "ei-sample", str(next_iteration))
        for acq in iter_acquisition(
            targets, sampler, prompt, config.sampling(), sub_seed, tolerance
        ):
            entry = acq.entry(sampler.model_id)
            if entry is not None and entry.example_id not in covered:
                new_entries.append(entry)
    merged = KnowledgeSet(
        state.knowledge_set.entries + tuple(new_entries), state.knowledge_set.meta
    )
    history = state.history + (
        EIHistoryItem(next_iteration, len(merged), len(new_entries)),
    )
    logger.info(
        "iteration %d: |K|=%d (+%d)", next_iteration, len(merged), len(new_entries)
    )
    return EIState(next_iteration, merged, model_ref, history)


def run_expert_iteration(
    dataset: Sequence[SpecExample],
    prompt: FewShotPrompt,
    trainer: Trainer,
    student_factory: StudentFactory,
    config: EIConfig,
    seed: int,
    tolerance: Tolerance = DEFAULT_TOLERANCE,
) -> tuple[str, EIState]:
    """Run the full loop: bootstrap, iterate to the stall, final training.

    Returns the final checkpoint reference plus the complete state/history.
    Raises :class:`MaxIterationsExceeded` (with state attached) if the
    safeguard fires before the stopping rule does.
    """
    d0 = bootstrap_d0(student_factory(BASE_MODEL_REF), dataset, prompt, config, seed, tolerance)
    state = EIState(
        iteration=0,
        knowledge_set=d0,
        model_ref=BASE_MODEL_REF,
        history=(EIHistoryItem(0, len(d0), len(d0)),),
    )
    logger.info("bootstrap: |K0|=%d over %d examples", len(d0), len(dataset))
    stalled = False
    for _ in range(config.max_iterations):
        previous = state.knowledge_set
        state = ei_step(state, trainer, student_factory, dataset, config, seed, tolerance)
        if should_stop(previous, state.knowledge_set):
            stalled = True
            break
    if not stalled:
        raise MaxIterationsExceeded(state)
    if len(state.knowledge_set) > 0:
        final_config = {**DEFAULT_FINAL_TRAINING, **config.final_training}
        final_config.setdefault("seed", substream_seed(seed, "train", "final"))
        final_ref = trainer.train(
            state.knowledge_set, final_config, base_model=BASE_MODEL_REF, tag="final"
        )
    else:
        final_ref = state.model_ref
    return final_ref, state


# --------------------------------------------------------------------------
# Process-boundary implementations
# --------------------------------------------------------------------------

class ProcessTrainer(Trainer):
    """Runs an external trainer executable per training step.

    The contract: the executable is invoked with ``--train-set <path>
    --config <path> --out <checkpoint-dir>``, must exit 0, and must leave a
    ``manifest.json`` naming the checkpoint in the output directory.
    """

    def __init__(self, executable: Union[str, Sequence[str]], work_dir: Union[str, Path]):
        self.executable = [executable] if isinstance(executable, str) else list(executable)
        self.work_dir = Path(work_dir)

    def train(
        self, knowledge_set: KnowledgeSet, train_config: Mapping, base_model: str, tag: str
    ) -> str:
        step_dir = self.work_dir / tag
        step_dir.mkdir(parents=True, exist_ok=True)
        train_path = step_dir / "train.jsonl"
        config_path = step_dir / "config.json"
        out_dir = step_dir / "checkpoint"
        save_knowledge_set(knowledge_set, train_path)
        config_path.write_text(
            json.dumps({**dict(train_config), "base_model": base_model}, indent=2, sort_keys=True),
            encoding="utf-8",
        )
        cmd = [
            *self.executable,
            "--train-set", str(train_path),
            "--config", str(config_path),
            "--out", str(out_dir),
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise TrainerFailure(
                f"trainer exited {proc.returncode}: {proc.stderr.strip()[-500:]}"
            )
        manifest_path = out_dir / "manifest.json"
        if not manifest_path.exists():
            raise TrainerFailure(f"trainer wrote no manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if "checkpoint_path" not in manifest:
            raise TrainerFailure(f"{manifest_path} does not name a checkpoint")
        return str(manifest["checkpoint_path"])


class BatchStudentFactory:
    """Samples from a trained student by invoking ``<trainer> generate``.

    Each call writes a one-example dataset, asks the trainer to batch-
    generate a sample file, and reads the completions back. Slow but honest
    to the process contract; serve the student over HTTP for large runs.
    """

    def __init__(
        self,
        executable: Union[str, Sequence[str]],
        work_dir: Union[str, Path],
        dataset: Sequence[SpecExample],
        seed: int,
    ):
        self.executable = [executable] if isinstance(executable, str) else list(executable)
        self.work_dir = Path(work_dir)
        self.by_id = {ex.id: ex for ex in dataset}
        self.seed = seed
        self._counter = 0

    def __call__(self, model_ref: str) -> CompletionSampler:
        return _BatchStudentSampler(self, model_ref)


class _BatchStudentSampler:
    def __init__(self, factory: BatchStudentFactory, model_ref: str):
        self.factory = factory
        self.model_ref = model_ref
        self.model_id = model_ref

    def sample(self, example_id: str, prompt_text: str, config: SamplingConfig) -> list[str]:
        from .evaluator import load_sample_file  # local import avoids a cycle

        factory = self.factory
        example = factory.by_id.get(example_id)
        if example is None:
            raise KeyError(f"unknown example {example_id!r}")
        factory._counter += 1
        job_dir = factory.work_dir / f"gen{factory._counter:05d}"
        job_dir.mkdir(parents=True, exist_ok=True)
        dataset_path = job_dir / "example.jsonl"
        out_path = job_dir / "samples.jsonl"
        save_dataset_jsonl([example], dataset_path)
        cmd = [
            *factory.executable,
            "generate",
            "--checkpoint", self.model_ref,
            "--dataset", str(dataset_path),
            "--out", str(out_path),
            "--num-samples", str(config.num_samples),
            "--seed", str(substream_seed(factory.seed, "gen", example_id)),
        ]
        if config.greedy:
            cmd += ["--decode", "greedy"]
        else:
            cmd += ["--decode", "temperature", "--temperature", str(config.temperature)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise TrainerFailure(
                f"generation exited {proc.returncode}: {proc.stderr.strip()[-500:]}"
            )
        _, samples = load_sample_file(out_path)
        return samples.get(example_id, [])


class HttpStudentFactory:
    """Samples from a student served behind the completion-HTTP contract."""

    def __init__(self, base_url: str, **endpoint_kwargs):
        self.base_url = base_url
        self.endpoint_kwargs = endpoint_kwargs

    def __call__(self, model_ref: str) -> CompletionSampler:
        endpoint = TeacherEndpoint(
            base_url=self.base_url, model_id=model_ref, **self.endpoint_kwargs
        )
        return HttpTeacher(endpoint)
