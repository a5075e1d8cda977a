import json

import pytest

from codesift.dataset import SpecExample
from codesift.knowledge import (
    AcquisitionCheckpoint,
    AcquisitionMeta,
    CheckpointMismatch,
    CoverageReport,
    EmptyDataset,
    InvariantViolation,
    KnowledgeEntry,
    KnowledgeSet,
    SchemaViolation,
    acquire_knowledge,
    coverage,
    iter_acquisition,
    load_knowledge_set,
    save_knowledge_set,
)
from codesift.teacher_client import CoinFlip, FixedTexts, SamplingConfig, mock_teacher
from codesift.verifier import is_correct, verify


def make_dataset(n, answer=40.0):
    return [SpecExample(f"ex{i:03d}", f"question {i}?", answer) for i in range(n)]


def always_correct_teacher(seed=0):
    return mock_teacher({}, seed=seed, default=CoinFlip("answer = 40.0", 1.0, "answer = 0"))


def never_correct_teacher(seed=0):
    return mock_teacher({}, seed=seed, default=CoinFlip("answer = 40.0", 0.0, "answer = 0"))


@pytest.fixture
def config():
    return SamplingConfig(num_samples=5)


class TestAcquire:
    def test_always_correct(self, seed_prompt, config):
        dataset = make_dataset(3)
        ks, report = acquire_knowledge(
            dataset, always_correct_teacher(), seed_prompt, config, seed=1
        )
        assert len(ks) == 3
        assert report.covered == 3 and report.total == 3
        assert report.fraction == 1.0
        for entry in ks.entries:
            assert entry.produced_value == 40.0
            assert 0 <= entry.sample_index < 5
            assert is_correct(verify(entry.program, entry.answer))

    def test_never_correct(self, seed_prompt, config):
        ks, report = acquire_knowledge(
            make_dataset(3), never_correct_teacher(), seed_prompt, config, seed=1
        )
        assert len(ks) == 0
        assert report.fraction == 0.0
        assert all(cov.num_correct == 0 for cov in report.per_example.values())

    def test_per_example_counts(self, seed_prompt):
        teacher = mock_teacher(
            {"ex000": FixedTexts(("answer = 40.0", "answer = 1", "import os"))},
            seed=0,
        )
        ks, report = acquire_knowledge(
            make_dataset(1), teacher, seed_prompt, SamplingConfig(num_samples=3), seed=0
        )
        cov = report.per_example["ex000"]
        assert cov.num_samples == 3 and cov.num_correct == 1
        assert ks.entries[0].sample_index == 0

    def test_empty_dataset(self, seed_prompt, config):
        with pytest.raises(EmptyDataset):
            acquire_knowledge([], always_correct_teacher(), seed_prompt, config, seed=0)

    def test_meta_recorded(self, seed_prompt, config):
        dataset = make_dataset(2)
        ks, _ = acquire_knowledge(dataset, always_correct_teacher(), seed_prompt, config, seed=7)
        assert ks.meta.teacher_id == "mock-teacher"
        assert ks.meta.num_samples == 5
        assert ks.meta.seed == 7
        assert ks.meta.dataset_fingerprint

    def test_deterministic(self, seed_prompt, config):
        dataset = make_dataset(5)
        teacher = lambda: mock_teacher(  # noqa: E731
            {}, seed=3, default=CoinFlip("answer = 40.0", 0.6, "answer = 0")
        )
        first = acquire_knowledge(dataset, teacher(), seed_prompt, config, seed=11)
        second = acquire_knowledge(dataset, teacher(), seed_prompt, config, seed=11)
        assert first == second

    def test_selection_differs_across_seeds(self, seed_prompt):
        # four distinct correct programs; the chosen slot should vary by seed
        programs = tuple(f"x = {i}\nanswer = 40.0" for i in range(4))
        teacher = mock_teacher({"ex000": FixedTexts(programs)}, seed=0)
        chosen = set()
        for seed in range(40):
            ks, _ = acquire_knowledge(
                make_dataset(1), teacher, seed_prompt, SamplingConfig(num_samples=4), seed=seed
            )
            chosen.add(ks.entries[0].sample_index)
        assert chosen == {0, 1, 2, 3}

    def test_selection_counts_duplicates(self, seed_prompt):
        # correct program appears twice as often -> chosen ~2/3 of the time
        teacher = mock_teacher(
            {"ex000": FixedTexts(("answer = 40.0", "answer = 40.0", "answer = 40.0 + 0"))},
            seed=0,
        )
        plain = 0
        runs = 600
        for seed in range(runs):
            ks, _ = acquire_knowledge(
                make_dataset(1), teacher, seed_prompt, SamplingConfig(num_samples=3), seed=seed
            )
            if ks.entries[0].sample_index in (0, 1):
                plain += 1
        assert abs(plain / runs - 2 / 3) < 0.08

    def test_coverage_monotone_in_num_samples(self, seed_prompt):
        dataset = make_dataset(40)
        covered = {}
        for n in (3, 8):
            teacher = mock_teacher(
                {}, seed=5, default=CoinFlip("answer = 40.0", 0.25, "answer = 0")
            )
            ks, _ = acquire_knowledge(
                dataset, teacher, seed_prompt, SamplingConfig(num_samples=n), seed=5
            )
            covered[n] = ks.covered_ids()
        assert covered[3] <= covered[8]


class TestCoverage:
    def test_trivial_fractions(self):
        assert coverage(CoverageReport(0, 10, 0.0)) == 0.0
        assert coverage(CoverageReport(10, 10, 1.0)) == 1.0

    def test_empty(self):
        with pytest.raises(EmptyDataset):
            coverage(CoverageReport(0, 0, 0.0))


class TestPersistence:
    def test_round_trip(self, seed_prompt, config, tmp_path):
        ks, _ = acquire_knowledge(
            make_dataset(3), always_correct_teacher(), seed_prompt, config, seed=2
        )
        path = tmp_path / "ks.jsonl"
        save_knowledge_set(ks, path)
        assert load_knowledge_set(path) == ks

    def test_empty_set_round_trip(self, seed_prompt, config, tmp_path):
        ks, _ = acquire_knowledge(
            make_dataset(2), never_correct_teacher(), seed_prompt, config, seed=2
        )
        path = tmp_path / "ks.jsonl"
        save_knowledge_set(ks, path)
        loaded = load_knowledge_set(path)
        assert len(loaded) == 0
        assert loaded.meta == ks.meta

    def test_wrong_answer_entry_rejected_on_load(self, tmp_path):
        path = tmp_path / "ks.jsonl"
        meta = {"type": "meta", "teacher_id": "t", "temperature": 0.6,
                "num_samples": 5, "seed": 0, "dataset_fingerprint": "f"}
        entry = {"type": "entry", "example_id": "e", "question": "q?",
                 "program": "answer = 39.0", "answer": 40.0, "teacher_id": "t",
                 "sample_index": 0, "produced_value": 39.0}
        path.write_text(json.dumps(meta) + "\n" + json.dumps(entry) + "\n")
        with pytest.raises(InvariantViolation):
            load_knowledge_set(path)

    def test_unparsable_entry_rejected_on_load(self, tmp_path):
        path = tmp_path / "ks.jsonl"
        meta = {"type": "meta", "teacher_id": "t", "temperature": 0.6,
                "num_samples": 5, "seed": 0, "dataset_fingerprint": "f"}
        entry = {"type": "entry", "example_id": "e", "question": "q?",
                 "program": "import os", "answer": 40.0, "teacher_id": "t",
                 "sample_index": 0, "produced_value": 40.0}
        path.write_text(json.dumps(meta) + "\n" + json.dumps(entry) + "\n")
        with pytest.raises(InvariantViolation):
            load_knowledge_set(path)

    def test_schema_violations(self, tmp_path):
        path = tmp_path / "ks.jsonl"
        path.write_text("")
        with pytest.raises(SchemaViolation):
            load_knowledge_set(path)
        path.write_text('{"type": "entry"}\n')
        with pytest.raises(SchemaViolation):
            load_knowledge_set(path)

    def test_duplicate_example_ids_rejected(self, tmp_path):
        path = tmp_path / "ks.jsonl"
        meta = {"type": "meta", "teacher_id": "t", "temperature": 0.6,
                "num_samples": 5, "seed": 0, "dataset_fingerprint": "f"}
        entry = {"type": "entry", "example_id": "e", "question": "q?",
                 "program": "answer = 40.0", "answer": 40.0, "teacher_id": "t",
                 "sample_index": 0, "produced_value": 40.0}
        path.write_text(json.dumps(meta) + "\n" + json.dumps(entry) + "\n" + json.dumps(entry) + "\n")
        with pytest.raises(InvariantViolation):
            load_knowledge_set(path)


class CrashingTeacher:
    """Delegates to a mock but dies after a fixed number of sample calls."""

    def __init__(self, inner, crash_after):
        self.inner = inner
        self.model_id = inner.model_id
        self.crash_after = crash_after
        self.calls = 0

    def sample(self, example_id, prompt_text, config):
        if self.calls >= self.crash_after:
            raise RuntimeError("simulated crash")
        self.calls += 1
        return self.inner.sample(example_id, prompt_text, config)


class TestCheckpointing:
    def test_resume_produces_identical_bytes(self, seed_prompt, config, tmp_path):
        dataset = make_dataset(6)

        def fresh_teacher():
            return mock_teacher({}, seed=4, default=CoinFlip("answer = 40.0", 0.7, "answer = 0"))

        # uninterrupted reference run
        ks_ref, _ = acquire_knowledge(
            dataset, fresh_teacher(), seed_prompt, config, seed=9,
            checkpoint_path=tmp_path / "ref-ckpt.jsonl",
        )
        ref_path = tmp_path / "ref.jsonl"
        save_knowledge_set(ks_ref, ref_path)

        # crashed run: dies after 3 examples, checkpoint keeps their completions
        crashing = CrashingTeacher(fresh_teacher(), crash_after=3)
        ckpt = tmp_path / "ckpt.jsonl"
        with pytest.raises(RuntimeError):
            acquire_knowledge(
                dataset, crashing, seed_prompt, config, seed=9, checkpoint_path=ckpt
            )
        assert ckpt.exists()

        # resumed run replays the checkpoint and finishes
        resumed = CrashingTeacher(fresh_teacher(), crash_after=100)
        ks_resumed, _ = acquire_knowledge(
            dataset, resumed, seed_prompt, config, seed=9, checkpoint_path=ckpt
        )
        assert resumed.calls == 3  # only the unfinished examples were sampled
        out_path = tmp_path / "resumed.jsonl"
        save_knowledge_set(ks_resumed, out_path)
        assert out_path.read_bytes() == ref_path.read_bytes()

    def test_truncated_final_line_tolerated(self, seed_prompt, config, tmp_path):
        dataset = make_dataset(3)
        ckpt = tmp_path / "ckpt.jsonl"
        acquire_knowledge(
            dataset, always_correct_teacher(), seed_prompt, config, seed=3,
            checkpoint_path=ckpt,
        )
        # simulate a crash mid-write: chop the last line in half
        content = ckpt.read_text()
        ckpt.write_text(content[: len(content) - 30])
        ks, _ = acquire_knowledge(
            dataset, always_correct_teacher(), seed_prompt, config, seed=3,
            checkpoint_path=ckpt,
        )
        assert len(ks) == 3

    def test_mismatched_checkpoint_rejected(self, seed_prompt, config, tmp_path):
        dataset = make_dataset(2)
        ckpt = tmp_path / "ckpt.jsonl"
        acquire_knowledge(
            dataset, always_correct_teacher(), seed_prompt, config, seed=1,
            checkpoint_path=ckpt,
        )
        with pytest.raises(CheckpointMismatch):
            acquire_knowledge(
                dataset, always_correct_teacher(), seed_prompt, config, seed=2,
                checkpoint_path=ckpt,
            )

    def test_checkpoint_replay_skips_sampling(self, seed_prompt, config, tmp_path):
        dataset = make_dataset(4)
        ckpt = tmp_path / "ckpt.jsonl"
        acquire_knowledge(
            dataset, always_correct_teacher(), seed_prompt, config, seed=5,
            checkpoint_path=ckpt,
        )
        silent = CrashingTeacher(always_correct_teacher(), crash_after=0)
        ks, _ = acquire_knowledge(
            dataset, silent, seed_prompt, config, seed=5, checkpoint_path=ckpt
        )
        assert len(ks) == 4  # fully replayed, zero live calls


class TestKnowledgeSetInvariants:
    def test_one_entry_per_example(self):
        meta = AcquisitionMeta("t", 0.6, 5, 0, "f")
        entry = KnowledgeEntry("e", "q?", "answer = 1", 1.0, "t", 0, 1.0)
        with pytest.raises(InvariantViolation):
            KnowledgeSet((entry, entry), meta)

    def test_iter_acquisition_exposes_all_correct(self, seed_prompt):
        teacher = mock_teacher(
            {"ex000": FixedTexts(("answer = 40.0", "answer = 0", "answer = 40.0"))},
            seed=0,
        )
        [acq] = list(
            iter_acquisition(
                make_dataset(1), teacher, seed_prompt, SamplingConfig(num_samples=3), seed=0
            )
        )
        assert acq.correct_slots == (0, 2)
        assert acq.chosen_slot in (0, 2)
