import json

import pytest

from mwp_trainer.generation import generate_samples
from mwp_trainer.training import TrainingConfig, train

from conftest import PAIRS, write_dataset, write_knowledge_set


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One memorizing checkpoint shared by the generation tests."""
    root = tmp_path_factory.mktemp("gen")
    knowledge = write_knowledge_set(root / "knowledge.jsonl")
    dataset = write_dataset(root / "dataset.jsonl")
    manifest = train(
        knowledge,
        TrainingConfig(epochs=450, learning_rate=1e-3, warmup_steps=20,
                       batch_size=8, d_model=96, n_heads=4, n_layers=2, seed=0),
        root / "ckpt",
    )
    return manifest, dataset, root


def read_samples(path):
    lines = [json.loads(l) for l in open(path, encoding="utf-8")]
    return lines[0], lines[1:]


class TestGreedy:
    def test_greedy_forces_single_sample(self, trained, tmp_path):
        manifest, dataset, _ = trained
        out = tmp_path / "greedy.jsonl"
        generate_samples(manifest["checkpoint_path"], dataset, out,
                         greedy=True, num_samples=7, seed=0)
        meta, samples = read_samples(out)
        assert meta["decode_mode"] == "greedy"
        assert meta["num_samples"] == 1
        assert meta["temperature"] is None
        assert len(samples) == len(PAIRS)

    def test_memorized_programs_reproduced(self, trained, tmp_path):
        manifest, dataset, _ = trained
        out = tmp_path / "greedy.jsonl"
        generate_samples(manifest["checkpoint_path"], dataset, out,
                         greedy=True, num_samples=1, seed=0)
        _, samples = read_samples(out)
        by_id = {s["example_id"]: s["program"] for s in samples}
        expected = {f"ex{i:03d}": program for i, (_, program, _) in enumerate(PAIRS)}
        assert by_id == expected


class TestTemperature:
    def test_sample_count_and_meta(self, trained, tmp_path):
        manifest, dataset, _ = trained
        out = tmp_path / "temp.jsonl"
        generate_samples(manifest["checkpoint_path"], dataset, out,
                         greedy=False, temperature=0.6, num_samples=3, seed=5)
        meta, samples = read_samples(out)
        assert meta["decode_mode"] == "temperature"
        assert meta["temperature"] == 0.6
        assert len(samples) == 3 * len(PAIRS)
        indices = {(s["example_id"], s["sample_index"]) for s in samples}
        assert len(indices) == len(samples)

    def test_seeded_reruns_are_byte_identical(self, trained, tmp_path):
        manifest, dataset, _ = trained
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            generate_samples(manifest["checkpoint_path"], dataset, out,
                             greedy=False, temperature=0.8, num_samples=2, seed=11)
        assert a.read_bytes() == b.read_bytes()

    def test_seed_changes_samples(self, trained, tmp_path):
        manifest, dataset, _ = trained
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        generate_samples(manifest["checkpoint_path"], dataset, a,
                         greedy=False, temperature=1.5, num_samples=4, seed=1)
        generate_samples(manifest["checkpoint_path"], dataset, b,
                         greedy=False, temperature=1.5, num_samples=4, seed=2)
        assert a.read_bytes() != b.read_bytes()

    def test_max_new_tokens_cap(self, trained, tmp_path):
        manifest, dataset, _ = trained
        out = tmp_path / "capped.jsonl"
        generate_samples(manifest["checkpoint_path"], dataset, out,
                         greedy=True, num_samples=1, seed=0, max_new_tokens=5)
        _, samples = read_samples(out)
        assert all(len(s["program"]) <= 5 for s in samples)
