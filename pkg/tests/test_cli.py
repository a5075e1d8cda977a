import json
import sys
import textwrap

import pytest

from codesift import cli
from codesift.dataset import SpecExample, save_dataset_jsonl
from codesift.evaluator import save_sample_file
from conftest import SEED_EXAMPLES

from test_expert_iter import STUB_TRAINER


@pytest.fixture
def dataset_path(tmp_path):
    path = tmp_path / "dataset.jsonl"
    examples = [SpecExample(f"ex{i:03d}", f"question {i}?", 40.0) for i in range(3)]
    save_dataset_jsonl(examples, path)
    return path


@pytest.fixture
def prompt_path(tmp_path):
    path = tmp_path / "prompt.jsonl"
    lines = [json.dumps({"question": q, "program": p}) for q, p, _ in SEED_EXAMPLES]
    path.write_text("\n".join(lines) + "\n")
    return path


def acquire_config(tmp_path, dataset_path, prompt_path, out_dir, p=0.7, num_samples=4):
    config = {
        "dataset": str(dataset_path),
        "validation_size": 0,
        "prompt": str(prompt_path),
        "teacher": {
            "type": "mock",
            "seed": 5,
            "default": {
                "correct_program": "answer = 40.0",
                "correct_probability": p,
                "decoy_program": "answer = 0",
            },
        },
        "sampling": {"num_samples": num_samples, "temperature": 0.6},
        "tolerance": {"atol": 1e-6, "rtol": 1e-6},
        "seed": 9,
        "out_dir": str(out_dir),
    }
    path = tmp_path / f"{out_dir.name}-config.json"
    path.write_text(json.dumps(config, indent=2))
    return path


class TestIngest:
    def test_ingest_writes_dataset_and_manifest(self, tmp_path, capsys):
        raw = tmp_path / "raw.jsonl"
        records = [
            {"question": f"q{i}?", "answer": f"thinking\n#### {i}"} for i in range(10)
        ]
        raw.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        out = tmp_path / "dataset.jsonl"
        code = cli.main(
            ["ingest", "--in", str(raw), "--out", str(out),
             "--validation-size", "3", "--seed", "1"]
        )
        assert code == 0
        assert len(out.read_text().splitlines()) == 10
        manifest = json.loads((tmp_path / "dataset.jsonl.split.json").read_text())
        assert len(manifest["validation_ids"]) == 3
        assert len(manifest["train_ids"]) == 7
        assert "ingested 10 examples" in capsys.readouterr().out

    def test_missing_input_is_config_error(self, tmp_path):
        code = cli.main(["ingest", "--in", str(tmp_path / "nope.jsonl"),
                         "--out", str(tmp_path / "o.jsonl")])
        assert code == cli.EXIT_CONFIG


class TestVerify:
    def test_correct_program_exits_zero(self, tmp_path, capsys):
        program = tmp_path / "p.txt"
        program.write_text(SEED_EXAMPLES[0][1])
        code = cli.main(["verify", "--program", str(program), "--answer", "40"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["status"] == "correct"
        assert payload["produced_value"] == 40.0

    def test_wrong_answer_exits_nonzero(self, tmp_path, capsys):
        program = tmp_path / "p.txt"
        program.write_text("answer = 39.9")
        code = cli.main(["verify", "--program", str(program), "--answer", "40"])
        assert code == 1
        assert json.loads(capsys.readouterr().out)["status"] == "wrong_answer"

    def test_stdin_program(self, monkeypatch, capsys):
        import io

        monkeypatch.setattr(sys, "stdin", io.StringIO("answer = 2 + 2"))
        code = cli.main(["verify", "--program", "-", "--answer", "4"])
        assert code == 0

    def test_usage_error(self, capsys):
        assert cli.main(["verify", "--answer", "4"]) == cli.EXIT_USAGE


class TestEval:
    def test_eval_report(self, tmp_path, dataset_path, capsys):
        samples_path = tmp_path / "samples.jsonl"
        save_sample_file(
            samples_path,
            {"ex000": ["answer = 40.0"], "ex001": ["answer = 0"], "ex002": ["answer = 40.0"]},
            model_id="m", decode_mode="greedy", temperature=None, num_samples=1, seed=0,
        )
        out = tmp_path / "report.json"
        code = cli.main([
            "eval", "--samples", str(samples_path), "--dataset", str(dataset_path),
            "--k", "1", "--out", str(out),
        ])
        assert code == 0
        report = json.loads(out.read_text())
        assert report["pass_at_k"]["1"] == pytest.approx(2 / 3)
        assert report["decode_mode"] == "greedy"

    def test_empty_samples_is_invariant_error(self, tmp_path, dataset_path, capsys):
        samples_path = tmp_path / "samples.jsonl"
        samples_path.write_text("")
        code = cli.main(["eval", "--samples", str(samples_path), "--dataset", str(dataset_path)])
        assert code == cli.EXIT_INVARIANT
        assert "no samples" in capsys.readouterr().err

    def test_unknown_example_is_invariant_error(self, tmp_path, dataset_path):
        samples_path = tmp_path / "samples.jsonl"
        save_sample_file(samples_path, {"ghost": ["answer = 1"]},
                         model_id="m", decode_mode="greedy", temperature=None,
                         num_samples=1, seed=0)
        code = cli.main(["eval", "--samples", str(samples_path), "--dataset", str(dataset_path)])
        assert code == cli.EXIT_INVARIANT


class TestAcquire:
    def test_acquire_writes_artifacts(self, tmp_path, dataset_path, prompt_path, capsys):
        out_dir = tmp_path / "run1"
        config = acquire_config(tmp_path, dataset_path, prompt_path, out_dir, p=1.0)
        assert cli.main(["acquire", "--config", str(config)]) == 0
        assert (out_dir / "knowledge.jsonl").exists()
        assert (out_dir / "coverage.json").exists()
        assert (out_dir / "checkpoint.jsonl").exists()
        meta = json.loads((out_dir / "run-meta.json").read_text())
        assert meta["command"] == "acquire" and meta["seed"] == 9
        coverage = json.loads((out_dir / "coverage.json").read_text())
        assert coverage["fraction"] == 1.0

    def test_two_identical_runs_byte_identical(self, tmp_path, dataset_path, prompt_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        config_a = acquire_config(tmp_path, dataset_path, prompt_path, out_a)
        config_b = acquire_config(tmp_path, dataset_path, prompt_path, out_b)
        assert cli.main(["acquire", "--config", str(config_a), "--out-dir", str(out_a)]) == 0
        assert cli.main(["acquire", "--config", str(config_b), "--out-dir", str(out_b)]) == 0
        assert (out_a / "knowledge.jsonl").read_bytes() == (out_b / "knowledge.jsonl").read_bytes()
        assert (out_a / "coverage.json").read_bytes() == (out_b / "coverage.json").read_bytes()

    def test_interrupted_run_resumes_identically(self, tmp_path, dataset_path, prompt_path):
        out_full = tmp_path / "full"
        config = acquire_config(tmp_path, dataset_path, prompt_path, out_full)
        assert cli.main(["acquire", "--config", str(config), "--out-dir", str(out_full)]) == 0

        # fake a mid-run kill: keep the meta line, one finished example, and a
        # partial write of the next record
        out_resumed = tmp_path / "resumed"
        out_resumed.mkdir()
        full_lines = (out_full / "checkpoint.jsonl").read_text().splitlines()
        partial = "\n".join(full_lines[:2]) + "\n" + full_lines[2][:25]
        (out_resumed / "checkpoint.jsonl").write_text(partial)

        assert cli.main(["acquire", "--config", str(config), "--out-dir", str(out_resumed)]) == 0
        assert (
            (out_resumed / "knowledge.jsonl").read_bytes()
            == (out_full / "knowledge.jsonl").read_bytes()
        )

    def test_keep_all_correct(self, tmp_path, dataset_path, prompt_path):
        out_dir = tmp_path / "all"
        config = acquire_config(tmp_path, dataset_path, prompt_path, out_dir, p=1.0)
        assert cli.main(["acquire", "--config", str(config), "--keep-all-correct"]) == 0
        lines = (out_dir / "all-correct.jsonl").read_text().splitlines()
        # every sample of every example was correct: 3 examples x 4 samples
        assert len(lines) == 1 + 12

    def test_missing_config(self, tmp_path):
        assert cli.main(["acquire", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG

    def test_bad_dataset_path_in_config(self, tmp_path, prompt_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({
            "dataset": str(tmp_path / "missing.jsonl"),
            "prompt": str(prompt_path),
            "teacher": {"type": "mock"},
            "seed": 0,
            "out_dir": str(tmp_path / "o"),
        }))
        assert cli.main(["acquire", "--config", str(config)]) == cli.EXIT_CONFIG


class TestReport:
    def test_report_summary(self, tmp_path, dataset_path, prompt_path, capsys):
        out_dir = tmp_path / "run"
        config = acquire_config(tmp_path, dataset_path, prompt_path, out_dir, p=1.0)
        cli.main(["acquire", "--config", str(config)])
        capsys.readouterr()
        code = cli.main([
            "report", "--knowledge", str(out_dir / "knowledge.jsonl"),
            "--coverage", str(out_dir / "coverage.json"),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "entries            3" in out
        assert "coverage           1.0000" in out


class TestExpertIterCommand:
    def test_expert_iter_run(self, tmp_path, dataset_path, prompt_path):
        stub = tmp_path / "stub_trainer.py"
        stub.write_text(STUB_TRAINER)
        out_dir = tmp_path / "ei"
        config = {
            "dataset": str(dataset_path),
            "prompt": str(prompt_path),
            "seed": 3,
            "out_dir": str(out_dir),
            "expert_iteration": {"samples_per_example": 3, "max_iterations": 10},
            "student": {
                "type": "mock",
                "seed": 2,
                "script": {
                    "ex000": {"correct_program": "answer = 40.0",
                              "correct_probability": 1.0, "decoy_program": "answer = 0"},
                },
                "default": {"correct_program": "answer = 40.0",
                            "correct_probability": 0.0, "decoy_program": "answer = 0"},
            },
        }
        config_path = tmp_path / "ei.json"
        config_path.write_text(json.dumps(config))
        code = cli.main([
            "expert-iter", "--config", str(config_path),
            "--trainer", f"{sys.executable} {stub}",
        ])
        assert code == 0
        history = json.loads((out_dir / "history.json").read_text())
        assert history["iterations"] == 1
        sizes = [h["knowledge_size"] for h in history["history"]]
        assert sizes == [1, 1]
        assert history["final_model"].endswith("model.bin")
        assert (out_dir / "knowledge.jsonl").exists()


class TestUsage:
    def test_unknown_command(self, capsys):
        assert cli.main(["frobnicate"]) == cli.EXIT_USAGE

    def test_no_command(self, capsys):
        assert cli.main([]) == cli.EXIT_USAGE
