import json

import pytest

# Four small question/program pairs with known execution results.
PAIRS = (
    ("A store has 45 apples. It sells 18. How many apples remain?",
     "n0 = 45\nn1 = 18\nanswer = n0 - n1", 27.0),
    ("A train travels at 60 km/h for 3 hours. How far does it travel?",
     "n0 = 60\nn1 = 3\nanswer = n0 * n1", 180.0),
    ("Tom has 3 bags with 7 marbles each. How many marbles in total?",
     "n0 = 3\nn1 = 7\nanswer = n0 * n1", 21.0),
    ("A rope 100 m long is cut into 4 equal pieces. How long is each piece?",
     "n0 = 100\nn1 = 4\nanswer = n0 / n1", 25.0),
)


def write_knowledge_set(path, pairs=PAIRS):
    """Write the pipeline's knowledge-set JSONL format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "type": "meta", "teacher_id": "test-teacher", "temperature": 0.6,
            "num_samples": 4, "seed": 0, "dataset_fingerprint": "test",
        }) + "\n")
        for i, (question, program, answer) in enumerate(pairs):
            fh.write(json.dumps({
                "type": "entry", "example_id": f"ex{i:03d}", "question": question,
                "program": program, "answer": answer, "teacher_id": "test-teacher",
                "sample_index": 0, "produced_value": answer,
            }, ensure_ascii=False) + "\n")
    return path


def write_dataset(path, pairs=PAIRS):
    """Write the pipeline's canonical dataset JSONL format."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, (question, _, answer) in enumerate(pairs):
            fh.write(json.dumps({
                "id": f"ex{i:03d}", "question": question, "answer": answer,
            }, ensure_ascii=False) + "\n")
    return path


@pytest.fixture
def knowledge_path(tmp_path):
    return write_knowledge_set(tmp_path / "knowledge.jsonl")


@pytest.fixture
def dataset_path(tmp_path):
    return write_dataset(tmp_path / "dataset.jsonl")
