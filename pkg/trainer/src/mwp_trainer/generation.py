"""Batch generation from a checkpoint into the evaluator's sample format.

Each example is prompted exactly as during training (the question rendered
as a comment line, nothing else), then decoded greedily or by temperature
sampling until the end marker. Temperature draws use a generator seeded per
(seed, example id, sample index), so a rerun writes an identical file.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Union

import torch
import torch.nn.functional as F

from .data import read_dataset
from .model import TinyCausalLM, load_checkpoint
from .tokenizer import BOS, EOS, CharTokenizer, prompt_text

logger = logging.getLogger(__name__)


def _draw_seed(seed: int, example_id: str, sample_index: int) -> int:
    key = f"{seed}/{example_id}/{sample_index}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big") >> 1


@torch.no_grad()
def complete_one(
    model: TinyCausalLM,
    tokenizer: CharTokenizer,
    question: str,
    greedy: bool,
    temperature: float,
    max_new_tokens: int,
    generator: torch.Generator = None,
) -> str:
    ids = [BOS] + tokenizer.encode(prompt_text(question))
    budget = min(max_new_tokens, model.config.max_len - len(ids))
    produced: list[int] = []
    for _ in range(budget):
        logits = model(torch.tensor([ids], dtype=torch.long))[0, -1]
        if greedy:
            next_id = int(logits.argmax())
        else:
            probs = F.softmax(logits / temperature, dim=-1)
            next_id = int(torch.multinomial(probs, 1, generator=generator))
        if next_id == EOS:
            break
        ids.append(next_id)
        produced.append(next_id)
    return tokenizer.decode(produced)


def generate_samples(
    checkpoint_path: Union[str, Path],
    dataset_path: Union[str, Path],
    out_path: Union[str, Path],
    greedy: bool = False,
    temperature: float = 0.6,
    num_samples: int = 100,
    seed: int = 0,
    max_new_tokens: int = 256,
) -> None:
    """Write a sample JSONL (meta line, then per-sample records)."""
    model, tokenizer = load_checkpoint(checkpoint_path)
    model.eval()
    examples = read_dataset(dataset_path)
    if greedy and num_samples != 1:
        logger.info("greedy decoding forces num_samples=1 (was %d)", num_samples)
        num_samples = 1
    meta = {
        "type": "meta",
        "model_id": str(checkpoint_path),
        "decode_mode": "greedy" if greedy else "temperature",
        "temperature": None if greedy else temperature,
        "num_samples": num_samples,
        "seed": seed,
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n")
        for example in examples:
            for index in range(num_samples):
                generator = None
                if not greedy:
                    generator = torch.Generator()
                    generator.manual_seed(_draw_seed(seed, example.example_id, index))
                program = complete_one(
                    model, tokenizer, example.question,
                    greedy=greedy, temperature=temperature,
                    max_new_tokens=max_new_tokens, generator=generator,
                )
                fh.write(
                    json.dumps(
                        {
                            "type": "sample",
                            "example_id": example.example_id,
                            "sample_index": index,
                            "program": program,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )
            logger.info("generated %d samples for %s", num_samples, example.example_id)
