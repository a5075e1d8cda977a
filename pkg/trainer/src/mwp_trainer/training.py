"""Fine-tuning loop: AdamW, linear warmup/decay, gradient clipping, fp32.

Defaults are the production recipe (140 epochs, lr 1e-4, betas (0.9, 0.999),
eps 1e-8, weight decay 0.1, 100 warmup steps, effective batch 32, clip 1.0);
the expert-iteration controller overrides epochs/lr per round through the
config file. Mode "mle" trains on targets alone; mode "kd" additionally
matches a teacher checkpoint's next-token distributions, mixed by alpha.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import torch

from .data import DataError, KnowledgePair, read_knowledge_set
from .losses import VocabularyMismatch, kd_loss, mle_loss
from .model import ModelConfig, TinyCausalLM, load_checkpoint, save_checkpoint
from .tokenizer import BOS, PAD, CharTokenizer, TokenizedPair, tokenize_pair, training_text

logger = logging.getLogger(__name__)

FRESH_MODEL_REFS = ("", "base", "scratch")


class ConfigError(Exception):
    pass


@dataclass
class TrainingConfig:
    epochs: int = 140
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.1
    warmup_steps: int = 100
    batch_size: int = 32
    grad_clip_norm: float = 1.0
    alpha: float = 0.5
    mode: str = "mle"  # "mle" | "kd"
    distill_temperature: float = 1.0
    loss_on_program_only: bool = False
    reduction: str = "token_mean"
    seed: int = 0
    base_model: str = "base"  # "base"/"scratch" for fresh init, else a checkpoint path
    teacher_checkpoint: Optional[str] = None
    d_model: int = 96
    n_heads: int = 4
    n_layers: int = 2
    max_len: int = 384

    def __post_init__(self):
        if self.mode not in ("mle", "kd"):
            raise ConfigError(f"mode must be 'mle' or 'kd', got {self.mode!r}")
        if self.mode == "kd" and not self.teacher_checkpoint:
            raise ConfigError("kd mode needs a teacher_checkpoint")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    _FLOATS = ("learning_rate", "adam_eps", "weight_decay", "grad_clip_norm",
               "alpha", "distill_temperature")
    _INTS = ("epochs", "warmup_steps", "batch_size", "seed",
             "d_model", "n_heads", "n_layers", "max_len")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingConfig":
        """Build from a config-file dict; unknown keys are ignored."""
        kwargs = {}
        try:
            for key in cls._FLOATS:
                if key in raw:
                    kwargs[key] = float(raw[key])
            for key in cls._INTS:
                if key in raw:
                    kwargs[key] = int(raw[key])
            if "adam_betas" in raw:
                beta1, beta2 = raw["adam_betas"]
                kwargs["adam_betas"] = (float(beta1), float(beta2))
            for key in ("mode", "base_model", "teacher_checkpoint", "reduction"):
                if key in raw and raw[key] is not None:
                    kwargs[key] = str(raw[key])
            if "loss_on_program_only" in raw:
                kwargs["loss_on_program_only"] = bool(raw["loss_on_program_only"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad training config value: {exc}") from None
        return cls(**kwargs)


def _batch_tensors(
    pairs: list[TokenizedPair], program_only: bool
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Pad a batch and build (inputs, targets, mask).

    Inputs are BOS-shifted so position k predicts token k of the target
    sequence. The mask drops padding; with ``program_only`` it also drops
    the question positions, leaving the program and the end marker.
    """
    longest = max(len(p.tokens) for p in pairs)
    inputs = torch.full((len(pairs), longest), PAD, dtype=torch.long)
    targets = torch.full((len(pairs), longest), PAD, dtype=torch.long)
    mask = torch.zeros(len(pairs), longest)
    for row, pair in enumerate(pairs):
        seq = torch.tensor(pair.tokens, dtype=torch.long)
        n = len(seq)
        inputs[row, 0] = BOS
        inputs[row, 1:n] = seq[:-1]
        targets[row, :n] = seq
        start = pair.boundary_index if program_only else 0
        mask[row, start:n] = 1.0
    return inputs, targets, mask


def _fresh_model(config: TrainingConfig, tokenizer: CharTokenizer) -> TinyCausalLM:
    model_config = ModelConfig(
        vocab_size=tokenizer.vocab_size,
        d_model=config.d_model,
        n_heads=config.n_heads,
        n_layers=config.n_layers,
        max_len=config.max_len,
    )
    return TinyCausalLM(model_config)


def _load_frozen(path_str: str, what: str) -> tuple[TinyCausalLM, CharTokenizer]:
    path = Path(path_str)
    if not path.exists():
        raise ConfigError(f"{what} checkpoint not found: {path}")
    model, tokenizer = load_checkpoint(path)
    return model, tokenizer


def _prepare_models(
    config: TrainingConfig, corpus: list[str]
) -> tuple[TinyCausalLM, CharTokenizer, Optional[TinyCausalLM]]:
    """Resolve the student, its tokenizer, and (in kd mode) the frozen teacher.

    A warm-started student keeps its checkpoint's vocabulary; a fresh kd
    student adopts the teacher's, since the distillation loss needs the two
    vocabularies identical. Either way the training corpus must be
    expressible in the final vocabulary.
    """
    teacher = None
    if config.mode == "kd":
        teacher, teacher_tokenizer = _load_frozen(config.teacher_checkpoint, "teacher")
        teacher.eval()
        for parameter in teacher.parameters():
            parameter.requires_grad_(False)
    if config.base_model in FRESH_MODEL_REFS:
        if teacher is not None:
            tokenizer = teacher_tokenizer
        else:
            tokenizer = CharTokenizer.from_corpus(corpus)
        model = _fresh_model(config, tokenizer)
    else:
        model, tokenizer = _load_frozen(config.base_model, "base model")
    if teacher is not None and teacher_tokenizer.chars != tokenizer.chars:
        raise VocabularyMismatch(
            "teacher and student tokenizers differ "
            f"({teacher_tokenizer.vocab_size} vs {tokenizer.vocab_size} entries)"
        )
    uncovered = [text for text in corpus if not tokenizer.covers(text)]
    if uncovered and (teacher is not None or config.base_model not in FRESH_MODEL_REFS):
        raise VocabularyMismatch(
            f"{len(uncovered)} training sequences hold characters outside the vocabulary"
        )
    return model, tokenizer, teacher


def train(
    train_set_path: Union[str, Path],
    config: TrainingConfig,
    out_dir: Union[str, Path],
) -> dict:
    """Fine-tune on a knowledge set and write checkpoint + manifest.json.

    Returns the manifest dict. Raises DataError for unusable training data,
    ConfigError for bad settings, VocabularyMismatch in kd mode when the
    teacher's tokenizer differs.
    """
    entries = read_knowledge_set(train_set_path)
    if not entries:
        raise DataError("empty train set")
    return train_on_pairs(entries, config, out_dir)


def train_on_pairs(
    entries: list[KnowledgePair],
    config: TrainingConfig,
    out_dir: Union[str, Path],
) -> dict:
    torch.manual_seed(config.seed)
    corpus = [training_text(e.question, e.program) for e in entries]
    model, tokenizer, teacher = _prepare_models(config, corpus)

    pairs = [tokenize_pair(tokenizer, e.question, e.program) for e in entries]
    too_long = [p for p in pairs if len(p.tokens) > config.max_len]
    if too_long:
        raise DataError(
            f"{len(too_long)} sequences exceed max_len {config.max_len}"
        )

    model.train()
    model.float()
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    batches_per_epoch = (len(pairs) + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * batches_per_epoch
    warmup = min(config.warmup_steps, max(total_steps - 1, 1))

    def lr_lambda(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        remaining = total_steps - warmup
        if remaining <= 0:
            return 1.0
        return max(0.0, (total_steps - step) / remaining)

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda)
    generator = torch.Generator().manual_seed(config.seed)

    steps = 0
    final_epoch_loss = float("inf")
    for epoch in range(config.epochs):
        order = torch.randperm(len(pairs), generator=generator).tolist()
        epoch_losses = []
        for start in range(0, len(pairs), config.batch_size):
            batch = [pairs[i] for i in order[start : start + config.batch_size]]
            inputs, targets, mask = _batch_tensors(batch, config.loss_on_program_only)
            logits = model(inputs)
            if teacher is not None:
                with torch.no_grad():
                    teacher_logits = teacher(inputs)
                loss = kd_loss(
                    logits, teacher_logits, targets, mask,
                    alpha=config.alpha,
                    reduction=config.reduction,
                    temperature=config.distill_temperature,
                )
            else:
                loss = mle_loss(logits, targets, mask, reduction=config.reduction)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
            optimizer.step()
            scheduler.step()
            steps += 1
            epoch_losses.append(loss.item())
        final_epoch_loss = sum(epoch_losses) / len(epoch_losses)
        if epoch % 20 == 0 or epoch == config.epochs - 1:
            logger.info("epoch %d/%d loss %.4f", epoch + 1, config.epochs, final_epoch_loss)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "model.pt"
    save_checkpoint(model, tokenizer, checkpoint_path)
    manifest = {
        "checkpoint_path": str(checkpoint_path),
        "final_train_loss": final_epoch_loss,
        "steps": steps,
        "config": _config_echo(config),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest


def _config_echo(config: TrainingConfig) -> dict:
    echo = asdict(config)
    echo["adam_betas"] = list(config.adam_betas)
    return echo
