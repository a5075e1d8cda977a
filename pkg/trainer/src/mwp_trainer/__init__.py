"""mwp-trainer: fine-tune a tiny causal LM on verified question/program pairs.

Consumes the pipeline's knowledge-set and dataset JSONL files, trains with
either plain MLE or a distillation-mixed objective, and batch-generates the
sample files the evaluator scores.
"""

__version__ = "0.1.0"

from .losses import LossError, ShapeMismatch, VocabularyMismatch, distill_loss, kd_loss, mle_loss
from .model import ModelConfig, TinyCausalLM, load_checkpoint, save_checkpoint
from .tokenizer import CharTokenizer, TokenizedPair, tokenize_pair
from .training import ConfigError, TrainingConfig, train

__all__ = [
    "__version__",
    "CharTokenizer",
    "ConfigError",
    "LossError",
    "ModelConfig",
    "ShapeMismatch",
    "TinyCausalLM",
    "TokenizedPair",
    "TrainingConfig",
    "VocabularyMismatch",
    "distill_loss",
    "kd_loss",
    "load_checkpoint",
    "mle_loss",
    "save_checkpoint",
    "tokenize_pair",
    "train",
]
