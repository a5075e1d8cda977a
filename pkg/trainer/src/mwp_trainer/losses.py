"""Training objectives over next-token distributions.

``mle_loss`` is the causal-LM objective: the sum over positions of the
cross entropy between the model's next-token distribution and the one-hot
target, i.e. -sum_k log P(t_k | t_<k). ``distill_loss`` replaces the
one-hot target with a teacher's distribution at the same position:
-sum_k sum_x P_teacher(x | t_<k) log P_student(x | t_<k). ``kd_loss``
mixes the two with weight alpha.

Both reduce per batch as a token mean by default (``token_sum`` recovers
the plain summed form); padding positions are masked out everywhere.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


class LossError(Exception):
    pass


class ShapeMismatch(LossError):
    pass


class VocabularyMismatch(LossError):
    pass


_REDUCTIONS = ("token_mean", "token_sum")


def _check_common(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor,
                  reduction: str) -> None:
    if reduction not in _REDUCTIONS:
        raise LossError(f"unknown reduction {reduction!r}")
    if logits.dim() != 3:
        raise ShapeMismatch(f"logits must be [batch, time, vocab], got {tuple(logits.shape)}")
    if targets.shape != logits.shape[:2]:
        raise ShapeMismatch(
            f"targets {tuple(targets.shape)} do not match logits {tuple(logits.shape[:2])}"
        )
    if mask.shape != targets.shape:
        raise ShapeMismatch(f"mask {tuple(mask.shape)} does not match targets")


def _reduce(per_position: torch.Tensor, mask: torch.Tensor, reduction: str) -> torch.Tensor:
    mask = mask.to(per_position.dtype)
    total = (per_position * mask).sum()
    if reduction == "token_sum":
        return total
    count = mask.sum()
    if count.item() == 0:
        raise LossError("mask selects no positions")
    return total / count


def mle_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
    reduction: str = "token_mean",
) -> torch.Tensor:
    """Negative log-likelihood of the target tokens under the model.

    Args:
        logits: [batch, time, vocab] next-token scores; position k predicts
            targets[:, k].
        targets: [batch, time] token ids.
        mask: [batch, time]; positions with 0 contribute nothing.
        reduction: "token_mean" (default) or "token_sum".
    """
    _check_common(logits, targets, mask, reduction)
    log_probs = F.log_softmax(logits, dim=-1)
    nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return _reduce(nll, mask, reduction)


def distill_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    mask: torch.Tensor,
    reduction: str = "token_mean",
    temperature: float = 1.0,
) -> torch.Tensor:
    """Cross entropy of the student's distribution against the teacher's.

    Teacher logits must cover the same positions and the same vocabulary;
    they are treated as constants (no gradient flows into the teacher).
    ``temperature`` sharpens or softens both sides (1.0 means the raw
    next-token distributions).
    """
    if student_logits.shape != teacher_logits.shape:
        if (
            student_logits.dim() == teacher_logits.dim() == 3
            and student_logits.shape[:2] == teacher_logits.shape[:2]
        ):
            raise VocabularyMismatch(
                f"student vocab {student_logits.shape[-1]} != "
                f"teacher vocab {teacher_logits.shape[-1]}"
            )
        raise ShapeMismatch(
            f"student {tuple(student_logits.shape)} vs teacher {tuple(teacher_logits.shape)}"
        )
    if student_logits.dim() != 3:
        raise ShapeMismatch(f"logits must be [batch, time, vocab], got {tuple(student_logits.shape)}")
    if mask.shape != student_logits.shape[:2]:
        raise ShapeMismatch(f"mask {tuple(mask.shape)} does not match logits")
    if reduction not in _REDUCTIONS:
        raise LossError(f"unknown reduction {reduction!r}")
    teacher_probs = F.softmax(teacher_logits.detach() / temperature, dim=-1)
    student_log_probs = F.log_softmax(student_logits / temperature, dim=-1)
    cross_entropy = -(teacher_probs * student_log_probs).sum(dim=-1)
    return _reduce(cross_entropy, mask, reduction)


def kd_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    targets: torch.Tensor,
    mask: torch.Tensor,
    alpha: float = 0.5,
    reduction: str = "token_mean",
    temperature: float = 1.0,
) -> torch.Tensor:
    """alpha * distillation cross entropy + (1 - alpha) * MLE."""
    if not 0.0 <= alpha <= 1.0:
        raise LossError(f"alpha must be in [0, 1], got {alpha}")
    _check_common(student_logits, targets, mask, reduction)
    ce = distill_loss(student_logits, teacher_logits, mask, reduction, temperature)
    nll = mle_loss(student_logits, targets, mask, reduction)
    return alpha * ce + (1.0 - alpha) * nll
