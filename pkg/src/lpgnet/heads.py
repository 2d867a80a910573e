"""Emotion classifier, unimodal student heads and the training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .nn import Linear
from .tensor import Tensor, masked_fill, relu, softmax_lastdim

DEFAULT_LAMBDAS = (1.5, 1.0, 0.3)
KL_DIRECTIONS = ("student_teacher", "teacher_student")


@dataclass
class LossBundle:
    task: Tensor
    ce_t: Tensor
    ce_a: Tensor
    kl_t: Tensor
    kl_a: Tensor
    total: Tensor
    lambdas: tuple[float, float, float]

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name).item() for name in ("total", "task", "ce_t", "ce_a", "kl_t", "kl_a")}


def _valid(labels: np.ndarray, mask: np.ndarray) -> np.ndarray:
    valid = (np.asarray(mask) > 0) & (np.asarray(labels) >= 0)
    if not valid.any():
        raise ContractError("loss needs at least one valid utterance")
    return valid


def _one_hot(labels: np.ndarray, valid: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros(labels.shape + (num_classes,))
    idx = np.nonzero(valid)
    out[idx + (labels[idx],)] = 1.0
    return out


def classify(f_final: Tensor, head: Linear) -> tuple[Tensor, Tensor]:
    logits = head(f_final)
    return logits, softmax_lastdim(logits)


def cross_entropy(probs: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over valid utterances."""
    valid = _valid(labels, mask)
    target = _one_hot(labels, valid, probs.shape[-1]) > 0
    # keep only the true-class probability; everything else becomes log(1) = 0
    picked = masked_fill(probs, ~target, 1.0)
    return -picked.log().sum() / float(valid.sum())


task_loss = cross_entropy


def student_forward(h: Tensor, head: Linear, tau: float) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(logits, probs, soft_probs)`` for one unimodal student."""
    if not tau > 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    logits = head(relu(h))
    return logits, softmax_lastdim(logits), softmax_lastdim(logits / tau)


def kl_divergence(p: Tensor, q: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over valid utterances of sum_j p_j log(p_j / q_j)."""
    valid = _valid(labels, mask)
    pad = np.broadcast_to(~valid[..., None], p.shape)
    p_log = masked_fill(p, pad | (p.data == 0), 1.0)  # 0 * log 0 counts as 0
    q_log = masked_fill(q, pad, 1.0)
    per_utt = (masked_fill(p, pad, 0.0) * (p_log.log() - q_log.log())).sum(axis=-1)
    return (per_utt * valid).sum() / float(valid.sum())


def distill_losses(student_soft: Tensor, teacher_soft: Tensor, student_probs: Tensor, labels: np.ndarray,
                   mask: np.ndarray, direction: str = "student_teacher") -> tuple[Tensor, Tensor]:
    """Hard-label cross-entropy and soft-label KL for one student.

    ``teacher_soft`` must already be detached. The default direction is
    KL(student || teacher).
    """
    if direction not in KL_DIRECTIONS:
        raise ContractError(f"kl_direction must be one of {KL_DIRECTIONS}, got {direction!r}")
    ce = cross_entropy(student_probs, labels, mask)
    if direction == "student_teacher":
        kl = kl_divergence(student_soft, teacher_soft, labels, mask)
    else:
        kl = kl_divergence(teacher_soft, student_soft, labels, mask)
    return ce, kl


def total_loss(task: Tensor, ce_t: Tensor, ce_a: Tensor, kl_t: Tensor, kl_a: Tensor,
               lambdas=DEFAULT_LAMBDAS) -> LossBundle:
    lam_task, lam_ce, lam_kl = (float(x) for x in lambdas)
    if min(lam_task, lam_ce, lam_kl) < 0:
        raise ContractError(f"loss weights must be non-negative, got {lambdas}")
    total = lam_task * task + lam_ce * (ce_t + ce_a) + lam_kl * (kl_t + kl_a)
    return LossBundle(task, ce_t, ce_a, kl_t, kl_a, total, (lam_task, lam_ce, lam_kl))
