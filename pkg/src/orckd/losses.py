"""Softened probabilities and the distillation losses built on them.

Every loss mean-reduces over the batch. Teacher logits are always detached
before use, so no gradient ever reaches a teacher through these functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DomainError, LabelError, ShapeError
from .tensor import Tensor, as_tensor, log_softmax, log_softmax_np, softmax

TeacherLogits = Union[None, Tensor, np.ndarray, Sequence[Union[Tensor, np.ndarray]]]


@dataclass(frozen=True)
class SoftenConfig:
    tau: float = 4.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}", key="orc.tau")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}", key="orc.alpha")


def _check_logits(z: Tensor) -> Tensor:
    if z.ndim != 2 or z.shape[1] < 2:
        raise ShapeError(f"logits must be [B, C] with C >= 2, got {z.shape}")
    if not np.all(np.isfinite(z.data)):
        raise DomainError("non-finite logits")
    return z


def _teacher(z) -> np.ndarray:
    return z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)


def soften(logits, cfg: SoftenConfig) -> Tensor:
    """softmax(logits / tau) row-wise."""
    z = _check_logits(as_tensor(logits))
    return softmax(z / cfg.tau, axis=1)


def cross_entropy(logits, labels) -> Tuple[Tensor, Tensor]:
    """Per-instance and batch-mean cross-entropy against one-hot or soft labels."""
    z = _check_logits(as_tensor(logits))
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    if y.shape != z.shape:
        raise ShapeError(f"labels {y.shape} do not match logits {z.shape}")
    if np.any(y < 0) or not np.allclose(y.sum(axis=1), 1.0, rtol=0, atol=1e-6):
        raise LabelError("label rows must be non-negative and sum to 1")
    per_instance = -(log_softmax(z, axis=1) * y).sum(axis=1)
    return per_instance, per_instance.mean()


def kd_loss(student_logits, teacher_logits, cfg: SoftenConfig) -> Tensor:
    """tau^2 * mean_b sum_c P_T log(P_T / P_S) with the teacher as target."""
    zs = _check_logits(as_tensor(student_logits))
    zt = _teacher(teacher_logits)
    if zt.shape != zs.shape:
        raise ShapeError(f"student {zs.shape} and teacher {zt.shape} logits differ in shape")
    log_pt = log_softmax_np(zt / cfg.tau, axis=1)
    pt = np.exp(log_pt)
    log_ps = log_softmax(zs / cfg.tau, axis=1)
    kl = ((log_pt - log_ps) * pt).sum(axis=1)
    return kl.mean() * (cfg.tau ** 2)


def student_total_loss(ce, distill, w: LossWeights):
    return ce * (1.0 - w.alpha) + distill * w.alpha


def pivot_intensive_loss(logits_batch, y_batch, logits_feed, y_feed, lam: float) -> Tensor:
    """lam * CE(y_batch) + (1 - lam) * CE(y_feed).

    Both logit arguments are normally the pivot's output on the same mixed input.
    """
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"mix ratio must lie in [0, 1], got {lam}")
    _, ce_batch = cross_entropy(logits_batch, y_batch)
    _, ce_feed = cross_entropy(logits_feed, y_feed)
    return ce_batch * lam + ce_feed * (1.0 - lam)


def private_teaching_loss(temp_logits, pivot_logits, y, w: LossWeights, cfg: SoftenConfig) -> Tensor:
    _, ce = cross_entropy(temp_logits, y)
    return student_total_loss(ce, kd_loss(temp_logits, pivot_logits, cfg), w)


def _as_teacher_list(temp_logits: TeacherLogits):
    if temp_logits is None:
        return []
    if isinstance(temp_logits, (Tensor, np.ndarray)):
        return [temp_logits]
    items = list(temp_logits)
    if items and not all(isinstance(t, (Tensor, np.ndarray)) for t in items):
        return [np.asarray(items, dtype=np.float64)]  # one nested-list logit matrix
    return items


def group_distill_loss(student_logits, temp_logits: TeacherLogits, pivot_logits,
                       cfg: SoftenConfig, style: str = "individual") -> Tensor:
    """KD from the teacher group.

    ``individual`` sums one KD term per teacher; ``ensemble`` distills from
    the mean of all teacher logits. With no temporary teacher only the pivot
    term remains.
    """
    temps = _as_teacher_list(temp_logits)
    if style == "individual":
        loss = kd_loss(student_logits, pivot_logits, cfg)
        for t in temps:
            loss = kd_loss(student_logits, t, cfg) + loss
        return loss
    if style == "ensemble":
        teachers = [_teacher(t) for t in temps] + [_teacher(pivot_logits)]
        mean_logits = teachers[0] if len(teachers) == 1 else np.mean(teachers, axis=0)
        return kd_loss(student_logits, mean_logits, cfg)
    raise ConfigError(f"unknown teaching style {style!r}", key="orc.teaching_style")


def student_group_loss(student_logits, temp_logits: TeacherLogits, pivot_logits, y,
                       w: LossWeights, cfg: SoftenConfig, style: str = "individual") -> Tensor:
    _, ce = cross_entropy(student_logits, y)
    return student_total_loss(ce, group_distill_loss(student_logits, temp_logits, pivot_logits, cfg, style), w)
