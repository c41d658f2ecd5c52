"""Online role change: ranking, feedback harvesting and group membership.

All functions here are pure; the trainer owns the ``GroupState`` and
threads it through one iteration at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, StateError


@dataclass(frozen=True)
class GroupState:
    pivot_id: int
    temp_teacher_ids: Tuple[int, ...]
    student_ids: Tuple[int, ...]
    iteration: int = 0

    @classmethod
    def initial(cls, ladder_size: int) -> "GroupState":
        return cls(pivot_id=0, temp_teacher_ids=(), student_ids=tuple(range(1, ladder_size)))

    @property
    def network_ids(self) -> Tuple[int, ...]:
        return tuple(sorted((self.pivot_id,) + self.temp_teacher_ids + self.student_ids))


@dataclass(frozen=True)
class ControlWeights:
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


@dataclass
class FeedbackSubset:
    """Size-B multiset of mini-batch instances the students got most wrong."""

    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray
    source_counts: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass
class MixupSample:
    x_mixed: np.ndarray
    y_mixed: np.ndarray
    lam: float
    y_batch: np.ndarray
    y_feed: np.ndarray
    x_feed: Optional[np.ndarray] = field(default=None, repr=False)


def select_temporary_teachers(mean_ce: Sequence[float], k: int) -> List[int]:
    """Positions of the ``k`` lowest losses, ascending; ties go to the lower position."""
    losses = np.asarray(mean_ce, dtype=np.float64)
    if k < 0 or k >= len(losses):
        raise ConfigError(f"k={k} must be in [0, {len(losses)}) for a pool of {len(losses)}", key="orc.k")
    if not np.all(np.isfinite(losses)):
        raise ValueError("ranking losses must be finite")
    order = np.argsort(losses, kind="stable")
    return [int(i) for i in order[:k]]


def control_weights(mean_ce: Sequence[float]) -> ControlWeights:
    losses = np.asarray(mean_ce, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("control weights need at least one student")
    e = np.exp(losses - losses.max())
    return ControlWeights(e / e.sum())


def feedback_counts(w: ControlWeights, batch_size: int) -> np.ndarray:
    """Integer shares of ``batch_size`` proportional to the weights (largest remainder).

    Leftover units go to the largest fractional parts; ties prefer the larger
    weight, then the lower index.
    """
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    weights = np.asarray(w.weights if isinstance(w, ControlWeights) else w, dtype=np.float64)
    raw = weights * batch_size
    counts = np.floor(raw).astype(np.int64)
    remainder = batch_size - int(counts.sum())
    if remainder:
        frac = raw - counts
        idx = np.arange(len(weights))
        order = np.lexsort((idx, -weights, -frac))
        for j in range(remainder):
            counts[order[j % len(order)]] += 1
    return counts


def build_feedback_subset(per_instance_ce, counts, batch_x, batch_y) -> FeedbackSubset:
    """Each student contributes its own ``counts[i]`` highest-loss instances.

    Duplicates across students are kept; within a student ties favour the
    lower batch index.
    """
    ce = np.atleast_2d(np.asarray(per_instance_ce, dtype=np.float64))
    counts = np.asarray(counts, dtype=np.int64)
    if ce.shape[0] != len(counts):
        raise ValueError(f"{ce.shape[0]} loss rows but {len(counts)} counts")
    positions = np.arange(ce.shape[1])
    picked = []
    for row, d in zip(ce, counts):
        order = np.lexsort((positions, -row))
        picked.append(order[:d])
    indices = np.concatenate(picked) if picked else np.zeros(0, dtype=np.int64)
    batch_x = np.asarray(batch_x)
    batch_y = np.asarray(batch_y)
    return FeedbackSubset(indices=indices, x=batch_x[indices], y=batch_y[indices], source_counts=counts.copy())


def mixup_combine(batch_x, batch_y, feedback: FeedbackSubset, alpha_mix: float,
                  rng: np.random.Generator, lam: Optional[float] = None) -> MixupSample:
    """Blend the batch with a seeded shuffle of the feedback subset.

    One ratio is drawn from Beta(alpha_mix, alpha_mix) per call unless ``lam``
    forces it; the shuffle is drawn either way so the RNG stream does not
    depend on ``lam``.
    """
    if not alpha_mix > 0:
        raise ConfigError(f"alpha_mix must be positive, got {alpha_mix}", key="orc.alpha_mix")
    batch_x = np.asarray(batch_x, dtype=np.float64)
    batch_y = np.asarray(batch_y, dtype=np.float64)
    if len(feedback) != len(batch_x):
        raise ValueError(f"feedback subset has {len(feedback)} instances, batch has {len(batch_x)}")
    drawn = float(rng.beta(alpha_mix, alpha_mix))
    perm = rng.permutation(len(feedback))
    lam = drawn if lam is None else float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mix ratio must lie in [0, 1], got {lam}")
    x_feed = feedback.x[perm]
    y_feed = feedback.y[perm]
    return MixupSample(
        x_mixed=lam * batch_x + (1.0 - lam) * x_feed,
        y_mixed=lam * batch_y + (1.0 - lam) * y_feed,
        lam=lam,
        y_batch=batch_y,
        y_feed=y_feed,
        x_feed=x_feed,
    )


def promote(state: GroupState, ids: Sequence[int]) -> GroupState:
    ids = tuple(int(i) for i in ids)
    for i in ids:
        if i == state.pivot_id:
            raise StateError("the pivot teacher cannot be promoted")
        if i not in state.student_ids:
            raise StateError(f"network {i} is not in the student group")
    if len(set(ids)) != len(ids):
        raise StateError(f"duplicate ids in promotion {ids}")
    return replace(
        state,
        temp_teacher_ids=state.temp_teacher_ids + ids,
        student_ids=tuple(i for i in state.student_ids if i not in ids),
    )


def demote(state: GroupState) -> GroupState:
    """Return every temporary teacher to the student group and close the iteration."""
    return replace(
        state,
        temp_teacher_ids=(),
        student_ids=tuple(sorted(state.student_ids + state.temp_teacher_ids)),
        iteration=state.iteration + 1,
    )
