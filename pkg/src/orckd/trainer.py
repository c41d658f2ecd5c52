"""SGD machinery, pivot pretraining, the per-iteration ORC protocol and experiment runs."""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses as L
from .config import RunConfig
from .data import BatchIterator, Dataset, augment, load_idx, make_synthetic_split
from .errors import DomainError, StateError, TrainError
from .metrics import MetricsRow, write_metrics
from .nets import NetSpec, Network, NetworkLadder, load_checkpoint, make_ladder, save_checkpoint
from .scheduler import (
    FeedbackSubset,
    GroupState,
    build_feedback_subset,
    control_weights,
    demote,
    feedback_counts,
    mixup_combine,
    promote,
    select_temporary_teachers,
)
from .tensor import Tensor

log = logging.getLogger(__name__)


# -- optimization --------------------------------------------------------

@dataclass
class OptimizerState:
    buffers: List[np.ndarray]
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    steps: int = 0

    @classmethod
    def for_network(cls, net: Network, lr=0.05, momentum=0.9, weight_decay=5e-4) -> "OptimizerState":
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        return cls([np.zeros_like(p.data) for p in net.parameters], lr, momentum, weight_decay)


def sgd_step(net: Network, opt: OptimizerState) -> None:
    """v <- m*v + (g + wd*theta); theta <- theta - lr*v; then clear grads."""
    params = net.parameters
    if len(params) != len(opt.buffers):
        raise StateError("optimizer buffers do not match the network parameters")
    if any(p.grad is None for p in params):
        missing = [p.name for p in params if p.grad is None]
        raise StateError(f"sgd_step without gradients for {missing}")
    for p, v in zip(params, opt.buffers):
        v *= opt.momentum
        v += p.grad + opt.weight_decay * p.data
        p.data = p.data - opt.lr * v
        p.grad = None
    opt.steps += 1


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 0.05
    milestones: Tuple[int, ...] = (100, 150, 210)
    gamma: float = 0.1

    def __post_init__(self):
        m = tuple(self.milestones)
        if any(a >= b for a, b in zip(m, m[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {m}")
        object.__setattr__(self, "milestones", m)


def lr_at(sched: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    decays = sum(1 for m in sched.milestones if m <= epoch)
    # 12 significant digits strips the ulp noise of repeated 0.1 factors
    return float(f"{sched.base_lr * sched.gamma ** decays:.12g}")


# -- evaluation helpers --------------------------------------------------

def _logits(net: Network, x, grad: bool) -> Tensor:
    net.train() if grad else net.eval()
    return net(x)


def evaluate(net: Network, dataset: Dataset, batch_size: int = 1000) -> float:
    """Top-1 accuracy over the whole split; argmax ties resolve to the lowest class."""
    prev = net.mode
    net.eval()
    correct = 0
    target = dataset.class_ids
    for start in range(0, len(dataset), batch_size):
        z = net(dataset.images[start:start + batch_size]).data
        correct += int((z.argmax(axis=1) == target[start:start + batch_size]).sum())
    net.mode = prev
    return correct / len(dataset)


def param_hash(net: Network) -> str:
    return hashlib.sha1(net.state_bytes()).hexdigest()


@contextlib.contextmanager
def _stage(name: str):
    """Re-raise numeric failures inside a training stage as a stage-labelled TrainError."""
    try:
        yield
    except DomainError as exc:
        raise TrainError(str(exc), stage=name) from exc


def _finite(loss: Tensor, stage: str) -> Tensor:
    if not np.isfinite(loss.item()):
        raise TrainError(f"loss became {loss.item()}", stage=stage)
    return loss


def _train_step(net: Network, opt: OptimizerState, loss: Tensor) -> None:
    net.zero_grad()
    loss.backward()
    sgd_step(net, opt)


# -- pivot pretraining ---------------------------------------------------

@dataclass
class PretrainRecord:
    epochs: int
    train_accuracy: float
    test_accuracy: Optional[float]
    final_loss: float
    checkpoint: Optional[str] = None
    loaded: bool = False


def pretrain_pivot(pivot: Network, dataset: Dataset, epochs: int, *, batch_size: int = 64,
                   schedule: LrSchedule = LrSchedule(), momentum: float = 0.9,
                   weight_decay: float = 5e-4, seed: int = 0, test: Optional[Dataset] = None,
                   checkpoint: Optional[Path] = None,
                   augment_fn: Optional[Callable] = None) -> PretrainRecord:
    """Plain cross-entropy training of the pivot; optional checkpoint and test accuracy."""
    opt = OptimizerState.for_network(pivot, schedule.base_lr, momentum, weight_decay)
    it = BatchIterator(dataset, batch_size, seed)
    last = float("nan")
    for epoch in range(epochs):
        opt.lr = lr_at(schedule, epoch)
        running = []
        for x, y in it.epoch_batches():
            if augment_fn is not None:
                x = augment_fn(x)
            with _stage("pretrain"):
                _, loss = L.cross_entropy(_logits(pivot, x, True), y)
            _finite(loss, "pretrain")
            running.append(loss.item())
            _train_step(pivot, opt, loss)
        last = float(np.mean(running))
        log.debug("pivot pretrain epoch %d loss %.4f", epoch, last)
    pivot.eval()
    record = PretrainRecord(epochs, evaluate(pivot, dataset),
                            evaluate(pivot, test) if test is not None else None, last)
    if checkpoint is not None:
        Path(checkpoint).parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(pivot, checkpoint)
        record.checkpoint = str(checkpoint)
    log.info("pivot pretrained for %d epochs: train acc %.4f test acc %s",
             epochs, record.train_accuracy, record.test_accuracy)
    return record


# -- one ORC iteration ---------------------------------------------------

@dataclass(frozen=True)
class OrcOptions:
    k: int = 1
    tau: float = 4.0
    alpha: float = 0.9
    alpha_mix: float = 0.2
    teaching_style: str = "individual"
    augmentation_mode: str = "feedback_mixup"
    check_invariants: bool = True

    @property
    def soften(self) -> L.SoftenConfig:
        return L.SoftenConfig(self.tau)

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.alpha)


@dataclass
class IterationReport:
    iteration: int
    temp_ids: List[int]
    student_ids: List[int]
    mean_ce: Dict[int, float]
    control_weights: np.ndarray
    counts: np.ndarray
    feedback_indices: np.ndarray
    lam: Optional[float]
    losses: Dict[str, float] = field(default_factory=dict)
    steps: Dict[int, int] = field(default_factory=dict)
    hashes: Dict[str, str] = field(default_factory=dict)


def orc_iteration(ladder: NetworkLadder, state: GroupState, batch, opts: Dict[int, OptimizerState],
                  cfg: OrcOptions, rng: np.random.Generator) -> Tuple[GroupState, IterationReport]:
    """Run ranking, intensive, private and group teaching, then demotion, on one mini-batch.

    ``opts`` maps network id (ladder index, pivot = 0) to its optimizer.
    """
    if state.temp_teacher_ids:
        raise StateError("orc_iteration expects an empty temporary-teacher set")
    x, y = batch
    nets = ladder.networks
    soften, weights = cfg.soften, cfg.weights
    steps_before = {i: opts[i].steps for i in range(len(nets))}

    # 1. rank every pool network on the mini-batch
    pool_ids = list(state.student_ids)
    per_instance, mean_ce = {}, {}
    for i in pool_ids:
        with _stage("ranking"):
            pi, m = L.cross_entropy(_logits(nets[i], x, False), y)
        per_instance[i] = pi.data
        mean_ce[i] = _finite(m, "ranking").item()

    # 2. promote the k best
    picked = select_temporary_teachers([mean_ce[i] for i in pool_ids], cfg.k)
    state = promote(state, [pool_ids[j] for j in picked])
    temps, students = list(state.temp_teacher_ids), list(state.student_ids)

    # 3. feedback subset from the remaining students
    cw = control_weights([mean_ce[i] for i in students])
    counts = feedback_counts(cw, len(x))
    feedback = build_feedback_subset(np.stack([per_instance[i] for i in students]), counts, x, y)

    report = IterationReport(state.iteration, temps, students, dict(mean_ce), cw.weights,
                             counts, feedback.indices, None)

    # 4. intensive teaching of the pivot
    pivot = nets[0]
    mode = cfg.augmentation_mode
    if mode != "none":
        if mode == "plain_mixup":
            whole = FeedbackSubset(np.arange(len(x)), np.asarray(x), np.asarray(y),
                                   np.array([len(x)]))
            mix = mixup_combine(x, y, whole, cfg.alpha_mix, rng)
        elif mode == "feedback_only":
            mix = mixup_combine(x, y, feedback, cfg.alpha_mix, rng, lam=0.0)
        else:
            mix = mixup_combine(x, y, feedback, cfg.alpha_mix, rng)
        with _stage("intensive"):
            z = _logits(pivot, mix.x_mixed, True)
            loss = _finite(L.pivot_intensive_loss(z, mix.y_batch, z, mix.y_feed, mix.lam), "intensive")
        _train_step(pivot, opts[0], loss)
        report.lam = mix.lam
        report.losses["pivot"] = loss.item()

    check = cfg.check_invariants
    if check:
        report.hashes["pivot_before"] = param_hash(pivot)

    with _stage("private" if temps else "group"):
        pivot_logits = _logits(pivot, x, False).data
        _, pivot_ce = L.cross_entropy(pivot_logits, y)
    report.mean_ce[0] = pivot_ce.item()

    # 5. private teaching: pivot -> each temporary teacher
    for t in temps:
        with _stage("private"):
            loss = _finite(L.private_teaching_loss(_logits(nets[t], x, True), pivot_logits, y,
                                                   weights, soften), "private")
        _train_step(nets[t], opts[t], loss)
        report.losses[f"temp_{t}"] = loss.item()
    if check:
        report.hashes.update({f"temp_{t}_before": param_hash(nets[t]) for t in temps})

    # 6. group teaching: teacher group -> each student
    temp_logits = [_logits(nets[t], x, False).data for t in temps]
    for s in students:
        with _stage("group"):
            loss = _finite(L.student_group_loss(_logits(nets[s], x, True), temp_logits, pivot_logits, y,
                                                weights, soften, cfg.teaching_style), "group")
        _train_step(nets[s], opts[s], loss)
        report.losses[f"student_{s}"] = loss.item()

    if check:
        if param_hash(pivot) != report.hashes["pivot_before"]:
            raise StateError("pivot parameters changed while serving as a teacher")
        for t in temps:
            if param_hash(nets[t]) != report.hashes[f"temp_{t}_before"]:
                raise StateError(f"temporary teacher {t} changed while serving as a teacher")

    # 7. demotion
    state = demote(state)
    report.steps = {i: opts[i].steps - steps_before[i] for i in range(len(nets))}
    if check:
        expected_pivot = 0 if mode == "none" else 1
        for i, n in report.steps.items():
            want = expected_pivot if i == 0 else 1
            if n != want:
                raise StateError(f"network {i} took {n} optimizer steps this iteration, expected {want}")
    return state, report


def baseline_iteration(ladder: NetworkLadder, batch, opts: Dict[int, OptimizerState]) -> Dict[int, float]:
    """Independent plain-CE step for every pool network; the pivot stays frozen."""
    x, y = batch
    nets = ladder.networks
    ce = {}
    with _stage("baseline"):
        _, pivot_ce = L.cross_entropy(_logits(nets[0], x, False), y)
    ce[0] = pivot_ce.item()
    for i in range(1, len(nets)):
        with _stage("baseline"):
            _, loss = L.cross_entropy(_logits(nets[i], x, True), y)
        _finite(loss, "baseline")
        ce[i] = loss.item()
        _train_step(nets[i], opts[i], loss)
    return ce


# -- full experiment -----------------------------------------------------

@dataclass
class ExperimentResult:
    history: List[MetricsRow]
    pretrain: PretrainRecord
    metrics_path: Path
    ladder: NetworkLadder
    reports: List[IterationReport] = field(default_factory=list, repr=False)


def load_datasets(config: RunConfig) -> Tuple[Dataset, Dataset]:
    d = config.dataset
    if d.kind == "idx":
        train = load_idx(d.train_images, d.train_labels, d.num_classes, "train")
        test = load_idx(d.test_images, d.test_labels, d.num_classes, "test", stats=(train.mean, train.std))
    else:
        n_test = int(round(d.n * d.test_fraction))
        train, test = make_synthetic_split(d.kind, d.n - n_test, n_test, d.num_classes, d.noise,
                                           d.seed, d.dim, d.clusters)
    if config.ladder.kind == "mlp" and train.images.ndim > 2:
        train = Dataset(train.images.reshape(len(train), -1), train.labels, "train", train.mean, train.std)
        test = Dataset(test.images.reshape(len(test), -1), test.labels, "test", test.mean, test.std)
    return train, test


def ladder_specs(config: RunConfig, input_shape, num_classes) -> List[NetSpec]:
    lad = config.ladder
    depths = lad.depths or (lad.depth,) * len(lad.widths)
    return [NetSpec(lad.kind, depths[i], w, num_classes, tuple(input_shape),
                    init_seed=config.train.seed * 1009 + i)
            for i, w in enumerate(lad.widths)]


def _pretrain_schedule(config: RunConfig) -> LrSchedule:
    t = config.train
    epochs, pre = t.epochs, config.resolved_pretrain_epochs
    scale = pre / epochs if epochs else 1.0
    milestones = sorted({int(round(m * scale)) for m in t.milestones})
    return LrSchedule(t.lr, tuple(milestones), t.gamma)


def run_experiment(config: RunConfig, keep_reports: bool = False,
                   check_invariants: bool = True) -> ExperimentResult:
    """Pretrain (or load) the pivot, train the ladder for ``train.epochs`` and write metrics.csv."""
    t, o = config.train, config.orc
    out = Path(t.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    train, test = load_datasets(config)
    specs = ladder_specs(config, train.input_shape, train.num_classes)
    ladder = make_ladder(specs)

    ckpt = config.resolved_pivot_checkpoint
    if ckpt.is_file():
        pivot = load_checkpoint(ckpt)
        if pivot.spec != specs[0]:
            raise StateError(f"{ckpt}: checkpoint spec {pivot.spec} does not match {specs[0]}")
        ladder.pivot = pivot
        pivot.eval()
        pretrain = PretrainRecord(config.resolved_pretrain_epochs, evaluate(pivot, train),
                                  evaluate(pivot, test), float("nan"), str(ckpt), loaded=True)
    else:
        aug = _augmenter(config, np.random.default_rng([t.seed, 3]))
        pretrain = pretrain_pivot(ladder.pivot, train, config.resolved_pretrain_epochs,
                                  batch_size=t.batch_size, schedule=_pretrain_schedule(config),
                                  momentum=t.momentum, weight_decay=t.weight_decay,
                                  seed=t.seed ^ 0x5EED, test=test, checkpoint=ckpt, augment_fn=aug)
    (out / "pretrain.json").write_text(json.dumps(pretrain.__dict__, sort_keys=True, indent=2) + "\n")

    nets = ladder.networks
    opts = {i: OptimizerState.for_network(n, t.lr, t.momentum, t.weight_decay) for i, n in enumerate(nets)}
    schedule = LrSchedule(t.lr, t.milestones, t.gamma)
    it = BatchIterator(train, t.batch_size, t.seed)
    mix_rng = np.random.default_rng([t.seed, 1])
    aug = _augmenter(config, np.random.default_rng([t.seed, 2]))
    orc_opts = OrcOptions(o.k, o.tau, o.alpha, o.alpha_mix, o.teaching_style, o.augmentation_mode,
                          check_invariants)
    state = GroupState.initial(len(nets))
    history, reports = [], []

    for epoch in range(t.epochs):
        lr = lr_at(schedule, epoch)
        for opt in opts.values():
            opt.lr = lr
        ce_sum = np.zeros(len(nets))
        promotions = np.zeros(len(nets), dtype=np.int64)
        lams = []
        n_iter = 0
        for x, y in it.epoch_batches():
            x = aug(x) if aug is not None else x
            if o.mode == "baseline_independent":
                ce = baseline_iteration(ladder, (x, y), opts)
            else:
                state, report = orc_iteration(ladder, state, (x, y), opts, orc_opts, mix_rng)
                ce = report.mean_ce
                for i in report.temp_ids:
                    promotions[i] += 1
                if report.lam is not None:
                    lams.append(report.lam)
                if keep_reports:
                    reports.append(report)
            for i, v in ce.items():
                ce_sum[i] += v
            n_iter += 1
        if check_invariants and o.mode == "orc" and promotions.sum() != o.k * n_iter:
            raise StateError(f"epoch {epoch}: {promotions.sum()} promotions for {n_iter} iterations, k={o.k}")
        acc = [evaluate(n, test) for n in nets]
        row = MetricsRow(epoch, lr, acc, list(ce_sum / max(n_iter, 1)),
                         float(np.mean(lams)) if lams else math.nan, promotions.tolist())
        history.append(row)
        log.info("epoch %d lr %.5f acc %s", epoch, lr, " ".join(f"{a:.4f}" for a in acc))

    path = write_metrics(history, out / "metrics.csv", len(nets))
    return ExperimentResult(history, pretrain, path, ladder, reports)


def _augmenter(config: RunConfig, rng: np.random.Generator) -> Optional[Callable]:
    d = config.dataset
    if not (d.flip or d.crop_pad) or config.ladder.kind != "conv":
        return None
    return lambda x: augment(x, d.flip, d.crop_pad, rng)
