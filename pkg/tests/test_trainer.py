import numpy as np
import pytest

from orckd.config import preset, with_overrides
from orckd.data import Dataset, make_synthetic
from orckd.errors import StateError, TrainError
from orckd.nets import NetSpec, build, make_ladder
from orckd.scheduler import GroupState
from orckd.tensor import Tensor
from orckd.trainer import (
    LrSchedule, OptimizerState, OrcOptions, evaluate, lr_at, orc_iteration, param_hash,
    pretrain_pivot, run_experiment, sgd_step,
)


def one_param_net(theta):
    net = build(NetSpec("mlp", 1, 1, 2, (1,), 0))
    net.params = {"w": Tensor(np.array([theta]), requires_grad=True, name="w")}
    return net


def test_vanilla_sgd():
    net = one_param_net(1.0)
    opt = OptimizerState.for_network(net, lr=0.1, momentum=0.0, weight_decay=0.0)
    net.params["w"].grad = np.array([0.5])
    sgd_step(net, opt)
    assert net.params["w"].data[0] == 1.0 - 0.1 * 0.5
    assert net.params["w"].grad is None


def test_zero_grad_decays_buffer_only():
    net = one_param_net(2.0)
    opt = OptimizerState.for_network(net, lr=0.1, momentum=0.9, weight_decay=0.0)
    opt.buffers[0][:] = 1.0
    net.params["w"].grad = np.zeros(1)
    sgd_step(net, opt)
    assert opt.buffers[0][0] == 0.9
    assert net.params["w"].data[0] == pytest.approx(2.0 - 0.1 * 0.9)


def test_two_step_momentum_recurrence():
    net = one_param_net(1.0)
    opt = OptimizerState.for_network(net, lr=0.1, momentum=0.9, weight_decay=0.0)
    thetas = []
    for _ in range(2):
        net.params["w"].grad = np.array([0.1])
        sgd_step(net, opt)
        thetas.append(net.params["w"].data[0])
    assert thetas == pytest.approx([0.99, 0.971], abs=1e-15)
    assert opt.steps == 2


def test_weight_decay_enters_buffer():
    net = one_param_net(1.0)
    opt = OptimizerState.for_network(net, lr=1.0, momentum=0.0, weight_decay=0.5)
    net.params["w"].grad = np.zeros(1)
    sgd_step(net, opt)
    assert net.params["w"].data[0] == 0.5


def test_missing_grads():
    net = one_param_net(1.0)
    with pytest.raises(StateError):
        sgd_step(net, OptimizerState.for_network(net))


def test_lr_schedule_examples():
    sched = LrSchedule(0.05, (100, 150, 210), 0.1)
    assert lr_at(sched, 0) == 0.05
    assert lr_at(sched, 99) == 0.05
    assert lr_at(sched, 100) == 0.005
    assert lr_at(sched, 150) == 0.0005
    assert lr_at(sched, 239) == 5e-5
    with pytest.raises(ValueError):
        LrSchedule(0.1, (10, 5))


def _blobs(noise=0.1, n=600, classes=3, seed=0):
    return make_synthetic("blobs", n, classes, noise, seed)


def test_pretrain_zero_epochs_is_identity(tmp_path):
    net = build(NetSpec("mlp", 2, 8, 3, (2,), 1))
    before = net.state_bytes()
    pretrain_pivot(net, _blobs(), 0, checkpoint=tmp_path / "p.ckpt")
    assert net.state_bytes() == before


def test_pretrain_reaches_high_accuracy_and_is_reproducible(tmp_path):
    data = _blobs()
    recs = []
    for tag in ("a", "b"):
        net = build(NetSpec("mlp", 2, 16, 3, (2,), 1))
        recs.append(pretrain_pivot(net, data, 20, batch_size=32, schedule=LrSchedule(0.05, (12, 16)),
                                   seed=3, checkpoint=tmp_path / f"{tag}.ckpt"))
    assert recs[0].train_accuracy > 0.95
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_pretrain_divergence_raises():
    net = build(NetSpec("mlp", 2, 8, 3, (2,), 1))
    net.params["fc1.bias"].data[:] = np.nan
    with pytest.raises(TrainError, match="pretrain"):
        pretrain_pivot(net, _blobs(), 1)


def test_evaluate_constant_net():
    ds = Dataset(np.zeros((100, 4)), np.eye(10)[np.arange(100) % 10], "test")
    net = build(NetSpec("mlp", 1, 1, 10, (4,), 0))
    for p in net.parameters:
        p.data[:] = 0
    assert evaluate(net, ds) == pytest.approx(0.10)


def test_evaluate_memorizer():
    classes = np.arange(5)
    ds = Dataset(np.eye(5), np.eye(5)[classes], "train")
    net = build(NetSpec("mlp", 1, 1, 5, (5,), 0))
    net.params["fc0.weight"].data = np.eye(5) * 10
    net.params["fc0.bias"].data = np.zeros(5)
    acc = evaluate(net, ds)
    assert acc == 1.0 and 0 <= acc <= 1


# -- ORC iteration --------------------------------------------------------

def small_ladder(seed=0):
    return make_ladder([NetSpec("mlp", 2, w, 3, (2,), seed * 10 + i) for i, w in enumerate((24, 16, 12, 8))])


def setup(k=1, mode="feedback_mixup", style="individual", seed=0):
    ladder = small_ladder(seed)
    opts = {i: OptimizerState.for_network(n, 0.05) for i, n in enumerate(ladder.networks)}
    data = _blobs(noise=0.5, n=64)
    cfg = OrcOptions(k=k, augmentation_mode=mode, teaching_style=style)
    return ladder, opts, (data.images, data.labels), cfg


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("mode", ["none", "plain_mixup", "feedback_only", "feedback_mixup"])
def test_iteration_contracts(k, mode):
    ladder, opts, batch, cfg = setup(k, mode)
    state = GroupState.initial(len(ladder))
    before = [n.state_bytes() for n in ladder.networks]
    state2, rep = orc_iteration(ladder, state, batch, opts, cfg, np.random.default_rng(0))
    assert state2.temp_teacher_ids == () and state2.network_ids == state.network_ids
    assert state2.iteration == 1
    assert len(rep.temp_ids) == k and len(rep.student_ids) == 3 - k
    assert rep.counts.sum() == 64 and abs(rep.control_weights.sum() - 1) < 1e-12
    assert rep.steps == {0: 0 if mode == "none" else 1, 1: 1, 2: 1, 3: 1}
    after = [n.state_bytes() for n in ladder.networks]
    assert (after[0] == before[0]) == (mode == "none")
    assert all(a != b for a, b in zip(after[1:], before[1:]))
    if mode == "feedback_only":
        assert rep.lam == 0.0
    if mode == "none":
        assert rep.lam is None


def test_temporary_teacher_is_lowest_loss_network():
    ladder, opts, batch, cfg = setup(k=1)
    _, rep = orc_iteration(ladder, GroupState.initial(4), batch, opts, cfg, np.random.default_rng(0))
    pool_ce = {i: rep.mean_ce[i] for i in (1, 2, 3)}
    assert rep.temp_ids == [min(pool_ce, key=lambda i: (pool_ce[i], i))]
    assert set(rep.feedback_indices) <= set(range(64))


def test_k0_group_teaching_uses_pivot_only(monkeypatch):
    import orckd.trainer as T
    seen = []
    real = T.L.student_group_loss

    def spy(student, temps, pivot, *a, **kw):
        seen.append(len(temps))
        return real(student, temps, pivot, *a, **kw)

    monkeypatch.setattr(T.L, "student_group_loss", spy)
    ladder, opts, batch, cfg = setup(k=0)
    orc_iteration(ladder, GroupState.initial(4), batch, opts, cfg, np.random.default_rng(0))
    assert seen == [0, 0, 0]


def test_teachers_frozen_while_teaching(monkeypatch):
    """Hashes taken inside the iteration are the post-update teacher states."""
    ladder, opts, batch, cfg = setup(k=1)
    _, rep = orc_iteration(ladder, GroupState.initial(4), batch, opts, cfg, np.random.default_rng(0))
    assert rep.hashes["pivot_before"] == param_hash(ladder.pivot)
    t = rep.temp_ids[0]
    assert rep.hashes[f"temp_{t}_before"] == param_hash(ladder.networks[t])


def test_nonempty_temp_set_rejected():
    ladder, opts, batch, cfg = setup()
    state = GroupState(0, (1,), (2, 3))
    with pytest.raises(StateError):
        orc_iteration(ladder, state, batch, opts, cfg, np.random.default_rng(0))


@pytest.mark.parametrize("net_id,stage", [(0, "intensive"), (2, "ranking")])
def test_nan_names_stage(net_id, stage):
    ladder, opts, batch, cfg = setup(k=1)
    ladder.networks[net_id].params["fc1.bias"].data[:] = np.nan
    with pytest.raises(TrainError, match=stage):
        orc_iteration(ladder, GroupState.initial(4), batch, opts, cfg, np.random.default_rng(0))


# -- whole runs ------------------------------------------------------------

def tiny_config(tmp_path, name="table1_k1", **kw):
    base = dict(dataset__n=640, dataset__noise=0.5, dataset__num_classes=4, train__epochs=2,
                train__batch_size=32, ladder__widths=(16, 12, 8, 4), ladder__depth=2,
                train__output_dir=str(tmp_path / name))
    base.update(kw)
    return with_overrides(preset(name), **base)


def test_zero_epochs_gives_header_only(tmp_path):
    res = run_experiment(tiny_config(tmp_path, train__epochs=0))
    assert res.metrics_path.read_text().count("\n") == 1
    assert (tmp_path / "table1_k1" / "pretrain.json").is_file()


def test_run_is_byte_deterministic(tmp_path):
    a = run_experiment(tiny_config(tmp_path, train__output_dir=str(tmp_path / "a")))
    b = run_experiment(tiny_config(tmp_path, train__output_dir=str(tmp_path / "b")))
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()


def test_k_grid_shares_pivot_checkpoint(tmp_path):
    ckpt = tmp_path / "shared.ckpt"
    records = []
    for k in (0, 1, 2):
        cfg = tiny_config(tmp_path, f"table1_k{k}", train__pivot_checkpoint=str(ckpt))
        res = run_experiment(cfg)
        records.append(res.pretrain.loaded)
        assert res.history[-1].promotions[1:] and sum(res.history[-1].promotions) == k * 16  # 512 train rows / B=32
    assert records == [False, True, True]


def test_baseline_run_keeps_pivot_fixed(tmp_path):
    res = run_experiment(tiny_config(tmp_path, "baseline_independent"))
    accs = [row.accuracy[0] for row in res.history]
    assert len(set(accs)) == 1
    assert all(sum(row.promotions) == 0 for row in res.history)


@pytest.mark.slow
def test_student_ce_decreases_early():
    """Mean student-group training CE is non-increasing over the first five epochs."""
    import tempfile
    for seed in (0, 1, 2):
        with tempfile.TemporaryDirectory() as out:
            cfg = with_overrides(preset("table1_k1"), train__epochs=5, train__seed=seed, train__output_dir=out)
            res = run_experiment(cfg)
        ce = [np.mean(row.train_ce[1:]) for row in res.history]
        assert all(b <= a for a, b in zip(ce, ce[1:])), ce
