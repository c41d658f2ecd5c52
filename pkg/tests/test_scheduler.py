import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from orckd.errors import ConfigError, StateError
from orckd.scheduler import (
    ControlWeights, GroupState, build_feedback_subset, control_weights, demote,
    feedback_counts, mixup_combine, promote, select_temporary_teachers,
)


def test_select_examples():
    assert select_temporary_teachers([0.9, 0.5, 1.2], 1) == [1]
    assert select_temporary_teachers([0.5, 0.5], 1) == [0]
    assert select_temporary_teachers([3, 1, 2, 4], 2) == [1, 2]
    assert select_temporary_teachers([3, 1, 2, 4], 0) == []
    with pytest.raises(ConfigError):
        select_temporary_teachers([1.0, 2.0], 2)


def test_control_weight_examples():
    np.testing.assert_allclose(control_weights([2.0, 2.0, 2.0]).weights, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(control_weights([1, 2, 3]).weights, [0.090031, 0.244728, 0.665241], atol=1e-6)
    np.testing.assert_allclose(control_weights([5, 1]).weights, [0.982014, 0.017986], atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=1, max_size=8), st.floats(-50, 50))
def test_control_weights_shift_invariant(losses, c):
    a = control_weights(losses).weights
    b = control_weights(np.asarray(losses) + c).weights
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert abs(a.sum() - 1) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=6, unique=True))
def test_control_weights_monotone(losses):
    assume(np.min(np.diff(np.sort(losses))) > 1e-9)
    w = control_weights(losses).weights
    order = np.argsort(losses)
    assert np.all(np.diff(w[order]) > 0)


def test_feedback_count_examples():
    np.testing.assert_array_equal(feedback_counts(ControlWeights(np.array([0.5, 0.3, 0.2])), 10), [5, 3, 2])
    np.testing.assert_array_equal(feedback_counts(ControlWeights(np.full(3, 1 / 3)), 64), [22, 21, 21])
    w = ControlWeights(np.array([0.665241, 0.244728, 0.090031]))
    np.testing.assert_array_equal(feedback_counts(w, 64), [42, 16, 6])


def test_feedback_count_tie_prefers_larger_weight():
    # fractional parts both .5; the heavier network gets the unit
    np.testing.assert_array_equal(feedback_counts(ControlWeights(np.array([0.25, 0.75])), 2), [0, 2])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=7), st.integers(1, 256))
def test_feedback_counts_sum_to_batch(raw, batch):
    w = control_weights(raw)
    counts = feedback_counts(w, batch)
    assert counts.sum() == batch and np.all(counts >= 0)
    # never more than one unit away from the exact share
    assert np.all(np.abs(counts - w.weights * batch) < 1 + 1e-9)


def test_feedback_subset_example():
    x = np.arange(4.0)[:, None] * 10
    y = np.eye(4)
    ce = np.array([[0.1, 0.9, 0.4, 0.7], [0.2, 0.3, 0.8, 0.1]])
    fb = build_feedback_subset(ce, [3, 1], x, y)
    np.testing.assert_array_equal(fb.indices, [1, 3, 2, 2])
    np.testing.assert_array_equal(fb.x[:, 0], [10, 30, 20, 20])
    assert len(fb) == 4 and list(fb.source_counts) == [3, 1]


def test_feedback_subset_whole_batch_and_ties():
    x = np.arange(5.0)[:, None]
    fb = build_feedback_subset(np.random.default_rng(0).random((1, 5)), [5], x, np.eye(5))
    assert sorted(fb.indices) == [0, 1, 2, 3, 4]
    fb = build_feedback_subset(np.ones((1, 5)), [3], x, np.eye(5))
    np.testing.assert_array_equal(fb.indices, [0, 1, 2])


def _subset(x, y):
    return build_feedback_subset(np.zeros((1, len(x))), [len(x)], x, y)


def test_mixup_degenerate_ratios():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 3))
    y = np.eye(3)[[0, 1, 2, 0, 1, 2]]
    fb = build_feedback_subset(rng.random((2, 6)), [4, 2], x, y)
    m = mixup_combine(x, y, fb, 0.2, np.random.default_rng(1), lam=1.0)
    assert m.x_mixed.tobytes() == x.tobytes()
    np.testing.assert_array_equal(m.y_mixed, y)
    m = mixup_combine(x, y, fb, 0.2, np.random.default_rng(1), lam=0.0)
    np.testing.assert_array_equal(m.x_mixed, m.x_feed)
    assert sorted(map(tuple, m.x_mixed)) == sorted(map(tuple, fb.x))


def test_mixup_linear_blend():
    x, xf = np.array([[2.0]]), np.array([[4.0]])
    fb = _subset(xf, np.array([[0.0, 1.0]]))
    m = mixup_combine(x, np.array([[1.0, 0.0]]), fb, 0.2, np.random.default_rng(0), lam=0.5)
    np.testing.assert_array_equal(m.x_mixed, [[3.0]])
    np.testing.assert_array_equal(m.y_mixed, [[0.5, 0.5]])


def test_mixup_draw_is_seeded_and_valid():
    x = np.zeros((8, 2))
    y = np.eye(2)[[0, 1] * 4]
    fb = _subset(x, y)
    a = mixup_combine(x, y, fb, 0.2, np.random.default_rng(5))
    b = mixup_combine(x, y, fb, 0.2, np.random.default_rng(5))
    assert a.lam == b.lam and 0 <= a.lam <= 1
    np.testing.assert_allclose(a.y_mixed.sum(axis=1), 1.0)
    with pytest.raises(ConfigError):
        mixup_combine(x, y, fb, 0.0, np.random.default_rng(5))


def test_promote_demote_round_trip():
    s0 = GroupState.initial(4)
    s1 = promote(s0, [1])
    assert s1.temp_teacher_ids == (1,) and s1.student_ids == (2, 3)
    s2 = demote(s1)
    assert (s2.pivot_id, s2.temp_teacher_ids, s2.student_ids) == (s0.pivot_id, (), s0.student_ids)
    assert s2.iteration == s0.iteration + 1
    assert promote(s0, []) == s0
    with pytest.raises(StateError):
        promote(s0, [0])
    with pytest.raises(StateError):
        promote(s0, [9])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.data())
def test_partition_preserved(size, data):
    s = GroupState.initial(size)
    ids = data.draw(st.lists(st.sampled_from(list(s.student_ids)), unique=True, max_size=size - 2))
    p = promote(s, ids)
    assert set(p.temp_teacher_ids).isdisjoint(p.student_ids)
    assert p.network_ids == tuple(range(size))
    assert demote(p).network_ids == tuple(range(size))
