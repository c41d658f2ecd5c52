import numpy as np
import pytest

from orckd.errors import FormatError, LadderError, ShapeError, SpecError
from orckd.nets import (
    NetSpec, build, forward, load_checkpoint, make_ladder, param_count_of, save_checkpoint,
)
from orckd.tensor import Tensor


def mlp(width, depth=2, seed=0, d=8, c=4):
    return NetSpec("mlp", depth, width, c, (d,), seed)


def conv(width, depth=2, seed=0):
    return NetSpec("conv", depth, width, 10, (1, 8, 8), seed)


def test_mlp_param_count():
    spec = mlp(16)
    assert param_count_of(spec) == 8 * 16 + 16 + 16 * 4 + 4 == 212
    assert build(spec).param_count() == 212


def test_same_seed_same_bytes():
    assert build(mlp(16, seed=3)).state_bytes() == build(mlp(16, seed=3)).state_bytes()
    assert build(mlp(16, seed=3)).state_bytes() != build(mlp(16, seed=4)).state_bytes()


def test_he_uniform_bounds():
    net = build(mlp(32, depth=3, d=50))
    w = net.params["fc0.weight"].data
    assert np.abs(w).max() <= np.sqrt(6 / 50)
    assert np.all(net.params["fc0.bias"].data == 0)


@pytest.mark.parametrize("kwargs", [dict(depth=0), dict(width=0), dict(num_classes=1), dict(kind="rnn")])
def test_invalid_spec(kwargs):
    base = dict(kind="mlp", depth=2, width=4, num_classes=3, input_shape=(2,))
    with pytest.raises(SpecError):
        NetSpec(**{**base, **kwargs})


def test_ladder_counts_strictly_decrease():
    specs = [mlp(w, depth=3) for w in (64, 48, 32, 16)]
    counts = [param_count_of(s) for s in specs]
    assert all(a > b for a, b in zip(counts, counts[1:]))
    ladder = make_ladder(specs)
    assert len(ladder) == 4 and ladder.networks[0] is ladder.pivot


def test_conv_ladder():
    ladder = make_ladder([conv(w) for w in (32, 24, 16, 8)])
    counts = [n.param_count() for n in ladder.networks]
    assert all(a > b for a, b in zip(counts, counts[1:]))


def test_ladder_errors():
    with pytest.raises(LadderError):
        make_ladder([mlp(64), mlp(32), mlp(32)])
    with pytest.raises(LadderError):
        make_ladder([mlp(64)])
    with pytest.raises(LadderError):
        make_ladder([mlp(16), mlp(32)])


def test_forward_shapes_and_zero_head():
    net = build(mlp(16))
    x = np.random.default_rng(0).standard_normal((7, 8))
    assert forward(net, x).shape == (7, 4)
    net.params["fc1.weight"].data[:] = 0
    np.testing.assert_array_equal(forward(net, x).data, 0.0)
    with pytest.raises(ShapeError):
        forward(net, np.zeros((7, 9)))


def test_conv_forward_shape():
    net = build(conv(4, depth=3))
    assert forward(net, np.zeros((5, 1, 8, 8))).shape == (5, 10)


def test_eval_forward_is_pure():
    net = build(mlp(16)).eval()
    before = net.state_bytes()
    state = np.random.get_state()[1].copy()
    out = forward(net, np.ones((3, 8)))
    assert not out.requires_grad and out._parents == ()
    assert net.state_bytes() == before
    np.testing.assert_array_equal(np.random.get_state()[1], state)
    assert forward(net.train(), np.ones((3, 8))).requires_grad


def test_forward_deterministic():
    net = build(conv(4))
    x = np.random.default_rng(2).standard_normal((3, 1, 8, 8))
    assert forward(net, x).data.tobytes() == forward(net, x).data.tobytes()


def test_checkpoint_round_trip(tmp_path):
    net = build(conv(4, seed=9))
    path = tmp_path / "c.ckpt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.spec == net.spec
    assert back.state_bytes() == net.state_bytes()
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_bytes(b"junk" * 10)
    with pytest.raises(FormatError):
        load_checkpoint(path)
