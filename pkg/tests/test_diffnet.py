import numpy as np
import pytest

from beamtasnet.diffnet import (Graph, NonFiniteError, ParamSet, Tensor, backward, functional as F,
                                load_checkpoint, no_grad, save_checkpoint)
from beamtasnet.diffnet.checkpoint import CheckpointError

from conftest import gradcheck


def test_conv1d_identity_and_hand_example():
    x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
    assert np.array_equal(F.conv1d(x, Tensor(np.ones((1, 1, 1)))).value, x.value)
    out = F.conv1d(x, Tensor(np.array([[[1.0, 1.0]]])))
    assert out.value.tolist() == [[3.0, 5.0, 7.0]]


def test_conv1d_output_length_and_errors():
    x = Tensor(np.zeros((2, 3, 50)))
    w = Tensor(np.zeros((4, 3, 5)))
    assert F.conv1d(x, w, stride=3, dilation=2).shape == (2, 4, (50 - 9) // 3 + 1)
    assert F.conv1d(x, w, stride=1, dilation=1, padding=2).shape == (2, 4, 50)
    with pytest.raises(ValueError, match="input too short"):
        F.conv1d(Tensor(np.zeros((3, 4))), w, dilation=1)
    with pytest.raises(ValueError):
        F.conv1d(x, w, stride=0)


def test_conv_transpose1d_basic():
    out = F.conv_transpose1d(Tensor(np.array([[1.0]])), Tensor(np.array([[[1.0, 1.0]]])))
    assert out.value.tolist() == [[1.0, 1.0]]
    z = F.conv_transpose1d(Tensor(np.zeros((2, 7))), Tensor(np.ones((2, 3, 4))), stride=2)
    assert z.shape == (3, 6 * 2 + 4) and not np.any(z.value)
    with pytest.raises(ValueError):
        F.conv_transpose1d(Tensor(np.zeros((2, 7))), Tensor(np.ones((3, 3, 4))))


@pytest.mark.parametrize("cin,cout,k,stride,t", [(1, 1, 2, 1, 9), (3, 4, 5, 2, 21), (2, 3, 20, 10, 90),
                                                 (5, 2, 4, 4, 40)])
def test_adjoint_identity(cin, cout, k, stride, t, rng):
    w = rng.standard_normal((cout, cin, k))
    a = rng.standard_normal((cin, t))
    t_out = (t - k) // stride + 1
    b = rng.standard_normal((cout, t_out))
    lhs = np.sum(F.conv1d(Tensor(a), Tensor(w), stride=stride).value * b)
    z = F.conv_transpose1d(Tensor(b), Tensor(w), stride=stride).value
    rhs = np.sum(a[:, :z.shape[1]] * z)
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_global_layer_norm_definition(rng):
    x = Tensor(rng.standard_normal((4, 30)) * 5 + 3)
    out = F.global_layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4))).value
    assert abs(out.mean()) < 1e-12
    assert abs(out.var() - 1) < 1e-6
    const = F.global_layer_norm(Tensor(np.full((3, 10), 2.5)), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    assert np.allclose(const.value, 0.0)
    with pytest.raises(ValueError):
        F.global_layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)), eps=0)


GRAD_CASES = {
    "conv1d": (lambda x, w, b: F.conv1d(x, w, b, stride=2, dilation=2, padding=1),
               [(2, 3, 17), (4, 3, 3), (4,)]),
    "conv1d_pointwise": (lambda x, w: F.conv1d(x, w), [(2, 3, 9), (5, 3, 1)]),
    "conv_transpose1d": (lambda x, w: F.conv_transpose1d(x, w, stride=3), [(2, 3, 6), (3, 2, 5)]),
    "depthwise_conv1d": (lambda x, w, b: F.depthwise_conv1d(x, w, b, dilation=2, padding=2),
                         [(2, 3, 12), (3, 3), (3,)]),
    "global_layer_norm": (lambda x, g, b: F.global_layer_norm(x, g, b, eps=1e-8),
                          [(2, 3, 7), (3,), (3,)]),
    "prelu": (lambda x, a: F.prelu(x, a), [(3, 8), (1,)]),
    "relu": (lambda x: F.relu(x), [(3, 8)]),
    "sigmoid": (lambda x: F.sigmoid(x), [(3, 8)]),
    "mul_broadcast": (lambda a, b: a * b, [(2, 3, 4), (3, 1)]),
    "add_sub": (lambda a, b: (a + b) - b * a, [(3, 4), (3, 4)]),
    "log10_square_sum": (lambda a: F.log10(F.sum(F.square(a), axis=-1) + 1.0), [(3, 6)]),
    "mean_log": (lambda a: F.log(F.mean(F.square(a), axis=(0, 1)) + 0.5), [(2, 3, 4)]),
    "slice_concat_pad": (lambda a: F.concat([F.pad(a[:, 1:4], 2, 1), a], axis=-1), [(2, 6)]),
    "clip": (lambda a: F.clip(a, -0.5, 0.5), [(4, 5)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_finite_difference(name):
    op, shapes = GRAD_CASES[name]
    r = np.random.default_rng(sum(map(ord, name)))
    arrays = [r.standard_normal(s) for s in shapes]
    if name == "prelu":
        arrays[1] = np.array([0.25])
    if name in ("relu", "prelu", "clip"):
        # keep away from kinks
        arrays[0] = np.where(np.abs(arrays[0]) < 0.05, 0.3, arrays[0])
        if name == "clip":
            arrays[0] = np.where(np.abs(np.abs(arrays[0]) - 0.5) < 0.05, 0.2, arrays[0])
    assert gradcheck(op, arrays) < 1e-5


def test_backward_trivial_losses(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    backward(F.sum(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))
    y = Tensor(rng.standard_normal(5), requires_grad=True)
    backward(F.sum(F.square(y)))
    assert np.allclose(y.grad, 2 * y.value)


def test_backward_rejects_non_scalar_and_nonfinite():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)
    z = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(NonFiniteError, match="non-finite"):
        F.log(z)


def test_nonfinite_gradient_detected():
    x = Tensor(np.array([1e-300, 1.0]), requires_grad=True)
    loss = F.sum(F.log(x * 1e-10))
    with pytest.raises(NonFiniteError, match="non-finite gradient"):
        backward(loss)


def test_graph_records_and_detach():
    params = ParamSet()
    w = params.add("w", np.array([2.0]))
    u = params.add("u", np.array([3.0]))
    with Graph() as g:
        a = w * 5.0
        b = u.detach() * a
        loss = F.sum(b)
    grads = g.backward(loss, params)
    assert grads["w"].tolist() == [15.0]
    assert grads["u"].tolist() == [0.0]
    assert len(g) == 3
    assert g.retained_elements > 0


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    with Graph() as g, no_grad():
        out = w * 2.0
    assert len(g) == 0 and not out.requires_grad


def test_backward_is_deterministic(rng):
    x0 = rng.standard_normal((2, 3, 40))
    w0 = rng.standard_normal((4, 3, 5))
    grads = []
    for _ in range(3):
        w = Tensor(w0.copy(), requires_grad=True)
        out = F.conv1d(Tensor(x0), w, stride=2)
        backward(F.sum(F.square(F.relu(out))))
        grads.append(w.grad)
    assert all(np.array_equal(grads[0], g) for g in grads[1:])


def test_float32_stays_float32(rng):
    x = Tensor(rng.standard_normal((2, 3, 40)).astype(np.float32))
    w = Tensor(rng.standard_normal((4, 3, 5)).astype(np.float32), requires_grad=True)
    out = F.mean(F.square(F.conv1d(x, w, stride=2) * 0.5 + 1.0))
    assert out.dtype == np.float32
    backward(out)
    assert w.grad.dtype == np.float32


def test_checkpoint_round_trip(tmp_path, rng):
    params = ParamSet()
    params.add("enc.w", rng.standard_normal((4, 2, 3)).astype(np.float32))
    params.add("alpha", np.array([0.25]))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, params, {"arch": {"in_channels": 2}})
    raw = path.read_bytes()
    assert raw.startswith(b"BEAMTAS-CKPT-1\n")
    loaded, meta = load_checkpoint(path)
    assert list(loaded) == ["enc.w", "alpha"]
    assert meta["arch"]["in_channels"] == 2
    for name in params:
        assert loaded[name].value.dtype == params[name].value.dtype
        assert np.array_equal(loaded[name].value, params[name].value)
    path.write_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_paramset_unique_names():
    p = ParamSet()
    p.add("a", np.zeros(2))
    with pytest.raises(KeyError):
        p.add("a", np.zeros(2))
