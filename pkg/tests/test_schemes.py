import zlib

import numpy as np
import pytest

from lossland.constructions import spline_spike
from lossland.schemes import (
    ALL_ACTIVATIONS,
    Activation,
    Dataset,
    FeedForwardNN,
    FreeKnotSpline,
    KnotOrderError,
    ResNet,
    ToyLightning,
    act,
    eval_batch,
    eval_point,
    fd_grad,
    grad_loss,
    loss,
    random_params,
    scheme_from_dict,
)
from lossland.yspace import YVector

X3 = Dataset(np.array([[-0.5], [0.5], [1.0]]))


def test_toy_spike_values():
    toy = ToyLightning()
    assert eval_point(toy, [6, -2], [0.5])[0] == 1.0
    assert eval_batch(toy, [6, -2], X3).blocks.ravel().tolist() == [0.0, 1.0, 0.0]


def test_zero_network():
    net = FeedForwardNN(2, (3, 2), 2, (act("tanh"), act("relu")))
    out = net.forward(np.zeros(net.m), np.random.default_rng(0).standard_normal((4, 2)))
    assert np.all(out == 0)


def test_spline_middle_branch():
    sp = FreeKnotSpline(3)
    assert eval_point(sp, [0, 1, 0, 0, 1, 2], [0.5])[0] == 0.5


def test_spline_half_open_branches_and_continuity():
    sp = FreeKnotSpline(3)
    a = np.array([1.0, -2.0, 4.0, 0.0, 1.0, 3.0])
    for g in (0.0, 1.0, 3.0):
        left, mid, right = sp.forward(a, np.array([[g - 1e-13], [g], [g + 1e-13]]))[:, 0]
        assert abs(left - right) < 1e-11 and abs(mid - left) < 1e-11
    with pytest.raises(KnotOrderError):
        sp.forward(np.array([0, 0, 0, 1.0, 1.0, 2.0]), np.zeros((1, 1)))


def test_spline_spike_loss():
    sp = FreeKnotSpline(3)
    ds = Dataset(np.linspace(0, 1, 5)[:, None])
    y = YVector(np.array([0.1, -0.3, 2.0, 0.4, 0.0]))
    a = spline_spike(sp, ds, 2.0, 2)
    assert eval_batch(sp, a, ds).blocks.ravel().tolist() == [0.0, 0.0, 2.0, 0.0, 0.0]
    expected = y.norm() ** 2 - 4.0 / 10
    assert loss(sp, a, ds, y) == pytest.approx(expected, abs=1e-15)


def test_param_count_and_roundtrip():
    net = FeedForwardNN(3, (4, 5), 2, (act("tanh"), act("sigmoid")))
    assert net.m == 4 * 4 + 5 * 5 + 2 * 6
    a = np.arange(net.m, dtype=float)
    assert np.array_equal(net.pack(net.unpack(a)), a)
    A1, b1 = net.unpack(a)[0]
    assert A1[0].tolist() == [0.0, 1.0, 2.0] and b1[0] == 12.0


def test_loss_examples():
    net = FeedForwardNN(1, (2,), 1, (act("tanh"),))
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal((4, 1)))
    a = random_params(net, rng)
    y = eval_batch(net, a, ds)
    assert loss(net, a, ds, y) == 0.0
    assert np.linalg.norm(grad_loss(net, a, ds, y).grad) <= 1e-10
    assert loss(net, np.zeros(net.m), ds, y) == pytest.approx(y.norm() ** 2)


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "softplus", "silu", "elu", "bent_identity", "isru", "isrlu", "softclip", "sqnl", "arctan", "softsign"])
def test_grad_matches_fd(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    net = FeedForwardNN(2, (3, 2), 1, (act(name), act(name)))
    ds = Dataset(rng.standard_normal((5, 2)))
    y = YVector(rng.standard_normal(5))
    a = random_params(net, rng)
    g = grad_loss(net, a, ds, y)
    fd = fd_grad(net, a, ds, y)
    assert np.abs(g.grad - fd).max() <= 1e-5 * max(1.0, np.abs(g.grad).max())


def test_kink_flag_relu():
    net = FeedForwardNN(1, (1,), 1, (act("relu"),))
    a = np.array([1.0, 0.0, 1.0, 0.0])
    g = grad_loss(net, a, Dataset(np.array([[0.0], [1.0]])), YVector(np.array([1.0, 1.0])))
    assert not g.smooth and g.kinks


def test_activation_descriptors():
    assert abs(act("tanh")(20.0) - 1) <= 1e-8 and abs(act("tanh")(-20.0) + 1) <= 1e-8
    r = act("relu")
    s = np.linspace(1, 5, 7)
    assert np.all(r(s) - r(s - 1) == 1) and np.all(r(-s) - r(-s - 1) == 0)
    for name in ALL_ACTIVATIONS:
        a = Activation(name, 0.5 if name in ("leaky_relu",) else 1.0)
        seg = a.affine_segment
        if seg is None:
            continue
        lo, hi, beta, gam = seg
        lo = max(lo, -10.0)
        hi = min(hi, 10.0)
        pts = np.linspace(lo, hi, 7)[1:-1]
        assert np.allclose(a(pts), beta * pts + gam, atol=1e-12, rtol=0)
    assert act("sigmoid")(-1000.0) == 0.0 and np.isfinite(act("softplus")(1000.0))
    with pytest.raises(ValueError):
        act("leaky_relu", 1.0)
    with pytest.raises(ValueError):
        act("nope")


def test_heaviside_scale_invariance():
    net = FeedForwardNN(2, (3, 2), 1, (act("heaviside", 0.5), act("heaviside", 0.5)))
    rng = np.random.default_rng(3)
    a = random_params(net, rng)
    X = rng.standard_normal((6, 2))
    scaled = a.copy()
    scaled[: 3 * 3] *= 7.5
    assert np.array_equal(net.forward(a, X), net.forward(scaled, X))


def test_dataset_distinct():
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0], [1.0]]))


def test_scheme_dict_roundtrip():
    for s in (
        ToyLightning(conic=True),
        FreeKnotSpline(4),
        FeedForwardNN(1, (2, 3), 2, (act("leaky_relu", 0.2), act("elu"))),
        ResNet(1, (2,), 1, (act("tanh"),), skips=(np.ones((2, 1)),)),
    ):
        assert scheme_from_dict(s.to_dict()).to_dict() == s.to_dict()
    with pytest.raises(ValueError):
        scheme_from_dict({"variant": "toy", "bogus": 1})
