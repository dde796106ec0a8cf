import math

import numpy as np
import pytest

from lossland.constructions import (
    HypothesisError,
    affine_embed,
    bad_label,
    constant_embed,
    expressiveness_witness,
    freeknot_affine_embed,
    heaviside_unit_fit,
    poly_space_basis,
    reg_spurious_construct,
    saturated_fit,
    separating_hyperplane,
    s_threshold,
)
from lossland.schemes import Dataset, FeedForwardNN, FreeKnotSpline, ResNet, act, eval_batch, loss, random_params
from lossland.yspace import YVector, inner, norm, random_unit

X012 = Dataset(np.array([[0.0], [1.0], [2.0]]))


def _pattern(n, l, y_l):
    out = np.zeros((n, np.size(y_l)))
    out[l] = y_l
    return out


def test_separation_example():
    sep = separating_hyperplane(X012, 1, None, a=[1.0])
    assert np.array_equal(sep.A, [[1.0], [1.0]])
    assert np.array_equal(sep.b, [-0.5, -1.5])
    vals = X012.x @ sep.A.T + sep.b
    assert np.all(vals[0] < 0) and np.all(vals[2] > 0)
    assert vals[1, 0] > 0 > vals[1, 1]


def test_separation_random_high_dim():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal((20, 5)))
    for l in range(20):
        sep = separating_hyperplane(ds, l, rng)
        v = ds.x @ sep.A.T + sep.b
        assert v[l, 0] > 0 > v[l, 1]
        others = np.delete(v, l, axis=0)
        assert np.all(np.sign(others[:, 0]) == np.sign(others[:, 1]))


def test_heaviside_fit_examples():
    net = FeedForwardNN(1, (2,), 1, (act("heaviside", 0.5),))
    a = heaviside_unit_fit(net, X012, [5.0], 1, a=[1.0])
    assert eval_batch(net, a, X012).blocks.ravel().tolist() == [0.0, 5.0, 0.0]
    assert np.all(eval_batch(net, heaviside_unit_fit(net, X012, [0.0], 1, a=[1.0]), X012).blocks == 0)
    deep = FeedForwardNN(3, (4, 2, 2), 2, tuple(act("heaviside", 0.0) for _ in range(3)))
    rng = np.random.default_rng(4)
    ds = Dataset(rng.standard_normal((10, 3)))
    a = heaviside_unit_fit(deep, ds, [1.5, -2.0], 7, rng=rng)
    assert np.array_equal(eval_batch(deep, a, ds).blocks, _pattern(10, 7, [1.5, -2.0]))


def test_saturation_tanh_and_monotone():
    net = FeedForwardNN(1, (2,), 1, (act("tanh"),))
    target = _pattern(3, 1, [2.0])
    res = []
    for g in 10.0 ** np.arange(1, 7):
        a = saturated_fit(net, X012, [2.0], 1, g, rng=np.random.default_rng(0))
        res.append(norm(eval_batch(net, a, X012) - YVector(target)))
    assert res[2] <= 1e-3 * 2.0
    assert all(r1 <= r0 + 1e-12 for r0, r1 in zip(res, res[1:]))


def test_saturation_relu_exact():
    net = FeedForwardNN(1, (4,), 1, (act("relu"),))
    a = saturated_fit(net, X012, [3.0], 2, 1e3, rng=np.random.default_rng(0))
    assert np.allclose(eval_batch(net, a, X012).blocks, _pattern(3, 2, [3.0]), atol=1e-9, rtol=0)


def test_width_violation():
    net = FeedForwardNN(1, (1,), 1, (act("tanh"),))
    with pytest.raises(HypothesisError):
        saturated_fit(net, X012, [1.0], 0, 1e3)


@pytest.mark.parametrize("order", ["uniform", "bottom-up", "top-down"])
def test_mixed_stack_orders(order):
    net = FeedForwardNN(2, (4, 2, 3), 1, (act("relu"), act("tanh"), act("sigmoid")))
    ds = Dataset(np.random.default_rng(5).standard_normal((6, 2)))
    a = saturated_fit(net, ds, [1.0], 3, 1e6, rng=np.random.default_rng(1), order=order)
    assert np.allclose(eval_batch(net, a, ds).blocks, _pattern(6, 3, [1.0]), atol=1e-5)


def test_resnet_witness():
    net = ResNet(1, (4, 2), 1, (act("relu"), act("softplus")), skips=(np.ones((4, 1)), np.ones((2, 4))))
    y = YVector(np.array([0.2, -1.0, 0.3, 0.1]))
    ds = Dataset(np.linspace(-1, 1, 4)[:, None])
    w = expressiveness_witness(net, ds, y)
    assert w.loss <= y.norm() ** 2 - 1.0 / 8 + 1e-6


def test_witness_cases():
    sp = FreeKnotSpline(3)
    ds = Dataset(np.linspace(0, 1, 6)[:, None])
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = random_unit(6, 1, rng)
        w = expressiveness_witness(sp, ds, y)
        l = int(np.argmax(y.blocks[:, 0] ** 2))
        assert w.loss == pytest.approx(1 - y.blocks[l, 0] ** 2 / 12, abs=1e-15)
        assert w.loss <= 1 - 1 / 6
    e = YVector(_pattern(6, 4, [1.3]))
    assert expressiveness_witness(sp, ds, e).loss == 0.0
    net = FeedForwardNN(1, (2,), 1, (act("tanh"),))
    y = random_unit(6, 1, rng)
    assert expressiveness_witness(net, ds, y).loss <= 1 - 1 / 6 + 1e-6
    with pytest.raises(ValueError):
        expressiveness_witness(sp, ds, YVector.zeros(6))


def test_affine_embed_leaky():
    net = FeedForwardNN(1, (2, 2), 1, (act("leaky_relu", 0.01), act("leaky_relu", 0.01)))
    emb = affine_embed(net, X012, [2.0], [1.0])
    assert np.allclose(eval_batch(net, emb.alpha_bar, X012).blocks.ravel(), [1, 3, 5], atol=1e-12, rtol=0)
    assert emb.rho > 0


def test_affine_embed_elu_perturbations():
    net = FeedForwardNN(2, (3, 3), 1, (act("elu"), act("elu")))
    rng = np.random.default_rng(6)
    ds = Dataset(rng.standard_normal((6, 2)))
    emb = affine_embed(net, ds, rng.standard_normal(2), rng.standard_normal(1))
    for _ in range(50):
        h = emb.rho * rng.uniform(-1, 1, net.m)
        assert norm(emb.subspace.residual(eval_batch(net, emb.alpha_bar + h, ds))) <= 1e-9


def test_affine_embed_width_violation():
    net = FeedForwardNN(3, (2,), 3, (act("elu"),))
    ds = Dataset(np.random.default_rng(0).standard_normal((5, 3)))
    with pytest.raises(HypothesisError):
        affine_embed(net, ds, np.eye(3), np.zeros(3))


def test_constant_embed_examples():
    ds = Dataset(np.linspace(0, 1, 4)[:, None])
    relu = FeedForwardNN(1, (2,), 1, (act("relu"),))
    e = constant_embed(relu, ds, [0.0])
    assert np.all(eval_batch(relu, e.alpha_bar, ds).blocks == 0) and e.rho > 0
    sq = FeedForwardNN(1, (2,), 1, (act("sqnl"),))
    e = constant_embed(sq, ds, [3.0])
    assert np.all(eval_batch(sq, e.alpha_bar, ds).blocks == 3.0)
    hv = FeedForwardNN(1, (2, 2), 1, (act("heaviside", 0.5), act("heaviside", 0.5)))
    e = constant_embed(hv, ds, [-1.0])
    rng = np.random.default_rng(0)
    for _ in range(20):
        h = e.rho * rng.uniform(-1, 1, hv.m)
        assert np.allclose(eval_batch(hv, e.alpha_bar + h, ds).blocks, eval_batch(hv, e.alpha_bar + h, ds).blocks[0])


def test_freeknot_embed():
    sp = FreeKnotSpline(3)
    e = freeknot_affine_embed(sp, X012, 1.0, 0.0)
    assert eval_batch(sp, e.alpha_bar, X012).blocks.ravel().tolist() == [0.0, 1.0, 2.0]
    assert np.all(eval_batch(sp, freeknot_affine_embed(sp, X012, 0.0, 0.0).alpha_bar, X012).blocks == 0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        h = e.rho * rng.uniform(-1, 1, sp.m)
        assert norm(e.subspace.residual(eval_batch(sp, e.alpha_bar + h, X012))) <= 1e-9


def test_bad_label_examples():
    assert s_threshold(0.75, 1.0) == pytest.approx(math.sqrt(3))
    ds = Dataset(np.linspace(0, 1, 4)[:, None])
    sp = FreeKnotSpline(3)
    zero = freeknot_affine_embed(sp, ds, 0.0, 0.0)
    bl = bad_label(zero, 2.0)
    assert bl.threshold == 0.0 and bl.s == 2.0
    e = freeknot_affine_embed(sp, ds, 0.0, math.sqrt(2.0))  # ||base||_Y = 1
    bl = bad_label(e, 2.0, rng=np.random.default_rng(0))
    assert bl.s == pytest.approx(2 * math.sqrt(3))
    assert (bl.base + bl.s * bl.v).allclose(bl.y_d, 1e-12)
    assert all(abs(inner(bl.v, b)) < 1e-12 for b in e.subspace.vectors)
    with pytest.raises(ValueError):
        bad_label(e, 1.0)


def test_poly_space_dims():
    x3 = Dataset(np.array([[-0.5], [0.5], [1.0]]))
    assert poly_space_basis(x3, 1).dim == 2
    assert poly_space_basis(x3, 2).dim == 3
    x4 = Dataset(np.linspace(0, 1, 4)[:, None])
    assert poly_space_basis(x4, 2).dim == 3
    assert poly_space_basis(x4, 1, d_y=2).dim == 4


def test_reg_construct_pipelines():
    net = FeedForwardNN(2, (3,), 1, (act("sigmoid"),))
    ds = Dataset(np.random.default_rng(2).standard_normal((7, 2)))
    a = random_params(net, np.random.default_rng(3))
    layers = net.unpack(a)
    layers[0] = (np.zeros((3, 2)), layers[0][1])
    a = net.pack(layers)
    rc = reg_spurious_construct(net, ds, a, 1.5, 1.0, rng=np.random.default_rng(0))
    reg = rc.nu * np.sum(np.abs(rc.witness - a) ** 1.5)
    assert loss(net, a, ds, rc.y_d) - loss(net, rc.witness, ds, rc.y_d) - reg >= 1.0
    with pytest.raises(HypothesisError):
        reg_spurious_construct(net, Dataset(ds.x[:6]), a, 2.0, 1.0)
