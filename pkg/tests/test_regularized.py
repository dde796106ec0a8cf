import numpy as np
import pytest

from lossland.constructions import HypothesisError, reg_spurious_construct
from lossland.regularized import (
    RegProblem,
    approx_kill_probe,
    problem_from_construction,
    reg_grad,
    reg_instability_demo,
    reg_loss,
    taylor_subspace_check,
    verify_reg_certificate,
)
from lossland.schemes import Dataset, FeedForwardNN, act, loss, random_params
from lossland.yspace import YVector

TANH = FeedForwardNN(1, (3,), 1, (act("tanh"),))
DS4 = Dataset(np.linspace(-1, 1, 4)[:, None])


def _zero_first(net, a):
    layers = net.unpack(a)
    layers[0] = (np.zeros_like(layers[0][0]), layers[0][1])
    return net.pack(layers)


@pytest.fixture
def abar():
    return _zero_first(TANH, random_params(TANH, np.random.default_rng(0)))


def test_reg_loss_basics(abar):
    y = YVector(np.array([1.0, 0.0, -1.0, 2.0]))
    assert reg_loss(RegProblem(TANH, DS4, y, 0.0), abar) == loss(TANH, abar, DS4, y)
    assert reg_loss(RegProblem(TANH, DS4, y, 3.0, 2.0, abar), abar) == loss(TANH, abar, DS4, y)
    with pytest.raises(ValueError):
        RegProblem(TANH, DS4, y, 1.0, 2.5)


def test_reg_grad_fd(abar):
    rng = np.random.default_rng(1)
    y = YVector(rng.standard_normal(4))
    prob = RegProblem(TANH, DS4, y, 0.7, 2.0)
    a = random_params(TANH, rng)
    g, zeros = reg_grad(prob, a)
    h = 1e-6
    fd = np.array([(reg_loss(prob, a + h * e) - reg_loss(prob, a - h * e)) / (2 * h) for e in np.eye(a.size)])
    assert np.abs(g - fd).max() <= 1e-5 * max(1, np.abs(g).max())
    assert zeros == ()
    g1, z1 = reg_grad(RegProblem(TANH, DS4, y, 0.7, 1.0, a), a)
    assert len(z1) == a.size


def test_certificate_and_negative_control(abar):
    rc = reg_spurious_construct(TANH, DS4, abar, 2.0, 1.0, rng=np.random.default_rng(0))
    prob = problem_from_construction(TANH, DS4, rc)
    rep = verify_reg_certificate(prob, rc)
    assert rep.passed and rep.epsilon > 0 and rep.gap >= 1
    heavy = RegProblem(TANH, DS4, rc.y_d, rc.nu * 1e6, rc.p, rc.alpha_bar)
    assert not verify_reg_certificate(heavy, rc).gap_ok


def test_taylor_examples():
    net = FeedForwardNN(1, (3,), 1, (act("sigmoid"),))
    ds = Dataset(np.linspace(-1, 1, 6)[:, None])
    a = _zero_first(net, random_params(net, np.random.default_rng(2)))
    rep = taylor_subspace_check(net, ds, a)
    assert rep.passed
    with pytest.raises(HypothesisError):
        taylor_subspace_check(net, ds, random_params(net, np.random.default_rng(3)))
    relu = FeedForwardNN(1, (3,), 1, (act("relu"),))
    with pytest.raises(HypothesisError):
        taylor_subspace_check(relu, ds, np.zeros(relu.m))


def test_kill_probe():
    rep = approx_kill_probe(TANH, DS4, 1.0, 2.0, [0.0, 0.2, 50.0], starts=4, seed=0)
    assert rep.beaten[0] is False and rep.best_values[0] == pytest.approx(0.0, abs=1e-12)
    assert rep.beaten[-1] is True
    assert rep.certified is False


def test_instability_demo(abar):
    dm = reg_instability_demo(TANH, DS4, abar, nu=1.0, starts=6, seed=0)
    assert dm.found and dm.s0 > 0
    assert min(dm.far_distances) > dm.ball
    gaps = [v - dm.value_at_bar for v in dm.approach_values]
    assert gaps == sorted(gaps) and gaps[0] >= -1e-6
    none = reg_instability_demo(TANH, DS4, abar, nu=1e6, s_max=4.0, starts=2, seed=0)
    assert not none.found and none.note
