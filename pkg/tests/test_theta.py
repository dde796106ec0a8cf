import math

import numpy as np
import pytest

from lossland.schemes import Dataset, FreeKnotSpline, Polynomial
from lossland.theta import instability_scale, s_threshold, theta_heuristic
from lossland.yspace import YVector


def test_s_threshold_examples():
    assert s_threshold(0.5, 2.0) == pytest.approx(2.0)
    assert s_threshold(0.0, 5.0) == 0.0
    assert s_threshold(0.75, 1.0) == pytest.approx(math.sqrt(3))
    assert s_threshold(0.9, 0.0) == 0.0


def test_instability_scale_examples():
    assert instability_scale(0.5, 2, 1.0) == pytest.approx(1.0)
    assert instability_scale(1e-13, 3, 1.0) > 1e6
    assert instability_scale(0.3, 5, 2.0) == pytest.approx(2 * instability_scale(0.3, 5, 1.0))
    with pytest.raises(ValueError):
        instability_scale(1.0, 2, 1.0)


def test_realizable_spline():
    est = theta_heuristic(FreeKnotSpline(3), Dataset(np.array([[0.0], [1.0], [2.0]])), 5, 1, 100, seed=0)
    assert est.heuristic <= 1e-6
    assert est.cap == pytest.approx(2 / 3)


def test_spline_positive_below_cap():
    est = theta_heuristic(FreeKnotSpline(3), Dataset(np.linspace(0, 1, 6)[:, None]), 4, 1, 300, seed=1)
    assert 0 < est.heuristic <= 1 - 1 / 6 + 1e-12
    for r in est.samples:
        assert r.best_loss <= r.witness_loss < 1
        assert r.witness_loss <= 1 - 1 / 6 + 1e-15


def test_prefix_monotone_and_scale():
    ds = Dataset(np.linspace(-1, 1, 5)[:, None])
    poly = Polynomial(1)
    short = theta_heuristic(poly, ds, 3, 1, 200, seed=4)
    long = theta_heuristic(poly, ds, 6, 1, 200, seed=4)
    assert [r.y_d.tolist() for r in long.samples[:3]] == [r.y_d.tolist() for r in short.samples]
    assert long.heuristic >= short.heuristic
    big = theta_heuristic(poly, ds, 3, 1, 200, seed=4, label_norm=2.0)
    for a, b in zip(short.samples, big.samples):
        assert b.best_loss == pytest.approx(4 * a.best_loss, rel=1e-6)


def test_report_labels_heuristic():
    est = theta_heuristic(Polynomial(1), Dataset(np.linspace(0, 1, 4)[:, None]), 2, 0, 50, seed=0)
    d = est.to_dict(Polynomial(1), 4)
    assert d["heuristic_certified"] is False and d["cap"] == 1.0
