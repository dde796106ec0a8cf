"""Worst-case approximation error over unit labels: certified cap, sampled heuristic, thresholds.

The heuristic is never a certificate. Each recorded best loss is an upper bound for that label's
squared distance to the image, so the max over labels bounds the true value from neither side.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constructions import expressiveness_witness, s_threshold, spline_interpolant
from .schemes import (
    Dataset,
    FreeKnotSpline,
    Scheme,
    fd_grad,
    grad_loss,
    loss,
    random_params,
    single_sample_fit_cap,
)
from .yspace import YVector, random_unit

__all__ = [
    "DescentSettings",
    "LabelRecord",
    "ThetaEstimate",
    "armijo_descent",
    "instability_scale",
    "s_threshold",
    "theta_heuristic",
]


@dataclass(frozen=True)
class DescentSettings:
    max_iters: int = 2000
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    fd_step: float = 1e-6
    init_scale: float = 1.0


@dataclass(frozen=True)
class LabelRecord:
    y_d: YVector
    best_loss: float
    witness_loss: float
    starts_used: int

    def to_dict(self):
        return {
            "y_d": self.y_d.tolist(),
            "best_loss": self.best_loss,
            "witness_loss": self.witness_loss,
            "starts_used": self.starts_used,
        }


@dataclass(frozen=True)
class ThetaEstimate:
    heuristic: float
    cap: float
    samples: tuple
    seed: int
    settings: DescentSettings = field(default_factory=DescentSettings)
    certified: bool = False

    def to_dict(self, scheme: Scheme | None = None, n: int | None = None) -> dict:
        d = {
            "cap": self.cap,
            "heuristic": self.heuristic,
            "heuristic_certified": self.certified,
            "per_label": [r.to_dict() for r in self.samples],
            "seed": self.seed,
            "solver": {
                "method": "armijo-gradient-descent",
                "max_iters": self.settings.max_iters,
                "grad_tol": self.settings.grad_tol,
                "armijo_c": self.settings.armijo_c,
                "fd_step": self.settings.fd_step,
            },
        }
        if scheme is not None:
            d["scheme"] = scheme.to_dict()
        if n is not None:
            d["n"] = n
        return d


def _descent_direction(scheme, alpha, ds, y, st: DescentSettings):
    g = grad_loss(scheme, alpha, ds, y)
    if g.smooth:
        return g.grad
    return fd_grad(scheme, alpha, ds, y, h=st.fd_step)


def armijo_descent(scheme: Scheme, alpha0, ds: Dataset, y: YVector, st: DescentSettings = DescentSettings()):
    """Gradient descent with backtracking; steps leaving the parameter domain are rejected."""
    a = np.array(alpha0, float)
    f = loss(scheme, a, ds, y)
    t = 1.0
    for _ in range(st.max_iters):
        g = _descent_direction(scheme, a, ds, y, st)
        gg = float(g @ g)
        if math.sqrt(gg) <= st.grad_tol or not np.isfinite(gg):
            break
        t = min(2.0 * t, 1e6)
        while t > 1e-20:
            cand = a - t * g
            if scheme.in_domain(cand):
                fc = loss(scheme, cand, ds, y)
                if fc <= f - st.armijo_c * t * gg:
                    break
            t *= 0.5
        else:
            break
        a, f = cand, fc
    return a, f


def _warm_start(scheme, ds, y):
    if isinstance(scheme, FreeKnotSpline) and ds.n <= scheme.p:
        a = spline_interpolant(scheme, ds, y)
        return a, loss(scheme, a, ds, y)
    w = expressiveness_witness(scheme, ds, y)
    return w.alpha, w.loss


def _one_label(args):
    scheme, ds, child, num_starts, st, label_norm = args
    rng = np.random.default_rng(child)
    y = label_norm * random_unit(ds.n, scheme.d_y, rng)
    a0, wl = _warm_start(scheme, ds, y)
    best = min(wl, armijo_descent(scheme, a0, ds, y, st)[1])
    for _ in range(num_starts):
        a = random_params(scheme, rng, st.init_scale)
        best = min(best, armijo_descent(scheme, a, ds, y, st)[1])
    return LabelRecord(y, float(best), float(wl), num_starts + 1)


def theta_heuristic(
    scheme: Scheme,
    dataset: Dataset,
    num_labels: int,
    num_starts: int = 4,
    max_iters: int = 2000,
    seed: int = 0,
    jobs: int = 1,
    label_norm: float = 1.0,
) -> ThetaEstimate:
    """Max over sampled unit labels of the best loss found from the witness plus random starts.

    Label i always uses the i-th spawned seed, so results do not depend on jobs and a longer
    run extends a shorter one.
    """
    st = DescentSettings(max_iters=max_iters)
    children = np.random.SeedSequence(seed).spawn(num_labels)
    tasks = [(scheme, dataset, c, num_starts, st, label_norm) for c in children]
    if jobs > 1 and num_labels > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            recs = list(ex.map(_one_label, tasks))
    else:
        recs = [_one_label(t) for t in tasks]
    heur = max((r.best_loss for r in recs), default=0.0)
    cap = single_sample_fit_cap(scheme, dataset.n)
    return ThetaEstimate(heur, cap, tuple(recs), seed, st)


def instability_scale(theta: float, dimY: int, C: float) -> float:
    """Label norm at which the projection onto the image is forced to jump by at least C."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    return C * math.sqrt((dimY - 1) / (2.0 * dimY * (theta - theta * theta)))
