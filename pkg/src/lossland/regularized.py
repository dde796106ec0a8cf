"""Training problems with an l_p penalty around a reference parameter.

Everything that minimizes here is a multistart heuristic and is reported as such; the only
certified quantities are recomputed losses at stored parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .constructions import (
    HypothesisError,
    RegConstruction,
    _zero_first_layer,
    expressiveness_witness,
    lp_reg,
    poly_space_basis,
)
from .schemes import Dataset, FeedForwardNN, Scheme, eval_batch, grad_loss, jacobian, loss
from .yspace import YVector, complement_direction, norm


@dataclass(frozen=True, eq=False)
class RegProblem:
    scheme: Scheme
    dataset: Dataset
    y_d: YVector
    nu: float
    p: float = 2.0
    reference: np.ndarray | None = None

    def __post_init__(self):
        if not self.nu >= 0:
            raise ValueError("nu must be nonnegative")
        if not 1.0 <= self.p <= 2.0:
            raise ValueError("p must lie in [1, 2]")
        ref = np.zeros(self.scheme.m) if self.reference is None else np.asarray(self.reference, float)
        object.__setattr__(self, "reference", ref)

    def with_label(self, y: YVector) -> "RegProblem":
        return RegProblem(self.scheme, self.dataset, y, self.nu, self.p, self.reference)


def reg_loss(prob: RegProblem, alpha) -> float:
    a = np.asarray(alpha, float)
    val = loss(prob.scheme, a, prob.dataset, prob.y_d)
    if prob.nu == 0:
        return val
    return val + prob.nu * lp_reg(a - prob.reference, prob.p)


def reg_grad(prob: RegProblem, alpha):
    """(gradient, zero_coords). For p = 1 the sign subgradient is used and coordinates sitting
    exactly on the reference are reported."""
    a = np.asarray(alpha, float)
    g = grad_loss(prob.scheme, a, prob.dataset, prob.y_d).grad
    z = a - prob.reference
    if prob.p == 1:
        zeros = tuple(int(i) for i in np.flatnonzero(z == 0))
        return g + prob.nu * np.sign(z), zeros
    return g + prob.nu * prob.p * np.sign(z) * np.abs(z) ** (prob.p - 1), ()


def _minimize(prob: RegProblem, a0, maxiter=500):
    res = minimize(
        lambda a: reg_loss(prob, a),
        np.asarray(a0, float),
        jac=lambda a: reg_grad(prob, a)[0],
        method="L-BFGS-B",
        options={"maxiter": maxiter, "gtol": 1e-12, "ftol": 1e-15},
    )
    return res.x, float(res.fun)


def multistart_min(prob: RegProblem, starts, maxiter=500):
    best_a, best_f = None, math.inf
    for a0 in starts:
        a, f = _minimize(prob, a0, maxiter)
        if f < best_f:
            best_a, best_f = a, f
    return best_a, best_f


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class RegCertReport:
    epsilon: float
    radius: float
    samples: int
    gap: float
    C: float
    loss_at_bar: float
    witness_loss: float
    boundary: bool

    @property
    def growth_ok(self) -> bool:
        return self.epsilon > 0

    @property
    def gap_ok(self) -> bool:
        return self.gap >= self.C

    @property
    def passed(self) -> bool:
        return self.growth_ok and self.gap_ok

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "radius": self.radius,
            "samples": self.samples,
            "gap": self.gap,
            "C": self.C,
            "loss_at_bar": self.loss_at_bar,
            "witness_loss": self.witness_loss,
            "radius_at_boundary": self.boundary,
            "pass": self.passed,
        }


def problem_from_construction(net: Scheme, dataset: Dataset, cert: RegConstruction) -> RegProblem:
    return RegProblem(net, dataset, cert.y_d, cert.nu, cert.p, cert.alpha_bar)


def verify_reg_certificate(
    prob: RegProblem, cert: RegConstruction, radius: float | None = None, samples: int = 200, seed: int = 0
) -> RegCertReport:
    """Fit epsilon as the smallest sampled quotient (f(a+h) - f(a)) / |h|^2 and recompute the gap."""
    r = cert.radius if radius is None else radius
    rng = np.random.default_rng(seed)
    a = cert.alpha_bar
    f0 = reg_loss(prob, a)
    eps = math.inf
    for _ in range(samples):
        h = rng.standard_normal(a.size)
        h *= r * rng.random() ** (1.0 / a.size) / np.linalg.norm(h)
        hh = float(h @ h)
        if hh == 0:
            continue
        eps = min(eps, (reg_loss(prob, a + h) - f0) / hh)
    wl = reg_loss(prob, cert.witness)
    return RegCertReport(float(eps), float(r), samples, f0 - wl, cert.C, f0, wl, radius is not None and radius > cert.radius)


# ---------------------------------------------------------------------------
# small labels: the reference stays globally optimal


def _check_zero_output(scheme, dataset):
    if np.abs(eval_batch(scheme, np.zeros(scheme.m), dataset).blocks).max() > 0:
        raise HypothesisError("scheme must vanish at alpha = 0")


def measure_taylor_radius(scheme: Scheme, dataset: Dataset, V2, seed=0, probes: int = 64) -> float:
    """Largest power-of-two radius (<= 8) on which the part of Psi(alpha) outside V2 stays below |alpha|^2 / 2."""
    rng = np.random.default_rng(seed)
    r = 8.0
    for _ in range(40):
        ok = True
        for _ in range(probes):
            a = rng.standard_normal(scheme.m)
            a *= r * rng.random() / np.linalg.norm(a)
            res = norm(V2.residual(eval_batch(scheme, a, dataset)))
            if res > 0.5 * float(a @ a):
                ok = False
                break
        if ok:
            return r
        r /= 2
    return r


@dataclass(frozen=True)
class KillReport:
    s_grid: tuple
    beaten: tuple
    best_values: tuple
    zero_values: tuple
    empirical_threshold: float
    predicted: float
    c1: float
    c2: float
    r: float
    nu: float
    p: float
    certified: bool = False

    def to_dict(self):
        return {
            "s_grid": list(self.s_grid),
            "beaten": list(self.beaten),
            "best_values": list(self.best_values),
            "zero_values": list(self.zero_values),
            "empirical_threshold": self.empirical_threshold,
            "predicted": self.predicted,
            "c1": self.c1,
            "c2": self.c2,
            "r": self.r,
            "nu": self.nu,
            "p": self.p,
            "certified": self.certified,
        }


def approx_kill_probe(
    scheme: Scheme, dataset: Dataset, nu: float, p: float, s_grid, starts: int = 10, seed: int = 0, tol: float = 1e-9
) -> KillReport:
    """Labels s v with v orthogonal to degree-2 polynomials: for small s nothing beats alpha = 0."""
    _check_zero_output(scheme, dataset)
    rng = np.random.default_rng(seed)
    V2 = poly_space_basis(dataset, 2, scheme.d_y)
    v = complement_direction(V2, rng)
    r = measure_taylor_radius(scheme, dataset, V2, seed)
    c1 = 1.0
    c2 = math.inf if p == 2 else 1.0
    predicted = min(nu * c1, math.sqrt(nu * c2), math.sqrt(nu * c1) * r)
    beaten, best, zero = [], [], []
    for s in s_grid:
        prob = RegProblem(scheme, dataset, float(s) * v, nu, p)
        f0 = reg_loss(prob, np.zeros(scheme.m))
        st = [rng.standard_normal(scheme.m) for _ in range(starts)]
        if s != 0:
            st.append(expressiveness_witness(scheme, dataset, prob.y_d, gamma=4.0).alpha)
        _, fb = multistart_min(prob, st)
        beaten.append(bool(fb < f0 - tol * (1 + f0)))
        best.append(fb)
        zero.append(f0)
    emp = 0.0
    for s, b in sorted(zip(s_grid, beaten)):
        if b:
            break
        emp = float(s)
    return KillReport(tuple(map(float, s_grid)), tuple(beaten), tuple(best), tuple(zero), emp, predicted, c1, c2, r, nu, p)


# ---------------------------------------------------------------------------
# polynomial structure of the image near a zero first layer


@dataclass(frozen=True)
class TaylorReport:
    r1: float
    r2: float
    scale: float
    first_term_ratio: float
    second_term_ratio: float
    remainder1_order: float
    remainder2_order: float

    @property
    def residuals_ok(self) -> bool:
        return self.r1 <= 1e-6 * self.scale and self.r2 <= 1e-6 * self.scale

    @property
    def order_ok(self) -> bool:
        return (
            abs(self.first_term_ratio - 10) <= 0.1
            and abs(self.second_term_ratio - 100) <= 1.0
            and self.remainder1_order >= 1.7
            and self.remainder2_order >= 2.7
        )

    @property
    def passed(self) -> bool:
        return self.residuals_ok and self.order_ok


def _second_term(net, a, X, h, tau):
    """1/2 d^2 Psi(a)[h, h] from central differences of the analytic Jacobian along h."""
    nh = np.linalg.norm(h)
    u = h / nh
    Jp = jacobian(net, a + tau * u, X)
    Jm = jacobian(net, a - tau * u, X)
    return 0.5 * ((Jp - Jm) @ u) / (2 * tau) * nh**2


def taylor_subspace_check(
    net: FeedForwardNN, dataset: Dataset, alpha_bar, num_h: int = 50, h_scale: float = 1e-2, seed: int = 0, tau: float = 1e-4
) -> TaylorReport:
    if any(not s.twice_differentiable for s in net.activations):
        raise HypothesisError("activations must be twice differentiable")
    a = net.check_params(alpha_bar)
    if not _zero_first_layer(net, a):
        raise HypothesisError("alpha_bar must have a zero first weight matrix")
    n, dy = dataset.n, net.d_y
    V1 = poly_space_basis(dataset, 1, dy)
    V2 = poly_space_basis(dataset, 2, dy)
    rng = np.random.default_rng(seed)
    base = eval_batch(net, a, dataset)
    J = jacobian(net, a, dataset.x)
    r1 = r2 = 0.0
    for _ in range(num_h):
        h = rng.standard_normal(a.size)
        t1 = YVector.from_flat(J @ h, n, dy)
        r1 = max(r1, norm(V1.residual(base + t1)))
        t2 = YVector.from_flat(_second_term(net, a, dataset.x, h, tau), n, dy)
        r2 = max(r2, norm(V2.residual(base + t1 + t2)))
    scale = max(1.0, norm(base))

    # order check along one fixed direction: shrink |h| by 10
    h = rng.standard_normal(a.size)
    h *= h_scale / np.linalg.norm(h)
    rows = []
    for k in (1.0, 0.1):
        hk = k * h
        lin = J @ hk
        quad = _second_term(net, a, dataset.x, hk, tau)
        full = eval_batch(net, a + hk, dataset).flat - base.flat
        rows.append((np.linalg.norm(lin), np.linalg.norm(quad), np.linalg.norm(full - lin), np.linalg.norm(full - lin - quad)))
    (l0, q0, R10, R20), (l1, q1, R11, R21) = rows
    return TaylorReport(
        float(r1),
        float(r2),
        scale,
        float(l0 / l1),
        float(q0 / q1),
        float(math.log10(R10 / R11)),
        float(math.log10(R20 / R21)),
    )


# ---------------------------------------------------------------------------
# instability of regularized minimizers


@dataclass(frozen=True, eq=False)
class InstabilityDemo:
    found: bool
    nu: float
    p: float
    v: YVector | None
    s0: float | None
    f_trace: tuple = ()
    far_labels: tuple = ()
    far_distances: tuple = ()
    approach_values: tuple = ()
    value_at_bar: float | None = None
    ball: float | None = None
    note: str = ""

    def to_dict(self):
        return {
            "found": self.found,
            "nu": self.nu,
            "p": self.p,
            "s0": self.s0,
            "F_trace": [list(t) for t in self.f_trace],
            "far_labels_s": [s for s, _ in self.far_labels],
            "far_distances": list(self.far_distances),
            "approach_values": list(self.approach_values),
            "value_at_bar_s0": self.value_at_bar,
            "ball": self.ball,
            "note": self.note,
            "certified": False,
        }


def reg_instability_demo(
    scheme: Scheme,
    dataset: Dataset,
    alpha_bar,
    p: float = 2.0,
    seed: int = 0,
    nu: float = 1.0,
    s_max: float = 1e4,
    starts: int = 20,
    s_tol: float = 1e-4,
    rel_tol: float = 1e-9,
) -> InstabilityDemo:
    """Trace F(s) = multistart inf of the regularized loss along Psi(alpha_bar) + s v and bisect the
    first s where some parameter beats alpha_bar."""
    a_bar = scheme.check_params(alpha_bar)
    rng = np.random.default_rng(seed)
    V2 = poly_space_basis(dataset, 2, scheme.d_y)
    v = complement_direction(V2, rng)
    base = eval_batch(scheme, a_bar, dataset)
    prob0 = RegProblem(scheme, dataset, base, nu, p, a_bar)
    trace = []
    warm = [a_bar.copy()]

    def F(s):
        prob = prob0.with_label(base + s * v)
        st = [a_bar + rng.standard_normal(a_bar.size) for _ in range(starts - 1)] + warm[-1:]
        try:
            st.append(expressiveness_witness(scheme, dataset, prob.y_d, gamma=4.0).alpha)
        except (HypothesisError, ValueError):
            pass
        a, f = multistart_min(prob, st)
        fb = reg_loss(prob, a_bar)
        trace.append((float(s), f, fb))
        return a, f, fb

    def beats(s):
        a, f, fb = F(s)
        if f < fb - rel_tol * (1 + fb):
            warm.append(a)
            return True, a
        return False, a

    s_hi, s_lo = 1.0, 0.0
    hit, a_hi = beats(s_hi)
    while not hit:
        s_lo = s_hi
        s_hi *= 2
        if s_hi > s_max:
            return InstabilityDemo(False, nu, p, v, None, tuple(trace), note="crossing not bracketed")
        hit, a_hi = beats(s_hi)
    while s_hi - s_lo > s_tol * max(1.0, s_hi):
        mid = 0.5 * (s_lo + s_hi)
        hit, a_mid = beats(mid)
        if hit:
            s_hi, a_hi = mid, a_mid
        else:
            s_lo = mid
    s0 = s_hi
    ball = 0.5 * float(np.linalg.norm(a_hi - a_bar))
    far, dists, fam = [], [], []
    for k in (1, 2, 4, 8):
        s = s0 * (1 + 1e-2 * k)
        ok, a = beats(s)
        if ok:
            far.append((s, (base + s * v).tolist()))
            dists.append(float(np.linalg.norm(a - a_bar)))
            fam.append(a)
    prob_s0 = prob0.with_label(base + s0 * v)
    approach = tuple(float(reg_loss(prob_s0, a)) for a in fam)
    return InstabilityDemo(
        True, nu, p, v, float(s0), tuple(trace), tuple(far), tuple(dists), approach, reg_loss(prob_s0, a_bar), ball
    )
