"""Explicit parameter constructions.

single-sample fits (exact for step nets and splines, limits for saturating nets), subspace
embeddings with a certified parameter radius rho, and labels that sit in the "bad" cone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .schemes import (
    Activation,
    Dataset,
    FeedForwardNN,
    FreeKnotSpline,
    Polynomial,
    ResNet,
    Scheme,
    ToyLightning,
    eval_batch,
    loss,
)
from .yspace import (
    SubspaceBasis,
    YVector,
    complement_direction,
    norm,
    orthonormalize,
)


class HypothesisError(ValueError):
    """The scheme does not meet the width/activation conditions of a construction."""


# ---------------------------------------------------------------------------
# separation


@dataclass(frozen=True)
class Separation:
    A: np.ndarray
    b: np.ndarray
    a: np.ndarray
    eps: float
    margin: float


def separating_hyperplane(dataset: Dataset, l: int, rng, a=None, max_tries: int = 100) -> Separation:
    """Rows of A both equal a direction a that separates x_l from all other inputs.

    A x_l + b = (eps, -eps); for k != l both entries of A x_k + b share a sign.
    """
    x = dataset.x
    diffs = np.delete(x - x[l], l, axis=0)
    scale = max(float(np.abs(diffs).max()), 1e-300)
    tries = 0
    while True:
        if a is None:
            cand = rng.standard_normal(dataset.d_x)
            cand /= np.linalg.norm(cand)
        else:
            cand = np.asarray(a, float).reshape(-1)
        proj = diffs @ cand
        margin = float(np.abs(proj).min())
        if margin > 1e-9 * scale:
            break
        tries += 1
        if a is not None or tries >= max_tries:
            raise RuntimeError("no separating direction found")
    eps = margin / 2
    t = float(cand @ x[l])
    A = np.stack([cand, cand])
    b = np.array([eps - t, -eps - t])
    return Separation(A, b, cand, eps, margin)


# ---------------------------------------------------------------------------
# step-network skeletons and their realisation in actual networks

_KAPPA = 10.0


@dataclass
class _Skeleton:
    """Network with Heaviside units. layers[i] = (A~, b~) acting on previous step outputs;
    top acts on the last step layer. first, if set, replaces layer 1 by a ready-made feature
    (A1, b1, M1, c1) whose affine read-out M1 r + c1 feeds layer 2's step units."""

    layers: list
    top: tuple
    first: tuple | None = None


def _step_skeleton(dataset, l, y_l, L, sep):
    y_l = np.asarray(y_l, float).reshape(-1)
    layers = [(sep.A.copy(), sep.b.copy())]
    if L == 1:
        top = (np.outer(y_l, [1.0, -1.0]), np.zeros(y_l.size))
        return _Skeleton(layers, top)
    layers.append((np.array([[1.0, -1.0]]), np.array([-0.5])))
    for _ in range(3, L + 1):
        layers.append((np.array([[1.0]]), np.array([-0.5])))
    return _Skeleton(layers, (y_l[:, None].copy(), np.zeros(y_l.size)))


def _abs_skeleton(dataset, l, y_l, L, sep, sigma: Activation):
    """Layer 1 computes 1 - g|a.(x - x_l)| with two piecewise-linear units; 1 at x_l, <= -1 elsewhere."""
    lo, hi = sigma.ray_slopes
    g = 2.0 / sep.margin
    a = sep.a
    t = float(a @ dataset.x[l])
    A1 = g * np.stack([a, -a])
    b1 = g * np.array([-t, t])
    M1 = -np.ones((1, 2)) / (hi - lo)
    c1 = np.array([1.0])
    y_l = np.asarray(y_l, float).reshape(-1)
    layers = [None, (np.array([[1.0]]), np.array([0.0]))]
    for _ in range(3, L + 1):
        layers.append((np.array([[1.0]]), np.array([-0.5])))
    return _Skeleton(layers, (y_l[:, None].copy(), np.zeros(y_l.size)), first=(A1, b1, M1, c1))


def _units_needed(sigma: Activation, k: int) -> int:
    return 2 * k if sigma.kind == "relu" else k


def _layer_gammas(gamma, L, order):
    if order == "uniform":
        return [gamma] * L
    if order == "bottom-up":
        return [gamma * _KAPPA ** (L - 1 - i) for i in range(L)]
    if order == "top-down":
        return [gamma * _KAPPA**i for i in range(L)]
    raise ValueError(f"unknown saturation order {order!r}")


def _realize(net: FeedForwardNN, sk: _Skeleton, gammas) -> np.ndarray:
    """Turn a step skeleton into parameters of `net`, emulating each step layer by a scaled activation.

    sigmoid-type: (sigma(g s) - lo)/(hi - lo); ReLU-type: paired units sigma(g s) - sigma(g s - 1),
    renormalized by the limits of that difference. Renormalizations are pushed into the next layer.
    """
    layers_out = []
    shapes = net.shapes
    M_prev = np.eye(net.d_x)
    c_prev = np.zeros(net.d_x)
    for i in range(net.L):
        w, w_in = shapes[i]
        sig = net.activations[i]
        if i == 0 and sk.first is not None:
            A1, b1, M1, c1 = sk.first
            if A1.shape[0] > w:
                raise HypothesisError(f"layer 1 needs width >= {A1.shape[0]}")
            A = np.zeros((w, w_in))
            b = np.zeros(w)
            A[: A1.shape[0]] = A1
            b[: A1.shape[0]] = b1
            M = np.zeros((M1.shape[0], w))
            M[:, : A1.shape[0]] = M1
            layers_out.append((A, b))
            M_prev, c_prev = M, c1
            continue
        At, bt = sk.layers[i]
        k = At.shape[0]
        if sig.kind not in ("sigmoid", "relu"):
            raise HypothesisError(f"activation {sig.name} cannot emulate a step at layer {i + 1}")
        need = _units_needed(sig, k)
        if need > w:
            raise HypothesisError(f"layer {i + 1} needs width >= {need}, has {w}")
        G = At @ M_prev
        g0 = At @ c_prev + bt
        g = 1.0 if sig.name == "heaviside" else gammas[i]
        A = np.zeros((w, w_in))
        b = np.zeros(w)
        M = np.zeros((k, w))
        if sig.kind == "sigmoid":
            lo, hi = sig.limits
            A[:k] = g * G
            b[:k] = g * g0
            if sig.name == "heaviside":
                M[:, :k] = np.eye(k)
                c = np.zeros(k)
            else:
                M[:, :k] = np.eye(k) / (hi - lo)
                c = np.full(k, -lo / (hi - lo))
        else:
            lo, hi = sig.ray_slopes
            A[:k] = g * G
            A[k : 2 * k] = g * G
            b[:k] = g * g0
            b[k : 2 * k] = g * g0 - 1.0
            M[:, :k] = np.eye(k) / (hi - lo)
            M[:, k : 2 * k] = -np.eye(k) / (hi - lo)
            c = np.full(k, -lo / (hi - lo))
        layers_out.append((A, b))
        M_prev, c_prev = M, c
    At, bt = sk.top
    layers_out.append((At @ M_prev, At @ c_prev + bt))
    return net.pack(layers_out)


def _route(net: FeedForwardNN):
    """Which single-sample construction applies to this network, or None."""
    s1 = net.activations[0]
    kinds = [a.kind for a in net.activations]
    if any(k not in ("sigmoid", "relu") for k in kinds):
        return None
    for i in range(1, net.L):
        if _units_needed(net.activations[i], 1) > net.widths[i]:
            return None
    if _units_needed(s1, 2) <= net.widths[0]:
        return "separation"
    if s1.piecewise_linear and net.L >= 2 and net.widths[0] >= 2:
        return "abs"
    return None


def _resnet_ok(net: ResNet) -> bool:
    if any(a.ray_slopes is None for a in net.activations):
        return False
    return net.widths[0] >= 4 and all(w >= 2 for w in net.widths[1:])


def supports_single_sample_fit(scheme: Scheme) -> bool:
    if isinstance(scheme, (FreeKnotSpline,)):
        return True
    if isinstance(scheme, ToyLightning):
        return scheme.conic
    if isinstance(scheme, ResNet):
        return _resnet_ok(scheme)
    if isinstance(scheme, FeedForwardNN):
        return _route(scheme) is not None
    return False


def heaviside_unit_fit(net: FeedForwardNN, dataset: Dataset, y_l, l: int, rng=None, a=None) -> np.ndarray:
    """Exact fit of y_l at sample l and 0 elsewhere for a network of step activations."""
    if any(s.name != "heaviside" for s in net.activations):
        raise HypothesisError("all activations must be heaviside")
    if net.widths[0] < 2:
        raise HypothesisError("first layer needs width >= 2")
    rng = np.random.default_rng(0) if rng is None else rng
    sep = separating_hyperplane(dataset, l, rng, a=a)
    sk = _step_skeleton(dataset, l, y_l, net.L, sep)
    alpha = _realize(net, sk, [1.0] * net.L)
    # spec layout: unused rows of layers >= 2 get bias -1/2 so their outputs are exactly 0
    layers = net.unpack(alpha)
    for i in range(1, net.L):
        A, b = layers[i]
        k = sk.layers[i][0].shape[0]
        b[k:] = -0.5
    return net.pack(layers)


def saturated_fit(
    net: FeedForwardNN, dataset: Dataset, y_l, l: int, gamma: float, rng=None, order: str = "uniform", a=None
) -> np.ndarray:
    """Single-sample fit whose error vanishes as gamma -> infinity (exact for piecewise-linear units
    once gamma * margin >= 1)."""
    if isinstance(net, ResNet):
        return resnet_saturated_fit(net, dataset, y_l, l, gamma, rng=rng, a=a)
    route = _route(net)
    if route is None:
        raise HypothesisError("activations/widths do not admit a single-sample fit")
    rng = np.random.default_rng(0) if rng is None else rng
    sep = separating_hyperplane(dataset, l, rng, a=a)
    if route == "separation":
        sk = _step_skeleton(dataset, l, y_l, net.L, sep)
    else:
        sk = _abs_skeleton(dataset, l, y_l, net.L, sep, net.activations[0])
    return _realize(net, sk, _layer_gammas(gamma, net.L, order))


def resnet_saturated_fit(net: ResNet, dataset: Dataset, y_l, l: int, gamma: float, rng=None, a=None) -> np.ndarray:
    """Top-down saturation for skip-connected networks.

    A network with the positively homogeneous limits s -> sigma^- min(0,s) + sigma^+ max(0,s) fits
    the sample exactly; layer i is then scaled by G_i = gamma^i (A_i by G_i/G_{i-1}) and the top layer
    by 1/G_L, so every skip contribution is a factor gamma smaller than the layer it feeds.
    """
    if not _resnet_ok(net):
        raise HypothesisError("ResNet fit needs ReLU-type activations, w_1 >= 4 and w_i >= 2")
    rng = np.random.default_rng(0) if rng is None else rng
    sep = separating_hyperplane(dataset, l, rng, a=a)
    sk = _step_skeleton(dataset, l, y_l, net.L, sep)
    slopes = [s.ray_slopes for s in net.activations]
    # hard steps: first-layer margin eps, deeper layers margin 1/2
    g_skel = [1.0 / sep.eps] + [2.0] * (net.L - 1)
    base = net.unpack(_realize_with_slopes(net, sk, g_skel, slopes))
    G = [float(gamma) ** (i + 1) for i in range(net.L)]
    if not all(math.isfinite(v) and v < 1e250 for v in G):
        raise HypothesisError("gamma**L overflows; lower gamma")
    out = []
    for i, (A, b) in enumerate(base[:-1]):
        prev = 1.0 if i == 0 else G[i - 1]
        out.append((A * (G[i] / prev), b * G[i]))
    A, b = base[-1]
    out.append((A / G[-1], b))
    return net.pack(out)


def _realize_with_slopes(net, sk, gammas, slopes):
    layers_out = []
    M_prev = np.eye(net.d_x)
    c_prev = np.zeros(net.d_x)
    for i in range(net.L):
        w, w_in = net.shapes[i]
        At, bt = sk.layers[i]
        k = At.shape[0]
        if 2 * k > w:
            raise HypothesisError(f"layer {i + 1} needs width >= {2 * k}")
        lo, hi = slopes[i]
        G, g0, g = At @ M_prev, At @ c_prev + bt, gammas[i]
        A = np.zeros((w, w_in))
        b = np.zeros(w)
        A[:k] = g * G
        A[k : 2 * k] = g * G
        b[:k] = g * g0
        b[k : 2 * k] = g * g0 - 1.0
        M = np.zeros((k, w))
        M[:, :k] = np.eye(k) / (hi - lo)
        M[:, k : 2 * k] = -np.eye(k) / (hi - lo)
        layers_out.append((A, b))
        M_prev, c_prev = M, np.full(k, -lo / (hi - lo))
    At, bt = sk.top
    layers_out.append((At @ M_prev, At @ c_prev + bt))
    return net.pack(layers_out)


# ---------------------------------------------------------------------------
# expressiveness witnesses


@dataclass(frozen=True)
class Witness:
    alpha: np.ndarray
    loss: float
    l: int
    route: str


def toy_spike(dataset: Dataset, l: int, delta: float, amplitude: float | None = None) -> np.ndarray:
    """Parameters of the lightning scheme hitting delta (|delta| <= 1) at x_l and 0 at the other inputs."""
    x = dataset.x[:, 0]
    gap = np.abs(np.delete(x, l) - x[l]).min()
    a1 = 3.0 / gap
    a2 = -a1 * x[l] + delta
    if amplitude is None:
        return np.array([a1, a2])
    return np.array([a1, a2, amplitude])


def spline_spike(spline: FreeKnotSpline, dataset: Dataset, y_l: float, l: int) -> np.ndarray:
    """beta_1 = beta_p = 0, beta_j = y_l in between, gamma_2 = x_l, every other input outside [gamma_1, gamma_p]."""
    x = dataset.x[:, 0]
    p = spline.p
    d = np.abs(np.delete(x, l) - x[l]).min() / 2
    xl = x[l]
    gam = np.empty(p)
    gam[0] = xl - d
    gam[1 : p - 1] = xl + np.linspace(0.0, d / 2, p - 2)
    gam[-1] = xl + d
    beta = np.zeros(p)
    beta[1 : p - 1] = y_l
    return np.concatenate([beta, gam])


def spline_interpolant(spline: FreeKnotSpline, dataset: Dataset, y_d: YVector) -> np.ndarray:
    """Exact interpolation when n <= p: knots at the sorted inputs, extra knots beyond the last one."""
    n, p = dataset.n, spline.p
    if n > p:
        raise HypothesisError("interpolation needs n <= p")
    order = np.argsort(dataset.x[:, 0])
    xs = dataset.x[order, 0]
    ys = y_d.blocks[order, 0]
    span = xs[-1] - xs[0]
    gam = np.concatenate([xs, xs[-1] + span * np.arange(1, p - n + 1)])
    beta = np.concatenate([ys, np.full(p - n, ys[-1])])
    return np.concatenate([beta, gam])


def expressiveness_witness(
    scheme: Scheme, dataset: Dataset, y_d: YVector, gamma: float = 1e6, rng=None, order: str = "uniform"
) -> Witness:
    """A parameter whose loss beats the zero prediction, from the single-sample constructions."""
    if norm(y_d) == 0.0:
        raise ValueError("y_d must be nonzero")
    l = int(np.argmax((y_d.blocks**2).sum(1)))
    y_l = y_d.blocks[l]
    if isinstance(scheme, FreeKnotSpline):
        alpha, route = spline_spike(scheme, dataset, float(y_l[0]), l), "spline-spike"
    elif isinstance(scheme, ToyLightning):
        v = float(y_l[0])
        if scheme.conic:
            alpha = toy_spike(dataset, l, 1.0, amplitude=v)
        else:
            alpha = toy_spike(dataset, l, math.copysign(min(abs(v), 1.0), v))
        route = "toy-spike"
    elif isinstance(scheme, Polynomial):
        V = np.vander(dataset.x[:, 0], scheme.degree + 1, increasing=True)
        alpha = np.linalg.lstsq(V, y_d.blocks[:, 0], rcond=None)[0]
        route = "least-squares"
    elif isinstance(scheme, ResNet):
        alpha, route = resnet_saturated_fit(scheme, dataset, y_l, l, gamma, rng=rng), "resnet-saturation"
    elif isinstance(scheme, FeedForwardNN):
        if all(s.name == "heaviside" for s in scheme.activations):
            alpha, route = heaviside_unit_fit(scheme, dataset, y_l, l, rng=rng), "heaviside"
        else:
            alpha = saturated_fit(scheme, dataset, y_l, l, gamma, rng=rng, order=order)
            route = "saturation-" + _route(scheme)
    else:
        raise HypothesisError(f"no witness construction for {type(scheme).__name__}")
    return Witness(alpha, loss(scheme, alpha, dataset, y_d), l, route)


# ---------------------------------------------------------------------------
# polynomial subspaces


def _monomials(d_x: int, degree: int):
    out = [()]
    for deg in range(1, degree + 1):
        def rec(start, left, cur):
            if left == 0:
                out.append(tuple(cur))
                return
            for j in range(start, d_x):
                rec(j, left - 1, cur + [j])
        rec(0, deg, [])
    return out


def poly_space_basis(dataset: Dataset, degree: int, d_y: int = 1) -> SubspaceBasis:
    """Orthonormal basis of {(P(x_k))_k : P vector-valued polynomial of degree <= degree}."""
    if degree not in (0, 1, 2):
        raise ValueError("degree must be 0, 1 or 2")
    raw = []
    for mono in _monomials(dataset.d_x, degree):
        col = np.prod(dataset.x[:, list(mono)], axis=1) if mono else np.ones(dataset.n)
        for j in range(d_y):
            blk = np.zeros((dataset.n, d_y))
            blk[:, j] = col
            raw.append(YVector(blk))
    return orthonormalize(raw)


def poly_space_dim_bound(d_x: int, d_y: int, degree: int) -> int:
    return d_y * math.comb(d_x + degree, degree)


# ---------------------------------------------------------------------------
# embeddings with certified radius


@dataclass(frozen=True, eq=False)
class EmbeddingResult:
    alpha_bar: np.ndarray
    neighborhood_radius: float
    subspace: SubspaceBasis
    margin: float
    lemma: str
    scheme: Scheme = field(repr=False)
    dataset: Dataset = field(repr=False)

    @property
    def rho(self) -> float:
        return self.neighborhood_radius

    @property
    def base(self) -> YVector:
        return eval_batch(self.scheme, self.alpha_bar, self.dataset)


_SLACK = 1e-12


def _segment_center(lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return (lo + hi) / 2, (hi - lo) / 2
    if math.isfinite(lo):
        return lo + 1.0, 1.0
    if math.isfinite(hi):
        return hi - 1.0, 1.0
    return 0.0, 1.0


def _propagate(net: FeedForwardNN, alpha, X, rho, check):
    """Interval propagation of the parameter box |h|_inf <= rho through the network.

    check(i, lo, hi) -> (ok, out_lo, out_hi, stop). Returns True if every visited layer passes.
    """
    layers = net.unpack(alpha)
    zc = np.asarray(X, float)
    zr = np.zeros_like(zc)
    for i in range(net.L):
        A, b = layers[i]
        zabs = np.abs(zc) + zr
        pc = zc @ A.T + b
        pr = zr @ np.abs(A).T + rho * zabs.sum(1, keepdims=True) + rho
        pr = pr * (1 + _SLACK) + _SLACK * (1 + np.abs(pc))
        ok, olo, ohi, stop = check(i, pc - pr, pc + pr)
        if not ok:
            return False
        if stop:
            return True
        if isinstance(net, ResNet):
            E = net.skips[i]
            sc = zc @ E.T
            sr = zr @ np.abs(E).T
            olo, ohi = olo + sc - sr, ohi + sc + sr
        zc, zr = (olo + ohi) / 2, (ohi - olo) / 2
    return True


def _bisect_rho(passes, guess: float, iters: int = 60, rho_max: float = 1e6) -> float:
    if not passes(0.0):
        raise HypothesisError("base point is not strictly inside the required segments")
    lo, hi = 0.0, max(guess, 1e-12)
    while passes(hi):
        lo, hi = hi, 2 * hi
        if hi > rho_max:
            return lo
    for _ in range(iters):
        mid = (lo + hi) / 2
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return lo


def affine_embed(net: FeedForwardNN, dataset: Dataset, A, b, route: str | None = None) -> EmbeddingResult:
    """Parameters with Psi(alpha_bar) = (A x_k + b)_k, every hidden unit sitting inside an affine segment."""
    A = np.asarray(A, float).reshape(net.d_y, net.d_x)
    b = np.asarray(b, float).reshape(net.d_y)
    segs = [s.affine_segment for s in net.activations]
    if any(s is None for s in segs):
        raise HypothesisError("every activation needs an affine segment")
    wmin = min(net.widths)
    if route is None:
        route = "input" if net.d_x <= wmin else ("output" if net.d_y <= wmin else None)
    if route == "input" and net.d_x <= wmin:
        P, q, Q, cst = np.eye(net.d_x), np.zeros(net.d_x), A, b
    elif route == "output" and net.d_y <= wmin:
        P, q, Q, cst = A, b, np.eye(net.d_y), np.zeros(net.d_y)
    else:
        raise HypothesisError("need min(d_x, d_y) <= min(widths)")
    r = P.shape[0]
    U = dataset.x @ P.T + q
    Mx = float(np.abs(U).max())
    Mx = Mx if Mx > 0 else 1.0
    centers = [_segment_center(lo, hi) for lo, hi, _, _ in segs]
    layers = []
    prev = None
    for i, (w, w_in) in enumerate(net.shapes[:-1]):
        a_i, e_i = centers[i]
        Ai = np.zeros((w, w_in))
        if i == 0:
            Ai[:r] = e_i / (2 * Mx) * P
            bi = np.full(w, a_i)
            bi[:r] += e_i / (2 * Mx) * q
        else:
            a_p, e_p, beta_p, gam_p = prev
            Ai[:r, :r] = e_i / (beta_p * e_p) * np.eye(r)
            bi = a_i - (a_p * beta_p + gam_p) * Ai.sum(1)
        layers.append((Ai, bi))
        prev = (a_i, e_i, segs[i][2], segs[i][3])
    a_L, e_L, beta_L, gam_L = prev
    w_L = net.widths[-1]
    At = np.zeros((net.d_y, w_L))
    At[:, :r] = (2 * Mx) / (beta_L * e_L) * Q
    bt = cst - (a_L * beta_L + gam_L) * At.sum(1)
    layers.append((At, bt))
    alpha = net.pack(layers)

    pre = net.hidden(alpha, dataset.x)
    margin = min(
        float(min((p - lo).min(), (hi - p).min())) for p, (lo, hi, _, _) in zip(pre, segs)
    )

    def check(i, lo, hi):
        slo, shi, beta, gam = segs[i]
        if not (np.all(lo > slo) and np.all(hi < shi)):
            return False, None, None, False
        o1, o2 = beta * lo + gam, beta * hi + gam
        return True, np.minimum(o1, o2), np.maximum(o1, o2), False

    guess = margin / (1 + sum(np.abs(Ai).sum(1).max() for Ai, _ in layers))
    rho = _bisect_rho(lambda rr: _propagate(net, alpha, dataset.x, rr, check), guess)
    V = poly_space_basis(dataset, 1, net.d_y)
    return EmbeddingResult(alpha, rho, V, margin, "affine-embed/" + route, net, dataset)


def constant_embed(net: FeedForwardNN, dataset: Dataset, b, layer: int | None = None) -> EmbeddingResult:
    """All weights zero, the bias of one layer parks its units on a constant piece of the activation."""
    b = np.asarray(b, float).reshape(net.d_y)
    if layer is None:
        cands = [i for i, s in enumerate(net.activations) if s.constant_segment is not None]
        if not cands:
            raise HypothesisError("no activation with a constant segment")
        j = cands[0]
    else:
        j = layer - 1
        if net.activations[j].constant_segment is None:
            raise HypothesisError(f"activation at layer {layer} has no constant segment")
    lo_j, hi_j, _ = net.activations[j].constant_segment
    a_j, _ = _segment_center(lo_j, hi_j)
    layers = []
    for i, (w, w_in) in enumerate(net.shapes):
        bi = np.zeros(w)
        if i == j:
            bi[:] = a_j
        if i == net.L:
            bi = b.copy()
        layers.append((np.zeros((w, w_in)), bi))
    alpha = net.pack(layers)
    margin = min(a_j - lo_j, hi_j - a_j)

    def check(i, lo, hi):
        sig = net.activations[i]
        if i == j:
            ok = bool(np.all(lo > lo_j) and np.all(hi < hi_j))
            return ok, None, None, True
        olo, ohi = sig.interval_image(lo, hi)
        ok = bool(np.all(np.isfinite(olo)) and np.all(np.isfinite(ohi)))
        return ok, olo, ohi, False

    rho = _bisect_rho(lambda rr: _propagate(net, alpha, dataset.x, rr, check), margin / 4)
    V = poly_space_basis(dataset, 0, net.d_y)
    return EmbeddingResult(alpha, rho, V, margin, f"constant-embed/layer{j + 1}", net, dataset)


def freeknot_affine_embed(spline: FreeKnotSpline, dataset: Dataset, a: float, b: float) -> EmbeddingResult:
    """gamma_1 < x_1 < ... < x_n < gamma_2 with beta_j = a gamma_j + b, so the spline is affine on the data."""
    x = dataset.x[:, 0]
    lo, hi = float(x.min()), float(x.max())
    d = hi - lo
    p = spline.p
    gam = np.empty(p)
    gam[0] = lo - d
    gam[1:] = hi + d * np.arange(1, p)
    beta = a * gam + b
    alpha = np.concatenate([beta, gam])
    rho = 0.5 * d * (1 - 1e-9)
    V = poly_space_basis(dataset, 1, 1)
    return EmbeddingResult(alpha, rho, V, d, "freeknot-affine-embed", spline, dataset)


# ---------------------------------------------------------------------------
# bad labels


@dataclass(frozen=True, eq=False)
class BadLabel:
    y_d: YVector
    s: float
    v: YVector
    base: YVector
    theta_cap: float
    theta_source: str
    threshold: float


def s_threshold(theta: float, base_norm: float) -> float:
    if base_norm == 0.0:
        return 0.0
    return math.sqrt(theta / (1.0 - theta)) * base_norm


def bad_label(emb: EmbeddingResult, s_multiplier: float, theta_cap: float | None = None, rng=None, v=None) -> BadLabel:
    """y_d = Psi(alpha_bar) + s v with v orthogonal to the embedding subspace and s beyond the threshold."""
    if not s_multiplier > 1:
        raise ValueError("s_multiplier must exceed 1")
    rng = np.random.default_rng(0) if rng is None else rng
    n = emb.dataset.n
    if theta_cap is None:
        theta, src = 1.0 - 1.0 / n, "cap"
    else:
        theta, src = float(theta_cap), "user"
    if v is None:
        v = complement_direction(emb.subspace, rng)
    base = emb.base
    bn = norm(base)
    thr = s_threshold(theta, bn)
    s = s_multiplier * thr if bn > 0 else float(s_multiplier)
    if not abs(s) > thr:
        raise ValueError("s does not exceed the threshold")
    return BadLabel(base + s * v, float(s), v, base, theta, src, thr)


# ---------------------------------------------------------------------------
# regularized spurious minima


def lp_reg(z, p: float) -> float:
    return float(np.sum(np.abs(z) ** p))


@dataclass(frozen=True, eq=False)
class RegConstruction:
    y_d: YVector
    nu: float
    witness: np.ndarray
    alpha_bar: np.ndarray
    s: float
    v: YVector
    p: float
    C: float
    gap: float
    gamma: float
    radius: float


def _zero_first_layer(net: FeedForwardNN, alpha) -> bool:
    A1, _ = net.unpack(alpha)[0]
    return bool(np.all(A1 == 0))


def reg_spurious_construct(
    net: FeedForwardNN,
    dataset: Dataset,
    alpha_bar,
    p: float,
    C: float,
    rng=None,
    gammas=(1.0, 2.0, 4.0, 8.0, 16.0, 64.0, 1e3, 1e6),
    max_doublings: int = 40,
) -> RegConstruction:
    """Label Psi(alpha_bar) + s v (v orthogonal to degree-2 polynomials), a witness with plain-loss gap
    >= C + 2 and nu = 0.5 / g(witness - alpha_bar), giving a regularized gap >= C + 1.5."""
    rng = np.random.default_rng(0) if rng is None else rng
    if not 1 <= p <= 2:
        raise ValueError("p must lie in [1, 2]")
    if (dataset.d_x + 2) * (dataset.d_x + 1) / 2 >= dataset.n:
        raise HypothesisError("need (d_x+2)(d_x+1)/2 < n")
    if any(not s.twice_differentiable for s in net.activations):
        raise HypothesisError("activations must be twice differentiable")
    alpha_bar = net.check_params(alpha_bar)
    if not _zero_first_layer(net, alpha_bar):
        raise HypothesisError("alpha_bar must have a zero first weight matrix")
    V2 = poly_space_basis(dataset, 2, net.d_y)
    v = complement_direction(V2, rng)
    base = eval_batch(net, alpha_bar, dataset)
    wrng_seed = int(rng.integers(2**32))
    s = 1.0
    for _ in range(max_doublings):
        y = base + s * v
        lb = loss(net, alpha_bar, dataset, y)
        for g in gammas:
            w = expressiveness_witness(net, dataset, y, gamma=g, rng=np.random.default_rng(wrng_seed))
            if lb - w.loss >= C + 2:
                nu = 0.5 / max(lp_reg(w.alpha - alpha_bar, p), 1e-300)
                gap = lb - (w.loss + nu * lp_reg(w.alpha - alpha_bar, p))
                radius = _reg_radius(net, dataset, alpha_bar, y, nu, p, rng)
                return RegConstruction(y, nu, w.alpha, alpha_bar, s, v, p, C, gap, g, radius)
        s *= 2
    raise RuntimeError("witness search failed")


def _reg_radius(net, dataset, alpha_bar, y, nu, p, rng, probes: int = 1024, shells: int = 8):
    """Half the largest power-of-two radius (<= 1) on which sampled regularized growth is positive.

    Probes cover the whole ball (shells r, r/2, ..., plus uniform-in-ball points), not only the sphere,
    since third-order terms can win at intermediate radii.
    """
    base = loss(net, alpha_bar, dataset, y)
    m = alpha_bar.size

    def ok(r):
        for k in range(probes):
            h = rng.standard_normal(m)
            if k % 2 == 0:
                rad = r * 0.5 ** (k // 2 % shells)
            else:
                rad = r * rng.random() ** (1.0 / m)
            h *= rad / np.linalg.norm(h)
            if not loss(net, alpha_bar + h, dataset, y) + nu * lp_reg(h, p) - base > 0:
                return False
        return True

    r = 1.0
    for _ in range(60):
        if ok(r):
            return r / 2
        r /= 2
    return r
