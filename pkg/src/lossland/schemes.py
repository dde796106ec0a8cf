"""Approximation schemes psi(alpha, x), their batched evaluation Psi(alpha, x_d), the squared loss,
reverse-mode gradients and a central-difference oracle.

Flat parameter order for networks is frozen: A_1 (row-major), b_1, A_2, b_2, ..., A_{L+1}, b_{L+1}.
Free-knot splines use alpha = (beta_1..beta_p, gamma_1..gamma_p).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .yspace import YVector, norm

KINK_TOL = 1e-9


# ---------------------------------------------------------------------------
# activations


def _sig(s):
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(s):
    s = np.asarray(s, dtype=float)
    return np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s)))


def _heaviside(s, c):
    return np.where(s > 0, 1.0, np.where(s < 0, 0.0, c))


def _toy(s):
    return np.minimum(0.0, np.abs(s + 1.0) - 1.0) + np.maximum(0.0, 1.0 - np.abs(s - 1.0))


def _toy_d(s):
    # right derivative
    return np.select([s < -2, s < -1, s < 1, s < 2], [0.0, -1.0, 1.0, -1.0], 0.0)


def _sqnl(s):
    return np.select(
        [s <= -2, s <= 0, s <= 2], [-1.0, s + s * s / 4, s - s * s / 4], 1.0
    )


def _sqnl_d(s):
    return np.select([s <= -2, s <= 0, s <= 2], [0.0, 1 + s / 2, 1 - s / 2], 0.0)


def _sqnl_dd(s):
    return np.select([s <= -2, s <= 0, s <= 2], [0.0, 0.5, -0.5], 0.0)


def _leaky_slopes(c):
    return max(c, 0.0), 1.0 + min(c, 0.0)


SIGMOID_TYPE = ("heaviside", "sigmoid", "tanh", "arctan", "softsign", "isru", "softclip", "sqnl")
RELU_TYPE = ("relu", "leaky_relu", "softplus", "bent_identity", "silu", "isrlu", "elu")
ALL_ACTIVATIONS = SIGMOID_TYPE + RELU_TYPE + ("toy", "identity")
_WITH_C = ("heaviside", "isru", "softclip", "leaky_relu", "isrlu", "elu")


@dataclass(frozen=True)
class Activation:
    """Elementwise activation with the descriptors the constructions rely on.

    c is only meaningful for heaviside (value at 0), isru, softclip, leaky_relu, isrlu and elu.
    """

    name: str
    c: float = 1.0

    def __post_init__(self):
        if self.name not in ALL_ACTIVATIONS:
            raise ValueError(f"unknown activation {self.name!r}")
        if self.name in ("isru", "softclip", "isrlu") and not self.c > 0:
            raise ValueError(f"{self.name} needs c > 0")
        if self.name == "leaky_relu" and abs(self.c) == 1.0:
            raise ValueError("leaky_relu needs |c| != 1")

    # -- values and derivatives ------------------------------------------

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        n, c = self.name, self.c
        if n == "identity":
            return s.copy()
        if n == "heaviside":
            return _heaviside(s, c)
        if n == "sigmoid":
            return _sig(s)
        if n == "tanh":
            return np.tanh(s)
        if n == "arctan":
            return np.arctan(s)
        if n == "softsign":
            return s / (1 + np.abs(s))
        if n == "isru":
            return s / np.sqrt(1 + c * s * s)
        if n == "softclip":
            return (_softplus(c * s) - _softplus(c * (s - 1))) / c
        if n == "sqnl":
            return _sqnl(s)
        if n == "relu":
            return np.maximum(s, 0.0)
        if n == "leaky_relu":
            return np.maximum(s, 0.0) + np.minimum(0.0, c * s)
        if n == "softplus":
            return _softplus(s)
        if n == "bent_identity":
            return 0.5 * np.sqrt(s * s + 1) - 0.5 + s
        if n == "silu":
            return s * _sig(s)
        if n == "isrlu":
            return np.where(s < 0, s / np.sqrt(1 + c * s * s), s)
        if n == "elu":
            return np.where(s < 0, c * np.expm1(np.minimum(s, 0.0)), s)
        if n == "toy":
            return _toy(s)
        raise AssertionError(n)

    def deriv(self, s):
        """First derivative; right derivative at kinks."""
        s = np.asarray(s, dtype=float)
        n, c = self.name, self.c
        if n == "identity":
            return np.ones_like(s)
        if n == "heaviside":
            return np.zeros_like(s)
        if n == "sigmoid":
            f = _sig(s)
            return f * (1 - f)
        if n == "tanh":
            t = np.tanh(s)
            return 1 - t * t
        if n == "arctan":
            return 1 / (1 + s * s)
        if n == "softsign":
            return 1 / (1 + np.abs(s)) ** 2
        if n == "isru":
            return (1 + c * s * s) ** -1.5
        if n == "softclip":
            return _sig(c * s) - _sig(c * (s - 1))
        if n == "sqnl":
            return _sqnl_d(s)
        if n == "relu":
            return np.where(s >= 0, 1.0, 0.0)
        if n == "leaky_relu":
            lo, hi = _leaky_slopes(c)
            return np.where(s >= 0, hi, lo)
        if n == "softplus":
            return _sig(s)
        if n == "bent_identity":
            return s / (2 * np.sqrt(s * s + 1)) + 1
        if n == "silu":
            f = _sig(s)
            return f + s * f * (1 - f)
        if n == "isrlu":
            return np.where(s < 0, (1 + c * s * s) ** -1.5, 1.0)
        if n == "elu":
            return np.where(s < 0, c * np.exp(np.minimum(s, 0.0)), 1.0)
        if n == "toy":
            return _toy_d(s)
        raise AssertionError(n)

    def deriv2(self, s):
        s = np.asarray(s, dtype=float)
        n, c = self.name, self.c
        if n in ("identity", "heaviside", "relu", "leaky_relu", "toy"):
            return np.zeros_like(s)
        if n == "sigmoid":
            f = _sig(s)
            return f * (1 - f) * (1 - 2 * f)
        if n == "tanh":
            t = np.tanh(s)
            return -2 * t * (1 - t * t)
        if n == "arctan":
            return -2 * s / (1 + s * s) ** 2
        if n == "softsign":
            return -2 * np.sign(s) / (1 + np.abs(s)) ** 3
        if n == "isru":
            return -3 * c * s * (1 + c * s * s) ** -2.5
        if n == "softclip":
            a, b = _sig(c * s), _sig(c * (s - 1))
            return c * (a * (1 - a) - b * (1 - b))
        if n == "sqnl":
            return _sqnl_dd(s)
        if n == "softplus":
            f = _sig(s)
            return f * (1 - f)
        if n == "bent_identity":
            return 0.5 * (s * s + 1) ** -1.5
        if n == "silu":
            f = _sig(s)
            return f * (1 - f) * (2 + s * (1 - 2 * f))
        if n == "isrlu":
            return np.where(s < 0, -3 * c * s * (1 + c * s * s) ** -2.5, 0.0)
        if n == "elu":
            return np.where(s < 0, c * np.exp(np.minimum(s, 0.0)), 0.0)
        raise AssertionError(n)

    # -- descriptors -----------------------------------------------------

    @property
    def kinks(self) -> tuple:
        """Points where the first derivative jumps (or the function itself, for heaviside)."""
        n = self.name
        if n in ("heaviside", "relu", "leaky_relu"):
            return (0.0,)
        if n == "elu" and self.c != 1.0:
            return (0.0,)
        if n == "toy":
            return (-2.0, -1.0, 1.0, 2.0)
        return ()

    @property
    def twice_differentiable(self) -> bool:
        return self.name in (
            "identity", "sigmoid", "tanh", "arctan", "isru", "softclip",
            "softplus", "bent_identity", "silu", "isrlu",
        )

    @property
    def smooth(self) -> bool:
        return not self.kinks and self.name != "heaviside"

    @property
    def kind(self) -> str:
        if self.name in SIGMOID_TYPE:
            return "sigmoid"
        if self.name in RELU_TYPE:
            return "relu"
        return "other"

    @property
    def limits(self):
        """(sigma(-inf), sigma(+inf)) for sigmoid-type activations, else None."""
        n, c = self.name, self.c
        table = {
            "heaviside": (0.0, 1.0), "sigmoid": (0.0, 1.0), "tanh": (-1.0, 1.0),
            "arctan": (-math.pi / 2, math.pi / 2), "softsign": (-1.0, 1.0),
            "softclip": (0.0, 1.0), "sqnl": (-1.0, 1.0),
        }
        if n == "isru":
            return (-1 / math.sqrt(c), 1 / math.sqrt(c))
        return table.get(n)

    @property
    def ray_slopes(self):
        """(lim sigma(g s)/g for s=-1 negated sign convention) i.e. slopes (sigma^-, sigma^+) of the
        positively homogeneous limit; also the limits of s -> sigma(s) - sigma(s-1). None if not ReLU-type."""
        n = self.name
        if n == "leaky_relu":
            return _leaky_slopes(self.c)
        if n == "bent_identity":
            return (0.5, 1.5)
        if n in ("relu", "softplus", "silu", "isrlu", "elu"):
            return (0.0, 1.0)
        return None

    @property
    def piecewise_linear(self) -> bool:
        return self.name in ("relu", "leaky_relu")

    @property
    def affine_segment(self):
        """(lo, hi, slope, intercept) of an open interval where sigma is affine with nonzero slope."""
        n = self.name
        if n in ("relu", "isrlu", "elu", "identity"):
            return (0.0, math.inf, 1.0, 0.0) if n != "identity" else (-math.inf, math.inf, 1.0, 0.0)
        if n == "leaky_relu":
            return (0.0, math.inf, _leaky_slopes(self.c)[1], 0.0)
        if n == "toy":
            return (-1.0, 1.0, 1.0, 0.0)
        return None

    @property
    def constant_segment(self):
        """(lo, hi, value) of an open interval where sigma is constant."""
        n, c = self.name, self.c
        if n in ("heaviside", "relu"):
            return (-math.inf, 0.0, 0.0)
        if n == "leaky_relu" and c <= 0:
            return (-math.inf, 0.0, 0.0)
        if n == "elu" and c == 0:
            return (-math.inf, 0.0, 0.0)
        if n == "sqnl":
            return (2.0, math.inf, 1.0)
        if n == "toy":
            return (2.0, math.inf, 0.0)
        return None

    @property
    def sat_tol(self) -> float:
        return 1e-3 if self.name in ("arctan", "softsign") else 1e-6

    @property
    def lipschitz(self) -> float:
        n, c = self.name, self.c
        if n == "heaviside":
            return math.inf
        if n == "sigmoid":
            return 0.25
        if n == "bent_identity":
            return 1.5
        if n == "silu":
            return 1.1
        if n == "leaky_relu":
            return max(abs(v) for v in _leaky_slopes(c))
        if n == "elu":
            return max(1.0, abs(c))
        return 1.0

    @property
    def monotone(self) -> bool:
        n, c = self.name, self.c
        if n in ("silu", "toy"):
            return False
        if n == "elu":
            return c >= 0
        if n == "heaviside":
            return 0.0 <= c <= 1.0
        return True

    def interval_image(self, lo, hi):
        """Enclosure of sigma([lo, hi]) (elementwise arrays)."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        if self.name == "heaviside":
            vals = [self(lo), self(hi)]
            has0 = (lo <= 0) & (hi >= 0)
            out_lo = np.minimum(*vals)
            out_hi = np.maximum(*vals)
            out_lo = np.where(has0, np.minimum(out_lo, self.c), out_lo)
            out_hi = np.where(has0, np.maximum(out_hi, self.c), out_hi)
            return out_lo, out_hi
        if self.monotone:
            return self(lo), self(hi)
        mid, rad = (lo + hi) / 2, (hi - lo) / 2
        f = self(mid)
        return f - self.lipschitz * rad, f + self.lipschitz * rad

    def to_dict(self):
        d = {"name": self.name}
        if self.name in _WITH_C:
            d["c"] = self.c
        return d

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        extra = set(d) - {"name", "c"}
        if extra:
            raise ValueError(f"unknown activation keys {sorted(extra)}")
        return cls(d["name"], float(d.get("c", 1.0)))


def act(name: str, c: float = 1.0) -> Activation:
    return Activation(name, c)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    labels: YVector | None = None

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("need at least two inputs")
        diff = np.abs(x[:, None, :] - x[None, :, :]).max(-1)
        np.fill_diagonal(diff, np.inf)
        if diff.min() <= 0:
            raise ValueError("inputs must be pairwise distinct")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        if self.labels is not None and self.labels.n != x.shape[0]:
            raise ValueError("label count does not match inputs")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    def with_labels(self, y: YVector) -> "Dataset":
        return Dataset(self.x, y)


# ---------------------------------------------------------------------------
# schemes


@dataclass(frozen=True)
class GradResult:
    grad: np.ndarray
    kinks: tuple = ()

    @property
    def smooth(self) -> bool:
        return not self.kinks


class Scheme:
    d_x: int
    d_y: int
    conic: bool = True
    variant: str = ""

    @property
    def m(self) -> int:
        raise NotImplementedError

    def check_params(self, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=float).reshape(-1)
        if a.shape != (self.m,):
            raise ValueError(f"expected {self.m} parameters, got {a.size}")
        return a

    def in_domain(self, alpha) -> bool:
        return True

    def forward(self, alpha, X) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, alpha, X, cot) -> GradResult:
        """Gradient of sum_k <cot_k, psi(alpha, x_k)> w.r.t. alpha."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ToyLightning(Scheme):
    """psi(alpha, x) = sigma(a1 x + a2) with the lightning-shaped sigma; with conic=True an extra
    amplitude a3 multiplies the output, which makes the scheme a cone."""

    conic: bool = False
    d_x: int = 1
    d_y: int = 1
    variant: str = "toy"

    @property
    def m(self):
        return 3 if self.conic else 2

    def forward(self, alpha, X):
        a = self.check_params(alpha)
        X = np.asarray(X, float).reshape(-1, 1)
        out = _toy(a[0] * X + a[1])
        return a[2] * out if self.conic else out

    def vjp(self, alpha, X, cot):
        a = self.check_params(alpha)
        X = np.asarray(X, float).reshape(-1, 1)
        cot = np.asarray(cot, float).reshape(-1, 1)
        u = a[0] * X + a[1]
        amp = a[2] if self.conic else 1.0
        g = amp * _toy_d(u) * cot
        grad = [float((g * X).sum()), float(g.sum())]
        if self.conic:
            grad.append(float((_toy(u) * cot).sum()))
        near = np.abs(u[:, :, None] - np.array([-2.0, -1.0, 1.0, 2.0])).min(-1) <= KINK_TOL
        kinks = tuple(("sample", int(k)) for k in np.nonzero(near[:, 0])[0])
        return GradResult(np.array(grad), kinks)

    def to_dict(self):
        return {"variant": "toy", "conic": self.conic}


@dataclass(frozen=True)
class Polynomial(Scheme):
    """Linear scheme psi(alpha, x) = sum_j alpha_j x^j on scalar inputs."""

    degree: int = 1
    d_x: int = 1
    d_y: int = 1
    variant: str = "polynomial"

    @property
    def m(self):
        return self.degree + 1

    def forward(self, alpha, X):
        a = self.check_params(alpha)
        X = np.asarray(X, float).reshape(-1)
        V = np.vander(X, self.degree + 1, increasing=True)
        return (V @ a)[:, None]

    def vjp(self, alpha, X, cot):
        self.check_params(alpha)
        X = np.asarray(X, float).reshape(-1)
        V = np.vander(X, self.degree + 1, increasing=True)
        return GradResult(V.T @ np.asarray(cot, float).reshape(-1))

    def to_dict(self):
        return {"variant": "polynomial", "degree": self.degree}


class KnotOrderError(ValueError):
    pass


@dataclass(frozen=True)
class FreeKnotSpline(Scheme):
    """Linear spline with p free knots gamma and values beta, constant outside [gamma_1, gamma_p]."""

    p: int = 3
    d_x: int = 1
    d_y: int = 1
    variant: str = "free_knot"

    def __post_init__(self):
        if self.p < 3:
            raise ValueError("free-knot splines need p >= 3")

    @property
    def m(self):
        return 2 * self.p

    def split(self, alpha):
        a = self.check_params(alpha)
        return a[: self.p], a[self.p :]

    def in_domain(self, alpha) -> bool:
        _, g = self.split(alpha)
        return bool(np.all(np.diff(g) > 0))

    def _locate(self, g, X):
        # interval j means gamma_j < x <= gamma_{j+1} (0-based j); -1 left of gamma_1, p-1 right of gamma_p
        return np.searchsorted(g, X, side="left") - 1

    def forward(self, alpha, X):
        beta, g = self.split(alpha)
        if not np.all(np.diff(g) > 0):
            raise KnotOrderError("knots must be strictly increasing")
        X = np.asarray(X, float).reshape(-1)
        j = self._locate(g, X)
        out = np.empty_like(X)
        left = j < 0
        right = j >= self.p - 1
        mid = ~(left | right)
        out[left] = beta[0]
        out[right] = beta[-1]
        jm = j[mid]
        t = (X[mid] - g[jm]) / (g[jm + 1] - g[jm])
        out[mid] = beta[jm] + (beta[jm + 1] - beta[jm]) * t
        return out[:, None]

    def vjp(self, alpha, X, cot):
        beta, g = self.split(alpha)
        if not np.all(np.diff(g) > 0):
            raise KnotOrderError("knots must be strictly increasing")
        X = np.asarray(X, float).reshape(-1)
        cot = np.asarray(cot, float).reshape(-1)
        p = self.p
        gb = np.zeros(p)
        gg = np.zeros(p)
        j = self._locate(g, X)
        for k, (x, jk, w) in enumerate(zip(X, j, cot)):
            if jk < 0:
                gb[0] += w
            elif jk >= p - 1:
                gb[-1] += w
            else:
                h = g[jk + 1] - g[jk]
                t = (x - g[jk]) / h
                d = beta[jk + 1] - beta[jk]
                gb[jk] += w * (1 - t)
                gb[jk + 1] += w * t
                gg[jk] += w * d * (t - 1) / h
                gg[jk + 1] += w * d * (-t) / h
        near = np.abs(X[:, None] - g[None, :]) <= KINK_TOL * (1 + np.abs(g[None, :]))
        kinks = tuple(("knot", int(k), int(i)) for k, i in zip(*np.nonzero(near)))
        return GradResult(np.concatenate([gb, gg]), kinks)

    def to_dict(self):
        return {"variant": "free_knot", "p": self.p}


def _layer_shapes(d_x, widths, d_y):
    dims = [d_x, *widths, d_y]
    return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass(frozen=True)
class FeedForwardNN(Scheme):
    """phi_{L+1} o ... o phi_1 with phi_i(z) = sigma_i(A_i z + b_i) and an affine top layer."""

    d_x: int
    widths: tuple
    d_y: int
    activations: tuple
    variant: str = "ffnn"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        acts = self.activations
        if isinstance(acts, Activation) or isinstance(acts, str):
            acts = [acts] * len(self.widths)
        acts = tuple(a if isinstance(a, Activation) else Activation(a) for a in acts)
        object.__setattr__(self, "activations", acts)
        if len(self.widths) < 1:
            raise ValueError("need at least one hidden layer")
        if len(acts) != len(self.widths):
            raise ValueError("one activation per hidden layer")
        if min(self.widths) < 1 or self.d_x < 1 or self.d_y < 1:
            raise ValueError("dimensions must be positive")

    @property
    def L(self) -> int:
        return len(self.widths)

    @property
    def shapes(self):
        return _layer_shapes(self.d_x, self.widths, self.d_y)

    @property
    def m(self):
        return sum(r * (c + 1) for r, c in self.shapes)

    def unpack(self, alpha):
        a = self.check_params(alpha)
        out, pos = [], 0
        for r, c in self.shapes:
            A = a[pos : pos + r * c].reshape(r, c)
            pos += r * c
            b = a[pos : pos + r]
            pos += r
            out.append((A, b))
        return out

    def pack(self, layers) -> np.ndarray:
        parts = []
        for (A, b), (r, c) in zip(layers, self.shapes):
            A = np.asarray(A, float)
            b = np.asarray(b, float).reshape(-1)
            if A.shape != (r, c) or b.shape != (r,):
                raise ValueError(f"layer shape mismatch: {A.shape}, {b.shape} vs {(r, c)}")
            parts += [A.reshape(-1), b]
        return np.concatenate(parts)

    def offsets(self):
        """Start index of (A_i, b_i) blocks in the flat vector, 0-based layer index."""
        out, pos = [], 0
        for r, c in self.shapes:
            out.append((pos, pos + r * c))
            pos += r * c + r
        return out

    def _skip(self, i, Z):
        return 0.0

    def _forward_cache(self, alpha, X):
        X = np.asarray(X, float).reshape(-1, self.d_x)
        layers = self.unpack(alpha)
        Z = X
        cache = []
        for i, (A, b) in enumerate(layers[:-1]):
            pre = Z @ A.T + b
            nxt = self.activations[i](pre) + self._skip(i, Z)
            cache.append((Z, pre))
            Z = nxt
        A, b = layers[-1]
        return Z @ A.T + b, cache, Z

    def forward(self, alpha, X):
        return self._forward_cache(alpha, X)[0]

    def hidden(self, alpha, X):
        """Pre-activations of every hidden layer (list of (n, w_i) arrays)."""
        return [pre for _, pre in self._forward_cache(alpha, X)[1]]

    def vjp(self, alpha, X, cot):
        layers = self.unpack(alpha)
        _, cache, Ztop = self._forward_cache(alpha, X)
        G = np.asarray(cot, float).reshape(-1, self.d_y)
        grads = [None] * len(layers)
        A, _ = layers[-1]
        grads[-1] = (G.T @ Ztop, G.sum(0))
        dZ = G @ A
        kinks = []
        for i in range(self.L - 1, -1, -1):
            Zin, pre = cache[i]
            sig = self.activations[i]
            for kp in sig.kinks:
                hit = np.abs(pre - kp) <= KINK_TOL
                kinks += [("layer", i + 1, int(k), int(j)) for k, j in zip(*np.nonzero(hit))]
            dpre = dZ * sig.deriv(pre)
            A, _ = layers[i]
            grads[i] = (dpre.T @ Zin, dpre.sum(0))
            dZ = dpre @ A + self._skip_vjp(i, dZ)
        flat = np.concatenate([np.concatenate([gA.reshape(-1), gb]) for gA, gb in grads])
        return GradResult(flat, tuple(sorted(kinks)))

    def _skip_vjp(self, i, dZ):
        return 0.0

    def to_dict(self):
        return {
            "variant": "ffnn",
            "d_x": self.d_x,
            "widths": list(self.widths),
            "d_y": self.d_y,
            "activations": [a.to_dict() for a in self.activations],
        }


@dataclass(frozen=True)
class ResNet(FeedForwardNN):
    """Hidden layers xi_i(z) = E_i z + sigma_i(A_i z + b_i) with fixed skip matrices E_i."""

    skips: tuple = ()
    variant: str = "resnet"

    def __post_init__(self):
        super().__post_init__()
        skips = tuple(np.array(E, dtype=float) for E in self.skips)
        if len(skips) != self.L:
            raise ValueError("one skip matrix per hidden layer")
        for E, (r, c) in zip(skips, self.shapes[:-1]):
            if E.shape != (r, c):
                raise ValueError(f"skip matrix shape {E.shape} != {(r, c)}")
            E.setflags(write=False)
        object.__setattr__(self, "skips", skips)

    def __hash__(self):
        return hash((self.d_x, self.widths, self.d_y, self.activations))

    def __eq__(self, other):
        return (
            isinstance(other, ResNet)
            and self.to_dict() == other.to_dict()
        )

    def _skip(self, i, Z):
        return Z @ self.skips[i].T

    def _skip_vjp(self, i, dZ):
        return dZ @ self.skips[i]

    def to_dict(self):
        d = super().to_dict()
        d["variant"] = "resnet"
        d["skips"] = [E.tolist() for E in self.skips]
        return d


def scheme_from_dict(d: dict) -> Scheme:
    d = dict(d)
    v = d.pop("variant")
    allowed = {
        "toy": {"conic"},
        "polynomial": {"degree"},
        "free_knot": {"p"},
        "ffnn": {"d_x", "widths", "d_y", "activations"},
        "resnet": {"d_x", "widths", "d_y", "activations", "skips"},
    }
    if v not in allowed:
        raise ValueError(f"unknown scheme variant {v!r}")
    extra = set(d) - allowed[v]
    if extra:
        raise ValueError(f"unknown scheme keys {sorted(extra)}")
    if v == "toy":
        return ToyLightning(conic=bool(d.get("conic", False)))
    if v == "polynomial":
        return Polynomial(degree=int(d.get("degree", 1)))
    if v == "free_knot":
        return FreeKnotSpline(p=int(d["p"]))
    if isinstance(d["activations"], (str, dict)):
        acts = Activation.from_dict(d["activations"])
    else:
        acts = tuple(Activation.from_dict(a) for a in d["activations"])
    if v == "ffnn":
        return FeedForwardNN(int(d["d_x"]), tuple(d["widths"]), int(d["d_y"]), acts)
    return ResNet(int(d["d_x"]), tuple(d["widths"]), int(d["d_y"]), acts, skips=tuple(d["skips"]))


# ---------------------------------------------------------------------------
# evaluation, loss and gradients


def eval_point(scheme: Scheme, alpha, x) -> np.ndarray:
    return scheme.forward(alpha, np.asarray(x, float).reshape(1, -1))[0]


def eval_batch(scheme: Scheme, alpha, dataset: Dataset) -> YVector:
    return YVector(scheme.forward(alpha, dataset.x))


def loss(scheme: Scheme, alpha, dataset: Dataset, y_d: YVector | None = None) -> float:
    y = dataset.labels if y_d is None else y_d
    r = eval_batch(scheme, alpha, dataset) - y
    return norm(r) ** 2


def grad_loss(scheme: Scheme, alpha, dataset: Dataset, y_d: YVector | None = None) -> GradResult:
    y = dataset.labels if y_d is None else y_d
    out = scheme.forward(alpha, dataset.x)
    cot = (out - y.blocks) / dataset.n
    return scheme.vjp(alpha, dataset.x, cot)


def fd_grad(scheme: Scheme, alpha, dataset: Dataset, y_d: YVector | None = None, h: float | None = None):
    """Central differences, step h*(1+|alpha_i|) (default h = 1e-6)."""
    a = scheme.check_params(alpha).copy()
    hh = 1e-6 if h is None else h
    g = np.zeros_like(a)
    for i in range(a.size):
        step = hh * (1 + abs(a[i]))
        ap, am = a.copy(), a.copy()
        ap[i] += step
        am[i] -= step
        g[i] = (loss(scheme, ap, dataset, y_d) - loss(scheme, am, dataset, y_d)) / (2 * step)
    return g


def jacobian(scheme: Scheme, alpha, X) -> np.ndarray:
    """d Psi / d alpha as an (n*d_y, m) matrix (row order = flattened (n, d_y) blocks)."""
    X = np.asarray(X, float)
    n = X.shape[0] if X.ndim > 1 else X.size
    J = np.zeros((n * scheme.d_y, scheme.m))
    for r in range(n * scheme.d_y):
        cot = np.zeros(n * scheme.d_y)
        cot[r] = 1.0
        J[r] = scheme.vjp(alpha, X, cot.reshape(n, scheme.d_y)).grad
    return J


def scale_top(scheme: Scheme, alpha, s: float) -> np.ndarray:
    """Parameter whose image is s times the image of alpha (conic schemes only)."""
    a = scheme.check_params(alpha).copy()
    if isinstance(scheme, FeedForwardNN):
        start = scheme.offsets()[-1][0]
        a[start:] *= s
        return a
    if isinstance(scheme, FreeKnotSpline):
        a[: scheme.p] *= s
        return a
    if isinstance(scheme, Polynomial):
        return a * s
    if isinstance(scheme, ToyLightning) and scheme.conic:
        a[2] *= s
        return a
    raise ValueError("scheme is not conic")


def random_params(scheme: Scheme, rng, scale: float = 1.0) -> np.ndarray:
    a = scale * rng.standard_normal(scheme.m)
    if isinstance(scheme, FreeKnotSpline):
        a[scheme.p :] = np.sort(a[scheme.p :])
        while not scheme.in_domain(a):
            a[scheme.p :] = np.sort(scale * rng.standard_normal(scheme.p))
    return a


def single_sample_fit_cap(scheme: Scheme, n: int) -> float:
    """Certified upper bound for the worst-case squared error on unit labels.

    1 - 1/n for conic schemes with an exact (or limit) single-sample fit, 1 otherwise.
    """
    from .constructions import supports_single_sample_fit

    if scheme.conic and supports_single_sample_fit(scheme):
        return 1.0 - 1.0 / n
    return 1.0
