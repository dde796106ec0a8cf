"""Label space Y = (R^{d_y})^n with the sample-averaged inner product.

(y, z)_Y = 1/(2n) * sum_k <y_k, z_k>. Everything else in the package measures
distances with this product, so the helpers here are the only place where the
1/(2n) weight appears explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DROP_TOL = 1e-9
TINY = 1e-300


class EmptyBasisError(ValueError):
    pass


class NoComplementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class YVector:
    """n blocks of length d_y stored as an (n, d_y) float array."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        if b.ndim != 2:
            raise ValueError("blocks must be (n, d_y)")
        if b.shape[0] < 2 or b.shape[1] < 1:
            raise ValueError(f"need n >= 2 and d_y >= 1, got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def d_y(self) -> int:
        return self.blocks.shape[1]

    @property
    def shape(self):
        return self.blocks.shape

    @property
    def flat(self) -> np.ndarray:
        return self.blocks.reshape(-1)

    @classmethod
    def from_flat(cls, flat, n: int, d_y: int = 1) -> "YVector":
        return cls(np.asarray(flat, dtype=float).reshape(n, d_y))

    @classmethod
    def zeros(cls, n: int, d_y: int = 1) -> "YVector":
        return cls(np.zeros((n, d_y)))

    def norm(self) -> float:
        return norm(self)

    def _check(self, other):
        if not isinstance(other, YVector) or other.shape != self.shape:
            raise ValueError("dimension mismatch")

    def __add__(self, other):
        self._check(other)
        return YVector(self.blocks + other.blocks)

    def __sub__(self, other):
        self._check(other)
        return YVector(self.blocks - other.blocks)

    def __mul__(self, s):
        return YVector(float(s) * self.blocks)

    __rmul__ = __mul__

    def __neg__(self):
        return YVector(-self.blocks)

    def __truediv__(self, s):
        return YVector(self.blocks / float(s))

    def allclose(self, other, atol=1e-12) -> bool:
        return self.shape == other.shape and norm(self - other) <= atol

    def tolist(self):
        return self.blocks.tolist()


def inner(y: YVector, z: YVector) -> float:
    if y.shape != z.shape:
        raise ValueError(f"dimension mismatch: {y.shape} vs {z.shape}")
    return float(np.dot(y.flat, z.flat)) / (2 * y.n)


def norm(y: YVector) -> float:
    return float(np.sqrt(inner(y, y)))


def random_unit(n: int, d_y: int, rng: np.random.Generator) -> YVector:
    """Uniform direction on the unit sphere of Y."""
    g = rng.standard_normal((n, d_y))
    y = YVector(g)
    return y / norm(y)


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """Orthonormal basis w.r.t. (.,.)_Y. Carries (n, d_y) so an empty basis still knows its ambient space."""

    vectors: tuple
    n: int
    d_y: int
    _mat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vecs = tuple(self.vectors)
        object.__setattr__(self, "vectors", vecs)
        if vecs:
            mat = np.stack([v.flat for v in vecs])
        else:
            mat = np.zeros((0, self.n * self.d_y))
        mat.setflags(write=False)
        object.__setattr__(self, "_mat", mat)

    @property
    def dim(self) -> int:
        return len(self.vectors)

    @property
    def ambient_dim(self) -> int:
        return self.n * self.d_y

    @property
    def matrix(self) -> np.ndarray:
        # rows are flat basis vectors
        return self._mat

    def gram(self) -> np.ndarray:
        return self._mat @ self._mat.T / (2 * self.n)

    def coefficients(self, y: YVector) -> np.ndarray:
        return self._mat @ y.flat / (2 * self.n)

    def project(self, y: YVector) -> YVector:
        if self.dim == 0:
            return YVector.zeros(self.n, self.d_y)
        # two passes keep the projector accurate when y is huge relative to its V^perp part
        c = self.coefficients(y)
        p = c @ self._mat
        r = y.flat - p
        p = p + (self._mat @ r / (2 * self.n)) @ self._mat
        return YVector.from_flat(p, self.n, self.d_y)

    def residual(self, y: YVector) -> YVector:
        return y - self.project(y)

    def contains(self, y: YVector, tol=1e-9) -> bool:
        return norm(self.residual(y)) <= tol


def orthonormalize(raw, drop_tol: float = DROP_TOL) -> SubspaceBasis:
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Vectors whose residual falls below drop_tol times the largest input norm are dropped.
    """
    raw = list(raw)
    if not raw:
        raise ValueError("orthonormalize needs at least one vector")
    n, d_y = raw[0].shape
    for v in raw:
        if v.shape != (n, d_y):
            raise ValueError("dimension mismatch")
    scale = max(norm(v) for v in raw)
    if scale == 0.0:
        raise EmptyBasisError("all input vectors are zero")
    basis = []
    for v in raw:
        w = v.flat.copy()
        for _ in range(2):
            for b in basis:
                w -= (np.dot(b, w) / (2 * n)) * b
        nw = np.sqrt(np.dot(w, w) / (2 * n))
        if nw < drop_tol * scale:
            continue
        basis.append(w / nw)
    if not basis:
        raise EmptyBasisError("all input vectors are degenerate")
    return SubspaceBasis(tuple(YVector.from_flat(b, n, d_y) for b in basis), n, d_y)


def empty_basis(n: int, d_y: int = 1) -> SubspaceBasis:
    return SubspaceBasis((), n, d_y)


def complement_direction(V: SubspaceBasis, rng: np.random.Generator) -> YVector:
    """Random unit vector orthogonal to V."""
    if V.dim >= V.ambient_dim:
        raise NoComplementError("V spans Y")
    for _ in range(100):
        g = YVector(rng.standard_normal((V.n, V.d_y)))
        r = V.residual(g)
        r = V.residual(r)
        nr = norm(r)
        if nr > 1e-6 * norm(g):
            return r / nr
    raise NoComplementError("could not draw a complement direction")


@dataclass(frozen=True, eq=False)
class ConeDecomposition:
    y1: YVector
    y2: YVector
    ratio: float


def decompose(y: YVector, V: SubspaceBasis) -> ConeDecomposition:
    y1 = V.project(y)
    y2 = y - y1
    return ConeDecomposition(y1, y2, norm(y2) / max(norm(y1), TINY))


@dataclass(frozen=True)
class ConeResult:
    member: bool
    decomposition: ConeDecomposition
    threshold_ratio: float


def cone_K_test(y_d: YVector, V: SubspaceBasis, theta: float) -> ConeResult:
    """Membership in K = {||y2|| > sqrt(theta/(1-theta)) ||y1||}, y1 in V, y2 in V-perp."""
    if not 0.0 <= theta < 1.0:
        raise ValueError("theta must lie in [0, 1)")
    dec = decompose(y_d, V)
    t = np.sqrt(theta / (1.0 - theta))
    n1, n2 = norm(dec.y1), norm(dec.y2)
    if n1 <= TINY:
        member = n2 > 0.0
    else:
        member = bool(n2 > t * n1)
    return ConeResult(member, dec, float(t))


# -- Jung-type diameter bound -------------------------------------------------


def jung_factor(d: int) -> float:
    return float(np.sqrt((2.0 * d + 2.0) / d))


def diameter(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff**2).sum(-1).max()))


def antipodal_set(d: int, r: float, num_pairs: int, rng, center=None) -> np.ndarray:
    """Points center +- r*u with u uniform on S^{d-1}; the center is then in the hull."""
    u = rng.standard_normal((num_pairs, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    c = np.zeros(d) if center is None else np.asarray(center, float)
    return np.concatenate([c + r * u, c - r * u])


def regular_simplex(d: int, r: float, rng=None) -> np.ndarray:
    """d+1 vertices of a regular simplex inscribed in the radius-r sphere, optionally rotated."""
    e = np.eye(d + 1) - 1.0 / (d + 1)
    # orthonormal coordinates of the centered simplex inside its d-dim affine hull
    q, _ = np.linalg.qr(e.T)
    pts = e @ q[:, :d]
    pts *= r / np.linalg.norm(pts[0])
    if rng is not None:
        rot, _ = np.linalg.qr(rng.standard_normal((d, d)))
        pts = pts @ rot
    return pts


@dataclass(frozen=True)
class JungTrial:
    diameter: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class JungReport:
    d: int
    r: float
    trials: tuple

    @property
    def violations(self) -> int:
        return sum(not t.passed for t in self.trials)


def jung_check(d: int, r: float, trials: int, seed, max_pairs: int = 8) -> JungReport:
    if d < 1:
        raise ValueError("d must be >= 1")
    if not r > 0:
        raise ValueError("r must be positive")
    rng = np.random.default_rng(seed)
    bound = jung_factor(d) * r
    rows = []
    for _ in range(trials):
        k = int(rng.integers(1, max_pairs + 1))
        pts = antipodal_set(d, r, k, rng)
        dia = diameter(pts)
        rows.append(JungTrial(dia, bound, dia >= bound - 1e-9))
    return JungReport(d, r, tuple(rows))
