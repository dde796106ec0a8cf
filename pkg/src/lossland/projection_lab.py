"""Brute-force nearest-point oracle for small label spaces (n * d_y <= 4).

The image of a scheme is sampled on a parameter grid plus random points; projections are then
plain nearest-neighbour scans over that cloud. Conic schemes are stored as a ray cloud: one point
per ray, with projections taken onto the ray through each point.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .constructions import s_threshold
from .schemes import Dataset, Polynomial, Scheme, ToyLightning, _toy, loss
from .yspace import YVector

MAX_POINTS = 10**7
MAX_YDIM = 4
_CHUNK = 1 << 18


class CloudError(ValueError):
    pass


@dataclass(frozen=True)
class CloudSpec:
    """Uniform grid over a box in parameter space plus uniform random points in the same box.

    The reference configuration uses step 5e-3 on [-20, 20]^2, which is 6.4e7 points and exceeds
    MAX_POINTS, so the default step is coarser.
    """

    box: tuple = ((-20.0, 20.0), (-20.0, 20.0))
    step: float = 0.02
    random_points: int = 10**6

    def grid_counts(self):
        if self.step is None or self.step <= 0:
            return ()
        return tuple(int(round((hi - lo) / self.step)) + 1 for lo, hi in self.box)

    def size(self) -> int:
        c = self.grid_counts()
        return (int(np.prod(c)) if c else 0) + int(self.random_points)


def batch_image(scheme: Scheme, A: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows Psi(alpha_i, x_d) flattened, for a batch of parameters."""
    x = X[:, 0]
    if isinstance(scheme, ToyLightning):
        out = _toy(A[:, 0:1] * x[None, :] + A[:, 1:2])
        return A[:, 2:3] * out if scheme.conic else out
    if isinstance(scheme, Polynomial):
        V = np.vander(x, scheme.degree + 1, increasing=True)
        return A @ V.T
    return np.stack([scheme.forward(a, X).reshape(-1) for a in A])


def _lipschitz_rows(scheme: Scheme, X: np.ndarray, box) -> np.ndarray:
    """Per-sample bound on sum_j |d psi(., x_k) / d alpha_j| over the box."""
    x = np.abs(X[:, 0])
    if isinstance(scheme, ToyLightning):
        # toy activation is 1-Lipschitz and bounded by 1
        if scheme.conic:
            amp = max(abs(box[2][0]), abs(box[2][1])) if len(box) > 2 else 1.0
            return amp * (x + 1) + 1
        return x + 1
    if isinstance(scheme, Polynomial):
        return np.vander(x, scheme.degree + 1, increasing=True).sum(1)
    return np.full(X.shape[0], np.nan)


@dataclass(eq=False)
class ImageCloud:
    points: np.ndarray
    alphas: np.ndarray
    scheme: Scheme
    dataset: Dataset
    spec: CloudSpec
    seed: int
    resolution: float
    ray: bool = False

    @property
    def n(self):
        return self.dataset.n

    def y(self, i) -> YVector:
        return YVector.from_flat(self.points[i], self.dataset.n, self.scheme.d_y)

    def reproduce_error(self, idx) -> float:
        idx = np.atleast_1d(idx)
        P = batch_image(self.scheme, self.alphas[idx], self.dataset.x)
        return float(np.abs(P - self.points[idx]).max())

    def export_csv(self, path, max_rows: int | None = None, seed: int = 0) -> int:
        """Header then one row per point: y coordinates followed by alpha coordinates (CRLF rows)."""
        idx = np.arange(len(self.points))
        if max_rows is not None and len(idx) > max_rows:
            idx = np.sort(np.random.default_rng(seed).choice(idx, max_rows, replace=False))
        yd = self.points.shape[1]
        head = [f"y{k + 1}" for k in range(yd)] + [f"alpha{j + 1}" for j in range(self.alphas.shape[1])]
        data = np.hstack([self.points[idx], self.alphas[idx]])
        d = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as fh:
            np.savetxt(fh, data, fmt="%.17g", delimiter=",", header=",".join(head), comments="", newline="\r\n")
        os.replace(tmp, path)
        return len(idx)


def sample_image(scheme: Scheme, dataset: Dataset, spec: CloudSpec, seed: int = 0) -> ImageCloud:
    ydim = dataset.n * scheme.d_y
    if ydim > MAX_YDIM:
        raise CloudError(f"n * d_y = {ydim} exceeds {MAX_YDIM}")
    counts = spec.grid_counts()
    if not counts and spec.random_points <= 0:
        raise CloudError("empty cloud spec")
    ray = isinstance(scheme, ToyLightning) and scheme.conic
    # ray clouds keep the amplitude at 1; the box then only covers the inner parameters
    m_free = 2 if ray else scheme.m
    box = tuple(spec.box)[:m_free]
    if len(box) != m_free:
        raise CloudError(f"box needs {m_free} intervals")
    if spec.size() > MAX_POINTS:
        raise CloudError(f"{spec.size()} points exceed the cap of {MAX_POINTS}")
    parts = []
    if counts:
        axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(box, counts)]
        parts.append(np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m_free))
    if spec.random_points > 0:
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        parts.append(lo + (hi - lo) * rng.random((spec.random_points, m_free)))
    A = np.concatenate(parts)
    if ray:
        A = np.hstack([A, np.ones((len(A), 1))])
    P = np.empty((len(A), ydim))
    for s in range(0, len(A), _CHUNK):
        P[s : s + _CHUNK] = batch_image(scheme, A[s : s + _CHUNK], dataset.x)
    h = spec.step if counts else float("nan")
    lip = _lipschitz_rows(scheme, dataset.x, box)
    res = float(np.sqrt(np.sum((lip * h / 2) ** 2) / (2 * dataset.n))) if counts else float("nan")
    return ImageCloud(P, A, scheme, dataset, spec, seed, res, ray)


# ---------------------------------------------------------------------------
# projection


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    y_d: YVector
    min_dist: float
    clusters: tuple  # YVectors
    cluster_alphas: tuple
    multivalued: bool
    cluster_tol: float
    sep_tol: float

    def to_dict(self):
        return {
            "y_d": self.y_d.tolist(),
            "min_dist": self.min_dist,
            "clusters": [c.tolist() for c in self.clusters],
            "multivalued": self.multivalued,
            "cluster_tol": self.cluster_tol,
            "sep_tol": self.sep_tol,
        }


def _ynorm(D, n):
    return np.sqrt(np.einsum("ij,ij->i", D, D) / (2 * n))


def _candidates(cloud: ImageCloud, y: np.ndarray):
    """Nearest point on each cloud element (the point itself, or its ray) and the distances."""
    n = cloud.n
    if cloud.ray:
        zz = np.einsum("ij,ij->i", cloud.points, cloud.points)
        t = np.where(zz > 0, np.maximum(0.0, cloud.points @ y) / np.where(zz > 0, zz, 1.0), 0.0)
        Q = t[:, None] * cloud.points
        return Q, _ynorm(Q - y, n), t
    return cloud.points, _ynorm(cloud.points - y, n), None


def default_sep_tol(cloud: ImageCloud) -> float:
    return 10.0 * cloud.resolution


def project(cloud: ImageCloud, y_d: YVector, cluster_tol: float = 1e-3, sep_tol: float | None = None) -> ProjectionResult:
    sep = default_sep_tol(cloud) if sep_tol is None else sep_tol
    y = y_d.flat
    Q, d, t = _candidates(cloud, y)
    md = float(d.min())
    idx = np.nonzero(d <= md * (1 + cluster_tol) + 1e-15)[0]
    idx = idx[np.argsort(d[idx], kind="stable")]
    reps = []
    for i in idx:
        q = Q[i]
        if all(_ynorm((q - Q[r])[None], cloud.n)[0] >= sep for r in reps):
            reps.append(i)
    n, dy = cloud.n, cloud.scheme.d_y
    clusters = tuple(YVector.from_flat(Q[r], n, dy) for r in reps)
    alphas = []
    for r in reps:
        a = cloud.alphas[r].copy()
        if cloud.ray:
            a[-1] = t[r]
        alphas.append(a)
    return ProjectionResult(y_d, md, clusters, tuple(alphas), len(reps) >= 2, cluster_tol, sep)


def find_multivalued(
    cloud: ImageCloud, seed: int = 0, tries: int = 200, iters: int = 100, scale: float = 1.5, cluster_tol: float = 1e-3
):
    """Search for a label with two far-apart nearest cloud points.

    From a random label, take the nearest point z1 and the nearest point z2 at least sep_tol away
    from z1, move the label onto their bisector, and repeat until the pair is stable.
    """
    rng = np.random.default_rng(seed)
    sep = default_sep_tol(cloud)
    n, dy = cloud.n, cloud.scheme.d_y
    for _ in range(tries):
        y = scale * rng.standard_normal(n * dy)
        pair = None
        for _ in range(iters):
            Q, d, _t = _candidates(cloud, y)
            i1 = int(np.argmin(d))
            far = _ynorm(Q - Q[i1], n) >= 2 * sep
            if not far.any():
                break
            i2 = int(np.flatnonzero(far)[np.argmin(d[far])])
            z1, z2 = Q[i1], Q[i2]
            if pair == (i1, i2) or pair == (i2, i1):
                break
            pair = (i1, i2)
            diff = z2 - z1
            f = (np.dot(y - z1, y - z1) - np.dot(y - z2, y - z2)) / (2 * n)
            y = y - f * diff / (2 * np.dot(diff, diff) / (2 * n))
        res = project(cloud, YVector.from_flat(y, n, dy), cluster_tol)
        if res.multivalued and res.min_dist > 0:
            return res
    return None


@dataclass(frozen=True, eq=False)
class DiscontinuityReport:
    labels: tuple  # (seq for z1, seq for z2)
    representatives: tuple
    single_valued: tuple
    final_separation: float
    label_gap: float
    z_gap: float

    @property
    def passed(self) -> bool:
        return all(all(s[1:]) for s in self.single_valued) and self.final_separation >= 0.9 * self.z_gap

    def to_dict(self):
        return {
            "labels": [[y.tolist() for y in s] for s in self.labels],
            "representatives": [[r.tolist() for r in s] for s in self.representatives],
            "single_valued": [list(s) for s in self.single_valued],
            "final_separation": self.final_separation,
            "label_gap": self.label_gap,
            "z_gap": self.z_gap,
            "pass": self.passed,
        }


def discontinuity_probe(cloud: ImageCloud, y_d: YVector, z1: YVector, z2: YVector, L: int = 10) -> DiscontinuityReport:
    """Labels (1 - 1/l) y_d + (1/l) z_i for l = 1..L and their projections."""
    labs, reps, single = [], [], []
    for z in (z1, z2):
        ls, rs, ss = [], [], []
        for l in range(1, L + 1):
            lab = (1 - 1 / l) * y_d + (1 / l) * z
            pr = project(cloud, lab)
            ls.append(lab)
            rs.append(pr.clusters[0])
            ss.append(not pr.multivalued)
        labs.append(tuple(ls))
        reps.append(tuple(rs))
        single.append(tuple(ss))
    sep = (reps[0][-1] - reps[1][-1]).norm()
    return DiscontinuityReport(
        tuple(labs), tuple(reps), tuple(single), sep, (labs[0][-1] - labs[1][-1]).norm(), (z1 - z2).norm()
    )


@dataclass(frozen=True)
class SolarRow:
    s: float
    min_dist: float
    dist_to_ybar: float
    excluded: bool
    asserted: bool


@dataclass(frozen=True)
class SolarReport:
    threshold: float
    theta: float
    rows: tuple

    @property
    def passed(self) -> bool:
        return all(r.excluded for r in self.rows if r.asserted)


def solar_check(cloud: ImageCloud, y_d: YVector, ybar: YVector, theta: float, s_values, sep_tol=None) -> SolarReport:
    """Moving far along the ray from ybar through y_d, ybar must stop being a nearest point."""
    sep = default_sep_tol(cloud) if sep_tol is None else sep_tol
    u = y_d - ybar
    nu = u.norm()
    if nu == 0:
        raise ValueError("y_d must differ from ybar")
    u = u / nu
    thr = s_threshold(theta, ybar.norm())
    rows = []
    for s in s_values:
        target = ybar + float(s) * u
        pr = project(cloud, target)
        dist = abs(float(s))
        rows.append(SolarRow(float(s), pr.min_dist, dist, dist - pr.min_dist > sep, abs(s) > thr))
    return SolarReport(thr, theta, tuple(rows))


# ---------------------------------------------------------------------------
# sublevel sets on a parameter grid


@dataclass(frozen=True)
class BasinReport:
    level: float
    num_components: int
    label_a: int
    label_b: int

    @property
    def separated(self) -> bool:
        return self.label_a > 0 and self.label_b > 0 and self.label_a != self.label_b


def sublevel_components(
    scheme: Scheme, dataset: Dataset, y_d: YVector, level: float, box, step: float
):
    """Connected components (8-neighbourhood) of {loss <= level} on a 2-parameter grid."""
    if len(box) != 2:
        raise ValueError("sublevel grids are two-dimensional")
    axes = [np.arange(lo, hi + step / 2, step) for lo, hi in box]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2)
    if isinstance(scheme, ToyLightning) and scheme.conic:
        raise ValueError("sublevel grids need a two-parameter scheme")
    P = batch_image(scheme, G, dataset.x)
    vals = _ynorm(P - y_d.flat, dataset.n) ** 2
    mask = (vals <= level).reshape(len(axes[0]), len(axes[1]))
    lab, num = ndimage.label(mask, structure=np.ones((3, 3)))
    return lab, num, axes


def basin_check(
    scheme: Scheme, dataset: Dataset, y_d: YVector, alpha_a, alpha_b, box, step: float, margin: float = 1e-3
) -> BasinReport:
    """Whether alpha_a and alpha_b sit in different components of the sublevel set at the larger of
    their two losses (plus a relative margin)."""
    la = loss(scheme, alpha_a, dataset, y_d)
    lb = loss(scheme, alpha_b, dataset, y_d)
    level = max(la, lb) * (1 + margin) + 1e-12
    lab, num, axes = sublevel_components(scheme, dataset, y_d, level, box, step)

    def at(a):
        i = int(np.argmin(np.abs(axes[0] - a[0])))
        j = int(np.argmin(np.abs(axes[1] - a[1])))
        return int(lab[i, j])

    return BasinReport(float(level), int(num), at(alpha_a), at(alpha_b))


def pca_residual(cloud: ImageCloud) -> float:
    """Smallest singular value of the centered cloud relative to the largest."""
    P = cloud.points - cloud.points.mean(0)
    s = np.linalg.svd(P, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def figure1_dataset() -> Dataset:
    return Dataset(np.array([[-0.5], [0.5], [1.0]]))


def cloud_summary(cloud: ImageCloud) -> dict:
    return {
        "scheme": cloud.scheme.to_dict(),
        "x_d": cloud.dataset.x[:, 0].tolist(),
        "points": int(len(cloud.points)),
        "grid_step": cloud.spec.step,
        "random_points": cloud.spec.random_points,
        "box": [list(b) for b in cloud.spec.box],
        "resolution": cloud.resolution,
        "seed": cloud.seed,
        "ray": cloud.ray,
    }
