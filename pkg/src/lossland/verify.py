"""Independent numerical checks of constructed certificates.

Every check recomputes losses from the stored parameters and labels; nothing is taken on trust
from the construction that produced a certificate.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constructions import (
    EmbeddingResult,
    bad_label,
    expressiveness_witness,
    poly_space_basis,
    s_threshold,
)
from .schemes import (
    Dataset,
    FeedForwardNN,
    Scheme,
    eval_batch,
    grad_loss,
    jacobian,
    loss,
    scale_top,
    scheme_from_dict,
)
from .yspace import YVector, complement_direction, norm, orthonormalize

GROWTH_TOL = 1e-9


def dataset_hash(dataset: Dataset) -> str:
    return hashlib.sha256(np.ascontiguousarray(dataset.x).tobytes()).hexdigest()[:16]


@dataclass(eq=False)
class SpuriousCertificate:
    scheme: Scheme
    dataset: Dataset
    alpha_bar: np.ndarray
    y_d: YVector
    witness: np.ndarray
    loss_at_bar: float
    witness_loss: float
    kind: str = "spurious-min"
    grad_norm: float | None = None
    growth_report: list = field(default_factory=list)
    s: float | None = None
    v: YVector | None = None
    theta_used: float | None = None
    theta_source: str = "cap"
    rho: float | None = None
    provenance: str = ""
    seed: int | None = None
    tolerances: dict = field(default_factory=lambda: {"growth": GROWTH_TOL, "gap_rel": 1e-9})

    @property
    def gap(self) -> float:
        return self.loss_at_bar - self.witness_loss

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "scheme": self.scheme.to_dict(),
            "x_d": self.dataset.x.tolist(),
            "dataset_hash": dataset_hash(self.dataset),
            "alpha_bar": self.alpha_bar.tolist(),
            "y_d": self.y_d.tolist(),
            "witness": self.witness.tolist(),
            "scalars": {
                "loss_at_bar": self.loss_at_bar,
                "witness_loss": self.witness_loss,
                "gap": self.gap,
                "grad_norm": self.grad_norm,
                "s": self.s,
                "theta_used": self.theta_used,
                "rho": self.rho,
            },
            "theta_source": self.theta_source,
            "v": None if self.v is None else self.v.tolist(),
            "growth_report": [list(r) for r in self.growth_report],
            "provenance": self.provenance,
            "seed": self.seed,
            "tolerances": dict(self.tolerances),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpuriousCertificate":
        sc = d["scalars"]
        ds = Dataset(np.array(d["x_d"]))
        if "dataset_hash" in d and d["dataset_hash"] != dataset_hash(ds):
            raise ValueError("dataset hash mismatch")
        return cls(
            scheme=scheme_from_dict(d["scheme"]),
            dataset=ds,
            alpha_bar=np.array(d["alpha_bar"], float),
            y_d=YVector(np.array(d["y_d"], float)),
            witness=np.array(d["witness"], float),
            loss_at_bar=float(sc["loss_at_bar"]),
            witness_loss=float(sc["witness_loss"]),
            kind=d.get("kind", "spurious-min"),
            grad_norm=sc.get("grad_norm"),
            growth_report=[tuple(r) for r in d.get("growth_report", [])],
            s=sc.get("s"),
            v=None if d.get("v") is None else YVector(np.array(d["v"], float)),
            theta_used=sc.get("theta_used"),
            theta_source=d.get("theta_source", "cap"),
            rho=sc.get("rho"),
            provenance=d.get("provenance", ""),
            seed=d.get("seed"),
            tolerances=d.get("tolerances", {}),
        )


# ---------------------------------------------------------------------------
# building certificates


def spurious_certificate(
    emb: EmbeddingResult,
    s_multiplier: float = 2.0,
    theta_cap: float | None = None,
    C: float | None = None,
    seed: int = 0,
    gammas=(1.0, 4.0, 16.0, 64.0, 1e3, 1e6),
    growth_samples: int = 0,
    max_doublings: int = 60,
) -> SpuriousCertificate:
    """bad_label on top of an embedding plus a single-sample witness; s doubles until the gap reaches C.

    Saturation strengths are tried smallest first: moderate gamma keeps the witness well conditioned.
    """
    rng = np.random.default_rng(seed)
    bl = bad_label(emb, s_multiplier, theta_cap, rng)
    scheme, ds = emb.scheme, emb.dataset
    mult = s_multiplier
    w = None
    for _ in range(max_doublings):
        lb = loss(scheme, emb.alpha_bar, ds, bl.y_d)
        for g in gammas:
            w = expressiveness_witness(scheme, ds, bl.y_d, gamma=g, rng=np.random.default_rng(seed + 1))
            if lb - w.loss > 0 and (C is None or lb - w.loss >= C):
                break
        else:
            w = None
        if w is not None:
            break
        mult *= 2
        bl = bad_label(emb, mult, theta_cap, rng, v=bl.v)
    else:
        raise RuntimeError("could not reach the requested gap")
    cert = SpuriousCertificate(
        scheme=scheme,
        dataset=ds,
        alpha_bar=emb.alpha_bar.copy(),
        y_d=bl.y_d,
        witness=w.alpha,
        loss_at_bar=lb,
        witness_loss=w.loss,
        kind="spurious-min",
        s=bl.s,
        v=bl.v,
        theta_used=bl.theta_cap,
        theta_source=bl.theta_source,
        rho=emb.rho,
        provenance=f"{emb.lemma}+bad-label+{w.route}",
        seed=seed,
    )
    g = grad_loss(scheme, emb.alpha_bar, ds, bl.y_d)
    if g.smooth:
        cert.grad_norm = float(np.linalg.norm(g.grad))
    if growth_samples:
        cert.growth_report = check_local_growth(scheme, cert, emb.rho, growth_samples, seed + 2)
    return cert


# ---------------------------------------------------------------------------
# checks


def check_stationarity(scheme: Scheme, alpha, dataset: Dataset, y_d: YVector, tol: float = 1e-8):
    g = grad_loss(scheme, alpha, dataset, y_d)
    gn = float(np.linalg.norm(g.grad))
    return gn, bool(gn <= tol and g.smooth)


def _sample_box(rng, m, radius, num):
    return radius * rng.uniform(-1.0, 1.0, size=(num, m))


def check_local_growth(scheme: Scheme, cert: SpuriousCertificate, radius: float, num_samples: int, seed) -> list:
    """Rows (|h|_inf, lhs, rhs, pass) with lhs = loss(a+h) - loss(a), rhs = |Psi(a+h) - Psi(a)|^2.

    Inside the certified radius the two must agree (the cross term vanishes); outside only lhs >= rhs
    is checked.
    """
    rng = np.random.default_rng(seed)
    ds, y = cert.dataset, cert.y_d
    a = cert.alpha_bar
    inside = cert.rho is not None and radius <= cert.rho
    base_psi = eval_batch(scheme, a, ds)
    base_loss = loss(scheme, a, ds, y)
    rows = []
    for h in _sample_box(rng, a.size, radius, num_samples):
        alpha = a + h
        if not scheme.in_domain(alpha):
            continue
        lhs = loss(scheme, alpha, ds, y) - base_loss
        rhs = norm(eval_batch(scheme, alpha, ds) - base_psi) ** 2
        ok = lhs >= rhs - GROWTH_TOL
        if inside:
            ok = ok and abs(lhs - rhs) <= GROWTH_TOL * (1 + abs(lhs))
        rows.append((float(np.abs(h).max()), float(lhs), float(rhs), bool(ok)))
    return rows


def check_spurious(cert: SpuriousCertificate, min_gap: float | None = None) -> bool:
    s, ds, y = cert.scheme, cert.dataset, cert.y_d
    lb = loss(s, cert.alpha_bar, ds, y)
    lw = loss(s, cert.witness, ds, y)
    tol = 1e-12 * (1 + abs(lb))
    if abs(lb - cert.loss_at_bar) > tol or abs(lw - cert.witness_loss) > tol:
        return False
    mg = 1e-9 * (1 + lb) if min_gap is None else min_gap
    return bool(lw + mg <= lb)


def scale_certificate(cert: SpuriousCertificate, gamma: float) -> SpuriousCertificate:
    """(gamma y_d, gamma * top layer) for both points; losses and gap scale by gamma^2."""
    s = cert.scheme
    a = scale_top(s, cert.alpha_bar, gamma)
    w = scale_top(s, cert.witness, gamma)
    y = gamma * cert.y_d
    return replace(
        cert,
        alpha_bar=a,
        witness=w,
        y_d=y,
        loss_at_bar=loss(s, a, cert.dataset, y),
        witness_loss=loss(s, w, cert.dataset, y),
        s=None if cert.s is None else gamma * cert.s,
        growth_report=[],
    )


def verify_certificate(cert: SpuriousCertificate, growth_samples: int = 200, seed: int = 0) -> dict:
    """All checks that apply to a stored certificate; used by the `verify` command."""
    out = {"spurious": check_spurious(cert)}
    if cert.rho is not None and cert.rho > 0 and growth_samples:
        rows = check_local_growth(cert.scheme, cert, cert.rho, growth_samples, seed)
        out["growth"] = all(r[3] for r in rows)
        out["growth_samples"] = len(rows)
    if cert.v is not None and cert.s is not None:
        base = eval_batch(cert.scheme, cert.alpha_bar, cert.dataset)
        out["label_consistent"] = bool(norm(base + cert.s * cert.v - cert.y_d) <= 1e-9 * (1 + abs(cert.s)))
    out["pass"] = all(v for k, v in out.items() if isinstance(v, bool))
    return out


# ---------------------------------------------------------------------------
# saddle / spurious pairs


def fd_hessian(scheme: Scheme, alpha, dataset: Dataset, y_d: YVector, h: float = 1e-5) -> np.ndarray:
    a = np.asarray(alpha, float)
    m = a.size
    H = np.zeros((m, m))
    for i in range(m):
        st = h * (1 + abs(a[i]))
        ap, am = a.copy(), a.copy()
        ap[i] += st
        am[i] -= st
        H[:, i] = (grad_loss(scheme, ap, dataset, y_d).grad - grad_loss(scheme, am, dataset, y_d).grad) / (2 * st)
    return (H + H.T) / 2


@dataclass(frozen=True)
class Classification:
    label: str
    lam_min: float | None
    lam_max: float | None
    sampled_min: float
    sampled_max: float
    radius: float
    witness_gap: float
    grad_norm: float


def classify_point(
    scheme: Scheme, alpha, dataset: Dataset, y_d: YVector, rho: float = math.inf, seed=0, n_random: int = 64
) -> Classification:
    a = np.asarray(alpha, float)
    m = a.size
    r = min(rho / 2, 1e-3 * (1 + np.abs(a).max()))
    rng = np.random.default_rng(seed)
    dirs = np.concatenate([np.eye(m), -np.eye(m), rng.standard_normal((n_random, m))])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    l0 = loss(scheme, a, dataset, y_d)
    diffs = np.array([loss(scheme, a + r * d, dataset, y_d) - l0 for d in dirs])
    stol = 1e-12 * (1 + abs(l0))
    g = grad_loss(scheme, a, dataset, y_d)
    gn = float(np.linalg.norm(g.grad))
    wl = expressiveness_witness(scheme, dataset, y_d).loss
    gap = l0 - wl
    if not g.smooth:
        return Classification("inconclusive", None, None, diffs.min(), diffs.max(), r, gap, gn)
    H = fd_hessian(scheme, a, dataset, y_d)
    ev = np.linalg.eigvalsh(H)
    lmin, lmax = float(ev[0]), float(ev[-1])
    htol = 1e-6 * (1 + np.abs(ev).max())
    if lmin < -htol and lmax > htol:
        label = "saddle-like"
    elif lmin >= -htol and lmax > htol or (lmin >= -htol and lmax <= htol):
        # PSD (possibly degenerate): samples decide about higher-order descent
        if (diffs < -stol).any():
            label = "saddle-like"
        elif (diffs > stol).all():
            label = "local-min-like"
        elif (diffs >= -stol).all() and (np.abs(diffs) <= stol).all():
            label = "flat"
        else:
            label = "local-min-like"
    else:
        if (diffs > stol).any():
            label = "saddle-like"
        elif (diffs < -stol).all():
            label = "max-like"
        else:
            label = "flat"
    return Classification(label, lmin, lmax, float(diffs.min()), float(diffs.max()), r, gap, gn)


@dataclass(frozen=True)
class PairReport:
    plus: Classification
    minus: Classification
    s: float

    @property
    def passed(self) -> bool:
        return any(c.label in ("local-min-like", "saddle-like", "flat") and c.witness_gap > 0 for c in (self.plus, self.minus))


def classify_pair(scheme: Scheme, alpha_bar, dataset: Dataset, base: YVector, v: YVector, s: float, rho=math.inf, seed=0) -> PairReport:
    plus = classify_point(scheme, alpha_bar, dataset, base + s * v, rho, seed)
    minus = classify_point(scheme, alpha_bar, dataset, base - s * v, rho, seed)
    return PairReport(plus, minus, float(s))


def stationary_direction(scheme: Scheme, alpha_bar, dataset: Dataset, seed=0) -> YVector:
    """Unit v orthogonal to span(Psi(alpha_bar), range of the Jacobian)."""
    rng = np.random.default_rng(seed)
    J = jacobian(scheme, alpha_bar, dataset.x)
    n, d_y = dataset.n, scheme.d_y
    raw = [eval_batch(scheme, alpha_bar, dataset)] + [YVector.from_flat(c, n, d_y) for c in J.T]
    raw = [r for r in raw if norm(r) > 0]
    V = orthonormalize(raw)
    return complement_direction(V, rng)


def saddle_pair(scheme: Scheme, alpha_bar, dataset: Dataset, s_multiplier: float = 2.0, theta=None, seed=0):
    """Labels Psi(alpha_bar) +- s v with v orthogonal to the tangent data; alpha_bar is stationary for both."""
    v = stationary_direction(scheme, alpha_bar, dataset, seed)
    base = eval_batch(scheme, alpha_bar, dataset)
    th = 1 - 1 / dataset.n if theta is None else theta
    thr = s_threshold(th, norm(base))
    s = s_multiplier * thr if thr > 0 else float(s_multiplier)
    report = classify_pair(scheme, alpha_bar, dataset, base, v, s, seed=seed)
    grads = [check_stationarity(scheme, alpha_bar, dataset, base + sg * s * v)[0] for sg in (1, -1)]
    return report, v, s, grads
