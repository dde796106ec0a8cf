"""Batch front-end: JSON config in, JSON/CSV reports out.

Exit codes: 0 all checks passed, 1 some check failed, 2 bad config (or hypotheses not met).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .constructions import (
    HypothesisError,
    affine_embed,
    constant_embed,
    expressiveness_witness,
    freeknot_affine_embed,
    reg_spurious_construct,
)
from .projection_lab import (
    CloudSpec,
    cloud_summary,
    figure1_dataset,
    pca_residual,
    sample_image,
)
from .regularized import (
    approx_kill_probe,
    problem_from_construction,
    reg_instability_demo,
    verify_reg_certificate,
)
from .schemes import (
    Dataset,
    FeedForwardNN,
    FreeKnotSpline,
    Polynomial,
    ToyLightning,
    random_params,
    scheme_from_dict,
    single_sample_fit_cap,
)
from .theta import theta_heuristic
from .verify import SpuriousCertificate, saddle_pair, spurious_certificate, verify_certificate
from .yspace import jung_check, jung_factor, diameter, random_unit, regular_simplex


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configs

_TANH3 = {"variant": "ffnn", "d_x": 1, "widths": [3], "d_y": 1, "activations": ["tanh"]}


@dataclass
class WitnessConfig:
    scheme: dict = field(default_factory=lambda: {"variant": "free_knot", "p": 3})
    dataset: dict = field(default_factory=lambda: {"linspace": [0.0, 1.0, 8]})
    num_labels: int = 200
    gamma: float = 1e6
    tol: float = 1e-3
    seed: int = 0


@dataclass
class ThetaConfig:
    scheme: dict = field(default_factory=lambda: {"variant": "free_knot", "p": 3})
    dataset: dict = field(default_factory=lambda: {"linspace": [0.0, 1.0, 6]})
    num_labels: int = 8
    num_starts: int = 2
    max_iters: int = 2000
    seed: int = 0


@dataclass
class SpuriousConfig:
    scheme: dict = field(
        default_factory=lambda: {
            "variant": "ffnn",
            "d_x": 1,
            "widths": [2, 2],
            "d_y": 1,
            "activations": [{"name": "leaky_relu", "c": 0.1}, {"name": "leaky_relu", "c": 0.1}],
        }
    )
    dataset: dict = field(default_factory=lambda: {"linspace": [0.0, 4.0, 5]})
    embed: dict = field(default_factory=lambda: {"kind": "affine", "A": [2.0], "b": [1.0]})
    s_multiplier: float = 2.0
    theta_cap: float | None = None
    C: float | None = 10.0
    growth_samples: int = 200
    seed: int = 0


@dataclass
class SaddleConfig:
    scheme: dict = field(default_factory=lambda: dict(_TANH3))
    dataset: dict = field(default_factory=lambda: {"linspace": [0.0, 4.0, 5]})
    alpha_bar: list | None = None
    s_multiplier: float = 2.0
    grad_tol: float = 1e-8
    seed: int = 0


@dataclass
class RegSpuriousConfig:
    scheme: dict = field(default_factory=lambda: dict(_TANH3))
    dataset: dict = field(default_factory=lambda: {"linspace": [-1.0, 1.0, 4]})
    alpha_bar: list | None = None
    p: float = 2.0
    C: float = 1.0
    samples: int = 200
    seed: int = 0


@dataclass
class RegKillConfig:
    scheme: dict = field(default_factory=lambda: dict(_TANH3))
    dataset: dict = field(default_factory=lambda: {"linspace": [-1.0, 1.0, 4]})
    nu: float = 1.0
    p: float = 2.0
    s_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0])
    starts: int = 10
    seed: int = 0


@dataclass
class InstabilityConfig:
    scheme: dict = field(default_factory=lambda: dict(_TANH3))
    dataset: dict = field(default_factory=lambda: {"linspace": [-1.0, 1.0, 4]})
    alpha_bar: list | None = None
    nu: float = 1.0
    p: float = 2.0
    s_max: float = 1e4
    starts: int = 20
    seed: int = 0


@dataclass
class Figure1Config:
    step: float = 0.02
    random_points: int = 10**6
    box: list = field(default_factory=lambda: [[-20.0, 20.0], [-20.0, 20.0]])
    csv_max_rows: int | None = 200000
    seed: int = 0


@dataclass
class JungConfig:
    dims: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    trials: int = 1000
    r: float = 1.0
    max_pairs: int = 8
    seed: int = 0


@dataclass
class VerifyConfig:
    growth_samples: int = 200
    seed: int = 0


CONFIGS = {
    "witness": WitnessConfig,
    "theta": ThetaConfig,
    "spurious": SpuriousConfig,
    "saddle-pair": SaddleConfig,
    "reg-spurious": RegSpuriousConfig,
    "reg-kill": RegKillConfig,
    "instability": InstabilityConfig,
    "figure1": Figure1Config,
    "jung": JungConfig,
    "verify": VerifyConfig,
}


def load_config(command: str, raw: dict | None, seed: int | None):
    cls = CONFIGS[command]
    raw = dict(raw or {})
    cmd = raw.pop("command", command)
    if cmd != command:
        raise ConfigError(f"config is for {cmd!r}, not {command!r}")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(raw) - names
    if extra:
        raise ConfigError(f"unknown config keys {sorted(extra)}")
    cfg = cls(**raw)
    if seed is not None:
        cfg.seed = seed
    if not isinstance(cfg.seed, int) or cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return cfg


def build_dataset(spec: dict) -> Dataset:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("dataset needs exactly one of x, linspace, csv")
    (k, v), = spec.items()
    if k == "x":
        x = np.array(v, float)
    elif k == "linspace":
        lo, hi, n = v
        x = np.linspace(float(lo), float(hi), int(n))
    elif k == "csv":
        x = np.loadtxt(v, delimiter=",", ndmin=2)
    else:
        raise ConfigError(f"unknown dataset key {k!r}")
    if x.ndim == 1:
        x = x[:, None]
    return Dataset(x)


def _zero_first(net, alpha):
    layers = net.unpack(alpha)
    layers[0] = (np.zeros_like(layers[0][0]), layers[0][1])
    return net.pack(layers)


def _alpha_bar(net, given, seed):
    if given is not None:
        return np.array(given, float)
    return _zero_first(net, random_params(net, np.random.default_rng(seed)))


def pmap(fn, tasks, jobs):
    """Ordered map; the result list never depends on jobs."""
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


# ---------------------------------------------------------------------------
# commands; each returns (report, passed, extra files)


def _witness_task(args):
    scheme, ds, child, gamma = args
    rng = np.random.default_rng(child)
    y = random_unit(ds.n, scheme.d_y, rng)
    w = expressiveness_witness(scheme, ds, y, gamma=gamma, rng=rng)
    return w.loss, w.route


def run_witness(cfg: WitnessConfig, jobs: int):
    scheme = scheme_from_dict(cfg.scheme)
    ds = build_dataset(cfg.dataset)
    cap = single_sample_fit_cap(scheme, ds.n)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.num_labels)
    res = pmap(_witness_task, [(scheme, ds, c, cfg.gamma) for c in children], jobs)
    exact = all(r.startswith(("spline", "heaviside", "toy")) for _, r in res)
    tol = 4 * np.finfo(float).eps if exact else cfg.tol
    losses = [l for l, _ in res]
    passed = max(losses) <= cap + tol
    rep = {
        "scheme": scheme.to_dict(),
        "n": ds.n,
        "cap": cap,
        "tolerance": tol,
        "max_witness_loss": max(losses),
        "witness_losses": losses,
        "routes": sorted({r for _, r in res}),
        "seed": cfg.seed,
    }
    return rep, passed, {}


def run_theta(cfg: ThetaConfig, jobs: int):
    scheme = scheme_from_dict(cfg.scheme)
    ds = build_dataset(cfg.dataset)
    est = theta_heuristic(scheme, ds, cfg.num_labels, cfg.num_starts, cfg.max_iters, cfg.seed, jobs)
    tol = 1e-3
    passed = est.heuristic <= est.cap + tol and all(r.best_loss <= r.witness_loss for r in est.samples)
    return est.to_dict(scheme, ds.n), passed, {}


def _embedding(scheme, ds, e: dict):
    kind = e.get("kind")
    extra = set(e) - {"kind", "A", "b", "a", "route", "layer"}
    if extra:
        raise ConfigError(f"unknown embed keys {sorted(extra)}")
    if isinstance(scheme, FreeKnotSpline):
        if kind not in ("affine", "freeknot"):
            raise ConfigError("free-knot splines only support the affine embedding")
        return freeknot_affine_embed(scheme, ds, float(np.ravel(e.get("A", e.get("a", 1.0)))[0]), float(np.ravel(e.get("b", 0.0))[0]))
    if not isinstance(scheme, FeedForwardNN):
        raise ConfigError("spurious needs a network or a free-knot spline")
    if kind == "affine":
        return affine_embed(scheme, ds, e["A"], e["b"], e.get("route"))
    if kind == "constant":
        return constant_embed(scheme, ds, e["b"], e.get("layer"))
    raise ConfigError(f"unknown embed kind {kind!r}")


def run_spurious(cfg: SpuriousConfig, jobs: int):
    scheme = scheme_from_dict(cfg.scheme)
    ds = build_dataset(cfg.dataset)
    emb = _embedding(scheme, ds, cfg.embed)
    cert = spurious_certificate(emb, cfg.s_multiplier, cfg.theta_cap, cfg.C, cfg.seed, growth_samples=cfg.growth_samples)
    checks = verify_certificate(cert, cfg.growth_samples, cfg.seed)
    gap_ok = cfg.C is None or cert.gap >= cfg.C
    rep = {"certificate": cert.to_dict(), "checks": checks, "gap_ok": gap_ok, "C": cfg.C}
    return rep, checks["pass"] and gap_ok, {"certificate.json": cert.to_dict()}


def run_saddle(cfg: SaddleConfig, jobs: int):
    net = scheme_from_dict(cfg.scheme)
    ds = build_dataset(cfg.dataset)
    a = _alpha_bar(net, cfg.alpha_bar, cfg.seed)
    rep, v, s, grads = saddle_pair(net, a, ds, cfg.s_multiplier, seed=cfg.seed)
    passed = max(grads) <= cfg.grad_tol and rep.passed
    out = {
        "alpha_bar": a.tolist(),
        "s": s,
        "v": v.tolist(),
        "grad_norms": grads,
        "plus": dataclasses.asdict(rep.plus),
        "minus": dataclasses.asdict(rep.minus),
        "seed": cfg.seed,
    }
    return out, passed, {}


def run_reg_spurious(cfg: RegSpuriousConfig, jobs: int):
    net = scheme_from_dict(cfg.scheme)
    ds = build_dataset(cfg.dataset)
    a = _alpha_bar(net, cfg.alpha_bar, cfg.seed)
    rc = reg_spurious_construct(net, ds, a, cfg.p, cfg.C, rng=np.random.default_rng(cfg.seed))
    prob = problem_from_construction(net, ds, rc)
    rep = verify_reg_certificate(prob, rc, samples=cfg.samples, seed=cfg.seed)
    out = {
        "kind": "regularized-spurious",
        "scheme": net.to_dict(),
        "alpha_bar": a.tolist(),
        "witness": rc.witness.tolist(),
        "y_d": rc.y_d.tolist(),
        "nu": rc.nu,
        "p": rc.p,
        "s": rc.s,
        "gamma": rc.gamma,
        "checks": rep.to_dict(),
        "seed": cfg.seed,
    }
    return out, rep.passed, {}


def run_reg_kill(cfg: RegKillConfig, jobs: int):
    net = scheme_from_dict(cfg.scheme)
    ds = build_dataset(cfg.dataset)
    rep = approx_kill_probe(net, ds, cfg.nu, cfg.p, cfg.s_grid, cfg.starts, cfg.seed)
    out = rep.to_dict()
    out["seed"] = cfg.seed
    return out, rep.empirical_threshold >= rep.predicted * (1 - 1e-9), {}


def run_instability(cfg: InstabilityConfig, jobs: int):
    net = scheme_from_dict(cfg.scheme)
    ds = build_dataset(cfg.dataset)
    a = _alpha_bar(net, cfg.alpha_bar, cfg.seed)
    dm = reg_instability_demo(net, ds, a, cfg.p, cfg.seed, cfg.nu, cfg.s_max, cfg.starts)
    out = dm.to_dict()
    out["seed"] = cfg.seed
    return out, dm.found, {}


def run_figure1(cfg: Figure1Config, jobs: int):
    ds = figure1_dataset()
    spec = CloudSpec(tuple(tuple(b) for b in cfg.box), cfg.step, cfg.random_points)
    files, rep, passed = {}, {}, True
    for name, scheme in (("linear", Polynomial(1)), ("toy", ToyLightning())):
        cloud = sample_image(scheme, ds, spec, cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        idx = rng.choice(len(cloud.points), min(1000, len(cloud.points)), replace=False)
        err = cloud.reproduce_error(idx)
        summ = cloud_summary(cloud)
        summ["reproduce_error"] = err
        summ["pca_residual"] = pca_residual(cloud)
        ok = err <= 1e-12
        if name == "linear":
            ok = ok and summ["pca_residual"] <= 1e-10
        passed = passed and ok
        rep[name] = summ
        files[f"figure1_{name}.csv"] = (cloud, cfg.csv_max_rows, cfg.seed)
    rep["csv_columns"] = ["y1", "y2", "y3", "alpha1", "alpha2"]
    return rep, passed, files


def _jung_task(args):
    d, trials, r, seed, max_pairs = args
    rep = jung_check(d, r, trials, seed, max_pairs)
    simplex = regular_simplex(d, r, np.random.default_rng(seed))
    eq = abs(diameter(simplex) - jung_factor(d) * r)
    return {"d": d, "trials": trials, "violations": rep.violations,
            "min_ratio": min(t.diameter / t.bound for t in rep.trials), "simplex_equality_error": eq}


def run_jung(cfg: JungConfig, jobs: int):
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.dims))
    tasks = [(int(d), cfg.trials, cfg.r, s, cfg.max_pairs) for d, s in zip(cfg.dims, seeds)]
    rows = pmap(_jung_task, tasks, jobs)
    passed = all(r["violations"] == 0 for r in rows)
    passed = passed and all(r["simplex_equality_error"] <= 1e-12 for r in rows if r["d"] in (1, 2))
    return {"rows": rows, "r": cfg.r, "seed": cfg.seed}, passed, {}


RUNNERS = {
    "witness": run_witness,
    "theta": run_theta,
    "spurious": run_spurious,
    "saddle-pair": run_saddle,
    "reg-spurious": run_reg_spurious,
    "reg-kill": run_reg_kill,
    "instability": run_instability,
    "figure1": run_figure1,
    "jung": run_jung,
}


# ---------------------------------------------------------------------------
# io


def _clean(o):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else repr(f)
    return o


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_atomic(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e


def execute(command: str, raw_cfg: dict | None, seed=None, jobs: int = 1, out_dir: str | None = None, cert_path=None):
    """Run one command; returns (exit_code, report). Files are written only when out_dir is given."""
    try:
        cfg = load_config(command, raw_cfg, seed)
        if command == "verify":
            cert = SpuriousCertificate.from_dict(_read_json(cert_path))
            checks = verify_certificate(cert, cfg.growth_samples, cfg.seed)
            report, passed, files = {"certificate": cert_path and os.path.basename(cert_path), "checks": checks}, checks["pass"], {}
        else:
            report, passed, files = RUNNERS[command](cfg, jobs)
    except (ConfigError, HypothesisError, TypeError, KeyError) as e:
        return 2, {"command": command, "error": f"{type(e).__name__}: {e}"}
    except ValueError as e:
        return 2, {"command": command, "error": f"ValueError: {e}"}
    full = {"command": command, "version": __version__, "config": dataclasses.asdict(cfg), "pass": bool(passed), "report": report}
    if out_dir is not None:
        for name, payload in files.items():
            path = os.path.join(out_dir, name)
            if isinstance(payload, tuple):
                cloud, max_rows, s = payload
                os.makedirs(out_dir, exist_ok=True)
                cloud.export_csv(path, max_rows, s)
            else:
                write_atomic(path, dumps(payload))
        write_atomic(os.path.join(out_dir, f"{command}_report.json"), dumps(full))
    return (0 if passed else 1), full


def _summary(command, code, report) -> str:
    if code == 2:
        return f"{command}: config error: {report.get('error')}"
    return f"{command}: {'PASS' if code == 0 else 'FAIL'}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lossland", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=sorted(CONFIGS))
    ap.add_argument("certificate", nargs="?", help="certificate JSON (verify only)")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes; results do not depend on it")
    ap.add_argument("--out", default=".", help="output directory")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.jobs < 1:
        print("--jobs must be >= 1")
        return 2
    if args.command == "verify" and not args.certificate:
        print("verify needs a certificate path")
        return 2
    if args.command != "verify" and args.certificate:
        print(f"{args.command} takes no positional argument")
        return 2
    try:
        raw = _read_json(args.config) if args.config else None
    except ConfigError as e:
        print(f"{args.command}: config error: {e}")
        return 2
    if raw is not None and not isinstance(raw, dict):
        print(f"{args.command}: config error: top level must be an object")
        return 2
    code, rep = execute(args.command, raw, args.seed, args.jobs, args.out, args.certificate)
    print(_summary(args.command, code, rep))
    if code != 2:
        print(f"report: {os.path.join(args.out, args.command + '_report.json')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
