"""Config-driven synthesis, closed-loop runs and sweeps.

An experiment is described by one JSON file (see ``configs/`` in the
package data). Offline artifacts (gain, base set, variance bounds,
tightening, terminal set, terminal weight) depend only on the system,
noise and controller blocks plus the pair ``(alpha, p)``; they are cached
on disk under a content hash so that reruns skip every SDP.

Uncertainty scaling: the configured ``Theta`` is a unit set and the
experiment uses ``alpha * Theta``. The constant estimate is scaled the
same way, so ``theta_bar = [-1]`` means ``theta_bar = -alpha``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import (UncertainLTISystem, lqr_gain, synthesize_gain,
                    terminal_weight, verify_gain)
from .mpc import MPCConfig, RobustStochasticMPC
from .polytope import Polytope
from .rprs import (NoiseModel, VarianceBoundSequence, ar1_covariance,
                   build_rprs, correlated_variance_bounds, iid_variance_bounds,
                   tighten, TighteningTable)
from .sim import ConstantEstimator, ProjectedRLS, run_closed_loop, sample_noise
from .tube import (TerminalSet, box_base_set, optimized_parallelotope,
                   parallelotope, terminal_set)

log = logging.getLogger(__name__)

CACHE_VERSION = 2

_matrix = {"type": "array", "items": {"type": "array",
                                      "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_poly = {"type": "object", "required": ["H", "h"],
         "properties": {"H": _matrix, "h": _vector}}
_prob = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

SCHEMA = {
    "type": "object",
    "required": ["name", "system", "noise", "controller", "x0", "T"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["A", "B", "Theta", "X"],
            "properties": {
                "A": {"type": "array", "minItems": 1, "items": _matrix},
                "B": {"type": "array", "minItems": 1, "items": _matrix},
                "Theta": _poly, "X": _poly, "U": _poly,
            },
        },
        "noise": {
            "type": "object",
            "required": ["family"],
            "properties": {
                "family": {"enum": ["gaussian", "moment"]},
                "Sigma_w": _matrix,
                "ar1": {"type": "object", "required": ["Sigma_w", "rho"],
                        "properties": {"Sigma_w": _matrix,
                                       "rho": {"type": "number"}}},
                "exogenous": {
                    "type": "object",
                    "required": ["B_w", "std", "rho"],
                    "properties": {
                        "B_w": _matrix, "std": {"type": "number"},
                        "rho": {"type": "number"},
                        "mean": {"type": "object"},
                        "process_Sigma": _matrix,
                    },
                },
                "offset": _vector,
            },
        },
        "controller": {
            "type": "object",
            "required": ["N", "Q", "R"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "Q": _matrix, "R": _matrix,
                "input_l1": {"type": "number", "minimum": 0},
                "input_offset": _vector,
                "tube_weight": {"type": "number", "minimum": 0},
                "gain": {"type": "object"},
                "base_set": {"type": "object"},
                "rprs": {"type": "object"},
                "terminal": {"type": "object"},
                "solver": {"type": "object"},
            },
        },
        "estimator": {"type": "object"},
        "theta_true": _vector,
        "x0": _vector,
        "T": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "minimum": 0},
        "p_x": _prob,
        "p_u": {"anyOf": [_prob, {"const": "same"}]},
        "seeds": {"type": "object",
                  "properties": {"start": {"type": "integer"},
                                 "count": {"type": "integer", "minimum": 1}}},
        "sweep": {
            "type": "object",
            "properties": {
                "alpha": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                "p": {"type": "array", "minItems": 1, "items": _prob},
                "baseline": {"type": "boolean"},
                "baseline_cells": {"type": "array"},
                "p_u": {"const": "same"},
            },
        },
        "baseline": {"type": "object"},
        "output_dir": {"type": "string"},
        "cache": {"type": "object"},
    },
}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj, length=12) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:length]


@dataclass
class ExperimentConfig:
    """Validated experiment description (the raw dict plus helpers)."""

    raw: dict
    path: Path | None = None

    def __post_init__(self):
        import jsonschema

        try:
            jsonschema.validate(self.raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config: {exc.message} at "
                              f"{'/'.join(map(str, exc.absolute_path))}") from exc
        nz = self.raw["noise"]
        kinds = [k for k in ("Sigma_w", "ar1", "exogenous") if k in nz]
        if len(kinds) != 1:
            raise ConfigError("noise needs exactly one of Sigma_w, ar1, exogenous")
        sw = self.raw.get("sweep", {})
        for key in ("alpha", "p"):
            if key in sw and not sw[key]:
                raise ConfigError(f"sweep grid '{key}' is empty")
        n = len(self.raw["system"]["A"][0])
        if len(self.raw["x0"]) != n:
            raise ConfigError("x0 has the wrong dimension")

    # convenient accessors
    @property
    def name(self) -> str:
        return self.raw["name"]

    @property
    def T(self) -> int:
        return int(self.raw["T"])

    @property
    def N(self) -> int:
        return int(self.raw["controller"]["N"])

    @property
    def alpha(self) -> float:
        return float(self.raw.get("alpha", 1.0))

    @property
    def p_x(self) -> float:
        return float(self.raw.get("p_x", 0.9))

    def p_u(self, p_x=None) -> float:
        pu = self.raw.get("p_u", "same")
        if pu == "same":
            return self.p_x if p_x is None else p_x
        return float(pu)

    @property
    def seeds(self) -> list:
        s = self.raw.get("seeds", {})
        start, count = int(s.get("start", 0)), int(s.get("count", 1))
        return list(range(start, start + count))

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.raw["x0"], dtype=float)

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output_dir", "rsmpc_output"))

    @property
    def cache_dir(self) -> Path | None:
        c = self.raw.get("cache", {})
        if not c.get("enabled", True):
            return None
        return Path(c.get("dir", ".rsmpc_cache"))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        for k, v in kw.items():
            raw[k] = v
        return ExperimentConfig(raw, self.path)

    def hash(self) -> str:
        return content_hash(self.raw)


def load_config(path) -> ExperimentConfig:
    """Load and validate a JSON config; ``path`` may name a shipped config
    (``"illustrative"`` or ``"building"``)."""
    p = Path(path)
    if not p.exists():
        shipped = resources.files("rsmpc") / "configs" / f"{path}.json"
        if shipped.is_file():
            return ExperimentConfig(json.loads(shipped.read_text()), None)
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return ExperimentConfig(raw, p)


def shipped_config(name) -> ExperimentConfig:
    return load_config(name)


# ------------------------------------------------------------ building blocks
def build_system(cfg: ExperimentConfig, alpha=None, p=None) -> UncertainLTISystem:
    s = cfg.raw["system"]
    alpha = cfg.alpha if alpha is None else alpha
    p_x = cfg.p_x if p is None else p
    A = [np.array(a, dtype=float) for a in s["A"]]
    B = [np.array(b, dtype=float) for b in s["B"]]
    n, m = A[0].shape[0], B[0].shape[1]
    Th = Polytope(s["Theta"]["H"], s["Theta"]["h"]).scale(alpha)
    X = Polytope(np.array(s["X"]["H"], float).reshape(-1, n), s["X"]["h"])
    U = Polytope(np.array(s["U"]["H"], float).reshape(-1, m), s["U"]["h"]) \
        if "U" in s else Polytope(np.zeros((0, m)), np.zeros(0))
    return UncertainLTISystem(A, B, Th, X, U, p_x, cfg.p_u(p_x))


def _mean_profile(spec, T):
    kind = spec.get("type", "constant")
    k = np.arange(T)
    if kind == "constant":
        return np.full(T, float(spec.get("value", 0.0)))
    if kind == "sinusoid":
        return float(spec.get("offset", 0.0)) + float(spec["amplitude"]) * \
            np.sin(2 * np.pi * (k + float(spec.get("phase", 0.0)))
                   / float(spec["period"]))
    if kind == "values":
        v = np.asarray(spec["values"], dtype=float)
        return v[np.minimum(k, v.size - 1)]
    raise ConfigError(f"unknown mean profile '{kind}'")


def build_noise(cfg: ExperimentConfig, T=None) -> NoiseModel:
    """Noise model over ``T`` samples (default ``cfg.T + cfg.N``)."""
    nz = cfg.raw["noise"]
    n = len(cfg.raw["system"]["A"][0])
    T = cfg.T + cfg.N if T is None else T
    mean = np.zeros((T, n))
    if "offset" in nz:
        mean += np.asarray(nz["offset"], dtype=float)[None, :]
    fam = nz["family"]
    if "Sigma_w" in nz:
        return NoiseModel(T, n, mean, Sigma_w=np.array(nz["Sigma_w"], float),
                          family=fam)
    if "ar1" in nz:
        S = ar1_covariance(np.array(nz["ar1"]["Sigma_w"], float), T,
                           float(nz["ar1"]["rho"]))
        return NoiseModel(T, n, mean, Sigma_W=S, family=fam)
    ex = nz["exogenous"]
    Bw = np.array(ex["B_w"], dtype=float).reshape(n, -1)
    nw = Bw.shape[1]
    prof = _mean_profile(ex.get("mean", {}), T)
    mean += np.outer(prof, Bw.sum(axis=1)) if nw == 1 else \
        np.einsum("ij,kj->ki", Bw, np.repeat(prof[:, None], nw, axis=1))
    Sw = ar1_covariance(float(ex["std"]) ** 2 * np.eye(nw), T, float(ex["rho"]))
    BW = np.kron(np.eye(T), Bw)
    S = BW @ Sw @ BW.T
    if "process_Sigma" in ex:
        S += np.kron(np.eye(T), np.array(ex["process_Sigma"], float))
    return NoiseModel(T, n, mean, Sigma_W=0.5 * (S + S.T), family=fam)


def theta_bar(cfg: ExperimentConfig, alpha=None) -> np.ndarray:
    est = cfg.raw.get("estimator", {})
    alpha = cfg.alpha if alpha is None else alpha
    tb = np.asarray(est.get("theta_bar", None) if "theta_bar" in est else
                    Polytope(cfg.raw["system"]["Theta"]["H"],
                             cfg.raw["system"]["Theta"]["h"]).chebyshev_center(),
                    dtype=float)
    return alpha * tb


def theta_true(cfg: ExperimentConfig) -> np.ndarray:
    p = len(cfg.raw["system"]["A"]) - 1
    return np.asarray(cfg.raw.get("theta_true", [0.0] * p), dtype=float)


def _gain(cfg, sys, tb):
    g = cfg.raw["controller"].get("gain", {"type": "lqr"})
    kind = g.get("type", "lqr")
    if kind == "lqr":
        at = g.get("at", "estimate")
        th = tb if at == "estimate" else np.asarray(at, dtype=float)
        Q = np.array(g.get("Q", cfg.raw["controller"]["Q"]), float)
        R = np.array(g.get("R", cfg.raw["controller"]["R"]), float)
        K = lqr_gain(sys.A(th), sys.B(th), Q, R)
        return verify_gain(sys, K).K
    if kind == "lmi":
        return synthesize_gain(sys).K
    if kind == "fixed":
        return verify_gain(sys, np.array(g["K"], float)).K
    raise ConfigError(f"unknown gain type '{kind}'")


def _base_set(cfg, sys, K):
    b = cfg.raw["controller"].get("base_set", {"type": "optimized_parallelotope"})
    kind = b.get("type", "optimized_parallelotope")
    if kind == "optimized_parallelotope":
        return optimized_parallelotope(sys.vertex_closed_loops(K),
                                       restarts=int(b.get("restarts", 30)),
                                       seed=int(b.get("seed", 0)))
    if kind == "box":
        return box_base_set(np.asarray(b.get("half_widths", np.ones(sys.n)), float))
    if kind == "constraint_box":
        F = sys.F
        hw = np.array([1.0 / np.max(np.abs(F[:, j])) if np.any(F[:, j]) else 1.0
                       for j in range(sys.n)])
        return box_base_set(hw)
    if kind == "parallelotope":
        return parallelotope(np.array(b["T"], float))
    raise ConfigError(f"unknown base set type '{kind}'")


# ---------------------------------------------------------------- synthesis
@dataclass
class Synthesis:
    """Offline artifacts for one ``(alpha, p)`` cell."""

    sys: UncertainLTISystem
    K: np.ndarray
    Zbar: Polytope
    bounds: VarianceBoundSequence
    tightening: TighteningTable
    terminal: TerminalSet
    P: np.ndarray
    theta_bar: np.ndarray
    noise: NoiseModel
    kind: str = "rsmpc"
    info: dict = field(default_factory=dict)

    @property
    def rprs(self):
        r = self.info.get("rprs", {})
        return build_rprs(self.bounds, r.get("shape", "polytope"), self.sys.p_x,
                          r.get("family", self.noise.family), self.sys.F,
                          self.sys.G, p_u=self.sys.p_u)

    def to_dict(self) -> dict:
        info = {k: v for k, v in self.info.items() if _jsonable(v)}
        return {
            "version": CACHE_VERSION, "kind": self.kind,
            "K": self.K.tolist(), "Zbar": self.Zbar.to_dict(),
            "bounds": self.bounds.bounds.tolist(),
            "bounds_method": self.bounds.method,
            "bounds_info": {k: v for k, v in self.bounds.info.items()
                            if _jsonable(v)},
            "tightening": self.tightening.to_dict(),
            "terminal": self.terminal.to_dict(), "P": self.P.tolist(),
            "theta_bar": self.theta_bar.tolist(), "info": info,
        }


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except (TypeError, ValueError):
        return False


def _from_cache(d, sys, noise) -> Synthesis:
    K = np.array(d["K"], float)
    b = VarianceBoundSequence(np.array(d["bounds"], float), K,
                              d["bounds_method"], d.get("bounds_info", {}))
    tt = d["tightening"]
    table = TighteningTable(np.array(tt["f"], float).reshape(len(tt["f"]), -1),
                            np.array(tt["g"], float).reshape(len(tt["g"]), -1),
                            np.array(tt["empty"], bool))
    info = dict(d.get("info", {}), cache_hit=True)
    return Synthesis(sys, K, Polytope.from_dict(d["Zbar"]), b, table,
                     TerminalSet.from_dict(d["terminal"]),
                     np.array(d["P"], float), np.array(d["theta_bar"], float),
                     noise, d["kind"], info)


def synthesis_key(cfg: ExperimentConfig, alpha, p, kind) -> str:
    parts = {k: cfg.raw[k] for k in ("system", "noise", "controller", "T")}
    parts["estimator"] = cfg.raw.get("estimator", {})
    parts["p_u"] = cfg.raw.get("p_u", "same")
    parts["baseline"] = cfg.raw.get("baseline", {})
    parts.update(alpha=float(alpha), p=float(p), kind=kind,
                 version=CACHE_VERSION)
    return content_hash(parts, 20)


def synthesize(cfg: ExperimentConfig, alpha=None, p=None, kind="rsmpc",
               use_cache=True, n_jobs=1) -> Synthesis:
    """Run (or load) the offline pipeline.

    ``kind="rsmpc"`` uses ``alpha * Theta``; ``kind="smpc"`` is the
    mismatch-unaware baseline whose model is the singleton ``{theta_bar}``
    (or the ``baseline.theta`` override).
    """
    alpha = cfg.alpha if alpha is None else float(alpha)
    p = cfg.p_x if p is None else float(p)
    sys_r = build_system(cfg, alpha, p)
    tb = theta_bar(cfg, alpha)
    if kind == "smpc":
        bl = cfg.raw.get("baseline", {})
        tbase = np.asarray(bl["theta"], float) if "theta" in bl else tb
        sys = sys_r.nominal(tbase)
        tb = tbase
    elif kind == "rsmpc":
        sys = sys_r
    else:
        raise ConfigError(f"unknown controller kind '{kind}'")
    noise = build_noise(cfg)
    cache = cfg.cache_dir if use_cache else None
    key = synthesis_key(cfg, alpha, p, kind)
    if cache is not None:
        f = cache / f"synth-{key}.json"
        if f.exists():
            log.info("cache hit %s", f)
            return _from_cache(json.loads(f.read_text()), sys, noise)
    t0 = time.perf_counter()
    ctl = cfg.raw["controller"]
    K = _gain(cfg, sys, tb)
    Zbar = _base_set(cfg, sys, K)
    rp = ctl.get("rprs", {})
    bounds, bounds_hit = _variance_bounds(cfg, sys, K, noise, alpha, kind,
                                          cache, n_jobs)
    for k, ld in enumerate(bounds.logdets(), start=1):
        log.info("k=%d log det Vbar_k = %.6f", k, ld)
    shape = rp.get("shape", "polytope")
    family = rp.get("family", noise.family)
    rprs = build_rprs(bounds, shape, sys.p_x, family, sys.F, sys.G, p_u=sys.p_u)
    table = tighten(sys.X, sys.U, rprs, K)
    if table.empty.any():
        from .errors import TerminalSetEmpty

        raise TerminalSetEmpty("a tightened constraint set is empty at steps "
                               f"{np.flatnonzero(table.empty).tolist()}")
    mu = noise.mean
    mv = _box_corners(mu.min(axis=0), mu.max(axis=0))
    term = ctl.get("terminal", {})
    ts = terminal_set(sys, K, Zbar, table.f_max, table.g_max, mean_vertices=mv,
                      max_iter=int(term.get("max_iter", 50)))
    Q = np.array(ctl["Q"], float)
    R = np.array(ctl["R"], float)
    P = terminal_weight(sys, K, Q, R)
    info = {"rprs": {"shape": shape, "family": family}, "alpha": alpha, "p": p,
            "seconds": time.perf_counter() - t0, "key": key, "cache_hit": False,
            "logdets": bounds.logdets().tolist(), "bounds_cache_hit": bounds_hit}
    syn = Synthesis(sys, K, Zbar, bounds, table, ts, P, np.atleast_1d(tb),
                    noise, kind, info)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        f = cache / f"synth-{key}.json"
        tmp = f.with_suffix(".tmp")
        tmp.write_text(json.dumps(syn.to_dict()))
        tmp.replace(f)
    return syn


def _variance_bounds(cfg, sys, K, noise, alpha, kind, cache, n_jobs):
    """Variance bounds, cached separately: they do not depend on ``p``."""
    rp = cfg.raw["controller"].get("rprs", {})
    objective = rp.get("objective", "logdet")
    parts = {k: cfg.raw[k] for k in ("system", "noise", "T")}
    parts.update(gain=cfg.raw["controller"].get("gain", {}),
                 Q=cfg.raw["controller"]["Q"], R=cfg.raw["controller"]["R"],
                 N=cfg.N, objective=objective, horizon=rp.get("horizon"),
                 estimator=cfg.raw.get("estimator", {}),
                 baseline=cfg.raw.get("baseline", {}) if kind == "smpc" else {},
                 alpha=float(alpha), kind=kind, version=CACHE_VERSION)
    key = content_hash(parts, 20)
    f = None if cache is None else cache / f"bounds-{key}.json"
    if f is not None and f.exists():
        d = json.loads(f.read_text())
        log.info("cache hit %s", f)
        return VarianceBoundSequence(np.array(d["bounds"], float), K,
                                     d["method"], d.get("info", {})), True
    if noise.iid:
        bounds = iid_variance_bounds(sys, K, noise.Sigma_w, noise.T,
                                     objective=objective)
    else:
        Tb = int(rp.get("horizon") or noise.T)
        bounds = correlated_variance_bounds(
            sys, K, noise.Sigma_W[:Tb * sys.n, :Tb * sys.n], Tb,
            objective=objective, n_jobs=n_jobs)
    if f is not None:
        cache.mkdir(parents=True, exist_ok=True)
        info = {k: v for k, v in bounds.info.items() if _jsonable(v)}
        tmp = f.with_suffix(".tmp")
        tmp.write_text(json.dumps({"bounds": bounds.bounds.tolist(),
                                   "method": bounds.method, "info": info}))
        tmp.replace(f)
    return bounds, False


def _box_corners(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    free = np.flatnonzero(hi - lo > 1e-12)
    base = lo.copy()
    corners = []
    for bits in range(2 ** free.size):
        c = base.copy()
        for j, idx in enumerate(free):
            if bits >> j & 1:
                c[idx] = hi[idx]
        corners.append(c)
    return np.array(corners)


def make_controller(cfg: ExperimentConfig, syn: Synthesis) -> RobustStochasticMPC:
    ctl = cfg.raw["controller"]
    mc = MPCConfig(N=int(ctl["N"]), Q=np.array(ctl["Q"], float),
                   R=np.array(ctl["R"], float), P=syn.P, K=syn.K,
                   Zbar=syn.Zbar, tightening=syn.tightening,
                   terminal=syn.terminal, mean=syn.noise.mean,
                   input_l1=float(ctl.get("input_l1", 0.0)),
                   tube_weight=float(ctl.get("tube_weight", 0.0)),
                   input_offset=None if "input_offset" not in ctl else
                   np.asarray(ctl["input_offset"], float)[None, :],
                   solver=dict(ctl.get("solver", {})))
    return RobustStochasticMPC(syn.sys, mc)


def make_estimator(cfg: ExperimentConfig, syn: Synthesis):
    est = cfg.raw.get("estimator", {})
    if est.get("type", "constant") == "rls":
        return ProjectedRLS(syn.sys, syn.theta_bar, P0=float(est.get("P0", 1e3)),
                            forgetting=float(est.get("forgetting", 1.0)),
                            mean=syn.noise.mean)
    return ConstantEstimator(syn.theta_bar, syn.sys.Theta)


# ------------------------------------------------------------------ running
def run_seed(cfg: ExperimentConfig, syn: Synthesis, seed, plant_sys=None,
             theta=None, diagnostics=False, check_candidate=False,
             controller=None):
    """One closed-loop run; the noise realization depends only on ``seed``."""
    ctl = controller or make_controller(cfg, syn)
    est = make_estimator(cfg, syn)
    W = sample_noise(syn.noise, seed)
    th = theta_true(cfg) if theta is None else np.asarray(theta, float)
    plant = plant_sys
    if plant is None:
        if syn.kind == "smpc":
            # the baseline controller knows only {theta_bar}; the plant is
            # the true uncertain system
            bl = cfg.raw.get("baseline", {})
            if theta is None and "theta_true" in bl:
                th = np.asarray(bl["theta_true"], float)
            plant = build_system(cfg, syn.info.get("alpha", cfg.alpha),
                                 syn.info.get("p", cfg.p_x))
        else:
            plant = syn.sys
    if not plant.Theta.contains(th, 1e-9):
        plant = plant.nominal(th)
    return run_closed_loop(syn.sys, th, ctl, est, W, cfg.T, cfg.x0, seed=seed,
                           diagnostics=diagnostics,
                           check_candidate=check_candidate, plant_sys=plant)


def run_seeds(cfg, syn, seeds, **kw):
    ctl = make_controller(cfg, syn)
    return [run_seed(cfg, syn, s, controller=ctl, **kw) for s in seeds]


def run_cell(cfg: ExperimentConfig, alpha, p, seeds, kind="rsmpc",
             use_cache=True, n_jobs=1, **kw):
    """Synthesize and simulate one grid cell, splitting seeds over workers."""
    syn = synthesize(cfg, alpha, p, kind, use_cache=use_cache)
    seeds = list(seeds)
    if n_jobs == 1 or len(seeds) < 2:
        return syn, run_seeds(cfg, syn, seeds, **kw)
    from joblib import Parallel, delayed

    chunks = [seeds[i::n_jobs] for i in range(n_jobs)]
    parts = Parallel(n_jobs=n_jobs)(
        delayed(run_seeds)(cfg, syn, c, **kw) for c in chunks if c)
    traces = sorted((t for part in parts for t in part), key=lambda t: t.seed)
    return syn, traces


# ------------------------------------------------------------------ outputs
def trace_filename(cfg: ExperimentConfig, kind, alpha, p, seed) -> str:
    return f"{cfg.name}-{cfg.hash()}-{kind}-a{alpha:g}-p{p:g}-seed{seed}.csv"


def write_traces(cfg, traces, kind, alpha, p, out_dir: Path):
    from .sim import trace_to_csv

    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for tr in traces:
        f = out_dir / trace_filename(cfg, kind, alpha, p, tr.seed)
        f.write_text(trace_to_csv(tr))
        paths.append(f)
    return paths


def summarize(traces, rows=None) -> dict:
    """JSON-ready summary of a set of traces."""
    from .sim import empirical_satisfaction

    halted = [t.seed for t in traces if t.halted]
    d = {"n_runs": len(traces), "halted_seeds": halted,
         "statuses": sorted({t.status[-1] for t in traces if t.status}),
         "mean_cost": float(np.mean([t.total_cost for t in traces]))}
    if len(halted) < len(traces):
        sat = empirical_satisfaction(traces, rows)
        d.update(N_c=sat.N_c, N_c_per_step=sat.per_step.tolist(),
                 n_used=sat.n_used)
    else:
        d.update(N_c=None, N_c_per_step=[], n_used=0)
    return d


def sweep_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """The config the sweep cells run with.

    A sweep block with ``"p_u": "same"`` ties the input level to the swept
    state level instead of the config's fixed ``p_u``.
    """
    if cfg.raw.get("sweep", {}).get("p_u") == "same":
        return cfg.with_overrides(p_u="same")
    return cfg


def sweep(cfg: ExperimentConfig, n_jobs=1, use_cache=True, out_dir=None,
          write_trace_files=False, progress=None) -> list:
    """Run the ``alpha x p`` grid; returns one row per cell.

    Each row holds the RSMPC satisfaction and cost and, when the baseline
    is enabled for the cell, the baseline satisfaction and the paired
    percentage cost increase (mean, std, mean -/+ 2 std). A cell that fails
    during synthesis is recorded with its error instead of aborting the
    sweep.
    """
    from .errors import RSMPCError
    from .sim import cost_increase_stats

    sw = cfg.raw.get("sweep", {})
    cfg = sweep_config(cfg)
    alphas = sw.get("alpha", [cfg.alpha])
    ps = sw.get("p", [cfg.p_x])
    base_on = bool(sw.get("baseline", False))
    cells = sw.get("baseline_cells")
    seeds = cfg.seeds
    rows = []
    for a in alphas:
        for p in ps:
            row = {"alpha": float(a), "p": float(p), "seeds": len(seeds)}
            try:
                syn, tr = run_cell(cfg, a, p, seeds, "rsmpc", use_cache, n_jobs)
                s = summarize(tr)
                row.update(rsmpc_N_c=s["N_c"], rsmpc_halted=len(s["halted_seeds"]),
                           rsmpc_cost=s["mean_cost"])
                if out_dir is not None and write_trace_files:
                    write_traces(cfg, tr, "rsmpc", a, p, Path(out_dir))
                want = base_on and (cells is None or
                                    any(np.allclose(c, [a, p]) for c in cells))
                if want:
                    _, bt = run_cell(cfg, a, p, seeds, "smpc", use_cache, n_jobs)
                    b = summarize(bt)
                    row.update(smpc_N_c=b["N_c"],
                               smpc_halted=len(b["halted_seeds"]),
                               smpc_cost=b["mean_cost"])
                    ok_r = [t for t in tr if not t.halted]
                    ok_b = {t.seed for t in bt if not t.halted}
                    pair_r = [t for t in ok_r if t.seed in ok_b]
                    pair_b = [t for t in bt if t.seed in {x.seed for x in pair_r}]
                    if pair_r:
                        st = cost_increase_stats(pair_r, pair_b)
                        row.update(cost_increase_mean=st["mean"],
                                   cost_increase_std=st["std"],
                                   cost_increase_lower=st["lower"],
                                   cost_increase_upper=st["upper"])
                    if out_dir is not None and write_trace_files:
                        write_traces(cfg, bt, "smpc", a, p, Path(out_dir))
            except RSMPCError as exc:
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            if progress:
                progress(row)
    return rows


def write_table(rows, path_base: Path):
    """Write the sweep table as ``<base>.csv`` and ``<base>.json``."""
    import csv

    path_base.parent.mkdir(parents=True, exist_ok=True)
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path_base.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    path_base.with_suffix(".json").write_text(json.dumps(rows, indent=1))
