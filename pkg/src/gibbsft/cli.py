"""Config-driven experiment runner: ``gibbsft run`` and ``gibbsft replay``.

A run is fixed by its YAML manifest and seed. Simulation writes window-sum
samples; every reported number is computed from those samples (or from exact
oracles), so ``replay`` can redo the analysis without touching the RNG.

Exit codes: 0 all verdicts pass, 2 some verdict failed, 1 configuration,
integrity or numerical error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import asep, gibbs1d, ldp, markov, pca
from .core import (
    RNG_FAMILY,
    CapacityError,
    IntegrityError,
    NumericalFailure,
    RngStream,
    SpaceTimeWindow,
    StatisticalInsufficiency,
)

MODELS = ("markov", "ising", "pca", "asep")
EXACT_PCA_RING = 12
SAMPLE_HEADER_ASEP = ["block", "block_time", "signed", "total"]


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# ---------------------------------------------------------------- schema


@dataclass(frozen=True)
class MarkovModel:
    kernel: list | None = None
    n_states: int | None = None
    chain_file: str | None = None


@dataclass(frozen=True)
class IsingModel:
    beta: float = 1.0
    coupling: float = 0.0
    field: float = 0.0


@dataclass(frozen=True)
class RuleSpec:
    preset: str = "glauber"
    p: float = 0.5
    K: float = 0.0
    h: float = 0.0
    drive: float = 0.0
    eps: float = 0.1


@dataclass(frozen=True)
class PcaModel:
    L: int = 4
    rule: RuleSpec = field(default_factory=RuleSpec)
    rule_file: str | None = None


@dataclass(frozen=True)
class AsepModel:
    ell: int = 6
    n_particles: int = 3
    p: float | None = None
    q: float | None = None
    E: float | None = None
    horizon: float = 1e4


@dataclass(frozen=True)
class WindowSpec:
    L: int = 0
    N: int = 5
    spans_ring: bool = True


@dataclass(frozen=True)
class Analysis:
    mode: str = "both"
    lambdas: Any = None
    w_points: int = 101
    n_blocks: int = 1000
    block_length: int = 100
    window: WindowSpec = field(default_factory=WindowSpec)
    block_time: float = 10.0
    burn_in: float | None = None
    n_sigma: float = 3.0
    min_ess: float = 30.0
    rel_tol: float = 0.02


# keys that change what gets simulated; replay refuses to override them
SAMPLING_KEYS = {"n_blocks", "block_length", "window", "block_time", "burn_in"}

MODEL_TYPES = {"markov": MarkovModel, "ising": IsingModel, "pca": PcaModel, "asep": AsepModel}


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    params: Any
    analysis: Analysis = field(default_factory=Analysis)
    seed: int = 0
    replicas: int = 1
    workers: int = 1
    plots: bool = False
    out: str | None = None

    def to_dict(self) -> dict:
        d = {
            "model": self.model,
            self.model: dataclasses.asdict(self.params),
            "analysis": dataclasses.asdict(self.analysis),
            "seed": self.seed,
            "replicas": self.replicas,
            "workers": self.workers,
            "plots": self.plots,
        }
        if self.out is not None:
            d["out"] = self.out
        return d

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out", None)
        d.pop("workers", None)  # scheduling only; results do not depend on it
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _coerce(value, typ, key):
    if typ in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if typ in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if typ in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if typ in (str, "str"):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    return value


def _field_type(f: dataclasses.Field):
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    return t.split("|")[0].strip()


def _build(cls, data, key: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(key, f"expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{key}.{unknown[0]}" if key else unknown[0], "unknown key")
    kwargs = {}
    for name, value in data.items():
        sub = f"{key}.{name}" if key else name
        t = _field_type(fields[name])
        if value is None:
            kwargs[name] = None
        elif t in ("RuleSpec", "WindowSpec"):
            kwargs[name] = _build(RuleSpec if t == "RuleSpec" else WindowSpec, value, sub)
        elif t == "list":
            if not isinstance(value, list):
                raise ConfigError(sub, "expected a list")
            kwargs[name] = value
        else:
            kwargs[name] = _coerce(value, t, sub)
    return cls(**kwargs)


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    model = data.get("model")
    if model not in MODELS:
        raise ConfigError("model", f"must be one of {', '.join(MODELS)}, got {model!r}")
    top = {"model", "analysis", "seed", "replicas", "workers", "plots", "out", model}
    unknown = sorted(set(data) - top)
    if unknown:
        extra = unknown[0]
        why = "block for a different model" if extra in MODELS else "unknown key"
        raise ConfigError(extra, why)
    params = _build(MODEL_TYPES[model], data.get(model), model)
    analysis = _build(Analysis, data.get("analysis"), "analysis")
    seed = _coerce(data.get("seed", 0), int, "seed")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    replicas = _coerce(data.get("replicas", 1), int, "replicas")
    workers = _coerce(data.get("workers", 1), int, "workers")
    if replicas < 1:
        raise ConfigError("replicas", "must be >= 1")
    if workers < 1:
        raise ConfigError("workers", "must be >= 1")
    cfg = ExperimentConfig(
        model,
        params,
        analysis,
        seed,
        replicas,
        workers,
        _coerce(data.get("plots", False), bool, "plots"),
        data.get("out"),
    )
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML ({exc})") from exc
    return parse_config(data)


def _lambda_grid(cfg: ExperimentConfig) -> np.ndarray:
    lam = cfg.analysis.lambdas
    if lam is None:
        c = cfg.params.field if cfg.model == "ising" else 0.5
        return np.round(c + np.linspace(-1.5, 1.5, 31), 12)
    if isinstance(lam, dict):
        unknown = sorted(set(lam) - {"start", "stop", "num"})
        if unknown:
            raise ConfigError(f"analysis.lambdas.{unknown[0]}", "unknown key")
        start = _coerce(lam.get("start", -1.0), float, "analysis.lambdas.start")
        stop = _coerce(lam.get("stop", 2.0), float, "analysis.lambdas.stop")
        num = _coerce(lam.get("num", 31), int, "analysis.lambdas.num")
        if num < 3:
            raise ConfigError("analysis.lambdas.num", "need at least 3 points")
        return np.round(np.linspace(start, stop, num), 12)
    if isinstance(lam, list):
        if len(lam) < 3:
            raise ConfigError("analysis.lambdas", "need at least 3 points")
        return np.array([_coerce(v, float, "analysis.lambdas") for v in lam])
    raise ConfigError("analysis.lambdas", "expected a list or {start, stop, num}")


def _center(cfg: ExperimentConfig) -> float:
    return cfg.params.field if cfg.model == "ising" else 0.5


def _chain(m: MarkovModel) -> markov.MarkovChain:
    try:
        if m.chain_file is not None:
            if m.kernel is not None:
                raise ConfigError("markov", "give either kernel or chain_file, not both")
            return markov.load_chain(m.chain_file)
        if m.kernel is None:
            raise ConfigError("markov.kernel", "missing")
        n = m.n_states if m.n_states is not None else len(m.kernel)
        return markov.chain_from_mapping({"n_states": n, "kernel": m.kernel})
    except markov.ChainValidationError as exc:
        raise ConfigError("markov.kernel", str(exc)) from exc
    except (OSError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("markov.chain_file" if m.chain_file else "markov.kernel", str(exc)) from exc


def _rule(m: PcaModel) -> pca.PcaRule:
    if m.rule_file is not None:
        try:
            return pca.load_rule(m.rule_file)
        except (OSError, ValueError) as exc:
            raise ConfigError("pca.rule_file", str(exc)) from exc
    r = m.rule
    try:
        if r.preset == "free":
            return pca.free(r.p)
        if r.preset == "glauber":
            return pca.glauber(r.K, r.h, r.drive)
        if r.preset == "majority":
            return pca.majority(r.eps)
    except ValueError as exc:
        raise ConfigError("pca.rule", str(exc)) from exc
    raise ConfigError("pca.rule.preset", f"must be free, glauber or majority, got {r.preset!r}")


def _asep_params(m: AsepModel) -> asep.AsepParams:
    try:
        if m.E is not None:
            if m.p is not None or m.q is not None:
                raise ConfigError("asep.E", "give either E or (p, q), not both")
            return asep.AsepParams.from_field(m.E)
        if m.p is None or m.q is None:
            raise ConfigError("asep.p", "need p and q (or E)")
        return asep.AsepParams(m.p, m.q)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("asep.p", str(exc)) from exc


def _window(cfg: ExperimentConfig) -> SpaceTimeWindow:
    w = cfg.analysis.window
    L = cfg.params.L if w.spans_ring else w.L
    try:
        win = SpaceTimeWindow(L, w.N, w.spans_ring)
    except ValueError as exc:
        raise ConfigError("analysis.window", str(exc)) from exc
    if not w.spans_ring and 2 * w.L + 1 > cfg.params.L:
        raise ConfigError("analysis.window.L", f"window of {2 * w.L + 1} sites exceeds ring of {cfg.params.L}")
    return win


def _validate(cfg: ExperimentConfig) -> None:
    """Run every owning-module validator before anything is simulated."""
    a = cfg.analysis
    if a.mode not in ("exact", "simulated", "both"):
        raise ConfigError("analysis.mode", f"must be exact, simulated or both, got {a.mode!r}")
    if a.w_points < 3:
        raise ConfigError("analysis.w_points", "need at least 3 points")
    if a.n_sigma <= 0:
        raise ConfigError("analysis.n_sigma", "must be > 0")
    lam = _lambda_grid(cfg)
    try:
        ldp._mirror_index(lam, _center(cfg))
    except ValueError as exc:
        raise ConfigError("analysis.lambdas", str(exc)) from exc
    simulated = a.mode != "exact"
    if simulated and cfg.model != "ising":
        if a.n_blocks * cfg.replicas < ldp.MIN_BLOCKS:
            raise ConfigError("analysis.n_blocks", f"need n_blocks * replicas >= {ldp.MIN_BLOCKS}")
    if cfg.model == "markov":
        _chain(cfg.params)
        if a.block_length < 1:
            raise ConfigError("analysis.block_length", "must be >= 1")
    elif cfg.model == "ising":
        try:
            gibbs1d.IsingSpec(cfg.params.beta, cfg.params.coupling, cfg.params.field)
        except ValueError as exc:
            raise ConfigError("ising.beta", str(exc)) from exc
    elif cfg.model == "pca":
        _rule(cfg.params)
        if cfg.params.L < 3:
            raise ConfigError("pca.L", "ring needs at least 3 sites")
        _window(cfg)
    else:
        m = cfg.params
        _asep_params(m)
        if m.ell < 2:
            raise ConfigError("asep.ell", "must be >= 2")
        if not 0 <= m.n_particles <= m.ell:
            raise ConfigError("asep.n_particles", f"must lie in [0, {m.ell}]")
        if not m.horizon > 0:
            raise ConfigError("asep.horizon", "must be > 0")
        if a.block_time <= 0:
            raise ConfigError("analysis.block_time", "must be > 0")
        if simulated and m.horizon < ldp.MIN_BLOCKS * a.block_time:
            raise ConfigError("asep.horizon", f"must be >= {ldp.MIN_BLOCKS} * analysis.block_time")


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class Row:
    quantity: str
    value: float
    std_error: float
    method: str
    provenance: str


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, quantity, value, std_error, method, provenance):
        if method not in ("exact", "simulated"):
            raise ValueError(f"method must be exact or simulated, got {method!r}")
        if method == "exact" and std_error != 0:
            raise ValueError(f"exact row {quantity} must carry std_error 0")
        if method == "simulated" and not std_error > 0:
            raise StatisticalInsufficiency(f"simulated row {quantity} has zero standard error")
        self.rows.append(Row(quantity, float(value), float(std_error), method, provenance))

    def get(self, quantity) -> Row:
        for r in self.rows:
            if r.quantity == quantity:
                return r
        raise KeyError(quantity)


def _num(x):
    x = float(x)
    return None if not math.isfinite(x) else x


@dataclass
class Outcome:
    table: ResultTable
    verdicts: list
    curves: dict
    rates: dict
    extra: dict

    def passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts)


def _verdict(name, passed, **detail):
    return {"name": name, "passed": bool(passed), **{k: _num(v) if isinstance(v, (float, np.floating)) else v for k, v in detail.items()}}


# ---------------------------------------------------------------- simulation


def _simulate_replica(cfg: ExperimentConfig, stream: RngStream):
    a = cfg.analysis
    if cfg.model == "markov":
        chain = _chain(cfg.params)
        J = markov.sample_current(chain, a.n_blocks * a.block_length, stream)
        return J.reshape(a.n_blocks, a.block_length).sum(axis=1)
    if cfg.model == "pca":
        burn = None if a.burn_in is None else int(a.burn_in)
        s = pca.sample_window_sums(_rule(cfg.params), cfg.params.L, _window(cfg), a.n_blocks, stream, burn_in=burn)
        return s.sums
    m = cfg.params
    params = _asep_params(m)
    log = asep.simulate(params, m.ell, m.n_particles, m.horizon, stream, burn_in=a.burn_in)
    n_blocks = int(math.floor(m.horizon / a.block_time + 1e-12))
    idx = np.floor(log.times / a.block_time).astype(np.int64)
    keep = idx < n_blocks
    signed = np.bincount(idx[keep], weights=log.directions[keep], minlength=n_blocks).astype(np.int64)
    total = np.bincount(idx[keep], minlength=n_blocks).astype(np.int64)
    return np.stack([signed, total], axis=1)


def simulate_all(cfg: ExperimentConfig) -> list:
    streams = RngStream(cfg.seed).spawn(cfg.replicas)
    if cfg.workers == 1 or cfg.replicas == 1:
        return [_simulate_replica(cfg, s) for s in streams]
    with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.replicas)) as pool:
        # map yields in submission order, so merging is replica-ordered
        return list(pool.map(_simulate_replica, [cfg] * len(streams), streams))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_replica_samples(cfg: ExperimentConfig, samples: list, out: Path) -> None:
    d = out / "samples"
    d.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for k, arr in enumerate(samples):
        path = d / f"replica_{k:03d}.csv"
        if cfg.model == "asep":
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(SAMPLE_HEADER_ASEP)
                for b, (sg, tot) in enumerate(arr):
                    w.writerow([b, repr(float(cfg.analysis.block_time)), int(sg), int(tot)])
        else:
            bl = cfg.analysis.window.N * 2 + 1 if cfg.model == "pca" else cfg.analysis.block_length
            ldp.save_samples(ldp.WindowSamples(arr, bl), path)
        manifest[path.name] = {"rows": int(len(arr)), "sha256": _sha256(path)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_replica_samples(cfg: ExperimentConfig, out: Path) -> list:
    d = out / "samples"
    mpath = d / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{mpath}: {exc}") from exc
    if len(manifest) != cfg.replicas:
        raise IntegrityError(f"{mpath}: lists {len(manifest)} replicas, config says {cfg.replicas}")
    result = []
    for k in range(cfg.replicas):
        name = f"replica_{k:03d}.csv"
        path = d / name
        if name not in manifest:
            raise IntegrityError(f"{mpath}: no entry for {name}")
        if not path.exists():
            raise IntegrityError(f"{path}: missing")
        if _sha256(path) != manifest[name]["sha256"]:
            raise IntegrityError(f"{path}: checksum mismatch (truncated or modified)")
        if cfg.model == "asep":
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
            if not rows or rows[0] != SAMPLE_HEADER_ASEP:
                raise IntegrityError(f"{path}: missing or malformed header")
            try:
                arr = np.array([[int(r[2]), int(r[3])] for r in rows[1:]], dtype=np.int64).reshape(-1, 2)
            except (ValueError, IndexError) as exc:
                raise IntegrityError(f"{path}: corrupt row ({exc})") from exc
        else:
            arr = ldp.load_samples(path).sums
        if len(arr) != manifest[name]["rows"]:
            raise IntegrityError(f"{path}: row count differs from manifest")
        result.append(arr)
    return result


# ---------------------------------------------------------------- analysis


def _merged(samples: list, block_length: float) -> ldp.WindowSamples:
    return ldp.WindowSamples(np.concatenate(samples), block_length)


def _exact_curve_checks(cfg, curve, verdicts, rates, name="exact"):
    c = _center(cfg)
    rep = ldp.symmetry_report(curve, center=c, n_sigma=cfg.analysis.n_sigma, atol=1e-10)
    verdicts.append(_verdict(f"gc_symmetry_{name}", rep.passed, max_abs_defect=rep.max_abs_defect, tolerance=1e-10))
    ws = ldp.default_w_grid(curve, cfg.analysis.w_points)
    rf = ldp.legendre(curve, ws)
    rs = ldp.rate_symmetry(rf, scale=2 * c, factor=2.0)
    verdicts.append(_verdict(f"rate_symmetry_{name}", rs.passed, max_abs_residual=rs.max_abs_residual, tolerance=rs.tolerance))
    rates[name] = (rf, rs)
    return rep


def _empirical_checks(cfg, curve, verdicts):
    rep = ldp.symmetry_report(curve, center=_center(cfg), n_sigma=cfg.analysis.n_sigma, atol=1e-12)
    verdicts.append(_verdict("gc_symmetry_empirical", rep.passed, max_abs_defect=rep.max_abs_defect, n_excluded=int(rep.excluded.sum())))


def _within(name, sim, err, exact, n_sigma, verdicts, rel_tol=0.0):
    dev = abs(sim - exact)
    ok = dev <= n_sigma * err + rel_tol * abs(exact)
    verdicts.append(_verdict(name, ok, deviation=dev, std_error=err, n_sigma=n_sigma))


def _block_mean(sums: np.ndarray, block_length: float) -> tuple[float, float]:
    per = sums / block_length
    return float(per.mean()), float(per.std(ddof=1) / math.sqrt(per.size))


def analyse(cfg: ExperimentConfig, samples: list | None) -> Outcome:
    a = cfg.analysis
    lam = _lambda_grid(cfg)
    table = ResultTable()
    verdicts: list = []
    curves: dict = {}
    rates: dict = {}
    extra: dict = {}
    exact = a.mode in ("exact", "both")
    simulated = a.mode in ("simulated", "both") and cfg.model != "ising"
    if simulated and samples is None:
        raise IntegrityError("analysis needs samples but none were produced or found")

    if cfg.model == "markov":
        chain = _chain(cfg.params)
        ep = markov.entropy_production(chain)
        if exact:
            table.add("entropy_production", ep, 0.0, "exact", "relative-entropy form")
            table.add("mean_current", markov.mean_current(chain), 0.0, "exact", "stationary double sum")
            curves["exact"] = markov.scgf_curve(chain, lam)
            _exact_curve_checks(cfg, curves["exact"], verdicts, rates)
        if simulated:
            ws = _merged(samples, a.block_length)
            m, e = _block_mean(ws.sums, a.block_length)
            table.add("entropy_production", m, e, "simulated", f"{ws.n_blocks} blocks of {a.block_length}")
            curves["empirical"] = ldp.empirical_scgf(ws, lam, a.min_ess)
            _empirical_checks(cfg, curves["empirical"], verdicts)
            _within("entropy_production_vs_exact", m, e, ep, a.n_sigma, verdicts)

    elif cfg.model == "ising":
        p = cfg.params
        spec = gibbs1d.IsingSpec(p.beta, p.coupling, p.field)
        table.add("pressure", gibbs1d.pressure(spec), 0.0, "exact", "transfer matrix")
        table.add("magnetization", gibbs1d.magnetization(spec), 0.0, "exact", "dominant eigenvector")
        table.add("relative_entropy_density", gibbs1d.relative_entropy_density(spec), 0.0, "exact", "2 beta E m")
        curves["exact"] = gibbs1d.tilted_curve(spec, lam)
        _exact_curve_checks(cfg, curves["exact"], verdicts, rates)
        if p.field == 0:
            resp, corr = gibbs1d.green_kubo_check(spec)
            table.add("response_dm_dE", resp, 0.0, "exact", "central difference of m")
            table.add("correlation_sum", corr, 0.0, "exact", "beta sum_x mu(s_0 s_x)")
            verdicts.append(_verdict("green_kubo", abs(resp - corr) <= 1e-6, deviation=abs(resp - corr), tolerance=1e-6))

    elif cfg.model == "pca":
        rule = _rule(cfg.params)
        L = cfg.params.L
        win = _window(cfg)
        have_exact = exact and L <= EXACT_PCA_RING
        if have_exact:
            ep = pca.stationary_entropy_production(rule, L)
            table.add("entropy_production", ep, 0.0, "exact", f"ring chain, 2^{L} states")
            vals = np.array([pca.exact_scgf_ring(rule, L, x) for x in lam])
            curves["exact"] = ldp.ScgfCurve(lam, vals, meta={"source": "exact", "model": "pca"})
            _exact_curve_checks(cfg, curves["exact"], verdicts, rates)
        elif exact:
            extra["exact_skipped"] = f"ring of {L} sites exceeds the exact limit {EXACT_PCA_RING}"
        if simulated:
            ws = _merged(samples, win.width)
            m, e = _block_mean(ws.sums, win.width)
            table.add("mean_window_current", m, e, "simulated", f"{ws.n_blocks} windows of {win.width} steps")
            curves["empirical"] = ldp.empirical_scgf(ws, lam, a.min_ess)
            if win.spans_ring:
                _empirical_checks(cfg, curves["empirical"], verdicts)
                if have_exact:
                    emp, ex = curves["empirical"], curves["exact"]
                    ok = ~emp.clipped
                    dev = np.abs(emp.values - ex.values)[ok]
                    bound = (a.n_sigma * emp.errors + a.rel_tol * np.abs(ex.values))[ok]
                    verdicts.append(_verdict("oracle_agreement", bool((dev <= bound).all()), max_deviation=float(dev.max())))

    else:
        m = cfg.params
        params = _asep_params(m)
        active = 0 < m.n_particles < m.ell
        exact_current = asep.stationary_current(params, m.ell, m.n_particles)
        if exact:
            table.add("mean_current", exact_current, 0.0, "exact", "uniform law on the sector")
            try:
                vals = np.array([asep.exact_scgf(params, m.ell, m.n_particles, x) for x in lam])
                curves["exact"] = ldp.ScgfCurve(lam, vals, meta={"source": "exact", "model": "asep"})
                _exact_curve_checks(cfg, curves["exact"], verdicts, rates)
            except CapacityError as exc:
                extra["exact_skipped"] = str(exc)
        if simulated:
            arr = np.concatenate(samples)
            tau = a.block_time
            n_rep = len(samples)
            if active:
                per_rep = [s[:, 0].sum() / (m.ell * tau * len(s)) for s in samples]
                if n_rep >= 2:
                    cur, cur_err = asep.replica_mean(per_rep)
                else:
                    cur, cur_err = _block_mean(arr[:, 0].astype(float), m.ell * tau)
                table.add("mean_current", cur, cur_err, "simulated", f"{n_rep} replicas x {len(samples[0])} blocks")
                if params.E == 0:
                    table.add("entropy_production_rate", 0.0, 0.0, "exact", "zero field")
                else:
                    table.add("entropy_production_rate", params.E * cur, abs(params.E) * cur_err, "simulated", "E x mean_current")
                if params.p == params.q == 0.5:
                    jr = arr[:, 1].astype(float)
                    cm, ce = _block_mean(jr, m.ell * tau)
                    table.add("conductivity", cm, ce, "simulated", "equilibrium jump rate per bond")
                _within("mean_current_vs_exact", cur, cur_err, exact_current, a.n_sigma, verdicts)
                ws = ldp.WindowSamples(params.E * arr[:, 0].astype(float), tau)
                curves["empirical"] = ldp.empirical_scgf(ws, lam, a.min_ess)
                _empirical_checks(cfg, curves["empirical"], verdicts)
            else:
                table.add("mean_current", 0.0, 0.0, "exact", "no active bonds (empty or full ring)")
    return Outcome(table, verdicts, curves, rates, extra)


# ---------------------------------------------------------------- output


def _curve_records(curve: ldp.ScgfCurve):
    return [
        {"lambda": _num(l), "value": _num(v), "std_error": _num(e), "clipped": bool(c)}
        for l, v, e, c in zip(curve.lambdas, curve.values, curve.errors, curve.clipped)
    ]


def _rate_records(rf: ldp.RateFunction, rs: ldp.RateSymmetryReport):
    return [
        {"w": _num(w), "i": _num(i), "residual": _num(r), "boundary": bool(b)}
        for w, i, r, b in zip(rf.ws, rf.values, rs.residuals, rf.boundary)
    ]


def _write_table(path: Path, records: list, fmt: str) -> None:
    if fmt == "json":
        path.with_suffix(".json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
        return
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        if not records:
            return
        keys = list(records[0])
        w = csv.writer(fh)
        w.writerow(keys)
        for r in records:
            w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in keys])


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(cfg: ExperimentConfig, outcome: Outcome, out: Path, fmt: str) -> str:
    out.mkdir(parents=True, exist_ok=True)
    quantities = [
        {"quantity": r.quantity, "value": _num(r.value), "std_error": _num(r.std_error), "method": r.method, "provenance": r.provenance}
        for r in outcome.table.rows
    ]
    results = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "model": cfg.model,
        "quantities": quantities,
        "verdicts": outcome.verdicts,
    }
    (out / "results.json").write_text(_dumps(results))
    _write_table(out / "quantities", quantities, fmt)
    for name, curve in outcome.curves.items():
        _write_table(out / f"scgf_{name}", _curve_records(curve), fmt)
    for name, (rf, rs) in outcome.rates.items():
        _write_table(out / f"rate_{name}", _rate_records(rf, rs), fmt)
    report = {
        "config_hash": cfg.hash(),
        "model": cfg.model,
        "seed": cfg.seed,
        "replicas": cfg.replicas,
        "passed": outcome.passed(),
        "verdicts": outcome.verdicts,
        "quantities": [{k: q[k] for k in ("quantity", "method", "value", "std_error")} for q in quantities],
        "notes": outcome.extra,
    }
    text = _dumps(report)
    (out / "report.json").write_text(text)
    if cfg.plots:
        _plots(cfg, outcome, out)
    return hashlib.sha256(text.encode()).hexdigest()


def _plots(cfg: ExperimentConfig, outcome: Outcome, out: Path) -> None:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = cfg.hash()
    c = _center(cfg)
    if outcome.curves:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for name, curve in sorted(outcome.curves.items()):
            ok = ~curve.clipped
            ax.errorbar(curve.lambdas[ok], curve.values[ok], curve.errors[ok], fmt="o-" if name == "empirical" else "-", ms=3, label=f"e(λ) {name}")
            ax.plot(2 * c - curve.lambdas[ok], curve.values[ok], "--", label=f"mirror {name}")
        ax.set_xlabel("λ")
        ax.set_ylabel("e(λ)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "scgf.svg", metadata={"Date": None})
        plt.close(fig)
    for name, (rf, _) in sorted(outcome.rates.items()):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(rf.ws, rf.values, label="i(w)")
        ax.plot(rf.ws, rf.values[::-1] - 2 * c * rf.ws, "--", label="i(-w) - 2c w")
        ax.set_xlabel("w")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"rate_{name}.svg", metadata={"Date": None})
        plt.close(fig)


def _metadata(cfg: ExperimentConfig, extra: dict) -> dict:
    import numba
    import scipy

    from . import __version__

    return {
        "config_hash": cfg.hash(),
        "rng_family": RNG_FAMILY,
        "versions": {
            "gibbsft": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
        **extra,
    }


def _simulated(cfg: ExperimentConfig) -> bool:
    return cfg.analysis.mode != "exact" and cfg.model != "ising"


def run(cfg: ExperimentConfig, out: Path, fmt: str = "csv") -> tuple[Outcome, str]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    samples = None
    if _simulated(cfg):
        samples = simulate_all(cfg)
        save_replica_samples(cfg, samples, out)
        # analyse what was persisted, so run and replay see identical inputs
        samples = load_replica_samples(cfg, out)
    outcome = analyse(cfg, samples)
    digest = write_outputs(cfg, outcome, out, fmt)
    (out / "metadata.json").write_text(_dumps(_metadata(cfg, {"command": "run", "report_sha256": digest})))
    return outcome, digest


def _apply_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    if parts[0] != "analysis" or len(parts) < 2:
        raise ConfigError(key, "replay only accepts analysis.* overrides")
    if parts[1] in SAMPLING_KEYS:
        raise ConfigError(key, "changes the simulation; replay cannot override sampling keys")
    node = data.setdefault("analysis", {})
    for p in parts[1:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = yaml.safe_load(raw)


def replay(run_dir: Path, overrides: list[str] | None = None, out: Path | None = None, fmt: str = "csv") -> tuple[Outcome, str, bool]:
    cpath = run_dir / "config.yaml"
    try:
        data = yaml.safe_load(cpath.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise IntegrityError(f"{cpath}: {exc}") from exc
    for o in overrides or []:
        _apply_override(data, o)
    cfg = parse_config(data)
    samples = load_replica_samples(cfg, run_dir) if _simulated(cfg) else None
    outcome = analyse(cfg, samples)
    out = out or (run_dir / "replay")
    digest = write_outputs(cfg, outcome, out, fmt)
    rpath = run_dir / "report.json"
    try:
        original = hashlib.sha256(rpath.read_bytes()).hexdigest()
    except OSError as exc:
        raise IntegrityError(f"{rpath}: {exc}") from exc
    (out / "metadata.json").write_text(_dumps(_metadata(cfg, {"command": "replay", "source": str(run_dir), "report_sha256": digest})))
    return outcome, digest, digest == original


def _print_outcome(outcome: Outcome, digest: str) -> None:
    for r in outcome.table.rows:
        print(f"{r.quantity} = {r.value:.6g} ± {r.std_error:.2g} [{r.method}]")
    for v in outcome.verdicts:
        print(f"{'PASS' if v['passed'] else 'FAIL'} {v['name']}")
    print(f"report sha256 {digest}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gibbsft", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="simulate and analyse one manifest")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--replicas", type=int)
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    p = sub.add_parser("replay", help="recompute the analysis of a finished run")
    p.add_argument("run_dir")
    p.add_argument("overrides", nargs="*", help="analysis.key=value")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            changes = {}
            if args.seed is not None:
                changes["seed"] = args.seed
            if args.replicas is not None:
                changes["replicas"] = args.replicas
            if changes:
                cfg = parse_config({**cfg.to_dict(), **changes})
            out = args.out or cfg.out
            if out is None:
                raise ConfigError("out", "no output directory (use --out or the out key)")
            outcome, digest = run(cfg, Path(out), args.format)
            _print_outcome(outcome, digest)
        else:
            outcome, digest, same = replay(Path(args.run_dir), args.overrides, Path(args.out) if args.out else None, args.format)
            _print_outcome(outcome, digest)
            print(f"report identical to original: {'yes' if same else 'no'}")
            if not same and not args.overrides:
                raise IntegrityError(f"{args.run_dir}/report.json: replayed report differs")
    except (ConfigError, IntegrityError, NumericalFailure, CapacityError, StatisticalInsufficiency, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if outcome.passed() else 2


if __name__ == "__main__":
    sys.exit(main())
