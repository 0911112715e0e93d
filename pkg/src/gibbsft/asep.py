"""Asymmetric simple exclusion on a ring in continuous time.

Each bond ``(i, i+1)`` carries a unit-rate clock; at a tick a particle on
``i`` moves right with probability ``p`` if ``i+1`` is empty, a particle on
``i+1`` moves left with probability ``q`` if ``i`` is empty. With
``E = ln(p/q)`` every jump contributes ``+-E`` to the entropy production, so
the EP rate is the field times the particle current.

The simulation aggregates the ``ell`` clocks into a single rate-``ell``
Poisson stream with a uniform bond choice (exact, not a time discretisation).
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .core import CapacityError, IntegrityError, StatisticalInsufficiency, as_generator
from .ldp import MIN_BLOCKS, WindowSamples, empirical_scgf
from .spectral import perron

CHUNK = 1 << 20
SECTOR_CAP = 5000
E_TOL = 1e-14


@dataclass(frozen=True)
class AsepParams:
    p: float
    q: float
    E: float = field(init=False)

    def __post_init__(self):
        if not (0 < self.p < 1 and 0 < self.q < 1):
            raise ValueError(f"p and q must lie strictly in (0, 1), got p={self.p}, q={self.q}")
        object.__setattr__(self, "E", math.log(self.p / self.q))

    @classmethod
    def from_field(cls, E: float) -> "AsepParams":
        """``p = 1/(1+e^{-E})``, ``q = 1-p``, hence ``p - q = tanh(E/2)``."""
        p = 1.0 / (1.0 + math.exp(-E))
        return cls(p, 1.0 - p)

    def swapped(self) -> "AsepParams":
        return AsepParams(self.q, self.p)


@dataclass(frozen=True, eq=False)
class AsepState:
    occupancy: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=np.int8, copy=True)
        if occ.ndim != 1 or occ.size < 2:
            raise ValueError("occupancy must be a 1-d array over a ring of length >= 2")
        if not np.isin(occ, (0, 1)).all():
            raise ValueError("occupancy entries must be 0 or 1")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @property
    def ell(self) -> int:
        return int(self.occupancy.size)

    @property
    def n_particles(self) -> int:
        return int(self.occupancy.sum())

    @property
    def density(self) -> float:
        return self.n_particles / self.ell

    def __eq__(self, other):
        return isinstance(other, AsepState) and np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self):
        return hash(self.occupancy.tobytes())


@dataclass(frozen=True, eq=False)
class EventLog:
    """Exchanges only: ``direction`` +1 moves a particle from ``bond`` to ``bond+1``."""

    times: np.ndarray
    bonds: np.ndarray
    directions: np.ndarray
    horizon: float
    initial: AsepState
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        b = np.asarray(self.bonds, dtype=np.int64)
        d = np.asarray(self.directions, dtype=np.int8)
        if not (t.shape == b.shape == d.shape) or t.ndim != 1:
            raise ValueError("times, bonds and directions must be 1-d arrays of equal length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > self.horizon):
            raise ValueError("event times must be strictly increasing inside [0, horizon]")
        if not np.isin(d, (-1, 1)).all():
            raise ValueError("directions must be +1 or -1")
        if b.size and (b.min() < 0 or b.max() >= self.initial.ell):
            raise ValueError("bond index outside the ring")
        for name, arr in (("times", t), ("bonds", b), ("directions", d)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def ell(self) -> int:
        return self.initial.ell

    @property
    def right(self) -> int:
        return int(np.count_nonzero(self.directions == 1))

    @property
    def left(self) -> int:
        return int(np.count_nonzero(self.directions == -1))

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def replay(self) -> AsepState:
        """Rebuild the final state, checking that every event moves a real
        particle into a hole (exclusion and conservation)."""
        occ = self.initial.occupancy.copy()
        ell = occ.size
        for k, (i, d) in enumerate(zip(self.bonds, self.directions)):
            j = (i + 1) % ell
            src, dst = (i, j) if d == 1 else (j, i)
            if occ[src] != 1 or occ[dst] != 0:
                raise IntegrityError(f"event {k} at bond {i} direction {d} is not a legal exchange")
            occ[src], occ[dst] = 0, 1
        return AsepState(occ)


@dataclass(frozen=True)
class JumpCounts:
    """Counts-only summary of a run (enough for current, EP and conductivity)."""

    right: int
    left: int
    horizon: float
    ell: int
    n_particles: int


def _uniform_state(ell: int, n_particles: int, gen: np.random.Generator) -> np.ndarray:
    occ = np.zeros(ell, dtype=np.int8)
    occ[gen.permutation(ell)[:n_particles]] = 1
    return occ


def _advance(params: AsepParams, occ: np.ndarray, duration: float, gen, record: bool):
    """Run ``duration`` time units in place; returns (times, bonds, dirs, signed, total)."""
    ell = occ.size
    t = 0.0
    signed = total = 0
    pieces = []
    while True:
        dt = gen.exponential(1.0 / ell, CHUNK)
        bu = gen.random(CHUNK)
        cu = gen.random(CHUNK)
        times, bonds, dirs, k, t, used, s, n = _kernels.asep_run(
            occ, params.p, params.q, dt, bu, cu, t, duration, record
        )
        signed += s
        total += n
        if record and k:
            pieces.append((times[:k].copy(), bonds[:k].copy(), dirs[:k].copy()))
        if used < CHUNK:
            break
    if record and pieces:
        cat = [np.concatenate(x) for x in zip(*pieces)]
    else:
        cat = [np.empty(0), np.empty(0, np.int64), np.empty(0, np.int8)]
    return cat[0], cat[1], cat[2], signed, total


def _check_args(ell: int, n_particles: int, horizon: float):
    if ell < 2:
        raise ValueError("ring length must be >= 2")
    if not 0 <= n_particles <= ell:
        raise ValueError(f"n_particles must lie in [0, {ell}]")
    if not horizon > 0:
        raise ValueError("horizon must be > 0")


def _start(ell, n_particles, gen, burn_in, params, init):
    occ = _uniform_state(ell, n_particles, gen) if init is None else np.array(init, dtype=np.int8)
    burn_in = 10.0 * ell * ell if burn_in is None else float(burn_in)
    if burn_in > 0 and 0 < n_particles < ell:
        _advance(params, occ, burn_in, gen, record=False)
    return occ, burn_in


def simulate(
    params: AsepParams,
    ell: int,
    n_particles: int,
    horizon: float,
    rng,
    burn_in: float | None = None,
) -> EventLog:
    """Event log of a stationary run at fixed particle number.

    Starts from a uniformly random arrangement and discards ``burn_in`` time
    units (default ``10 ell^2``) before the clock is reset to zero.
    """
    _check_args(ell, n_particles, horizon)
    gen = as_generator(rng)
    occ, burn_in = _start(ell, n_particles, gen, burn_in, params, None)
    initial = AsepState(occ.copy())
    if 0 < n_particles < ell:
        times, bonds, dirs, _, _ = _advance(params, occ, horizon, gen, record=True)
    else:
        times, bonds, dirs = np.empty(0), np.empty(0, np.int64), np.empty(0, np.int8)
    meta = {"p": params.p, "q": params.q, "E": params.E, "burn_in": burn_in}
    return EventLog(times, bonds, dirs, float(horizon), initial, meta)


def count_jumps(
    params: AsepParams,
    ell: int,
    n_particles: int | None,
    horizon: float,
    rng,
    density: float | None = None,
    burn_in: float | None = None,
) -> JumpCounts:
    """Counts-only run. With ``density`` instead of ``n_particles`` the
    initial state is a Bernoulli product measure, which is stationary, so no
    burn-in is applied unless asked for."""
    gen = as_generator(rng)
    if (n_particles is None) == (density is None):
        raise ValueError("give exactly one of n_particles or density")
    if density is not None:
        if not 0 <= density <= 1:
            raise ValueError("density must lie in [0, 1]")
        occ = (gen.random(ell) < density).astype(np.int8)
        n_particles = int(occ.sum())
        _check_args(ell, n_particles, horizon)
        occ, _ = _start(ell, n_particles, gen, burn_in or 0.0, params, occ)
    else:
        _check_args(ell, n_particles, horizon)
        occ, _ = _start(ell, n_particles, gen, burn_in, params, None)
    if 0 < n_particles < ell:
        _, _, _, signed, total = _advance(params, occ, horizon, gen, record=False)
    else:
        signed = total = 0
    right = (total + signed) // 2
    return JumpCounts(int(right), int(total - right), float(horizon), ell, n_particles)


def product_replicas(params: AsepParams, ell: int, density: float, horizon: float, streams) -> list[JumpCounts]:
    """Independent runs from Bernoulli(``density``) product states, one per stream."""
    return [count_jumps(params, ell, None, horizon, s, density=density) for s in streams]


def _counts(log) -> tuple[int, int, float, int]:
    if not log.horizon > 0:
        raise ValueError("horizon must be > 0")
    return log.right, log.left, log.horizon, log.ell


def mean_current(log, ell: int | None = None) -> float:
    r, l, T, L = _counts(log)
    return (r - l) / ((ell or L) * T)


def entropy_production_rate(log, params: AsepParams, ell: int | None = None) -> float:
    return params.E * mean_current(log, ell)


def conductivity(log, params: AsepParams, ell: int | None = None) -> float:
    """Equilibrium jump rate per bond, ``mu(J_0^2)`` at ``E = 0``; tends to u(1-u).

    Each bond flips at rate ``p P(10) + q P(01) = u(1-u)`` when ``p = q = 1/2``.
    """
    if abs(params.p - 0.5) > E_TOL or abs(params.q - 0.5) > E_TOL:
        raise ValueError(f"conductivity needs p = q = 1/2 (E = 0); got p={params.p}, q={params.q}")
    r, l, T, L = _counts(log)
    return (r + l) / ((ell or L) * T)


def replica_mean(values) -> tuple[float, float]:
    """Mean and standard error across independent replicas."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise StatisticalInsufficiency("need at least 2 replicas for an error bar")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def block_sums(log: EventLog, params: AsepParams, block_time: float) -> WindowSamples:
    """``W_k = E * (signed jumps in [k tau, (k+1) tau))`` over whole blocks."""
    n_blocks = int(math.floor(log.horizon / block_time + 1e-12))
    if n_blocks < MIN_BLOCKS:
        raise ValueError(
            f"horizon {log.horizon} holds {n_blocks} blocks of {block_time}; need >= {MIN_BLOCKS}"
        )
    idx = np.floor(log.times / block_time).astype(np.int64)
    keep = idx < n_blocks
    signed = np.bincount(idx[keep], weights=log.directions[keep].astype(float), minlength=n_blocks)
    meta = {"model": "asep", "block_time": block_time, "ell": log.ell}
    return WindowSamples(params.E * signed, block_time, None, meta)


def scgf_from_jumps(log: EventLog, params: AsepParams, block_time: float, lambdas):
    """Empirical SCGF per unit time from the event log."""
    curve = empirical_scgf(block_sums(log, params, block_time), lambdas)
    curve.meta["model"] = "asep"
    return curve


# ---- exact tilted generator on a fixed-particle sector ----


def sector_states(ell: int, n_particles: int) -> np.ndarray:
    size = math.comb(ell, n_particles)
    if size > SECTOR_CAP:
        raise CapacityError(f"sector C({ell},{n_particles}) = {size} exceeds {SECTOR_CAP}")
    out = np.zeros((size, ell), dtype=np.int8)
    for k, sites in enumerate(itertools.combinations(range(ell), n_particles)):
        out[k, list(sites)] = 1
    return out


def tilted_generator(params: AsepParams, ell: int, n_particles: int, lam: float) -> np.ndarray:
    """``G[a, b]``: rate from ``b`` to ``a`` weighted by ``exp(-lam * E * d)``,
    diagonal minus the escape rate. Column convention as for Markov kernels."""
    states = sector_states(ell, n_particles)
    index = {s.tobytes(): k for k, s in enumerate(states)}
    n = len(states)
    G = np.zeros((n, n))
    w_right = params.p * math.exp(-lam * params.E)
    w_left = params.q * math.exp(lam * params.E)
    for b, s in enumerate(states):
        for i in range(ell):
            j = (i + 1) % ell
            if s[i] == s[j]:
                continue
            t = s.copy()
            t[i], t[j] = s[j], s[i]
            a = index[t.tobytes()]
            if s[i] == 1:
                G[a, b] += w_right
                G[b, b] -= params.p
            else:
                G[a, b] += w_left
                G[b, b] -= params.q
    return G


def exact_scgf(params: AsepParams, ell: int, n_particles: int, lam: float) -> float:
    """``-(top eigenvalue)`` of the tilted generator, via shifted power iteration."""
    G = tilted_generator(params, ell, n_particles, lam)
    if G.shape[0] == 1:
        return float(-G[0, 0])
    shift = float(-np.diag(G).min()) + 1.0
    r = perron(G + shift * np.eye(G.shape[0])).radius
    return float(shift - r)


def exact_block_scgf(params: AsepParams, ell: int, n_particles: int, lam: float, block_time: float) -> float:
    """Finite-time oracle ``-(1/tau) ln E_unif[exp(-lam W_tau)]``."""
    G = tilted_generator(params, ell, n_particles, lam)
    n = G.shape[0]
    v = np.full(n, 1.0 / n)
    return float(-math.log(expm(block_time * G).dot(v).sum()) / block_time)


def stationary_current(params: AsepParams, ell: int, n_particles: int) -> float:
    """Exact current per bond at fixed particle number (uniform law on the sector)."""
    if ell < 2:
        raise ValueError("ring length must be >= 2")
    pair = n_particles * (ell - n_particles) / (ell * (ell - 1))
    return (params.p - params.q) * pair


# ---- persistence ----


def save_log(log: EventLog, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "bond", "direction"])
        for t, b, d in zip(log.times, log.bonds, log.directions):
            w.writerow([repr(float(t)), int(b), int(d)])


def load_log(path, initial: AsepState, horizon: float) -> EventLog:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IntegrityError(f"cannot read event log {path}: {exc}") from exc
    if not rows or rows[0] != ["time", "bond", "direction"]:
        raise IntegrityError(f"{path}: header must be time,bond,direction")
    try:
        data = [(float(t), int(b), int(d)) for t, b, d in rows[1:]]
    except ValueError as exc:
        raise IntegrityError(f"{path}: malformed row ({exc})") from exc
    arr = list(zip(*data)) if data else [[], [], []]
    try:
        return EventLog(np.array(arr[0]), np.array(arr[1]), np.array(arr[2]), horizon, initial)
    except ValueError as exc:
        raise IntegrityError(f"{path}: {exc}") from exc


def write_summary(path, params: AsepParams, ell: int, n_particles: int, horizon: float, estimates: dict) -> None:
    """Estimates map name -> (value, standard error)."""
    doc = {
        "params": {"p": params.p, "q": params.q, "E": params.E},
        "ell": ell,
        "u": n_particles / ell,
        "horizon": horizon,
        "estimates": {k: {"value": v, "std_error": e} for k, (v, e) in sorted(estimates.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
