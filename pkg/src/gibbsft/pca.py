"""Nearest-neighbour probabilistic cellular automata on an Ising ring.

Single-site probabilities ``p(a | l, c, r)`` with ``0 < p < 1`` define a
parallel-update Markov chain. Its time-reversal current is

    J_{i,n} = ln p(s(i,n) | s(., n-1)) - ln p(s(i,n-1) | s(., n)),

and the ring-level sum of ``J`` is exactly the Markov entropy-production
current of the chain on full configurations, which gives an exact tilted
operator for small rings.
"""
from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .core import (
    ISING,
    CapacityError,
    NumericalFailure,
    SpaceTimeWindow,
    SpinConfig,
    Trajectory,
    UnsupportedAlphabetError,
    as_generator,
)
from .ldp import WindowSamples
from .markov import MarkovChain
from .spectral import log_radius

STATE_CAP = 2**16
DENSE_CAP = 2**12
PROB_TOL = 1e-12
TRAJ_MAGIC = b"PCAT"
TRAJ_VERSION = 1
_HEADER = struct.Struct("<4sIII")

NEIGHBOURHOODS = list(itertools.product(ISING, repeat=3))


def _idx(s: int) -> int:
    return 0 if s == 1 else 1


@dataclass(frozen=True, eq=False)
class PcaRule:
    """``p_plus[l, c, r]`` = Prob[+1 | l, c, r] with 0 indexing +1 and 1 indexing -1."""

    p_plus: np.ndarray
    name: str = "custom"
    alphabet: tuple = ISING

    def __post_init__(self):
        if tuple(self.alphabet) != ISING:
            raise UnsupportedAlphabetError(f"only the Ising alphabet {ISING} is supported")
        p = np.array(self.p_plus, dtype=float, copy=True)
        if p.shape != (2, 2, 2):
            raise ValueError("p_plus must have shape (2, 2, 2)")
        if not ((p > 0) & (p < 1)).all():
            raise ValueError("every rule probability must lie strictly inside (0, 1)")
        p.setflags(write=False)
        object.__setattr__(self, "p_plus", p)

    @property
    def logp(self) -> np.ndarray:
        """``logp[a, l, c, r]`` = ln p(a | l, c, r)."""
        return np.log(np.stack([self.p_plus, 1.0 - self.p_plus]))

    def prob(self, a: int, l: int, c: int, r: int) -> float:
        p = self.p_plus[_idx(l), _idx(c), _idx(r)]
        return float(p if a == 1 else 1.0 - p)

    def table(self) -> dict:
        return {nb: (self.prob(1, *nb), self.prob(-1, *nb)) for nb in NEIGHBOURHOODS}

    def log_range(self) -> float:
        """Spread of ``-ln p`` over the table; bounds every local energy change."""
        lp = self.logp
        return float(lp.max() - lp.min())

    @classmethod
    def from_table(cls, table: dict, name: str = "custom") -> "PcaRule":
        p = np.empty((2, 2, 2))
        seen = set()
        for nb, vec in table.items():
            nb = tuple(int(v) for v in nb)
            if nb not in NEIGHBOURHOODS:
                raise ValueError(f"unknown neighbourhood {nb}")
            vec = [float(v) for v in vec]
            if len(vec) != 2 or abs(sum(vec) - 1.0) > PROB_TOL:
                raise ValueError(f"probabilities for neighbourhood {nb} must be two numbers summing to 1")
            p[_idx(nb[0]), _idx(nb[1]), _idx(nb[2])] = vec[0]
            seen.add(nb)
        if len(seen) != 8:
            missing = sorted(set(NEIGHBOURHOODS) - seen)
            raise ValueError(f"rule table misses neighbourhoods {missing}")
        return cls(p, name)


def free(p: float = 0.5) -> PcaRule:
    """Neighbour-independent rule: every site is +1 with probability ``p``."""
    return PcaRule(np.full((2, 2, 2), p), f"free({p})")


def glauber(K: float, h: float = 0.0, drive: float = 0.0) -> PcaRule:
    """``p(a|l,c,r) ~ exp[a((K + drive) l + (K - drive) r + h)]``.

    With ``drive = 0`` the parallel dynamics is reversible (symmetric
    couplings); a nonzero ``drive`` makes the coupling chiral and the chain
    produces entropy.
    """
    p = np.empty((2, 2, 2))
    for l, c, r in NEIGHBOURHOODS:
        f = (K + drive) * l + (K - drive) * r + h
        p[_idx(l), _idx(c), _idx(r)] = 1.0 / (1.0 + math.exp(-2.0 * f))
    return PcaRule(p, f"glauber(K={K}, h={h}, drive={drive})")


def majority(eps: float) -> PcaRule:
    """Copy the local majority of (l, c, r), except with probability ``eps``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    p = np.empty((2, 2, 2))
    for l, c, r in NEIGHBOURHOODS:
        p[_idx(l), _idx(c), _idx(r)] = 1.0 - eps if l + c + r > 0 else eps
    return PcaRule(p, f"majority({eps})")


def load_rule(path) -> PcaRule:
    """YAML mapping ``"l,c,r"`` (e.g. ``"+1,-1,+1"``) to ``[p(+1), p(-1)]``."""
    import yaml

    data = yaml.safe_load(Path(path).read_text())
    table = {tuple(int(v) for v in str(k).split(",")): v for k, v in data.items()}
    return PcaRule.from_table(table, name=Path(path).stem)


def save_rule(rule: PcaRule, path) -> None:
    import yaml

    out = {",".join(f"{v:+d}" for v in nb): [float(a), float(b)] for nb, (a, b) in rule.table().items()}
    Path(path).write_text(yaml.safe_dump(out, sort_keys=True))


def save_trajectory(t: Trajectory, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRAJ_MAGIC, TRAJ_VERSION, t.L, t.T))
        fh.write(np.ascontiguousarray(t.frames, dtype=np.int8).tobytes())


def load_trajectory(path) -> Trajectory:
    from .core import IntegrityError

    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{Path(path).name}: truncated header")
    magic, version, L, T = _HEADER.unpack_from(raw)
    if magic != TRAJ_MAGIC or version != TRAJ_VERSION:
        raise IntegrityError(f"{Path(path).name}: bad magic or version")
    body = raw[_HEADER.size:]
    if len(body) != L * T:
        raise IntegrityError(f"{Path(path).name}: expected {L * T} spin bytes, found {len(body)}")
    return Trajectory(np.frombuffer(body, dtype=np.int8).reshape(T, L))


def random_config(L: int, rng) -> SpinConfig:
    gen = as_generator(rng)
    return SpinConfig(np.where(gen.random(L) < 0.5, 1, -1))


def _run(rule: PcaRule, frame0: np.ndarray, steps: int, gen: np.random.Generator) -> np.ndarray:
    return _kernels.pca_run(rule.p_plus, frame0.astype(np.int8), gen.random((steps, frame0.size)))


def simulate(rule: PcaRule, L: int, T: int, init: SpinConfig | None, rng) -> Trajectory:
    """``T`` frames, each drawn site-independently given the previous one."""
    if L < 3:
        raise ValueError("ring length L must be >= 3 for a radius-1 neighbourhood")
    if T < 2:
        raise ValueError("need T >= 2 frames")
    gen = as_generator(rng)
    if init is None:
        frame0 = np.where(gen.random(L) < 0.5, 1, -1).astype(np.int8)
    else:
        if init.L != L:
            raise ValueError(f"initial configuration has {init.L} sites, ring has {L}")
        frame0 = init.values
    return Trajectory(_run(rule, frame0, T - 1, gen))


@dataclass(frozen=True, eq=False)
class CurrentField:
    """``values[k, i]`` is ``J`` for the transition from frame k to frame k+1."""

    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape


def current_field(rule: PcaRule, t: Trajectory) -> CurrentField:
    if t.T < 2:
        raise ValueError("need at least two frames for a current")
    vals = _kernels.pca_current(rule.logp, np.ascontiguousarray(t.frames))
    return CurrentField(vals, {"rule": rule.name, "L": t.L, "T": t.T})


def _window_columns(ring: int, window: SpaceTimeWindow, center: int) -> np.ndarray:
    if window.spans_ring:
        return np.arange(ring)
    if 2 * window.L - 1 > ring:
        raise ValueError(f"interior of window with L={window.L} wraps a ring of {ring} sites")
    return (center + np.arange(-(window.L - 1), window.L)) % ring


def block_sums(values: np.ndarray, block_len: int, columns=None) -> np.ndarray:
    """Sum ``values`` over ``columns`` and over consecutive rows in blocks."""
    v = values if columns is None else values[:, columns]
    per_row = v.sum(axis=1) if v.ndim == 2 else v
    n_blocks = per_row.size // block_len
    return per_row[: n_blocks * block_len].reshape(n_blocks, block_len).sum(axis=1)


def window_sums(cf: CurrentField, window: SpaceTimeWindow, center: int = 0) -> WindowSamples:
    """Summed current over interior sites ``|i| <= L-1`` (all sites when the
    window spans the ring) in consecutive, non-overlapping blocks of
    ``2N+1`` transitions."""
    rows, ring = cf.values.shape
    if window.width > rows:
        raise ValueError(f"window of {window.width} steps does not fit {rows} transitions")
    cols = _window_columns(ring, window, center)
    sums = block_sums(cf.values, window.width, cols)
    return WindowSamples(sums, window.width, window, {"model": "pca", **cf.provenance})


def sample_window_sums(
    rule: PcaRule,
    L: int,
    window: SpaceTimeWindow,
    n_blocks: int,
    rng,
    burn_in: int | None = None,
    chunk_blocks: int = 4096,
) -> WindowSamples:
    """Stream a stationary run into window sums without keeping the trajectory.

    Starts from a uniform random configuration and discards ``burn_in``
    frames (default ``10 (2N+1)``).
    """
    gen = as_generator(rng)
    burn_in = 10 * window.width if burn_in is None else burn_in
    frame = np.where(gen.random(L) < 0.5, 1, -1).astype(np.int8)
    if burn_in:
        frame = _run(rule, frame, burn_in, gen)[-1]
    cols = _window_columns(L, window, 0)
    out = []
    left = n_blocks
    logp = rule.logp
    while left:
        nb = min(left, chunk_blocks)
        frames = _run(rule, frame, nb * window.width, gen)
        cur = _kernels.pca_current(logp, frames)
        out.append(block_sums(cur, window.width, cols))
        frame = frames[-1]
        left -= nb
    meta = {"model": "pca", "rule": rule.name, "L": L, "burn_in": burn_in}
    return WindowSamples(np.concatenate(out), window.width, window, meta)


def ring_configs(L: int) -> np.ndarray:
    """All ``2**L`` Ising configurations; row ``k`` has site ``i`` = -1 iff bit i of k is set."""
    k = np.arange(2**L)[:, None]
    return np.where((k >> np.arange(L)) & 1, -1, 1).astype(np.int8)


def _site_log_probs(rule: PcaRule, configs: np.ndarray) -> np.ndarray:
    """``out[s, i, a]`` = ln p(a | neighbourhood of site i in config s)."""
    idx = (configs != 1).astype(np.int64)
    l, c, r = np.roll(idx, 1, axis=1), idx, np.roll(idx, -1, axis=1)
    lp = rule.logp
    return np.stack([lp[0][l, c, r], lp[1][l, c, r]], axis=-1)


def ring_log_kernel(rule: PcaRule, L: int) -> np.ndarray:
    """``out[s', s]`` = ln Prob[next = s' | prev = s] on the full ring."""
    configs = ring_configs(L)
    site = _site_log_probs(rule, configs)  # [s, i, a]
    a_idx = (configs != 1).astype(np.int64)  # [s', i]
    M = configs.shape[0]
    out = np.zeros((M, M))
    for i in range(L):
        out += site[:, i, :][:, a_idx[:, i]].T
    return out


def ring_chain(rule: PcaRule, L: int) -> MarkovChain:
    """The PCA as a Markov chain on all ``2**L`` ring configurations."""
    _check_cap(L)
    if 2**L > DENSE_CAP:
        raise CapacityError(f"dense ring chain limited to {DENSE_CAP} states")
    K = np.exp(ring_log_kernel(rule, L))
    return MarkovChain(K / K.sum(axis=0, keepdims=True))


def _check_cap(L: int) -> None:
    if 2**L > STATE_CAP:
        raise CapacityError(f"2**{L} ring configurations exceed the oracle cap of {STATE_CAP}")


def _site_factor(rule: PcaRule, lam: float) -> tuple[np.ndarray, float]:
    """``F[sl, sc, sr, pl, pc, pr] = p(pc|sl,sc,sr)^(1-lam) p(sc|pl,pc,pr)^lam``
    (axis index 0 is +1), scaled so its largest entry is 1."""
    lp = rule.logp  # [a, l, c, r]
    forward = lp.transpose(1, 2, 3, 0)[:, :, :, None, :, None]  # p(pc | sl, sc, sr)
    backward = lp[None, :, None, :, :, :]  # p(sc | pl, pc, pr)
    logF = (1.0 - lam) * forward + lam * backward
    m = float(logF.max())
    return np.exp(logF - m), m


def _tilted_apply(F: np.ndarray, x: np.ndarray, L: int) -> np.ndarray:
    """``y(s') = sum_s prod_i F(s_{i-1..i+1}, s'_{i-1..i+1}) x(s)`` by sweeping
    the ring site by site; the live tensor never exceeds ``2**(L+4)`` entries."""
    S = [f"s{i}" for i in range(L)]
    P = [f"p{i}" for i in range(L)]
    letters = {}

    def sym(name):
        if name not in letters:
            letters[name] = chr(ord("a") + len(letters)) if len(letters) < 26 else chr(ord("A") + len(letters) - 26)
        return letters[name]

    # flat index bit i is site i; C-order reshape puts site L-1 first
    X = x.reshape([2] * L).transpose(list(range(L - 1, -1, -1)))
    labels = list(S)
    uses = {k: 3 for k in range(L)}
    for j in range(L):
        fl = [S[(j - 1) % L], S[j], S[(j + 1) % L], P[(j - 1) % L], P[j], P[(j + 1) % L]]
        for k in ((j - 1) % L, j, (j + 1) % L):
            uses[k] -= 1
        done = {S[k] for k, u in uses.items() if u == 0}
        out = [a for a in dict.fromkeys(labels + fl) if a not in done]
        spec = "".join(sym(a) for a in labels) + "," + "".join(sym(a) for a in fl) + "->" + "".join(sym(a) for a in out)
        X = np.einsum(spec, X, F)
        labels = out
        for k in [k for k, u in uses.items() if u == 0]:
            uses[k] = -1
    order = [labels.index(P[i]) for i in range(L - 1, -1, -1)]
    return np.ascontiguousarray(X.transpose(order)).reshape(-1)


def exact_scgf_ring(rule: PcaRule, L: int, lam: float) -> float:
    """``-ln r(T_lam)`` per unit time for the ring of ``L`` sites, with
    ``T_lam(s'|s) = prod_i p(s'_i|s)^(1-lam) p(s_i|s')^lam``."""
    _check_cap(L)
    if 2**L <= DENSE_CAP:
        logK = ring_log_kernel(rule, L)
        return -log_radius(np.exp((1.0 - lam) * logK + lam * logK.T))
    F, m = _site_factor(rule, lam)
    x = np.full(2**L, 2.0**-L)
    hi = lo = 1.0
    # matrix-free power iteration with the same Collatz-Wielandt stop as perron()
    for _ in range(100_000):
        y = _tilted_apply(F, x, L)
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        x = y / y.sum()
        if (hi - lo) / hi <= 1e-13:
            return -(math.log(0.5 * (lo + hi)) + L * m)
    raise NumericalFailure("matrix-free power iteration did not converge", (hi - lo) / hi)


def exact_block_moment(rule: PcaRule, L: int, lam: float, n_steps: int) -> float:
    """``-(1/n) ln E_stat[exp(-lam W_n)]`` for the full-ring sum over ``n``
    transitions started in the stationary law (finite-``n`` oracle)."""
    chain = ring_chain(rule, L)
    from .markov import stationary

    rho = stationary(chain).probs
    logK = ring_log_kernel(rule, L)
    T = np.exp((1.0 - lam) * logK + lam * logK.T)
    v = rho.copy()
    log_norm = 0.0
    for _ in range(n_steps):
        v = T @ v
        s = v.sum()
        log_norm += math.log(s)
        v /= s
    return -log_norm / n_steps


def defect_constants(rule: PcaRule) -> tuple[float, float]:
    """``(c, c')`` with ``|R - sum J| <= c (2N+1) + c' (2L+1)`` for interior windows.

    Each of the four boundary columns (sites ``+-L``, ``+-(L+1)``) contributes
    at most one log-range per time layer; the two temporal boundary layers and
    the dropped last interior row contribute at most three per interior site.
    """
    d = rule.log_range()
    return 4.0 * d, 3.0 * d


def _energy_terms(logp: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """``-ln p(s(i,n) | s(., n-1))`` for every row n >= 1 of ``frames``."""
    prev = (frames[:-1] != 1).astype(np.int64)
    cur = (frames[1:] != 1).astype(np.int64)
    l, c, r = np.roll(prev, 1, axis=1), prev, np.roll(prev, -1, axis=1)
    return -logp[cur, l, c, r]


def boundary_defect(
    rule: PcaRule,
    t: Trajectory,
    window: SpaceTimeWindow,
    t_center: int | None = None,
    site_center: int = 0,
) -> float:
    """``R_{L,N} - sum J`` for the time reversal of one window.

    ``R = H(pi s) - H(s)`` with ``H = -sum ln p``; the sum of ``J`` runs over
    interior sites and times ``-N+1 .. N-1`` relative to the window centre.
    Needs frames ``t_center - N - 1 .. t_center + N + 1``.
    """
    ring = t.L
    N, Lw = window.N, window.L
    if not window.spans_ring and 2 * Lw + 1 >= ring:
        raise ValueError(
            f"window with L={Lw} touches the seam of a ring of {ring} sites; "
            "use spans_ring=True or exact_scgf_ring"
        )
    tc = N + 1 if t_center is None else t_center
    lo, hi = tc - N - 1, tc + N + 1
    if lo < 0 or hi >= t.T:
        raise ValueError(f"window centred at {tc} needs frames {lo}..{hi}, trajectory has {t.T}")
    patch = np.array(t.frames[lo : hi + 1])
    cols = np.arange(ring) if window.spans_ring else (site_center + np.arange(-Lw, Lw + 1)) % ring
    flipped = patch.copy()
    # patch rows 1 .. 2N+1 hold times -N .. N
    flipped[1:-1][:, cols] = patch[1:-1][::-1][:, cols]
    logp = rule.logp
    R = float(np.sum(_energy_terms(logp, flipped)) - np.sum(_energy_terms(logp, patch)))
    J = _kernels.pca_current(logp, patch)  # row k: transition patch k -> k+1
    inner = np.arange(ring) if window.spans_ring else (site_center + np.arange(-(Lw - 1), Lw)) % ring
    # interior times n = -N+1 .. N-1 are transitions ending at patch rows 2 .. 2N
    return R - float(J[1 : 2 * N, :][:, inner].sum())


def entropy_rate_terms(rule: PcaRule, t: Trajectory) -> dict:
    """Per-site averages along the trajectory of the three pieces of the
    decomposition ``mean J = -(entropy rate) + (backward cross-entropy)``.

    ``conditional_entropy`` averages the exact entropy of ``p(.|s(., n-1))``
    over visited neighbourhoods; ``forward_log`` is the pathwise mean of
    ``ln p(s(i,n)|s(., n-1))`` which estimates minus the same quantity.
    """
    logp = rule.logp
    frames = np.asarray(t.frames)
    prev = (frames[:-1] != 1).astype(np.int64)
    cur = (frames[1:] != 1).astype(np.int64)
    lp_, cp_, rp_ = np.roll(prev, 1, axis=1), prev, np.roll(prev, -1, axis=1)
    lc, cc, rc = np.roll(cur, 1, axis=1), cur, np.roll(cur, -1, axis=1)
    fwd = logp[cur, lp_, cp_, rp_]
    bwd = -logp[prev, lc, cc, rc]
    probs = np.exp(logp)
    ent = -(probs * logp).sum(axis=0)[lp_, cp_, rp_]
    J = fwd + bwd
    n = J.size
    return {
        "mean_current": float(J.mean()),
        "current_stderr": float(J.sum(axis=1).std(ddof=1) / math.sqrt(J.shape[0]) / J.shape[1]),
        "forward_log": float(fwd.mean()),
        "conditional_entropy": float(ent.mean()),
        "backward_cross_entropy": float(bwd.mean()),
        "n_terms": n,
    }


def stationary_entropy_production(rule: PcaRule, L: int) -> float:
    """Exact mean of the ring-summed current per time step."""
    from .markov import entropy_production

    return entropy_production(ring_chain(rule, L))

