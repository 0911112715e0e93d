"""Exact analytics for finite, strictly positive Markov chains.

Convention: ``kernel[a, b] = p(a|b) = Prob[X_n = a | X_{n-1} = b]``, so every
*column* sums to one. This is the only place the convention is fixed; all
validators check it.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import kl_div

from . import _kernels
from .core import NumericalFailure, as_generator
from .spectral import log_radius

COLUMN_TOL = 1e-12
STATIONARY_RESIDUAL = 1e-10


class ChainValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MarkovChain:
    kernel: np.ndarray

    def __post_init__(self):
        K = np.array(self.kernel, dtype=float, copy=True)
        if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 2:
            raise ChainValidationError("kernel must be a square matrix with at least 2 states")
        bad = np.argwhere(~((K > 0) & (K < 1)))
        if bad.size:
            a, b = bad[0]
            raise ChainValidationError(f"kernel entry p({a}|{b}) = {float(K[a, b]):.12g} is not strictly inside (0, 1)")
        sums = K.sum(axis=0)
        off = np.flatnonzero(np.abs(sums - 1) > COLUMN_TOL)
        if off.size:
            b = off[0]
            raise ChainValidationError(f"kernel column {b} sums to {float(sums[b]):.12g}, not 1")
        K.setflags(write=False)
        object.__setattr__(self, "kernel", K)

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    probs: np.ndarray
    residual: float


@dataclass(frozen=True, eq=False)
class TiltedMatrix:
    """Entries ``p(a|b)**(1-lam) * p(b|a)**lam``."""

    lam: float
    entries: np.ndarray


def load_chain(path) -> MarkovChain:
    """Read ``n_states`` and a row-major ``kernel`` from a YAML/JSON file."""
    import yaml

    data = yaml.safe_load(Path(path).read_text())
    return chain_from_mapping(data)


def chain_from_mapping(data) -> MarkovChain:
    if not isinstance(data, dict) or set(data) != {"n_states", "kernel"}:
        raise ChainValidationError("chain file needs exactly the keys 'n_states' and 'kernel'")
    n = int(data["n_states"])
    K = np.asarray(data["kernel"], dtype=float)
    if K.size != n * n:
        raise ChainValidationError(f"kernel has {K.size} entries, expected n_states**2 = {n * n}")
    return MarkovChain(K.reshape(n, n))


def stationary(chain: MarkovChain, max_iter: int = 100_000) -> StationaryDistribution:
    K = chain.kernel
    rho = np.full(chain.n_states, 1.0 / chain.n_states)
    res = np.inf
    for _ in range(max_iter):
        nxt = K @ rho
        nxt /= nxt.sum()
        res = np.abs(nxt - rho).max()
        rho = nxt
        if res <= 1e-16:
            break
    res = float(np.abs(K @ rho - rho).max())
    if res > STATIONARY_RESIDUAL:
        raise NumericalFailure("stationary distribution did not converge", res)
    return StationaryDistribution(rho, res)


def reverse_chain(chain: MarkovChain) -> MarkovChain:
    """Chain with kernel ``q(a|b) = p(b|a) rho(a) / rho(b)``."""
    rho = stationary(chain).probs
    Q = chain.kernel.T * rho[:, None] / rho[None, :]
    return MarkovChain(Q / Q.sum(axis=0, keepdims=True))


def entropy_production(chain: MarkovChain) -> float:
    """``sum_b rho(b) sum_a p(a|b) ln[p(a|b)/q(a|b)]`` (relative-entropy form)."""
    rho = stationary(chain).probs
    K = chain.kernel
    Q = reverse_chain(chain).kernel
    # kl_div adds -p + q, which sums to zero per column but keeps every term >= 0
    return float(np.sum(rho[None, :] * kl_div(K, Q)))


def mean_current(chain: MarkovChain) -> float:
    """Stationary mean of ``ln p(s'|s) - ln p(s|s')`` as a direct double sum."""
    rho = stationary(chain).probs
    K = chain.kernel
    return float(np.sum(rho[None, :] * K * (np.log(K) - np.log(K.T))))


def tilted_matrix(chain: MarkovChain, lam: float) -> TiltedMatrix:
    K = chain.kernel
    return TiltedMatrix(float(lam), K ** (1.0 - lam) * K.T**lam)


def scgf_exact(chain: MarkovChain, lam: float) -> float:
    """``e(lam) = -ln r(M_lam)``; satisfies e(lam) = e(1 - lam) exactly."""
    return -log_radius(tilted_matrix(chain, lam).entries)


def scgf_curve(chain: MarkovChain, lambdas):
    from .ldp import ScgfCurve

    lambdas = np.asarray(lambdas, dtype=float)
    vals = np.array([scgf_exact(chain, lam) for lam in lambdas])
    return ScgfCurve(lambdas, vals, meta={"source": "exact", "model": "markov"})


def sample_path(chain: MarkovChain, n_steps: int, rng) -> np.ndarray:
    """States ``X_0..X_n`` with ``X_0`` drawn from the stationary law."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    gen = as_generator(rng)
    rho = stationary(chain).probs
    x0 = int(gen.choice(chain.n_states, p=rho))
    cum = np.cumsum(chain.kernel, axis=0)
    return _kernels.markov_path(cum, x0, gen.random(n_steps))


def current_along(chain: MarkovChain, path: np.ndarray) -> np.ndarray:
    logK = np.log(chain.kernel)
    prev, nxt = path[:-1], path[1:]
    return logK[nxt, prev] - logK[prev, nxt]


def sample_current(chain: MarkovChain, n_steps: int, rng) -> np.ndarray:
    """``J_1..J_n`` with ``J_n = ln p(X_n|X_{n-1}) - ln p(X_{n-1}|X_n)``."""
    return current_along(chain, sample_path(chain, n_steps, rng))


def is_detailed_balance(chain: MarkovChain, tol: float = 1e-10) -> bool:
    if tol <= 0:
        raise ValueError("tol must be > 0")
    rho = stationary(chain).probs
    flow = chain.kernel * rho[None, :]
    return bool(np.abs(flow - flow.T).max() <= tol)


def three_cycle(forward: float = 0.7, backward: float = 0.2) -> MarkovChain:
    """Ring of 3 states: step forward, back, or stay with the remaining mass."""
    K = np.full((3, 3), 0.0)
    for s in range(3):
        K[(s + 1) % 3, s] = forward
        K[(s - 1) % 3, s] = backward
        K[s, s] = 1.0 - forward - backward
    return MarkovChain(K)


def random_chain(n: int, gen: np.random.Generator, floor: float = 0.05) -> MarkovChain:
    W = floor + gen.random((n, n))
    return MarkovChain(W / W.sum(axis=0, keepdims=True))


def random_reversible_chain(n: int, gen: np.random.Generator, floor: float = 0.05) -> MarkovChain:
    """``p(a|b) = w_ab / sum_a w_ab`` with symmetric ``w`` is reversible."""
    W = floor + gen.random((n, n))
    W = W + W.T
    return MarkovChain(W / W.sum(axis=0, keepdims=True))
