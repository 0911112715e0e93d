"""Perron-Frobenius power iteration for entrywise nonnegative, primitive matrices."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .core import NumericalFailure

REL_TOL = 1e-13
MAX_ITER = 100_000


class Perron(NamedTuple):
    radius: float
    vector: np.ndarray
    bracket: float
    iterations: int


def perron(M: np.ndarray, tol: float = REL_TOL, max_iter: int = MAX_ITER, x0=None) -> Perron:
    """Dominant eigenvalue and positive right eigenvector of ``M``.

    Stops on the Collatz-Wielandt bracket
    ``min_i (Mx)_i/x_i <= r <= max_i (Mx)_i/x_i``, so the reported relative
    bracket width is a rigorous error bound on ``r``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("perron needs a square matrix")
    if (M < 0).any():
        raise ValueError("perron needs an entrywise nonnegative matrix")
    n = M.shape[0]
    x = np.full(n, 1.0 / n) if x0 is None else np.asarray(x0, dtype=float) / np.sum(x0)
    width = np.inf
    for it in range(1, max_iter + 1):
        y = M @ x
        if (y <= 0).any():
            # not primitive from this start; square up until it is
            raise NumericalFailure("power iteration hit a non-positive iterate", np.inf)
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        width = (hi - lo) / hi
        s = y.sum()
        x = y / s
        if width <= tol:
            return Perron(0.5 * (lo + hi), x, width, it)
    raise NumericalFailure(f"power iteration did not converge in {max_iter} steps", width)


def log_radius(M: np.ndarray, tol: float = REL_TOL, max_iter: int = MAX_ITER) -> float:
    """``ln r(M)``, rescaling first so huge or tiny entries cannot overflow."""
    M = np.asarray(M, dtype=float)
    scale = M.max()
    return float(np.log(perron(M / scale, tol, max_iter).radius) + np.log(scale))
