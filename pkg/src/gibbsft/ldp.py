"""Large-deviation analytics shared by every model.

The tilted generating function is ``e(lam) = -(1/n) ln E[exp(-lam W)]`` for
window sums ``W`` of size ``n``. It is concave with ``e(0) = 0``; the
fluctuation symmetry reads ``e(lam) = e(2c - lam)`` for a centre ``c``
(``c = 1/2`` for entropy-production sums).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from .core import SpaceTimeWindow, StatisticalInsufficiency

MIN_BLOCKS = 100
MIN_ESS = 30.0
PAIR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class WindowSamples:
    """One summed current per non-overlapping time block.

    ``block_length`` is the block size in time units (steps for discrete
    time, physical time for ASEP); it is the normalisation of the SCGF.
    """

    sums: np.ndarray
    block_length: float
    window: SpaceTimeWindow | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.sums, dtype=float, copy=True).ravel()
        s.setflags(write=False)
        object.__setattr__(self, "sums", s)
        if self.block_length <= 0:
            raise ValueError("block_length must be > 0")

    @property
    def n_blocks(self) -> int:
        return int(self.sums.size)

    def concat(self, other: "WindowSamples") -> "WindowSamples":
        if other.block_length != self.block_length:
            raise ValueError("cannot merge samples with different block lengths")
        return WindowSamples(np.concatenate([self.sums, other.sums]), self.block_length, self.window, dict(self.meta))


@dataclass(frozen=True, eq=False)
class ScgfCurve:
    lambdas: np.ndarray
    values: np.ndarray
    errors: np.ndarray | None = None
    clipped: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        val = np.asarray(self.values, dtype=float)
        if lam.shape != val.shape or lam.ndim != 1:
            raise ValueError("lambdas and values must be 1-d and of equal length")
        err = np.zeros_like(val) if self.errors is None else np.asarray(self.errors, dtype=float)
        clip = np.zeros(val.shape, bool) if self.clipped is None else np.asarray(self.clipped, dtype=bool)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "errors", err)
        object.__setattr__(self, "clipped", clip)

    def second_differences(self) -> np.ndarray:
        ok = ~self.clipped
        return np.diff(self.values[ok], 2)

    def is_concave(self, tol: float = 1e-10) -> bool:
        return bool((self.second_differences() <= tol).all())

    def value_at(self, lam: float) -> float:
        k = int(np.argmin(np.abs(self.lambdas - lam)))
        if abs(self.lambdas[k] - lam) > PAIR_TOL:
            raise KeyError(f"lambda={lam} not on the grid")
        return float(self.values[k])


@dataclass(frozen=True, eq=False)
class RateFunction:
    ws: np.ndarray
    values: np.ndarray
    boundary: np.ndarray
    tolerance: float
    meta: dict = field(default_factory=dict)


def default_lambda_grid() -> np.ndarray:
    """[-1, 2] in steps of 0.01; symmetric about both 1/2 and the curve ends."""
    return np.round(np.linspace(-1.0, 2.0, 301), 12)


def default_w_grid(curve: ScgfCurve, n: int = 301) -> np.ndarray:
    ok = ~curve.clipped
    slopes = np.gradient(curve.values[ok], curve.lambdas[ok])
    half = 1.5 * float(np.abs(slopes).max())
    if half == 0.0:
        half = 1.0
    return np.linspace(-half, half, n)


def empirical_scgf(samples: WindowSamples, lambdas, min_ess: float = MIN_ESS) -> ScgfCurve:
    """Block estimator in log-sum-exp form with leave-one-out jackknife errors.

    Grid points whose tilted weights have effective sample size below
    ``min_ess`` come back as NaN and are flagged in ``clipped``.
    """
    W = samples.sums
    B = W.size
    if B < MIN_BLOCKS:
        raise ValueError(f"need at least {MIN_BLOCKS} blocks, got {B}")
    n = float(samples.block_length)
    lambdas = np.asarray(lambdas, dtype=float)
    vals = np.empty(lambdas.size)
    errs = np.empty(lambdas.size)
    clipped = np.zeros(lambdas.size, bool)
    for k, lam in enumerate(lambdas):
        if lam == 0.0:
            vals[k] = errs[k] = 0.0
            continue
        a = -lam * W
        m = a.max()
        w = np.exp(a - m)
        S = w.sum()
        ess = S * S / np.dot(w, w)
        if ess < min_ess:
            vals[k] = errs[k] = np.nan
            clipped[k] = True
            continue
        vals[k] = -(m + math.log(S / B)) / n
        loo = (S - w) / (B - 1)
        jk = -(m + np.log(loo)) / n
        errs[k] = math.sqrt((B - 1) / B * np.sum((jk - jk.mean()) ** 2))
    meta = {"source": "empirical", "n_blocks": B, "block_length": n, **samples.meta}
    return ScgfCurve(lambdas, vals, errs, clipped, meta)


def extrapolated_scgf(short: ScgfCurve, long: ScgfCurve) -> ScgfCurve:
    """Two-length estimate ``(n2 e_n2 - n1 e_n1) / (n2 - n1)``.

    Cancels an O(1) boundary term in ``n e_n``, which is what separates
    finite-window estimates from the limit when the current telescopes.
    The curves must come from independent samples on the same grid.
    """
    n1 = float(short.meta.get("block_length", np.nan))
    n2 = float(long.meta.get("block_length", np.nan))
    if not (n2 > n1 > 0):
        raise ValueError(f"need block lengths n2 > n1 > 0, got {n1} and {n2}")
    if short.lambdas.shape != long.lambdas.shape or np.abs(short.lambdas - long.lambdas).max() > PAIR_TOL:
        raise ValueError("curves must share the lambda grid")
    d = n2 - n1
    vals = (n2 * long.values - n1 * short.values) / d
    errs = np.hypot(n2 * long.errors, n1 * short.errors) / d
    meta = {"source": "extrapolated", "block_lengths": [n1, n2]}
    return ScgfCurve(short.lambdas, vals, errs, short.clipped | long.clipped, meta)


def legendre(curve: ScgfCurve, ws) -> RateFunction:
    """``i(w) = max_lam [e(lam) - lam w]`` over the (unclipped) grid.

    Points whose maximiser is a grid end are flagged ``boundary``: there the
    supremum may not be attained on the finite grid.
    """
    ok = ~curve.clipped
    lam = curve.lambdas[ok]
    val = curve.values[ok]
    ws = np.asarray(ws, dtype=float)
    if lam.size < 3 or ws.size == 0:
        raise ValueError("legendre needs >= 3 grid points and a non-empty w grid")
    if not np.isfinite(ws).all():
        raise ValueError("w grid must be finite")
    table = val[None, :] - lam[None, :] * ws[:, None]
    arg = table.argmax(axis=1)
    out = table[np.arange(ws.size), arg]
    boundary = (arg == 0) | (arg == lam.size - 1)
    tol = float(np.abs(np.diff(val, 2)).max() / 8.0) + 1e-12
    meta = {"source": curve.meta.get("source"), "argmax_lambda": lam[arg]}
    return RateFunction(ws, out, boundary, tol, meta)


def _mirror_index(grid: np.ndarray, center: float) -> np.ndarray:
    mirror = 2.0 * center - grid
    idx = np.array([int(np.argmin(np.abs(grid - m))) for m in mirror])
    if grid.size and np.abs(grid[idx] - mirror).max() > PAIR_TOL:
        bad = grid[np.abs(grid[idx] - mirror) > PAIR_TOL]
        raise ValueError(f"grid is not symmetric about {center}: unpaired points {bad[:5].tolist()}")
    return idx


@dataclass(frozen=True, eq=False)
class SymmetryReport:
    grid: np.ndarray
    defect: np.ndarray
    stat_errors: np.ndarray
    excluded: np.ndarray
    max_abs_defect: float
    center: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "center": self.center,
            "max_abs_defect": self.max_abs_defect,
            "passed": self.passed,
            "n_points": int((~self.excluded).sum()),
            "n_excluded": int(self.excluded.sum()),
        }


def symmetry_report(curve: ScgfCurve, center: float = 0.5, n_sigma: float = 3.0, atol: float = 1e-9) -> SymmetryReport:
    lam = curve.lambdas
    j = _mirror_index(lam, center)
    defect = curve.values - curve.values[j]
    sig = np.sqrt(curve.errors**2 + curve.errors[j] ** 2)
    excluded = curve.clipped | curve.clipped[j]
    d = np.where(excluded, 0.0, defect)
    passed = bool((np.abs(d) <= n_sigma * np.where(excluded, 0.0, sig) + atol).all())
    return SymmetryReport(lam, defect, sig, excluded, float(np.abs(d).max()), float(center), passed)


@dataclass(frozen=True, eq=False)
class RateSymmetryReport:
    ws: np.ndarray
    residuals: np.ndarray
    interior: np.ndarray
    max_abs_residual: float
    tolerance: float
    passed: bool


def rate_symmetry(rf: RateFunction, scale: float = 1.0, factor: float = 1.0) -> RateSymmetryReport:
    """Residual ``i(w) - i(-w) + scale * w``; zero when ``e(lam) = e(scale - lam)``."""
    j = _mirror_index(rf.ws, 0.0)
    res = rf.values - rf.values[j] + scale * rf.ws
    interior = ~(rf.boundary | rf.boundary[j])
    mx = float(np.abs(res[interior]).max()) if interior.any() else float("nan")
    tol = factor * rf.tolerance
    return RateSymmetryReport(rf.ws, res, interior, mx, tol, bool(interior.any() and mx <= tol))


@dataclass(frozen=True, eq=False)
class HistogramRatio:
    bins: np.ndarray
    log_ratio: np.ndarray
    counts_pos: np.ndarray
    counts_neg: np.ndarray
    fitted_slope: float
    slope_stderr: float
    slope_ci: tuple
    expected_slope: float

    @property
    def consistent(self) -> bool:
        lo, hi = self.slope_ci
        return lo <= self.expected_slope <= hi


def histogram_ratio(
    samples: WindowSamples,
    n_bins: int = 41,
    bin_width: float | None = None,
    min_count: int = 20,
    expected_slope: float = 1.0,
    weighted: bool = True,
    confidence: float = 0.95,
) -> HistogramRatio:
    """Fit ``ln[P(w)/P(-w)] = slope * w`` over mirrored bins.

    Bins are symmetric about 0. With ``bin_width`` the edges sit at half-odd
    multiples of the width, which keeps lattice-valued sums (multiples of the
    width) on bin centres; otherwise ``n_bins`` equal bins span ``+-max|W|``.
    The default fit weights each bin by the inverse Poisson variance of its
    log ratio; the unweighted fit takes its error from the residuals.
    """
    W = samples.sums
    if n_bins < 5:
        raise ValueError("n_bins must be >= 5")
    wmax = float(np.abs(W).max())
    if wmax == 0.0:
        raise StatisticalInsufficiency("all window sums are zero; no two-sided bins")
    if bin_width is None:
        edges = np.linspace(-wmax, wmax, n_bins + 1)
    else:
        k = int(math.ceil(wmax / bin_width - 0.5))
        edges = (np.arange(-k, k + 2) - 0.5) * bin_width
    counts, _ = np.histogram(W, edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    pos = np.flatnonzero(mids > 1e-12 * max(wmax, 1.0))
    neg = [int(np.argmin(np.abs(mids + mids[p]))) for p in pos]
    cp = counts[pos]
    cn = counts[neg]
    keep = (cp >= min_count) & (cn >= min_count)
    if keep.sum() < 2:
        short = [f"{mids[p]:.4g}" for p, k_ in zip(pos, keep) if not k_][:8]
        raise StatisticalInsufficiency(
            f"only {int(keep.sum())} mirrored bin pairs have >= {min_count} counts on both sides; "
            f"short bins at w = {', '.join(short)}"
        )
    x = mids[pos][keep]
    c_pos = cp[keep].astype(float)
    c_neg = cn[keep].astype(float)
    y = np.log(c_pos / c_neg)
    wts = 1.0 / (1.0 / c_pos + 1.0 / c_neg) if weighted else np.ones_like(x)
    sxx = np.sum(wts * x * x)
    slope = float(np.sum(wts * x * y) / sxx)
    dof = x.size - 1
    if weighted:
        se = math.sqrt(1.0 / sxx)
        q = stats.norm.ppf(0.5 + confidence / 2)
    else:
        resid = y - slope * x
        se = math.sqrt(np.sum(resid**2) / dof / sxx)
        q = stats.t.ppf(0.5 + confidence / 2, dof)
    return HistogramRatio(x, y, c_pos.astype(int), c_neg.astype(int), slope, se, (slope - q * se, slope + q * se), float(expected_slope))


class TruncationError(RuntimeError):
    def __init__(self, partial: float, n_terms: int):
        super().__init__(f"correlation tail not converged after {n_terms} terms (partial sum {partial:.6g})")
        self.partial = partial


@dataclass(frozen=True)
class GreenKuboResult:
    response: float
    response_err: float
    correlation_sum: float
    ratio: float

    @property
    def consistent(self) -> bool:
        return 0.95 <= self.ratio <= 1.05


def green_kubo_response(
    mean_current: Callable[[float], tuple[float, float]],
    correlation: Callable[[int], float],
    dE: float,
    prefactor: float = 1.0,
    two_sided: bool = True,
    rel_tail: float = 1e-3,
    max_terms: int = 100_000,
) -> GreenKuboResult:
    """Finite-difference response ``d mu(J)/dE`` at 0 against
    ``prefactor * sum_x C(x)``.

    ``mean_current(E)`` returns ``(value, std_error)``; ``correlation(x)`` is
    the equilibrium covariance at lag ``x >= 0``. With ``two_sided`` the lags
    ``x`` and ``-x`` both contribute. Summation stops once a term is below
    ``rel_tail`` times the running sum.
    """
    up, up_err = mean_current(dE)
    dn, dn_err = mean_current(-dE)
    response = (up - dn) / (2 * dE)
    response_err = math.hypot(up_err, dn_err) / (2 * dE)
    total = correlation(0)
    for x in range(1, max_terms + 1):
        term = correlation(x) * (2 if two_sided else 1)
        total += term
        if abs(term) <= rel_tail * abs(total):
            break
    else:
        raise TruncationError(prefactor * total, max_terms)
    corr = prefactor * total
    return GreenKuboResult(float(response), float(response_err), float(corr), float(response / corr))


def save_samples(samples: WindowSamples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block", "block_length", "sum"])
        for k, s in enumerate(samples.sums):
            w.writerow([k, repr(float(samples.block_length)), repr(float(s))])


def load_samples(path) -> WindowSamples:
    from .core import IntegrityError

    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IntegrityError(f"{path.name}: {exc}") from exc
    if not rows or rows[0] != ["block", "block_length", "sum"]:
        raise IntegrityError(f"{path.name}: missing or malformed header")
    body = rows[1:]
    try:
        idx = [int(r[0]) for r in body]
        lengths = {float(r[1]) for r in body}
        sums = [float(r[2]) for r in body]
    except (ValueError, IndexError) as exc:
        raise IntegrityError(f"{path.name}: corrupt row ({exc})") from exc
    if idx != list(range(len(body))) or len(lengths) != 1:
        raise IntegrityError(f"{path.name}: block index or length column inconsistent")
    return WindowSamples(np.array(sums), lengths.pop())


def curve_rows(curve: ScgfCurve) -> Iterable[list]:
    for lam, v, e, c in zip(curve.lambdas, curve.values, curve.errors, curve.clipped):
        yield [repr(float(lam)), repr(float(v)), repr(float(e)), int(c)]
