import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gibbsft import ldp
from gibbsft.core import IntegrityError, StatisticalInsufficiency
from gibbsft.ldp import ScgfCurve, WindowSamples


def sym_curve(lam, a=0.6):
    # e(lam) = a lam (1 - lam): symmetric about 1/2, concave; Gaussian fluctuation theorem form
    return ScgfCurve(lam, a * lam * (1 - lam))


def test_degenerate_samples_give_linear_curve():
    s = WindowSamples(np.full(200, 3.0), 7)
    c = ldp.empirical_scgf(s, [-1.0, 0.0, 0.5, 2.0])
    assert np.allclose(c.values, np.array([-1.0, 0.0, 0.5, 2.0]) * 3.0 / 7, atol=1e-15)
    assert c.values[1] == 0.0 and c.errors[1] == 0.0
    assert np.allclose(c.errors, 0.0, atol=1e-14)


def test_gaussian_samples_match_closed_form():
    g = np.random.default_rng(1)
    m, v, n = 2.0, 1.5, 11
    s = WindowSamples(g.normal(m, math.sqrt(v), 200_000), n)
    lams = np.array([-0.5, 0.2, 0.5, 1.0])
    c = ldp.empirical_scgf(s, lams)
    closed = (lams * m - lams**2 * v / 2) / n
    assert (np.abs(c.values - closed) <= 3 * c.errors).all()
    assert (c.errors > 0).all()


def test_jackknife_matches_delta_method_for_small_tilt():
    g = np.random.default_rng(2)
    W = g.normal(0.0, 1.0, 50_000)
    lam = 0.05
    c = ldp.empirical_scgf(WindowSamples(W, 1), [lam])
    assert c.errors[0] == pytest.approx(lam * W.std() / math.sqrt(W.size), rel=0.05)


def test_too_few_blocks_and_clipping():
    with pytest.raises(ValueError, match="100"):
        ldp.empirical_scgf(WindowSamples(np.zeros(99), 1), [0.5])
    W = np.concatenate([np.zeros(999), [-200.0]])
    c = ldp.empirical_scgf(WindowSamples(W, 1), [0.0, 1.0])
    assert c.clipped.tolist() == [False, True]
    assert math.isnan(c.values[1])


def test_window_samples_concat_and_validation():
    a = WindowSamples([1.0, 2.0], 3)
    b = WindowSamples([4.0], 3)
    assert a.concat(b).sums.tolist() == [1.0, 2.0, 4.0]
    with pytest.raises(ValueError):
        a.concat(WindowSamples([1.0], 5))
    with pytest.raises(ValueError):
        WindowSamples([1.0], 0)


def test_default_grids():
    lam = ldp.default_lambda_grid()
    assert lam.size == 301 and lam[0] == -1.0 and lam[-1] == 2.0
    ldp._mirror_index(lam, 0.5)
    ws = ldp.default_w_grid(sym_curve(lam))
    assert ws.size == 301
    assert ws[-1] == pytest.approx(1.5 * 0.6 * 3, rel=1e-2)  # max |e'| = 0.6 * 3 at the ends


@given(st.floats(0.1, 2.0), st.floats(0.2, 3.0))
def test_legendre_of_quadratic(a, b):
    lam = np.linspace(-4, 4, 4001)
    c = ScgfCurve(lam, a * lam - b * lam**2)
    ws = np.linspace(a - 2 * b, a + 2 * b, 21)
    rf = ldp.legendre(c, ws)
    exact = (a - ws) ** 2 / (4 * b)
    assert np.allclose(rf.values, exact, atol=b * (lam[1] - lam[0]) ** 2 + 1e-12)
    assert not rf.boundary.any()


def test_legendre_symmetric_curve_obeys_rate_symmetry():
    lam = ldp.default_lambda_grid()
    c = sym_curve(lam)
    rf = ldp.legendre(c, ldp.default_w_grid(c))
    rep = ldp.rate_symmetry(rf, scale=1.0, factor=2.0)
    assert rep.passed
    assert rep.max_abs_residual <= 2 * rf.tolerance


def test_rate_symmetry_detects_an_asymmetric_curve():
    lam = ldp.default_lambda_grid()
    c = ScgfCurve(lam, 0.6 * lam * (1 - lam) + 0.05 * lam**3 - 0.05 * lam)
    rf = ldp.legendre(c, np.linspace(-0.5, 0.5, 51))
    assert not ldp.rate_symmetry(rf, scale=1.0, factor=2.0).passed


def test_legendre_constant_curve_is_boundary_dominated():
    lam = np.linspace(-1, 2, 31)
    c = ScgfCurve(lam, np.zeros_like(lam))
    ws = np.linspace(-1, 1, 11)
    rf = ldp.legendre(c, ws)
    assert np.allclose(rf.values, np.max(-np.outer(ws, lam), axis=1))
    assert rf.boundary.all()
    sym = ldp.legendre(ScgfCurve(np.linspace(-2, 2, 41), np.zeros(41)), ws)
    assert np.allclose(sym.values, 2 * np.abs(ws))


def test_legendre_refinement_is_monotone():
    coarse = np.linspace(-1, 2, 31)
    fine = np.linspace(-1, 2, 301)
    ws = np.linspace(-1, 1, 41)
    a = ldp.legendre(sym_curve(coarse), ws).values
    b = ldp.legendre(sym_curve(fine), ws).values
    assert (b >= a - 1e-12).all()


def test_rate_function_is_convex_and_bounded_below():
    lam = ldp.default_lambda_grid()
    c = sym_curve(lam)
    rf = ldp.legendre(c, ldp.default_w_grid(c))
    assert (np.diff(rf.values, 2) >= -1e-10).all()
    assert rf.values.min() >= -rf.tolerance


def test_legendre_rejects_bad_grids():
    with pytest.raises(ValueError):
        ldp.legendre(ScgfCurve([0.0, 1.0], [0.0, 0.0]), [0.0])
    with pytest.raises(ValueError):
        ldp.legendre(sym_curve(np.linspace(0, 1, 5)), [])
    with pytest.raises(ValueError):
        ldp.legendre(sym_curve(np.linspace(0, 1, 5)), [np.inf])


def test_symmetry_report_exact_and_statistical():
    lam = np.linspace(-1, 2, 31)
    rep = ldp.symmetry_report(sym_curve(lam), 0.5, atol=1e-12)
    assert rep.passed and rep.max_abs_defect <= 1e-15
    noisy = ScgfCurve(lam, 0.6 * lam * (1 - lam) + 0.01 * lam, errors=np.full(31, 0.001))
    assert not ldp.symmetry_report(noisy, 0.5).passed
    loose = ScgfCurve(lam, noisy.values, errors=np.full(31, 0.02))
    assert ldp.symmetry_report(loose, 0.5).passed
    with pytest.raises(ValueError, match="not symmetric"):
        ldp.symmetry_report(sym_curve(np.linspace(0, 0.8, 5)), 0.5)
    d = rep.to_dict()
    assert d["passed"] and d["n_points"] == 31


def test_histogram_ratio_gaussian_fluctuation_theorem():
    # W ~ N(m, 2m) satisfies ln P(w)/P(-w) = w exactly
    g = np.random.default_rng(4)
    m = 1.0
    W = g.normal(m, math.sqrt(2 * m), 400_000)
    h = ldp.histogram_ratio(WindowSamples(W, 1), n_bins=41)
    assert h.consistent
    assert h.fitted_slope == pytest.approx(1.0, abs=0.1)


def test_histogram_ratio_symmetric_control_and_weighted_fit():
    g = np.random.default_rng(5)
    W = g.normal(0.0, 1.0, 200_000)
    h = ldp.histogram_ratio(WindowSamples(W, 1), n_bins=31, expected_slope=0.0)
    assert h.consistent
    hw = ldp.histogram_ratio(WindowSamples(W, 1), n_bins=31, expected_slope=0.0, weighted=True)
    assert hw.consistent


def test_histogram_ratio_lattice_bins_sit_on_centres():
    W = np.concatenate([np.repeat(-2.0, 30), np.repeat(-1.0, 60), np.repeat(1.0, 163), np.repeat(2.0, 222)])
    h = ldp.histogram_ratio(WindowSamples(W, 1), bin_width=1.0)
    assert h.bins.tolist() == [1.0, 2.0]
    assert h.fitted_slope == pytest.approx(1.0, abs=0.02)


def test_histogram_ratio_insufficiency_names_bins():
    W = np.abs(np.random.default_rng(6).normal(10, 1, 1000))
    with pytest.raises(StatisticalInsufficiency, match="short bins"):
        ldp.histogram_ratio(WindowSamples(W, 1))
    with pytest.raises(StatisticalInsufficiency):
        ldp.histogram_ratio(WindowSamples(np.zeros(100), 1))
    with pytest.raises(ValueError):
        ldp.histogram_ratio(WindowSamples(W, 1), n_bins=3)


def test_green_kubo_response_synthetic():
    t = 0.4
    res = ldp.green_kubo_response(lambda E: (2.0 * E + 5 * E**3, 0.0), lambda x: t**x * (1 - t) / (1 + t) * 2.0, dE=1e-3, rel_tail=1e-14)
    assert res.correlation_sum == pytest.approx(2.0, rel=1e-10)
    assert res.response == pytest.approx(2.0, rel=1e-5)
    assert res.consistent
    bad = ldp.green_kubo_response(lambda E: (3.0 * E, 0.01), lambda x: 1.0 if x == 0 else 0.0, dE=0.1)
    assert not bad.consistent and bad.response_err > 0


def test_green_kubo_truncation():
    with pytest.raises(ldp.TruncationError):
        ldp.green_kubo_response(lambda E: (E, 0.0), lambda x: 1.0, dE=0.1, max_terms=50)


def test_samples_roundtrip_and_corruption(tmp_path):
    s = WindowSamples(np.array([0.1, -2.5, 1 / 3]), 11)
    p = tmp_path / "s.csv"
    ldp.save_samples(s, p)
    back = ldp.load_samples(p)
    assert np.array_equal(back.sums, s.sums) and back.block_length == 11
    p.write_text("bad,header\n1,2\n")
    with pytest.raises(IntegrityError, match="s.csv"):
        ldp.load_samples(p)
    p.write_text("block,block_length,sum\n0,11,0.1\n2,11,0.2\n")
    with pytest.raises(IntegrityError):
        ldp.load_samples(p)
    p.write_text("block,block_length,sum\n0,11,0.1\n1,11\n")
    with pytest.raises(IntegrityError):
        ldp.load_samples(p)
    with pytest.raises(IntegrityError):
        ldp.load_samples(tmp_path / "missing.csv")


def test_curve_rows():
    c = ScgfCurve([0.0, 0.5], [0.0, 0.1], [0.0, 0.01])
    rows = list(ldp.curve_rows(c))
    assert rows[1] == ["0.5", "0.1", "0.01", 0]


def test_scgf_curve_value_at_and_concavity():
    c = sym_curve(np.linspace(0, 1, 11))
    assert c.value_at(0.5) == pytest.approx(0.15)
    with pytest.raises(KeyError):
        c.value_at(0.55)
    assert c.is_concave()
    assert not ScgfCurve([0, 1, 2], [0, -1, 0]).is_concave()


def test_extrapolation_removes_a_boundary_term():
    lam = np.array([0.2, 0.5, 0.9])
    limit = lam * (1 - lam)
    short = ldp.ScgfCurve(lam, limit + 0.3 / 10, np.full(3, 0.01), meta={"block_length": 10})
    long = ldp.ScgfCurve(lam, limit + 0.3 / 30, np.full(3, 0.005), meta={"block_length": 30})
    ex = ldp.extrapolated_scgf(short, long)
    assert np.allclose(ex.values, limit, atol=1e-14)
    assert np.allclose(ex.errors, np.hypot(30 * 0.005, 10 * 0.01) / 20)
    with pytest.raises(ValueError):
        ldp.extrapolated_scgf(long, short)
    other = ldp.ScgfCurve(lam + 0.1, limit, meta={"block_length": 30})
    with pytest.raises(ValueError):
        ldp.extrapolated_scgf(short, other)
