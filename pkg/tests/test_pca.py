import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gibbsft import markov, pca
from gibbsft.core import (
    CapacityError,
    IntegrityError,
    RngStream,
    SpaceTimeWindow,
    SpinConfig,
    Trajectory,
    UnsupportedAlphabetError,
    time_reverse,
)

DRIVEN = pca.glauber(0.3, 0.2, 0.4)
probs = arrays(float, (2, 2, 2), elements=st.floats(0.02, 0.98))
seeds = st.integers(0, 2**32 - 1)


def random_frames(seed, T, L):
    g = np.random.default_rng(seed)
    return np.where(g.random((T, L)) < g.uniform(0.2, 0.8), 1, -1).astype(np.int8)


def dense_scgf(rule, L, lam):
    """Independent oracle: explicit products over sites, numpy eigenvalues."""
    confs = [np.array(c) for c in np.ndindex(*(2,) * L)]
    spins = [np.where(c == 0, 1, -1) for c in confs]
    M = np.empty((len(spins), len(spins)))
    for a, sp in enumerate(spins):
        for b, s in enumerate(spins):
            fwd = bwd = 0.0
            for i in range(L):
                nb = (s[i - 1], s[i], s[(i + 1) % L])
                nbp = (sp[i - 1], sp[i], sp[(i + 1) % L])
                fwd += math.log(rule.prob(sp[i], *nb))
                bwd += math.log(rule.prob(s[i], *nbp))
            M[a, b] = math.exp((1 - lam) * fwd + lam * bwd)
    return -math.log(np.max(np.abs(np.linalg.eigvals(M))))


# ---- rules and files


def test_rule_validation():
    with pytest.raises(ValueError):
        pca.PcaRule(np.full((2, 2, 2), 1.0))
    with pytest.raises(ValueError):
        pca.PcaRule(np.full((2, 2), 0.5))
    with pytest.raises(UnsupportedAlphabetError):
        pca.PcaRule(np.full((2, 2, 2), 0.5), alphabet=(0, 1))
    with pytest.raises(ValueError):
        pca.majority(0.0)


def test_glauber_without_drive_is_the_symmetric_preset():
    K, h = 0.4, -0.2
    r = pca.glauber(K, h)
    for nb in pca.NEIGHBOURHOODS:
        l, c, rr = nb
        w = {a: math.exp(a * (K * (l + rr) + h)) for a in (1, -1)}
        assert r.prob(1, *nb) == pytest.approx(w[1] / (w[1] + w[-1]), abs=1e-15)


def test_table_and_file_roundtrip(tmp_path):
    r = pca.majority(0.15)
    t = r.table()
    assert len(t) == 8 and all(abs(sum(v) - 1) < 1e-15 for v in t.values())
    assert t[(1, 1, -1)] == (0.85, pytest.approx(0.15))
    p = tmp_path / "rule.yaml"
    pca.save_rule(r, p)
    back = pca.load_rule(p)
    assert np.allclose(back.p_plus, r.p_plus, atol=1e-15)
    broken = dict(t)
    del broken[(1, 1, 1)]
    with pytest.raises(ValueError, match="misses"):
        pca.PcaRule.from_table(broken)
    bad = dict(t)
    bad[(1, 1, 1)] = (0.5, 0.6)
    with pytest.raises(ValueError, match="summing"):
        pca.PcaRule.from_table(bad)


def test_trajectory_dump(tmp_path):
    t = Trajectory(random_frames(1, 7, 5))
    p = tmp_path / "traj.bin"
    pca.save_trajectory(t, p)
    raw = p.read_bytes()
    assert raw[:4] == b"PCAT" and len(raw) == 16 + 35
    assert pca.load_trajectory(p) == t
    p.write_bytes(raw[:-3])
    with pytest.raises(IntegrityError, match="spin bytes"):
        pca.load_trajectory(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(IntegrityError, match="magic"):
        pca.load_trajectory(p)
    p.write_bytes(raw[:10])
    with pytest.raises(IntegrityError, match="header"):
        pca.load_trajectory(p)


# ---- simulation


def test_simulate_preconditions_and_determinism():
    with pytest.raises(ValueError):
        pca.simulate(DRIVEN, 2, 5, None, RngStream(1))
    with pytest.raises(ValueError):
        pca.simulate(DRIVEN, 4, 1, None, RngStream(1))
    with pytest.raises(ValueError):
        pca.simulate(DRIVEN, 4, 5, SpinConfig([1, 1, 1]), RngStream(1))
    a = pca.simulate(DRIVEN, 4, 5, None, RngStream(3))
    b = pca.simulate(DRIVEN, 4, 5, None, RngStream(3))
    assert a == b and a.T == 5 and a.L == 4
    init = SpinConfig([1, -1, -1, 1, 1])
    assert pca.simulate(DRIVEN, 5, 3, init, RngStream(0)).frame(0) == init


@pytest.mark.parametrize("p", [0.5, 0.8, 0.999])
def test_independent_rule_marginals(p):
    t = pca.simulate(pca.free(p), 8, 100_000, None, RngStream(4))
    frac = (t.frames[1:] == 1).mean()
    se = math.sqrt(p * (1 - p) / t.frames[1:].size)
    assert abs(frac - p) <= 3 * se


def test_driven_rule_single_site_statistics():
    # nearest-neighbour conditional frequencies reproduce the rule table
    t = pca.simulate(DRIVEN, 6, 60_000, None, RngStream(8)).frames
    prev, nxt = t[:-1], t[1:]
    l, c, r = np.roll(prev, 1, axis=1), prev, np.roll(prev, -1, axis=1)
    for nb in [(1, 1, 1), (-1, 1, -1), (1, -1, -1)]:
        mask = (l == nb[0]) & (c == nb[1]) & (r == nb[2])
        n = mask.sum()
        freq = (nxt[mask] == 1).mean()
        p = DRIVEN.prob(1, *nb)
        assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / n)


# ---- current field


def test_constant_trajectory_has_zero_current():
    t = Trajectory(np.tile(np.array([1, -1, -1, 1, 1], np.int8), (6, 1)))
    assert np.array_equal(pca.current_field(DRIVEN, t).values, np.zeros((5, 5)))


def test_independent_rule_current_telescopes():
    f = 0.3
    t = pca.simulate(pca.free(f), 5, 40, None, RngStream(2))
    cf = pca.current_field(pca.free(f), t)
    logf = np.where(t.frames == 1, math.log(f), math.log(1 - f))
    assert np.allclose(cf.values.sum(axis=0), logf[-1] - logf[0], atol=1e-12)


@given(probs, seeds, st.integers(3, 7), st.integers(2, 9))
def test_current_is_antisymmetric_under_time_reversal(p, seed, L, T):
    rule = pca.PcaRule(p)
    t = Trajectory(random_frames(seed, T, L))
    fwd = pca.current_field(rule, t).values
    bwd = pca.current_field(rule, time_reverse(t)).values
    assert np.allclose(bwd, -fwd[::-1], atol=1e-12)


@given(probs, seeds, st.integers(3, 6))
def test_ring_sum_is_the_markov_log_ratio(p, seed, L):
    rule = pca.PcaRule(p)
    fr = random_frames(seed, 6, L)
    J = pca.current_field(rule, Trajectory(fr)).values.sum(axis=1)
    logK = pca.ring_log_kernel(rule, L)
    idx = ((fr != 1).astype(int) << np.arange(L)).sum(axis=1)
    ratio = logK[idx[1:], idx[:-1]] - logK[idx[:-1], idx[1:]]
    assert np.allclose(J, ratio, atol=1e-12)


def test_current_field_needs_two_frames():
    with pytest.raises(ValueError):
        pca.current_field(DRIVEN, Trajectory(np.ones((1, 4), np.int8)))


# ---- window sums


def test_window_sums_examples():
    t = pca.simulate(DRIVEN, 7, 44, None, RngStream(5))
    cf = pca.current_field(DRIVEN, t)
    zero = pca.CurrentField(np.zeros_like(cf.values))
    w = SpaceTimeWindow(2, 3)
    assert np.array_equal(pca.window_sums(zero, w).sums, np.zeros(6))
    cols = [6, 0, 1]  # |j| <= L-1 around site 0
    whole = SpaceTimeWindow(2, 21)  # 43 transitions, a single block
    s = pca.window_sums(cf, whole)
    assert s.n_blocks == 1
    assert s.sums[0] == pytest.approx(cf.values[:, cols].sum(), abs=1e-12)
    two = pca.window_sums(cf, w).sums
    assert s.block_length == 43 and two.size == 6
    doubled = pca.block_sums(cf.values, 14, cols)
    assert np.allclose(doubled, two[0::2] + two[1::2], atol=1e-12)
    assert pca.window_sums(cf, SpaceTimeWindow(7, 2, spans_ring=True)).sums[0] == pytest.approx(cf.values[:5].sum())
    with pytest.raises(ValueError):
        pca.window_sums(cf, SpaceTimeWindow(1, 30))


def test_sample_window_sums_mean_is_the_ring_entropy_production():
    rule, L = pca.glauber(0.2, 0.0, 0.2), 4
    w = SpaceTimeWindow(L, 5, spans_ring=True)
    s = pca.sample_window_sums(rule, L, w, 40_000, RngStream(6), chunk_blocks=5000)
    assert s.n_blocks == 40_000 and s.block_length == 11
    per = s.sums / 11
    se = per.std(ddof=1) / math.sqrt(per.size)
    assert abs(per.mean() - pca.stationary_entropy_production(rule, L)) <= 4 * se
    again = pca.sample_window_sums(rule, L, w, 40_000, RngStream(6), chunk_blocks=7000)
    assert np.array_equal(again.sums, s.sums)


# ---- exact oracle


@given(probs, st.integers(3, 5), st.floats(-1.0, 2.0))
def test_exact_scgf_matches_independent_dense_oracle(p, L, lam):
    rule = pca.PcaRule(p)
    assert pca.exact_scgf_ring(rule, L, lam) == pytest.approx(dense_scgf(rule, L, lam), abs=1e-11)


@given(probs, st.integers(3, 8))
def test_exact_ring_symmetry_and_endpoints(p, L):
    rule = pca.PcaRule(p)
    assert abs(pca.exact_scgf_ring(rule, L, 0.0)) <= 1e-12
    assert abs(pca.exact_scgf_ring(rule, L, 1.0)) <= 1e-12
    for lam in (-0.8, 0.2, 0.35, 1.6):
        assert abs(pca.exact_scgf_ring(rule, L, lam) - pca.exact_scgf_ring(rule, L, 1 - lam)) <= 1e-10


@pytest.mark.parametrize("rule", [pca.free(0.3), pca.glauber(0.5, 0.2), pca.glauber(-0.4)])
def test_reversible_rules_have_flat_exact_scgf(rule):
    for lam in (-0.5, 0.3, 0.5, 1.4):
        assert abs(pca.exact_scgf_ring(rule, 5, lam)) <= 1e-10
    assert pca.stationary_entropy_production(rule, 5) <= 1e-12
    assert markov.is_detailed_balance(pca.ring_chain(rule, 5))


def test_driven_rule_produces_entropy():
    ep = pca.stationary_entropy_production(DRIVEN, 5)
    assert ep > 0.1
    h = 1e-5
    slope = (pca.exact_scgf_ring(DRIVEN, 5, h) - pca.exact_scgf_ring(DRIVEN, 5, -h)) / (2 * h)
    assert slope == pytest.approx(ep, rel=1e-6)


def test_contraction_path_matches_dense(monkeypatch):
    dense = {lam: pca.exact_scgf_ring(DRIVEN, 7, lam) for lam in (0.2, 0.5, 1.3)}
    monkeypatch.setattr(pca, "DENSE_CAP", 1)
    for lam, v in dense.items():
        assert pca.exact_scgf_ring(DRIVEN, 7, lam) == pytest.approx(v, abs=1e-12)


def test_contraction_symmetry_on_large_ring():
    rule = pca.majority(0.2)
    a = pca.exact_scgf_ring(rule, 13, 0.3)
    b = pca.exact_scgf_ring(rule, 13, 0.7)
    assert abs(a - b) <= 1e-10


def test_capacity_cap():
    with pytest.raises(CapacityError):
        pca.exact_scgf_ring(DRIVEN, 17, 0.5)
    with pytest.raises(CapacityError):
        pca.ring_chain(DRIVEN, 13)


def test_finite_window_symmetry_defect_stays_bounded():
    rule, L = pca.glauber(0.3, 0.2, 0.3), 4
    rho = markov.stationary(pca.ring_chain(rule, L)).probs
    spread = float(np.log(rho).max() - np.log(rho).min())
    for lam in (0.2, 0.35):
        scaled = []
        for n in [2**k for k in range(4, 11)]:
            d = pca.exact_block_moment(rule, L, lam, n) - pca.exact_block_moment(rule, L, 1 - lam, n)
            scaled.append(n * abs(d))
        assert max(scaled) <= abs(1 - 2 * lam) * spread + 1e-9
        assert abs(scaled[-1] - scaled[-2]) <= 1e-6


def test_exact_block_moment_converges_to_the_oracle():
    rule, L = pca.glauber(0.3, 0.2, 0.3), 4
    e = pca.exact_scgf_ring(rule, L, 0.4)
    gaps = [abs(pca.exact_block_moment(rule, L, 0.4, n) - e) for n in (10, 100, 1000)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


# ---- boundary defect


@given(probs, seeds, st.integers(5, 12), st.integers(1, 6))
def test_boundary_defect_bound(p, seed, ring, N):
    rule = pca.PcaRule(p)
    Lw = (ring - 2) // 2
    fr = random_frames(seed, 2 * N + 3, ring)
    c, cp = pca.defect_constants(rule)
    d = pca.boundary_defect(rule, Trajectory(fr), SpaceTimeWindow(Lw, N))
    assert abs(d) <= c * (2 * N + 1) + cp * (2 * Lw + 1)
    full = pca.boundary_defect(rule, Trajectory(fr), SpaceTimeWindow(ring, N, spans_ring=True))
    assert abs(full) <= cp * ring


def test_boundary_defect_examples_and_errors():
    const = Trajectory(np.tile(np.array([1, -1, 1, 1, -1, -1, 1], np.int8), (9, 1)))
    assert pca.boundary_defect(pca.glauber(0.3), const, SpaceTimeWindow(2, 3)) == 0.0
    t = Trajectory(random_frames(3, 9, 7))
    with pytest.raises(ValueError, match="seam"):
        pca.boundary_defect(DRIVEN, t, SpaceTimeWindow(3, 3))
    with pytest.raises(ValueError, match="frames"):
        pca.boundary_defect(DRIVEN, t, SpaceTimeWindow(2, 4))
    assert pca.defect_constants(DRIVEN) == (4 * DRIVEN.log_range(), 3 * DRIVEN.log_range())


# ---- entropy-rate decomposition


def test_entropy_rate_terms():
    rule, L = DRIVEN, 6
    t = pca.simulate(rule, L, 50_000, None, RngStream(12))
    terms = pca.entropy_rate_terms(rule, t)
    assert terms["mean_current"] == pytest.approx(terms["forward_log"] + terms["backward_cross_entropy"], abs=1e-12)
    # the pathwise forward log-likelihood estimates minus the conditional entropy
    split = -terms["conditional_entropy"] + terms["backward_cross_entropy"]
    assert abs(split - terms["mean_current"]) <= 4 * terms["current_stderr"] + 0.01
    exact = pca.stationary_entropy_production(rule, L) / L
    assert terms["mean_current"] > 0
    assert abs(terms["mean_current"] - exact) <= 4 * terms["current_stderr"]
    free = pca.entropy_rate_terms(pca.free(0.3), pca.simulate(pca.free(0.3), L, 20_000, None, RngStream(1)))
    assert abs(free["mean_current"]) <= 4 * free["current_stderr"] + 1e-3
