import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from boostsi.baselearner import linear_learner, spline_learner
from boostsi.boosting import BoostConfig, boost_fit, selected_design
from boostsi.oracle import FunctionOracle
from boostsi.sampler import (
    HARD_BOUND_SD,
    NoAcceptedSamples,
    SelfCongruencyError,
    TestSpec,
    decompose,
    draw_batch,
    effective_sample_size,
    ess_from_log,
    invert_ci,
    line_search_bracket,
    pvalue_pair,
    selective_inference,
    smooth_function_test_basis as function_basis,
    smooth_pointwise_vector as pointwise_vector,
    test_matrix_group as group_basis,
    test_vector_linear as coef_vector,
    two_sided,
)


def line_setup(n=12, seed=0, r_obs=None):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    y = rng.standard_normal(n)
    if r_obs is not None:
        y = y + (r_obs - v @ y) * v / (v @ v)
    return v, y


def union_oracle(v, intervals):
    def pred(Y):
        r = v @ Y
        return np.any([(r > a) & (r < b) for a, b in intervals], axis=0)

    return FunctionOracle(pred)


def quad_pvalue(intervals, r_obs, sd, t=0.0):
    dens = lambda r: stats.norm.pdf(r, loc=t, scale=sd)  # noqa: E731
    num = sum(integrate.quad(dens, max(a, r_obs), b)[0] for a, b in intervals if b > r_obs)
    den = sum(integrate.quad(dens, a, b)[0] for a, b in intervals)
    return num / den


# ------------------------------------------------------------------ ESS


def test_ess_equal_weights():
    assert effective_sample_size(np.full(250, 0.3)) == pytest.approx(250.0)


def test_ess_123():
    assert effective_sample_size([1.0, 2.0, 3.0]) == pytest.approx(36 / 14)
    assert ess_from_log(np.log([1.0, 2.0, 3.0])) == pytest.approx(36 / 14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=40).filter(lambda w: sum(w) > 0))
def test_ess_bounds(w):
    e = effective_sample_size(w)
    assert 1 - 1e-9 <= e <= len(w) + 1e-9


def test_ess_rejects_negative():
    with pytest.raises(ValueError):
        effective_sample_size([1.0, -1.0])


def test_proposal_equal_to_target_gives_unit_weights():
    v, y = line_setup(r_obs=0.0)
    spec = TestSpec.direction(v, 1.0)
    dec = decompose(y, spec)
    oracle = FunctionOracle(lambda Y: np.ones(Y.shape[1], dtype=bool))
    br = line_search_bracket(oracle, dec, spec.sigma_r)
    batch = draw_batch(br, spec, dec, oracle, 200, seed=1, proposal="normal_at_robs")
    np.testing.assert_allclose(batch.weights, 1.0, atol=1e-12)


# ------------------------------------------------------------------ decomposition


def test_direction_probes_hit_statistic():
    v, y = line_setup()
    dec = decompose(y, TestSpec.direction(v, 1.0))
    r = np.array([-3.0, 0.0, 0.7, 5.0])
    np.testing.assert_allclose(v @ dec.probes(r), r, atol=1e-12)
    np.testing.assert_allclose(dec.probes([dec.r_obs])[:, 0], y, atol=1e-12)


def test_group_probes_hit_radius():
    rng = np.random.default_rng(2)
    W = rng.standard_normal((15, 3))
    y = rng.standard_normal(15)
    spec = TestSpec.group(W, 1.0)
    dec = decompose(y, spec)
    r = np.array([0.1, 1.0, 4.0])
    np.testing.assert_allclose(np.linalg.norm(spec.W.T @ dec.probes(r), axis=0), r, atol=1e-12)


def test_group_zero_projection():
    W = np.eye(4)[:, :2]
    with pytest.raises(ValueError, match="direction undefined"):
        decompose(np.array([0.0, 0.0, 1.0, -1.0]), TestSpec.group(W, 1.0))


def test_spec_validation():
    with pytest.raises(ValueError):
        TestSpec.direction(np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        TestSpec.direction(np.ones(3), 0.0)
    with pytest.raises(ValueError, match="empty basis"):
        TestSpec.group(np.zeros((4, 2)), 1.0)


# ------------------------------------------------------------------ test vectors


def test_coef_vector_gives_ols_coefficient():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((20, 4))
    y = rng.standard_normal(20)
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    for j in range(4):
        assert coef_vector(X, j) @ y == pytest.approx(beta[j])


def test_group_basis_orthogonal_to_rest():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((30, 5))
    W = group_basis(X, [1, 2])
    np.testing.assert_allclose(W.T @ W, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(W.T @ X[:, [0, 3, 4]], 0.0, atol=1e-10)


def test_group_basis_empty():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(10)
    with pytest.raises(ValueError, match="empty basis"):
        group_basis(np.column_stack([x, x * 0]), [1])


def test_pointwise_vector_gives_refit_value():
    rng = np.random.default_rng(6)
    c = rng.uniform(-2, 2, 80)
    x = rng.standard_normal(80)
    x -= x.mean()
    y = np.sin(c) + x + 0.1 * rng.standard_normal(80)
    y -= y.mean()
    learners = [linear_learner(0, x), spline_learner(1, c)]
    fit = boost_fit(y, learners, BoostConfig(0.1, 50))
    XA = selected_design(fit)
    assert fit.selected_set == (0, 1)
    beta = np.linalg.lstsq(XA, y, rcond=None)[0]
    block = slice(1, XA.shape[1])
    v = pointwise_vector(XA, block, 0.5, learners[1].basis)
    assert v @ y == pytest.approx(float(np.ravel(learners[1].basis(0.5)) @ beta[block]), rel=1e-8)
    W = function_basis(XA, block)
    assert W.shape[1] == XA.shape[1] - 1


# ------------------------------------------------------------------ bracket


def test_bracket_contains_interval_and_stops_outside():
    v, y = line_setup(r_obs=0.5)
    spec = TestSpec.direction(v, 1.0)
    s = spec.sigma_r
    oracle = union_oracle(v, [(-0.3 * s, 1.1 * s)])
    br = line_search_bracket(oracle, decompose(y, spec), s)
    assert br.lo <= -0.3 * s and br.up >= 1.1 * s
    assert not oracle.congruent(decompose(y, spec).probes([br.lo, br.up])).any()
    assert br.up - br.lo < 1.4 * s + 2 * 0.5 * s
    assert not br.lo_unbounded and not br.up_unbounded
    assert br.refits <= 50 + 1


def test_bracket_unbounded_side():
    v, y = line_setup(r_obs=2.0)
    spec = TestSpec.direction(v, 1.0)
    s = spec.sigma_r
    oracle = union_oracle(v, [(1.0, math.inf)])
    br = line_search_bracket(oracle, decompose(y, spec), s)
    assert br.up_unbounded and br.up == pytest.approx(2.0 + HARD_BOUND_SD * s)
    assert not br.lo_unbounded and br.lo <= 1.0


def test_bracket_finds_outer_fragment():
    v, y = line_setup(r_obs=0.0)
    spec = TestSpec.direction(v, 1.0)
    s = spec.sigma_r
    oracle = union_oracle(v, [(-0.5 * s, 0.5 * s), (3.0 * s, 4.0 * s)])
    br = line_search_bracket(oracle, decompose(y, spec), s)
    assert br.up >= 4.0 * s


def test_self_congruency_violation():
    v, y = line_setup(r_obs=0.0)
    spec = TestSpec.direction(v, 1.0)
    oracle = union_oracle(v, [(1.0, 2.0)])
    with pytest.raises(SelfCongruencyError):
        line_search_bracket(oracle, decompose(y, spec), spec.sigma_r)


def test_no_accepted_samples():
    v, y = line_setup(r_obs=0.3)
    oracle = FunctionOracle(lambda Y: np.abs(v @ Y - 0.3) < 1e-13)
    with pytest.raises(NoAcceptedSamples):
        selective_inference(y, TestSpec.direction(v, 1.0), oracle, B=200, seed=0)


# ------------------------------------------------------------------ estimates


@pytest.mark.parametrize(
    "intervals,r_obs",
    [
        ([(-1.0, 2.0)], 0.4),
        ([(0.5, math.inf)], 1.2),
        ([(-math.inf, -0.2)], -1.5),
        ([(1.5, 4.0)], 2.0),
    ],
)
def test_single_interval_matches_truncnorm(intervals, r_obs):
    v, y = line_setup(r_obs=r_obs)
    v = v / np.linalg.norm(v)
    y = y + (r_obs - v @ y) * v
    spec = TestSpec.direction(v, 1.0)
    res = selective_inference(y, spec, union_oracle(v, intervals), B=2000, seed=3)
    (a, b), = intervals
    F = stats.truncnorm.cdf(r_obs, a, b)
    assert res.p_value == pytest.approx(2 * min(F, 1 - F), abs=0.01)


@pytest.mark.parametrize("t", [0.0, 0.8, -1.2])
def test_fragmented_support_matches_quadrature(t):
    v, y = line_setup(r_obs=0.9, seed=7)
    v = v / np.linalg.norm(v)
    y = y + (0.9 - v @ y) * v
    intervals = [(-2.0, -1.0), (0.2, 1.0), (1.8, 2.6)]
    spec = TestSpec.direction(v, 1.0)
    dec = decompose(y, spec)
    oracle = union_oracle(v, intervals)
    br = line_search_bracket(oracle, dec, 1.0)
    batch = draw_batch(br, spec, dec, oracle, 4000, seed=11)
    above, below = pvalue_pair(batch, t)
    assert above == pytest.approx(quad_pvalue(intervals, 0.9, 1.0, t), abs=0.01)
    assert above + below == pytest.approx(1.0)


def test_group_matches_truncated_chi():
    rng = np.random.default_rng(8)
    n, w = 30, 4
    W = np.linalg.qr(rng.standard_normal((n, w)))[0]
    y = rng.standard_normal(n)
    y = y + W @ (W.T @ y) * (2.5 / np.linalg.norm(W.T @ y) - 1)
    a, b = 1.0, 4.0
    oracle = FunctionOracle(lambda Y: (np.linalg.norm(W.T @ Y, axis=0) > a) & (np.linalg.norm(W.T @ Y, axis=0) < b))
    res = selective_inference(y, TestSpec.group(W, 1.0), oracle, B=2000, seed=2)
    F = stats.chi.cdf
    assert res.p_value == pytest.approx((F(b, w) - F(2.5, w)) / (F(b, w) - F(a, w)), abs=0.01)
    assert res.diagnostics["alternative"] == "greater"


def _batch(seed=0, B=300):
    v, y = line_setup(seed=seed)
    v = v / np.linalg.norm(v)
    y = y + (0.7 - v @ y) * v
    spec = TestSpec.direction(v, 1.0)
    dec = decompose(y, spec)
    oracle = union_oracle(v, [(-1.0, 0.2), (0.5, 2.0)])
    br = line_search_bracket(oracle, dec, spec.sigma_r)
    return draw_batch(br, spec, dec, oracle, B, seed=seed)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000))
def test_pvalue_permutation_invariant(seed):
    batch = _batch(seed % 7)
    perm = np.random.default_rng(seed).permutation(batch.r.size)
    a = pvalue_pair(batch, 0.3)
    b = pvalue_pair(batch.permuted(perm), 0.3)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_pvalue_monotone_in_mean():
    batch = _batch(1)
    s = batch.sigma_r
    vals = [pvalue_pair(batch, t)[0] for t in np.linspace(-20 * s, 20 * s, 201)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_ci_limits_solve_pvalue_equation():
    batch = _batch(2, B=800)
    lo, hi = invert_ci(batch, 0.1)
    assert lo < batch.r_obs < hi
    assert pvalue_pair(batch, lo)[0] == pytest.approx(0.05, abs=1e-4)
    assert pvalue_pair(batch, hi)[0] == pytest.approx(0.95, abs=1e-4)


def test_two_sided():
    assert two_sided(0.3) == pytest.approx(0.6)
    assert two_sided(0.8) == pytest.approx(0.4)
    assert two_sided(0.5, 0.5) == 1.0


def test_deterministic_and_scale_invariant():
    v, y = line_setup(r_obs=0.4, seed=9)
    s = np.linalg.norm(v)
    oracle = union_oracle(v, [(-0.8 * s * s, 1.3 * s * s)])
    a = selective_inference(y, TestSpec.direction(v, 1.0), oracle, B=500, seed=5)
    b = selective_inference(y, TestSpec.direction(v, 1.0), oracle, B=500, seed=5)
    c = selective_inference(y, TestSpec.direction(3 * v, 1.0), oracle, B=500, seed=5)
    assert a.as_dict() == b.as_dict()
    assert c.p_value == pytest.approx(a.p_value, abs=1e-9)
    assert c.ci_lo == pytest.approx(3 * a.ci_lo, rel=1e-5)


def test_result_fields():
    v, y = line_setup(r_obs=0.4, seed=10)
    s = np.linalg.norm(v)
    res = selective_inference(y, TestSpec.direction(v, 1.0), union_oracle(v, [(-s * s, s * s)]), B=300, seed=0)
    assert 1 <= res.ess <= res.B
    assert 0 < res.accepted <= res.B
    assert 0 <= res.p_value <= 1
    assert res.estimate == pytest.approx(0.4)
    assert res.diagnostics["refits"] >= res.accepted
