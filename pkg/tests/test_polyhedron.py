import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from boostsi.baselearner import spline_learner
from boostsi.boosting import BoostConfig, boost_fit
from boostsi.polyhedron import (
    DegenerateTruncation,
    PathCertificate,
    Polyhedron,
    TruncationInterval,
    build_gamma,
    polyhedron_ci,
    polyhedron_pvalue,
    trunc_gauss_cdf,
    trunc_gauss_cdf_sf,
    truncation_limits,
    upsilon,
)
from boostsi.sampler import test_vector_linear as coef_vector

from conftest import centered_linear_data, linear_learners


def scalar_path(y, X, nu, m):
    """Path and signs from unit-norm correlations, one step at a time."""
    Xn = X / np.linalg.norm(X, axis=0)
    u = y.copy()
    path, signs = [], []
    for _ in range(m):
        z = Xn.T @ u
        j = int(np.argmax(np.abs(z)))
        path.append(j)
        signs.append(1 if z[j] >= 0 else -1)
        u = u - nu * z[j] * Xn[:, j]
    return path, signs


def make_instance(seed, n=10, p=3, m=4):
    X, y = centered_linear_data(n, p, seed, beta=[1.0] * min(p, 2))
    fit = boost_fit(y, linear_learners(X), BoostConfig(0.1, m))
    return X, y, fit, build_gamma(PathCertificate.from_fit(fit))


def test_row_count_and_offset():
    X, y, fit, poly = make_instance(0, n=12, p=4, m=5)
    assert poly.n_rows == 2 * 3 * 5
    assert poly.gamma.shape == (30, 12)
    np.testing.assert_array_equal(poly.offset, 0.0)


def test_observed_response_inside():
    for seed in range(10):
        X, y, fit, poly = make_instance(seed)
        assert poly.contains(y)


def test_apply_matches_gamma():
    X, y, fit, poly = make_instance(3, n=9, p=3, m=6)
    V = np.random.default_rng(0).standard_normal((9, 4))
    np.testing.assert_allclose(poly.apply(V), poly.gamma @ V, atol=1e-12)


def test_upsilon_recursion():
    X, y, fit, poly = make_instance(4, n=10, p=3, m=6)
    cert = poly.cert
    Xn = X / np.linalg.norm(X, axis=0)
    u = y.copy()
    for m in range(1, cert.m_stop + 2):
        np.testing.assert_allclose(upsilon(m, cert) @ y, u, atol=1e-12)
        if m <= cert.m_stop:
            j = cert.path[m - 1]
            u = u - 0.1 * (Xn[:, j] @ u) * Xn[:, j]
    np.testing.assert_allclose(u, fit.residuals, atol=1e-12)


def test_upsilon_bounds():
    X, y, fit, poly = make_instance(4)
    with pytest.raises(ValueError):
        upsilon(0, poly.cert)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 5000), m=st.sampled_from([3, 5]))
def test_membership_equals_rerun(seed, m):
    X, y, fit, poly = make_instance(seed, m=m)
    v = coef_vector(X[:, list(fit.selected_set)], 0)
    d = v / (v @ v)
    for r in np.linspace(-4, 4, 41):
        yr = y + r * d
        path, signs = scalar_path(yr, X, 0.1, m)
        same = path == list(fit.path) and signs == list(fit.signs)
        gy = poly.apply(yr)
        if np.min(np.abs(gy)) < 1e-9:
            continue  # on a face; either answer is acceptable
        assert same == bool(np.all(gy >= 0))


def test_truncation_limits_bracket_observed():
    X, y, fit, poly = make_instance(6, n=20, p=4, m=8)
    v = coef_vector(X[:, list(fit.selected_set)], 0)
    iv = truncation_limits(poly, v, 1.0, y)
    r = v @ y
    assert iv.lo <= r <= iv.up
    d = v / (v @ v)
    eps = 1e-6
    for edge in (iv.lo, iv.up):
        if math.isfinite(edge):
            inside = y + (edge - r + (eps if edge == iv.lo else -eps)) * d
            outside = y + (edge - r + (-eps if edge == iv.lo else eps)) * d
            assert poly.contains(inside)
            assert not poly.contains(outside, slack=0.0)


def test_rejects_penalized_learners():
    rng = np.random.default_rng(0)
    c = rng.uniform(size=30)
    bl = spline_learner(0, c)
    y = rng.standard_normal(30)
    fit = boost_fit(y - y.mean(), [bl], BoostConfig(0.1, 3))
    with pytest.raises(ValueError, match="linear"):
        PathCertificate.from_fit(fit)


def test_dense_gamma_guard(monkeypatch):
    X, y, fit, poly = make_instance(0)
    monkeypatch.setattr("boostsi.polyhedron.MAX_DENSE_ENTRIES", 10)
    with pytest.raises(MemoryError):
        poly.gamma
    assert poly.apply(y).shape == (poly.n_rows,)


class TestTruncatedGaussian:
    @pytest.mark.parametrize(
        "x,mu,s2,lo,up",
        [
            (0.3, 0.0, 1.0, -1.0, 2.0),
            (1.5, 0.5, 4.0, 1.0, math.inf),
            (-2.0, 1.0, 0.25, -math.inf, -1.0),
            (9.0, 0.0, 1.0, 8.5, 12.0),
            (-30.0, 0.0, 1.0, -31.0, -29.0),
        ],
    )
    def test_matches_scipy(self, x, mu, s2, lo, up):
        sd = math.sqrt(s2)
        ref = stats.truncnorm.cdf(x, (lo - mu) / sd, (up - mu) / sd, loc=mu, scale=sd)
        F, S = trunc_gauss_cdf_sf(x, mu, s2, lo, up)
        assert F == pytest.approx(ref, rel=1e-8, abs=1e-14)
        assert F + S == pytest.approx(1.0, abs=1e-12)

    def test_far_tail_precision(self):
        # interval [40, 41] at x = 40.01: ratio of tail masses
        F = trunc_gauss_cdf(40.01, 0.0, 1.0, 40.0, 41.0)
        ref = -math.expm1(-(40.01 ** 2 - 40 ** 2) / 2) * (40 / 40.01)
        assert F == pytest.approx(ref, rel=1e-3)
        assert 0 < F < 1

    def test_clamps_outside(self):
        assert trunc_gauss_cdf(-5.0, 0.0, 1.0, -1.0, 1.0) == 0.0
        assert trunc_gauss_cdf(5.0, 0.0, 1.0, -1.0, 1.0) == 1.0

    def test_degenerate(self):
        with pytest.raises(DegenerateTruncation, match="truncation"):
            trunc_gauss_cdf(100.0, 0.0, 1.0, 100.0, 100.0 + 1e-300)
        with pytest.raises(DegenerateTruncation):
            TruncationInterval(1.0, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(mu=st.floats(-5, 5), a=st.floats(-4, 4), w=st.floats(0.1, 4))
    def test_monotone_in_mu(self, mu, a, w):
        x = a + w / 2
        f1 = trunc_gauss_cdf(x, mu, 1.0, a, a + w)
        f2 = trunc_gauss_cdf(x, mu + 0.3, 1.0, a, a + w)
        assert f2 <= f1 + 1e-12


class _Whole:
    """A polyhedron stand-in with no constraints."""

    n_rows = 0

    def apply(self, V):
        return np.zeros((0,) + np.shape(V)[1:])


def test_no_truncation_pvalue_is_one_at_null():
    v = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, -1.0])
    assert polyhedron_pvalue(_Whole(), v, 1.0, y, null_value=0.0) == pytest.approx(1.0)


def test_boundary_observation_greater_is_one():
    class Half:
        n_rows = 1

        def apply(self, V):
            return np.atleast_2d(np.asarray(V)[0])

    y = np.array([0.0, 2.0])
    v = np.array([1.0, 0.0])
    assert polyhedron_pvalue(Half(), v, 1.0, y, alternative="greater") == pytest.approx(1.0)


def test_ci_without_truncation_is_z_interval():
    iv = TruncationInterval(-math.inf, math.inf)
    lo, hi = polyhedron_ci(1.3, 2.0, iv, 0.05)
    z = stats.norm.isf(0.025)
    assert lo == pytest.approx(1.3 - 2 * z, abs=1e-6)
    assert hi == pytest.approx(1.3 + 2 * z, abs=1e-6)


def test_ci_half_infinite_near_boundary():
    iv = TruncationInterval(0.0, math.inf)
    lo, hi = polyhedron_ci(0.01, 1.0, iv, 0.05)
    assert lo == -math.inf
    assert math.isfinite(hi)


def test_single_learner_has_no_constraints():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40)
    x -= x.mean()
    y = 2 * x + rng.standard_normal(40)
    y -= y.mean()
    fit = boost_fit(y, linear_learners(x[:, None]), BoostConfig(0.1, 1))
    poly = build_gamma(PathCertificate.from_fit(fit))
    assert poly.n_rows == 0
    v = x / (x @ x)
    iv = truncation_limits(poly, v, 1.0, y)
    assert iv.lo == -math.inf and iv.up == math.inf
    z = (v @ y) / math.sqrt(v @ v)
    assert polyhedron_pvalue(poly, v, 1.0, y) == pytest.approx(2 * stats.norm.sf(abs(z)), rel=1e-6, abs=1e-300)


def test_far_upper_tail_survival():
    F, S = trunc_gauss_cdf_sf(12.0, 0.0, 1.0, -math.inf, math.inf)
    assert S == pytest.approx(stats.norm.sf(12.0), rel=1e-8)
