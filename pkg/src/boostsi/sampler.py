"""Selective inference conditioning on the selected set only.

The test statistic is varied along one line through the observed response
(the test direction for a single coefficient, the radius ``||P_W y||`` for
a group).  Which points on that line reproduce the selected set is decided
by rerunning the selection (a congruency check).  A short line search finds
a bracket around the congruent support, draws are taken on the bracket and
importance-weighted towards the null reference density, and p-values and
confidence limits are ratio estimates over the congruent draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit, logsumexp

from ._roots import invert_increasing
from .oracle import SelectionOracle

HARD_BOUND_SD = 8.0
CI_MAX_SD = 64.0
MIN_ACCEPTED = 20
RANK_TOL = 1e-8


class NoAcceptedSamples(RuntimeError):
    pass


class MonteCarloDegenerate(RuntimeError):
    pass


class SelfCongruencyError(RuntimeError):
    pass


# ------------------------------------------------------------------ #
# Test definitions
# ------------------------------------------------------------------ #


@dataclass(frozen=True, eq=False)
class TestSpec:
    """Either a direction ``v`` (``H0: v^T mu = t``) or an orthonormal basis
    ``W`` (``H0: <dir_W(y), mu> = t``)."""

    __test__ = False  # not a pytest class

    mode: str
    sigma2: float
    v: np.ndarray | None = None
    W: np.ndarray | None = None
    null_value: float = 0.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.mode == "direction":
            v = np.asarray(self.v, dtype=float)
            if not float(v @ v) > 0:
                raise ValueError("test vector must be non-zero")
            object.__setattr__(self, "v", v)
        elif self.mode == "group":
            object.__setattr__(self, "W", _orthonormal_basis(np.asarray(self.W, dtype=float)))
        else:
            raise ValueError(f"unknown test mode {self.mode!r}")

    @classmethod
    def direction(cls, v, sigma2, null_value=0.0):
        return cls("direction", sigma2, v=v, null_value=null_value)

    @classmethod
    def group(cls, W, sigma2, null_value=0.0):
        return cls("group", sigma2, W=W, null_value=null_value)

    @property
    def dim(self) -> int:
        return 1 if self.mode == "direction" else self.W.shape[1]

    @property
    def sigma_r(self) -> float:
        """Standard deviation of the test statistic without selection."""
        if self.mode == "direction":
            return math.sqrt(self.sigma2 * float(self.v @ self.v))
        return math.sqrt(self.sigma2)


def _orthonormal_basis(M: np.ndarray) -> np.ndarray:
    if M.ndim == 1:
        M = M[:, None]
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        raise ValueError("empty basis")
    keep = s > RANK_TOL * s[0]
    return U[:, keep]


def test_vector_linear(X_A, j: int) -> np.ndarray:
    """``v = X_A (X_A^T X_A)^{-1} e_j``, so ``v^T y`` is the OLS coefficient
    of column ``j`` in the selected model."""
    X_A = np.asarray(X_A, dtype=float)
    e = np.zeros(X_A.shape[1])
    e[j] = 1.0
    return X_A @ _gram_solve(X_A, e)


def _gram_solve(X, rhs):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise np.linalg.LinAlgError("selected design is rank deficient")
    return np.linalg.solve(X.T @ X, rhs)


def test_matrix_group(X_A, group_cols) -> np.ndarray:
    """Orthonormal basis of ``P_perp(X_{A without group}) X_group``.

    Directions with singular value below ``1e-8`` of the group's scale are
    dropped; the number kept is the test dimension.
    """
    X_A = np.asarray(X_A, dtype=float)
    cols = np.zeros(X_A.shape[1], dtype=bool)
    cols[np.asarray(group_cols)] = True
    G, rest = X_A[:, cols], X_A[:, ~cols]
    if rest.shape[1]:
        if np.linalg.matrix_rank(rest) < rest.shape[1]:
            raise np.linalg.LinAlgError("remaining selected design is rank deficient")
        Q, _ = np.linalg.qr(rest)
        G = G - Q @ (Q.T @ G)
    U, s, _ = np.linalg.svd(G, full_matrices=False)
    scale = np.linalg.norm(X_A[:, cols], 2)
    keep = s > RANK_TOL * scale
    if not keep.any():
        raise ValueError("empty basis: group lies in the span of the other selected columns")
    return U[:, keep]


def smooth_pointwise_vector(X_A, block: slice, c: float, basis) -> np.ndarray:
    """Test vector for the value of a smooth term at ``c``.

    ``basis`` maps a scalar to the design row of the smooth's block (e.g. a
    :class:`~boostsi.baselearner.SplineBasis`); all other entries of the row
    are zero.
    """
    X_A = np.asarray(X_A, dtype=float)
    row = np.zeros(X_A.shape[1])
    row[block] = np.asarray(basis(c), dtype=float).ravel()
    return X_A @ _gram_solve(X_A, row)


def smooth_function_test_basis(X_A, block: slice) -> np.ndarray:
    """Basis for testing a whole smooth term ``g == 0``."""
    idx = np.arange(np.asarray(X_A).shape[1])[block]
    return test_matrix_group(X_A, idx)


# ------------------------------------------------------------------ #
# Line decomposition and bracketing
# ------------------------------------------------------------------ #


@dataclass(frozen=True, eq=False)
class Decomposition:
    anchor: np.ndarray
    direction: np.ndarray
    r_obs: float

    def probes(self, r) -> np.ndarray:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return self.anchor[:, None] + self.direction[:, None] * r[None, :]


def decompose(y, spec: TestSpec) -> Decomposition:
    """Write ``y = anchor + r_obs * direction`` so that probes along the line
    keep everything fixed except the test statistic."""
    y = np.asarray(y, dtype=float)
    if spec.mode == "direction":
        v = spec.v
        r_obs = float(v @ y)
        d = v / float(v @ v)
        return Decomposition(y - r_obs * d, d, r_obs)
    py = spec.W @ (spec.W.T @ y)
    r_obs = float(np.linalg.norm(py))
    if not r_obs > 0:
        raise ValueError("P_W y is zero: direction undefined")
    return Decomposition(y - py, py / r_obs, r_obs)


@dataclass(frozen=True)
class Bracket:
    lo: float
    up: float
    lo_unbounded: bool = False
    up_unbounded: bool = False
    refits: int = 0

    @property
    def width(self) -> float:
        return self.up - self.lo


def line_search_bracket(oracle: SelectionOracle, dec: Decomposition, sigma_r: float,
                        budget: int = 50, positive: bool = False, scan: int | None = None) -> Bracket:
    """Find ``[lo, up]`` containing the congruent support on the test line.

    Each side is searched from the hard bound (``r_obs -/+ 8 sigma_r``, or 0
    below for radii) inwards: ``scan`` equally spaced points locate the
    outermost congruent point, then bisection refines the crossing.  The
    returned limits are the last non-congruent points, or the hard bound if
    that is already congruent.
    """
    r_obs = dec.r_obs
    half = max(budget // 2, 2)
    scan = scan if scan is not None else max(1, (2 * half) // 3)
    scan = min(scan, half)
    hard_lo = 0.0 if positive else r_obs - HARD_BOUND_SD * sigma_r
    hard_up = r_obs + HARD_BOUND_SD * sigma_r
    frac = np.arange(scan) / scan
    pts_lo = hard_lo + (r_obs - hard_lo) * frac
    pts_up = hard_up - (hard_up - r_obs) * frac
    cong = oracle.congruent(dec.probes(np.concatenate([[r_obs], pts_lo, pts_up])))
    if not cong[0]:
        raise SelfCongruencyError("oracle does not reproduce the observed selection")
    refits = 1 + 2 * scan
    sides = []
    for pts, c in ((pts_lo, cong[1:scan + 1]), (pts_up, cong[scan + 1:])):
        if c[0]:
            sides.append([pts[0], pts[0], True])
            continue
        k = int(np.argmax(c)) if c.any() else scan
        inner = pts[k] if k < scan else r_obs
        sides.append([pts[k - 1], inner, False])
    for _ in range(half - scan):
        active = [s for s in sides if not s[2]]
        if not active:
            break
        mids = np.array([0.5 * (s[0] + s[1]) for s in active])
        ok = oracle.congruent(dec.probes(mids))
        refits += len(active)
        for s, m, good in zip(active, mids, ok):
            if good:
                s[1] = m
            else:
                s[0] = m
    (lo, _, lo_unb), (up, _, up_unb) = sides
    return Bracket(float(lo), float(up), bool(lo_unb), bool(up_unb), refits)


# ------------------------------------------------------------------ #
# Sampling and estimation
# ------------------------------------------------------------------ #


@dataclass(frozen=True, eq=False)
class SampleBatch:
    r: np.ndarray
    congruent: np.ndarray
    log_weights: np.ndarray
    proposal: str
    bracket: Bracket
    r_obs: float
    sigma_r: float
    mode: str
    dim: int = 1
    refits: int = field(default=0)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def accepted(self) -> int:
        return int(self.congruent.sum())

    def permuted(self, perm) -> "SampleBatch":
        return SampleBatch(self.r[perm], self.congruent[perm], self.log_weights[perm], self.proposal,
                           self.bracket, self.r_obs, self.sigma_r, self.mode, self.dim, self.refits)


def target_logpdf(r, spec: TestSpec) -> np.ndarray:
    """Null reference density: ``N(0, sigma^2 v^T v)`` for directions,
    ``sigma * chi_w`` for groups."""
    r = np.asarray(r, dtype=float)
    s = spec.sigma_r
    if spec.mode == "direction":
        return stats.norm.logpdf(r, scale=s)
    with np.errstate(divide="ignore"):
        return np.where(r > 0, stats.chi.logpdf(r / s, spec.dim) - math.log(s), -np.inf)


def draw_batch(bracket: Bracket, spec: TestSpec, dec: Decomposition, oracle: SelectionOracle,
               B: int, seed, proposal: str = "uniform_bracket", stratified: bool = True) -> SampleBatch:
    """Draw ``B`` statistics from the proposal, check congruency of each and
    attach importance weights ``f_target / f_prop``.

    With ``stratified`` the uniform proposal places one jittered draw in each
    of ``B`` equal cells of the bracket; every draw is still marginally
    uniform, so the weights are unchanged, but the estimator variance drops.
    """
    if B < 1:
        raise ValueError("B must be positive")
    rng = np.random.default_rng(seed)
    s = spec.sigma_r
    if proposal == "uniform_bracket":
        u = (np.arange(B) + rng.uniform(size=B)) / B if stratified else rng.uniform(size=B)
        r = bracket.lo + bracket.width * u
        logprop = np.full(B, -math.log(bracket.width))
    elif proposal == "normal_at_robs":
        r = rng.normal(dec.r_obs, s, B)
        logprop = stats.norm.logpdf(r, loc=dec.r_obs, scale=s)
    else:
        raise ValueError(f"unknown proposal {proposal!r}")
    logw = target_logpdf(r, spec) - logprop
    cong = np.zeros(B, dtype=bool)
    live = np.isfinite(logw)
    if spec.mode == "group":
        live &= r > 0
    if live.any():
        cong[live] = oracle.congruent(dec.probes(r[live]))
    if not cong.any():
        raise NoAcceptedSamples("no accepted samples; increase B or widen search")
    return SampleBatch(r, cong, logw, proposal, bracket, dec.r_obs, s, spec.mode, spec.dim,
                       bracket.refits + int(live.sum()))


def _tilted(batch: SampleBatch, t: float) -> np.ndarray:
    return batch.log_weights + batch.r * (t / batch.sigma_r ** 2)


def pvalue_pair(batch: SampleBatch, t: float = 0.0):
    """``(P(R > r_obs), P(R <= r_obs))`` given congruency, under mean ``t``."""
    lt = _tilted(batch, t)
    cong = batch.congruent
    above = cong & (batch.r > batch.r_obs)
    below = cong & ~(batch.r > batch.r_obs)
    den = logsumexp(lt[cong]) if cong.any() else -np.inf
    if not np.isfinite(den):
        raise MonteCarloDegenerate("Monte Carlo degenerate: all weights underflow")
    if not above.any():
        return 0.0, 1.0
    if not below.any():
        return 1.0, 0.0
    d = float(logsumexp(lt[above]) - logsumexp(lt[below]))
    return float(expit(d)), float(expit(-d))


def pvalue_hat(batch: SampleBatch, t: float = 0.0) -> float:
    """One-sided ``P(R > r_obs | R congruent)`` under ``H0: mean = t``."""
    return pvalue_pair(batch, t)[0]


def two_sided(p_one: float, p_other: float | None = None) -> float:
    p_other = 1.0 - p_one if p_other is None else p_other
    return min(1.0, 2.0 * min(p_one, p_other))


def invert_ci(batch: SampleBatch, alpha: float = 0.05):
    """Two-sided ``(1 - alpha)`` interval ``[rho_{alpha/2}, rho_{1-alpha/2}]``.

    The p-value function is nondecreasing in the hypothesized mean; each
    limit is found by bracket doubling and bisection.  Sides that do not
    cross within 64 standard deviations are infinite.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")

    def f(rho):
        return pvalue_hat(batch, rho)

    s = batch.sigma_r
    lo = invert_increasing(f, alpha / 2, batch.r_obs, s, max_mult=CI_MAX_SD, xtol=1e-6)
    hi = invert_increasing(f, 1 - alpha / 2, batch.r_obs, s, max_mult=CI_MAX_SD, xtol=1e-6)
    return lo, hi


def effective_sample_size(weights) -> float:
    """``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative with at least one positive")
    w = np.ldexp(w, -np.frexp(w.max())[1])  # exact power-of-two rescaling against overflow
    return float(w.sum() ** 2 / (w * w).sum())


def ess_from_log(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    return float(math.exp(2 * logsumexp(lw) - logsumexp(2 * lw)))


@dataclass(frozen=True)
class InferenceResult:
    p_value: float
    ci_lo: float
    ci_hi: float
    estimate: float
    ess: float
    accepted: int
    B: int
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "p_value": self.p_value,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "ess": self.ess,
            "accepted": self.accepted,
            "B": self.B,
            "diagnostics": dict(self.diagnostics),
        }


def selective_inference(y, spec: TestSpec, oracle: SelectionOracle, *, B: int = 1000,
                        alpha: float = 0.05, seed=0, proposal: str = "uniform_bracket",
                        budget: int = 50, stratified: bool = True,
                        alternative: str | None = None) -> InferenceResult:
    """p-value and confidence interval conditioning on the selected set.

    ``alternative`` defaults to ``"two-sided"`` in direction mode and to
    ``"greater"`` (the chi test of ``||P_W mu|| = 0``) in group mode.
    """
    if alternative is None:
        alternative = "greater" if spec.mode == "group" else "two-sided"
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    dec = decompose(y, spec)
    s = spec.sigma_r
    bracket = line_search_bracket(oracle, dec, s, budget, positive=spec.mode == "group")
    batch = draw_batch(bracket, spec, dec, oracle, B, seed, proposal, stratified)
    above, below = pvalue_pair(batch, spec.null_value)
    if alternative == "two-sided":
        p = two_sided(above, below)
    elif alternative == "greater":
        p = above
    else:
        p = below
    lo, hi = invert_ci(batch, alpha)
    lt = _tilted(batch, spec.null_value)[batch.congruent]
    diag = {
        "bracket_lo": bracket.lo,
        "bracket_up": bracket.up,
        "bracket_width": bracket.width,
        "lo_unbounded": bracket.lo_unbounded,
        "up_unbounded": bracket.up_unbounded,
        "refits": batch.refits,
        "infinite_ci": bool(math.isinf(lo) or math.isinf(hi)),
        "low_accuracy": batch.accepted < MIN_ACCEPTED,
        "sigma_r": s,
        "mode": spec.mode,
        "alternative": alternative,
        "dim": spec.dim,
    }
    return InferenceResult(p, lo, hi, dec.r_obs, ess_from_log(lt), batch.accepted, B, diag)
