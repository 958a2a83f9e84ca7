"""Analytic selective inference conditioning on the full path and signs.

For linear base-learners without penalty the event "boosting takes the path
``j^(1..m)`` with signs ``s_1..s_m``" is a polyhedron ``{y : Gamma y >= 0}``.
The rows are generated step by step from the residual maps
``Upsilon^(m) = prod_l (I - nu H_{j^(m-l)})``; ``Gamma`` is only materialized
on request.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr

from .baselearner import BaseLearner, LearnerKind
from ._roots import invert_increasing
from .boosting import BoostFit

MEMBERSHIP_SLACK = 1e-8
MAX_DENSE_ENTRIES = 10_000_000


class DegenerateTruncation(ValueError):
    pass


class InfeasibleConstraint(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PathCertificate:
    path: tuple
    signs: tuple
    step_length: float
    learners: tuple = field(repr=False)

    def __post_init__(self):
        if any(bl.kind is not LearnerKind.LINEAR for bl in self.learners):
            raise ValueError("polyhedral conditioning needs linear base-learners only")
        if len(self.path) != len(self.signs):
            raise ValueError("path and signs differ in length")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be +1 or -1")
        object.__setattr__(self, "learners", tuple(sorted(self.learners, key=lambda bl: bl.id)))

    @classmethod
    def from_fit(cls, fit: BoostFit) -> "PathCertificate":
        return cls(fit.path, fit.signs, fit.step_length, fit.learners)

    @property
    def m_stop(self) -> int:
        return len(self.path)

    @property
    def n(self) -> int:
        return self.learners[0].n

    def unit_columns(self):
        X = np.hstack([bl.design for bl in self.learners])
        return X / np.linalg.norm(X, axis=0)


def upsilon(m: int, cert: PathCertificate) -> np.ndarray:
    """Residual map ``Upsilon^(m)`` with ``u^(m) = Upsilon^(m) y``."""
    if not 1 <= m <= cert.m_stop + 1:
        raise ValueError(f"m must lie in 1..{cert.m_stop + 1}")
    Xn = cert.unit_columns()
    pos = {bl.id: k for k, bl in enumerate(cert.learners)}
    U = np.eye(cert.n)
    nu = cert.step_length
    for jid in cert.path[: m - 1]:
        x = Xn[:, pos[jid]]
        U -= nu * np.outer(x, x @ U)
    return U


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """``{y : Gamma y >= offset}`` for one path certificate.

    ``offset`` is always zero for boosting paths.  ``apply`` evaluates
    ``Gamma @ V`` without forming ``Gamma``.
    """

    cert: PathCertificate

    @property
    def n_rows(self) -> int:
        return 2 * (len(self.cert.learners) - 1) * self.cert.m_stop

    @property
    def offset(self) -> np.ndarray:
        return np.zeros(self.n_rows)

    def apply(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        vec = V.ndim == 1
        W = (V[:, None] if vec else V).copy()
        cert = self.cert
        Xn = cert.unit_columns()
        p = Xn.shape[1]
        pos = {bl.id: k for k, bl in enumerate(cert.learners)}
        nu = cert.step_length
        out = np.empty((self.n_rows, W.shape[1]))
        r = 0
        for jid, s in zip(cert.path, cert.signs):
            jm = pos[jid]
            proj = Xn.T @ W
            lead = s * proj[jm]
            for j in range(p):
                if j == jm:
                    continue
                out[r] = lead + proj[j]
                out[r + 1] = lead - proj[j]
                r += 2
            W -= nu * np.outer(Xn[:, jm], proj[jm])
        return out[:, 0] if vec else out

    @property
    def gamma(self) -> np.ndarray:
        n = self.cert.n
        if self.n_rows * n > MAX_DENSE_ENTRIES:
            raise MemoryError(
                f"Gamma would have {self.n_rows * n} entries; use Polyhedron.apply instead"
            )
        return self.apply(np.eye(n))

    def contains(self, y, slack: float = MEMBERSHIP_SLACK) -> bool:
        return bool(np.all(self.apply(y) >= -slack))


def build_gamma(cert: PathCertificate) -> Polyhedron:
    return Polyhedron(cert)


@dataclass(frozen=True)
class TruncationInterval:
    lo: float
    up: float

    def __post_init__(self):
        if not self.lo < self.up:
            raise DegenerateTruncation(f"empty truncation interval [{self.lo}, {self.up}]")


def truncation_limits(poly: Polyhedron, v, sigma2: float, y) -> TruncationInterval:
    """Interval of ``v^T y'`` over the line ``y' = z + c r`` inside the polyhedron,
    where ``c = v / v^T v`` and ``z = y - c v^T y``."""
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    vv = float(v @ v)
    if not vv > 0:
        raise ValueError("test vector must be non-zero")
    r_obs = float(v @ y)
    c = v / vv
    z = y - c * r_obs
    gc, gz = poly.apply(np.column_stack([c, z])).T
    tol = 1e-12 * max(float(np.abs(gc).max(initial=0.0)), np.finfo(float).tiny)
    zero = np.abs(gc) <= tol
    if np.any(gz[zero] < -MEMBERSHIP_SLACK):
        raise InfeasibleConstraint("infeasible: constraint independent of the test direction is violated")
    bound = -gz / np.where(zero, 1.0, gc)
    pos, neg = (gc > 0) & ~zero, (gc < 0) & ~zero
    lo = float(bound[pos].max()) if pos.any() else -math.inf
    up = float(bound[neg].min()) if neg.any() else math.inf
    return TruncationInterval(min(lo, r_obs), max(up, r_obs))


def _log_diff(la, lb):
    """``log(exp(la) - exp(lb))`` for ``la >= lb``."""
    if lb == -math.inf:
        return la
    if la <= lb:
        return -math.inf
    d = -math.expm1(lb - la)
    return la + math.log(d) if d > 0 else -math.inf


def trunc_gauss_cdf_sf(x, mu, sigma2, lo, up):
    """``(F, 1 - F)`` of ``N(mu, sigma2)`` truncated to ``[lo, up]`` at ``x``.

    Works with log tail probabilities on whichever side of the mean the
    interval sits, so far-tail intervals keep their precision.
    """
    if not sigma2 > 0:
        raise ValueError("variance must be positive")
    if not lo < up:
        raise DegenerateTruncation("empty truncation interval")
    sd = math.sqrt(sigma2)
    a, b = (lo - mu) / sd, (up - mu) / sd
    z = min(max((x - mu) / sd, a), b)
    flip = a + b > 0 if math.isfinite(a + b) else a > -b
    if flip:
        # upper tail: Q(t) = Phi(-t) is decreasing
        la, lz, lb = log_ndtr(-a), log_ndtr(-z), log_ndtr(-b)
        den = _log_diff(la, lb)
        num_f, num_s = _log_diff(la, lz), _log_diff(lz, lb)
    else:
        la, lz, lb = log_ndtr(a), log_ndtr(z), log_ndtr(b)
        den = _log_diff(lb, la)
        num_f, num_s = _log_diff(lz, la), _log_diff(lb, lz)
    if den == -math.inf:
        raise DegenerateTruncation("degenerate truncation")
    F = math.exp(num_f - den)
    S = math.exp(num_s - den)
    return min(max(F, 0.0), 1.0), min(max(S, 0.0), 1.0)


def trunc_gauss_cdf(x, mu, sigma2, lo, up) -> float:
    """CDF of ``N(mu, sigma2)`` truncated to ``[lo, up]``; ``x`` is clamped
    into the interval."""
    return trunc_gauss_cdf_sf(x, mu, sigma2, lo, up)[0]


def _pvalue(F, S, alternative):
    if alternative == "two-sided":
        return min(1.0, 2 * min(F, S))
    if alternative == "greater":
        return S
    if alternative == "less":
        return F
    raise ValueError(f"unknown alternative {alternative!r}")


def polyhedron_pvalue(poly: Polyhedron, v, sigma2: float, y, null_value: float = 0.0,
                      alternative: str = "two-sided", interval: TruncationInterval | None = None) -> float:
    """Selective p-value for ``H0: v^T mu = null_value`` given path and signs."""
    v = np.asarray(v, dtype=float)
    iv = interval or truncation_limits(poly, v, sigma2, y)
    F, S = trunc_gauss_cdf_sf(float(v @ y), null_value, sigma2 * float(v @ v), iv.lo, iv.up)
    return _pvalue(F, S, alternative)


def polyhedron_ci(r_obs: float, sd: float, interval: TruncationInterval, alpha: float = 0.05,
                  max_sd: float = 64.0):
    """Two-sided interval for the mean by inverting the truncated normal CDF
    at ``r_obs``.  Sides that do not cross within ``max_sd`` standard
    deviations are infinite."""

    def sf(mu):
        # 1 - F is nondecreasing in mu
        try:
            return trunc_gauss_cdf_sf(r_obs, mu, sd * sd, interval.lo, interval.up)[1]
        except DegenerateTruncation:
            return 0.0 if mu < r_obs else 1.0

    lo = invert_increasing(sf, alpha / 2, r_obs, sd, max_mult=max_sd, xtol=1e-8)
    hi = invert_increasing(sf, 1 - alpha / 2, r_obs, sd, max_mult=max_sd, xtol=1e-8)
    return lo, hi


def linear_only(learners: Sequence[BaseLearner]) -> bool:
    return all(bl.kind is LearnerKind.LINEAR for bl in learners)
