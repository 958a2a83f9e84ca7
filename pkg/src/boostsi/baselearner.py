"""Base-learners for component-wise boosting.

A base-learner is one additive component ``X_j beta_j`` fitted by
(penalized) least squares.  Three kinds are supported: single-column
linear effects, unpenalized groups of columns and P-splines (B-spline
basis with a difference penalty).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

PIVOT_TOL = 1e-10


class LearnerKind(str, enum.Enum):
    LINEAR = "linear"
    GROUP = "group"
    SPLINE = "spline"


class SingularLearnerError(ValueError):
    """Raised when ``X^T X + lambda D`` cannot be factorized."""

    def __init__(self, learner_id, detail=""):
        self.learner_id = learner_id
        msg = f"singular normal matrix for base-learner {learner_id}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class SplineConfig:
    degree: int = 3
    num_interior_knots: int = 5
    diff_order: int = 2
    knot_placement: str = "equidistant"

    def __post_init__(self):
        if self.degree < 0 or self.num_interior_knots < 1 or self.diff_order < 1:
            raise ValueError("degree >= 0, num_interior_knots >= 1, diff_order >= 1 required")
        if self.knot_placement != "equidistant":
            raise ValueError(f"unsupported knot placement {self.knot_placement!r}")
        if self.n_basis <= self.diff_order:
            raise ValueError(
                f"basis dimension {self.n_basis} must exceed difference order {self.diff_order}"
            )

    @property
    def n_basis(self) -> int:
        return self.num_interior_knots + self.degree + 1


def spline_knots(lo: float, hi: float, cfg: SplineConfig) -> np.ndarray:
    """Full knot vector: equidistant interior knots, boundary knots repeated
    ``degree + 1`` times."""
    inner = np.linspace(lo, hi, cfg.num_interior_knots + 2)
    return np.concatenate([np.repeat(lo, cfg.degree), inner, np.repeat(hi, cfg.degree)])


def _bspline_design(x: np.ndarray, knots: np.ndarray, degree: int) -> np.ndarray:
    return BSpline.design_matrix(x, knots, degree).toarray()


def build_pspline_basis(c, cfg: SplineConfig) -> np.ndarray:
    """Evaluate the B-spline basis of ``cfg`` at every entry of ``c``.

    Knots span ``[min(c), max(c)]``.  Returns an ``(n, M)`` matrix whose rows
    sum to one.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or not np.all(np.isfinite(c)):
        raise ValueError("covariate must be a finite 1-d vector")
    lo, hi = float(c.min()), float(c.max())
    if not hi > lo:
        raise ValueError("degenerate covariate: all values identical")
    return _bspline_design(c, spline_knots(lo, hi, cfg), cfg.degree)


def build_difference_penalty(M: int, diff_order: int) -> np.ndarray:
    """Return ``Delta^T Delta`` for the ``diff_order``-th difference operator."""
    if not M > diff_order >= 1:
        raise ValueError(f"need M > diff_order >= 1, got M={M}, diff_order={diff_order}")
    delta = np.diff(np.eye(M), n=diff_order, axis=0)
    return delta.T @ delta


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Maps covariate values to rows of a spline learner's design.

    The raw B-spline basis is centered with the column means observed at
    construction and then projected onto ``null_map`` (``M x q``).  Both
    steps are recorded so new points can be mapped consistently.
    """

    cfg: SplineConfig
    knots: np.ndarray
    lo: float
    hi: float
    col_means: np.ndarray
    null_map: np.ndarray

    def raw(self, c) -> np.ndarray:
        c = np.atleast_1d(np.asarray(c, dtype=float))
        if np.any(c < self.lo) or np.any(c > self.hi):
            raise ValueError(
                f"value outside basis support [{self.lo:g}, {self.hi:g}]"
            )
        return _bspline_design(c, self.knots, self.cfg.degree)

    def __call__(self, c) -> np.ndarray:
        return (self.raw(c) - self.col_means) @ self.null_map


@dataclass(frozen=True, eq=False)
class BaseLearner:
    """One additive component with design ``X_j``, penalty ``D_j`` and
    smoothing parameter ``lambda_j``.

    The normal matrix is factorized on construction; the hat matrix is
    computed lazily and cached.
    """

    id: int
    design: np.ndarray
    penalty: np.ndarray | None = None
    smoothing: float = 0.0
    kind: LearnerKind = LearnerKind.LINEAR
    name: str = ""
    basis: SplineBasis | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("design must be an n x p_j matrix with p_j >= 1")
        if not np.all(np.isfinite(X)):
            raise ValueError(f"base-learner {self.id}: non-finite design entries")
        p = X.shape[1]
        D = np.zeros((p, p)) if self.penalty is None else np.asarray(self.penalty, dtype=float)
        if D.shape != (p, p):
            raise ValueError(f"base-learner {self.id}: penalty must be {p} x {p}")
        if not np.allclose(D, D.T, atol=1e-12):
            raise ValueError(f"base-learner {self.id}: penalty not symmetric")
        if not np.isfinite(self.smoothing) or self.smoothing < 0:
            raise ValueError(f"base-learner {self.id}: smoothing must be >= 0")
        kind = LearnerKind(self.kind)
        if kind is LearnerKind.LINEAR and (p != 1 or np.any(D != 0)):
            raise ValueError("linear base-learners have one column and no penalty")
        if not self.name:
            object.__setattr__(self, "name", f"bl{self.id}")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "penalty", D)
        object.__setattr__(self, "kind", kind)
        X.setflags(write=False)
        D.setflags(write=False)
        self._factor  # fail early on rank problems

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        return self.design.T @ self.design

    @cached_property
    def _factor(self):
        N = self.gram + self.smoothing * self.penalty
        try:
            c, lower = linalg.cho_factor(N, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularLearnerError(self.id, str(exc)) from None
        piv = np.diag(c) ** 2
        if piv.min() < PIVOT_TOL * max(np.max(np.diag(N)), np.finfo(float).tiny):
            raise SingularLearnerError(self.id, "pivot below relative tolerance")
        return c, lower

    @cached_property
    def normal_inverse(self) -> np.ndarray:
        """``(X^T X + lambda D)^{-1}``."""
        S = linalg.cho_solve(self._factor, np.eye(self.p))
        return (S + S.T) / 2

    def solve(self, rhs):
        return linalg.cho_solve(self._factor, rhs)

    @cached_property
    def hat(self) -> np.ndarray:
        X = self.design
        H = X @ self.normal_inverse @ X.T
        H = (H + H.T) / 2
        H.setflags(write=False)
        return H

    @cached_property
    def df(self) -> float:
        """Effective degrees of freedom, ``trace(H)``."""
        return float(np.trace(self.normal_inverse @ self.gram))


def hat_matrix(bl: BaseLearner) -> np.ndarray:
    """``H_j = X_j (X_j^T X_j + lambda_j D_j)^{-1} X_j^T`` (cached per learner)."""
    return bl.hat


def fit_learner(bl: BaseLearner, u):
    """Penalized least-squares fit of ``bl`` to ``u``.

    Returns ``(coef, fitted, sse)``.
    """
    u = np.asarray(u, dtype=float)
    coef = bl.solve(bl.design.T @ u)
    fitted = bl.design @ coef
    resid = u - fitted
    return coef, fitted, float(resid @ resid)


def _trace_hat(X, D, lam):
    N = X.T @ X + lam * D
    return float(np.trace(np.linalg.solve(N, X.T @ X)))


def lambda_for_df(design, penalty, df: float, *, tol: float = 1e-8, max_iter: int = 200) -> float:
    """Smoothing parameter giving ``trace(H) = df``, found by bisection on
    ``log(lambda)``.

    ``df`` must lie strictly between the dimension of the penalty null space
    (within the column space) and the number of columns.
    """
    X = np.asarray(design, dtype=float)
    D = np.asarray(penalty, dtype=float)
    p = X.shape[1]
    if not 0 < df <= p:
        raise ValueError(f"df must lie in (0, {p}]")
    if df >= p - tol and np.linalg.matrix_rank(X) == p:
        return 0.0
    lo, hi = -20.0, 25.0
    if _trace_hat(X, D, np.exp(hi)) > df:
        raise ValueError(f"df={df} below the unpenalized null-space dimension")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if _trace_hat(X, D, np.exp(mid)) > df:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return float(np.exp(0.5 * (lo + hi)))


def _center_null_map(M: int) -> np.ndarray:
    # orthonormal basis of the complement of the constant coefficient vector
    q, _ = np.linalg.qr(np.column_stack([np.ones(M), np.eye(M)[:, : M - 1]]))
    return q[:, 1:]


def spline_learner(
    id: int,
    c,
    cfg: SplineConfig = SplineConfig(),
    *,
    smoothing: float | None = None,
    df: float | None = 4.0,
    name: str = "",
) -> BaseLearner:
    """P-spline learner for covariate ``c`` with a sum-to-zero constraint.

    The raw basis is centered, which makes the constant coefficient direction
    unidentifiable; it is removed by reparametrizing onto its orthogonal
    complement, so the design has ``M - 1`` columns.  Give either
    ``smoothing`` or a target ``df``.
    """
    c = np.asarray(c, dtype=float)
    B = build_pspline_basis(c, cfg)
    M = cfg.n_basis
    Z = _center_null_map(M)
    means = B.mean(axis=0)
    X = (B - means) @ Z
    D = Z.T @ build_difference_penalty(M, cfg.diff_order) @ Z
    D = (D + D.T) / 2
    if smoothing is None:
        if df is None:
            raise ValueError("either smoothing or df is required")
        smoothing = lambda_for_df(X, D, df)
    basis = SplineBasis(cfg, spline_knots(c.min(), c.max(), cfg), float(c.min()), float(c.max()), means, Z)
    return BaseLearner(id, X, D, smoothing, LearnerKind.SPLINE, name, basis)


def spline_deviation_learner(
    id: int,
    c,
    cfg: SplineConfig = SplineConfig(),
    *,
    smoothing: float | None = None,
    df: float | None = 1.0,
    name: str = "",
) -> BaseLearner:
    """Smooth deviation from a linear effect of ``c``.

    Uses the difference-penalty reparametrization ``B Delta^T (Delta Delta^T)^{-1}``
    with an identity penalty, then removes the constant and linear trend, so
    the learner can be paired with a linear learner for the same covariate.
    """
    c = np.asarray(c, dtype=float)
    B = build_pspline_basis(c, cfg)
    delta = np.diff(np.eye(cfg.n_basis), n=cfg.diff_order, axis=0)
    T = delta.T @ np.linalg.inv(delta @ delta.T)
    Q, _ = np.linalg.qr(np.column_stack([np.ones_like(c), c]))
    raw = B @ T
    X = raw - Q @ (Q.T @ raw)
    D = np.eye(X.shape[1])
    if smoothing is None:
        if df is None:
            raise ValueError("either smoothing or df is required")
        smoothing = lambda_for_df(X, D, df)
    return BaseLearner(id, X, D, smoothing, LearnerKind.SPLINE, name)


def linear_learner(id: int, x, name: str = "") -> BaseLearner:
    return BaseLearner(id, np.asarray(x, dtype=float)[:, None], None, 0.0, LearnerKind.LINEAR, name)


def group_learner(id: int, X, name: str = "") -> BaseLearner:
    return BaseLearner(id, np.asarray(X, dtype=float), None, 0.0, LearnerKind.GROUP, name)
