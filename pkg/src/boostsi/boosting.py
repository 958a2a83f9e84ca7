"""Component-wise L2-Boosting.

The loop is written against a :class:`LearnerBank`, a stacked view of all
base-learners that updates many residual vectors (columns of ``U``) at once.
Single fits use a one-column batch, congruency reruns use wide batches; both
go through the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baselearner import BaseLearner, LearnerKind

TIE_RTOL = 1e-12


@dataclass(frozen=True)
class BoostConfig:
    step_length: float = 0.1
    m_stop: int = 100
    offset: str = "zero-after-centering"

    def __post_init__(self):
        if not 0 < self.step_length <= 1:
            raise ValueError("step_length must lie in (0, 1]")
        if int(self.m_stop) != self.m_stop or self.m_stop < 1:
            raise ValueError("m_stop must be a positive integer")
        if self.offset != "zero-after-centering":
            raise ValueError(f"unsupported offset {self.offset!r}")


class LearnerBank:
    """All base-learners stacked column-wise, ordered by learner id.

    Parameters
    ----------
    learners : sequence of BaseLearner
    rows : index array, optional
        Restrict to these observations (a CV training split).  The designs
        are re-centered on the retained rows and the normal matrices rebuilt.
    """

    def __init__(self, learners: Sequence[BaseLearner], rows=None):
        if len(learners) == 0:
            raise ValueError("at least one base-learner is required")
        learners = sorted(learners, key=lambda bl: bl.id)
        ids = [bl.id for bl in learners]
        if len(set(ids)) != len(ids):
            raise ValueError("base-learner ids must be unique")
        ns = {bl.n for bl in learners}
        if len(ns) != 1:
            raise ValueError("all base-learners need the same number of rows")
        if rows is not None:
            rows = np.asarray(rows)
            learners = [_restrict(bl, rows) for bl in learners]
        self.learners = learners
        self.ids = np.array(ids)
        self.n = learners[0].n
        sizes = [bl.p for bl in learners]
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
        self.stops = self.starts + sizes
        self.X = np.hstack([bl.design for bl in learners])
        self.L = np.hstack([bl.design @ bl.normal_inverse for bl in learners])
        self.single = all(s == 1 for s in sizes)
        if self.single:
            inv = np.array([bl.normal_inverse[0, 0] for bl in learners])
            g = np.array([bl.gram[0, 0] for bl in learners])
            self.k_diag = 2 * inv - inv * g * inv
        else:
            P = self.X.shape[1]
            self.K = np.zeros((P, P))
            for bl, a, b in zip(learners, self.starts, self.stops):
                S = bl.normal_inverse
                K = 2 * S - S @ bl.gram @ S
                self.K[a:b, a:b] = (K + K.T) / 2

    def __len__(self):
        return len(self.learners)

    def position(self, learner_id) -> int:
        pos = np.flatnonzero(self.ids == learner_id)
        if pos.size == 0:
            raise KeyError(learner_id)
        return int(pos[0])

    def gains(self, G: np.ndarray) -> np.ndarray:
        """Loss reduction ``||u||^2 - ||u - H_j u||^2`` for every learner
        (rows) and residual vector (columns), given ``G = X^T U``."""
        if self.single:
            return self.k_diag[:, None] * G * G
        return np.add.reduceat(G * (self.K @ G), self.starts, axis=0)

    @staticmethod
    def choose(gain: np.ndarray) -> np.ndarray:
        """Best learner position per column; near-ties go to the lowest id."""
        best = gain.max(axis=0)
        ok = gain >= best - TIE_RTOL * np.abs(best)
        return ok.argmax(axis=0)

    def combine(self, L: np.ndarray, idx: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Column ``b`` of the result is ``L_{idx[b]} @ G_{idx[b]}[:, b]``.

        ``L`` is any row-stacked operator with the bank's column layout
        (``self.L`` gives fitted values).
        """
        B = G.shape[1]
        if self.single:
            return L[:, idx] * G[idx, np.arange(B)]
        out = np.empty((L.shape[0], B))
        for j in np.unique(idx):
            cols = np.flatnonzero(idx == j)
            a, b = self.starts[j], self.stops[j]
            out[:, cols] = L[:, a:b] @ G[a:b][:, cols]
        return out

    def signs(self, idx: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Sign of ``X_j^T u`` for single-column picks, 0 otherwise."""
        B = G.shape[1]
        g = G[self.starts[idx], np.arange(B)]
        s = np.where(g >= 0, 1, -1)
        width = (self.stops - self.starts)[idx]
        return np.where(width == 1, s, 0)


def _restrict(bl: BaseLearner, rows) -> BaseLearner:
    X = bl.design[rows]
    X = X - X.mean(axis=0)
    return BaseLearner(bl.id, X, bl.penalty, bl.smoothing, bl.kind, bl.name)


def boost_steps(bank: LearnerBank, U: np.ndarray, nu: float, m_stop: int):
    """Run the boosting loop on every column of ``U``.

    Yields ``(m, idx, G)`` once per iteration ``m = 1..m_stop`` *before* the
    update, where ``idx`` holds the chosen learner positions and
    ``G = X^T u^{(m)}``.  ``U`` is updated in place after each yield.
    """
    for m in range(1, m_stop + 1):
        G = bank.X.T @ U
        idx = bank.choose(bank.gains(G))
        yield m, idx, G
        U -= nu * bank.combine(bank.L, idx, G)


def first_entry(bank: LearnerBank, Y: np.ndarray, nu: float, m_stop: int) -> np.ndarray:
    """Iteration at which each learner is first chosen, per column of ``Y``.

    Returns an int array ``(J, B)``; learners never chosen get ``m_stop + 1``.
    The selected set after ``m`` steps is ``{j : entry[j] <= m}``.
    """
    U = np.array(Y, dtype=float, copy=True)
    if U.ndim == 1:
        U = U[:, None]
    B = U.shape[1]
    entry = np.full((len(bank), B), m_stop + 1, dtype=int)
    cols = np.arange(B)
    for m, idx, _ in boost_steps(bank, U, nu, m_stop):
        entry[idx, cols] = np.minimum(entry[idx, cols], m)
    return entry


def paths_and_signs(bank: LearnerBank, Y: np.ndarray, nu: float, m_stop: int):
    """Full selection paths (learner positions) and signs, shape ``(m_stop, B)``."""
    U = np.array(Y, dtype=float, copy=True)
    if U.ndim == 1:
        U = U[:, None]
    B = U.shape[1]
    path = np.empty((m_stop, B), dtype=int)
    sign = np.empty((m_stop, B), dtype=int)
    for m, idx, G in boost_steps(bank, U, nu, m_stop):
        path[m - 1] = idx
        sign[m - 1] = bank.signs(idx, G)
    return path, sign


@dataclass(frozen=True, eq=False)
class BoostFit:
    path: tuple
    signs: tuple
    fitted: np.ndarray
    coefficients: dict
    residuals: np.ndarray
    selected_set: tuple
    loss: np.ndarray = field(repr=False)
    step_length: float = 0.1
    learners: tuple = field(default=(), repr=False)

    @property
    def m_stop(self) -> int:
        return len(self.path)

    def learner(self, learner_id) -> BaseLearner:
        for bl in self.learners:
            if bl.id == learner_id:
                return bl
        raise KeyError(learner_id)


def check_centered(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("response must be a vector")
    if abs(y.mean()) > 1e-10 * max(1.0, float(np.abs(y).max(initial=0.0))):
        raise ValueError("response must be centered (mean zero)")
    return y


def boost_fit(y, learners: Sequence[BaseLearner], cfg: BoostConfig, bank: LearnerBank | None = None) -> BoostFit:
    """Fit L2-Boosting with offset zero on a centered response."""
    y = check_centered(y)
    if bank is None:
        bank = LearnerBank(learners)
    if bank.n != y.size:
        raise ValueError(f"response has {y.size} rows, learners have {bank.n}")
    nu = cfg.step_length
    U = y[:, None].copy()
    coefs = {int(i): np.zeros(bl.p) for i, bl in zip(bank.ids, bank.learners)}
    path, signs, loss = [], [], []
    for m, idx, G in boost_steps(bank, U, nu, cfg.m_stop):
        loss.append(float(U[:, 0] @ U[:, 0]))
        j = int(idx[0])
        a, b = bank.starts[j], bank.stops[j]
        coefs[int(bank.ids[j])] += nu * (bank.learners[j].normal_inverse @ G[a:b, 0])
        path.append(int(bank.ids[j]))
        signs.append(int(bank.signs(idx, G)[0]))
    resid = U[:, 0]
    loss.append(float(resid @ resid))
    fitted = y - resid
    selected = tuple(sorted(set(path)))
    return BoostFit(
        path=tuple(path),
        signs=tuple(signs),
        fitted=fitted,
        coefficients={k: v for k, v in coefs.items() if k in selected},
        residuals=resid,
        selected_set=selected,
        loss=np.array(loss),
        step_length=nu,
        learners=tuple(bank.learners),
    )


def selection_set(fit: BoostFit) -> tuple:
    """Distinct learner ids in the path, ascending."""
    return tuple(sorted(set(fit.path)))


def selected_design(fit_or_learners, selected=None) -> np.ndarray:
    """Column-stack the designs of the selected learners (ascending id)."""
    if isinstance(fit_or_learners, BoostFit):
        learners = fit_or_learners.learners
        selected = fit_or_learners.selected_set if selected is None else selected
    else:
        learners = fit_or_learners
    by_id = {bl.id: bl for bl in learners}
    return np.hstack([by_id[j].design for j in sorted(selected)])


class ZeroVarianceError(ValueError):
    pass


def estimate_sigma(fit: BoostFit, y, mode: str = "boost_residual", sigma2: float | None = None) -> float:
    """Error variance for the selective tests.

    ``mode`` is one of ``known`` (returns ``sigma2``), ``boost_residual``,
    ``response`` or ``ols_refit``.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 2:
        raise ValueError("need at least two observations")
    if mode == "known":
        if sigma2 is None or not sigma2 > 0:
            raise ValueError("known variance must be positive")
        return float(sigma2)
    if mode == "boost_residual":
        r = y - fit.fitted
        s2 = float(r @ r) / (n - 1)
    elif mode == "response":
        s2 = float(np.var(y, ddof=1))
    elif mode == "ols_refit":
        X = selected_design(fit)
        rank = np.linalg.matrix_rank(X)
        if rank >= n:
            raise ValueError("ols_refit needs rank(X_A) < n")
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ beta
        s2 = float(r @ r) / (n - rank)
    else:
        raise ValueError(f"unknown variance mode {mode!r}")
    if not s2 > 1e-300:
        raise ZeroVarianceError("zero variance")
    return s2


def is_linear_only(learners) -> bool:
    return all(bl.kind is LearnerKind.LINEAR for bl in learners)
