"""Cross-validated choice of the stopping iteration with fixed folds.

Holding the fold assignment fixed turns "boost, then pick ``m_stop`` by CV"
into a deterministic map from the response to a selected set, which is what
congruency reruns need.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselearner import BaseLearner
from .boosting import LearnerBank, boost_steps, check_centered, first_entry


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    folds: np.ndarray
    k: int
    seed: int | None = None

    def __post_init__(self):
        folds = np.asarray(self.folds, dtype=int)
        if self.k < 2:
            raise ValueError("need k >= 2 folds")
        if folds.min() < 1 or folds.max() > self.k:
            raise ValueError("fold labels must lie in 1..k")
        if np.unique(folds).size != self.k:
            raise ValueError("every fold must be non-empty")
        folds.setflags(write=False)
        object.__setattr__(self, "folds", folds)

    @property
    def n(self) -> int:
        return self.folds.size

    def sizes(self) -> np.ndarray:
        return np.bincount(self.folds, minlength=self.k + 1)[1:]


@dataclass(frozen=True, eq=False)
class CVResult:
    risk: np.ndarray
    chosen_mstop: int


def assign_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Seeded uniform shuffle of the balanced labels ``(1,..,1,2,..,k)``.

    When ``k`` does not divide ``n`` the extra members go to the lowest labels.
    """
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    labels = np.sort(np.arange(n) % k) + 1
    rng = np.random.default_rng(seed)
    return FoldAssignment(rng.permutation(labels), k, seed)


class CVPlan:
    """Per-fold learner banks, built once and reused for every rerun."""

    def __init__(self, learners: Sequence[BaseLearner], folds: FoldAssignment):
        self.learners = list(learners)
        self.full = LearnerBank(learners)
        if folds.n != self.full.n:
            raise ValueError("fold assignment length differs from the data")
        self.folds = folds
        self.splits = []
        for f in range(1, folds.k + 1):
            tr = np.flatnonzero(folds.folds != f)
            te = np.flatnonzero(folds.folds == f)
            bank = LearnerBank(learners, rows=tr)
            X_te = self.full.X[te] - self.full.X[tr].mean(axis=0)
            S = np.zeros((bank.X.shape[1], bank.X.shape[1]))
            for bl, a, b in zip(bank.learners, bank.starts, bank.stops):
                S[a:b, a:b] = bl.normal_inverse
            self.splits.append((tr, te, bank, X_te @ S))

    def risk(self, Y: np.ndarray, nu: float, grid_max: int) -> np.ndarray:
        """Held-out mean squared error for ``m = 1..grid_max`` (rows) for
        every column of ``Y``, averaged over folds."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        total = np.zeros((grid_max, Y.shape[1]))
        for tr, te, bank, L_te in self.splits:
            offset = Y[tr].mean(axis=0)
            U = Y[tr] - offset
            err = Y[te] - offset
            for m, idx, G in boost_steps(bank, U, nu, grid_max):
                err -= nu * bank.combine(L_te, idx, G)
                total[m - 1] += np.mean(err * err, axis=0)
        return total / len(self.splits)

    def select(self, Y: np.ndarray, nu: float, grid_max: int):
        """Chosen ``m_stop`` and selection mask ``(J, B)`` per column."""
        risk = self.risk(Y, nu, grid_max)
        mstop = risk.argmin(axis=0) + 1
        Yc = np.asarray(Y, dtype=float)
        if Yc.ndim == 1:
            Yc = Yc[:, None]
        entry = first_entry(self.full, Yc - Yc.mean(axis=0), nu, grid_max)
        return mstop, entry <= mstop[None, :]


def cv_choose_mstop(y, learners, grid_max: int, nu: float, folds: FoldAssignment, plan: CVPlan | None = None) -> CVResult:
    """k-fold CV risk over ``m = 1..grid_max``; ties go to the smallest ``m``."""
    y = check_centered(y)
    plan = plan or CVPlan(learners, folds)
    risk = plan.risk(y, nu, grid_max)[:, 0]
    return CVResult(risk, int(np.argmin(risk)) + 1)


def pipeline_select(y, learners, nu: float, grid_max: int, folds: FoldAssignment | None = None, m_stop: int | None = None):
    """The full selection map: CV-chosen (or given) ``m_stop``, then boosting
    on all rows.  Returns ``(selected ids, m_stop)``."""
    y = check_centered(y)
    bank = LearnerBank(learners)
    if m_stop is None:
        if folds is None:
            raise ValueError("either folds or m_stop is required")
        m_stop = cv_choose_mstop(y, learners, grid_max, nu, folds).chosen_mstop
    entry = first_entry(bank, y, nu, m_stop)[:, 0]
    selected = tuple(int(i) for i in bank.ids[entry <= m_stop])
    return selected, int(m_stop)
