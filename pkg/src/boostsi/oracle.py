"""Deterministic selection maps used for congruency checks.

An oracle closes over everything the selection depends on except the
response, and answers "does rerunning the selection on this probe response
reproduce the reference selection?" for a whole batch of probes (columns).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .baselearner import BaseLearner
from .boosting import LearnerBank, first_entry, paths_and_signs
from .stopping import CVPlan, FoldAssignment

CHUNK = 512


class SelectionOracle:
    """Base class: subclasses implement :meth:`_selected` returning a
    ``(J, B)`` boolean selection mask for probe responses ``Y`` (``n x B``)."""

    bank: LearnerBank
    reference: tuple = ()

    def _selected(self, Y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _ref_mask(self):
        return np.isin(self.bank.ids, self.reference)

    def select(self, y) -> tuple:
        mask = self._selected(np.asarray(y, dtype=float)[:, None])[:, 0]
        return tuple(int(i) for i in self.bank.ids[mask])

    def congruent(self, Y) -> np.ndarray:
        """Boolean per column of ``Y``: selected set equals the reference."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        ref = self._ref_mask()[:, None]
        out = np.empty(Y.shape[1], dtype=bool)
        for a in range(0, Y.shape[1], CHUNK):
            block = Y[:, a:a + CHUNK]
            out[a:a + CHUNK] = np.all(self._selected(block) == ref, axis=0)
        return out

    def with_reference(self, y):
        """Set the reference selection to the one obtained on ``y``."""
        self.reference = self.select(y)
        return self


class FixedStopOracle(SelectionOracle):
    """Boosting with a fixed number of iterations."""

    def __init__(self, learners: Sequence[BaseLearner], step_length: float, m_stop: int,
                 reference=None, bank: LearnerBank | None = None):
        self.bank = bank or LearnerBank(learners)
        self.step_length = step_length
        self.m_stop = int(m_stop)
        self.reference = tuple(reference) if reference is not None else ()

    def _selected(self, Y):
        return first_entry(self.bank, Y, self.step_length, self.m_stop) <= self.m_stop


class CVOracle(SelectionOracle):
    """Boosting with ``m_stop`` chosen by k-fold CV on fixed folds.

    The chosen ``m_stop`` may differ between probes; only the selected set
    is compared.
    """

    def __init__(self, learners: Sequence[BaseLearner], step_length: float, grid_max: int,
                 folds: FoldAssignment, reference=None, plan: CVPlan | None = None):
        self.plan = plan or CVPlan(learners, folds)
        self.bank = self.plan.full
        self.step_length = step_length
        self.grid_max = int(grid_max)
        self.reference = tuple(reference) if reference is not None else ()

    def _selected(self, Y):
        return self.plan.select(Y, self.step_length, self.grid_max)[1]

    def mstop(self, y) -> int:
        return int(self.plan.select(np.asarray(y, dtype=float)[:, None], self.step_length, self.grid_max)[0][0])


class PathSignOracle(SelectionOracle):
    """Congruent iff the full path and sign list are reproduced.

    This is the conditioning event of the polyhedral approach; along a line
    it yields a single interval.
    """

    def __init__(self, learners: Sequence[BaseLearner], step_length: float, m_stop: int,
                 bank: LearnerBank | None = None):
        self.bank = bank or LearnerBank(learners)
        self.step_length = step_length
        self.m_stop = int(m_stop)
        self.ref_path = None
        self.ref_sign = None

    def with_reference(self, y):
        path, sign = paths_and_signs(self.bank, np.asarray(y, dtype=float), self.step_length, self.m_stop)
        self.ref_path, self.ref_sign = path[:, 0], sign[:, 0]
        self.reference = tuple(int(i) for i in self.bank.ids[np.unique(self.ref_path)])
        return self

    def congruent(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        out = np.empty(Y.shape[1], dtype=bool)
        for a in range(0, Y.shape[1], CHUNK):
            path, sign = paths_and_signs(self.bank, Y[:, a:a + CHUNK], self.step_length, self.m_stop)
            out[a:a + CHUNK] = np.all(path == self.ref_path[:, None], axis=0) & np.all(
                sign == self.ref_sign[:, None], axis=0
            )
        return out

    def _selected(self, Y):
        return first_entry(self.bank, Y, self.step_length, self.m_stop) <= self.m_stop


class FunctionOracle(SelectionOracle):
    """Wraps a plain predicate ``f(Y) -> bool array`` (mainly for testing)."""

    def __init__(self, predicate: Callable[[np.ndarray], np.ndarray]):
        self.predicate = predicate

    def congruent(self, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        return np.asarray(self.predicate(Y), dtype=bool)

    def select(self, y):
        raise NotImplementedError("predicate oracles only answer congruency")
