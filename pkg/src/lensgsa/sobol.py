"""Variance-based sensitivity indices with the Saltelli sampling design.

First-order indices use the Saltelli (2010) estimator and total-effect
indices the Jansen estimator; both reuse the same ``N (d + 2)`` model runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_evaluator, check_ranges


class ZeroVariance(ValueError):
    pass


@dataclass
class SobolLevel:
    n: int
    first_order: np.ndarray
    total: np.ndarray


@dataclass
class SobolResult:
    """Index matrices have shape ``(n_inputs, n_outputs)``."""

    first_order: np.ndarray
    total: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def negative_total(self) -> np.ndarray:
        # flagged, never clamped
        return self.total < 0

    @property
    def negative_first_order(self) -> np.ndarray:
        return self.first_order < 0

    def sample_sizes(self) -> list:
        return [level.n for level in self.trace]


def saltelli_matrices(n: int, lower, upper, seed=None):
    """Draw the base matrices ``A`` and ``B`` plus the ``d`` hybrids ``AB_i``.

    ``AB_i`` is ``A`` with column ``i`` taken from ``B``.
    """
    if n < 2:
        raise ValueError("Saltelli design needs n >= 2")
    lower, upper = check_ranges(lower, upper)
    rng = np.random.default_rng(seed)
    d = lower.size
    A = rng.uniform(lower, upper, size=(n, d))
    B = rng.uniform(lower, upper, size=(n, d))
    AB = []
    for i in range(d):
        M = A.copy()
        M[:, i] = B[:, i]
        AB.append(M)
    return A, B, AB


def estimate_indices(fA, fB, fAB):
    """First-order and total indices from Saltelli-design evaluations.

    Parameters
    ----------
    fA, fB : array, shape (N,) or (N, m)
    fAB : sequence of d arrays shaped like ``fA``

    Returns
    -------
    first_order, total : arrays of shape (d,) or (d, m)
    """
    fA = np.asarray(fA, dtype=float)
    fB = np.asarray(fB, dtype=float)
    fAB = np.asarray(fAB, dtype=float)
    squeeze = fA.ndim == 1
    if squeeze:
        fA, fB, fAB = fA[:, None], fB[:, None], fAB[..., None]
    if fB.shape != fA.shape or fAB.shape[1:] != fA.shape:
        raise ValueError("inconsistent evaluation shapes")

    var = np.var(np.concatenate((fA, fB)), axis=0, ddof=1)
    if np.any(var < 1e-30):
        bad = np.flatnonzero(var < 1e-30).tolist()
        raise ZeroVariance(f"output(s) {bad} have zero variance")

    first = np.mean(fB[None] * (fAB - fA[None]), axis=1) / var
    total = 0.5 * np.mean((fA[None] - fAB) ** 2, axis=1) / var
    if squeeze:
        return first[:, 0], total[:, 0]
    return first, total


def _evaluate_design(evaluator, A, B, AB):
    n = A.shape[0]
    Y = np.asarray(evaluator(np.vstack([A, B, *AB])), dtype=float)
    fA, fB = Y[:n], Y[n:2 * n]
    # scalar models keep 1-D indices
    fAB = Y[2 * n:].reshape((len(AB), n) + Y.shape[1:])
    return fA, fB, fAB


def sample_schedule(n_start: int, n_max: int, growth_factor: int = 2) -> list:
    if n_start < 2 or n_max < n_start or growth_factor < 2:
        raise ValueError("need 2 <= n_start <= n_max and growth_factor >= 2")
    sizes = [n_start]
    while sizes[-1] * growth_factor <= n_max:
        sizes.append(sizes[-1] * growth_factor)
    return sizes


def run_convergence(evaluator, lower, upper, n_start=100, n_max=200_000,
                    growth_factor=2, seed=0, n_final_average=3) -> SobolResult:
    """Estimate indices on a doubling schedule and average the largest levels.

    Each level draws fresh samples from ``seed + level``.
    """
    f = as_evaluator(evaluator)
    trace = []
    for level, n in enumerate(sample_schedule(n_start, n_max, growth_factor)):
        A, B, AB = saltelli_matrices(n, lower, upper, seed=seed + level)
        try:
            first, total = estimate_indices(*_evaluate_design(f, A, B, AB))
        except Exception as exc:
            raise type(exc)(f"at Sobol level {level} (N={n}): {exc}") from exc
        trace.append(SobolLevel(n, first, total))
    tail = trace[-n_final_average:]
    return SobolResult(
        first_order=np.mean([lv.first_order for lv in tail], axis=0),
        total=np.mean([lv.total for lv in tail], axis=0),
        trace=trace,
    )


class SobolAnalysis(BaseEstimator):
    """Convergence-tracked Sobol analysis of a batch model.

    ``fit`` takes the model to analyse: a callable mapping an ``(N, d)`` array
    to ``(N, m)`` outputs, or any fitted estimator exposing ``predict``.
    """

    def __init__(self, lower=(2.0,) * 4, upper=(5.0,) * 4, n_start=100, n_max=200_000,
                 growth_factor=2, seed=0):
        self.lower = lower
        self.upper = upper
        self.n_start = n_start
        self.n_max = n_max
        self.growth_factor = growth_factor
        self.seed = seed

    def fit(self, evaluator, y=None):
        self.result_ = run_convergence(
            evaluator, self.lower, self.upper, n_start=self.n_start, n_max=self.n_max,
            growth_factor=self.growth_factor, seed=self.seed,
        )
        self.first_order_indices_ = self.result_.first_order
        self.total_indices_ = self.result_.total
        self.trace_ = self.result_.trace
        return self
