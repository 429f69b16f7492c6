"""Monte-Carlo propagation of independent uniform clearance uncertainty."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_evaluator, check_ranges
from .sobol import sample_schedule

# barrel-lens1, barrel-lens3, barrel-lens4, lens1-lens2 (μm)
DEFAULT_LOWER = (2.77316, 3.02553, 2.23457, 2.82143)
DEFAULT_UPPER = (4.32155, 4.79024, 4.70370, 4.96429)


@dataclass
class Histogram:
    bin_edges: np.ndarray
    densities: np.ndarray
    counts: np.ndarray
    mean: float
    std: float

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def area(self) -> float:
        return float(np.sum(self.densities * self.widths))

    @property
    def markers(self) -> tuple:
        """Positions of the mean and the one-standard-deviation band."""
        return self.mean - self.std, self.mean, self.mean + self.std


@dataclass
class UqLevel:
    n: int
    mean: np.ndarray
    std: np.ndarray


@dataclass
class UqResult:
    mean: np.ndarray
    std: np.ndarray
    trace: list = field(default_factory=list)
    histograms: list = field(default_factory=list)

    def sample_sizes(self) -> list:
        return [level.n for level in self.trace]


def histogram(samples, n_bins: int = 40) -> Histogram:
    """Equal-width bins over ``[min, max]`` normalized to unit area.

    Constant samples collapse to one bin of width ``max(1e-12, |value| * 1e-9)``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("histogram of an empty sample")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    mean = float(x.mean())
    std = float(x.std(ddof=1)) if x.size > 1 else 0.0
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        width = max(1e-12, abs(lo) * 1e-9)
        edges = np.array([lo - width / 2, lo + width / 2])
        counts = np.array([x.size])
    else:
        counts, edges = np.histogram(x, bins=n_bins, range=(lo, hi))
    densities = counts / (x.size * np.diff(edges))
    return Histogram(edges, densities, counts, mean, std)


def _block_moments(Y):
    mean = Y.mean(axis=0)
    return Y.shape[0], mean, np.sum((Y - mean) ** 2, axis=0)


def _merge(a, b):
    # Chan et al. pairwise combination of (count, mean, M2)
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), sa + sb + delta**2 * (na * nb / n)


def running_moments(Y, sizes) -> list:
    """Mean and unbiased std of each nested prefix ``Y[:n]`` for ``n`` in ``sizes``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    out, acc, start = [], None, 0
    for n in sizes:
        block = _block_moments(Y[start:n])
        acc = block if acc is None else _merge(acc, block)
        start = n
        count, mean, m2 = acc
        std = np.sqrt(m2 / (count - 1)) if count > 1 else np.zeros_like(mean)
        out.append(UqLevel(count, mean.copy(), std))
    return out


def propagate(evaluator, lower=DEFAULT_LOWER, upper=DEFAULT_UPPER, n_final=12800, n_start=100,
              seed=0, n_bins=40) -> UqResult:
    """Sample inputs once, evaluate, and report statistics on a doubling schedule.

    Levels are nested prefixes of one sample, so the trace refines monotonically;
    final statistics and histograms come from all ``n_final`` samples.
    """
    lower, upper = check_ranges(lower, upper)
    f = as_evaluator(evaluator)
    sizes = sample_schedule(n_start, n_final)
    if sizes[-1] != n_final:
        sizes.append(n_final)
    X = np.random.default_rng(seed).uniform(lower, upper, size=(n_final, lower.size))
    Y = np.asarray(f(X), dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    trace = running_moments(Y, sizes)
    hists = [histogram(Y[:, j], n_bins) for j in range(Y.shape[1])]
    return UqResult(mean=trace[-1].mean, std=trace[-1].std, trace=trace, histograms=hists)


class MonteCarloPropagation(BaseEstimator):
    """Estimator-style front end: ``fit(model)`` runs the propagation."""

    def __init__(self, lower=DEFAULT_LOWER, upper=DEFAULT_UPPER, n_final=12800, n_start=100,
                 n_bins=40, seed=0):
        self.lower = lower
        self.upper = upper
        self.n_final = n_final
        self.n_start = n_start
        self.n_bins = n_bins
        self.seed = seed

    def fit(self, evaluator, y=None):
        self.result_ = propagate(evaluator, self.lower, self.upper, n_final=self.n_final,
                                 n_start=self.n_start, seed=self.seed, n_bins=self.n_bins)
        self.mean_ = self.result_.mean
        self.std_ = self.result_.std
        self.trace_ = self.result_.trace
        self.histograms_ = self.result_.histograms
        return self
