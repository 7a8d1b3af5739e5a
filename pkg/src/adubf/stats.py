"""Paired bootstrap comparisons of per-sample rates."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

__all__ = ["PairedComparison", "paired_bootstrap"]


@dataclass(frozen=True)
class PairedComparison:
    """Mean of ``a - b`` with a two-sided percentile bootstrap interval."""

    mean_diff: float
    lo: float
    hi: float

    @property
    def a_greater(self):
        """``a`` exceeds ``b``: the whole interval is above zero."""
        return self.lo > 0

    @property
    def a_not_less(self):
        """``a >= b`` is not contradicted: the interval reaches zero or above."""
        return self.hi >= 0


def paired_bootstrap(a, b, level=0.95, n_boot=10_000, seed=0):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise DimensionError("paired bootstrap needs two equal-length 1-D samples")
    d = a - b
    rng = np.random.default_rng(seed)
    means = d[rng.integers(0, d.size, (n_boot, d.size))].mean(axis=1)
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(means, [tail, 100 - tail])
    return PairedComparison(float(d.mean()), float(lo), float(hi))
