"""Weight histograms and the optimal transportation distance between them."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .nn import ParamKind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightHistogram:
    masses: np.ndarray
    lo: float = -1.0
    hi: float = 1.0
    clamped: int = 0  # how many inputs fell outside [lo, hi]

    @property
    def n(self):
        return self.masses.size

    @property
    def width(self):
        return (self.hi - self.lo) / self.n

    @property
    def centers(self):
        return self.lo + (np.arange(self.n) + 0.5) * self.width


def weight_histogram(values, n=100, lo=-1.0, hi=1.0):
    """Normalized ``n``-bin histogram on ``[lo, hi]``; outliers go to the edge bins."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot histogram an empty array")
    if n < 1:
        raise ValueError("need at least one bin")
    outside = int(np.count_nonzero((values < lo) | (values > hi)))
    if outside:
        log.warning("%d of %d values fall outside [%g, %g] and were clamped", outside, values.size, lo, hi)
    idx = np.floor((values - lo) / (hi - lo) * n).astype(np.int64)
    idx = np.clip(idx, 0, n - 1)
    counts = np.bincount(idx, minlength=n).astype(np.float64)
    return WeightHistogram(counts / values.size, lo, hi, outside)


def _check_pair(h1, h2):
    if h1.n != h2.n or h1.lo != h2.lo or h1.hi != h2.hi:
        raise ValueError(f"histograms differ in binning: {h1.n} vs {h2.n} bins")


def otd(h1, h2):
    """Wasserstein-1 distance between two histograms via their CDFs."""
    _check_pair(h1, h2)
    cdf_gap = np.cumsum(h1.masses) - np.cumsum(h2.masses)
    return float(np.sum(np.abs(cdf_gap[:-1])) * h1.width)


def otd_lp(h1, h2):
    """The transportation linear program solved directly, with plan ``p_lm`` from bin l to bin m.

    Minimises ``sum d_lm p_lm`` subject to ``sum_l p_lm <= h2[m]``,
    ``sum_m p_lm <= h1[l]`` and ``sum p_lm = 1``, where ``d_lm`` is the
    distance between bin centres.
    """
    _check_pair(h1, h2)
    n = h1.n
    c = h1.centers
    cost = np.abs(c[:, None] - c[None, :]).ravel()
    rows = np.zeros((n, n * n))
    cols = np.zeros((n, n * n))
    for l in range(n):
        rows[l, l * n:(l + 1) * n] = 1.0
        cols[l, l::n] = 1.0
    A_ub = np.vstack([cols, rows])
    b_ub = np.concatenate([h2.masses, h1.masses])
    res = linprog(
        cost, A_ub=A_ub, b_ub=b_ub, A_eq=np.ones((1, n * n)), b_eq=[1.0],
        bounds=(0, None), method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def model_histogram(model, n=100, kind=ParamKind.WEIGHT):
    return weight_histogram(model.params[kind], n)


def pairwise_otd(models, n=100, kind=ParamKind.WEIGHT):
    if len(models) < 2:
        raise ValueError("need at least two models")
    hists = [model_histogram(m, n, kind) for m in models]
    k = len(hists)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = otd(hists[i], hists[j])
    return out


def offdiag_summary(matrix):
    """Mean and standard deviation of the off-diagonal entries."""
    k = matrix.shape[0]
    vals = matrix[~np.eye(k, dtype=bool)]
    return float(vals.mean()), float(vals.std())
