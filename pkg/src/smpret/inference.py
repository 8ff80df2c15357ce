"""
Nonparametric test of geometric sojourn times.

Under a geometric conditional sojourn law ``g(2) = g(1) (1 - g(1))``; the
statistic scales the empirical deviation from that equality by its
asymptotic standard error so it is approximately standard normal.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import SmpError
from .kernel import DerivedKernelViews, SemiMarkovKernel

MIN_COUNT = 30


@dataclass(frozen=True)
class PairResult:
    i: int
    j: int
    N: int
    g1: float
    g2: float
    score: float
    pvalue: float
    decision: str
    low_sample: bool = False


@dataclass(frozen=True)
class TestReport:
    __test__ = False  # not a pytest class

    alpha: float
    critical: float
    results: tuple[PairResult, ...]
    skipped: tuple[tuple[int, int, str], ...] = field(default=())

    @property
    def n_tested(self) -> int:
        return len(self.results)

    @property
    def n_rejected(self) -> int:
        return sum(r.decision == "H0 rejected" for r in self.results)

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "critical": self.critical,
            "tested": self.n_tested,
            "rejected": self.n_rejected,
            "low_sample": [[r.i, r.j] for r in self.results if r.low_sample],
            "skipped": [{"i": i, "j": j, "reason": why} for i, j, why in self.skipped],
        }

    def write_csv(self, dest) -> None:
        with open(dest, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "N", "g1", "g2", "score", "pvalue", "decision"])
            for r in self.results:
                w.writerow([r.i, r.j, r.N, repr(r.g1), repr(r.g2), repr(r.score),
                            repr(r.pvalue), r.decision])

    def write_summary(self, dest) -> None:
        with open(dest, "w") as fh:
            json.dump(self.summary(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def sojourn_pmf(source, i: int, j: int) -> np.ndarray:
    """
    ``g_ij(t)`` for ``t = 0..t_max`` (``g(0) = 0``).

    ``source`` is a count array ``(m, m, t_max+1)`` (empirical ratios), a
    kernel with counts, or derived views (differences of ``G_ij``).
    """
    if isinstance(source, SemiMarkovKernel):
        source = source.counts if source.counts is not None else source.views
    if isinstance(source, DerivedKernelViews):
        if source.P[i, j] <= 0:
            raise SmpError(f"p_{i}{j} = 0: no sojourn law for this pair")
        return np.diff(source.G[i, j], prepend=0.0)
    c = np.asarray(source)
    N = c[i, j].sum()
    if N == 0:
        raise SmpError(f"N({i},{j}) = 0: no observed transitions")
    return c[i, j] / N


def test_statistic(g1: float, g2: float, N: int) -> float:
    """Standardized deviation of ``g(2)`` from its geometric value ``g(1)(1 - g(1))``."""
    if N < 1:
        raise SmpError("N must be >= 1")
    if not 0.0 < g1 < 1.0:
        raise SmpError(f"statistic undefined for g(1) = {g1}")
    num = g1 * (1.0 - g1) - g2
    den = math.sqrt(g1 * (1.0 - g1) ** 2 * (2.0 - g1))
    return math.sqrt(N) * num / den


test_statistic.__test__ = False


def critical_value(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise SmpError("alpha must lie in (0, 1)")
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def two_sided_pvalue(score: float) -> float:
    return math.erfc(abs(score) / math.sqrt(2.0))


def run_tests(source, alpha: float = 0.05, min_count: int = MIN_COUNT) -> TestReport:
    """Test every ordered pair ``i != j`` with observed transitions.

    ``source`` is a kernel carrying counts or the count array itself.
    """
    counts = source.counts if isinstance(source, SemiMarkovKernel) else source
    if counts is None:
        raise SmpError("the test needs raw sojourn counts")
    counts = np.asarray(counts)
    m, _, L = counts.shape
    crit = critical_value(alpha)
    results, skipped = [], []
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            N = int(counts[i, j].sum())
            if N == 0:
                skipped.append((i, j, "no transitions"))
                continue
            if L - 1 < 2:
                skipped.append((i, j, "t_max < 2"))
                continue
            g = counts[i, j] / N
            g1, g2 = float(g[1]), float(g[2])
            if not 0.0 < g1 < 1.0:
                skipped.append((i, j, f"g(1) = {g1}"))
                continue
            s = test_statistic(g1, g2, N)
            p = two_sided_pvalue(s)
            dec = "H0 rejected" if abs(s) > crit else "H0 not rejected"
            results.append(PairResult(i, j, N, g1, g2, s, p, dec, N < min_count))
    return TestReport(alpha=alpha, critical=crit, results=tuple(results), skipped=tuple(skipped))
