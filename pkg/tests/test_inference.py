import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smpret.errors import SmpError
from smpret.inference import (critical_value, run_tests, sojourn_pmf, test_statistic,
                              two_sided_pvalue)
from smpret.kernel import SemiMarkovKernel, estimate_kernel, geometric_kernel
from smpret.simulate import SimConfig, simulate_markov
from smpret.state_model import StateSpace

SP3 = StateSpace.symmetric(3, 0.01)


def test_pmf_deterministic_and_geometric():
    b = np.zeros((3, 3, 5))
    b[0, 1, 3] = 1.0
    b[1, 0, 1] = b[2, 0, 1] = 1.0
    g = sojourn_pmf(SemiMarkovKernel(b, SP3).views, 0, 1)
    np.testing.assert_allclose(g, [0, 0, 0, 1, 0])
    P = np.array([[0, 0.5, 0.5], [1, 0, 0], [1, 0, 0]])
    g = sojourn_pmf(geometric_kernel(P, 0.3, 50, SP3).views, 0, 2)
    t = np.arange(1, 50)
    np.testing.assert_allclose(g[1:50], 0.3 * 0.7 ** (t - 1), atol=1e-15)
    with pytest.raises(SmpError):
        sojourn_pmf(SemiMarkovKernel(b, SP3).views, 0, 2)


def test_pmf_from_counts():
    c = np.zeros((2, 2, 6), dtype=int)
    c[0, 1, 1:] = [50, 20, 10, 10, 10]
    g = sojourn_pmf(c, 0, 1)
    assert g[1] == 0.5 and g[2] == 0.2
    with pytest.raises(SmpError):
        sojourn_pmf(c, 1, 0)


def test_statistic_values():
    assert test_statistic(0.3, 0.3 * 0.7, 500) == 0.0
    assert test_statistic(0.5, 0.2, 100) == pytest.approx(1.1547005383792515, abs=1e-12)
    assert math.sqrt(0.5 * 0.25 * 1.5) == pytest.approx(0.4330127, abs=1e-7)
    for g1 in (0.0, 1.0):
        with pytest.raises(SmpError):
            test_statistic(g1, 0.0, 10)
    with pytest.raises(SmpError):
        test_statistic(0.5, 0.1, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0, 0.3), st.integers(1, 10**6))
def test_statistic_antisymmetric(g1, d, N):
    null = g1 * (1 - g1)
    up, down = test_statistic(g1, null + d, N), test_statistic(g1, null - d, N)
    assert up == pytest.approx(-down, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0, 0.5), st.integers(1, 10**4), st.integers(2, 50))
def test_statistic_scales_with_sqrt_n(g1, g2, N, k):
    assert test_statistic(g1, g2, k * N) == pytest.approx(math.sqrt(k) * test_statistic(g1, g2, N),
                                                          rel=1e-12, abs=1e-12)


def test_critical_value_and_pvalue():
    assert critical_value(0.05) == pytest.approx(1.959964, abs=1e-6)
    assert two_sided_pvalue(1.959963984540054) == pytest.approx(0.05, abs=1e-12)
    assert two_sided_pvalue(0.0) == 1.0
    with pytest.raises(SmpError):
        critical_value(1.5)


def counts_table():
    c = np.zeros((3, 3, 5), dtype=int)
    c[1, 0, 1:] = [500, 250, 125, 125]   # geometric-looking
    c[1, 2, 1:] = [100, 400, 300, 200]   # far from geometric
    c[2, 1, 1:] = [10, 3, 2, 1]          # low sample
    return c


def test_run_tests_report(tmp_path):
    rep = run_tests(counts_table())
    pairs = {(r.i, r.j): r for r in rep.results}
    assert set(pairs) == {(1, 0), (1, 2), (2, 1)}
    assert pairs[(1, 0)].decision == "H0 not rejected"
    assert pairs[(1, 2)].decision == "H0 rejected"
    assert pairs[(2, 1)].low_sample
    assert (0, 1, "no transitions") in rep.skipped
    assert rep.n_rejected == 1
    for r in rep.results:
        assert (abs(r.score) > rep.critical) == (r.decision == "H0 rejected")
    rep.write_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["i", "j", "N", "g1", "g2", "score", "pvalue", "decision"]
    rep.write_summary(tmp_path / "s.json")
    s = json.load(open(tmp_path / "s.json"))
    assert s["rejected"] == 1 and s["tested"] == 3 and s["low_sample"] == [[2, 1]]


def test_report_format_fixture(tmp_path):
    c = np.zeros((5, 5, 4), dtype=int)
    c[3, 1, 1:] = [30, 60, 910]
    rep = run_tests(c)
    r = rep.results[0]
    assert (r.i, r.j) == (3, 1) and r.decision == "H0 rejected"
    assert f"{r.score:.3f}".count(".") == 1


def test_degenerate_pairs_skipped():
    c = np.zeros((2, 2, 4), dtype=int)
    c[0, 1, 3] = 1000  # deterministic length 3: g(1) = 0
    c[1, 0, 1] = 5     # g(1) = 1
    rep = run_tests(c)
    assert rep.n_tested == 0
    assert {(i, j) for i, j, _ in rep.skipped} == {(0, 1), (1, 0)}
    c2 = np.zeros((2, 2, 2), dtype=int)
    c2[0, 1, 1] = 3
    assert run_tests(c2).skipped[0][2] == "t_max < 2"


def test_near_deterministic_rejected():
    rng = np.random.default_rng(0)
    c = np.zeros((2, 2, 60), dtype=int)
    for i, j in ((0, 1), (1, 0)):
        det = rng.random(10_000) < 0.9
        L = np.where(det, 3, rng.geometric(0.5, 10_000))
        c[i, j] = np.bincount(np.minimum(L, 59), minlength=60)
    assert run_tests(c).n_rejected == 2


def test_markov_baseline_path_not_rejected_often():
    M = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
    p = simulate_markov(M, SimConfig(seed=4, days=1, n=300_000))
    rep = run_tests(estimate_kernel(p, SP3))
    assert rep.n_tested == 6
    assert rep.n_rejected <= 2


def test_needs_counts():
    P = np.array([[0, 0.5, 0.5], [1, 0, 0], [1, 0, 0]])
    with pytest.raises(SmpError):
        run_tests(geometric_kernel(P, 0.3, 5, SP3))
