import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from smpret.errors import EstimationError, SmpError
from smpret.kernel import (OvernightChain, SemiMarkovKernel, derive_views, estimate_kernel,
                           estimate_markov_baseline, estimate_overnight, geometric_kernel,
                           load_model, markov_to_kernel, save_model, sojourn_counts)
from smpret.simulate import SimConfig, simulate_smp
from smpret.state_model import DiscretizedPath, StateSpace

SP3 = StateSpace.symmetric(3, 0.01)
SP2 = StateSpace(0.01, 0, 1)


def one_day(*states, m=3):
    return DiscretizedPath((np.array(states),), m=m)


def test_estimate_single_run():
    k = estimate_kernel(one_day(1, 1, 1, 2, 2, 1), SP3, on_empty_row="absorbing")
    assert k.counts[1, 2, 3] == 1
    assert k.b[1, 2, 3] == 1.0
    assert k.b[1].sum() == 1.0
    # the closing run of the day is censored
    assert k.counts[2].sum() == 1 and k.counts[2, 1, 2] == 1
    assert k.flagged == (0,)


def test_estimate_equal_lengths():
    k = estimate_kernel(one_day(1, 2, 1, 1, 2, 0), SP3, on_empty_row="absorbing")
    assert k.b[1, 2, 1] == 0.5 and k.b[1, 2, 2] == 0.5


def test_estimate_no_jump_errors():
    with pytest.raises(EstimationError):
        estimate_kernel(one_day(0, 0, 0, 0), SP3)


def test_estimate_empty_row_policies():
    p = one_day(1, 2, 1, 2)
    with pytest.raises(EstimationError, match="0"):
        estimate_kernel(p, SP3)
    k = estimate_kernel(p, SP3, on_empty_row="uniform")
    np.testing.assert_allclose(k.b[0, :, 1], [0, 0.5, 0.5])
    assert k.flagged == (0,)


def test_day_boundary_sojourn_censored():
    p = DiscretizedPath((np.array([0, 0, 1]), np.array([1, 1, 0])), m=3)
    N = sojourn_counts(p)
    # two completed sojourns: 0 for 2 minutes (day 1), 1 for 2 minutes (day 2)
    assert N.sum() == 2
    assert N[0, 1, 2] == 1 and N[1, 0, 2] == 1


def test_rows_sum_to_one_exactly():
    rng = np.random.default_rng(4)
    k = estimate_kernel(one_day(*rng.integers(0, 3, 500)), SP3)
    assert np.all(k.b.sum(axis=(1, 2)) == 1.0)


def test_overnight_estimates():
    p = DiscretizedPath((np.array([0, 1]), np.array([2, 2]), np.array([0])), m=3)
    T = estimate_overnight(p).T
    np.testing.assert_array_equal(T[1], [0, 0, 1])
    np.testing.assert_array_equal(T[2], [1, 0, 0])
    np.testing.assert_allclose(T[0], [1 / 3] * 3)
    with pytest.raises(EstimationError):
        estimate_overnight(one_day(0, 1))
    with pytest.raises(EstimationError):
        estimate_overnight(p, fallback="error")


def test_overnight_all_zero_state():
    p = DiscretizedPath((np.array([0, 2]), np.array([1, 2, 0]), np.array([1])), m=3)
    T = estimate_overnight(p).T
    np.testing.assert_array_equal(T[0], [0, 1, 0])
    np.testing.assert_array_equal(T[2], [0, 1, 0])


def test_single_boundary():
    sp = StateSpace.symmetric(5, 0.01)
    p = DiscretizedPath((np.array([1, 2]), np.array([4, 4])), m=5)
    assert estimate_overnight(p).T[2, 4] == 1.0


def test_markov_baseline_counts():
    np.testing.assert_array_equal(estimate_markov_baseline(one_day(0, 0, 0, 0))[0], [1, 0, 0])
    M = estimate_markov_baseline(one_day(1, 2, 1, 2, 1))
    np.testing.assert_array_equal(M[1], [0, 0, 1])
    np.testing.assert_array_equal(M[2], [0, 1, 0])
    M = estimate_markov_baseline(one_day(1, 2, 2, 1, 2))
    np.testing.assert_allclose(M[2], [0, 0.5, 0.5])
    np.testing.assert_allclose(M[0], [1 / 3] * 3)


def test_views_partial_sums():
    b = np.zeros((2, 2, 3))
    b[0, 1, 1] = b[0, 1, 2] = 0.5
    b[1, 0, 1] = 1.0
    V = SemiMarkovKernel(b, SP2).views
    assert V.H[0, 1] == 0.5 and V.H[0, 2] == 1.0
    assert V.P[0, 1] == 1.0 and V.G[0, 1, 1] == 0.5
    assert np.all(V.G[0, 0] == 1.0)  # p_00 = 0
    assert V.H[0, 0] == 0.0
    assert np.all(np.diff(V.Q, axis=2) >= 0)


def test_views_geometric_sojourn():
    P = np.array([[0, 0.3, 0.7], [1, 0, 0], [0.5, 0.5, 0]])
    q = np.array([0.2, 0.5, 0.9])
    V = geometric_kernel(P, q, 30, SP3).views
    t = np.arange(30)
    np.testing.assert_allclose(V.H[:, :30], 1 - (1 - q[:, None]) ** t[None], atol=1e-15)
    # memoryless across destinations
    np.testing.assert_allclose(V.G[0, 1], V.G[0, 2])
    np.testing.assert_allclose(V.G[2, 0], V.G[2, 1])


def test_geometric_examples():
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    k = geometric_kernel(P, 1.0, 4, SP2)
    assert k.b[0, 1, 1] == 1.0 and k.b[0, 1, 2:].sum() == 0
    k = geometric_kernel(P, 0.5, 6, SP2)
    np.testing.assert_allclose(k.b[0, 1, 1:6], 0.5 ** np.arange(1, 6))
    k = geometric_kernel(P, 0.5, 3, SP2)
    np.testing.assert_allclose(k.b[0, 1, 1:], [0.5, 0.25, 0.25])
    with pytest.raises(SmpError):
        geometric_kernel(np.eye(2), 0.5, 3, SP2)


def test_markov_to_kernel_round_trip():
    M = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
    k = markov_to_kernel(M, 200, SP3)
    V = k.views
    np.testing.assert_allclose(V.b[:, :, 1], np.diag(1 - np.diag(M)) @ V.P)
    back = np.diag(np.diag(M)) + np.diag(1 - np.diag(M)) @ V.P
    np.testing.assert_allclose(back, M)


def test_kernel_validation():
    b = np.zeros((2, 2, 3))
    b[0, 0, 1] = 1
    with pytest.raises(SmpError, match="self"):
        SemiMarkovKernel(b, SP2)
    b = np.zeros((2, 2, 3))
    b[0, 1, 1] = 0.4
    with pytest.raises(SmpError, match="sum"):
        SemiMarkovKernel(b, SP2)
    with pytest.raises(SmpError):
        OvernightChain(np.array([[0.5, 0.4], [0, 1]]))


def test_conditional_law():
    b = np.zeros((2, 2, 4))
    b[0, 1, 1:] = [0.2, 0.3, 0.5]
    b[1, 0, 1] = 1
    V = SemiMarkovKernel(b, SP2).views
    inc, surv = V.conditional(0, 1)
    np.testing.assert_allclose(inc[1, 1:3], [0.375, 0.625])
    np.testing.assert_allclose(surv[:3], [1, 0.625, 0])
    with pytest.raises(SmpError):
        V.conditional(0, 3)


def test_model_json_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    k = estimate_kernel(one_day(*rng.integers(0, 3, 300)), SP3)
    T = OvernightChain(np.full((3, 3), 1 / 3))
    save_model(tmp_path / "k.json", k, T, np.eye(3))
    k2, T2, M2 = load_model(tmp_path / "k.json")
    np.testing.assert_array_equal(k2.b, k.b)
    np.testing.assert_array_equal(k2.counts, k.counts)
    np.testing.assert_array_equal(T2.T, T.T)
    assert k2.space == k.space
    save_model(tmp_path / "k2.json", k2, T2, M2)
    assert (tmp_path / "k.json").read_bytes() == (tmp_path / "k2.json").read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=2, max_size=200))
def test_estimated_rows_normalised(states):
    p = one_day(*states)
    try:
        k = estimate_kernel(p, SP3, on_empty_row="absorbing")
    except EstimationError:
        assert len(set(states)) == 1 or all(a == b for a, b in zip(states, states[1:]))
        return
    rows = k.b.sum(axis=(1, 2))
    assert np.all((rows == 0) | (np.abs(rows - 1) < 1e-15))


def test_estimation_recovers_kernel():
    rng = np.random.default_rng(8)
    b = O.random_kernel(rng, 3, 4)
    K = SemiMarkovKernel(b, SP3)
    p = simulate_smp(K, None, SimConfig(seed=21, days=1, n=1_500_000, initial_state=0))
    kh = estimate_kernel(p, SP3, t_max=4)
    N = kh.counts.sum(axis=(1, 2))
    se = np.sqrt(b * (1 - b) / N[:, None, None])
    z = np.abs(kh.b - b) / np.where(se > 0, se, 1)
    assert z.max() <= 3.0
    assert np.all(kh.b[b == 0] == 0)
