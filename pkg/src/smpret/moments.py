"""
Moments of the accumulation factor and autocovariance of squared returns.

``m_i(v; t) = E[prod_{k=0..t} (1 + W(k))]`` given ``Z(0) = i, B(0) = v``,
``m2_i(v; t, s)`` the cross moment of the products up to ``t`` and ``t+s``,
and ``gamma = m2 - m(t) m(t+s)``. A jump at ``theta`` means the new state is
occupied from index ``theta`` on, so the run before it contributes
``(1 + i*delta)^theta``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import SmpError
from .kernel import DerivedKernelViews
from .smp_solver import BackwardLaw, backward_marginals, solve_backward, solve_phi, stationary_law


@dataclass(frozen=True, eq=False)
class MomentSurfaces:
    """``m1[t]``, ``m2[t, s]`` and ``gamma[t, s]`` for ``t + s <= horizon`` (NaN elsewhere)."""

    i: int
    v: int
    m1: np.ndarray
    m2: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True, eq=False)
class SquaredAcf:
    tau: np.ndarray
    sigma: np.ndarray
    rho_acf: np.ndarray


class _Tables:
    """``m_a(0; t)`` and ``m2_a(0; t, s)`` for every state up to ``horizon``."""

    def __init__(self, views: DerivedKernelViews, horizon: int):
        self.v = views
        self.H = horizon
        self.f = 1.0 + views.values
        m = views.m
        self.m1 = np.zeros((m, horizon + 1))
        self.m2 = np.full((m, horizon + 1, horizon + 1), np.nan)
        laws = [(views.b[a], views.S[a]) for a in range(m)]
        for t in range(horizon + 1):
            for a in range(m):
                self.m1[a, t] = self.first(a, *laws[a], t)
        for t in range(horizon + 1):
            for a in range(m):
                for s in range(horizon - t + 1):
                    self.m2[a, t, s] = self.second(a, *laws[a], t, s)

    def first(self, i, inc, surv, t):
        f = self.f[i]
        L = len(surv) - 1
        val = f ** (t + 1) * surv[min(t, L)]
        th = np.arange(1, min(t, inc.shape[1] - 1) + 1)
        if len(th):
            # sum_a sum_theta f^theta inc[a, theta] m_a(0; t - theta)
            val += np.sum(f ** th * np.einsum("at,at->t", inc[:, th], self.m1[:, t - th]))
        return val

    def second(self, i, inc, surv, t, s):
        f = self.f[i]
        L = len(surv) - 1
        tm = inc.shape[1] - 1
        val = f ** (2 * (t + 1) + s) * surv[min(t + s, L)]
        mid = np.arange(t + 1, min(t + s, tm) + 1)
        if len(mid):
            val += np.sum(f ** (t + 1 + mid)
                          * np.einsum("at,at->t", inc[:, mid], self.m1[:, t + s - mid]))
        early = np.arange(1, min(t, tm) + 1)
        if len(early):
            val += np.sum(f ** (2 * early)
                          * np.einsum("at,at->t", inc[:, early], self.m2[:, t - early, s]))
        return val


def _law(views, i, v):
    if not 0 <= i < views.m:
        raise SmpError(f"state {i} out of range")
    return views.conditional(i, v)


def moment_surfaces(views: DerivedKernelViews, i: int, v: int, horizon: int) -> MomentSurfaces:
    """All of ``m1``, ``m2`` and ``gamma`` from ``(i, v)`` with ``t + s <= horizon``."""
    if horizon < 0:
        raise SmpError("horizon must be >= 0")
    inc, surv = _law(views, i, v)
    tab = _Tables(views, horizon)
    m1 = np.array([tab.first(i, inc, surv, t) for t in range(horizon + 1)])
    m2 = np.full((horizon + 1, horizon + 1), np.nan)
    gamma = np.full_like(m2, np.nan)
    for t in range(horizon + 1):
        for s in range(horizon - t + 1):
            m2[t, s] = tab.second(i, inc, surv, t, s)
            gamma[t, s] = m2[t, s] - m1[t] * m1[t + s]
    return MomentSurfaces(i=i, v=v, m1=m1, m2=m2, gamma=gamma)


def expected_accumulation(views: DerivedKernelViews, i: int, v: int, t: int) -> float:
    """``E[M_0(t+1)]`` from ``Z(0) = i, B(0) = v``."""
    if t < 0:
        raise SmpError("t must be >= 0")
    inc, surv = _law(views, i, v)
    tab = _Tables.__new__(_Tables)
    tab.v, tab.H, tab.f = views, t, 1.0 + views.values
    tab.m1 = np.zeros((views.m, t + 1))
    for u in range(t + 1):
        for a in range(views.m):
            tab.m1[a, u] = tab.first(a, views.b[a], views.S[a], u)
    return float(tab.first(i, inc, surv, t))


def cross_moment(views: DerivedKernelViews, i: int, v: int, t: int, s: int) -> float:
    """``E[M_0(t+1) M_0(t+s+1)]`` from ``Z(0) = i, B(0) = v``."""
    if t < 0 or s < 0:
        raise SmpError("t and s must be >= 0")
    return float(moment_surfaces(views, i, v, t + s).m2[t, s])


def intraday_autocov(views: DerivedKernelViews, i: int, v: int, t: int, s: int) -> float:
    if t < 0 or s < 0:
        raise SmpError("t and s must be >= 0")
    return float(moment_surfaces(views, i, v, t + s).gamma[t, s])


def squared_acf_conditional(views: DerivedKernelViews, i: int, v: int, t: int, tau: int) -> dict:
    """
    ``Cov(W(t)^2, W(t+tau)^2)`` given ``Z(0) = i, B(0) = v``, within one day.

    The cross term conditions on the state ``h`` and backward time ``v'``
    reached at ``t`` and then runs ``tau`` further minutes from ``(h, v')``.
    """
    if t < 0 or tau < 0:
        raise SmpError("t and tau must be >= 0")
    r2 = views.values ** 2
    bs = solve_backward(views, v, t + tau, states=[i])
    joint = bs.phi_bb[t, i]  # (h, v')
    phi = solve_phi(views, tau).phi
    bm = np.nan_to_num(backward_marginals(views, phi, joint.shape[1] - 1))  # (v', h, j, tau)
    ahead = bm[:, :, :, tau] @ r2  # (v', h)
    cross = float(np.sum(joint.T * ahead * r2[None, :]))
    ex = float(bs.phi_b[t, i] @ r2)
    ey = float(bs.phi_b[t + tau, i] @ r2)
    return {"i": i, "v": v, "t": t, "tau": tau, "cross": cross, "ex": ex, "ey": ey,
            "cov": cross - ex * ey}


def _acf(tau, sigma):
    s0 = sigma[0]
    rho = sigma / s0 if s0 > 0 else np.full_like(sigma, np.nan)
    return SquaredAcf(tau=tau, sigma=sigma, rho_acf=rho)


def squared_acf_stationary(views: DerivedKernelViews, tau_max: int, law: BackwardLaw | None = None,
                           method: str = "direct") -> SquaredAcf:
    """
    Stationary ``Sigma(tau) = E[W^2(t) W^2(t+tau)] - E[W^2]^2`` for ``tau = 0..tau_max``.

    ``method="direct"`` uses ``pi_h(v') * phi_hj(v'; tau)`` written without the
    division by ``S_h(v')``; ``"backward"`` evaluates the backward transition
    surfaces explicitly. Both give the same numbers.
    """
    if tau_max < 0:
        raise SmpError("tau_max must be >= 0")
    law = law if law is not None else stationary_law(views)
    r2 = views.values ** 2
    phi = solve_phi(views, tau_max).phi
    tm = views.t_max
    taus = np.arange(tau_max + 1)
    if method == "direct":
        # tail[h, k, s] = sum_{v' < t_max} b_hk(s + v') = p_hk - Q_hk(s - 1)
        Q = views.Q
        tail = views.P[:, :, None] - np.concatenate([np.zeros((views.m, views.m, 1)), Q[:, :, :-1]], 2)
        ahead = phi @ r2  # (tau, k)
        Ssum = np.array([views.surv(tau + np.arange(tm)).sum(axis=1) for tau in taus])  # (tau, h)
        cross = (Ssum * r2[None, :] ** 2) @ (1.0 / law.mu)
        for tau in taus[1:]:
            s = np.arange(1, min(tau, tm) + 1)
            jump = np.einsum("hks,sk->h", tail[:, :, s], ahead[tau - s])
            cross[tau] += np.sum(jump * r2 / law.mu)
    elif method == "backward":
        bm = np.nan_to_num(backward_marginals(views, phi, tm - 1))  # (v', h, j, tau)
        w = law.pi_v.T * r2[None, :]  # (v', h)
        cross = np.einsum("whjt,wh,j->t", bm, w, r2)
    else:
        raise SmpError(f"unknown method {method!r}")
    mean = law.pi @ r2
    return _acf(taus, cross - mean ** 2)


def markov_squared_acf(M, values, tau_max: int) -> SquaredAcf:
    """Stationary squared-return autocovariance of a one-step Markov chain ``M``."""
    M = np.asarray(M, dtype=float)
    w, vec = np.linalg.eig(M.T)
    pi = np.real(vec[:, np.argmin(np.abs(w - 1))])
    pi = pi / pi.sum()
    r2 = np.asarray(values, dtype=float) ** 2
    sigma = np.zeros(tau_max + 1)
    g = r2.copy()
    for tau in range(tau_max + 1):
        sigma[tau] = pi @ (r2 * g) - (pi @ r2) ** 2
        g = M @ g
    return _acf(np.arange(tau_max + 1), sigma)


def write_acf_csv(acf: SquaredAcf, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "sigma", "rho"])
        for t, s, r in zip(acf.tau, acf.sigma, acf.rho_acf):
            w.writerow([int(t), repr(float(s)), repr(float(r))])
