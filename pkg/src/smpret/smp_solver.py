"""
Transition probabilities of the semi-Markov process and of its backward chain.

All solvers are direct forward recursions in time over the kernel
increments; convolutions are summed explicitly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import PreconditionError, ReducibleChainError, SmpError
from .kernel import DerivedKernelViews


@dataclass(frozen=True, eq=False)
class TransitionSurface:
    """``phi[t, i, j] = P(Z(t) = j | Z(0) = i, B(0) = 0)``."""

    phi: np.ndarray

    @property
    def horizon(self) -> int:
        return self.phi.shape[0] - 1


@dataclass(frozen=True, eq=False)
class BackwardSurface:
    """
    Backward-conditioned transition probabilities from ``(i, v)``.

    ``phi_bb[t, i, j, w]`` is ``P(Z(t) = j, B(t) = w | Z(0) = i, B(0) = v)``
    and ``phi_b[t, i, j]`` its sum over ``w``. Rows whose initial condition
    is impossible (``H_i(v) = 1``) are NaN.
    """

    v: int
    phi_bb: np.ndarray
    phi_b: np.ndarray
    valid: np.ndarray

    @property
    def horizon(self) -> int:
        return self.phi_b.shape[0] - 1


@dataclass(frozen=True, eq=False)
class BackwardLaw:
    """Stationary law of (state, backward time).

    nu : stationary vector of the embedded chain.
    eta : mean sojourn per state, minutes.
    mu : mean recurrence time ``mu_jj`` per state, minutes.
    pi_v : ``pi_v[j, w]``, joint stationary probability of state ``j`` with
        backward time ``w`` (``w = 0..t_max-1``).
    pi : state marginals.
    """

    nu: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    pi_v: np.ndarray
    pi: np.ndarray


def solve_phi(views: DerivedKernelViews, horizon: int) -> TransitionSurface:
    if horizon < 0:
        raise SmpError("horizon must be >= 0")
    m, tm = views.m, views.t_max
    B = np.moveaxis(views.b, 2, 0)  # (t, i, k)
    phi = np.zeros((horizon + 1, m, m))
    for t in range(horizon + 1):
        phi[t] = np.diag(views.surv(t))
        smax = min(t, tm)
        if smax:
            phi[t] += np.einsum("sik,skj->ij", B[1:smax + 1], phi[t - 1::-1][:smax])
    return TransitionSurface(phi)


def _backward_width(views, horizon, v):
    if views.absorbing.any():
        return horizon + v + 1
    return min(horizon + v + 1, views.t_max)


def solve_backward(views: DerivedKernelViews, v: int, horizon: int, states=None) -> BackwardSurface:
    """
    Joint law of (state, backward time) after ``t = 0..horizon`` minutes.

    The ``v = 0`` system is solved first by forward recursion; the surface
    for backward ``v`` is then assembled from it through the first jump.

    states : initial states that must be admissible; a
        :class:`PreconditionError` lists those with ``H_i(v) = 1``. Other
        inadmissible rows are returned as NaN.
    """
    if v < 0 or horizon < 0:
        raise SmpError("v and horizon must be >= 0")
    m, tm = views.m, views.t_max
    Sv = views.surv(v)
    valid = Sv > 0
    if states is not None:
        bad = [(int(i), v) for i in np.atleast_1d(states) if not valid[i]]
        if bad:
            raise PreconditionError(f"H_i(v) = 1 for (i, v) in {bad}", where=bad)
    V = _backward_width(views, horizon, v)
    B = np.moveaxis(views.b, 2, 0)
    eye = np.eye(m)

    F0 = np.zeros((horizon + 1, m, m, V))
    for t in range(horizon + 1):
        if t < V:
            F0[t, :, :, t] = eye * views.surv(t)[:, None]
        smax = min(t, tm)
        if smax:
            F0[t] += np.einsum("sik,skjw->ijw", B[1:smax + 1], F0[t - 1::-1][:smax])
    if v == 0:
        Fv = F0.copy()
    else:
        Fv = np.zeros_like(F0)
        scale = np.where(valid, 1.0 / np.where(valid, Sv, 1.0), 0.0)
        for t in range(horizon + 1):
            if t + v < V:
                Fv[t, :, :, t + v] = eye * (views.surv(t + v) * scale)[:, None]
            smax = min(t, tm - v)
            if smax > 0:
                Bv = B[v + 1:v + smax + 1] * scale[None, :, None]
                Fv[t] += np.einsum("sik,skjw->ijw", Bv, F0[t - 1::-1][:smax])
    Fv[:, ~valid] = np.nan
    return BackwardSurface(v=v, phi_bb=Fv, phi_b=Fv.sum(axis=3), valid=valid)


def backward_marginals(views: DerivedKernelViews, phi: np.ndarray, v_max: int) -> np.ndarray:
    """
    ``out[w, h, j, tau] = P(Z(tau) = j | Z(0) = h, B(0) = w)`` for ``w <= v_max``.

    ``phi`` is a :class:`TransitionSurface` array; ``tau`` runs over its
    horizon. Inadmissible ``(h, w)`` rows are NaN.
    """
    H = phi.shape[0] - 1
    m, tm = views.m, views.t_max
    out = np.zeros((v_max + 1, m, m, H + 1))
    taus = np.arange(H + 1)
    for w in range(v_max + 1):
        Sw = views.surv(w)
        ok = Sw > 0
        inv = np.where(ok, 1.0 / np.where(ok, Sw, 1.0), 0.0)
        out[w, np.arange(m), np.arange(m), :] = views.surv(taus + w) * inv[:, None]
        for s in range(1, min(H, tm - w) + 1):
            bs = views.b[:, :, s + w] * inv[:, None]
            out[w, :, :, s:] += np.einsum("hk,tkj->hjt", bs, phi[:H - s + 1])
        out[w, ~ok] = np.nan
    return out


def stationary_law(views: DerivedKernelViews) -> BackwardLaw:
    P = views.P
    if views.absorbing.any():
        raise ReducibleChainError([[i] for i in np.flatnonzero(views.absorbing)]
                                  + [list(np.flatnonzero(~views.absorbing))])
    ncomp, labels = connected_components(P > 0, directed=True, connection="strong")
    if ncomp > 1:
        raise ReducibleChainError([np.flatnonzero(labels == c) for c in range(ncomp)])
    m = views.m
    A = P.T - np.eye(m)
    A[-1] = 1.0
    rhs = np.zeros(m)
    rhs[-1] = 1.0
    nu = np.linalg.solve(A, rhs)
    nu = np.clip(nu, 0.0, None)
    nu /= nu.sum()
    S = views.S[:, :views.t_max]  # S_j(w), w = 0..t_max-1
    eta = S.sum(axis=1)
    mu = (nu @ eta) / nu
    pi_v = S / mu[:, None]
    pi_v /= pi_v.sum()
    return BackwardLaw(nu=nu, eta=eta, mu=mu, pi_v=pi_v, pi=pi_v.sum(axis=1))


def write_surface_csv(surface, dest) -> None:
    """``i,j,t,value`` for a TransitionSurface; ``i,j,v,vprime,t,value`` for a BackwardSurface."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(surface, TransitionSurface):
            w.writerow(["i", "j", "t", "value"])
            T, m, _ = surface.phi.shape
            for i in range(m):
                for j in range(m):
                    for t in range(T):
                        w.writerow([i, j, t, repr(float(surface.phi[t, i, j]))])
        else:
            w.writerow(["i", "j", "v", "vprime", "t", "value"])
            T, m, _, V = surface.phi_bb.shape
            for i in np.flatnonzero(surface.valid):
                for j in range(m):
                    for vp in range(V):
                        for t in range(T):
                            val = surface.phi_bb[t, i, j, vp]
                            if val != 0.0:
                                w.writerow([int(i), j, surface.v, vp, t, repr(float(val))])
