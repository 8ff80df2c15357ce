"""
Independent ground truth for the solvers: exhaustive path enumeration.

Everything here is computed from the raw increments ``b`` and the overnight
matrix only, without the package's derived views, recursions or merging.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np


def survival_table(b):
    """``S[z, u] = P(sojourn in z > u)`` for u = 0..t_max, from raw increments."""
    m, _, L = b.shape
    S = np.ones((m, L))
    for z in range(m):
        acc = 0.0
        for u in range(L):
            acc += b[z, :, u].sum()
            S[z, u] = 1.0 - acc
    S[np.abs(S) < 1e-13] = 0.0
    return S


def enumerate_paths(b, i, v, H, n=None, T=None, tol=0.0):
    """
    Every state path ``Z(0..H)`` from ``Z(0) = i, B(0) = v`` with its probability.

    Within a day ``(Z, B)`` moves by hazards: from ``(z, c)`` the process jumps
    to ``a`` with probability ``b_za(c+1) / S_z(c)`` and otherwise stays with
    ``B = c + 1``. At indices ``kn`` the state is redrawn from ``T[z]`` and
    ``B`` resets to 0.
    """
    S = survival_table(b)
    L = b.shape[2]
    out = []

    def surv(z, c):
        return S[z, min(c, L - 1)]

    def step(t, z, c, p, path):
        if p <= tol:
            return
        if t == H:
            out.append((p, tuple(path)))
            return
        nxt = t + 1
        if n is not None and nxt % n == 0:
            for a in range(len(T)):
                if T[z][a] > 0:
                    step(nxt, a, 0, p * T[z][a], path + [a])
            return
        s0 = surv(z, c)
        stay = surv(z, c + 1) / s0
        if stay > 0:
            step(nxt, z, c + 1, p * stay, path + [z])
        if c + 1 < L:
            for a in range(b.shape[0]):
                q = b[z, a, c + 1]
                if q > 0:
                    step(nxt, a, 0, p * q / s0, path + [a])

    step(0, i, v, 1.0, [i])
    return out


def log_accumulation(path, values):
    """``log M_0(t)`` for t = 0..len(path), summing logs in path order."""
    acc = [0.0]
    for z in path:
        acc.append(acc[-1] + math.log1p(values[z]))
    return acc


def fpt_survival(paths, values, rho, H):
    """``R(t) = P(M_0(k) < rho for all k <= t)`` for t = 0..H."""
    lr = math.log(rho)
    tol = 1e-12 * max(1.0, abs(lr))
    R = np.zeros(H + 1)
    for p, path in paths:
        acc = log_accumulation(path, values)
        for t in range(H + 1):
            if acc[t] >= lr - tol:
                break
            R[t] += p
    return R


def fpt_joint(paths, values, rho, t, digits=10):
    """Joint mass ``{(Z(t), round(log M_0(t)))}`` over non-crossed paths."""
    lr = math.log(rho)
    tol = 1e-12 * max(1.0, abs(lr))
    mass = defaultdict(float)
    for p, path in paths:
        acc = log_accumulation(path, values)
        if all(acc[k] < lr - tol for k in range(t + 1)):
            mass[(path[t], round(acc[t], digits))] += p
    return dict(mass)


def moments(paths, values, t, s):
    """``(E M_0(t+1), E M_0(t+s+1), E M_0(t+1) M_0(t+s+1), E M_0(t+1)^2)``."""
    e1 = e2 = e12 = e11 = 0.0
    for p, path in paths:
        a = math.prod(1 + values[z] for z in path[:t + 1])
        c = math.prod(1 + values[z] for z in path[:t + s + 1])
        e1 += p * a
        e2 += p * c
        e12 += p * a * c
        e11 += p * a * a
    return e1, e2, e12, e11


def squared_cov(paths, values, t, tau):
    """``Cov(W(t)^2, W(t+tau)^2)`` and its pieces under the path law."""
    ex = ey = exy = 0.0
    for p, path in paths:
        x = values[path[t]] ** 2
        y = values[path[t + tau]] ** 2
        ex += p * x
        ey += p * y
        exy += p * x * y
    return exy - ex * ey, exy, ex, ey


def random_kernel(rng, m, t_max, absorbing=()):
    """Random increments with every row summing to one (zero rows for ``absorbing``)."""
    b = np.zeros((m, m, t_max + 1))
    for i in range(m):
        if i in absorbing or m == 1:
            continue
        w = rng.random((m, t_max)) * (rng.random((m, t_max)) < 0.8)
        w[i] = 0
        if w.sum() == 0:
            w[(i + 1) % m, 0] = 1.0
        b[i, :, 1:] = w / w.sum()
    return b


def midgap_rho(paths, values, rng, lo=-0.08, hi=0.12, gap=1e-6):
    """Threshold whose log sits at least ``gap`` away from every attainable value."""
    att = set()
    for _, path in paths:
        att.update(round(x, 12) for x in log_accumulation(path, values))
    att = np.array(sorted(att))
    for _ in range(1000):
        lr = rng.uniform(lo, hi)
        if np.min(np.abs(att - lr)) > gap:
            return math.exp(lr)
    raise RuntimeError("no mid-gap threshold found")
