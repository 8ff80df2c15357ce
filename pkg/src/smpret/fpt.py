"""
First-passage time of the accumulation factor over a threshold.

``lambda_rho = min{t >= 0 : M_0(t) >= rho}`` with ``M_0(t)`` the product of
``1 + W(k)`` over ``k < t``; the survival ``R(t) = P(lambda_rho > t)``.

Two solvers are provided. ``fpt_within_day`` with ``method="recursion"``
evaluates the marginal renewal equation literally, memoizing
``R_a(0, T; rho')`` over rescaled thresholds. Everything else runs on a
forward propagation of sojourn-entry atoms ``(state, log w, mass)``, where
``w = M_0(t)`` at the instant the sojourn starts. Children are created by
multiplying then pruning values ``>= rho``, so equality of products is never
tested in floating point; products that agree within ``epsilon_log`` are
merged. Day boundaries push each surviving atom through the overnight chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import GridCapError, SmpError
from .kernel import DerivedKernelViews, OvernightChain

log = logging.getLogger(__name__)

EPS_LOG = 1e-12
MAX_ATOMS = 1_000_000
_SAFE = np.iinfo(np.int64).min


def _tie_tol(log_rho: float) -> float:
    return 1e-12 * max(1.0, abs(log_rho))


def _check_rho(rho):
    rho = float(rho)
    if not rho > 0 or not np.isfinite(rho):
        raise SmpError(f"rho must be a positive finite number, got {rho}")
    return rho


@dataclass(frozen=True, eq=False)
class JointAtoms:
    """Joint surviving mass at one time ``t``.

    ``state[k] = Z(t)``, ``logw[k] = log M_0(t)`` and ``mass[k]`` the
    probability of that pair with no crossing up to ``t``.
    """

    t: int
    state: np.ndarray
    logw: np.ndarray
    mass: np.ndarray

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def by_state(self, m: int) -> np.ndarray:
        return np.bincount(self.state, weights=self.mass, minlength=m)


@dataclass(frozen=True, eq=False)
class AccumulationGrid:
    """Attainable accumulation values below ``rho`` at one time, as logs."""

    values: np.ndarray
    epsilon_log: float
    rho: float

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class FptSolution:
    rho: float
    R: np.ndarray
    pmf: np.ndarray
    R_joint: tuple[JointAtoms, ...] | None = None
    epsilon_log: float = EPS_LOG
    stats: dict = field(default_factory=dict)

    def grid(self, t: int) -> AccumulationGrid:
        if self.R_joint is None:
            raise SmpError("joint atoms were not tracked for this solution")
        vals = np.unique(self.R_joint[t].logw)
        return AccumulationGrid(vals, self.epsilon_log, self.rho)


def pmf_from_survival(R) -> np.ndarray:
    """``P(lambda = t) = R(t-1) - R(t)`` with ``R(-1) = 1``."""
    R = np.asarray(R, dtype=float)
    return -np.diff(np.concatenate([[1.0], R])) + 0.0


def _merge(st, logw, mass, eps):
    """Sum masses of atoms sharing a state and a log-value within ``eps``."""
    if len(st) == 0:
        return st, logw, mass
    fin = np.isfinite(logw)
    key = np.full(len(st), _SAFE, dtype=np.int64)
    key[fin] = np.rint(logw[fin] / eps).astype(np.int64)
    order = np.lexsort((key, st))
    st, key, logw, mass = st[order], key[order], logw[order], mass[order]
    new = np.ones(len(st), dtype=bool)
    new[1:] = (st[1:] != st[:-1]) | (key[1:] != key[:-1])
    idx = np.flatnonzero(new)
    # the first member stands for its bin; snapping to bin centres would split
    # equal products whose float values straddle a bin edge
    return st[idx], logw[idx], np.add.reduceat(mass, idx)


class _Propagator:
    """Forward propagation of sojourn entries; one instance per (rho, start set)."""

    def __init__(self, views, rho, horizon, n=None, overnight=None, w0=1.0,
                 epsilon_log=EPS_LOG, mass_floor=0.0, max_atoms=MAX_ATOMS,
                 lump=True, joint=False):
        self.v = views
        self.log_rho = float(np.log(rho))
        self.thr = self.log_rho - _tie_tol(self.log_rho)
        self.horizon = int(horizon)
        self.n = n
        self.T = None if overnight is None else np.asarray(overnight.T)
        if n is not None and self.T is None and self.horizon >= n:
            raise SmpError("an overnight chain is needed to cross a day boundary")
        self.log_w0 = float(np.log(w0))
        self.eps = epsilon_log
        self.floor = mass_floor
        self.cap = max_atoms
        self.lump = lump and not joint
        self.joint = joint
        self.lf = views.log_factors
        self.lpos = max(0.0, float(self.lf.max()))
        self.R = np.zeros(self.horizon + 1)
        self.pending: dict[int, list] = {}
        self.jchunks: dict[int, list] = {} if joint else None
        self.stats = {"max_atoms": 0, "entries": 0, "pruned_mass": 0.0, "margin": np.inf}

    def _day_end(self, t):
        """Last slot index of the day containing ``t`` (clipped to the horizon)."""
        if self.n is None:
            return self.horizon
        return min(self.horizon, (t // self.n + 1) * self.n - 1)

    def _margin(self, x):
        fin = np.isfinite(x)
        if fin.any():
            d = float(np.abs(x[fin] - self.thr).min())
            if d < self.stats["margin"]:
                self.stats["margin"] = d

    def _push(self, t, st, logw, mass):
        keep = mass > 0
        if self.floor > 0:
            low = keep & (mass < self.floor)
            self.stats["pruned_mass"] += float(mass[low].sum())
            keep &= ~low
        if keep.any():
            q = self.pending.setdefault(t, [])
            q.append((st[keep], logw[keep], mass[keep]))
            if sum(len(c[0]) for c in q) > 4 * self.cap:
                merged = _merge(*(np.concatenate([c[k] for c in q]) for k in range(3)), self.eps)
                if len(merged[0]) > self.cap:
                    raise GridCapError(
                        f"{len(merged[0])} accumulation atoms at t={t} exceed the cap {self.cap}; "
                        "use a coarser epsilon_log or a positive mass_floor")
                self.pending[t] = [merged]

    def _run(self, t0, st, logw, mass, inc, surv):
        """Sojourns that start at ``t0`` in state ``st`` (scalar).

        inc[a, s] : law of (next state, sojourn length); surv[u] : P(sojourn > u).
        """
        end = self._day_end(t0)
        U = end - t0 + 1
        u = np.arange(U)
        lf = self.lf[st]
        traj = logw[:, None] + u[None, :] * lf
        alive = traj < self.thr
        self._margin(traj)
        Su = surv[np.minimum(u, len(surv) - 1)]
        self.R[t0:end + 1] += (mass[:, None] * alive * Su[None, :]).sum(axis=0)
        if self.joint:
            for k in range(U):
                ok = alive[:, k] & (Su[k] > 0)
                if ok.any():
                    self.jchunks.setdefault(t0 + k, []).append(
                        (np.full(ok.sum(), st), traj[ok, k], mass[ok] * Su[k]))
        smax = min(inc.shape[1] - 1, U - 1)
        for s in range(1, smax + 1):
            col = inc[:, s]
            tgt = np.flatnonzero(col)
            if len(tgt) == 0:
                continue
            lw = logw + s * lf
            ok = lw < self.thr
            self._margin(lw)
            if not ok.any():
                continue
            lw, ms = lw[ok], mass[ok]
            E = len(lw)
            self._push(t0 + s, np.repeat(tgt, E), np.tile(lw, len(tgt)),
                       np.outer(col[tgt], ms).ravel())
        nb = end + 1
        if self.n is not None and nb <= self.horizon and nb % self.n == 0:
            # still in progress at the last slot of the day
            tail = surv[min(U - 1, len(surv) - 1)]
            if tail > 0:
                lw = logw + U * lf
                ok = lw < self.thr
                self._margin(lw)
                if ok.any():
                    row = self.T[st]
                    tgt = np.flatnonzero(row)
                    lw, ms = lw[ok], mass[ok] * tail
                    E = len(lw)
                    self._push(nb, np.repeat(tgt, E), np.tile(lw, len(tgt)),
                               np.outer(row[tgt], ms).ravel())

    def start(self, starts):
        """``starts``: iterable of (i, v, weight)."""
        if not self.log_w0 < self.thr:
            return
        for i, v, wt in starts:
            inc, surv = self.v.conditional(i, v)
            self._run(0, i, np.array([self.log_w0]), np.array([float(wt)]), inc, surv)

    def solve(self):
        b, S = self.v.b, self.v.S
        for t in range(self.horizon + 1):
            chunks = self.pending.pop(t, None)
            if not chunks:
                continue
            st = np.concatenate([c[0] for c in chunks])
            lw = np.concatenate([c[1] for c in chunks])
            ms = np.concatenate([c[2] for c in chunks])
            if self.lump:
                safe = lw + (self.horizon - t) * self.lpos < self.thr
                lw = np.where(safe, -np.inf, lw)
            st, lw, ms = _merge(st, lw, ms, self.eps)
            self.stats["entries"] += len(st)
            self.stats["max_atoms"] = max(self.stats["max_atoms"], len(st))
            if len(st) > self.cap:
                raise GridCapError(
                    f"{len(st)} accumulation atoms at t={t} exceed the cap {self.cap}; "
                    "use a coarser epsilon_log or a positive mass_floor")
            for j in np.unique(st):
                sel = st == j
                self._run(t, int(j), lw[sel], ms[sel], b[j], S[j])
        # Each merge moves a value by less than eps and a path is merged at most
        # once per entry, so threshold decisions equal the exact-arithmetic ones
        # whenever every checked value stayed farther than this from rho.
        drift = self.eps * (self.horizon + 1)
        self.stats["drift_bound"] = drift
        self.stats["certified"] = bool(self.stats["margin"] > drift)
        R = np.clip(self.R, 0.0, 1.0)
        joint = None
        if self.joint:
            out = []
            for t in range(self.horizon + 1):
                ch = self.jchunks.get(t, [])
                if ch:
                    a, w, q = _merge(np.concatenate([c[0] for c in ch]),
                                     np.concatenate([c[1] for c in ch]),
                                     np.concatenate([c[2] for c in ch]), self.eps)
                else:
                    a, w, q = np.zeros(0, int), np.zeros(0), np.zeros(0)
                out.append(JointAtoms(t, a, w, q))
            joint = tuple(out)
        return R, joint


def _solve(views, rho, horizon, starts, n=None, overnight=None, joint=False, **kw):
    rho = _check_rho(rho)
    p = _Propagator(views, rho, horizon, n=n, overnight=overnight, joint=joint, **kw)
    p.start(starts)
    R, J = p.solve()
    log.debug("fpt rho=%g horizon=%d stats=%s", rho, horizon, p.stats)
    return FptSolution(rho=rho, R=R, pmf=pmf_from_survival(R), R_joint=J,
                       epsilon_log=p.eps, stats=dict(p.stats))


def _check_start(views, i, v):
    if not 0 <= i < views.m:
        raise SmpError(f"state {i} out of range")
    if v < 0:
        raise SmpError("backward time must be >= 0")
    views.conditional(i, v)  # raises on H_i(v) = 1


def _recursive_survival(views, i, v, log_rho, t_upto, eps):
    """Literal marginal renewal equation, memoized on (state, log rho', T)."""
    tol = _tie_tol(log_rho)
    lf, b, tm = views.log_factors, views.b, views.t_max
    memo: dict = {}

    def holds(x):
        # accumulated log-value x stays below the original threshold
        return x < log_rho - tol

    def first(inc, surv, a, acc, T):
        # acc: log M_0 at the first sojourn's start
        val = surv[min(T, len(surv) - 1)] if holds(acc + T * lf[a]) else 0.0
        for th in range(1, min(T, inc.shape[1] - 1) + 1):
            col = inc[:, th]
            if not col.any():
                continue
            acc2 = acc + th * lf[a]
            if not holds(acc2):
                continue
            for c in np.flatnonzero(col):
                val += col[c] * R0(int(c), acc2, T - th)
        return val

    def R0(a, acc, T):
        # R_a(0, T; rho / exp(acc))
        key = (a, int(np.rint(acc / eps)), T)
        if key in memo:
            return memo[key]
        val = first(b[a], views.S[a], a, acc, T) if holds(acc) else 0.0
        memo[key] = val
        return val

    inc, surv = views.conditional(i, v)
    R = np.zeros(t_upto + 1)
    if holds(0.0):
        for t in range(t_upto + 1):
            R[t] = first(inc, surv, i, 0.0, t)
    return R


def fpt_within_day(views: DerivedKernelViews, i: int, v: int, rho: float, t_upto: int,
                   n: int | None = None, method: str = "recursion",
                   epsilon_log: float = EPS_LOG) -> FptSolution:
    """
    Survival ``R_i(v, t; rho)`` for ``t = 0..t_upto`` inside one trading day.

    Parameters
    ----------
    n : day length; when given, ``t_upto <= n - 1`` is enforced.
    method : ``"recursion"`` (memoized renewal equation) or ``"propagate"``.
    """
    rho = _check_rho(rho)
    _check_start(views, i, v)
    if t_upto < 0 or (n is not None and t_upto > n - 1):
        raise SmpError(f"t_upto must lie in [0, n-1], got {t_upto}")
    if method == "propagate":
        return _solve(views, rho, t_upto, [(i, v, 1.0)], epsilon_log=epsilon_log)
    if method != "recursion":
        raise SmpError(f"unknown method {method!r}")
    R = np.clip(_recursive_survival(views, i, v, float(np.log(rho)), t_upto, epsilon_log), 0, 1)
    return FptSolution(rho=rho, R=R, pmf=pmf_from_survival(R), epsilon_log=epsilon_log)


def fpt_joint_within_day(views: DerivedKernelViews, i: int, v: int, rho: float, t_upto: int,
                         n: int | None = None, epsilon_log: float = EPS_LOG,
                         max_atoms: int = MAX_ATOMS) -> FptSolution:
    """As :func:`fpt_within_day`, also tracking ``(Z(t), M_0(t))`` per surviving atom."""
    rho = _check_rho(rho)
    _check_start(views, i, v)
    if t_upto < 0 or (n is not None and t_upto > n - 1):
        raise SmpError(f"t_upto must lie in [0, n-1], got {t_upto}")
    return _solve(views, rho, t_upto, [(i, v, 1.0)], joint=True,
                  epsilon_log=epsilon_log, max_atoms=max_atoms)


def fpt_day_boundary(atoms: JointAtoms, overnight: OvernightChain, rho: float,
                     log_factors, epsilon_log: float = EPS_LOG) -> JointAtoms:
    """
    Push the joint mass at the last minute of a day through the overnight chain.

    Each atom ``(a, w)`` picks up its own factor ``1 + a*delta`` (which
    completes ``M_0`` at the next index), is dropped if that reaches ``rho``,
    and is then split over the overnight state ``j`` with ``t_{a,j}``.
    """
    rho = _check_rho(rho)
    lr = float(np.log(rho))
    thr = lr - _tie_tol(lr)
    lf = np.asarray(log_factors)
    lw = atoms.logw + lf[atoms.state]
    ok = lw < thr
    a, lw, ms = atoms.state[ok], lw[ok], atoms.mass[ok]
    T = np.asarray(overnight.T)
    m = T.shape[0]
    st = np.repeat(np.arange(m)[None, :], len(a), axis=0).ravel()
    w = np.repeat(lw, m)
    q = (ms[:, None] * T[a]).ravel()
    keep = q > 0
    st, w, q = _merge(st[keep], w[keep], q[keep], epsilon_log)
    return JointAtoms(atoms.t + 1, st, w, q)


def fpt_multi_day(views: DerivedKernelViews, overnight: OvernightChain, i: int, v: int,
                  rho: float, day_count: int, n: int, joint: bool = False,
                  w0: float = 1.0, epsilon_log: float = EPS_LOG, mass_floor: float = 0.0,
                  max_atoms: int = MAX_ATOMS) -> FptSolution:
    """
    Survival over ``t = 0..n*day_count`` across overnight transitions.

    Day ``k`` occupies indices ``kn..kn+n-1``; index ``kn`` (``k >= 1``) is the
    overnight return, which is also the first state of that day's sojourn
    process (backward 0). ``w0`` is the accumulation already reached at
    ``t = 0``; ``R`` depends on ``(w0, rho)`` only through ``rho / w0``.
    """
    if day_count < 1:
        raise SmpError("day_count must be >= 1")
    if n < 1:
        raise SmpError("n must be >= 1")
    _check_start(views, i, v)
    return _solve(views, rho, n * day_count, [(i, v, 1.0)], n=n, overnight=overnight,
                  joint=joint, w0=w0, epsilon_log=epsilon_log, mass_floor=mass_floor,
                  max_atoms=max_atoms)


def fpt_stationary(views: DerivedKernelViews, pi_v, rho: float, t_upto: int,
                   epsilon_log: float = EPS_LOG, mass_floor: float = 0.0) -> FptSolution:
    """Within-day survival from the stationary (state, backward) law ``pi_v[j, w]``."""
    pi_v = np.asarray(pi_v, dtype=float)
    starts = [(int(j), int(w), pi_v[j, w]) for j, w in zip(*np.nonzero(pi_v > 0))
              if views.surv(int(w))[j] > 0]
    return _solve(views, rho, t_upto, starts, epsilon_log=epsilon_log, mass_floor=mass_floor)
