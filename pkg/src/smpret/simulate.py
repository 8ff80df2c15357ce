"""
Synthetic trajectories and the empirical estimators used to check the solvers.

All randomness comes from numpy's PCG64 generator (``default_rng(seed)``) and
every draw is an inverse-cdf lookup on a discrete table, so a given seed
yields the same path on every platform. Independent replications use child
streams of one ``SeedSequence``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .errors import SmpError
from .kernel import OvernightChain, SemiMarkovKernel, _check_stochastic
from .smp_solver import stationary_law
from .state_model import DiscretizedPath, StateSpace

_BUF = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    """
    seed : generator seed.
    days, n : number of days and minutes (slots) per day.
    initial_state : state at index 0; ``None`` draws ``(state, backward)``
        from the stationary law of the model.
    initial_backward : backward time of the initial state.
    model : ``"smp"`` or ``"markov"``.
    """

    seed: int = 0
    days: int = 1
    n: int = 390
    initial_state: int | None = None
    initial_backward: int = 0
    model: str = "smp"

    def __post_init__(self):
        if self.days < 1 or self.n < 1:
            raise SmpError("days and n must be >= 1")
        if self.initial_backward < 0:
            raise SmpError("initial backward must be >= 0")
        if self.model not in ("smp", "markov"):
            raise SmpError(f"unknown model {self.model!r}")


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """Per-replication streams derived from one seed."""
    return np.random.SeedSequence(seed).spawn(count)


class _Uniforms:
    def __init__(self, rng):
        self.rng = rng
        self.buf = rng.random(_BUF)
        self.k = 0

    def __call__(self) -> float:
        if self.k == _BUF:
            self.buf = self.rng.random(_BUF)
            self.k = 0
        u = self.buf[self.k]
        self.k += 1
        return float(u)


def _table(weights):
    """Cumulative list for bisect plus the index of the last positive weight."""
    w = np.asarray(weights, dtype=float).ravel()
    c = np.cumsum(w)
    if c[-1] <= 0:
        return None
    c = c / c[-1]
    return c.tolist(), int(np.flatnonzero(w)[-1])


def _pick(tab, u):
    cdf, last = tab
    k = bisect.bisect_right(cdf, u)
    return min(k, last)


class _SojournSampler:
    """Draws ``(next state, sojourn length)`` through the flattened ``(t, j)`` law."""

    def __init__(self, kernel: SemiMarkovKernel):
        self.k = kernel
        self.m = kernel.m
        # order (t, j): index = (t - 1) * m + j
        self.tabs = [_table(kernel.b[i, :, 1:].T) for i in range(kernel.m)]

    def draw(self, i, u):
        tab = self.tabs[i]
        if tab is None:
            return i, math.inf
        k = _pick(tab, u)
        return k % self.m, k // self.m + 1

    def draw_conditional(self, i, v, u):
        inc, _ = self.k.views.conditional(i, v)
        tab = _table(inc[:, 1:].T)
        if tab is None:
            return i, math.inf
        k = _pick(tab, u)
        return k % self.m, k // self.m + 1


def _stationary_start(kernel, rng):
    law = stationary_law(kernel.views)
    tab = _table(law.pi_v)
    k = _pick(tab, float(rng.random()))
    return k // law.pi_v.shape[1], k % law.pi_v.shape[1]


def simulate_smp(kernel: SemiMarkovKernel, overnight: OvernightChain | None,
                 cfg: SimConfig) -> DiscretizedPath:
    """
    Day-by-day semi-Markov path.

    Inside a day successive ``(next state, sojourn)`` pairs are drawn until
    the ``n`` slots are filled; the last sojourn is cut at the close. Slot 0
    of every later day is the overnight state drawn from ``T`` given the
    previous close, and starts a fresh sojourn.
    """
    if cfg.days > 1 and overnight is None:
        raise SmpError("an overnight chain is needed for more than one day")
    rng = np.random.default_rng(cfg.seed)
    if cfg.initial_state is None:
        state, back = _stationary_start(kernel, rng)
    else:
        state, back = int(cfg.initial_state), int(cfg.initial_backward)
        if not 0 <= state < kernel.m:
            raise SmpError(f"initial state {state} out of range")
        kernel.views.conditional(state, back)
    U = _Uniforms(rng)
    sampler = _SojournSampler(kernel)
    otabs = None if overnight is None else [_table(r) for r in overnight.T]
    n = cfg.n
    blocks = []
    for day in range(cfg.days):
        out = np.empty(n, dtype=np.int64)
        if day > 0:
            state = _pick(otabs[int(blocks[-1][-1])], U())
        pos = 0
        first = day == 0 and back > 0
        while pos < n:
            if first:
                nxt, s = sampler.draw_conditional(state, back, U())
                first = False
            else:
                nxt, s = sampler.draw(state, U())
            end = n if s == math.inf else min(n, pos + s)
            out[pos:end] = state
            pos, state = end, nxt
        blocks.append(out)
    return DiscretizedPath(tuple(blocks), kernel.m, initial_backward=back)


def simulate_markov(M, cfg: SimConfig) -> DiscretizedPath:
    """
    Path of the one-step chain ``M`` with the same day layout.

    The chain runs straight through day boundaries. Runs are drawn as
    geometric lengths (inverse cdf with stay probability ``M_ii``) followed
    by a jump from the off-diagonal row, which has the same law as one draw
    per minute.
    """
    M = np.asarray(M, dtype=float)
    _check_stochastic(M, "transition matrix")
    m = M.shape[0]
    rng = np.random.default_rng(cfg.seed)
    if cfg.initial_state is None:
        w, vec = np.linalg.eig(M.T)
        pi = np.abs(np.real(vec[:, np.argmin(np.abs(w - 1))]))
        state = _pick(_table(pi), float(rng.random()))
    else:
        state = int(cfg.initial_state)
    U = _Uniforms(rng)
    stay = np.diag(M).copy()
    off = M.copy()
    np.fill_diagonal(off, 0.0)
    jtabs = [_table(r) for r in off]
    total = cfg.days * cfg.n
    out = np.empty(total, dtype=np.int64)
    pos = 0
    while pos < total:
        p = stay[state]
        if p >= 1.0 or jtabs[state] is None:
            L = total - pos
        elif p <= 0.0:
            L = 1
        else:
            u = 1.0 - U()  # in (0, 1]
            L = 1 + int(math.floor(math.log(u) / math.log(p)))
        end = min(total, pos + L)
        out[pos:end] = state
        pos = end
        if pos < total:
            state = _pick(jtabs[state], U())
    blocks = tuple(out[k * cfg.n:(k + 1) * cfg.n] for k in range(cfg.days))
    return DiscretizedPath(blocks, m)


def simulate(kernel, overnight, markov, cfg: SimConfig) -> DiscretizedPath:
    if cfg.model == "markov":
        if markov is None:
            raise SmpError("no Markov baseline in the model")
        return simulate_markov(markov, cfg)
    return simulate_smp(kernel, overnight, cfg)


# ---------------------------------------------------------------------------
# batch sampling for Monte Carlo checks

def simulate_batch(kernel: SemiMarkovKernel, overnight: OvernightChain | None, i: int, v: int,
                   n_paths: int, horizon: int, n: int | None = None, rng=None) -> np.ndarray:
    """
    ``states[p, t]`` for ``t = 0..horizon-1`` of many independent paths.

    Vectorized over paths; the layout matches :func:`simulate_smp` with
    day boundaries at multiples of ``n`` (none when ``n`` is None).
    """
    rng = rng if rng is not None else np.random.default_rng()
    m = kernel.m
    flat = kernel.b[:, :, 1:].transpose(0, 2, 1).reshape(m, -1)  # (i, (t-1)*m + j)
    cdf = np.cumsum(flat, axis=1)
    alive_rows = cdf[:, -1] > 0
    cdf[alive_rows] /= cdf[alive_rows, -1:]
    last = np.array([np.flatnonzero(r)[-1] if r.any() else 0 for r in flat])
    inc, _ = kernel.views.conditional(i, v)
    c0 = np.cumsum(inc[:, 1:].T.ravel())
    l0 = np.flatnonzero(inc[:, 1:].T.ravel())
    Tc = None if overnight is None else np.cumsum(overnight.T, axis=1)

    def draw(states):
        u = rng.random(len(states))
        k = np.empty(len(states), dtype=np.int64)
        for a in np.unique(states):
            sel = states == a
            k[sel] = np.minimum(np.searchsorted(cdf[a], u[sel], side="right"), last[a])
        s = k // m + 1
        s = np.where(alive_rows[states], s, np.iinfo(np.int64).max // 4)
        return k % m, s

    out = np.empty((n_paths, horizon), dtype=np.int8 if m < 128 else np.int64)
    state = np.full(n_paths, i, dtype=np.int64)
    if c0.size and c0[-1] > 0:
        u = rng.random(n_paths) * c0[-1]
        k = np.minimum(np.searchsorted(c0, u, side="right"), l0[-1])
        nxt, rem = k % m, k // m + 1
    else:
        nxt, rem = state.copy(), np.full(n_paths, np.iinfo(np.int64).max // 4)
    for t in range(horizon):
        if n is not None and t > 0 and t % n == 0:
            u = rng.random(n_paths)
            new = np.empty(n_paths, dtype=np.int64)
            for a in np.unique(state):
                sel = state == a
                new[sel] = np.minimum(np.searchsorted(Tc[a], u[sel], side="right"), m - 1)
            state = new
            nxt, rem = draw(state)
        else:
            hit = rem == 0
            if hit.any():
                state[hit] = nxt[hit]
                a, s = draw(state[hit])
                nxt[hit], rem[hit] = a, s
        out[:, t] = state
        rem = rem - 1
    return out


def mc_fpt(kernel: SemiMarkovKernel, overnight, i: int, v: int, rho: float, n_paths: int,
           horizon: int, n: int | None = None, seed: int = 0, chunk: int = 100_000):
    """
    Monte Carlo survival ``P(lambda_rho > t)`` for ``t = 0..horizon``.

    Returns ``(R_hat, n_paths)``; the binomial standard error is
    ``sqrt(R (1 - R) / n_paths)``.
    """
    lr = math.log(rho)
    thr = lr - 1e-12 * max(1.0, abs(lr))
    lf = kernel.space.log_factors
    alive = np.zeros(horizon + 1)
    streams = spawn_seeds(seed, -(-n_paths // chunk))
    done = 0
    for ss in streams:
        k = min(chunk, n_paths - done)
        st = simulate_batch(kernel, overnight, i, v, k, horizon, n=n, rng=np.random.default_rng(ss))
        logm = np.zeros((k, horizon + 1))
        np.cumsum(lf[st], axis=1, out=logm[:, 1:])
        ok = np.logical_and.accumulate(logm < thr, axis=1)
        alive += ok.sum(axis=0)
        done += k
    return alive / n_paths, n_paths


# ---------------------------------------------------------------------------
# empirical estimators

@dataclass(frozen=True, eq=False)
class EmpiricalFpt:
    t: np.ndarray
    survival: np.ndarray
    pmf: np.ndarray
    se: np.ndarray
    at_risk: np.ndarray
    n_starts: int
    n_censored: int


def _log_path(path: DiscretizedPath, space: StateSpace):
    return np.concatenate([[0.0], np.cumsum(space.log_factors[path.states])])


def empirical_fpt(path: DiscretizedPath, space: StateSpace, rho: float, sample_stride: int = 1,
                  horizon: int | None = None) -> EmpiricalFpt:
    """
    Censored empirical survival of the passage time from stride-sampled starts.

    From every start ``s`` the accumulation ``prod (1 + W)`` is scanned until
    it reaches ``rho``, the path ends, or ``horizon`` minutes pass; scans
    that stop without crossing are right-censored and the survival is the
    product-limit estimate, with Greenwood standard errors.
    """
    if len(path) == 0:
        raise SmpError("empty path")
    if sample_stride < 1:
        raise SmpError("sample_stride must be >= 1")
    C = _log_path(path, space)
    L = len(C) - 1
    H = L if horizon is None else min(int(horizon), L)
    lr = math.log(rho)
    thr = lr - 1e-12 * max(1.0, abs(lr))
    starts = np.arange(0, L, sample_stride)
    event = np.full(starts.size, -1, dtype=np.int64)
    cens = np.minimum(L - starts, H)  # last observed index for each scan
    active = np.arange(starts.size)
    for tau in range(H + 1):
        if active.size == 0:
            break
        ok = starts[active] + tau <= L
        active = active[ok]
        hit = C[starts[active] + tau] - C[starts[active]] >= thr
        event[active[hit]] = tau
        active = active[~hit & (tau < cens[active])]
    crossed = event >= 0
    d = np.bincount(event[crossed], minlength=H + 1)[:H + 1]
    cdone = np.bincount(cens[~crossed], minlength=H + 1)[:H + 1]
    # at risk at t: crossed at >= t, or censored with last observation >= t
    risk = np.cumsum((d + cdone)[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(risk > 0, d / np.where(risk > 0, risk, 1), 0.0)
        S = np.cumprod(1.0 - h)
        gw = np.cumsum(np.where(risk > d, d / np.where(risk > d, risk * (risk - d), 1), 0.0))
    se = S * np.sqrt(gw)
    pmf = -np.diff(np.concatenate([[1.0], S]))
    return EmpiricalFpt(t=np.arange(H + 1), survival=S, pmf=pmf, se=se, at_risk=risk,
                        n_starts=int(starts.size), n_censored=int((~crossed).sum()))


@dataclass(frozen=True, eq=False)
class EmpiricalAcf:
    tau: np.ndarray
    acf: np.ndarray
    se: np.ndarray
    sigma: np.ndarray


def _intraday_segments(path: DiscretizedPath):
    segs = []
    for b, flag in zip(path.blocks, path.overnight):
        seg = b[1:] if flag else b
        if seg.size:
            segs.append(seg)
    return segs


def _acf_of(segs, tau_max):
    xs = np.concatenate(segs)
    mu = xs.mean()
    var = ((xs - mu) ** 2).mean()
    cov = np.zeros(tau_max + 1)
    for tau in range(tau_max + 1):
        num = cnt = 0.0
        for x in segs:
            if x.size > tau:
                a = x - mu
                num += float(a[:x.size - tau] @ a[tau:])
                cnt += x.size - tau
        cov[tau] = num / cnt if cnt else np.nan
    return cov, var


def empirical_sq_acf(path: DiscretizedPath, space: StateSpace, tau_max: int,
                     batches: int = 20) -> EmpiricalAcf:
    """
    Sample autocorrelation of ``W^2`` with lags inside days only.

    Overnight slots are left out. The standard error comes from ``batches``
    batch means (whole days when there are enough, contiguous chunks of a
    single long day otherwise).
    """
    segs = [space.values[s] ** 2 for s in _intraday_segments(path)]
    if not segs:
        raise SmpError("empty path")
    if tau_max >= max(s.size for s in segs):
        raise SmpError("tau_max must be shorter than the trading day")
    cov, var = _acf_of(segs, tau_max)
    if var <= 0:
        raise SmpError("squared returns have zero variance; autocorrelation undefined")
    acf = cov / var
    if len(segs) >= batches:
        groups = np.array_split(np.arange(len(segs)), batches)
        parts = [[segs[k] for k in g] for g in groups]
    else:
        parts = [[c] for s in segs for c in np.array_split(s, max(1, batches // len(segs)))]
    vals = []
    for p in parts:
        c, vv = _acf_of(p, tau_max)
        if vv > 0:
            vals.append(c / vv)
    vals = np.array(vals)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else np.full(tau_max + 1, np.nan)
    return EmpiricalAcf(tau=np.arange(tau_max + 1), acf=acf, se=se, sigma=cov)


def occupation_frequencies(path: DiscretizedPath, batches: int = 20):
    """Fraction of slots in each state and its batch-means standard error."""
    z = path.states
    freq = np.bincount(z, minlength=path.m) / z.size
    parts = np.array_split(z, batches)
    fb = np.array([np.bincount(p, minlength=path.m) / p.size for p in parts])
    return freq, fb.std(axis=0, ddof=1) / math.sqrt(batches)
