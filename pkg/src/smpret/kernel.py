"""
Semi-Markov kernel, its derived views, estimators and serialization.

The kernel is stored through its increments ``b[i, j, t]`` (probability of
leaving ``i`` for ``j`` after exactly ``t`` minutes) on ``t = 0..t_max``
with ``b[..., 0] = 0``. A row of zeros marks an absorbing state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import EstimationError, SmpError
from .state_model import DiscretizedPath, StateSpace

ROW_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SemiMarkovKernel:
    b: np.ndarray
    space: StateSpace
    counts: np.ndarray | None = None
    flagged: tuple[int, ...] = ()

    def __post_init__(self):
        b = _frozen(self.b)
        if b.ndim != 3 or b.shape[0] != b.shape[1] or b.shape[2] < 2:
            raise SmpError(f"kernel increments must have shape (m, m, t_max+1), got {b.shape}")
        if b.shape[0] != self.space.m:
            raise SmpError(f"kernel has {b.shape[0]} states, state space has {self.space.m}")
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise SmpError("kernel increments must be finite and nonnegative")
        if np.any(b[:, :, 0] != 0):
            raise SmpError("b_ij(0) must be 0")
        if np.any(b[np.arange(b.shape[0]), np.arange(b.shape[0]), :] != 0):
            raise SmpError("self-jumps b_ii(t) must be 0")
        rows = b.sum(axis=(1, 2))
        bad = [i for i, r in enumerate(rows) if abs(r - 1) > 1e-9 and r != 0]
        if bad:
            raise SmpError(f"kernel rows {bad} do not sum to 1 (sums {rows[bad]})")
        object.__setattr__(self, "b", b)
        if self.counts is not None:
            c = _frozen(self.counts, dtype=np.int64)
            if c.shape != b.shape:
                raise SmpError("counts must match the kernel shape")
            object.__setattr__(self, "counts", c)

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def t_max(self) -> int:
        return self.b.shape[2] - 1

    @property
    def absorbing(self) -> np.ndarray:
        return self.b.sum(axis=(1, 2)) == 0

    @cached_property
    def views(self) -> "DerivedKernelViews":
        return derive_views(self)


@dataclass(frozen=True, eq=False)
class DerivedKernelViews:
    """
    Cumulative quantities of a kernel, all indexed by ``t = 0..t_max``.

    ``Q[i, j, t]`` cumulative kernel, ``H[i, t]`` sojourn cdf, ``S = 1 - H``
    the sojourn survival, ``P`` the embedded chain and ``G[i, j, t]`` the
    conditional sojourn cdf. ``surv`` and ``inc`` extend ``S`` and ``b``
    beyond the truncation horizon.
    """

    b: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    S: np.ndarray
    P: np.ndarray
    G: np.ndarray
    values: np.ndarray
    log_factors: np.ndarray

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def t_max(self) -> int:
        return self.b.shape[2] - 1

    @property
    def absorbing(self) -> np.ndarray:
        return self.H[:, -1] == 0

    def surv(self, t):
        """``1 - H_i(t)`` for every state (shape ``(m,)``, or ``(m, len(t))``)."""
        t = np.minimum(np.asarray(t), self.t_max)
        return self.S[:, t]

    def inc(self, s: int) -> np.ndarray:
        """``b(s)`` as an ``(m, m)`` matrix, zero past the horizon."""
        if s < 0 or s > self.t_max:
            return np.zeros((self.m, self.m))
        return self.b[:, :, s]

    def conditional(self, i: int, v: int) -> tuple[np.ndarray, np.ndarray]:
        """First-sojourn law after ``v`` minutes already spent in ``i``.

        Returns ``(inc, surv)`` with ``inc[a, s] = b_ia(s+v)/S_i(v)`` and
        ``surv[u] = S_i(u+v)/S_i(v)`` for ``s, u = 0..t_max``.
        """
        Sv = self.surv(v)[i]
        if Sv <= 0:
            raise SmpError(f"H_{i}({v}) = 1: state {i} cannot have backward time {v}")
        t = np.arange(self.t_max + 1)
        src = t + v
        inc = np.zeros((self.m, self.t_max + 1))
        ok = (src <= self.t_max) & (t >= 1)
        inc[:, ok] = self.b[i][:, src[ok]] / Sv
        return inc, self.surv(src)[i] / Sv


def derive_views(k: SemiMarkovKernel) -> DerivedKernelViews:
    b = k.b
    Q = np.cumsum(b, axis=2)
    H = Q.sum(axis=1)
    # Where no increment mass is left the sojourn is over: pin H to 1 so that
    # S = 1 - H carries no rounding residue.
    tail = np.cumsum(b.sum(axis=1)[:, ::-1], axis=1)[:, ::-1]  # mass at >= t
    over = np.zeros_like(H, dtype=bool)
    over[:, :-1] = tail[:, 1:] == 0
    over[:, -1] = True
    over &= (H[:, -1] > 0)[:, None]
    H[over] = 1.0
    H = np.minimum(H, 1.0)
    P = Q[:, :, -1].copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        G = np.where(P[:, :, None] > 0, Q / np.where(P > 0, P, 1)[:, :, None], 1.0)
    return DerivedKernelViews(
        b=b, Q=_frozen(Q), H=_frozen(H), S=_frozen(1.0 - H), P=_frozen(P), G=_frozen(G),
        values=_frozen(k.space.values), log_factors=_frozen(k.space.log_factors))


@dataclass(frozen=True, eq=False)
class OvernightChain:
    T: np.ndarray
    flagged: tuple[int, ...] = ()

    def __post_init__(self):
        T = _frozen(self.T)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise SmpError("overnight matrix must be square")
        _check_stochastic(T, "overnight matrix")
        object.__setattr__(self, "T", T)

    @property
    def m(self) -> int:
        return self.T.shape[0]


def _check_stochastic(M, name):
    if np.any(M < 0) or np.any(M > 1 + ROW_TOL):
        raise SmpError(f"{name} has entries outside [0, 1]")
    rows = M.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1) > 1e-9)
    if bad.size:
        raise SmpError(f"{name} rows {bad.tolist()} do not sum to 1")


# ---------------------------------------------------------------------------
# estimators

def sojourn_counts(path: DiscretizedPath, t_max: int | None = None) -> np.ndarray:
    """
    ``N[i, j, t]``: completed sojourns in ``i`` of exactly ``t`` minutes followed by ``j``.

    The last run of every block ends at a day boundary rather than with an
    observed jump and is dropped. So is the first run of the path when it
    starts with a nonzero backward time. Sojourns longer than ``t_max`` are
    folded into the ``t_max`` bin.
    """
    parts = []
    for k, b in enumerate(path.blocks):
        if b.size < 2:
            continue
        starts = np.r_[0, np.flatnonzero(b[1:] != b[:-1]) + 1]
        if starts.size < 2:
            continue
        lengths = np.diff(starts)
        rec = np.stack([b[starts[:-1]], b[starts[1:]], lengths], axis=1)
        if k == 0 and path.initial_backward > 0:
            rec = rec[1:]
        parts.append(rec)
    trans = np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)
    if trans.shape[0] == 0:
        raise EstimationError("path contains no completed jump")
    arr = trans.astype(np.int64)
    longest = int(arr[:, 2].max())
    t_max = longest if t_max is None else int(t_max)
    if t_max < 1:
        raise SmpError("t_max must be >= 1")
    m = path.m
    N = np.zeros((m, m, t_max + 1), dtype=np.int64)
    np.add.at(N, (arr[:, 0], arr[:, 1], np.minimum(arr[:, 2], t_max)), 1)
    return N


def estimate_kernel(path: DiscretizedPath, space: StateSpace, t_max: int | None = None,
                    on_empty_row: str = "error") -> SemiMarkovKernel:
    """
    Empirical kernel ``b_ij(t) = N_ij(t) / N_i`` from run-length sojourns.

    on_empty_row : ``"error"`` raises for states without a completed
        sojourn, ``"absorbing"`` leaves their row at zero, ``"uniform"``
        spreads it evenly over the other states at sojourn 1. Affected states
        are listed in ``kernel.flagged``.
    """
    if path.m != space.m:
        raise SmpError("path and state space disagree on the number of states")
    N = sojourn_counts(path, t_max)
    totals = N.sum(axis=(1, 2))
    empty = np.flatnonzero(totals == 0)
    b = np.zeros(N.shape)
    ok = totals > 0
    b[ok] = N[ok] / totals[ok, None, None]
    if empty.size:
        if on_empty_row == "error":
            raise EstimationError(f"no completed sojourn observed for states {empty.tolist()}")
        if on_empty_row == "uniform":
            m = space.m
            for i in empty:
                b[i, :, 1] = 1.0 / (m - 1)
                b[i, i, 1] = 0.0
        elif on_empty_row != "absorbing":
            raise SmpError(f"unknown on_empty_row policy {on_empty_row!r}")
    return SemiMarkovKernel(b=b, space=space, counts=N, flagged=tuple(int(i) for i in empty))


def _row_normalise(C, fallback, what):
    C = np.asarray(C, dtype=float)
    tot = C.sum(axis=1)
    empty = np.flatnonzero(tot == 0)
    if empty.size and fallback == "error":
        raise EstimationError(f"{what}: no observations for rows {empty.tolist()}")
    M = np.where(tot[:, None] > 0, C / np.where(tot > 0, tot, 1)[:, None], 1.0 / C.shape[0])
    return M, tuple(int(i) for i in empty)


def estimate_overnight(path: DiscretizedPath, fallback: str = "uniform") -> OvernightChain:
    """Frequencies of (last intraday state -> overnight state) at day boundaries."""
    pairs = path.boundary_pairs()
    if not pairs:
        raise EstimationError("path has no day boundary")
    C = np.zeros((path.m, path.m))
    for a, j in pairs:
        C[a, j] += 1
    T, empty = _row_normalise(C, fallback, "overnight matrix")
    return OvernightChain(T, flagged=empty)


def estimate_markov_baseline(path: DiscretizedPath, fallback: str = "uniform") -> np.ndarray:
    """One-step transition frequencies inside blocks, self-transitions included."""
    C = np.zeros((path.m, path.m))
    for b in path.blocks:
        if b.size > 1:
            np.add.at(C, (b[:-1], b[1:]), 1)
    M, _ = _row_normalise(C, fallback, "Markov baseline")
    return M


def geometric_kernel(P, q, t_max: int, space: StateSpace) -> SemiMarkovKernel:
    """
    Kernel with geometric sojourns ``b_ij(t) = p_ij q_i (1 - q_i)^(t-1)``.

    Mass beyond ``t_max`` is folded into the last bin. Rows of ``P`` that
    are all zero give absorbing states.
    """
    P = np.asarray(P, dtype=float)
    q = np.broadcast_to(np.asarray(q, dtype=float), (P.shape[0],))
    if np.any(np.diag(P) != 0):
        raise SmpError("embedded chain must have a zero diagonal")
    rows = P.sum(axis=1)
    if np.any((np.abs(rows - 1) > 1e-9) & (rows != 0)):
        raise SmpError("embedded chain rows must sum to 1 (or 0 for absorbing states)")
    if t_max < 1:
        raise SmpError("t_max must be >= 1")
    live = rows > 0
    if np.any(live & ((q <= 0) | (q > 1))):
        raise SmpError("jump probabilities q must lie in (0, 1]")
    t = np.arange(t_max + 1)
    g = np.zeros((P.shape[0], t_max + 1))
    qq = np.where(live, q, 1.0)
    g[:, 1:] = qq[:, None] * (1 - qq[:, None]) ** (t[1:] - 1)
    g[:, t_max] = (1 - qq) ** (t_max - 1)
    b = P[:, :, None] * g[:, None, :]
    return SemiMarkovKernel(b=b, space=space)


def markov_to_kernel(M, t_max: int, space: StateSpace) -> SemiMarkovKernel:
    """Geometric kernel reproducing the one-step chain ``M`` below ``t_max``."""
    M = np.asarray(M, dtype=float)
    _check_stochastic(M, "transition matrix")
    stay = np.diag(M).copy()
    q = 1.0 - stay
    P = M.copy()
    np.fill_diagonal(P, 0.0)
    live = q > 1e-15
    P[live] /= P[live].sum(axis=1, keepdims=True)
    P[~live] = 0.0
    return geometric_kernel(P, np.where(live, q, 1.0), t_max, space)


# ---------------------------------------------------------------------------
# serialization

def model_to_dict(k: SemiMarkovKernel, overnight: OvernightChain | None = None,
                  markov: np.ndarray | None = None) -> dict:
    """JSON-ready dict; ``b[i][j][t-1]`` is ``b_ij(t)``."""
    out = {
        "m": k.m,
        "delta": k.space.delta,
        "z_min": k.space.z_min,
        "z_max": k.space.z_max,
        "thresholds": list(k.space.thresholds),
        "t_max": k.t_max,
        "b": k.b[:, :, 1:].tolist(),
        "counts": None if k.counts is None else k.counts[:, :, 1:].tolist(),
        "flagged": list(k.flagged),
        "overnight": None if overnight is None else overnight.T.tolist(),
        "markov": None if markov is None else np.asarray(markov).tolist(),
    }
    return out


def model_from_dict(d: dict):
    space = StateSpace(delta=float(d["delta"]), z_min=int(d["z_min"]), z_max=int(d["z_max"]),
                       thresholds=tuple(d["thresholds"]) if d.get("thresholds") else None)
    inc = np.asarray(d["b"], dtype=float)
    m = int(d["m"])
    b = np.zeros((m, m, inc.shape[2] + 1))
    b[:, :, 1:] = inc
    counts = None
    if d.get("counts") is not None:
        counts = np.zeros(b.shape, dtype=np.int64)
        counts[:, :, 1:] = np.asarray(d["counts"], dtype=np.int64)
    k = SemiMarkovKernel(b=b, space=space, counts=counts, flagged=tuple(d.get("flagged", ())))
    overnight = OvernightChain(np.asarray(d["overnight"])) if d.get("overnight") is not None else None
    markov = np.asarray(d["markov"]) if d.get("markov") is not None else None
    return k, overnight, markov


def save_model(dest, k, overnight=None, markov=None) -> None:
    with open(dest, "w") as fh:
        json.dump(model_to_dict(k, overnight, markov), fh, indent=1)
        fh.write("\n")


def load_model(src):
    with open(src) as fh:
        return model_from_dict(json.load(fh))
