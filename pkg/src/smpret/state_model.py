"""
Return-state model: state grid, day structure, returns and discretized paths.

Time is organised in day blocks. A block is the stretch of minutes over which
the intraday semi-Markov process runs without interruption; it restarts with
backward time 0 at the first slot of every block. For days after the first,
slot 0 of the block holds the overnight return (close of the previous day to
open of this one), followed by the intraday returns of the day.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SmpError


@dataclass(frozen=True)
class StateSpace:
    """
    Discretized return grid ``{-z_min*delta, ..., 0, ..., z_max*delta}``.

    ``thresholds`` are the ``m - 1`` cut points between consecutive states.
    A raw return ``r`` goes to the state whose interval ``[c_{k-1}, c_k)``
    contains it, so a value sitting exactly on a cut point lands in the upper
    state. When not given, cut points sit halfway between grid values.
    """

    delta: float
    z_min: int
    z_max: int
    thresholds: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise SmpError(f"delta must be positive, got {self.delta}")
        if self.z_min < 0 or self.z_max < 0:
            raise SmpError("z_min and z_max must be nonnegative")
        if self.z_min + self.z_max + 1 < 2:
            raise SmpError("state space needs at least two states")
        if 1.0 - self.z_min * self.delta <= 0.0:
            raise SmpError("1 + i*delta must stay positive for every state")
        if self.thresholds is None:
            cuts = tuple((k + 0.5) * self.delta for k in range(-self.z_min, self.z_max))
            object.__setattr__(self, "thresholds", cuts)
        else:
            cuts = tuple(float(c) for c in self.thresholds)
            if len(cuts) != self.m - 1:
                raise SmpError(f"expected {self.m - 1} thresholds, got {len(cuts)}")
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise SmpError("thresholds must be strictly increasing")
            object.__setattr__(self, "thresholds", cuts)

    @classmethod
    def symmetric(cls, m: int = 5, delta: float = 1e-3) -> "StateSpace":
        if m < 3 or m % 2 == 0:
            raise SmpError(f"a symmetric space needs an odd m >= 3, got {m}")
        z = (m - 1) // 2
        return cls(delta=delta, z_min=z, z_max=z)

    @classmethod
    def from_quantiles(cls, returns, m: int = 5, delta: float | None = None) -> "StateSpace":
        """Symmetric space whose cut points are quantiles of ``|returns|``.

        The central bin receives a ``1/m`` share of the absolute returns and
        every further pair of bins another ``2/m``. ``delta`` defaults to the
        median absolute nonzero return.
        """
        r = np.abs(np.asarray(returns, dtype=float))
        r = r[np.isfinite(r)]
        if r.size == 0:
            raise SmpError("no returns to take quantiles from")
        if m < 3 or m % 2 == 0:
            raise SmpError(f"a symmetric space needs an odd m >= 3, got {m}")
        z = (m - 1) // 2
        levels = [(2 * k - 1) / m for k in range(1, z + 1)]
        pos = np.quantile(r, levels)
        if delta is None:
            nz = r[r > 0]
            delta = float(np.median(nz)) if nz.size else 1e-3
        pos = np.maximum.accumulate(pos)
        # Quantile ties on discrete price grids; nudge to keep cuts strictly increasing.
        for k in range(1, len(pos)):
            if pos[k] <= pos[k - 1]:
                pos[k] = np.nextafter(pos[k - 1], np.inf)
        if pos[0] <= 0:
            pos = pos + np.finfo(float).tiny
        cuts = tuple(-pos[::-1]) + tuple(pos)
        return cls(delta=float(delta), z_min=z, z_max=z, thresholds=cuts)

    @property
    def m(self) -> int:
        return self.z_min + self.z_max + 1

    @property
    def values(self) -> np.ndarray:
        return np.arange(-self.z_min, self.z_max + 1) * self.delta

    @property
    def log_factors(self) -> np.ndarray:
        """``log(1 + i*delta)`` per state."""
        return np.log1p(self.values)

    @property
    def zero_state(self) -> int | None:
        return self.z_min if self.z_min >= 0 and self.z_max >= 0 else None

    def index(self, returns) -> np.ndarray:
        return np.searchsorted(np.asarray(self.thresholds), np.asarray(returns, dtype=float),
                               side="right").astype(np.int64)


@dataclass(frozen=True)
class DayStructure:
    """Nominal minutes per day ``n``, day count ``d`` and per-day price counts."""

    n: int
    d: int
    lengths: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n < 2:
            raise SmpError(f"n must be >= 2, got {self.n}")
        if self.d < 1:
            raise SmpError(f"d must be >= 1, got {self.d}")
        lengths = tuple(int(x) for x in self.lengths) or (self.n,) * self.d
        if len(lengths) != self.d:
            raise SmpError(f"{len(lengths)} day lengths given for d={self.d}")
        for k, L in enumerate(lengths):
            if L < 1 or L > self.n:
                raise SmpError(f"day {k}: effective length {L} outside [1, {self.n}]")
        object.__setattr__(self, "lengths", lengths)

    @property
    def total(self) -> int:
        return sum(self.lengths)


@dataclass(frozen=True)
class ReturnPath:
    intraday: tuple[np.ndarray, ...]
    overnight: np.ndarray

    def __post_init__(self):
        if len(self.overnight) not in (len(self.intraday) - 1, len(self.intraday)):
            raise SmpError("overnight count must be d-1 (or d with a final overnight)")


@dataclass(frozen=True, eq=False)
class DiscretizedPath:
    """
    Day-structured sequence of state indices (the combined process W).

    ``blocks[k]`` holds the states of block ``k``; ``overnight[k]`` tells
    whether its first entry is an overnight return drawn at the day boundary.
    ``initial_backward`` is the backward time of the very first slot.
    """

    blocks: tuple[np.ndarray, ...]
    m: int
    overnight: tuple[bool, ...] = ()
    initial_backward: int = 0
    raw: tuple[np.ndarray, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        blocks = tuple(np.array(b, dtype=np.int64) for b in self.blocks)
        for b in blocks:
            b.setflags(write=False)
            if b.size and (b.min() < 0 or b.max() >= self.m):
                raise SmpError("state index outside the state space")
        object.__setattr__(self, "blocks", blocks)
        flags = tuple(bool(f) for f in self.overnight) or tuple(k > 0 for k in range(len(blocks)))
        if len(flags) != len(blocks):
            raise SmpError("one overnight flag per block expected")
        object.__setattr__(self, "overnight", flags)
        if self.initial_backward < 0:
            raise SmpError("initial backward time must be >= 0")

    @property
    def states(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(self.blocks)

    def __len__(self):
        return sum(b.size for b in self.blocks)

    def jump_chain(self) -> list[list[tuple[int, int]]]:
        """Per block, the ``(J_n, T_n)`` pairs: run states and run start minutes."""
        out = []
        for b in self.blocks:
            if b.size == 0:
                out.append([])
                continue
            starts = np.flatnonzero(np.r_[True, b[1:] != b[:-1]])
            out.append([(int(b[s]), int(s)) for s in starts])
        return out

    def runs(self):
        """Yield ``(block, state, start, length, is_last)`` for every run."""
        for k, b in enumerate(self.blocks):
            if b.size == 0:
                continue
            starts = np.flatnonzero(np.r_[True, b[1:] != b[:-1]])
            ends = np.r_[starts[1:], b.size]
            for r, (s, e) in enumerate(zip(starts, ends)):
                yield k, int(b[s]), int(s), int(e - s), r == len(starts) - 1

    def backward(self) -> tuple[np.ndarray, ...]:
        """B(t) per block: minutes since the last jump (or block opening)."""
        out = []
        for k, b in enumerate(self.blocks):
            B = np.zeros(b.size, dtype=np.int64)
            if b.size:
                starts = np.flatnonzero(np.r_[True, b[1:] != b[:-1]])
                last = np.maximum.accumulate(np.where(np.r_[True, b[1:] != b[:-1]],
                                                      np.arange(b.size), 0))
                B = np.arange(b.size) - last
                if k == 0 and self.initial_backward:
                    first_end = starts[1] if len(starts) > 1 else b.size
                    B[:first_end] += self.initial_backward
            out.append(B)
        return tuple(out)

    def boundary_pairs(self) -> list[tuple[int, int]]:
        """``(last state of previous block, overnight state)`` at each day boundary."""
        pairs = []
        prev = None
        for b, flag in zip(self.blocks, self.overnight):
            if b.size == 0:
                continue
            if flag and prev is not None:
                pairs.append((prev, int(b[0])))
            prev = int(b[-1])
        return pairs


def compute_returns(prices, days: DayStructure) -> ReturnPath:
    """Split a flat price series into intraday and overnight simple returns."""
    S = np.asarray(prices, dtype=float)
    if S.ndim != 1:
        raise SmpError("prices must be one-dimensional")
    if S.size != days.total:
        raise SmpError(f"{S.size} prices but the day structure expects {days.total}")
    bad = np.flatnonzero(~(S > 0))
    if bad.size:
        raise SmpError(f"non-positive price at index {int(bad[0])}: {S[bad[0]]}")
    bounds = np.cumsum((0,) + days.lengths)
    intraday = []
    overnight = []
    for k in range(days.d):
        day = S[bounds[k]:bounds[k + 1]]
        intraday.append(np.diff(day) / day[:-1])
        if k + 1 < days.d:
            close, nxt = S[bounds[k + 1] - 1], S[bounds[k + 1]]
            overnight.append((nxt - close) / close)
    return ReturnPath(tuple(intraday), np.asarray(overnight, dtype=float))


def discretize(path: ReturnPath, space: StateSpace) -> DiscretizedPath:
    blocks, raw, flags = [], [], []
    for k, intra in enumerate(path.intraday):
        r = np.asarray(intra, dtype=float)
        if k > 0:
            r = np.r_[path.overnight[k - 1], r]
        raw.append(r)
        blocks.append(space.index(r))
        flags.append(k > 0)
    return DiscretizedPath(tuple(blocks), space.m, tuple(flags), raw=tuple(raw))


def path_to_prices(path: DiscretizedPath, space: StateSpace, s0: float = 1.0):
    """
    Expand a path into prices by cumulative accumulation from ``s0``.

    Every block turns into one trading day whose first return is read as the
    overnight return from the previous close; ``s0`` is therefore emitted as
    a one-price leading day acting as that first close. Returns the price
    array and its DayStructure.
    """
    values = space.values
    prices = [s0]
    lengths = [1]
    S = s0
    for b in path.blocks:
        if b.size == 0:
            continue
        growth = np.cumprod(1.0 + values[b])
        prices.extend(S * growth)
        S = prices[-1]
        lengths.append(b.size)
    n = max(max(lengths), 2)
    return np.asarray(prices), DayStructure(n=n, d=len(lengths), lengths=tuple(lengths))


# ---------------------------------------------------------------------------
# CSV interfaces

def read_price_csv(path) -> tuple[np.ndarray, DayStructure]:
    """
    Read ``timestamp,price`` rows into a minute-resampled price series.

    Days are split on the calendar date of the timestamp. Within a day the
    last trade of each minute is kept and minutes without trades carry the
    previous price forward.
    """
    import pandas as pd

    df = pd.read_csv(path)
    missing = {"timestamp", "price"} - set(df.columns)
    if missing:
        raise SmpError(f"price CSV lacks columns {sorted(missing)}")
    ts = pd.to_datetime(df["timestamp"])
    px = pd.Series(df["price"].astype(float).to_numpy(), index=ts).sort_index(kind="stable")
    prices, lengths = [], []
    for _, day in px.groupby(px.index.normalize()):
        per_min = day.groupby(day.index.floor("min")).last()
        full = pd.date_range(per_min.index[0], per_min.index[-1], freq="min")
        per_min = per_min.reindex(full).ffill()
        prices.append(per_min.to_numpy())
        lengths.append(len(per_min))
    if not prices:
        raise SmpError("price CSV has no rows")
    flat = np.concatenate(prices)
    return flat, DayStructure(n=max(max(lengths), 2), d=len(lengths), lengths=tuple(lengths))


def write_path_csv(path: DiscretizedPath, dest, space: StateSpace | None = None) -> None:
    """Write ``day,minute,raw_return,state_index`` rows, one per slot."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "minute", "raw_return", "state_index"])
        for k, b in enumerate(path.blocks):
            if path.raw is not None:
                r = path.raw[k]
            elif space is not None:
                r = space.values[b]
            else:
                r = np.full(b.size, np.nan)
            for t in range(b.size):
                w.writerow([k, t, repr(float(r[t])), int(b[t])])


def read_path_csv(src, m: int) -> DiscretizedPath:
    """Inverse of :func:`write_path_csv`. Blocks of day >= 1 open with an overnight slot."""
    rows: dict[int, list[tuple[int, float, int]]] = {}
    with open(src, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(int(rec["day"]), []).append(
                (int(rec["minute"]), float(rec["raw_return"]), int(rec["state_index"])))
    if not rows:
        raise SmpError(f"{src}: no path rows")
    blocks, raw, flags = [], [], []
    for day in sorted(rows):
        recs = sorted(rows[day])
        blocks.append(np.array([s for _, _, s in recs], dtype=np.int64))
        raw.append(np.array([r for _, r, _ in recs]))
        flags.append(day > 0)
    return DiscretizedPath(tuple(blocks), m, tuple(flags), raw=tuple(raw))
