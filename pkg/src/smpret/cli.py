"""
Command-line entry point.

Every subcommand writes into the ``--output`` directory and finishes with a
``meta.json`` holding the configuration, its hash, the input file digests
and library versions. Nothing time-dependent is written, so reruns with the
same inputs and flags produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import SmpError
from .fpt import EPS_LOG, fpt_multi_day, fpt_stationary, fpt_within_day
from .inference import run_tests
from .kernel import (OvernightChain, estimate_kernel, estimate_markov_baseline, estimate_overnight,
                     load_model, markov_to_kernel, save_model)
from .moments import markov_squared_acf, squared_acf_conditional, squared_acf_stationary, write_acf_csv
from .simulate import (SimConfig, empirical_fpt, empirical_sq_acf, mc_fpt, simulate_markov,
                       simulate_smp)
from .smp_solver import stationary_law
from .state_model import (StateSpace, compute_returns, discretize, read_path_csv, read_price_csv,
                          write_path_csv)

log = logging.getLogger("smpret")

SPACE_FILE = "space.json"


# ---------------------------------------------------------------------------
# helpers

def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config(args) -> dict:
    # the input is identified by its digest, so only its name enters the config
    skip = {"func", "output"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    if cfg.get("input") is not None:
        cfg["input"] = Path(cfg["input"]).name
    return cfg


def _write_meta(out: Path, args, inputs) -> None:
    import pandas
    import scipy

    cfg = _config(args)
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    meta = {
        "command": args.command,
        "config": cfg,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "inputs": {Path(p).name: _digest(p) for p in inputs},
        "versions": {
            "smpret": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pandas.__version__,
            "python": platform.python_version(),
        },
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def _dump_json(obj, dest) -> None:
    with open(dest, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _space_to_dict(sp: StateSpace) -> dict:
    return {"delta": sp.delta, "z_min": sp.z_min, "z_max": sp.z_max,
            "thresholds": list(sp.thresholds)}


def _resolve_space(args, src: Path) -> tuple[StateSpace, list]:
    """State space from a ``space.json`` beside the input, else from the flags."""
    side = src.parent / SPACE_FILE
    if side.exists():
        d = json.loads(side.read_text())
        return StateSpace(float(d["delta"]), int(d["z_min"]), int(d["z_max"]),
                          tuple(d["thresholds"])), [side]
    if args.delta is None:
        raise SmpError(f"no {SPACE_FILE} next to {src}; pass --delta and --states")
    return StateSpace.symmetric(args.states, args.delta), []


def _read_path(args):
    src = Path(args.input)
    space, extra = _resolve_space(args, src)
    return read_path_csv(src, space.m), space, [src] + extra


def _fmt(x) -> str:
    return repr(float(x))


def _rho_tag(rho) -> str:
    return repr(float(rho))


def _write_rows(dest, header, rows) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args, out: Path):
    prices, days = read_price_csv(args.input)
    rp = compute_returns(prices, days)
    if args.delta is None:
        allr = np.concatenate(list(rp.intraday) + [rp.overnight])
        space = StateSpace.from_quantiles(allr, args.states)
    else:
        space = StateSpace.symmetric(args.states, args.delta)
    path = discretize(rp, space)
    write_path_csv(path, out / "path.csv", space)
    _dump_json(_space_to_dict(space), out / SPACE_FILE)
    log.info("ingested %d days, %d slots", days.d, len(path))
    return [args.input]


def cmd_fit(args, out: Path):
    path, space, inputs = _read_path(args)
    k = estimate_kernel(path, space, t_max=args.t_max, on_empty_row=args.on_empty_row)
    overnight = estimate_overnight(path) if path.boundary_pairs() else None
    markov = estimate_markov_baseline(path)
    save_model(out / "model.json", k, overnight, markov)
    return inputs


def cmd_test(args, out: Path):
    src = Path(args.input)
    if src.suffix == ".json":
        k, _, _ = load_model(src)
        inputs = [src]
    else:
        path, space, inputs = _read_path(args)
        k = estimate_kernel(path, space, t_max=args.t_max, on_empty_row="absorbing")
    rep = run_tests(k, alpha=args.alpha, min_count=args.min_count)
    rep.write_csv(out / "tests.csv")
    rep.write_summary(out / "tests_summary.json")
    return inputs


def _model_views(args, k, overnight, markov, horizon):
    """Kernel and overnight chain of the selected model."""
    if args.model == "markov":
        if markov is None:
            raise SmpError("model file has no Markov baseline")
        mk = markov_to_kernel(markov, horizon + 1, k.space)
        return mk, OvernightChain(markov)
    return k, overnight


def cmd_fpt(args, out: Path):
    k, overnight, markov = load_model(args.input)
    n, days = args.n, args.days
    horizon = n * days
    kk, ov = _model_views(args, k, overnight, markov, horizon)
    views = kk.views
    if days > 1 and ov is None:
        raise SmpError("model has no overnight chain; use --days 1")
    if args.stationary:
        starts = ["stationary"]
    elif args.state is not None:
        starts = [args.state]
    else:
        starts = [i for i in range(kk.m) if views.surv(args.backward)[i] > 0]
    grid = {}
    for rho in args.rho:
        for s in starts:
            if s == "stationary":
                law = stationary_law(views)
                sol = fpt_stationary(views, law.pi_v, rho, n - 1, epsilon_log=args.epsilon_log,
                                     mass_floor=args.mass_floor)
                tag = "stationary"
            elif ov is None:
                sol = fpt_within_day(views, s, args.backward, rho, n - 1, n=n,
                                     method="propagate", epsilon_log=args.epsilon_log)
                tag = f"i{s}_v{args.backward}"
            else:
                sol = fpt_multi_day(views, ov, s, args.backward, rho, days, n,
                                    epsilon_log=args.epsilon_log, mass_floor=args.mass_floor)
                tag = f"i{s}_v{args.backward}"
            name = f"fpt_rho{_rho_tag(rho)}_{tag}.csv"
            _write_rows(out / name, ["t", "survival", "pmf"],
                        [[t, _fmt(r), _fmt(p)] for t, (r, p) in enumerate(zip(sol.R, sol.pmf))])
            grid[name] = {key: (None if isinstance(val, float) and not np.isfinite(val) else val)
                          for key, val in sol.stats.items()}
            if args.empirical and s != "stationary":
                Rh, N = mc_fpt(kk, ov, s, args.backward, rho, args.paths, len(sol.R) - 1,
                               n=n, seed=args.seed)
                se = np.sqrt(Rh * (1 - Rh) / N)
                pmf = -np.diff(np.concatenate([[1.0], Rh]))
                _write_rows(out / f"fpt_empirical_rho{_rho_tag(rho)}_{tag}.csv",
                            ["t", "survival", "pmf", "se"],
                            [[t, _fmt(a), _fmt(b), _fmt(c)] for t, (a, b, c) in enumerate(zip(Rh, pmf, se))])
    _dump_json(grid, out / "fpt_grid.json")
    return [args.input]


def cmd_acf(args, out: Path):
    k, overnight, markov = load_model(args.input)
    if args.model == "markov":
        if markov is None:
            raise SmpError("model file has no Markov baseline")
        acf = markov_squared_acf(markov, k.space.values, args.tau_max)
    else:
        acf = squared_acf_stationary(k.views, args.tau_max)
    write_acf_csv(acf, out / "acf.csv")
    if args.state is not None:
        if args.model == "markov":
            raise SmpError("the conditional autocovariance needs --model smp")
        rows = []
        for tau in range(args.tau_max + 1):
            c = squared_acf_conditional(k.views, args.state, args.backward, args.t, tau)
            rows.append([args.state, args.backward, args.t, tau, _fmt(c["cov"])])
        _write_rows(out / "acf_conditional.csv", ["i", "v", "t", "tau", "value"], rows)
    return [args.input]


def cmd_simulate(args, out: Path):
    k, overnight, markov = load_model(args.input)
    cfg = SimConfig(seed=args.seed, days=args.days, n=args.n, initial_state=args.state,
                    initial_backward=args.backward, model=args.model)
    if args.model == "markov":
        if markov is None:
            raise SmpError("model file has no Markov baseline")
        path = simulate_markov(markov, cfg)
    else:
        path = simulate_smp(k, overnight, cfg)
    write_path_csv(path, out / "path.csv", k.space)
    _dump_json(_space_to_dict(k.space), out / SPACE_FILE)
    return [args.input]


def _l1(a, b) -> float:
    n = min(len(a), len(b))
    return float(np.abs(np.asarray(a[:n]) - np.asarray(b[:n])).sum())


def cmd_compare(args, out: Path):
    path, space, inputs = _read_path(args)
    k = estimate_kernel(path, space, t_max=args.t_max, on_empty_row="uniform")
    overnight = estimate_overnight(path) if path.boundary_pairs() else None
    M = estimate_markov_baseline(path)
    n = max(b.size for b in path.blocks)
    days = len(path.blocks)
    ss = np.random.SeedSequence(args.seed).spawn(2)
    seeds = [int(s.generate_state(1)[0]) for s in ss]
    sim_days = days * args.sim_factor
    smp_path = simulate_smp(k, overnight, SimConfig(seed=seeds[0], days=sim_days, n=n))
    mk_path = simulate_markov(M, SimConfig(seed=seeds[1], days=sim_days, n=n, model="markov"))
    paths = {"data": path, "smp": smp_path, "markov": mk_path}
    rows, dist = [], {"fpt": {}, "acf": {}}
    for rho in args.rho:
        curves = {name: empirical_fpt(p, space, rho, sample_stride=args.stride,
                                      horizon=args.horizon).survival for name, p in paths.items()}
        T = min(len(c) for c in curves.values())
        for t in range(T):
            rows.append([_rho_tag(rho), t] + [_fmt(curves[nm][t]) for nm in paths])
        dist["fpt"][_rho_tag(rho)] = {"smp": _l1(curves["smp"], curves["data"]),
                                       "markov": _l1(curves["markov"], curves["data"])}
    _write_rows(out / "compare_fpt.csv", ["rho", "t", "data", "smp", "markov"], rows)
    acfs = {name: empirical_sq_acf(p, space, args.tau_max).acf for name, p in paths.items()}
    _write_rows(out / "compare_acf.csv", ["tau", "data", "smp", "markov"],
                [[t] + [_fmt(acfs[nm][t]) for nm in paths] for t in range(args.tau_max + 1)])
    dist["acf"] = {"smp": _l1(acfs["smp"][1:], acfs["data"][1:]),
                   "markov": _l1(acfs["markov"][1:], acfs["data"][1:])}
    _dump_json(dist, out / "distances.json")
    return inputs


# ---------------------------------------------------------------------------
# parser

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {s}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smpret", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, space=False):
        sp.add_argument("--input", required=True)
        sp.add_argument("--output", required=True, help="output directory")
        if space:
            sp.add_argument("--states", type=_positive_int, default=5)
            sp.add_argument("--delta", type=_positive_float, default=None)

    s = sub.add_parser("ingest", help="prices CSV -> discretized path")
    common(s, space=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("fit", help="path -> kernel, overnight and Markov baseline")
    common(s, space=True)
    s.add_argument("--t-max", type=_positive_int, default=None)
    s.add_argument("--on-empty-row", choices=["error", "absorbing", "uniform"], default="error")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("test", help="geometric sojourn test per state pair")
    common(s, space=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--min-count", type=_nonneg_int, default=30)
    s.add_argument("--t-max", type=_positive_int, default=None)
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("fpt", help="first-passage survival curves")
    common(s)
    s.add_argument("--rho", type=_positive_float, action="append", required=True)
    s.add_argument("--n", type=_positive_int, default=390)
    s.add_argument("--days", type=_positive_int, default=1)
    s.add_argument("--state", type=_nonneg_int, default=None)
    s.add_argument("--backward", type=_nonneg_int, default=0)
    s.add_argument("--stationary", action="store_true",
                   help="start from the stationary (state, backward) law, within one day")
    s.add_argument("--model", choices=["smp", "markov"], default="smp")
    s.add_argument("--epsilon-log", type=_positive_float, default=EPS_LOG)
    s.add_argument("--mass-floor", type=float, default=0.0)
    s.add_argument("--empirical", action="store_true", help="also write Monte Carlo curves")
    s.add_argument("--paths", type=_positive_int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fpt)

    s = sub.add_parser("acf", help="squared-return autocovariance")
    common(s)
    s.add_argument("--tau-max", type=_nonneg_int, default=50)
    s.add_argument("--model", choices=["smp", "markov"], default="smp")
    s.add_argument("--state", type=_nonneg_int, default=None,
                   help="also write the conditional curve from this state")
    s.add_argument("--backward", type=_nonneg_int, default=0)
    s.add_argument("--t", type=_nonneg_int, default=0)
    s.set_defaults(func=cmd_acf)

    s = sub.add_parser("simulate", help="synthetic path from a fitted model")
    common(s)
    s.add_argument("--n", type=_positive_int, default=390)
    s.add_argument("--days", type=_positive_int, default=1)
    s.add_argument("--state", type=_nonneg_int, default=None)
    s.add_argument("--backward", type=_nonneg_int, default=0)
    s.add_argument("--model", choices=["smp", "markov"], default="smp")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="data vs semi-Markov vs Markov curves")
    common(s, space=True)
    s.add_argument("--rho", type=_positive_float, action="append", required=True)
    s.add_argument("--tau-max", type=_nonneg_int, default=50)
    s.add_argument("--t-max", type=_positive_int, default=None)
    s.add_argument("--stride", type=_positive_int, default=1)
    s.add_argument("--horizon", type=_positive_int, default=None)
    s.add_argument("--sim-factor", type=_positive_int, default=10,
                   help="simulated paths are this many times longer than the data")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SMPRET_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    out = Path(args.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        inputs = args.func(args, out)
        _write_meta(out, args, inputs)
    except (SmpError, OSError, ValueError, KeyError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
