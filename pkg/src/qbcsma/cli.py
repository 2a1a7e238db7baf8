"""Command-line entry point: ``qbcsma <subcommand> --config file.json [flags]``.

Precedence for every setting is flags > config file > defaults. Exit codes:
0 success, 1 validation error (one JSON line on stderr naming the key),
2 runtime budget or IO failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import BudgetExceeded, ChainState, simulate
from .experiments import (
    EstimateTable,
    ExperimentSpec,
    collapse_experiment,
    convergence_experiment,
    general_graph_probe,
    homogenization_experiment,
    initial_state,
    line3_product_ratio,
    stationary_probe,
)
from .fast_chain import fast_chain_report
from .heavy_traffic import localization_constants, solve_limit_ode, solve_to_equilibrium
from .model import ConfigError, build_params
from .rng import RNG_ID, fresh_seed

SUBCOMMANDS = ("simulate", "ode", "fastchain", "collapse", "homogenize", "converge",
               "stationary", "graphs")
DEFAULTS = {
    "N": 100, "N_list": [50, 200, 800], "T": 1.0, "reps": 200, "S0": 2.0, "node": 1,
    "localization": "corrected", "grid": 201, "events": 10**6, "t_end": None,
    "gamma": None, "batches": 50, "budget": 10**8,
}


class UsageError(Exception):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, "argv")


def _parser():
    p = _Parser(prog="qbcsma", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=Path, default=Path("."))
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("--reps", type=int)
        s.add_argument("--N", type=int, dest="N")
        s.add_argument("--N-list", type=int, nargs="+", dest="N_list")
        s.add_argument("--T", type=float, dest="T")
        s.add_argument("--S0", type=float, dest="S0")
        s.add_argument("--node", type=int)
        s.add_argument("--localization", choices=("corrected", "literal"))
        s.add_argument("--events", type=int)
        s.add_argument("--budget", type=int)
        s.add_argument("--q", type=int, nargs="+")
        s.add_argument("--threads", type=int)
    return p


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc.strerror}", "config") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config: {exc.msg} at line {exc.lineno}", "config") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object", "config")
    return raw


def resolve(args) -> dict:
    """Merge defaults, config file and flags, in increasing priority."""
    cfg = {k: v for k, v in DEFAULTS.items() if v is not None}
    cfg.update(load_config(args.config))
    for key in ("seed", "reps", "N", "N_list", "T", "S0", "node", "localization", "events",
                "budget", "q"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    if "seed" not in cfg:
        cfg["seed"] = fresh_seed()
    if "gamma" not in cfg and "n" in cfg:
        cfg["gamma"] = [0.0] * int(cfg["n"])
    return cfg


def _params(cfg):
    keys = ("n", "a", "lambda_inf", "gamma", "N", "graph", "mode", "convention")
    return build_params({k: cfg[k] for k in keys if k in cfg})


def _spec(cfg, params):
    try:
        return ExperimentSpec(
            params=params, N_list=[int(x) for x in cfg["N_list"]], T=float(cfg["T"]),
            reps=int(cfg["reps"]), seed=int(cfg["seed"]), S0=float(cfg["S0"]),
            node=int(cfg["node"]), budget=int(cfg["budget"]), localization=cfg["localization"],
        )
    except ValueError as exc:
        key = "reps" if "replication" in str(exc) else "N_list"
        if "localization" in str(exc):
            key = "localization"
        raise ConfigError(str(exc), key) from None


def _header(cfg, params, extra=()):
    lines = [f"params_hash: {params.digest()}", f"seed: {cfg['seed']}", f"rng: {RNG_ID}",
             f"version: {__version__}", "config: " + json.dumps(cfg, sort_keys=True)]
    return lines + list(extra)


def emit_plot_data(obj, path: Path, fmt: str = "csv", header=(), lambda_inf=None, grid=201):
    """Long-format data for plotting: an EstimateTable or an OdeSolution."""
    if isinstance(obj, EstimateTable):
        if fmt == "json":
            obj.write_json(path)
            return path
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("N", "estimator", "mean", "stderr", "reps"))
            for r in obj.rows:
                w.writerow([r["N"], r["estimator"], repr(r["mean"]), repr(r["stderr"]), r["reps"]])
        return path
    lam = np.asarray(lambda_inf, dtype=float)
    t = np.linspace(0.0, obj.t_end, grid)
    S = obj(t)
    qs = np.outer(S, (lam / obj.mu) ** (1.0 / obj.a))
    cols = ["t", "S"] + [f"q_{v + 1}" for v in range(lam.size)]
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump({"columns": cols, "rows": np.column_stack([t, S, qs]).tolist()}, fh)
            fh.write("\n")
        return path
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in np.column_stack([t, S, qs]):
            w.writerow([repr(float(x)) for x in row])
    return path


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_plain)
        fh.write("\n")


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset, tuple)):
        return sorted(x) if isinstance(x, (set, frozenset)) else list(x)
    raise TypeError(type(x))


def _ext(fmt):
    return "json" if fmt == "json" else "csv"


def cmd_ode(cfg, out, fmt):
    params = _params(cfg)
    T = float(cfg["T"])
    sol = solve_limit_ode(params.lambda_inf, params.gamma, params.a, float(cfg["S0"]), T)
    loc = localization_constants(sol, params.lambda_inf, params.a, T)
    meta = {"mu": sol.mu, "beta": sol.beta, "s_gamma": sol.s_gamma, "hit_zero": sol.hit_zero,
            "M": loc.M, "m": loc.m, "M_literal": loc.M_literal, "m_literal": loc.m_literal,
            "literal_U_empty": loc.literal_U_empty, "sup_S": loc.sup_S, "inf_S": loc.inf_S,
            "config": cfg, "seed": cfg["seed"], "rng": RNG_ID, "version": __version__}
    if sol.s_gamma > 0:
        eq = solve_to_equilibrium(params.lambda_inf, params.gamma, params.a, float(cfg["S0"]))
        meta["T_long"] = eq.t_end
        meta["S_T_long"] = float(eq(eq.t_end))
    emit_plot_data(sol, out / f"ode.{_ext(fmt)}", fmt, _header(cfg, params), params.lambda_inf,
                   int(cfg["grid"]))
    _write_json(out / "ode.meta.json", meta)


def cmd_simulate(cfg, out, fmt):
    params = _params(cfg)
    if "q0" in cfg:
        init = ChainState(tuple(int(x) for x in cfg["q0"]), 0 if params.graph.complete else frozenset())
    else:
        init, _ = initial_state(params, float(cfg["S0"]))
    t_end = cfg.get("t_end") or params.time_scale * float(cfg["T"])
    traj = simulate(params, init, float(t_end), int(cfg["seed"]), budget=int(cfg["budget"]))
    traj.write_csv(out / "trajectory.csv", _header(cfg, params))
    _write_json(out / "trajectory.meta.json", {"events": len(traj), "t_end": traj.t_end,
                "final_q": list(map(int, traj.queue_path()[-1])), "config": cfg,
                "seed": cfg["seed"], "rng": RNG_ID, "version": __version__})


def cmd_fastchain(cfg, out, fmt):
    params = _params(cfg)
    if "q" not in cfg:
        raise ConfigError("missing required key 'q'", "q")
    q = np.asarray(cfg["q"], dtype=float)
    if q.size != params.n or np.any(q < 0):
        raise ConfigError("q must be n non-negative integers", "q")
    rep = fast_chain_report(q, params.a, params.convention)
    body = {k: getattr(rep, k) for k in ("gap", "log_sobolev_lb", "omega", "b", "t_mix",
                                          "hitting", "pi0")}
    body.update({"q": q.tolist(), "config": cfg, "seed": cfg["seed"], "rng": RNG_ID,
                 "version": __version__})
    if fmt == "json":
        _write_json(out / "fastchain.json", body)
        return
    with open(out / "fastchain.csv", "w", newline="") as fh:
        for line in _header(cfg, params):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("quantity", "node", "value"))
        for k in ("gap", "log_sobolev_lb", "omega", "t_mix", "pi0"):
            v = getattr(rep, k)
            w.writerow((k, "", repr(float(v)) if v is not None else "nan"))
        for i, v in enumerate(rep.b or []):
            w.writerow(("b", i + 1, repr(float(v))))
        # hitting rows: E_σ[T_τ] keyed "σ->τ" on V₀ (0 is the empty schedule)
        for i, row in enumerate(rep.hitting):
            for j, v in enumerate(row):
                if i != j:
                    w.writerow(("hitting", f"{i}->{j}", repr(float(v))))


def _table_out(table, name, cfg, params, out, fmt):
    path = out / f"{name}.{_ext(fmt)}"
    extra = [f"exploratory: {table.metadata['exploratory']}"] if "exploratory" in table.metadata else []
    emit_plot_data(table, path, fmt, _header(cfg, params, extra))
    _write_json(out / f"{name}.meta.json", table.metadata)


def _experiment(run, name):
    def cmd(cfg, out, fmt, workers=None):
        params = _params(cfg)
        table = run(_spec(cfg, params), workers=workers)
        _table_out(table, name, cfg, params, out, fmt)
        if table.metadata.get("errors"):
            raise BudgetExceeded(int(cfg["budget"]), float("nan"))
    return cmd


def cmd_stationary(cfg, out, fmt, workers=None):
    params = _params(cfg)
    if not params.s_gamma > 0:
        raise ConfigError("stationary probe needs sum(gamma) > 0", "gamma")
    table = stationary_probe(params, [int(x) for x in cfg["N_list"]], T=float(cfg["T"]),
                             reps=int(cfg["reps"]), seed=int(cfg["seed"]))
    _table_out(table, "stationary", cfg, params, out, fmt)


def cmd_graphs(cfg, out, fmt, workers=None):
    params = _params(cfg)
    if "q" not in cfg:
        raise ConfigError("missing required key 'q'", "q")
    table = general_graph_probe(params.graph, cfg["q"], params.a, events=int(cfg["events"]),
                                seed=int(cfg["seed"]), convention=params.convention,
                                batches=int(cfg["batches"]))
    if cfg.get("line3_ratio"):
        table.metadata["line3_ratio"] = line3_product_ratio(seed=int(cfg["seed"]))
    _table_out(table, "graphs", cfg, params, out, fmt)


COMMANDS = {
    "ode": cmd_ode,
    "simulate": cmd_simulate,
    "fastchain": cmd_fastchain,
    "converge": _experiment(convergence_experiment, "converge"),
    "collapse": _experiment(collapse_experiment, "collapse"),
    "homogenize": _experiment(homogenization_experiment, "homogenize"),
    "stationary": cmd_stationary,
    "graphs": cmd_graphs,
}


def _fail(kind, message, key=None):
    print(json.dumps({"error": kind, "key": key, "message": message}, sort_keys=True),
          file=sys.stderr)


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        cfg = resolve(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise OSError(f"output directory not writable: {out}")
        fn = COMMANDS[args.command]
        if args.command in ("converge", "collapse", "homogenize", "stationary", "graphs"):
            fn(cfg, out, args.format, workers=args.threads)
        else:
            fn(cfg, out, args.format)
    except (UsageError, ConfigError) as exc:
        _fail("config", str(exc), exc.key)
        return 1
    except BudgetExceeded as exc:
        _fail("budget", str(exc))
        return 2
    except OSError as exc:
        _fail("io", str(exc))
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
