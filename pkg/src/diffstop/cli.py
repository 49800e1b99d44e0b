"""Command-line entry points: solve a configured problem, simulate
strategies against it, and emit CSV/JSON artifacts.

Exit codes: 0 success, 2 validation error, 3 infinite value function,
4 missing solve artifacts for a strategy that needs them.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import montecarlo as mc
from . import odecore, solver
from .errors import ConfigError, DiffstopError, InfiniteValue, ValidationError
from .model import build_problem

_SCHEMA = {
    "problem": {"b", "sigma", "r", "interval", "reward", "r_floor", "constants"},
    "interval": {"lo", "hi", "left", "right"},
    "reward": {"f", "breakpoints", "f_at_lo", "f_at_hi"},
    "grid": {"n_nodes", "trunc", "tail_tol", "spacing", "ref_point"},
    "solve": {"tol_contact"},
    "sim": {"dt", "n_paths", "seed", "max_time", "bridge_correction",
            "antithetic", "x0"},
    "outputs": {"dir", "formats"},
}
_TOP_KEYS = {"problem", "grid", "solve", "sim", "outputs"}


def _reject_unknown(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    _reject_unknown(raw, _TOP_KEYS, "config")
    if "problem" not in raw:
        raise ConfigError("config needs a 'problem' section")
    _reject_unknown(raw["problem"], _SCHEMA["problem"], "problem")
    _reject_unknown(raw["problem"].get("interval", {}), _SCHEMA["interval"],
                    "problem.interval")
    _reject_unknown(raw["problem"].get("reward", {}), _SCHEMA["reward"],
                    "problem.reward")
    for sec in ("grid", "solve", "sim", "outputs"):
        if sec in raw:
            _reject_unknown(raw[sec], _SCHEMA[sec], sec)
    prob_cfg = dict(raw["problem"])
    iv = dict(prob_cfg.get("interval", {}))
    for key in ("lo", "hi"):
        if isinstance(iv.get(key), str):
            iv[key] = float(iv[key])
    prob_cfg["interval"] = iv
    raw["problem"] = prob_cfg
    return raw


def canonical_json(obj):
    """Deterministic JSON: sorted keys, floats at 12 significant digits."""

    def walk(v):
        if isinstance(v, dict):
            return {k: walk(v[k]) for k in sorted(v)}
        if isinstance(v, (list, tuple)):
            return [walk(u) for u in v]
        if isinstance(v, float):
            if math.isinf(v):
                return "inf" if v > 0 else "-inf"
            if v == 0.0:
                return 0.0
            return float(f"{v:.12g}")
        return v

    return json.dumps(walk(obj), sort_keys=True, indent=1) + "\n"


def _build_all(config):
    prob = build_problem(config["problem"])
    gcfg = config.get("grid", {})
    trunc = gcfg.get("trunc", "auto")
    trunc_policy = None if trunc == "auto" else (trunc["lo"], trunc["hi"])
    grid = odecore.build_grid(
        prob,
        n_nodes=int(gcfg.get("n_nodes", 2001)),
        trunc_policy=trunc_policy,
        spacing=gcfg.get("spacing", "linear"),
        tail_tol=float(gcfg.get("tail_tol", odecore.DEFAULT_TAIL_TOL)),
        ref_point=gcfg.get("ref_point"),
    )
    fp = odecore.fundamental_pair(prob, grid)
    rew = solver.build_reward(prob, grid)
    return prob, grid, fp, rew


def _write_value_csv(path, grid, rew, fp, sol):
    x = grid.nodes
    f_raw = np.asarray(rew.raw_values(x), dtype=float)
    mask = np.zeros(len(x), dtype=int)
    for lo, hi in sol.stopping_intervals:
        mask |= (x >= lo - 1e-12) & (x <= hi + 1e-12)
    with open(path, "w", newline="") as fh:
        fh.write("x,f,f_bar,phi,psi,v,in_stopping_set\r\n")
        for i in range(len(x)):
            fh.write(f"{x[i]!r},{f_raw[i]!r},{rew.f_bar.values[i]!r},"
                     f"{fp.phi.values[i]!r},{fp.psi.values[i]!r},"
                     f"{sol.v.values[i]!r},{int(mask[i])}\r\n")


def cmd_solve(config_path, out_dir=None):
    try:
        config = load_config(config_path)
        prob, grid, fp, rew = _build_all(config)
    except (ConfigError, ValidationError, DiffstopError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    out = out_dir or config.get("outputs", {}).get("dir", ".")
    os.makedirs(out, exist_ok=True)
    tol = float(config.get("solve", {}).get("tol_contact",
                                            solver.DEFAULT_TOL_CONTACT))
    try:
        sol = solver.solve(prob, fp, rew, tol_contact=tol)
    except InfiniteValue as exc:
        fin = solver.check_finiteness(prob, fp, rew)
        print(f"infinite value function: {exc}", file=sys.stderr)
        with open(os.path.join(out, "solution.json"), "w") as fh:
            fh.write(canonical_json({"finite": False, "limA": fin["limA"],
                                     "limB": fin["limB"]}))
        return 3

    formats = config.get("outputs", {}).get("formats", ["csv", "json"])
    if "csv" in formats:
        _write_value_csv(os.path.join(out, "value.csv"), grid, rew, fp, sol)
    if "json" in formats:
        doc = sol.to_dict()
        doc["v"] = "value.csv"
        with open(os.path.join(out, "solution.json"), "w") as fh:
            fh.write(canonical_json(doc))
        report = solver.smooth_fit_report(prob, fp, rew, sol)
        with open(os.path.join(out, "smoothfit.json"), "w") as fh:
            fh.write(canonical_json({"boundaries": report}))
    return 0


def _parse_strategy(text, sol):
    if text == "tau_star":
        if sol is None:
            return None
        return mc.tau_star_strategy(_SolShim(sol))
    if text == "never":
        return mc.Never()
    if text == "immediate":
        return mc.Immediate()
    if text.startswith("two_sided:"):
        lo, hi = (float(t) for t in text.split(":", 1)[1].split(","))
        return mc.TwoSided(lo, hi)
    if text.startswith("pasted:"):
        with open(text.split(":", 1)[1], "r", encoding="utf-8") as fh:
            spec = json.load(fh)
        return _strategy_from_json(spec, sol)
    raise ConfigError(f"unknown strategy {text!r}")


class _SolShim:
    def __init__(self, doc):
        self.stopping_intervals = [tuple(iv) for iv in doc["stopping_intervals"]]


def _strategy_from_json(spec, sol):
    kind = spec["kind"]
    if kind == "never":
        return mc.Never()
    if kind == "immediate":
        return mc.Immediate()
    if kind == "hit_level":
        return mc.HitLevel(float(spec["y"]))
    if kind == "two_sided":
        return mc.TwoSided(float(spec["lo"]), float(spec["hi"]))
    if kind == "stop_at_set":
        return mc.StopAtSet([tuple(iv) for iv in spec["intervals"]])
    if kind == "tau_star":
        if sol is None:
            raise FileNotFoundError("tau_star strategy needs solve artifacts")
        return mc.tau_star_strategy(_SolShim(sol))
    if kind == "pasted":
        base = _strategy_from_json(spec["base"], sol)
        table = {float(k): _strategy_from_json(v, sol)
                 for k, v in spec["targets"].items()}
        return mc.paste_strategies(base, table)
    raise ConfigError(f"unknown strategy kind {kind!r}")


def cmd_simulate(config_path, strategy="tau_star", n_paths=None, dt=None,
                 seed=None, out_dir=None):
    try:
        config = load_config(config_path)
        prob, grid, fp, rew = _build_all(config)
    except (ConfigError, ValidationError, DiffstopError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    out = out_dir or config.get("outputs", {}).get("dir", ".")
    scfg_raw = dict(config.get("sim", {}))
    if n_paths is not None:
        scfg_raw["n_paths"] = n_paths
    if dt is not None:
        scfg_raw["dt"] = dt
    if seed is not None:
        scfg_raw["seed"] = seed
    x0 = scfg_raw.pop("x0", None)
    if x0 is None:
        x0 = 0.5 * (grid.left_trunc + grid.right_trunc)
    cfg = mc.SimConfig(**{k: scfg_raw[k] for k in scfg_raw})

    sol_doc = None
    sol_path = os.path.join(out, "solution.json")
    if strategy == "tau_star" or "tau_star" in strategy:
        if not os.path.exists(sol_path):
            print(f"missing solve artifacts at {sol_path}; run solve first",
                  file=sys.stderr)
            return 4
        with open(sol_path, "r", encoding="utf-8") as fh:
            sol_doc = json.load(fh)

    try:
        strat = _parse_strategy(strategy, sol_doc)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 4

    paths = mc.simulate_paths(prob, float(x0), cfg, grid=grid)
    est = mc.evaluate_strategy(prob, paths, strat, rew)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "estimate.json"), "w") as fh:
        fh.write(canonical_json(est.to_dict()))
    half = 1.96 * est.std_error
    print(f"{est.mean:.6g} +- {half:.3g} (95% CI), n={est.n_paths}, dt={est.dt}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="diffstop",
        description="optimal stopping of one-dimensional diffusions")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="compute the value function")
    p_solve.add_argument("config")
    p_solve.add_argument("--out", default=None)

    p_sim = sub.add_parser("simulate", help="evaluate a stopping strategy")
    p_sim.add_argument("config")
    p_sim.add_argument("--strategy", default="tau_star",
                       help="tau_star | never | immediate | two_sided:lo,hi "
                            "| pasted:file")
    p_sim.add_argument("--paths", type=int, default=None)
    p_sim.add_argument("--dt", type=float, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args.config, out_dir=args.out)
    return cmd_simulate(args.config, strategy=args.strategy,
                        n_paths=args.paths, dt=args.dt, seed=args.seed,
                        out_dir=args.out)


if __name__ == "__main__":
    sys.exit(main())
