"""Command-line front end.

Each subcommand resolves its configuration (built-in defaults, then an
optional JSON config file, then explicit flags), writes it to
``config.resolved`` in the output directory and writes one long-format
data file. Every data file carries the config hash and seed in its
first line, and identical configurations give identical bytes.

Exit status: 0 on success, 2 for an invalid configuration, 1 when the
run itself fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import absorption_moment_oracle, asg_step_moments, cdi_table
from .engine import ModelParams, simulate_coupled
from .experiments import clt_experiment, sup_deviation_moments
from .stats import McReport, config_hash, stream_for

OUT_ENV = "ASGLIMITS_OUT"
DEFAULT_OUT = "asglimits-out"
SCHEMA_VERSION = 1

COMMON = {"theta": 0.0, "sigma": 0.0, "seed": 20240101, "format": "csv"}
DEFAULTS = {
    "simulate": {"n0": 1000, "replicates": 10, "t_grid": [0.001, 0.01, 0.1, 1.0]},
    "moments": {"nmax": 60, "kmax": 3, "oracle_max": 60},
    "cdi": {"t_grid": [0.1, 0.01, 0.001, 0.0001], "nmax": None},
    "supdev": {"n0": 10000, "replicates": 1000, "t_grid": [0.2, 0.1, 0.05, 0.02], "k": 2},
    "clt": {"n0": None, "nmax": None, "replicates": 1000, "path_replicates": 200,
            "eps_list": [0.0001, 0.000025], "t_grid": [0.25, 0.5, 1.0], "sensitivity": False},
    "coupling-check": {"n0": 1000, "replicates": 1000},
}
HELP = {
    "simulate": "coupled trajectory samples: the three counts at each grid time",
    "moments": "descent-time moment table and dense linear-solve cross-check",
    "cdi": "nu_t table with bracketing means and t*nu_t/2",
    "supdev": "Monte Carlo moments of sup (sN_s/2 - 1)^k",
    "clt": "fluctuation campaign for X_eps",
    "coupling-check": "audit of the pathwise order of the coupled counts",
}
# argparse destinations that map one-to-one onto config keys
FLAG_KEYS = ("theta", "sigma", "n0", "nmax", "replicates", "seed", "t_grid", "eps_list", "format",
             "kmax", "k", "path_replicates", "sensitivity")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("campaign")
    g.add_argument("--theta", type=float, help=f"mutation rate (default {COMMON['theta']})")
    g.add_argument("--sigma", type=float, help=f"selection rate (default {COMMON['sigma']})")
    g.add_argument("--n0", type=int, help="initial / entrance number of lineages")
    g.add_argument("--nmax", type=int, help="truncation level of the analytic computations")
    g.add_argument("--replicates", type=int, help="Monte Carlo replicates")
    g.add_argument("--seed", type=int, help=f"master seed (default {COMMON['seed']})")
    g.add_argument("--t-grid", dest="t_grid", type=_floats, help="comma-separated times")
    g.add_argument("--eps-list", dest="eps_list", type=_floats,
                   help="comma-separated epsilons (clt)")
    g.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    g.add_argument("--format", choices=("csv", "json"), help="data file format (default csv)")
    g.add_argument("--config", help="JSON file of key/value settings; flags override it")

    parser = argparse.ArgumentParser(
        prog="asglimits",
        description="Lineage-counting processes of the ancestral selection graph: "
                    "simulation, exact moments and limit-theorem campaigns.",
        epilog="Exit status: 0 success, 1 runtime failure, 2 invalid configuration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, defaults in DEFAULTS.items():
        shown = ", ".join(f"{k}={v}" for k, v in {**COMMON, **defaults}.items())
        p = sub.add_parser(name, parents=[common], help=HELP[name],
                           description=f"{HELP[name]}. Defaults: {shown}.")
        if name in ("moments",):
            p.add_argument("--kmax", type=int, help="highest moment order (default 3)")
        if name == "supdev":
            p.add_argument("--k", type=int, help="moment order (default 2)")
        if name == "clt":
            p.add_argument("--path-replicates", dest="path_replicates", type=int,
                           help="replicates carrying the path functionals (default 200)")
            p.add_argument("--sensitivity", action="store_true", default=None,
                           help="rerun with n0 and the entrance cut-off doubled")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = {"subcommand": args.command, **COMMON, **DEFAULTS[args.command]}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for k, v in loaded.items():
            key = k.replace("-", "_")
            if key == "subcommand":
                continue
            if key not in cfg:
                raise ConfigError(f"unknown config key {k!r} for {args.command}")
            cfg[key] = v
    for key in FLAG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            if key not in cfg:
                raise ConfigError(f"--{key.replace('_', '-')} does not apply to {args.command}")
            cfg[key] = v
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    try:
        ModelParams(float(cfg["theta"]), float(cfg["sigma"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    for key, lo in (("n0", 1), ("replicates", 1), ("kmax", 1), ("k", 1), ("path_replicates", 2),
                    ("oracle_max", 2)):
        v = cfg.get(key)
        if v is not None and (not isinstance(v, int) or v < lo):
            raise ConfigError(f"{key} must be an integer >= {lo}")
    if cfg.get("nmax") is not None and (not isinstance(cfg["nmax"], int) or cfg["nmax"] < 2):
        raise ConfigError("nmax must be an integer >= 2")
    for key in ("t_grid", "eps_list"):
        v = cfg.get(key)
        if v is not None and (not isinstance(v, list) or not v
                              or not all(isinstance(x, (int, float)) and x > 0 for x in v)):
            raise ConfigError(f"{key} must be a non-empty list of positive numbers")
    cmd = cfg["subcommand"]
    if cmd == "moments" and cfg["kmax"] > 8:
        raise ConfigError("kmax must be <= 8")
    if cmd == "moments" and cfg["oracle_max"] > 200:
        raise ConfigError("oracle_max must be <= 200")
    if cmd == "supdev" and cfg["k"] > 6:
        raise ConfigError("k must be <= 6")
    if cmd == "clt" and cfg["replicates"] < 50:
        raise ConfigError("clt needs at least 50 replicates")


def _params(cfg) -> ModelParams:
    return ModelParams(float(cfg["theta"]), float(cfg["sigma"]))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, fmt: str, columns, rows, chash: str, seed: int) -> Path:
    """Write a long-format table as CSV (with a ``#`` provenance line) or JSON."""
    if fmt == "json":
        doc = {"schema_version": SCHEMA_VERSION, "config_hash": chash, "seed": seed,
               "columns": list(columns),
               "rows": [dict(zip(columns, (_jsonable(v) for v in r))) for r in rows]}
        text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    else:
        lines = [f"# config_hash={chash} seed={seed} schema={SCHEMA_VERSION}", ",".join(columns)]
        lines += [",".join(_fmt(v) for v in r) for r in rows]
        text = "\n".join(lines) + "\n"
    path = path.with_suffix("." + fmt)
    path.write_text(text)
    return path


def _jsonable(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


def write_report(path: Path, fmt: str, report: McReport) -> Path:
    path = path.with_suffix("." + fmt)
    path.write_text(report.to_json() if fmt == "json" else report.to_csv())
    return path


def run_simulate(cfg, out: Path, chash: str) -> list[Path]:
    params = _params(cfg)
    grid = sorted(float(t) for t in cfg["t_grid"])
    rows = []
    for idx in range(cfg["replicates"]):
        traj = simulate_coupled(params, cfg["n0"], stream_for(cfg["seed"], idx),
                                stop_level=None, horizon=grid[-1])
        for t, c in zip(grid, traj.counts_at(grid)):
            rows.append((idx, t, int(c[0]), int(c[1]), int(c[2])))
    cols = ("replicate", "t", "kingman", "mutation", "asg")
    return [write_table(out / "simulate", cfg["format"], cols, rows, chash, cfg["seed"])]


def run_moments(cfg, out: Path, chash: str) -> list[Path]:
    params = _params(cfg)
    kmax, nmax = cfg["kmax"], cfg["nmax"]
    table = asg_step_moments(params, nmax, kmax)
    rows = []
    for r, n in enumerate(table.levels):
        for k in range(1, kmax + 1):
            rows.append((int(n), k, float(table.values[r, k]), table.method,
                         float(table.error(n, k))))
    cols = ("n", "k", "value", "method", "truncation_error")
    files = [write_table(out / "moments", cfg["format"], cols, rows, chash, cfg["seed"])]

    # cross-check on a chain truncated at ``top``, where both routes are exact
    top = min(cfg["oracle_max"], nmax)
    rec = asg_step_moments(params, top, kmax, chain_top=top)
    check = []
    for n in range(2, top + 1):
        orc = absorption_moment_oracle(n, top, params, kmax)
        for k in range(1, kmax + 1):
            a, b = float(rec.value(n, k)), float(orc.value(n, k))
            check.append((n, k, a, b, abs(a - b) / abs(b)))
    cols = ("n", "k", "recursion", "oracle", "rel_dev")
    files.append(write_table(out / "moments_oracle", cfg["format"], cols, check, chash,
                             cfg["seed"]))
    return files


def run_cdi(cfg, out: Path, chash: str) -> list[Path]:
    rows = []
    for r in cdi_table(_params(cfg), cfg["t_grid"], cfg["nmax"]):
        rows.append((r.t, r.nu, r.mean_at_nu, r.mean_below_nu, r.scaled, r.bound, r.sandwich_ok))
    cols = ("t", "nu", "mean_T_nu", "mean_T_nu_minus_1", "t_nu_over_2", "bound", "sandwich")
    return [write_table(out / "cdi", cfg["format"], cols, rows, chash, cfg["seed"])]


def run_supdev(cfg, out: Path, chash: str) -> list[Path]:
    t_list = sorted((float(t) for t in cfg["t_grid"]), reverse=True)
    report = sup_deviation_moments(_params(cfg), t_list, cfg["k"], cfg["n0"], cfg["replicates"],
                                   cfg["seed"])
    return [write_report(out / "supdev", cfg["format"], report)]


def run_clt(cfg, out: Path, chash: str) -> list[Path]:
    eps = sorted((float(e) for e in cfg["eps_list"]), reverse=True)
    grid = sorted(float(t) for t in cfg["t_grid"])
    report = clt_experiment(_params(cfg), eps, grid, cfg["replicates"], cfg["seed"],
                            path_replicates=cfg["path_replicates"], n0=cfg["n0"],
                            n_max=cfg["nmax"], sensitivity=bool(cfg["sensitivity"]))
    return [write_report(out / "clt", cfg["format"], report)]


def run_coupling_check(cfg, out: Path, chash: str) -> list[Path]:
    params = _params(cfg)
    violations = events = identical = 0
    for idx in range(cfg["replicates"]):
        traj = simulate_coupled(params, cfg["n0"], stream_for(cfg["seed"], idx), stop_level=1)
        violations += traj.order_violations()
        events += len(traj)
        identical += int(np.array_equal(traj.counts[:, 0], traj.counts[:, 1])
                         and np.array_equal(traj.counts[:, 0], traj.counts[:, 2]))
    cols = ("trajectories", "n0", "events", "violations", "identical_paths")
    rows = [(cfg["replicates"], cfg["n0"], events, violations, identical)]
    return [write_table(out / "coupling_check", cfg["format"], cols, rows, chash, cfg["seed"])]


RUNNERS = {
    "simulate": run_simulate,
    "moments": run_moments,
    "cdi": run_cdi,
    "supdev": run_supdev,
    "clt": run_clt,
    "coupling-check": run_coupling_check,
}


def run(command: str, cfg: dict, out: Path) -> list[Path]:
    """Run one subcommand with a resolved configuration; returns the files written."""
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    resolved = {"config_hash": chash, "config": cfg, "schema_version": SCHEMA_VERSION}
    (out / "config.resolved").write_text(json.dumps(resolved, sort_keys=True, indent=1) + "\n")
    return RUNNERS[command](cfg, out, chash)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"asglimits: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    try:
        files = run(args.command, cfg, out)
    except (ValueError, OSError) as exc:
        print(f"asglimits {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure of the run itself
        print(f"asglimits {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
