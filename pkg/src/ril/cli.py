"""Command-line entry point: ``ril <subcommand> [--config FILE] [--set section.key=value ...]``.

Configs are INI-style text (``key = value`` under ``[walk]``, ``[run]``,
``[constants]`` and ``[output]``). Precedence: built-in defaults, then the
config file, then ``--set`` overrides and the shortcut flags.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import platform
import secrets
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from . import mc_experiments as mc
from . import oracles
from . import theory_constants as tc
from .gagliardo_nirenberg import ground_state
from .lattice_walk import (
    RNG_DESCRIPTION, BudgetError, covariance, make_lazy, make_simple_walk, simulate,
)
from .range_stats import intersect_ranges, intersection_local_time, range_of

SUBCOMMANDS = ("constants", "moments", "tails", "lil", "blocks", "oracle-suite", "simulate")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3, 4

# (section, key) -> (default, description)
DEFAULTS: dict[tuple[str, str], tuple[str, str]] = {
    ("walk", "name"): ("simple", "simple, lazy, or a path to a step-distribution file"),
    ("walk", "d"): ("2", "lattice dimension (2 or 3)"),
    ("walk", "eta"): ("0.5", "laziness for name = lazy"),
    ("run", "p"): ("2", "number of independent walks"),
    ("run", "n"): ("1024", "comma-separated walk lengths"),
    ("run", "bn"): ("loglog", "loglog, log^{2/3-eps}, or comma-separated explicit values"),
    ("run", "moments"): ("1", "comma-separated moment orders m"),
    ("run", "lambdas"): ("0.5, 1, 2", "comma-separated tail levels lambda"),
    ("run", "eps"): ("0.5", "cross-block threshold factor"),
    ("run", "replicates"): ("1000", "Monte Carlo replicates R"),
    ("run", "seed"): ("", "base seed; empty draws one from entropy"),
    ("run", "checkpoints"): ("geometric", "LIL checkpoint grid: geometric or kk"),
    ("run", "checkpoint_ratio"): ("2", "ratio of the geometric checkpoint grid"),
    ("run", "chunk"): ("0", "replicates per chunk, 0 = automatic"),
    ("run", "check_invariants"): ("true", "assert J <= I and 1 <= J <= n+1 per replicate"),
    ("constants", "K"): ("10000", "return-probability horizon for the escape sum"),
    ("constants", "quad_points"): ("48", "Gauss-Legendre points per axis for the integral"),
    ("constants", "lambdas"): ("0.25, 0.5, 1, 2, 4", "lambda grid for md_rate"),
    ("output", "dir"): ("ril-out", "output directory"),
    ("output", "record_walltime"): ("false", "fill the walltime_s column (breaks byte equality)"),
}


class ConfigError(ValueError):
    pass


@dataclass
class CliInvocation:
    subcommand: str
    config_path: str | None
    overrides: list[str]
    out_dir: Path
    seed: int
    seed_source: str
    values: dict[tuple[str, str], str] = field(default_factory=dict)

    def get(self, section: str, key: str) -> str:
        return self.values[(section, key)]


# ---------------------------------------------------------------------------
# config resolution

def _parse_list(raw: str, kind, key: str) -> tuple:
    try:
        return tuple(kind(x) for x in raw.replace(";", ",").split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from exc


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"invalid boolean for {key}: {raw!r}")


def _scalar(inv: CliInvocation, section: str, key: str, kind):
    raw = inv.get(section, key)
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"invalid value for {section}.{key}: {raw!r}") from exc


def resolve_values(config_path: str | None, overrides: Sequence[str]) -> dict[tuple[str, str], str]:
    values = {k: v[0] for k, v in DEFAULTS.items()}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config {config_path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                if (section, key) not in DEFAULTS:
                    raise ConfigError(f"unknown config key {section}.{key}")
                values[(section, key)] = raw.strip()
    for item in overrides:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot or (section, key) not in DEFAULTS:
            raise ConfigError(f"unknown config key {name.strip() or item!r}")
        values[(section, key)] = raw.strip()
    return values


def experiment_config(inv: CliInvocation, threads: int) -> mc.ExperimentConfig:
    bn_raw = inv.get("run", "bn")
    bn = bn_raw if bn_raw in mc.BN_PRESETS else _parse_list(bn_raw, float, "run.bn")
    try:
        return mc.ExperimentConfig(
            walk=inv.get("walk", "name"),
            d=_scalar(inv, "walk", "d", int),
            eta=_scalar(inv, "walk", "eta", float),
            p=_scalar(inv, "run", "p", int),
            n_grid=_parse_list(inv.get("run", "n"), int, "run.n"),
            bn_rule=bn,
            moments=_parse_list(inv.get("run", "moments"), int, "run.moments"),
            lambdas=_parse_list(inv.get("run", "lambdas"), float, "run.lambdas"),
            eps=_scalar(inv, "run", "eps", float),
            replicates=_scalar(inv, "run", "replicates", int),
            seed=inv.seed,
            checkpoints=inv.get("run", "checkpoints"),
            checkpoint_ratio=_scalar(inv, "run", "checkpoint_ratio", float),
            threads=threads,
            chunk=_scalar(inv, "run", "chunk", int),
            check_invariants=_parse_bool(inv.get("run", "check_invariants"),
                                         "run.check_invariants"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid run configuration: {exc}") from exc


def _dist(inv: CliInvocation):
    cfg = mc.ExperimentConfig(walk=inv.get("walk", "name"), d=_scalar(inv, "walk", "d", int),
                              eta=_scalar(inv, "walk", "eta", float))
    try:
        return cfg.dist()
    except (OSError, ValueError) as exc:
        raise ConfigError(f"invalid walk.name / walk.eta: {exc}") from exc


# ---------------------------------------------------------------------------
# manifest

def manifest(inv: CliInvocation, argv: Sequence[str], threads: int) -> dict:
    return {
        "schema": mc.SCHEMA,
        "subcommand": inv.subcommand,
        "argv": list(argv),
        "config_file": os.path.abspath(inv.config_path) if inv.config_path else None,
        "resolved": {f"{s}.{k}": v for (s, k), v in sorted(inv.values.items())},
        "seed": inv.seed,
        "seed_source": inv.seed_source,
        "threads": threads,
        "rng": RNG_DESCRIPTION,
        "versions": {"ril": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "paths": {"out_dir": str(inv.out_dir.resolve()),
                  "oracle_cache": str(oracles.cache_dir().resolve())},
        "status": "running",
    }


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------------------
# gnuplot

GNUPLOT_TEMPLATE = """# plot {stem}.csv; run with: gnuplot {stem}.gp
set datafile separator ","
set terminal pngcairo size 900,600
set output "{stem}.png"
set key left top
set xlabel "{xlabel}"
set ylabel "estimate"
{logscale}plot {plots}
"""


def gnuplot_script(report: mc.ExperimentReport, stem: str) -> str:
    kinds = list(dict.fromkeys(c.experiment for c in report.cells))
    plots = []
    # columns: 1 experiment, 4 n, 5 m_or_lambda, 7 estimate, 8 stderr
    xcol, xlabel = (5, "lambda") if report.experiment == "tails" else (4, "n")
    for kind in kinds:
        plots.append(f'"{stem}.csv" using (strcol(1) eq "{kind}" ? ${xcol} : 1/0):7:8 '
                     f'with yerrorlines title "{kind}"')
    logscale = "set logscale x\n" if xcol == 4 else ""
    return GNUPLOT_TEMPLATE.format(stem=stem, xlabel=xlabel, logscale=logscale,
                                   plots=", \\\n     ".join(plots))


# ---------------------------------------------------------------------------
# subcommands

def run_constants(inv: CliInvocation, threads: int) -> dict:
    dist = _dist(inv)
    d, p = dist.dim, _scalar(inv, "run", "p", int)
    try:
        tc.check_admissible(d, p)
    except ValueError as exc:
        raise ConfigError(f"run.p / walk.d: {exc}") from exc
    if d == 3 and p != 2:
        raise ConfigError("run.p: d = 3 closed forms need p = 2")
    K = _scalar(inv, "constants", "K", int)
    quad = _scalar(inv, "constants", "quad_points", int)
    lams = _parse_list(inv.get("constants", "lambdas"), float, "constants.lambdas")
    gn_res = tc.gn_constant(d, p)
    shoot = ground_state(d, p)
    out: dict = {"d": d, "p": p, "walk": dist.describe()}
    _, det = covariance(dist)
    out["detGamma"] = det
    gamma, meta = None, {}
    if d == 3:
        integral = tc.gamma_escape_integral(dist, quad)
        summed = tc.gamma_escape_sum(dist, K)
        gamma = integral
        meta["gamma_escape"] = {"integral": integral, "quad_points": quad,
                                "sum": summed.estimate, **summed.metadata()}
    out["gamma_escape"] = gamma
    out["kappa"] = gn_res.kappa
    meta["kappa"] = {**gn_res.metadata(), "shooting": shoot.ratio}
    params = tc.RateParams(d, p, det, gn_res.kappa, gamma)
    out["md_rate"] = {repr(x): tc.md_rate(params, x) for x in lams}
    out["lil_constant"] = tc.lil_constant(params)
    out["method"] = meta
    return out


def run_experiment(inv: CliInvocation, threads: int, emit_gnuplot: bool) -> dict:
    cfg = experiment_config(inv, threads)
    try:
        dist = cfg.dist()
    except (OSError, ValueError) as exc:
        raise ConfigError(f"invalid walk.name: {exc}") from exc
    name = inv.subcommand
    if name == "moments":
        report = mc.estimate_moments(cfg)
    elif name == "tails":
        params = tc.rate_params_for(dist, cfg.p)
        report = mc.estimate_tail(cfg, rate=lambda lam: tc.md_rate(params, lam))
    elif name == "lil":
        report = mc.lil_track(cfg, constant=tc.lil_constant(tc.rate_params_for(dist, cfg.p)))
    else:
        report = mc.block_partition_study(cfg)
    with_time = _parse_bool(inv.get("output", "record_walltime"), "output.record_walltime")
    paths = report.write(inv.out_dir, name, with_time)
    if emit_gnuplot:
        gp = inv.out_dir / f"{name}.gp"
        gp.write_text(gnuplot_script(report, name))
        paths["gnuplot"] = gp
    return {k: str(v) for k, v in paths.items()}


def oracle_checks(fast: bool, seed: int) -> list[tuple[str, bool, str]]:
    """Every oracle check as (name, passed, detail)."""
    rows: list[tuple[str, bool, str]] = []
    s2, s3 = make_simple_walk(2), make_simple_walk(3)
    walks = {"simple-2": s2, "lazy-2": make_lazy(s2, 0.5), "simple-3": s3,
             "lazy-3": make_lazy(s3, 0.5)}
    n_enum = 4 if fast else 6
    for name in ("simple-2", "lazy-2"):
        dist = walks[name]
        for p in (2, 3):
            worst_j = max(abs(oracles.exact_EJ(dist, p, n) - oracles.exact_J_moment_enum(dist, p, n))
                          for n in range(n_enum + 1))
            rows.append((f"E J exact vs enumeration {name} p={p} n<={n_enum}",
                         worst_j <= 1e-10, f"max diff {worst_j:.2e}"))
            worst_i = max(abs(oracles.exact_EI(dist, p, n) - oracles.exact_I_mean_enum(dist, p, n))
                          for n in range(n_enum + 1))
            rows.append((f"E I exact vs enumeration {name} p={p} n<={n_enum}",
                         worst_i <= 1e-10, f"max diff {worst_i:.2e}"))
    n_l2 = 12 if fast else 30
    for name, dist in walks.items():
        rep = oracles.check_lemma2(dist, n_l2, 5)
        rows.append((f"Green-ratio hitting bound {name} n<={n_l2} |x|<=5", rep.ok,
                     f"max violation {rep.max_violation:.2e}"))
    n_sub = 5 if fast else 7
    rep = oracles.check_all_subadditivity(s2, n_sub)
    rows.append((f"range subadditivity simple-2 n={n_sub}", rep.ok,
                 f"{rep.checked} pairs, max violation {rep.max_violation:.2e}"))
    for m in (1, 2):
        r = oracles.check_moment_inequality_T6(s2, 2, [2, 2], m)
        rows.append((f"block moment inequality exact m={m}", r.ok, f"margin {r.margin:.4g}"))
    if not fast:
        for m in (1, 2):
            r = oracles.check_moment_inequality_T6(s2, 2, [20, 20], m, "mc", 10 ** 4, seed)
            rows.append((f"block moment inequality mc m={m} R=1e4", r.ok,
                         f"lhs {r.lhs:.4g} rhs {r.rhs:.4g} sigma {r.sigma:.2g}"))
        cal = oracles.lemma1_calibration(s3, 2, [4, 16, 64], replicates=2000, seed=seed)
        rows.append(("moment bound calibration d=3 C<=100", cal.consistent(),
                     f"required C {cal.required_C:.3g}"))
    return rows


def run_oracle_suite(inv: CliInvocation, fast: bool) -> tuple[dict, bool]:
    rows = oracle_checks(fast, inv.seed)
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    table = [{"check": n, "pass": ok, "detail": det} for n, ok, det in rows]
    path = inv.out_dir / "oracle_suite.json"
    _write_json(path, {"schema": mc.SCHEMA, "fast": fast, "checks": table})
    return {"oracle_suite": str(path)}, all(ok for _, ok, _ in rows)


def run_simulate(inv: CliInvocation) -> dict:
    dist = _dist(inv)
    p = _scalar(inv, "run", "p", int)
    ns = _parse_list(inv.get("run", "n"), int, "run.n")
    if len(ns) != 1 or ns[0] < 0:
        raise ConfigError("run.n: simulate takes a single length n >= 0")
    n = ns[0]
    paths = [simulate(dist, n, inv.seed, j) for j in range(p)]
    out = {"n": n, "p": p, "seed": inv.seed, "walk": dist.describe(),
           "range_sizes": [range_of(w).count for w in paths],
           "J": intersect_ranges(paths, n) if p >= 2 else None,
           "I": intersection_local_time(paths, n) if p >= 2 else None,
           "endpoints": [w.positions[-1].tolist() for w in paths]}
    pos_path = inv.out_dir / "positions.csv"
    with pos_path.open("w") as fh:
        fh.write("walk,t," + ",".join(f"x{i}" for i in range(dist.dim)) + "\n")
        for j, w in enumerate(paths):
            for t, row in enumerate(w.positions):
                fh.write(f"{j},{t}," + ",".join(str(int(v)) for v in row) + "\n")
    out["positions"] = str(pos_path)
    return out


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ril", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI-style config file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        dest="overrides", help="override one config key (repeatable)")
        sp.add_argument("--out", help="output directory (output.dir)")
        sp.add_argument("--seed", type=int, help="base seed; omitted draws one from entropy")
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--d", type=int, help="shortcut for walk.d")
        sp.add_argument("--p", type=int, help="shortcut for run.p")
        sp.add_argument("--walk", help="shortcut for walk.name")
        sp.add_argument("--eta", type=float, help="shortcut for walk.eta")
        sp.add_argument("--n", help="shortcut for run.n")
        sp.add_argument("--replicates", type=int, help="shortcut for run.replicates")
        sp.add_argument("--emit-gnuplot", action="store_true",
                        help="also write a gnuplot script next to the CSV")
        if name == "oracle-suite":
            sp.add_argument("--fast", action="store_true", help="smaller exact checks, no MC")
    return ap


def _shortcut_overrides(args: argparse.Namespace) -> list[str]:
    pairs = [("d", "walk.d"), ("p", "run.p"), ("walk", "walk.name"), ("eta", "walk.eta"),
             ("n", "run.n"), ("replicates", "run.replicates"), ("out", "output.dir")]
    return [f"{key}={getattr(args, attr)}" for attr, key in pairs
            if getattr(args, attr) is not None]


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    try:
        values = resolve_values(args.config, args.overrides + _shortcut_overrides(args))
        if args.seed is not None:
            seed, source = args.seed, "cli"
        elif values[("run", "seed")]:
            try:
                seed, source = int(values[("run", "seed")]), "config"
            except ValueError as exc:
                raise ConfigError(f"invalid value for run.seed: {values[('run', 'seed')]!r}") from exc
        else:
            seed, source = secrets.randbits(63), "entropy"
            print(f"seed: {seed}", file=sys.stderr)
        values[("run", "seed")] = str(seed)
        if args.threads < 1:
            raise ConfigError("threads must be >= 1")
        inv = CliInvocation(args.subcommand, args.config, args.overrides,
                            Path(values[("output", "dir")]), seed, source, values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    inv.out_dir.mkdir(parents=True, exist_ok=True)
    man = manifest(inv, argv, args.threads)
    man_path = inv.out_dir / "manifest.json"
    _write_json(man_path, man)

    code = EXIT_OK
    try:
        if inv.subcommand == "constants":
            result = run_constants(inv, args.threads)
            path = inv.out_dir / "constants.json"
            _write_json(path, result)
            print(json.dumps(result, indent=1, default=str))
            outputs = {"constants": str(path)}
        elif inv.subcommand == "oracle-suite":
            outputs, ok = run_oracle_suite(inv, args.fast)
            code = EXIT_OK if ok else EXIT_FAIL
        elif inv.subcommand == "simulate":
            result = run_simulate(inv)
            path = inv.out_dir / "simulate.json"
            _write_json(path, result)
            print(json.dumps({k: v for k, v in result.items() if k != "walk"}))
            outputs = {"simulate": str(path), "positions": result["positions"]}
        else:
            outputs = run_experiment(inv, args.threads, args.emit_gnuplot)
            for kind, path in outputs.items():
                print(f"{kind}: {path}")
        man["outputs"] = outputs
        man["status"] = "ok" if code == EXIT_OK else "failed"
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        man["status"], man["error"], code = "config error", str(exc), EXIT_CONFIG
    except BudgetError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        man["status"], man["error"], code = "budget exceeded", str(exc), EXIT_BUDGET
    except Exception as exc:  # noqa: BLE001 - reported and recorded in the manifest
        traceback.print_exc()
        man["status"], man["error"], code = "failed", repr(exc), EXIT_FAIL
    _write_json(man_path, man)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
