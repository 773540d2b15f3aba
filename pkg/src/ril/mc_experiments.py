"""Replicated Monte Carlo studies: moment scaling, tail decay, LIL tracking, block sums.

Replicate r of walk j always draws from walk_rng(seed, j, r), so a cell depends
only on (config, seed) and never on chunking or thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .lattice_walk import (
    RNG_DESCRIPTION, StepDistribution, load_step_distribution, sample_increments,
    walk_from_name, walk_rng,
)
from .range_stats import (
    BatchPacking, BlockPartition, batch_cross_block, batch_I, batch_J_along,
)

SCHEMA = 1
CSV_COLUMNS = ("experiment", "d", "p", "n", "m_or_lambda", "b_n", "estimate", "stderr",
               "replicates", "seed", "walltime_s")
BN_PRESETS = ("loglog", "log^{2/3-eps}")
BN_EPS = 0.1
OUTSIDE = "outside proven regime"
# keep one chunk of positions for all walks under roughly this many lattice points
CHUNK_POINTS = 4_000_000
ESTIMABLE_COUNT = 10


class InvariantViolation(AssertionError):
    pass


@dataclass
class ExperimentConfig:
    walk: str = "simple"          # simple | lazy | path to a step file
    d: int = 2
    eta: float = 0.0              # laziness for walk = lazy
    p: int = 2
    n_grid: tuple[int, ...] = (1024,)
    bn_rule: str | tuple[float, ...] = "loglog"
    moments: tuple[int, ...] = (1,)
    lambdas: tuple[float, ...] = (0.5, 1.0, 2.0)
    eps: float = 0.5              # cross-block threshold factor
    replicates: int = 1000
    seed: int = 0
    checkpoints: str = "geometric"  # geometric | kk
    checkpoint_ratio: float = 2.0
    threads: int = 1
    chunk: int = 0                # replicates per chunk, 0 = automatic
    check_invariants: bool = True

    def __post_init__(self) -> None:
        self.n_grid = tuple(int(n) for n in self.n_grid)
        self.moments = tuple(int(m) for m in self.moments)
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if not isinstance(self.bn_rule, str):
            self.bn_rule = tuple(float(b) for b in self.bn_rule)
        self.validate()

    def validate(self) -> None:
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if self.d == 3 and self.p != 2:
            raise ValueError("d = 3 experiments need p = 2")
        if not self.n_grid or min(self.n_grid) < 1:
            raise ValueError("n_grid must hold positive integers")
        if self.replicates < 2:
            raise ValueError("replicates must be >= 2")
        if any(m < 0 for m in self.moments):
            raise ValueError("moments must be >= 0")
        if isinstance(self.bn_rule, str):
            if self.bn_rule not in BN_PRESETS:
                raise ValueError(f"bn_rule must be one of {BN_PRESETS} or a list of numbers")
        elif len(self.bn_rule) not in (1, len(self.n_grid)):
            raise ValueError("explicit bn_rule needs one value or one per n")
        if self.checkpoints not in ("geometric", "kk"):
            raise ValueError("checkpoints must be 'geometric' or 'kk'")
        if self.checkpoint_ratio <= 1:
            raise ValueError("checkpoint_ratio must exceed 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def dist(self) -> StepDistribution:
        if self.walk in ("simple", "lazy"):
            return walk_from_name(self.walk, self.d, self.eta)
        dist = load_step_distribution(self.walk)
        if dist.dim != self.d:
            raise ValueError(f"step file has dimension {dist.dim}, config says {self.d}")
        return dist

    @property
    def regime(self) -> str:
        return "proven" if isinstance(self.bn_rule, str) else OUTSIDE

    def b_n(self, n: int) -> float:
        if isinstance(self.bn_rule, tuple):
            if len(self.bn_rule) == 1:
                return self.bn_rule[0]
            return self.bn_rule[self.n_grid.index(n)]
        if n < 3:
            raise ValueError("preset b_n rules need n >= 3")
        if self.bn_rule == "loglog":
            return math.log(math.log(n))
        return math.log(n) ** (2.0 / 3.0 - BN_EPS)

    def as_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out


@dataclass
class Cell:
    experiment: str
    d: int
    p: int
    n: int
    m_or_lambda: float | int | None
    b_n: float | None
    estimate: float
    stderr: float
    replicates: int
    seed: int
    walltime_s: float | None = None
    flag: str = ""

    def row(self, with_time: bool = False) -> list[str]:
        vals = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            if name == "walltime_s" and not with_time:
                v = None
            vals.append(_fmt(v))
        return vals


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExperimentReport:
    experiment: str
    config: ExperimentConfig
    cells: list[Cell] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    walltime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def select(self, experiment: str, **match) -> list[Cell]:
        return [c for c in self.cells if c.experiment == experiment
                and all(getattr(c, k) == v for k, v in match.items())]

    def to_csv(self, with_time: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.cells:
            w.writerow(c.row(with_time))
        return buf.getvalue()

    def to_json(self, with_time: bool = False) -> str:
        cells = []
        for c in self.cells:
            rec = {k: _jsonable(getattr(c, k)) for k in CSV_COLUMNS}
            if not with_time:
                rec["walltime_s"] = None
            rec["flag"] = c.flag
            cells.append(rec)
        doc = {"schema": SCHEMA, "experiment": self.experiment, "version": __version__,
               "rng": RNG_DESCRIPTION, "regime": self.config.regime,
               "config": self.config.as_dict(), "warnings": self.warnings,
               "extra": self.extra, "cells": cells}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path, stem: str | None = None,
              with_time: bool = False) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.experiment
        paths = {"csv": out_dir / f"{stem}.csv", "json": out_dir / f"{stem}.json",
                 "timing": out_dir / f"{stem}.timing.json"}
        paths["csv"].write_text(self.to_csv(with_time))
        paths["json"].write_text(self.to_json(with_time))
        timing = {"walltime_s": self.walltime_s,
                  "cells": [c.walltime_s for c in self.cells]}
        paths["timing"].write_text(json.dumps(timing, indent=1) + "\n")
        return paths


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# simulation plumbing

def simulate_chunk(dist: StepDistribution, n: int, walks: Sequence[int], reps: Sequence[int],
                   seed: int) -> np.ndarray:
    """Positions of shape (len(walks), len(reps), n + 1, d)."""
    out = np.zeros((len(walks), len(reps), n + 1, dist.dim), dtype=np.int64)
    if n == 0:
        return out
    for wi, j in enumerate(walks):
        for ri, r in enumerate(reps):
            steps = sample_increments(dist, n, walk_rng(seed, j, r))
            np.cumsum(steps, axis=0, out=out[wi, ri, 1:])
    return out


def _chunks(cfg: ExperimentConfig, n: int, walks: int) -> list[range]:
    size = cfg.chunk or max(1, CHUNK_POINTS // ((n + 1) * walks))
    size = min(size, cfg.replicates)
    return [range(s, min(s + size, cfg.replicates)) for s in range(0, cfg.replicates, size)]


def _run_chunks(cfg: ExperimentConfig, n: int, walks: int,
                work: Callable[[range], dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Apply ``work`` to every replicate chunk and concatenate in replicate order."""
    chunks = _chunks(cfg, n, walks)
    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _packed(positions: np.ndarray) -> tuple[list[np.ndarray], BatchPacking]:
    radius = int(np.abs(positions).max()) if positions.size else 0
    packing = BatchPacking(max(radius, 1), positions.shape[-1])
    return [packing.pack(w) for w in positions], packing


def _violation(what: str, cfg: ExperimentConfig, reps: range, bad: np.ndarray, n: int):
    r = reps[int(np.flatnonzero(bad)[0])]
    raise InvariantViolation(f"{what} failed at n={n}, replicate {r}, seed {cfg.seed}")


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def _J_grid(cfg: ExperimentConfig, dist: StepDistribution, grid: Sequence[int],
            want_I: bool = False) -> dict[str, np.ndarray]:
    """J (and I) at every grid time for every replicate, shape (R, len(grid)).

    One run to max(grid) serves every grid point.
    """
    n_max = max(grid)

    def work(reps: range) -> dict[str, np.ndarray]:
        pos = simulate_chunk(dist, n_max, range(cfg.p), reps, cfg.seed)
        keys, packing = _packed(pos)
        J = batch_J_along(keys, packing, len(reps), grid)
        out = {"J": J}
        if cfg.check_invariants or want_I:
            I = np.empty_like(J)
            for c, n in enumerate(grid):
                I[:, c] = batch_I([k[:, : n + 1] for k in keys], packing, len(reps))
            out["I"] = I
        if cfg.check_invariants:
            for c, n in enumerate(grid):
                bad = (J[:, c] < 1) | (J[:, c] > n + 1)
                if np.any(bad):
                    _violation("1 <= J <= n+1", cfg, reps, bad, n)
                if np.any(J[:, c] > out["I"][:, c]):
                    _violation("J <= I", cfg, reps, J[:, c] > out["I"][:, c], n)
        return out
    return _run_chunks(cfg, n_max, cfg.p, work)


def _finish(report: ExperimentReport, t0: float) -> ExperimentReport:
    report.walltime_s = time.perf_counter() - t0
    for c in report.cells:
        c.walltime_s = report.walltime_s
    return report


# ---------------------------------------------------------------------------
# experiments

def moment_scale(d: int, p: int, n: int, m: int) -> float:
    """(log n)^{pm} / n^m for d = 2 and n^{-m/2} for d = 3."""
    if m == 0:
        return 1.0
    if d == 2:
        return math.log(n) ** (p * m) / n ** m
    return n ** (-m / 2)


def estimate_moments(cfg: ExperimentConfig) -> ExperimentReport:
    """Moments of J_n on the n grid, raw and in the limit normalisation, plus raw I_n moments."""
    t0 = time.perf_counter()
    dist = cfg.dist()
    grid = sorted(set(cfg.n_grid))
    sims = _J_grid(cfg, dist, grid, want_I=True)
    J, I = sims["J"].astype(float), sims["I"].astype(float)
    report = ExperimentReport("moments", cfg)
    for c, n in enumerate(grid):
        for m in cfg.moments:
            est, se = _mean_se(J[:, c] ** m)
            scale = moment_scale(cfg.d, cfg.p, n, m)
            common = dict(d=cfg.d, p=cfg.p, n=n, m_or_lambda=m, b_n=None,
                          replicates=cfg.replicates, seed=cfg.seed)
            report.cells.append(Cell("moment", estimate=est, stderr=se, **common))
            report.cells.append(Cell("moment_scaled", estimate=scale * est, stderr=scale * se,
                                     **common))
            est, se = _mean_se(I[:, c] ** m)
            report.cells.append(Cell("I_moment", estimate=est, stderr=se, **common))
    return _finish(report, t0)


def scaled_drift(values: Sequence[float]) -> float:
    """Relative spread (max - min) / min of scaled estimates across a grid."""
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / v.min())


def tail_threshold(d: int, p: int, n: int, b: float, lam: float) -> float:
    if d == 2:
        return lam * n * b ** (p - 1) / math.log(n) ** p
    return lam * math.sqrt(n * b ** 3)


def _warn_outside(cfg: ExperimentConfig, report: ExperimentReport) -> None:
    if cfg.regime == OUTSIDE:
        msg = f"explicit b_n {list(cfg.bn_rule)}: {OUTSIDE}"
        warnings.warn(msg, stacklevel=3)
        report.warnings.append(msg)


def estimate_tail(cfg: ExperimentConfig, rate: Callable[[float], float] | None = None
                  ) -> ExperimentReport:
    """Empirical P{J_n >= threshold(lambda)} and -(1/b_n) log of it.

    Cells with fewer than 10 exceedances are flagged, zero counts give an
    infinite diagnostic. ``rate`` (e.g. md_rate with fixed parameters) adds
    theory rows next to the diagnostics.
    """
    t0 = time.perf_counter()
    dist = cfg.dist()
    report = ExperimentReport("tails", cfg)
    _warn_outside(cfg, report)
    grid = sorted(set(cfg.n_grid))
    J = _J_grid(cfg, dist, grid)["J"]
    R = cfg.replicates
    for c, n in enumerate(grid):
        b = cfg.b_n(n)
        for lam in cfg.lambdas:
            thr = tail_threshold(cfg.d, cfg.p, n, b, lam)
            count = int(np.count_nonzero(J[:, c] >= thr))
            ph = count / R
            se = math.sqrt(ph * (1 - ph) / R)
            flag = "" if count >= ESTIMABLE_COUNT else ("zero" if count == 0 else "below_guard")
            common = dict(d=cfg.d, p=cfg.p, n=n, m_or_lambda=lam, b_n=b, replicates=R,
                          seed=cfg.seed, flag=flag)
            report.cells.append(Cell("tail_prob", estimate=ph, stderr=se, **common))
            if count:
                diag = -math.log(ph) / b
                diag_se = se / (b * ph)
            else:
                diag, diag_se = math.inf, math.nan
            report.cells.append(Cell("tail_decay", estimate=diag, stderr=diag_se, **common))
            if rate is not None:
                report.cells.append(Cell("md_rate", estimate=float(rate(lam)), stderr=0.0,
                                         **{**common, "flag": ""}))
    return _finish(report, t0)


def lil_normaliser(d: int, p: int, n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    ll = np.log(np.log(n))
    if d == 2:
        return np.log(n) ** p / (n * ll ** (p - 1))
    return 1.0 / np.sqrt(n * ll ** 3)


def lil_checkpoints(cfg: ExperimentConfig) -> list[int]:
    """Checkpoints n_k >= 16 up to max(n_grid): geometric, or k^k."""
    n_max = max(cfg.n_grid)
    if n_max < 16:
        raise ValueError("LIL checkpoints start at n = 16")
    if cfg.checkpoints == "kk":
        pts = [k ** k for k in range(3, 20) if k ** k <= n_max]
        return pts if pts[-1] == n_max else pts + [n_max]
    pts, x = [], 16.0
    while round(x) < n_max:
        if not pts or round(x) > pts[-1]:
            pts.append(int(round(x)))
        x *= cfg.checkpoint_ratio
    return pts + [n_max]


def lil_track(cfg: ExperimentConfig, constant: float | None = None,
              quantiles: Sequence[float] = (0.1, 0.5, 0.9)) -> ExperimentReport:
    """Running max over checkpoints of the normalised J, with cross-replicate quantiles."""
    t0 = time.perf_counter()
    dist = cfg.dist()
    pts = lil_checkpoints(cfg)
    J = _J_grid(cfg, dist, pts)["J"].astype(float)
    stat = J * lil_normaliser(cfg.d, cfg.p, pts)[None, :]
    running = np.maximum.accumulate(stat, axis=1)
    report = ExperimentReport("lil", cfg, extra={"checkpoints": pts})
    R = cfg.replicates
    for c, n in enumerate(pts):
        col = running[:, c]
        for q in quantiles:
            report.cells.append(Cell(f"lil_q{int(round(100 * q)):02d}", cfg.d, cfg.p, n, q,
                                     None, float(np.quantile(col, q)), math.nan, R, cfg.seed))
        est, se = _mean_se(col)
        report.cells.append(Cell("lil_mean", cfg.d, cfg.p, n, None, None, est, se, R, cfg.seed))
    if constant is not None:
        report.cells.append(Cell("lil_constant", cfg.d, cfg.p, pts[-1], None, None,
                                 float(constant), 0.0, R, cfg.seed))
    report.extra["running_max_monotone"] = bool(np.all(np.diff(running, axis=1) >= 0))
    return _finish(report, t0)


def cross_block_scale(d: int, n: int, eps: float) -> float:
    return eps * n / math.log(n) if d == 2 else eps * n


def block_partition_study(cfg: ExperimentConfig) -> ExperimentReport:
    """Cross-block intersection sum of one walk under t_n = floor(n/b_n), [b_n] blocks."""
    t0 = time.perf_counter()
    dist = cfg.dist()
    report = ExperimentReport("blocks", cfg)
    _warn_outside(cfg, report)
    R = cfg.replicates
    for n in sorted(set(cfg.n_grid)):
        b = cfg.b_n(n)
        blocks = BlockPartition.from_bn(n, b)
        thr = cross_block_scale(cfg.d, n, cfg.eps)

        def work(reps: range, blocks=blocks) -> dict[str, np.ndarray]:
            pos = simulate_chunk(dist, blocks.span, [0], reps, cfg.seed)
            keys, packing = _packed(pos)
            return {"X": batch_cross_block(keys[0], blocks, packing, len(reps))}
        X = _run_chunks(cfg, blocks.span, 1, work)["X"].astype(float)
        common = dict(d=cfg.d, p=cfg.p, n=n, m_or_lambda=cfg.eps, b_n=b, replicates=R,
                      seed=cfg.seed)
        est, se = _mean_se(X)
        report.cells.append(Cell("cross_block_mean", estimate=est, stderr=se, **common))
        est, se = _mean_se(X / thr)
        report.cells.append(Cell("cross_block_ratio", estimate=est, stderr=se, **common))
        frac = float(np.mean(X >= thr))
        report.cells.append(Cell("cross_block_exceed", estimate=frac,
                                 stderr=math.sqrt(frac * (1 - frac) / R), **common))
        report.extra.setdefault("blocks", {})[str(n)] = {"t_n": blocks.t_n, "a": blocks.a,
                                                          "max": float(X.max())}
    return _finish(report, t0)


EXPERIMENTS = {
    "moments": estimate_moments,
    "tails": estimate_tail,
    "lil": lil_track,
    "blocks": block_partition_study,
}
