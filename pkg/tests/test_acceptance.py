"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
collected into an "acceptance criteria" section of the pytest summary.
Tolerances are the stated ones. Pilot-derived settings (seeds, replicate
counts, lambda grid) are frozen here and recorded alongside the pilot scripts.
"""
import itertools
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from ril import oracles
from ril.cli import run as cli_run
from ril.gagliardo_nirenberg import (
    RadialFunctional, gn_constant, ground_state, random_radial_profiles,
)
from ril.lattice_walk import covariance, make_lazy, make_simple_walk, simulate
from ril.mc_experiments import (
    ExperimentConfig, estimate_moments, estimate_tail, scaled_drift,
)
from ril.range_stats import intersection_local_time
from ril.theory_constants import (
    RateParams, gamma_escape_integral, gamma_escape_sum, legendre_rate, md_rate, psi_spec,
)

S2, S3 = make_simple_walk(2), make_simple_walk(3)
PAIRS = [(2, 2), (2, 3), (3, 2)]


@pytest.fixture(scope="module")
def lazy_quarter_moments():
    cfg = ExperimentConfig(walk="lazy", eta=0.25, d=2, p=2, n_grid=(10,), moments=(1,),
                           replicates=10 ** 5, seed=42)
    t0 = time.perf_counter()
    report = estimate_moments(cfg)
    return cfg, report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def gn_results():
    return {pair: gn_constant(*pair) for pair in PAIRS}


def test_criterion_01_mc_mean_J_matches_exact(lazy_quarter_moments, record_criterion):
    cfg, report, seconds = lazy_quarter_moments
    cell = report.select("moment", m_or_lambda=1)[0]
    exact = oracles.exact_EJ(cfg.dist(), 2, 10)
    z = abs(cell.estimate - exact) / cell.stderr
    ok = z <= 3 and seconds < 60
    record_criterion(1, "E J_10 Monte Carlo vs exact", ok,
                     f"MC {cell.estimate:.5f} +- {cell.stderr:.5f}, exact {exact:.5f}, "
                     f"|z| = {z:.2f}, {seconds:.1f} s")
    assert ok


def _tuple_count(paths, n):
    """Number of time tuples (t_1..t_p) with S_1(t_1) = ... = S_p(t_p), by brute force."""
    total = 0
    for ts in itertools.product(range(n + 1), repeat=len(paths)):
        first = paths[0].positions[ts[0]]
        if all(np.array_equal(first, w.positions[t]) for w, t in zip(paths[1:], ts[1:])):
            total += 1
    return total


def test_criterion_02_mc_mean_I_matches_exact(lazy_quarter_moments, record_criterion):
    cfg, report, _ = lazy_quarter_moments
    cell = report.select("I_moment", m_or_lambda=1)[0]
    exact = oracles.exact_EI(cfg.dist(), 2, 10)
    z = abs(cell.estimate - exact) / cell.stderr
    mismatches = 0
    for p in (2, 3):
        for seed in range(100):
            n = seed % 7
            paths = [simulate(S2, n, seed, j) for j in range(p)]
            mismatches += intersection_local_time(paths, n) != _tuple_count(paths, n)
    ok = z <= 3 and mismatches == 0
    record_criterion(2, "E I_10 Monte Carlo vs exact, I vs tuple enumeration", ok,
                     f"MC {cell.estimate:.4f} +- {cell.stderr:.4f}, exact {exact:.4f}, "
                     f"|z| = {z:.2f}; {mismatches} mismatches over 200 path sets")
    assert ok


def test_criterion_03_green_ratio_hitting_bound(record_criterion):
    walks = {"simple d=2": S2, "lazy d=2": make_lazy(S2, 0.5),
             "simple d=3": S3, "lazy d=3": make_lazy(S3, 0.5)}
    worst = -math.inf
    for dist in walks.values():
        rep = oracles.check_lemma2(dist, 30, 5)
        worst = max(worst, rep.max_violation)
    ok = worst <= 1e-12
    record_criterion(3, "hitting probability >= Green ratio", ok,
                     f"max violation {worst:.3e} over 4 walks, n <= 30, |x| <= 5")
    assert ok


def test_criterion_04_range_subadditivity(record_criterion):
    worst, checked = -math.inf, 0
    for n in range(8):
        rep = oracles.check_all_subadditivity(S2, n)
        worst = max(worst, rep.max_violation)
        checked += rep.checked
    ok = worst <= 1e-12
    record_criterion(4, "range tail subadditivity", ok,
                     f"{checked} (n, a, b) cases, max violation {worst:.3e}")
    assert ok


def test_criterion_05_escape_probability(record_criterion):
    summed = gamma_escape_sum(S3, 10 ** 4)
    integral = gamma_escape_integral(S3)
    lazy = gamma_escape_integral(make_lazy(S3, 0.5))
    gap = abs(summed.estimate - integral)
    lazy_gap = abs(lazy - 0.5 * integral)
    ok = gap <= 1e-3 and lazy_gap <= 1e-6
    record_criterion(5, "escape probability sum vs integral", ok,
                     f"sum {summed.estimate:.7f}, integral {integral:.7f}, gap {gap:.1e}; "
                     f"lazy identity gap {lazy_gap:.1e}")
    assert ok


def test_criterion_06_legendre_identity(gn_results, record_criterion):
    gamma3 = gamma_escape_integral(S3)
    walks = {2: S2, 3: S3}
    worst = 0.0
    for d, p in PAIRS:
        kap = gn_results[(d, p)].kappa
        for params in (RateParams(d, p, 1.0, 1.0, 1.0 if d == 3 else None),
                       RateParams(d, p, covariance(walks[d])[1], kap,
                                  gamma3 if d == 3 else None)):
            psi = psi_spec(params)
            for lam in (0.5, 1.0, 2.0):
                closed = md_rate(params, lam)
                worst = max(worst, abs(legendre_rate(psi, lam) - closed) / closed)
    ok = worst <= 1e-6
    record_criterion(6, "Legendre transform vs closed-form rate", ok,
                     f"max relative error {worst:.2e}")
    assert ok


def test_criterion_07_gn_constant(gn_results, record_criterion):
    rng = np.random.default_rng(7)
    violations, refine_worst = 0, 0.0
    for (d, p), res in gn_results.items():
        fun = RadialFunctional(res.grid)
        for f in random_radial_profiles(rng, res.r, 1000):
            violations += fun.ratio(f, p) > res.kappa * (1 + 1e-6)
        refined = gn_constant(d, p, grid=res.grid.refined())
        refine_worst = max(refine_worst, abs(refined.kappa - res.kappa) / res.kappa)
    shoot = ground_state(2, 2).ratio
    shoot_gap = abs(gn_results[(2, 2)].kappa - shoot) / shoot
    ok = violations == 0 and refine_worst < 0.01 and shoot_gap <= 0.005
    record_criterion(7, "GN constant audit, refinement, shooting", ok,
                     f"{violations} violations in 3000 profiles, refinement change "
                     f"{refine_worst:.1e}, kappa(2,2) {gn_results[(2, 2)].kappa:.7f} vs "
                     f"shooting {shoot:.7f} ({shoot_gap:.1e})")
    assert ok


def test_criterion_08_block_moment_inequality(record_criterion):
    exact = [oracles.check_moment_inequality_T6(S2, 2, [2, 2], m) for m in (1, 2)]
    mc = [oracles.check_moment_inequality_T6(S2, 2, [20, 20], m, "mc", 10 ** 5, seed=8)
          for m in (1, 2)]
    ok = all(r.margin >= -1e-10 for r in exact) and all(r.ok for r in mc)
    record_criterion(8, "block moment inequality", ok,
                     "exact margins " + ", ".join(f"{r.margin:.4f}" for r in exact)
                     + "; MC (lhs - rhs)/sigma "
                     + ", ".join(f"{(r.lhs - r.rhs) / r.sigma:.1f}" for r in mc))
    assert ok


# frozen from scripts/pilot_moment_scaling.py
SCALING_GRID = tuple(2 ** k for k in range(10, 17))
SCALING_SEED = 20240601
SCALING_RUNS = {2: (4000, 0.25), 3: (1000, 0.15)}


def test_criterion_09_moment_scaling(record_criterion):
    drifts = {}
    for d, (reps, band) in SCALING_RUNS.items():
        cfg = ExperimentConfig(walk="simple", d=d, p=2, n_grid=SCALING_GRID, moments=(1,),
                               replicates=reps, seed=SCALING_SEED)
        vals = [c.estimate for c in estimate_moments(cfg).select("moment_scaled", m_or_lambda=1)]
        drifts[d] = scaled_drift(vals)
    ok = all(drifts[d] <= SCALING_RUNS[d][1] for d in drifts)
    record_criterion(9, "scaled first moment drift over n = 2^10..2^16", ok,
                     f"d=2 {drifts[2]:.3f} (band 0.25), d=3 {drifts[3]:.3f} (band 0.15)")
    assert ok


def _ini_from_manifest(resolved: dict, path: Path) -> None:
    sections: dict[str, list[str]] = {}
    for key, value in resolved.items():
        section, name = key.split(".", 1)
        sections.setdefault(section, []).append(f"{name} = {value}")
    path.write_text("".join(f"[{s}]\n" + "\n".join(lines) + "\n\n" for s, lines in sections.items()))


def test_criterion_10_determinism(tmp_path, record_criterion):
    import json

    same = []
    for name in ("moments", "tails", "lil", "blocks"):
        first = tmp_path / f"{name}-a"
        assert cli_run([name, "--n", "256,1024", "--replicates", "64", "--seed", "99",
                        "--set", "run.moments=0,1,2", "--out", str(first), "--threads", "2"]) == 0
        resolved = json.loads((first / "manifest.json").read_text())["resolved"]
        second = tmp_path / f"{name}-b"
        resolved["output.dir"] = str(second)
        cfg = tmp_path / f"{name}.ini"
        _ini_from_manifest(resolved, cfg)
        assert cli_run([name, "--config", str(cfg), "--threads", "1"]) == 0
        same.append((first / f"{name}.csv").read_bytes() == (second / f"{name}.csv").read_bytes())
    ok = all(same)
    record_criterion(10, "rerun from manifest reproduces CSV bytes", ok,
                     f"{sum(same)}/4 experiments byte-identical")
    assert ok


# frozen from scripts/pilot_tail_grid.py
TAIL_LAMBDAS = (0.05, 0.1, 0.15, 0.2, 0.3)
TAIL_ZERO_LAMBDA = 20.0   # threshold 20 * sqrt(27 * 10^4) > n + 1


def test_criterion_11_tail_diagnostics(record_criterion):
    cfg = ExperimentConfig(walk="simple", d=3, p=2, n_grid=(10 ** 4,), bn_rule=(3.0,),
                           lambdas=TAIL_LAMBDAS + (TAIL_ZERO_LAMBDA,), replicates=5000, seed=11)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = estimate_tail(cfg)
    probs = {c.m_or_lambda: c for c in report.select("tail_prob")}
    diags = [c for c in report.select("tail_decay") if c.m_or_lambda in TAIL_LAMBDAS]
    estimable = all(probs[lam].flag == "" for lam in TAIL_LAMBDAS)
    positive = all(c.estimate > 0 for c in diags)
    monotone = all(b.estimate >= a.estimate - 3 * math.hypot(a.stderr, b.stderr)
                   for a, b in zip(diags, diags[1:]))
    zero = probs[TAIL_ZERO_LAMBDA].estimate == 0.0
    ok = estimable and positive and monotone and zero
    record_criterion(11, "tail decay diagnostic", ok,
                     "diagnostics " + ", ".join(f"{c.estimate:.3f}" for c in diags)
                     + f"; positive {positive}, monotone {monotone}, "
                       f"zero beyond n+1 {zero}")
    assert ok
