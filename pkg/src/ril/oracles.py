"""Exact reference computations: path enumeration, exact moments, inequality audits.

Everything here is deliberately slow and simple. Exact E J_n comes from the
hitting DP, E I_n from convolution powers, and full enumeration is kept as an
independent second route for both.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .lattice_walk import (
    BudgetError, StepDistribution, hit_within, iter_hit_within, iter_pmfs, walk_rng, sample_increments,
)
from .range_stats import BatchPacking, BlockPartition, batch_A, batch_J

DEFAULT_MAX_PATHS = 10 ** 7

# ---------------------------------------------------------------------------
# on-disk cache

_cache_lock = threading.Lock()


def cache_dir() -> Path:
    env = os.environ.get("RIL_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "ril-oracles"


def _cache_path(op: str, dist: StepDistribution, params: dict) -> Path:
    blob = json.dumps({"op": op, "dist": dist.fingerprint, "params": params}, sort_keys=True)
    digest = hashlib.sha256(blob.encode()).hexdigest()[:24]
    return cache_dir() / f"{op}-{digest}.json"


def cached_value(op: str, dist: StepDistribution, params: dict, compute: Callable[[], float],
                 tolerance: float = 0.0, use_cache: bool = True) -> float:
    """Look up or compute a scalar oracle value.

    One JSON file per key; the file carries op name, params, value and tolerance.
    """
    if not use_cache:
        return compute()
    path = _cache_path(op, dist, params)
    with _cache_lock:
        if path.exists():
            try:
                return float(json.loads(path.read_text())["value"])
            except (ValueError, KeyError):
                path.unlink(missing_ok=True)
    value = compute()
    record = {"op": op, "params": params, "dist": dist.describe(), "value": value,
              "tolerance": tolerance}
    with _cache_lock:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, indent=1, sort_keys=True))
        os.replace(tmp, path)
    return value


# ---------------------------------------------------------------------------
# enumeration

@dataclass(frozen=True)
class EnumerationBudget:
    max_paths: int = DEFAULT_MAX_PATHS

    def check(self, dist: StepDistribution, n: int) -> int:
        count = len(dist.full_probs if dist.laziness > 0 else dist.probs) ** n
        if count > self.max_paths:
            raise BudgetError(f"{count} paths of length {n} exceed the budget {self.max_paths}")
        return count


def _step_table(dist: StepDistribution) -> tuple[np.ndarray, np.ndarray]:
    if dist.laziness > 0:
        return dist.full_vectors, dist.full_probs
    return dist.vectors, dist.probs


def path_ensemble(dist: StepDistribution, n: int, budget: EnumerationBudget = EnumerationBudget()
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Every path of length n as positions (P, n+1, d) with probabilities (P,)."""
    budget.check(dist, n)
    vecs, probs = _step_table(dist)
    k = len(probs)
    if n == 0:
        return np.zeros((1, 1, dist.dim), dtype=np.int64), np.ones(1)
    idx = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64)
    pos = np.zeros((idx.shape[0], n + 1, dist.dim), dtype=np.int64)
    np.cumsum(vecs[idx], axis=1, out=pos[:, 1:])
    return pos, np.prod(probs[idx], axis=1)


def enumerate_paths(dist: StepDistribution, n: int,
                    statistic: Callable[[np.ndarray], np.ndarray],
                    budget: EnumerationBudget = EnumerationBudget()) -> np.ndarray:
    """Exact expectation of ``statistic`` over all paths of length n.

    ``statistic`` maps positions of shape (P, n+1, d) to an array whose first
    axis is P. Paths are visited in chunks, one per first step.
    """
    budget.check(dist, n)
    if n == 0:
        return np.asarray(statistic(np.zeros((1, 1, dist.dim), dtype=np.int64)))[0] * 1.0
    vecs, probs = _step_table(dist)
    total = None
    for first, q in zip(vecs, probs):
        pos, pr = path_ensemble(dist, n - 1, budget)
        shifted = np.concatenate([np.zeros((pos.shape[0], 1, dist.dim), dtype=np.int64),
                                  pos + first], axis=1)
        vals = np.asarray(statistic(shifted), dtype=float)
        part = q * np.tensordot(pr, vals, axes=(0, 0))
        total = part if total is None else total + part
    return total


def _site_index(dist: StepDistribution, n: int):
    radius = n * dist.max_step
    side = 2 * radius + 1

    def index(pos: np.ndarray) -> np.ndarray:
        flat = np.zeros(pos.shape[:-1], dtype=np.int64)
        for i in range(dist.dim):
            flat = flat * side + (pos[..., i] + radius)
        return flat
    return index, side ** dist.dim


def block_counts(pos: np.ndarray, blocks: Sequence[tuple[int, int]], index, n_sites: int) -> np.ndarray:
    """c(x) = number of blocks whose range contains x, shape (P, n_sites)."""
    out = np.zeros((pos.shape[0], n_sites), dtype=np.int64)
    rows = np.arange(pos.shape[0])[:, None]
    for lo, hi in blocks:
        ind = np.zeros((pos.shape[0], n_sites), dtype=bool)
        ind[rows, index(pos[:, lo : hi + 1])] = True
        out += ind
    return out


def exact_block_moments(dist: StepDistribution, p: int, block_lengths: Sequence[int],
                        m: int, budget: EnumerationBudget = EnumerationBudget()) -> float:
    """E A^m by enumeration, m in {1, 2}.

    Walks are independent, so E A^m = sum_{x_1..x_m} (E prod_k c(x_k))^p with
    c the single-walk block count. A single block gives E J^m.
    """
    if m not in (0, 1, 2):
        raise ValueError("exact block moments implemented for m <= 2")
    if m == 0:
        return 1.0
    n = int(sum(block_lengths))
    edges = np.concatenate([[0], np.cumsum(block_lengths)])
    blocks = [(int(edges[i]), int(edges[i + 1])) for i in range(len(block_lengths))]
    index, n_sites = _site_index(dist, n)
    pos, pr = path_ensemble(dist, n, budget)
    c = block_counts(pos, blocks, index, n_sites).astype(float)
    if m == 1:
        moment1 = pr @ c
        return float(np.sum(moment1 ** p))
    moment2 = (c * pr[:, None]).T @ c
    return float(np.sum(moment2 ** p))


def exact_J_moment_enum(dist: StepDistribution, p: int, n: int, m: int = 1,
                        budget: EnumerationBudget = EnumerationBudget()) -> float:
    return exact_block_moments(dist, p, [n], m, budget)


def exact_I_mean_enum(dist: StepDistribution, p: int, n: int,
                      budget: EnumerationBudget = EnumerationBudget()) -> float:
    """E I_n = sum_x (E l(n, x))^p with local times from full enumeration."""
    index, n_sites = _site_index(dist, n)

    def local_time(pos: np.ndarray) -> np.ndarray:
        out = np.zeros((pos.shape[0], n_sites))
        rows = np.repeat(np.arange(pos.shape[0]), pos.shape[1])
        np.add.at(out, (rows, index(pos).ravel()), 1.0)
        return out
    mean_lt = enumerate_paths(dist, n, local_time, budget)
    return float(np.sum(mean_lt ** p))


def range_size_law(dist: StepDistribution, n: int,
                   budget: EnumerationBudget = EnumerationBudget()) -> np.ndarray:
    """P{#S[0, n] = r} for r = 0..n+1 by enumeration."""
    def size_onehot(pos: np.ndarray) -> np.ndarray:
        index, _ = _site_index(dist, n)
        flat = np.sort(index(pos), axis=1)
        sizes = 1 + np.count_nonzero(np.diff(flat, axis=1), axis=1)
        out = np.zeros((pos.shape[0], n + 2))
        out[np.arange(pos.shape[0]), sizes] = 1.0
        return out
    return enumerate_paths(dist, n, size_onehot, budget)


# ---------------------------------------------------------------------------
# exact expectations

def exact_EJ(dist: StepDistribution, p: int, n: int, box_radius: int | None = None,
             use_cache: bool = True) -> float:
    """E J_n = sum_x P{T_x <= n}^p from the hitting DP."""
    if p < 1 or n < 0:
        raise ValueError("need p >= 1 and n >= 0")

    def compute() -> float:
        h = hit_within(dist, n, box_radius)
        return float(np.sum(h ** p))
    return cached_value("exact_EJ", dist, {"p": p, "n": n}, compute, 1e-12, use_cache)


def exact_EI(dist: StepDistribution, p: int, n: int, use_cache: bool = True) -> float:
    """E I_n = sum_x (sum_{k<=n} P{S(k) = x})^p from convolution powers."""
    if p < 1 or n < 0:
        raise ValueError("need p >= 1 and n >= 0")

    def compute() -> float:
        green = None
        for arr in iter_pmfs(dist, n):
            green = arr.copy() if green is None else green + arr
        return float(np.sum(green ** p))
    return cached_value("exact_EI", dist, {"p": p, "n": n}, compute, 1e-12, use_cache)


# ---------------------------------------------------------------------------
# inequality audits

@dataclass
class ViolationReport:
    name: str
    checked: int
    max_violation: float
    worst: tuple | None
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tolerance


def check_lemma2(dist: StepDistribution, n: int, radius: int, tolerance: float = 1e-12
                 ) -> ViolationReport:
    """P{T_x <= k} >= sum_{j<=k} P{S(j)=x} / sum_{j<=k} P{S(j)=0} for |x|_inf <= radius, k <= n."""
    box = max(radius, n * dist.max_step)
    crop = tuple(slice(box - radius, box + radius + 1) for _ in range(dist.dim))
    center = (radius,) * dist.dim
    green = None
    worst, worst_at = -math.inf, None
    pairs = zip(iter_pmfs(dist, n, radius=box), iter_hit_within(dist, n, radius))
    for k, (arr, hit) in enumerate(pairs):
        green = arr.copy() if green is None else green + arr
        g = green[crop]
        rhs = g / g[center]
        viol = rhs - hit
        i = np.unravel_index(int(np.argmax(viol)), viol.shape)
        if viol[i] > worst:
            worst = float(viol[i])
            worst_at = (tuple(int(c) - radius for c in i), k)
    checked = (n + 1) * (2 * radius + 1) ** dist.dim
    return ViolationReport("lemma2", checked, worst, worst_at, tolerance)


def check_range_subadditivity(dist: StepDistribution, n: int, a: int, b: int,
                              law: np.ndarray | None = None,
                              budget: EnumerationBudget = EnumerationBudget()) -> ViolationReport:
    """P{#S[0,n] >= a+b} <= P{#S[0,n] >= a} P{#S[0,n] >= b} by exact enumeration."""
    if a < 0 or b < 0:
        raise ValueError("a and b must be >= 0")
    if law is None:
        law = range_size_law(dist, n, budget)
    tail = np.concatenate([np.cumsum(law[::-1])[::-1], [0.0]])

    def at_least(t: int) -> float:
        return float(tail[t]) if t < len(tail) else 0.0
    lhs = at_least(a + b)
    rhs = at_least(a) * at_least(b)
    return ViolationReport("range_subadditivity", 1, lhs - rhs, (a, b), 1e-12,
                           {"lhs": lhs, "rhs": rhs})


def check_all_subadditivity(dist: StepDistribution, n: int,
                            budget: EnumerationBudget = EnumerationBudget()) -> ViolationReport:
    law = range_size_law(dist, n, budget)
    reports = [check_range_subadditivity(dist, n, a, b, law)
               for a in range(n + 2) for b in range(n + 2 - a)]
    worst = max(reports, key=lambda r: r.max_violation)
    return ViolationReport("range_subadditivity", len(reports), worst.max_violation,
                           worst.worst, 1e-12)


def compositions(m: int, parts: int):
    """All (k_1..k_parts) of non-negative integers summing to m."""
    if parts == 1:
        yield (m,)
        return
    for first in range(m + 1):
        for rest in compositions(m - first, parts - 1):
            yield (first,) + rest


def theorem6_rhs(J_moments: Sequence[dict[int, float]], m: int, p: int) -> float:
    """sum over k_1+..+k_a = m of m!/prod k_i! prod (E J_{n_i}^{k_i})^{1/p}."""
    total = 0.0
    for ks in compositions(m, len(J_moments)):
        coef = math.factorial(m) / math.prod(math.factorial(k) for k in ks)
        total += coef * math.prod(J_moments[i][k] ** (1 / p) for i, k in enumerate(ks))
    return total


@dataclass
class MomentInequalityReport:
    mode: str
    m: int
    p: int
    block_lengths: tuple[int, ...]
    lhs: float
    rhs: float
    sigma: float = 0.0
    replicates: int = 0
    seed: int | None = None

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def ok(self) -> bool:
        if self.mode == "exact":
            return self.margin >= -1e-10
        return self.lhs - self.rhs <= 3.0 * self.sigma


def check_moment_inequality_T6(dist: StepDistribution, p: int, block_lengths: Sequence[int],
                               m: int, mode: str = "exact", replicates: int = 10 ** 5,
                               seed: int = 0,
                               budget: EnumerationBudget = EnumerationBudget()
                               ) -> MomentInequalityReport:
    """(E A^m)^{1/p} against the multinomial bound built from E J_{n_i}^k."""
    if m not in (1, 2):
        raise ValueError("the multi-index sum is implemented for m in {1, 2}")
    lengths = tuple(int(x) for x in block_lengths)
    if mode == "exact":
        lhs = exact_block_moments(dist, p, lengths, m, budget) ** (1 / p)
        Jm = [{k: exact_block_moments(dist, p, [ni], k, budget) for k in range(m + 1)}
              for ni in lengths]
        return MomentInequalityReport("exact", m, p, lengths, lhs, theorem6_rhs(Jm, m, p))
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    return _theorem6_mc(dist, p, lengths, m, replicates, seed)


def _simulate_positions(dist: StepDistribution, n: int, reps: range, walk_index: int,
                        seed: int) -> np.ndarray:
    out = np.zeros((len(reps), n + 1, dist.dim), dtype=np.int64)
    for row, r in enumerate(reps):
        rng = walk_rng(seed, walk_index, r)
        np.cumsum(sample_increments(dist, n, rng), axis=0, out=out[row, 1:])
    return out


def _theorem6_mc(dist, p, lengths, m, replicates, seed) -> MomentInequalityReport:
    total = sum(lengths)
    edges = np.concatenate([[0], np.cumsum(lengths)])
    reps = range(replicates)
    # A on p walks of the full length (walk indices 0..p-1)
    packing = BatchPacking(total * dist.max_step, dist.dim)
    keys = [packing.pack(_simulate_positions(dist, total, reps, j, seed)) for j in range(p)]
    # [[b_n]] blocks may have unequal lengths here; build them by hand
    A = _batch_A_lengths(keys, edges, packing, replicates)
    J_full = batch_J(keys, packing, replicates)
    if np.any(J_full > A):
        bad = int(np.argmax(J_full > A))
        raise AssertionError(f"J > A at replicate {bad}, seed {seed}")
    # fresh walks of each block length for the J moments (walk indices p(1+i)+j)
    Js = []
    for i, ni in enumerate(lengths):
        pk = BatchPacking(ni * dist.max_step, dist.dim)
        kk = [pk.pack(_simulate_positions(dist, ni, reps, p * (1 + i) + j, seed)) for j in range(p)]
        Js.append(batch_J(kk, pk, replicates).astype(float))

    A = A.astype(float)
    lhs_mean = float(np.mean(A ** m))
    lhs_se = float(np.std(A ** m, ddof=1) / math.sqrt(replicates))
    lhs = lhs_mean ** (1 / p)
    lhs_sigma = lhs_se * (1 / p) * lhs_mean ** (1 / p - 1)

    Jm = [{k: float(np.mean(J ** k)) for k in range(m + 1)} for J in Js]
    rhs = theorem6_rhs(Jm, m, p)
    # delta method, treating the block estimates as independent
    var = 0.0
    h = 1e-6
    for i, J in enumerate(Js):
        for k in range(1, m + 1):
            se = float(np.std(J ** k, ddof=1) / math.sqrt(replicates))
            bumped = [dict(d) for d in Jm]
            bumped[i][k] *= 1 + h
            deriv = (theorem6_rhs(bumped, m, p) - rhs) / (h * Jm[i][k])
            var += (deriv * se) ** 2
    sigma = math.sqrt(lhs_sigma ** 2 + var)
    return MomentInequalityReport("mc", m, p, lengths, lhs, rhs, sigma, replicates, seed)


def _batch_A_lengths(keys, edges, packing, n_rep) -> np.ndarray:
    from .range_stats import _product_over_walks

    tables = []
    for kj in keys:
        per_block = [np.unique(kj[:, int(edges[i]) : int(edges[i + 1]) + 1])
                     for i in range(len(edges) - 1)]
        tables.append(np.unique(np.concatenate(per_block), return_counts=True))
    k, w = _product_over_walks(tables)
    return np.bincount(packing.replicate_of(k), weights=w, minlength=n_rep).astype(np.int64)


# ---------------------------------------------------------------------------
# moment-bound calibration

@dataclass
class CalibrationReport:
    d: int
    p: int
    required_C: float
    table: list[dict]

    def consistent(self, bound: float = 100.0) -> bool:
        return self.required_C <= bound


def lemma1_calibration(dist: StepDistribution, p: int, ns: Sequence[int],
                       ms: Sequence[int] = (1, 2), replicates: int = 2000,
                       seed: int = 0) -> CalibrationReport:
    """Smallest C consistent with the moment bounds E J_n^m <= (m!)^e C^m scale(n)^m.

    d=3: e = 3/2, scale = sqrt(n); d=2: e = p-1, scale = n min(1/log(n/m)^p, 1).
    m = 1 uses the exact mean, higher m use simulation.
    """
    d = dist.dim
    rows = []
    for n in ns:
        packing = BatchPacking(n * dist.max_step, d)
        reps = range(replicates)
        keys = [packing.pack(_simulate_positions(dist, n, reps, j, seed)) for j in range(p)]
        J = batch_J(keys, packing, replicates).astype(float)
        for m in ms:
            moment = exact_EJ(dist, p, n, use_cache=False) if m == 1 else float(np.mean(J ** m))
            if d == 3:
                base = math.factorial(m) ** 1.5 * n ** (m / 2)
                scale = 1.0
            else:
                lg = math.log(n / m) if n > m else 0.0
                factor = min(1.0 / lg ** p, 1.0) if lg > 0 else 1.0
                base = math.factorial(m) ** (p - 1) * (n * factor) ** m
                scale = 1.0
            C = (moment / base) ** (1 / m) * scale
            rows.append({"n": n, "m": m, "moment": moment, "C": C})
    return CalibrationReport(d, p, max(r["C"] for r in rows), rows)
