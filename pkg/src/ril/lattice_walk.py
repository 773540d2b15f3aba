"""Step distributions on Z^d, reproducible walk simulation, and exact laws.

The exact routines here (dense convolution powers and the hitting-probability
dynamic programs) are the ground truth every Monte Carlo path is checked
against, so they never truncate probability mass.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

# 21 bits per signed coordinate, d <= 3
COORD_BITS = 21
COORD_OFFSET = 1 << (COORD_BITS - 1)
COORD_LIMIT = COORD_OFFSET  # |x_i| must stay strictly below this
MAX_PACKED_DIM = 3

RNG_DESCRIPTION = (
    "numpy.random.Philox seeded by SeedSequence(seed, spawn_key=(replicate, walk_index))"
)

# dense boxes beyond this many cells are refused
DEFAULT_MAX_CELLS = 50_000_000


class LeakageError(RuntimeError):
    """Probability mass left the finite box of a dynamic program."""


class BudgetError(RuntimeError):
    """A requested exact computation exceeds its memory or enumeration budget."""


@dataclass(frozen=True)
class StepDistribution:
    """Finite symmetric step law on Z^d.

    ``atoms`` holds the non-zero increments with their probabilities; the
    mass on the zero step is ``laziness``.
    """

    dim: int
    atoms: tuple[tuple[tuple[int, ...], float], ...]
    laziness: float = 0.0
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")
        if not 0.0 <= self.laziness < 1.0:
            raise ValueError(f"laziness must lie in [0, 1), got {self.laziness}")
        table: dict[tuple[int, ...], float] = {}
        for vec, q in self.atoms:
            if len(vec) != self.dim:
                raise ValueError(f"atom {vec} does not have dimension {self.dim}")
            if not any(vec):
                raise ValueError("zero step must be expressed through laziness")
            if q < 0:
                raise ValueError(f"negative probability {q} for atom {vec}")
            if vec in table:
                raise ValueError(f"duplicate atom {vec}")
            table[vec] = q
        total = sum(table.values()) + self.laziness
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        for vec, q in table.items():
            neg = tuple(-c for c in vec)
            if neg not in table or abs(table[neg] - q) > 1e-15:
                raise ValueError(f"distribution is not symmetric at atom {vec}")

    @cached_property
    def vectors(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms], dtype=np.int64).reshape(-1, self.dim)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.array([q for _, q in self.atoms], dtype=float)

    @cached_property
    def full_vectors(self) -> np.ndarray:
        """All increments with the zero step first."""
        return np.vstack([np.zeros((1, self.dim), dtype=np.int64), self.vectors])

    @cached_property
    def full_probs(self) -> np.ndarray:
        return np.concatenate([[self.laziness], self.probs])

    @property
    def max_step(self) -> int:
        """Largest sup-norm among the increments."""
        return int(np.abs(self.vectors).max())

    @property
    def is_axis_aligned(self) -> bool:
        return bool(np.all(np.count_nonzero(self.vectors, axis=1) == 1))

    @cached_property
    def fingerprint(self) -> str:
        text = repr((self.dim, sorted(self.atoms), round(self.laziness, 17)))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "laziness": self.laziness,
            "atoms": [[list(v), q] for v, q in self.atoms],
            "fingerprint": self.fingerprint,
        }


def make_simple_walk(d: int) -> StepDistribution:
    """Nearest-neighbour walk: each of the 2d unit steps with probability 1/(2d)."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    atoms = []
    for i in range(d):
        for sign in (1, -1):
            vec = [0] * d
            vec[i] = sign
            atoms.append((tuple(vec), 1.0 / (2 * d)))
    return StepDistribution(dim=d, atoms=tuple(atoms), laziness=0.0, name=f"simple{d}d")


def make_lazy(base: StepDistribution, eta: float) -> StepDistribution:
    """Mix the zero step in with probability ``eta``."""
    if not 0.0 <= eta < 1.0:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    if eta == 0.0:
        return base
    atoms = tuple((v, (1.0 - eta) * q) for v, q in base.atoms)
    laziness = eta + (1.0 - eta) * base.laziness
    # re-normalise the rounding residue onto the zero step
    laziness = 1.0 - sum(q for _, q in atoms)
    return StepDistribution(base.dim, atoms, laziness, name=f"lazy({base.name},{eta:g})")


def walk_from_name(name: str, d: int, eta: float = 0.0) -> StepDistribution:
    """Built-in walks by name: ``simple`` or ``lazy`` (lazy simple with ``eta``, default 1/2).

    ``eta`` is ignored for ``simple``.
    """
    if name == "simple":
        return make_simple_walk(d)
    if name == "lazy":
        return make_lazy(make_simple_walk(d), eta if eta else 0.5)
    path = Path(name)
    if path.exists():
        return load_step_distribution(path)
    raise ValueError(f"unknown walk {name!r} (expected 'simple', 'lazy' or a file path)")


def load_step_distribution(path: str | Path) -> StepDistribution:
    """Read a step law from a text file.

    Format: ``#`` comments, optional header lines ``key = value`` (``laziness``,
    ``name``), then one atom per line as ``v1 ... vd probability``. A zero vector
    line is folded into the laziness.
    """
    path = Path(path)
    laziness = 0.0
    name = path.stem
    rows: list[tuple[tuple[int, ...], float]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "laziness":
                laziness = float(value)
            elif key == "name":
                name = value
            else:
                raise ValueError(f"{path}:{lineno}: unknown header key {key!r}")
            continue
        parts = line.split()
        try:
            vec = tuple(int(s) for s in parts[:-1])
            q = float(parts[-1])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: cannot parse atom line {raw!r}") from exc
        rows.append((vec, q))
    if not rows:
        raise ValueError(f"{path}: no atoms")
    dims = {len(v) for v, _ in rows}
    if len(dims) != 1:
        raise ValueError(f"{path}: atoms of mixed dimension {sorted(dims)}")
    atoms = []
    for vec, q in rows:
        if any(vec):
            atoms.append((vec, q))
        else:
            laziness += q
    return StepDistribution(dims.pop(), tuple(atoms), laziness, name=name)


def covariance(dist: StepDistribution) -> tuple[np.ndarray, float]:
    """Covariance matrix of one step and its determinant."""
    v = dist.vectors.astype(float)
    gamma = (v * dist.probs[:, None]).T @ v
    det = float(np.linalg.det(gamma))
    if det <= 1e-14:
        raise ValueError(f"singular step covariance (det={det:g}); the walk is degenerate")
    return gamma, det


def generated_lattice(dist: StepDistribution) -> tuple[np.ndarray, int]:
    """Column basis (Hermite normal form) of the lattice spanned by the steps, and its index in Z^d."""
    from sympy import Matrix
    from sympy.matrices.normalforms import hermite_normal_form

    H = hermite_normal_form(Matrix(dist.vectors.T.tolist()))
    if H.shape != (dist.dim, dist.dim):
        raise ValueError("steps do not span R^d")
    basis = np.array(H.tolist(), dtype=np.int64)
    return basis, int(round(abs(np.linalg.det(basis))))


def in_lattice_coordinates(dist: StepDistribution) -> StepDistribution:
    """The same walk written in a basis of its own lattice, so that it generates Z^d.

    Return probabilities, and hence the Green function at 0, are unchanged.
    """
    basis, index = generated_lattice(dist)
    if index == 1:
        return dist
    coords = np.linalg.solve(basis.astype(float), dist.vectors.T.astype(float)).T
    ints = np.rint(coords).astype(np.int64)
    if np.abs(coords - ints).max() > 1e-9:
        raise ArithmeticError("lattice change of basis is not integral")
    atoms = tuple((tuple(int(c) for c in v), float(q)) for v, q in zip(ints, dist.probs))
    return StepDistribution(dist.dim, atoms, dist.laziness, f"{dist.name}[lattice basis]")


def char_fn(dist: StepDistribution, lam: np.ndarray | Sequence[float]) -> np.ndarray | float:
    """Characteristic function of one step, real by symmetry.

    ``lam`` has shape ``(..., d)``.
    """
    lam = np.asarray(lam, dtype=float)
    phase = lam @ dist.vectors.T.astype(float)
    out = dist.laziness + np.cos(phase) @ dist.probs
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# packing

def pack_sites(positions: np.ndarray) -> np.ndarray:
    """Pack integer positions of shape ``(m, d)`` into 64-bit keys."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.ndim == 1:
        positions = positions[None, :]
    d = positions.shape[1]
    if d > MAX_PACKED_DIM:
        raise ValueError(f"site packing supports d <= {MAX_PACKED_DIM}, got d={d}")
    if positions.size and np.abs(positions).max() >= COORD_LIMIT:
        raise OverflowError(
            f"walk left the packable box: |coordinate| >= 2^{COORD_BITS - 1}"
        )
    keys = np.zeros(positions.shape[0], dtype=np.int64)
    for i in range(d):
        keys |= (positions[:, i] + COORD_OFFSET) << (COORD_BITS * i)
    return keys


def unpack_sites(keys: np.ndarray, d: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    mask = (1 << COORD_BITS) - 1
    out = np.empty((keys.shape[0], d), dtype=np.int64)
    for i in range(d):
        out[:, i] = ((keys >> (COORD_BITS * i)) & mask) - COORD_OFFSET
    return out


# ---------------------------------------------------------------------------
# simulation

@dataclass
class WalkPath:
    dim: int
    positions: np.ndarray
    seed: int
    walk_index: int
    replicate: int = 0

    @property
    def n(self) -> int:
        return self.positions.shape[0] - 1

    @cached_property
    def keys(self) -> np.ndarray:
        return pack_sites(self.positions)


def walk_rng(seed: int, walk_index: int, replicate: int = 0) -> np.random.Generator:
    """Independent stream for one (seed, replicate, walk) triple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(walk_index)))
    return np.random.Generator(np.random.Philox(ss))


def sample_increments(dist: StepDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. steps of shape ``(n, d)``."""
    cdf = np.cumsum(dist.full_probs)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    np.minimum(idx, len(cdf) - 1, out=idx)
    return dist.full_vectors[idx]


def simulate(dist: StepDistribution, n: int, seed: int, walk_index: int = 0,
             replicate: int = 0) -> WalkPath:
    """Positions S(0..n) of one walk started at the origin."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    rng = walk_rng(seed, walk_index, replicate)
    pos = np.zeros((n + 1, dist.dim), dtype=np.int64)
    if n:
        np.cumsum(sample_increments(dist, n, rng), axis=0, out=pos[1:])
    return WalkPath(dist.dim, pos, int(seed), int(walk_index), int(replicate))


# ---------------------------------------------------------------------------
# dense exact laws

def _box_slices(shift: Sequence[int], side: int) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    dst, src = [], []
    for s in shift:
        if s >= 0:
            dst.append(slice(s, side))
            src.append(slice(0, side - s))
        else:
            dst.append(slice(0, side + s))
            src.append(slice(-s, side))
    return tuple(dst), tuple(src)


def _check_cells(side: int, d: int, max_cells: int, what: str) -> None:
    cells = side ** d
    if cells > max_cells:
        raise BudgetError(f"{what} needs a dense box of {cells} cells (limit {max_cells})")


def convolve_step(arr: np.ndarray, dist: StepDistribution) -> np.ndarray:
    """One forward step of the law on a fixed box; mass leaving the box is dropped."""
    side = arr.shape[-1]
    out = dist.laziness * arr
    for vec, q in zip(dist.vectors, dist.probs):
        dst, src = _box_slices(vec, side)
        lead = (slice(None),) * (arr.ndim - dist.dim)
        out[lead + dst] += q * arr[lead + src]
    return out


@dataclass
class BoxPmf:
    """A law on Z^d stored on the box [-radius, radius]^d."""

    dim: int
    radius: int
    array: np.ndarray = field(repr=False)

    def __getitem__(self, x: Sequence[int]) -> float:
        idx = tuple(int(c) + self.radius for c in x)
        if any(i < 0 or i >= self.array.shape[0] for i in idx):
            return 0.0
        return float(self.array[idx])

    def total(self) -> float:
        return float(self.array.sum())

    def as_dict(self, tol: float = 0.0) -> dict[tuple[int, ...], float]:
        nz = np.argwhere(self.array > tol)
        return {tuple(int(c) - self.radius for c in i): float(self.array[tuple(i)]) for i in nz}


def delta_box(d: int, radius: int) -> np.ndarray:
    side = 2 * radius + 1
    arr = np.zeros((side,) * d)
    arr[(radius,) * d] = 1.0
    return arr


def iter_pmfs(dist: StepDistribution, kmax: int, radius: int | None = None,
              max_cells: int = DEFAULT_MAX_CELLS) -> Iterator[np.ndarray]:
    """Yield the dense laws of S(0), ..., S(kmax) on one common box.

    The default box radius ``kmax * max_step`` contains every reachable site,
    so the yielded arrays are exact.
    """
    if radius is None:
        radius = kmax * dist.max_step
    _check_cells(2 * radius + 1, dist.dim, max_cells, f"convolution power {kmax}")
    arr = delta_box(dist.dim, radius)
    yield arr
    for _ in range(kmax):
        arr = convolve_step(arr, dist)
        yield arr


def pmf_convolution(dist: StepDistribution, k: int,
                    max_cells: int = DEFAULT_MAX_CELLS) -> BoxPmf:
    """Exact law of S(k) by repeated discrete convolution.

    The box side is ``2 k max_step + 1``; ``max_cells`` bounds its volume.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    arr = None
    for arr in iter_pmfs(dist, k, max_cells=max_cells):
        pass
    return BoxPmf(dist.dim, k * dist.max_step, arr)


@dataclass
class HittingResult:
    """Output of :func:`hitting_prob_dp`.

    ``joint`` maps a tuple of booleans (one per target, in the order given) to
    P{T_x <= n for flagged x, T_y > n for the others}. ``first_passage[i, j]``
    is P{T_{x_i} = j}.
    """

    targets: tuple[tuple[int, ...], ...]
    n: int
    joint: dict[tuple[bool, ...], float]
    first_passage: np.ndarray

    def hit_prob(self, i: int = 0) -> float:
        return float(sum(p for pat, p in self.joint.items() if pat[i]))


def hitting_prob_dp(dist: StepDistribution, targets: Sequence[Sequence[int]], n: int,
                    box_radius: int | None = None,
                    max_cells: int = DEFAULT_MAX_CELLS) -> HittingResult:
    """Joint hitting law for up to two targets by a forward DP over (site, hit flags)."""
    tgts = tuple(dict.fromkeys(tuple(int(c) for c in t) for t in targets))
    if not 1 <= len(tgts) <= 2:
        raise ValueError("hitting_prob_dp supports one or two distinct targets")
    if any(len(t) != dist.dim for t in tgts):
        raise ValueError("target dimension does not match the walk")
    if box_radius is None:
        box_radius = max(n * dist.max_step, max(max(abs(c) for c in t) for t in tgts))
    if any(max(abs(c) for c in t) > box_radius for t in tgts):
        raise ValueError("targets must lie inside the DP box")
    m = len(tgts)
    side = 2 * box_radius + 1
    _check_cells(side, dist.dim, max_cells // (1 << m), "hitting DP")

    arr = np.zeros((1 << m,) + (side,) * dist.dim)
    origin = (box_radius,) * dist.dim
    tidx = [tuple(c + box_radius for c in t) for t in tgts]
    start_flags = sum(1 << i for i, t in enumerate(tgts) if not any(t))
    arr[(start_flags,) + origin] = 1.0
    first = np.zeros((m, n + 1))
    for i, t in enumerate(tgts):
        if not any(t):
            first[i, 0] = 1.0

    for k in range(1, n + 1):
        arr = convolve_step(arr, dist)
        leak = 1.0 - arr.sum()
        if abs(leak) > 1e-12:
            raise LeakageError(f"mass {leak:.3e} left the box of radius {box_radius} at step {k}")
        for i, ti in enumerate(tidx):
            bit = 1 << i
            for flags in range(1 << m):
                if flags & bit:
                    continue
                mass = arr[(flags,) + ti]
                if mass:
                    first[i, k] += mass
                    arr[(flags | bit,) + ti] += mass
                    arr[(flags,) + ti] = 0.0

    layer_mass = arr.reshape(1 << m, -1).sum(axis=1)
    joint = {
        tuple(bool(flags >> i & 1) for i in range(m)): float(layer_mass[flags])
        for flags in range(1 << m)
    }
    return HittingResult(tgts, n, joint, first)


def iter_hit_within(dist: StepDistribution, n: int, radius: int | None = None,
                    max_cells: int = DEFAULT_MAX_CELLS) -> Iterator[np.ndarray]:
    """Yield P{T_x <= k} on the box |x|_inf <= radius for k = 0..n, indexed by x + radius.

    Backward equation for h_k(y) = P_y{reach 0 within k steps}; translation
    invariance gives P_0{T_x <= k} = h_k(-x).
    """
    if radius is None:
        radius = n * dist.max_step
    # sites farther than n * max_step cannot be reached, so the box is padded to that size
    inner = max(radius, n * dist.max_step)
    side = 2 * inner + 1
    _check_cells(side, dist.dim, max_cells, "hitting DP (all targets)")
    h = delta_box(dist.dim, inner)
    center = (inner,) * dist.dim
    crop = tuple(slice(inner - radius, inner + radius + 1) for _ in range(dist.dim))
    # h_k(-x): flip every axis
    flip = tuple(slice(None, None, -1) for _ in range(dist.dim))
    yield h[crop][flip]
    for _ in range(n):
        nxt = dist.laziness * h
        for vec, q in zip(dist.vectors, dist.probs):
            # nxt(y) += q * h(y + v)
            dst, src = _box_slices(-vec, side)
            nxt[dst] += q * h[src]
        nxt[center] = 1.0
        h = nxt
        yield h[crop][flip]


def hit_within_all(dist: StepDistribution, n: int, radius: int | None = None,
                   max_cells: int = DEFAULT_MAX_CELLS) -> np.ndarray:
    """P{T_x <= k} for every site x in the box and every k <= n.

    Shape ``(n + 1,) + (2R + 1,) * d`` indexed by x + R with R = ``radius``.
    """
    r = n * dist.max_step if radius is None else radius
    _check_cells((2 * r + 1), dist.dim, max_cells // max(n + 1, 1), "hitting table")
    return np.stack(list(iter_hit_within(dist, n, radius, max_cells)))


def hit_within(dist: StepDistribution, n: int, radius: int | None = None,
               max_cells: int = DEFAULT_MAX_CELLS) -> np.ndarray:
    """P{T_x <= n} on the box, indexed by x + radius."""
    last = None
    for last in iter_hit_within(dist, n, radius, max_cells):
        pass
    return last


def first_passage_renewal(pmf_x: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Invert P{S(k)=x} = sum_j P{T_x=j} P{S(k-j)=0} for the first-passage law."""
    n = len(pmf_x) - 1
    f = np.zeros(n + 1)
    for k in range(n + 1):
        f[k] = pmf_x[k] - np.dot(f[:k], returns[k:0:-1])
    return f


def return_probabilities(dist: StepDistribution, kmax: int,
                         max_cells: int = DEFAULT_MAX_CELLS) -> np.ndarray:
    """Exact P{S(k)=0} for k = 0..kmax.

    Axis-aligned laws are split into independent one-dimensional coordinate
    walks and recombined with binomial weights, which keeps the cost at
    O(kmax^2) in any dimension. Other laws fall back to dense convolution,
    pairing S(j) with S(k-j) so the box only needs radius ceil(kmax/2).
    """
    if dist.is_axis_aligned:
        return _returns_axis_decomposed(dist, kmax)
    half = (kmax + 1) // 2
    out = np.zeros(kmax + 1)
    prev = None
    for j, arr in enumerate(iter_pmfs(dist, half, max_cells=max_cells)):
        if 2 * j <= kmax:
            out[2 * j] = np.vdot(arr, _reflect(arr))
        if prev is not None and 2 * j - 1 <= kmax:
            out[2 * j - 1] = np.vdot(prev, _reflect(arr))
        prev = arr
    return out


def _reflect(arr: np.ndarray) -> np.ndarray:
    return arr[(slice(None, None, -1),) * arr.ndim]


def _one_dim_returns(steps: np.ndarray, probs: np.ndarray, kmax: int) -> np.ndarray:
    """Return probabilities of a 1-d walk with the given (conditional) step law."""
    m = int(np.abs(steps).max())
    half = (kmax + 1) // 2
    radius = half * m
    side = 2 * radius + 1
    arr = np.zeros(side)
    arr[radius] = 1.0
    out = np.zeros(kmax + 1)
    prev = None
    for j in range(half + 1):
        if j:
            nxt = np.zeros(side)
            for s, q in zip(steps, probs):
                dst, src = _box_slices((int(s),), side)
                nxt[dst] += q * arr[src]
            arr = nxt
        if 2 * j <= kmax:
            out[2 * j] = np.dot(arr, arr[::-1])
        if prev is not None and 2 * j - 1 <= kmax:
            out[2 * j - 1] = np.dot(prev, arr[::-1])
        prev = arr
    return out


def _binomial_mix(ra: np.ndarray, rb: np.ndarray, q: float) -> np.ndarray:
    """Return law of a walk that moves like A w.p. q and like B otherwise."""
    from scipy.special import gammaln

    kmax = len(ra) - 1
    lg = gammaln(np.arange(kmax + 2))
    jj = np.arange(kmax + 1)
    log_q, log_1q = np.log(q), np.log1p(-q)
    out = np.empty(kmax + 1)
    for k in range(kmax + 1):
        j = jj[: k + 1]
        logw = lg[k + 1] - lg[j + 1] - lg[k - j + 1] + j * log_q + (k - j) * log_1q
        out[k] = np.dot(np.exp(logw), ra[: k + 1] * rb[k::-1])
    return out


def _returns_axis_decomposed(dist: StepDistribution, kmax: int) -> np.ndarray:
    groups: list[tuple[float, np.ndarray]] = []
    for axis in range(dist.dim):
        on_axis = dist.vectors[:, axis] != 0
        weight = float(dist.probs[on_axis].sum())
        if weight == 0.0:
            raise ValueError("axis-aligned walk never moves along some axis")
        steps = dist.vectors[on_axis, axis]
        groups.append((weight, _one_dim_returns(steps, dist.probs[on_axis] / weight, kmax)))
    if dist.laziness > 0:
        groups.append((dist.laziness, np.ones(kmax + 1)))
    weight, acc = groups[0]
    for w, r in groups[1:]:
        acc = _binomial_mix(acc, r, weight / (weight + w))
        weight += w
    return acc


def lattice_points(d: int, radius: int) -> Iterator[tuple[int, ...]]:
    """All x in Z^d with |x|_inf <= radius."""
    return itertools.product(range(-radius, radius + 1), repeat=d)
