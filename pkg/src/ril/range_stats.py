"""Path statistics: ranges, local times, J_n, I_n, block quantities, hitting times.

Ranges and local times include time 0 throughout, so S[0, n] always holds the
origin and the local times of a length-n path sum to n + 1.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .lattice_walk import WalkPath, pack_sites


@dataclass(frozen=True)
class SiteSet:
    sites: frozenset[int]

    @property
    def count(self) -> int:
        return len(self.sites)

    def __contains__(self, key: int) -> bool:
        return key in self.sites

    def __len__(self) -> int:
        return len(self.sites)


@dataclass(frozen=True)
class LocalTimeMap:
    counts: dict[int, int]

    def __getitem__(self, key: int) -> int:
        return self.counts.get(key, 0)

    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class BlockPartition:
    """Consecutive blocks [(i-1) t_n, i t_n], i = 1..a, sharing endpoints."""

    t_n: int
    a: int

    def __post_init__(self) -> None:
        if self.t_n < 1 or self.a < 1:
            raise ValueError(f"need t_n >= 1 and a >= 1, got t_n={self.t_n}, a={self.a}")

    @classmethod
    def from_bn(cls, n: int, b_n: float) -> "BlockPartition":
        """t_n = floor(n / b_n) and [b_n] blocks."""
        if b_n < 1:
            raise ValueError(f"b_n must be >= 1, got {b_n}")
        return cls(t_n=int(n // b_n), a=int(b_n))

    @property
    def span(self) -> int:
        return self.a * self.t_n

    @property
    def blocks(self) -> list[tuple[int, int]]:
        return [((i - 1) * self.t_n, i * self.t_n) for i in range(1, self.a + 1)]


def _check_interval(path: WalkPath, lo: int, hi: int) -> None:
    if not 0 <= lo <= hi <= path.n:
        raise IndexError(f"interval [{lo}, {hi}] outside [0, {path.n}]")


def range_of(path: WalkPath, interval: tuple[int, int] | None = None) -> SiteSet:
    """Distinct sites visited at times lo..hi (inclusive)."""
    lo, hi = (0, path.n) if interval is None else interval
    _check_interval(path, lo, hi)
    return SiteSet(frozenset(path.keys[lo : hi + 1].tolist()))


def local_times(path: WalkPath, n: int | None = None) -> LocalTimeMap:
    n = path.n if n is None else n
    _check_interval(path, 0, n)
    return LocalTimeMap(dict(Counter(path.keys[: n + 1].tolist())))


def _intersection_size(sets: Sequence[frozenset[int]]) -> int:
    # probe the smallest range against the others
    ordered = sorted(sets, key=len)
    first, rest = ordered[0], ordered[1:]
    return sum(1 for x in first if all(x in s for s in rest))


def intersect_ranges(paths: Sequence[WalkPath], n: int) -> int:
    """J_n: number of sites visited by every walk up to time n."""
    if len(paths) < 2:
        raise ValueError("J_n needs at least two walks")
    return _intersection_size([range_of(p, (0, n)).sites for p in paths])


def intersection_local_time(paths: Sequence[WalkPath], n: int) -> int:
    """I_n = sum_x prod_j l_j(n, x), the number of coinciding time tuples."""
    if len(paths) < 2:
        raise ValueError("I_n needs at least two walks")
    maps = sorted((local_times(p, n).counts for p in paths), key=len)
    total = 0
    for x, c in maps[0].items():
        prod = c
        for other in maps[1:]:
            prod *= other.get(x, 0)
            if not prod:
                break
        total += prod
    return total


def block_quantity_A(paths: Sequence[WalkPath], blocks: BlockPartition) -> int:
    """A = sum_x prod_j #{blocks i : x in S_j(Delta_i)}."""
    per_walk: list[Counter] = []
    for p in paths:
        c: Counter = Counter()
        for lo, hi in blocks.blocks:
            c.update(range_of(p, (lo, hi)).sites)
        per_walk.append(c)
    per_walk.sort(key=len)
    total = 0
    for x, c in per_walk[0].items():
        prod = c
        for other in per_walk[1:]:
            prod *= other.get(x, 0)
        total += prod
    return total


def cross_block_intersections(path: WalkPath, blocks: BlockPartition) -> int:
    """sum_{j<k} #{S(Delta_j) cap S(Delta_k)}."""
    ranges = [range_of(path, b).sites for b in blocks.blocks]
    return sum(_intersection_size([ranges[j], ranges[k]])
               for j, k in combinations(range(len(ranges)), 2))


def first_hitting_time(path: WalkPath, x: Sequence[int]) -> int | None:
    key = int(pack_sites(np.asarray(x, dtype=np.int64)[None, :])[0])
    hits = np.flatnonzero(path.keys == key)
    return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# array kernels for many replicates at once
#
# A batch holds R replicates of one walk index as an (R, L, d) position array.
# Sites are re-packed with just enough bits for the batch's coordinate range
# and the replicate number goes in the high bits, so one int64 identifies a
# (replicate, site) pair and every kernel is a 1-d sort/merge.

@dataclass(frozen=True)
class BatchPacking:
    radius: int
    dim: int

    @property
    def bits(self) -> int:
        return int(2 * self.radius + 1).bit_length()

    @property
    def shift(self) -> int:
        return self.bits * self.dim

    @property
    def max_replicates(self) -> int:
        return 1 << max(0, 63 - self.shift)

    def pack(self, positions: np.ndarray) -> np.ndarray:
        """Combined keys of shape (R, L) for positions of shape (R, L, d)."""
        positions = np.asarray(positions, dtype=np.int64)
        n_rep = positions.shape[0]
        if self.shift > 63:
            raise OverflowError(f"coordinate range {self.radius} too wide for d={self.dim}")
        if n_rep > self.max_replicates:
            raise OverflowError(f"{n_rep} replicates exceed the packing capacity")
        if positions.size and np.abs(positions).max() > self.radius:
            raise OverflowError("position outside the packing radius")
        keys = np.zeros(positions.shape[:2], dtype=np.int64)
        for i in range(self.dim):
            keys |= (positions[..., i] + self.radius) << (self.bits * i)
        if self.shift < 63:
            keys |= np.arange(n_rep, dtype=np.int64)[:, None] << self.shift
        return keys

    def replicate_of(self, keys: np.ndarray) -> np.ndarray:
        if self.shift >= 63:
            return np.zeros(keys.shape, dtype=np.int64)
        return keys >> self.shift


def _product_over_walks(tables: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    """Intersect sorted unique key tables, multiplying their weights."""
    keys, w = tables[0]
    w = w.astype(np.int64)
    for k2, w2 in tables[1:]:
        keys, ia, ib = np.intersect1d(keys, k2, assume_unique=True, return_indices=True)
        w = w[ia] * w2[ib]
    return keys, w


def batch_J(walk_keys: Sequence[np.ndarray], packing: BatchPacking, n_rep: int,
            upto: int | None = None) -> np.ndarray:
    """J per replicate; ``walk_keys[j]`` has shape (R, L) of combined keys."""
    tables = []
    for kj in walk_keys:
        u = np.unique(kj[:, : None if upto is None else upto + 1])
        tables.append((u, np.ones(u.shape, dtype=np.int64)))
    keys, w = _product_over_walks(tables)
    return np.bincount(packing.replicate_of(keys), weights=w, minlength=n_rep).astype(np.int64)


def batch_I(walk_keys: Sequence[np.ndarray], packing: BatchPacking, n_rep: int) -> np.ndarray:
    """Intersection local time per replicate."""
    tables = [np.unique(kj, return_counts=True) for kj in walk_keys]
    keys, w = _product_over_walks(tables)
    return np.bincount(packing.replicate_of(keys), weights=w, minlength=n_rep).astype(np.int64)


def _block_counts(kj: np.ndarray, blocks: BlockPartition) -> tuple[np.ndarray, np.ndarray]:
    per_block = [np.unique(kj[:, lo : hi + 1]) for lo, hi in blocks.blocks]
    return np.unique(np.concatenate(per_block), return_counts=True)


def batch_A(walk_keys: Sequence[np.ndarray], blocks: BlockPartition, packing: BatchPacking,
            n_rep: int) -> np.ndarray:
    """Block quantity A per replicate."""
    keys, w = _product_over_walks([_block_counts(kj, blocks) for kj in walk_keys])
    return np.bincount(packing.replicate_of(keys), weights=w, minlength=n_rep).astype(np.int64)


def batch_cross_block(kj: np.ndarray, blocks: BlockPartition, packing: BatchPacking,
                      n_rep: int) -> np.ndarray:
    """Sum of pairwise block-range intersections per replicate for one walk index."""
    # a site in c blocks contributes C(c, 2) pairs
    keys, c = _block_counts(kj, blocks)
    pairs = c * (c - 1) // 2
    return np.bincount(packing.replicate_of(keys), weights=pairs, minlength=n_rep).astype(np.int64)


def _first_visits(kj: np.ndarray, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique keys with the first time each was visited."""
    tbits = max(1, int(length - 1).bit_length())
    if kj.size and int(kj.max()).bit_length() + tbits <= 63:
        # time in the low bits: a plain sort puts each key's first visit first
        s = np.sort(((kj << tbits) | np.arange(length, dtype=np.int64)).ravel())
        k = s >> tbits
        first = np.empty(k.shape, dtype=bool)
        first[:1] = True
        np.not_equal(k[1:], k[:-1], out=first[1:])
        return k[first], s[first] & ((1 << tbits) - 1)
    u, idx = np.unique(kj, return_index=True)
    return u, idx % length


def batch_J_along(walk_keys: Sequence[np.ndarray], packing: BatchPacking, n_rep: int,
                  checkpoints: Sequence[int]) -> np.ndarray:
    """J at every checkpoint for every replicate, shape (R, len(checkpoints)).

    A site enters the intersection at the latest of the walks' first visits.
    """
    length = walk_keys[0].shape[1]
    tables = [_first_visits(kj, length) for kj in walk_keys]
    keys, t = tables[0]
    for k2, t2 in tables[1:]:
        keys, ia, ib = np.intersect1d(keys, k2, assume_unique=True, return_indices=True)
        t = np.maximum(t[ia], t2[ib])
    rep = packing.replicate_of(keys)
    out = np.empty((n_rep, len(checkpoints)), dtype=np.int64)
    for c, n in enumerate(checkpoints):
        out[:, c] = np.bincount(rep[t <= n], minlength=n_rep)
    return out
