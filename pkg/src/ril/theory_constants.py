"""Closed-form constants and rate functions for range-intersection moderate deviations.

Covered (d, p) pairs are those with p(d-2) < d and d >= 2: d = 2 with any
p >= 2, and d = 3 with p = 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import zeta

from . import gagliardo_nirenberg as gn
from .gagliardo_nirenberg import ConvergenceError, check_admissible
from .lattice_walk import (
    StepDistribution, char_fn, covariance, in_lattice_coordinates, return_probabilities,
)

__all__ = [
    "RateParams", "PsiSpec", "GammaEstimate", "gamma_escape_sum", "gamma_escape_integral",
    "gn_constant", "psi_md", "psi_spec", "legendre_rate", "md_rate", "lil_constant",
    "theta0", "check_distinguishable", "rate_params_for", "ConvergenceError",
]

gn_constant = gn.gn_constant


@dataclass(frozen=True)
class RateParams:
    d: int
    p: int
    det_gamma: float
    kappa: float
    gamma_escape: float | None = None

    def __post_init__(self) -> None:
        check_admissible(self.d, self.p)
        if self.det_gamma <= 0 or self.kappa <= 0:
            raise ValueError("det_gamma and kappa must be positive")
        if self.d == 3:
            if self.gamma_escape is None or not 0 < self.gamma_escape <= 1:
                raise ValueError("d = 3 needs an escape probability in (0, 1]")


@dataclass(frozen=True)
class PsiSpec:
    func: Callable[[float], float]
    p: int
    convex_nondecreasing: bool = True

    def __call__(self, theta: float) -> float:
        return self.func(theta)


# ---------------------------------------------------------------------------
# escape probability

@dataclass
class GammaEstimate:
    estimate: float
    error_bound: float
    partial_sum: float
    tail: float
    K: int
    period: int
    fit_c: float | None = None

    def metadata(self) -> dict:
        return {"method": "exact return sum + fitted c k^(-d/2) tail", "K": self.K,
                "partial_sum": self.partial_sum, "tail": self.tail,
                "error_bound": self.error_bound, "period": self.period}


def gamma_escape_sum(dist: StepDistribution, K: int, extrapolate: bool = True) -> GammaEstimate:
    """Escape probability from the Green-function sum of exact return probabilities.

    The tail beyond K comes from fitting c k^(-d/2) to the last decade of
    non-zero returns; its error bound is ten times the fitted tail. With
    ``extrapolate=False`` the result is the upper bound 1 / sum_{k<=K}.
    """
    d = dist.dim
    if d < 3:
        raise ValueError("the return sum diverges for d <= 2 (recurrent walk)")
    if K < 0:
        raise ValueError("K must be >= 0")
    returns = return_probabilities(dist, K)
    partial = float(returns.sum())
    support = [k for k in range(1, K + 1) if returns[k] > 0]
    period = reduce(math.gcd, support, 0) or 1
    if not extrapolate:
        est = 1.0 / partial
        return GammaEstimate(est, est, partial, 0.0, K, period)
    if K < 100:
        raise ValueError("tail extrapolation needs K >= 100")
    ks = np.array([k for k in support if k >= K // 10])
    log_c = float(np.mean(np.log(returns[ks]) + 0.5 * d * np.log(ks)))
    c = math.exp(log_c)
    # sum over multiples j*period > K of c (j period)^(-d/2)
    j0 = K // period + 1
    tail = float(c * period ** (-0.5 * d) * zeta(0.5 * d, j0))
    est = 1.0 / (partial + tail)
    lo = 1.0 / (partial + 11.0 * tail)
    hi = 1.0 / max(partial + tail - 10.0 * tail, partial)
    return GammaEstimate(est, max(est - lo, hi - est), partial, tail, K, period, c)


def _duffy_green_integral(dist: StepDistribution, n: int) -> float:
    """(2 pi)^-d times the integral of 1/(1 - phi) over [-pi, pi]^d.

    The cube is cut into 2d pyramids with apex at the singular point 0. On
    the pyramid over the face lambda_a = +-pi the map lambda = t * w, w on the
    face, has Jacobian pi t^(d-1), which cancels the 1/|lambda|^2 blow-up.
    """
    d = dist.dim
    x, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    u = np.pi * x
    wu = np.pi * w
    total = 0.0
    grids = np.meshgrid(*([u] * (d - 1)), indexing="ij")
    face_w = reduce(np.multiply.outer, [wu] * (d - 1)) if d > 1 else np.array(1.0)
    for axis in range(d):
        for sign in (1.0, -1.0):
            pts = np.empty(grids[0].shape + (d,)) if d > 1 else np.empty((d,))
            others = [i for i in range(d) if i != axis]
            for g, i in zip(grids, others):
                pts[..., i] = g
            pts[..., axis] = sign * np.pi
            acc = 0.0
            for ti, wi in zip(t, wt):
                one_minus = 1.0 - char_fn(dist, ti * pts)
                acc += wi * np.pi * ti ** (d - 1) * np.sum(face_w / one_minus)
            total += acc
    return total / (2 * np.pi) ** d


def gamma_escape_integral(dist: StepDistribution, quad_points: int = 48,
                          rtol: float = 1e-7) -> float:
    """Escape probability as the inverse of the lattice Green-function integral.

    Gauss-Legendre on each Duffy pyramid; the value at ``quad_points`` must
    agree with the value at 3/4 of that resolution to ``rtol``. A walk living
    on a proper sublattice is first rewritten in a basis of that sublattice,
    otherwise 1 - phi would vanish away from the origin too.
    """
    if dist.dim < 3:
        raise ValueError("the Green-function integral diverges for d <= 2")
    dist = in_lattice_coordinates(dist)
    coarse_n = max(4, (3 * quad_points) // 4)
    fine = _duffy_green_integral(dist, quad_points)
    coarse = _duffy_green_integral(dist, coarse_n)
    if abs(fine - coarse) > rtol * abs(fine):
        raise ConvergenceError(
            f"Green integral not converged: {coarse!r} at {coarse_n} points vs "
            f"{fine!r} at {quad_points}"
        )
    return 1.0 / fine


def green_integral(dist: StepDistribution, quad_points: int = 48) -> float:
    """The raw integral (2 pi)^-d int 1/(1 - phi), without the convergence check."""
    return _duffy_green_integral(dist, quad_points)


# ---------------------------------------------------------------------------
# Psi, rate functions, LIL constants

def _require_supported(params: RateParams) -> None:
    if not (params.d == 2 or (params.d == 3 and params.p == 2)):
        raise ValueError(f"unsupported (d, p) = ({params.d}, {params.p})")


def psi_md(theta: float, params: RateParams) -> float:
    """Limit of the scaled log moment series for J_n (the d=2 and d=3 forms)."""
    _require_supported(params)
    if theta < 0:
        raise ValueError("theta must be >= 0")
    p = params.p
    if params.d == 2:
        return ((1 / p) * (2 * (p - 1) / p) ** (p - 1) * (2 * math.pi * theta) ** p
                * math.sqrt(params.det_gamma) * params.kappa ** (2 * p))
    return (2 * (3 / 4) ** 3 * (params.gamma_escape * theta) ** 4 / params.det_gamma
            * params.kappa ** 8)


def psi_spec(params: RateParams) -> PsiSpec:
    return PsiSpec(lambda th: psi_md(th, params), params.p)


def legendre_rate(psi: PsiSpec, lam: float, rtol: float = 1e-10) -> float:
    """I(lambda) = p sup_{theta > 0} {lambda^(1/p) theta - Psi(theta)}.

    theta is bracketed by doubling (or halving) from 1, then refined by
    golden-section search in log theta.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    p = psi.p
    a = lam ** (1.0 / p)

    def objective(s: float) -> float:
        th = math.exp(s)
        return a * th - psi(th)

    s0 = 0.0
    f0 = objective(s0)
    step = math.log(2.0)
    if objective(s0 + step) > f0:
        prev, cur, fcur = s0, s0 + step, objective(s0 + step)
        for _ in range(2000):
            nxt = cur + step
            fn = objective(nxt)
            if not math.isfinite(fn) or fn > 1e300:
                break
            if fn < fcur:
                bracket = (prev, cur, nxt)
                break
            prev, cur, fcur = cur, nxt, fn
        else:
            raise ValueError("Legendre objective is unbounded: Psi grows sublinearly")
        if not math.isfinite(fn) or fn > 1e300:
            raise ValueError("Legendre objective is unbounded: Psi grows sublinearly")
    else:
        prev, cur, fcur = s0 + step, s0, f0
        for _ in range(2000):
            nxt = cur - step
            fn = objective(nxt)
            if fn < fcur:
                bracket = (nxt, cur, prev)
                break
            prev, cur, fcur = cur, nxt, fn
            if cur < -700:
                # supremum approached as theta -> 0
                return p * max(0.0, fcur)
        else:  # pragma: no cover
            return p * max(0.0, fcur)
    res = minimize_scalar(lambda s: -objective(s), bracket=bracket, method="golden",
                          options={"xtol": max(rtol, 1e-14)})
    best = max(-res.fun, fcur)
    return p * max(0.0, best)


def md_rate(params: RateParams, lam: float) -> float:
    """Closed-form moderate-deviation rate (positive; the log-probability limit is its negative)."""
    _require_supported(params)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    p = params.p
    if params.d == 2:
        return ((p / 2) * (2 * math.pi) ** (-p / (p - 1))
                * params.det_gamma ** (-1 / (2 * (p - 1)))
                * params.kappa ** (-2 * p / (p - 1)) * lam ** (1 / (p - 1)))
    return (params.det_gamma ** (1 / 3) * params.gamma_escape ** (-4 / 3)
            * params.kappa ** (-8 / 3) * lam ** (2 / 3))


def lil_constant(params: RateParams) -> float:
    """The a.s. limsup of the LIL-normalised J_n.

    It is the level where the rate equals one: md_rate(params, lil_constant) == 1.
    """
    _require_supported(params)
    p = params.p
    if params.d == 2:
        return ((2 * math.pi) ** p * (2 / p) ** (p - 1) * math.sqrt(params.det_gamma)
                * params.kappa ** (2 * p))
    return params.gamma_escape ** 2 / math.sqrt(params.det_gamma) * params.kappa ** 4


def theta0(params: RateParams, lambda0: float) -> float:
    """The theta at which lambda0 maximises lambda^(1/p) theta - I(lambda)/p (d = 2)."""
    if params.d != 2:
        raise ValueError("theta0 is only available for d = 2")
    p = params.p
    return (0.5 * p / (p - 1) * (2 * math.pi) ** (-p / (p - 1))
            * params.det_gamma ** (-1 / (2 * (p - 1)))
            * params.kappa ** (-2 * p / (p - 1)) * lambda0 ** (1 / (p * (p - 1))))


@dataclass
class DistinguishabilityReport:
    ok: bool
    margin: float
    argmax: float
    lambda0: float
    theta0: float
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)


def distinguish_objective(params: RateParams, th0: float, lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    rate = np.array([md_rate(params, float(x)) for x in lam.ravel()]).reshape(lam.shape)
    return lam ** (1 / params.p) * th0 - rate / params.p


def check_distinguishable(params: RateParams, lambda0: float,
                          grid: Sequence[float] | None = None) -> DistinguishabilityReport:
    """Confirm lambda0 is the unique grid maximiser of lambda^(1/p) theta0 - I(lambda)/p."""
    if lambda0 <= 0:
        raise ValueError("lambda0 must be positive")
    th0 = theta0(params, lambda0)
    lam = np.linspace(4 * lambda0 / 400, 4 * lambda0, 400) if grid is None else np.asarray(grid, float)
    vals = distinguish_objective(params, th0, lam)
    order = np.argsort(vals)[::-1]
    best = int(order[0])
    nearest = int(np.argmin(np.abs(lam - lambda0)))
    margin = float(vals[best] - vals[order[1]]) if lam.size > 1 else math.inf
    return DistinguishabilityReport(best == nearest and margin > 0, margin, float(lam[best]),
                                    lambda0, th0, lam, vals)


# ---------------------------------------------------------------------------

def rate_params_for(dist: StepDistribution, p: int, kappa: float | None = None,
                    gamma_escape: float | None = None, quad_points: int = 48) -> RateParams:
    """Bundle the walk-dependent inputs of every closed form."""
    _, det = covariance(dist)
    d = dist.dim
    check_admissible(d, p)
    if kappa is None:
        kappa = gn.kappa(d, p)
    if d == 3 and gamma_escape is None:
        gamma_escape = gamma_escape_integral(dist, quad_points)
    return RateParams(d, p, det, kappa, gamma_escape if d == 3 else None)
