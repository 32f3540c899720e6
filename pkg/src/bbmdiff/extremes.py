"""Centered maxima, fitted max laws and extremal point clouds."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .bbm import BbmRealization
from .embedding import leaf_gammas
from .measures import SQRT2, derivative_martingale, mckean_weights


class PositivityError(ValueError):
    def __init__(self, fraction: float):
        super().__init__(f"only {fraction:.3f} of the martingale samples are positive")
        self.fraction = fraction


def centering(t: float, kind: str = "critical") -> float:
    if not t > 0:
        raise ValueError(f"centering needs t > 0, got {t}")
    if kind == "critical":
        return SQRT2 * t - 3.0 / (2.0 * SQRT2) * math.log(t)
    if kind == "two_speed":
        return SQRT2 * t - 1.0 / (2.0 * SQRT2) * math.log(t)
    raise ValueError(f"unknown centering kind {kind!r}")


def mixture_cdf(x, V, C: float):
    """``x -> mean_i exp(-C V_i e^{-sqrt2 x})``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = np.asarray(V, dtype=float)
    # log-domain sum keeps large V and very negative x finite
    e = np.exp(-SQRT2 * x)
    out = np.empty(x.size)
    for lo in range(0, x.size, 512):
        blk = e[lo:lo + 512]
        out[lo:lo + 512] = np.exp(-C * np.outer(blk, V)).mean(axis=1)
    return out


def _ks(sample_sorted: np.ndarray, cdf_vals: np.ndarray) -> float:
    n = sample_sorted.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf_vals), np.max(cdf_vals - (i - 1) / n)))


@dataclass
class MaxLawFit:
    centered_max: np.ndarray
    V: np.ndarray
    C: float
    ks: float
    positive_fraction: float
    kind: str
    t: float

    def cdf(self, x):
        return mixture_cdf(x, self.V, self.C)

    def to_json(self) -> str:
        return json.dumps({"C": self.C, "ks": self.ks, "n": int(self.centered_max.size),
                           "positive_fraction": self.positive_fraction, "kind": self.kind,
                           "t": self.t}, indent=2)


def fit_max_law(centered_max, V, kind: str = "critical", t: float = float("nan"),
                min_positive: float = 0.5) -> MaxLawFit:
    """Fit ``C`` by minimizing the KS distance to the ``V``-mixture.

    Nonpositive ``V`` cannot enter an exponential mixture; they are dropped
    from the mixture (the empirical CDF keeps every sample).  When they are the
    majority the fit is refused.
    """
    x = np.sort(np.asarray(centered_max, dtype=float))
    V = np.asarray(V, dtype=float)
    if x.size != V.size or x.size == 0:
        raise ValueError("need equally many maxima and martingale samples")
    pos = V > 0
    frac = float(pos.mean())
    if frac < min_positive:
        raise PositivityError(frac)
    Vp = V[pos]

    def ks_of(logC):
        return _ks(x, mixture_cdf(x, Vp, math.exp(logC)))

    # starting point from matching medians of a pure Gumbel
    med = float(np.median(x))
    c0 = math.log(math.log(2.0)) + SQRT2 * med - math.log(float(np.median(Vp)))
    grid = c0 + np.linspace(-4, 4, 33)
    vals = [ks_of(g) for g in grid]
    g = grid[int(np.argmin(vals))]
    res = minimize_scalar(ks_of, bounds=(g - 0.25, g + 0.25), method="bounded",
                          options={"xatol": 1e-6})
    logC = float(res.x) if res.fun <= min(vals) else float(g)
    C = math.exp(logC)
    return MaxLawFit(x, Vp, C, ks_of(logC), frac, kind, t)


def two_speed_mckean(real: BbmRealization) -> float:
    """``Y^{sigma1}`` evaluated at the speed switch ``b u``.

    Before the switch positions are ``sigma1`` times a standard Brownian
    motion, so the standard-BBM McKean summand reads ``exp(sqrt2 x - (1 + sigma1^2) s)``.
    """
    sp = real.speed
    if sp is None:
        raise ValueError("realization has unit speed")
    s = sp.switch_time
    sigma1 = math.sqrt(sp.sigma1_sq)
    _, x = real.positions_at(s)
    return math.fsum(mckean_weights(x / sigma1, sigma1, s))


def empirical_max_law(realizations, t: float | None = None, kind: str = "critical") -> MaxLawFit:
    """Fit the max law from realizations at their common horizon ``t``."""
    reals = list(realizations)
    if len(reals) < 500:
        raise ValueError(f"need at least 500 realizations, got {len(reals)}")
    t = reals[0].horizon if t is None else t
    m = centering(t, kind)
    mx = np.array([r.leaf_positions.max() for r in reals]) - m
    if kind == "critical":
        V = np.array([derivative_martingale(r) for r in reals])
    else:
        V = np.array([two_speed_mckean(r) for r in reals])
    return fit_max_law(mx, V, kind, t)


def gumbel_sample(gen: np.random.Generator, C: float, n: int, V=None) -> np.ndarray:
    """Draws from ``P(X <= x) = exp(-C V e^{-sqrt2 x})`` (``V = 1`` by default)."""
    V = 1.0 if V is None else np.asarray(V, dtype=float)
    u = gen.random(n)
    return (np.log(C * V) - np.log(-np.log(u))) / SQRT2


@dataclass
class PointCloud:
    gamma: np.ndarray
    height: np.ndarray
    thinned: np.ndarray

    def __len__(self) -> int:
        return self.gamma.size

    @property
    def thinned_count(self) -> int:
        return int(self.thinned.sum())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("gamma,height,cluster_max\n")
            for a, b, c in zip(self.gamma, self.height, self.thinned):
                fh.write(f"{a:.17g},{b:.17g},{int(c)}\n")


def cluster_maxima(gam: np.ndarray, height: np.ndarray, radius: float) -> np.ndarray:
    """Greedy thinning: keep the highest point, drop its ``radius``-ball in gamma, repeat."""
    keep = np.zeros(gam.size, dtype=bool)
    order = np.argsort(-height, kind="stable")
    taken = np.zeros(gam.size, dtype=bool)
    by_gamma = np.argsort(gam, kind="stable")
    gs = gam[by_gamma]
    for i in order:
        if taken[i]:
            continue
        keep[i] = True
        lo = np.searchsorted(gs, gam[i] - radius, side="left")
        hi = np.searchsorted(gs, gam[i] + radius, side="right")
        taken[by_gamma[lo:hi]] = True
    return keep


def extremal_point_process(real: BbmRealization, t: float | None = None, D: float = 2.0,
                           radius: float | None = None, kind: str = "critical") -> PointCloud:
    """Points ``(gamma(x_k(t)), x_k(t) - m(t))`` with height at least ``-D``.

    The thinned version keeps one point per cluster, clusters being gamma-balls
    of radius ``exp(-t/2)`` unless given.
    """
    if t is not None and t != real.horizon:
        raise ValueError("point process is read at the horizon")
    t = real.horizon
    if not D > 0:
        raise ValueError("depth must be positive")
    h = real.leaf_positions - centering(t, kind)
    sel = h >= -D
    g = leaf_gammas(real.tree)[sel]
    h = h[sel]
    rad = math.exp(-t / 2.0) if radius is None else radius
    return PointCloud(g, h, cluster_maxima(g, h, rad))
