"""Bounded-support densities, conditional sampling and Voronoi moments.

Two concrete families are provided:

* :class:`PiecewiseConstant1D` -- a step density on an interval.  Voronoi
  cells of 1-D centers are intervals split at midpoints of the sorted centers,
  so masses, means and cost contributions have closed forms.  This is the
  ``exact`` oracle used throughout the test-suite.
* :class:`TruncatedGaussianMixture` -- an isotropic Gaussian mixture in
  ``R^d`` restricted to the ball ``B(0, R)`` by rejection.

Moments for anything else come from a Monte Carlo oracle.  MC evaluations
draw a fixed sample set per ``(oracle seed, stream)``, so repeated
evaluations at different centers use common random numbers, and the reduction
order is the sample order (results are reproducible).
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .core import (
    CapabilityError,
    ConfigError,
    InputError,
    as_centers,
    make_rng,
    require_nondegenerate,
)

__all__ = [
    "Distribution",
    "PiecewiseConstant1D",
    "TruncatedGaussianMixture",
    "uniform",
    "distribution_from_spec",
    "MomentOracle",
    "Moments",
    "EmptyCellError",
    "SampleStream",
    "sample",
    "sample_in_cell",
    "voronoi_moments",
    "voronoi_masses",
    "voronoi_means",
    "assign",
    "MAX_REJECTION_TRIES",
]

MAX_REJECTION_TRIES = 10**6


class EmptyCellError(CapabilityError):
    """Conditional sampling hit the retry cap; the cell is treated as mass-zero."""


class Distribution:
    """A density with support in the closed ball ``B(0, R)``."""

    dimension: int
    support_radius: float
    exact_moments: bool = False

    def sample_batch(self, rng: np.random.Generator, m: int) -> np.ndarray:
        raise NotImplementedError

    def density_bound(self) -> float:
        """An upper bound on the density over its support."""
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class PiecewiseConstant1D(Distribution):
    """Step density on ``[breakpoints[0], breakpoints[-1]]``."""

    exact_moments = True
    dimension = 1

    def __init__(self, breakpoints, densities, radius: Optional[float] = None):
        b = np.asarray(breakpoints, dtype=np.float64)
        h = np.asarray(densities, dtype=np.float64)
        if b.ndim != 1 or b.size < 2:
            raise ConfigError("piecewise1d needs at least two breakpoints")
        if h.shape != (b.size - 1,):
            raise ConfigError("piecewise1d needs one density per interval")
        if np.any(np.diff(b) <= 0):
            raise ConfigError("piecewise1d breakpoints must be strictly increasing")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ConfigError("piecewise1d densities must be finite and nonnegative")
        masses = h * np.diff(b)
        total = math.fsum(masses)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"piecewise1d total mass is {total!r}, expected 1")
        r_min = float(max(abs(b[0]), abs(b[-1])))
        if radius is None:
            radius = r_min
        elif radius < r_min:
            raise ConfigError(f"radius {radius} does not contain the support [{b[0]}, {b[-1]}]")
        self.breakpoints = b
        self.densities = h
        self.support_radius = float(radius)
        self._cum = np.concatenate([[0.0], np.cumsum(masses)])
        self._cum[-1] = 1.0
        self._masses = masses

    def __repr__(self):
        return f"PiecewiseConstant1D({self.breakpoints.tolist()}, {self.densities.tolist()})"

    def spec(self) -> dict:
        return {
            "type": "piecewise1d",
            "breakpoints": self.breakpoints.tolist(),
            "densities": self.densities.tolist(),
        }

    def density_bound(self) -> float:
        return float(self.densities.max())

    def cdf(self, x: float) -> float:
        b, h = self.breakpoints, self.densities
        if x <= b[0]:
            return 0.0
        if x >= b[-1]:
            return 1.0
        j = int(np.searchsorted(b, x, side="right")) - 1
        return float(self._cum[j] + h[j] * (x - b[j]))

    def mean(self) -> float:
        b, h = self.breakpoints, self.densities
        return float(np.sum(h * (b[1:] ** 2 - b[:-1] ** 2)) / 2.0)

    def sample_batch(self, rng, m):
        u = rng.random(m)
        # Empty segments share a cumulative value with their neighbor; side="right"
        # skips past them.
        j = np.searchsorted(self._cum, u, side="right") - 1
        j = np.clip(j, 0, self.densities.size - 1)
        h = self.densities[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = self.breakpoints[j] + np.where(h > 0, (u - self._cum[j]) / h, 0.0)
        np.clip(x, self.breakpoints[j], self.breakpoints[j + 1], out=x)
        return x.reshape(m, 1)

    def interval_integrals(self, a: float, b: float, center: float):
        """Return (mass, first moment, int (x - center)^2 p dx) over [a, b]."""
        lo = np.maximum(self.breakpoints[:-1], a)
        hi = np.minimum(self.breakpoints[1:], b)
        ok = hi > lo
        if not np.any(ok):
            return 0.0, 0.0, 0.0
        lo, hi, h = lo[ok], hi[ok], self.densities[ok]
        mass = math.fsum(h * (hi - lo))
        first = math.fsum(h * (hi * hi - lo * lo) / 2.0)
        second = math.fsum(h * ((hi - center) ** 3 - (lo - center) ** 3) / 3.0)
        return mass, first, second


def uniform(low: float = 0.0, high: float = 1.0) -> PiecewiseConstant1D:
    return PiecewiseConstant1D([low, high], [1.0 / (high - low)])


class TruncatedGaussianMixture(Distribution):
    """Isotropic Gaussian mixture conditioned on ``||x|| <= radius``."""

    def __init__(self, weights, means, sigmas, radius: float):
        w = np.asarray(weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
        sig = np.asarray(sigmas, dtype=np.float64).reshape(-1)
        if w.ndim != 1 or w.size < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("gauss_mix weights must be a probability vector")
        if mu.shape[0] != w.size or sig.size != w.size:
            raise ConfigError("gauss_mix needs one mean and one sigma per component")
        if np.any(sig <= 0):
            raise ConfigError("gauss_mix sigmas must be positive")
        if not radius > 0:
            raise ConfigError("gauss_mix radius must be positive")
        self.weights = w
        self.means = mu
        self.sigmas = sig
        self.dimension = mu.shape[1]
        self.support_radius = float(radius)
        self.acceptance = self._acceptance()
        if self.acceptance <= 0.5:
            raise ConfigError(
                f"truncation radius {radius} too tight: acceptance rate {self.acceptance:.3g} <= 0.5"
            )

    def __repr__(self):
        return (
            f"TruncatedGaussianMixture(weights={self.weights.tolist()}, means={self.means.tolist()}, "
            f"sigmas={self.sigmas.tolist()}, radius={self.support_radius})"
        )

    def spec(self) -> dict:
        return {
            "type": "gauss_mix",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(),
            "radius": self.support_radius,
        }

    def _acceptance(self) -> float:
        # ||X||^2 / sigma^2 is noncentral chi-square with d degrees of freedom.
        d = self.dimension
        acc = 0.0
        for wc, mc, sc in zip(self.weights, self.means, self.sigmas):
            x = (self.support_radius / sc) ** 2
            nc = float(mc @ mc) / sc**2
            acc += wc * (stats.chi2.cdf(x, d) if nc == 0 else stats.ncx2.cdf(x, d, nc))
        return float(acc)

    def density_bound(self) -> float:
        peak = np.sum(self.weights * (2 * np.pi * self.sigmas**2) ** (-self.dimension / 2))
        return float(peak / self.acceptance)

    def sample_batch(self, rng, m):
        d, R2 = self.dimension, self.support_radius**2
        out = np.empty((m, d))
        filled = 0
        while filled < m:
            need = m - filled
            n_try = min(MAX_REJECTION_TRIES, int(need / self.acceptance * 1.1) + 16)
            comp = rng.choice(self.weights.size, size=n_try, p=self.weights)
            x = self.means[comp] + self.sigmas[comp, None] * rng.standard_normal((n_try, d))
            x = x[np.einsum("ij,ij->i", x, x) <= R2]
            if x.shape[0] == 0 and n_try == MAX_REJECTION_TRIES:
                raise ConfigError("rejection sampling exceeded the retry cap; truncation radius too tight")
            take = min(need, x.shape[0])
            out[filled : filled + take] = x[:take]
            filled += take
        return out


def distribution_from_spec(spec: dict) -> Distribution:
    """Build a distribution from a tagged config record."""
    if isinstance(spec, Distribution):
        return spec
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("distribution spec must be a mapping with a 'type' key")
    kind = spec["type"]
    try:
        if kind == "piecewise1d":
            return PiecewiseConstant1D(spec["breakpoints"], spec["densities"], spec.get("radius"))
        if kind == "uniform":
            return uniform(spec.get("low", 0.0), spec.get("high", 1.0))
        if kind == "gauss_mix":
            return TruncatedGaussianMixture(spec["weights"], spec["means"], spec["sigmas"], spec["radius"])
    except KeyError as exc:
        raise ConfigError(f"distribution spec of type {kind!r} is missing key {exc}") from exc
    raise ConfigError(f"unknown distribution type {kind!r}")


class SampleStream:
    """Buffered draws from a distribution, consumed one point at a time.

    The buffer is refilled in fixed-size blocks, so the sequence of points is a
    deterministic function of the generator state.
    """

    def __init__(self, dist: Distribution, rng: np.random.Generator, block: int = 4096):
        self.dist = dist
        self.rng = rng
        self.block = block
        self._buf = []
        self._pos = 0
        self.drawn = 0

    def next(self):
        if self._pos >= len(self._buf):
            self._buf = self.dist.sample_batch(self.rng, self.block).tolist()
            self._pos = 0
        x = self._buf[self._pos]
        self._pos += 1
        self.drawn += 1
        return x


def sample(dist: Distribution, rng: np.random.Generator) -> np.ndarray:
    return dist.sample_batch(rng, 1)[0]


def assign(points: np.ndarray, w: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Nearest-center index for each row of ``points`` (lowest index on ties)."""
    points = np.atleast_2d(points)
    out = np.empty(points.shape[0], dtype=np.int64)
    for s in range(0, points.shape[0], chunk):
        x = points[s : s + chunk]
        # Explicit differences (not the expanded dot-product form) keep
        # tie-breaking consistent with nearest_center.
        d2 = np.sum((x[:, None, :] - w[None, :, :]) ** 2, axis=-1)
        out[s : s + chunk] = np.argmin(d2, axis=1)
    return out


def sample_in_cell(dist: Distribution, w, i: int, rng: np.random.Generator,
                   max_tries: int = MAX_REJECTION_TRIES, stream: Optional[SampleStream] = None):
    """Draw from ``dist`` restricted to the Voronoi cell of center ``i``.

    Raises :class:`EmptyCellError` when ``max_tries`` draws all miss the cell.
    """
    w = as_centers(w)
    if not 0 <= i < w.k:
        raise InputError(f"cell index {i} out of range for k={w.k}")
    if w.k == 1:
        return np.asarray(stream.next()) if stream is not None else sample(dist, rng)
    pts = w.points
    if stream is None:
        stream = SampleStream(dist, rng, block=256)
    for _ in range(max_tries):
        x = np.asarray(stream.next())
        d2 = np.sum((pts - x) ** 2, axis=1)
        if int(np.argmin(d2)) == i:
            return x
    raise EmptyCellError(f"no draw landed in cell {i} after {max_tries} tries")


@dataclass
class MomentOracle:
    """How Voronoi moments are computed: ``exact`` or ``mc``.

    ``samples`` is the MC sample count; ``seed``/``stream`` key the MC sample
    set, which is cached per distribution.
    """

    method: str = "exact"
    samples: int = 200_000
    seed: int = 0x5EED
    stream: int = 0
    _cache: "weakref.WeakKeyDictionary" = field(default_factory=weakref.WeakKeyDictionary, repr=False, compare=False)

    def __post_init__(self):
        if self.method == "monte_carlo":
            self.method = "mc"
        if self.method not in ("exact", "mc"):
            raise ConfigError(f"unknown oracle method {self.method!r}")

    def mc_points(self, dist: Distribution) -> np.ndarray:
        pts = self._cache.get(dist)
        if pts is None:
            pts = dist.sample_batch(make_rng(self.seed, self.stream), self.samples)
            pts.setflags(write=False)
            self._cache[dist] = pts
        return pts


@dataclass
class Moments:
    """Per-cell masses, means and cost contributions at a center tuple.

    ``means[i]`` is only meaningful where ``defined[i]`` is true (positive
    mass); elsewhere it holds the center itself.  ``cell_costs[i]`` is
    ``1/2 * int_{V_i} ||c_i - x||^2 p(x) dx`` for the centers ``c`` used.
    """

    masses: np.ndarray
    means: np.ndarray
    defined: np.ndarray
    cell_costs: np.ndarray
    method: str
    mass_stderr: Optional[np.ndarray] = None
    mean_stderr: Optional[np.ndarray] = None
    cost_stderr: Optional[float] = None

    @property
    def cost(self) -> float:
        return math.fsum(self.cell_costs)


def _exact_1d(dist: PiecewiseConstant1D, cells_w: np.ndarray, eval_w: np.ndarray) -> Moments:
    k = cells_w.shape[0]
    c = cells_w[:, 0]
    order = np.argsort(c, kind="stable")
    sc = c[order]
    mids = (sc[:-1] + sc[1:]) / 2.0
    lo_b = np.concatenate([[-np.inf], mids])
    hi_b = np.concatenate([mids, [np.inf]])
    masses = np.zeros(k)
    means = eval_w.copy()
    defined = np.zeros(k, dtype=bool)
    costs = np.zeros(k)
    for pos, i in enumerate(order):
        m0, m1, m2 = dist.interval_integrals(lo_b[pos], hi_b[pos], eval_w[i, 0])
        masses[i] = m0
        costs[i] = 0.5 * m2
        if m0 > 0:
            means[i, 0] = m1 / m0
            defined[i] = True
    return Moments(masses, means, defined, costs, "exact")


def _mc(dist: Distribution, oracle: MomentOracle, cells_w: np.ndarray, eval_w: np.ndarray) -> Moments:
    x = oracle.mc_points(dist)
    n = x.shape[0]
    k = cells_w.shape[0]
    labels = assign(x, cells_w)
    counts = np.bincount(labels, minlength=k)
    masses = counts / n
    sums = np.zeros_like(cells_w)
    np.add.at(sums, labels, x)
    sq = np.zeros_like(cells_w)
    np.add.at(sq, labels, x * x)
    defined = counts > 0
    means = eval_w.copy()
    means[defined] = sums[defined] / counts[defined, None]
    var = np.zeros_like(cells_w)
    var[defined] = np.maximum(sq[defined] / counts[defined, None] - means[defined] ** 2, 0.0)
    mean_se = np.sqrt(var / np.maximum(counts, 1)[:, None])
    half_d2 = 0.5 * np.sum((x - eval_w[labels]) ** 2, axis=1)
    costs = np.bincount(labels, weights=half_d2, minlength=k) / n
    return Moments(
        masses,
        means,
        defined,
        costs,
        "mc",
        mass_stderr=np.sqrt(masses * (1 - masses) / n),
        mean_stderr=mean_se,
        cost_stderr=float(half_d2.std(ddof=1) / math.sqrt(n)),
    )


def voronoi_moments(dist: Distribution, w, oracle: Optional[MomentOracle] = None, w_eval=None) -> Moments:
    """Masses, means and cost terms of the Voronoi cells of ``w``.

    If ``w_eval`` is given the cost terms use those centers while the cells
    stay frozen at ``w`` (the surrogate objective).
    """
    oracle = oracle or MomentOracle()
    w = require_nondegenerate(w)
    if w.d != dist.dimension:
        raise InputError(f"centers have dimension {w.d}, distribution has {dist.dimension}")
    ev = w.points if w_eval is None else as_centers(w_eval).points
    if ev.shape != w.points.shape:
        raise InputError("evaluation centers must match the cell centers' shape")
    if oracle.method == "exact":
        if not isinstance(dist, PiecewiseConstant1D):
            raise CapabilityError(f"exact moments are only available for 1-D piecewise-constant densities, not {type(dist).__name__}")
        return _exact_1d(dist, w.points, np.array(ev, dtype=np.float64))
    return _mc(dist, oracle, w.points, np.array(ev, dtype=np.float64))


def voronoi_masses(dist: Distribution, w, oracle: Optional[MomentOracle] = None) -> np.ndarray:
    return voronoi_moments(dist, w, oracle).masses


def voronoi_means(dist: Distribution, w, oracle: Optional[MomentOracle] = None) -> np.ma.MaskedArray:
    """Cell means; rows of empty cells are masked."""
    m = voronoi_moments(dist, w, oracle)
    mask = np.repeat(~m.defined[:, None], m.means.shape[1], axis=1)
    return np.ma.masked_array(m.means, mask=mask)
