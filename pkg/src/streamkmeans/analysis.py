"""Numerical checks of the convergence argument's computable pieces.

* the horizon ``T_r(m)``: first ``T`` at which ``sum_{m <= n <= T} 1/n``
  exceeds ``r``, and the harmonic partial-sum sandwich it relies on;
* the almost-sure bound on the rate accumulated over one estimator window;
* concentration of the windowed mass estimate around the true mass;
* a local-Lipschitz probe for the cell masses;
* a convergence verdict over an audited trace.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InputError, as_centers, in_support_ball, make_rng, min_separation
from .distributions import Distribution, MomentOracle, PiecewiseConstant1D, distribution_from_spec, voronoi_masses
from .engine import RunConfig, Trace, run
from .objective import cost, fd_gradient, gradient, quadratic_bound, surrogate_cost
from .schedules import GENERALIZED, RateSchedule, t_schedule, window_length

__all__ = [
    "AnalysisConfig",
    "gradient_check",
    "surrogate_bound_check",
    "horizon",
    "horizon_table",
    "horizon_bounds_check",
    "harmonic_bounds",
    "harmonic_sweep",
    "RateBoundCheck",
    "rate_window_bound",
    "accumulated_rate_bound_check",
    "accumulated_rate_checks",
    "worst_case_window_rates",
    "worst_case_check",
    "window_rate_check",
    "thresholds",
    "threshold_value",
    "condition_a",
    "first_eligible_n",
    "ConcentrationConfig",
    "ConcentrationReport",
    "concentration_experiment",
    "area_growth_bound",
    "LipschitzProbe",
    "lipschitz_probe",
    "estimate_lipschitz",
    "known_stationary_points",
    "Verdict",
    "convergence_verdict",
]


@dataclass(frozen=True)
class AnalysisConfig:
    """Constants shared by the analyses.

    ``eps0`` defaults to ten times a pilot run's final gradient norm when
    left as ``None``; ``c`` is derived from ``k``, ``R`` and ``L``.
    """

    r: float = math.log(2)
    eps: float = 0.01
    eps0: Optional[float] = None
    k: int = 2
    R: float = 1.0
    L: float = 1.0
    runs: int = 200
    sigmas: float = 3.0

    def __post_init__(self):
        if not self.r > 0:
            raise InputError("r must be positive")
        if self.eps0 is not None and not self.eps < self.eps0:
            raise InputError("need eps < eps0")
        if self.k < 1 or self.R <= 0 or self.L < 0:
            raise InputError("need k >= 1, R > 0, L >= 0")

    @property
    def c(self) -> float:
        return concentration_constant(self.k, self.R, self.L)

    def a_n(self, n: int, alpha: float, beta: float) -> float:
        return thresholds(n, alpha, beta, self.c)


# -- exact-oracle suites for the gradient and the surrogate -------------------

# A non-uniform density whose breakpoints the random centers straddle.
STEP_DENSITY = {"type": "piecewise1d", "breakpoints": [0.0, 0.3, 0.7, 1.0], "densities": [0.5, 1.75, 0.5]}
DEFAULT_SUITE = ({"type": "uniform", "low": 0.0, "high": 1.0}, STEP_DENSITY)


def _random_tuple(rng, dist: PiecewiseConstant1D, k: int, min_gap: float) -> np.ndarray:
    a, b = dist.breakpoints[0], dist.breakpoints[-1]
    while True:
        w = np.sort(rng.uniform(a, b, size=k))
        if k < 2 or np.min(np.diff(w)) > min_gap:
            return w[:, None]


def gradient_check(configs: int = 200, seed: int = 0, h: float = 1e-5, tol: float = 1e-5,
                   ks=(1, 2, 3), distributions=DEFAULT_SUITE) -> dict:
    """Analytic gradient against central finite differences on random tuples.

    Configurations cycle through ``distributions`` and ``ks``; centers are
    drawn uniformly on the support with pairwise gaps above ``100 h``.
    """
    dists = [distribution_from_spec(d) for d in distributions]
    if not all(isinstance(d, PiecewiseConstant1D) for d in dists):
        raise InputError("gradient_check runs on one-dimensional exact-oracle distributions")
    rng = make_rng(seed, 21)
    oracle = MomentOracle("exact")
    worst = 0.0
    failures = 0
    for c in range(configs):
        dist = dists[c % len(dists)]
        k = ks[(c // len(dists)) % len(ks)]
        w = _random_tuple(rng, dist, k, 100 * h)
        err = float(np.max(np.abs(gradient(dist, w, oracle).vectors - fd_gradient(dist, w, oracle, h).vectors)))
        worst = max(worst, err)
        failures += err >= tol
    return {"configs": configs, "h": h, "tol": tol, "max_error": worst, "failures": int(failures),
            "passed": failures == 0}


def surrogate_bound_check(pairs: int = 1000, seed: int = 0, tol: float = 1e-12, ks=(2, 3),
                          distributions=DEFAULT_SUITE) -> dict:
    """``f(w) <= g(w; w') + tol`` and ``f(w+) <= quadratic bound(w+; w) + tol``."""
    dists = [distribution_from_spec(d) for d in distributions]
    rng = make_rng(seed, 22)
    oracle = MomentOracle("exact")
    worst_g = worst_h = worst_i = math.inf
    bad_g = bad_q = 0
    for c in range(pairs):
        dist = dists[c % len(dists)]
        k = ks[(c // len(dists)) % len(ks)]
        w = _random_tuple(rng, dist, k, 1e-9)
        w2 = _random_tuple(rng, dist, k, 1e-9)
        f = cost(dist, w, oracle).value
        mg = surrogate_cost(dist, w, w2, oracle).value - f
        qb = quadratic_bound(dist, w2, w, oracle)
        f2 = cost(dist, w2, oracle).value
        mh, mi = qb.hessian - f2, qb.identity - f2
        worst_g, worst_h, worst_i = min(worst_g, mg), min(worst_h, mh), min(worst_i, mi)
        bad_g += mg < -tol
        bad_q += (mh < -tol) or (mi < -tol)
    return {"pairs": pairs, "tol": tol, "surrogate_violations": int(bad_g), "quadratic_violations": int(bad_q),
            "surrogate_worst_margin": worst_g, "hessian_bound_worst_margin": worst_h,
            "identity_bound_worst_margin": worst_i, "passed": bad_g == 0 and bad_q == 0}


# -- horizon and harmonic sums -------------------------------------------------


def horizon(r: float, m: int) -> int:
    """``T_r(m)``: the ``T`` with ``sum_{m<=n<T} 1/n <= r < sum_{m<=n<=T} 1/n``."""
    if m < 2:
        raise InputError(f"horizon needs m >= 2, got {m}")
    if not r > 0:
        raise InputError(f"horizon needs r > 0, got {r}")
    s = 0.0
    T = m
    while s + 1.0 / T <= r:
        s += 1.0 / T
        T += 1
    return T


_prefix = np.zeros(1, dtype=np.longdouble)


def _harmonic_prefix(upto: int) -> np.ndarray:
    """``P[j] = sum_{n=1}^{j} 1/n`` in extended precision, for ``j <= upto``."""
    global _prefix
    if _prefix.size <= upto:
        size = max(upto + 1, 2 * _prefix.size)
        terms = np.zeros(size, dtype=np.longdouble)
        terms[1:] = 1.0 / np.arange(1, size, dtype=np.longdouble)
        _prefix = np.cumsum(terms)
    return _prefix


def horizon_table(r: float, ms) -> np.ndarray:
    """Vectorized :func:`horizon` over an array of ``m`` values."""
    ms = np.asarray(ms, dtype=np.int64)
    if ms.size and ms.min() < 2:
        raise InputError("horizon needs m >= 2")
    # T_r(m) <= e^r * m + 1 by the harmonic sandwich; leave headroom.
    P = _harmonic_prefix(int(math.exp(r) * ms.max()) + 16)
    target = P[ms - 1] + np.longdouble(r)
    return np.searchsorted(P, target, side="right").astype(np.int64)


def horizon_bounds_check(r: float, m_max: int = 10_000) -> dict:
    """Compare ``T_r(m) - m`` against ``[alpha (m-1), alpha m]``, ``alpha = e^r - 1``.

    Also reports the weaker lower bound ``T_r(m) - m > alpha (m-1) - 1`` that
    follows directly from the harmonic sandwich.
    """
    ms = np.arange(2, m_max + 1)
    T = horizon_table(r, ms)
    gap = T - ms
    alpha = math.expm1(r)
    lower = alpha * (ms - 1)
    upper = alpha * ms
    low_bad = gap < lower
    up_bad = gap > upper
    weak_bad = ~(gap > lower - 1)
    first_low = int(ms[low_bad][0]) if low_bad.any() else None
    return {
        "r": r,
        "alpha": alpha,
        "m_range": [2, m_max],
        "checked": int(ms.size),
        "lower_violations": int(low_bad.sum()),
        "upper_violations": int(up_bad.sum()),
        "first_lower_violation_m": first_low,
        "weak_lower_violations": int(weak_bad.sum()),
    }


def harmonic_bounds(m: int, m2: int):
    """``(log(m2/m), sum_{m<=n<m2} 1/n, log((m2-1)/(m-1)))`` for ``1 < m < m2``."""
    if not 1 < m < m2:
        raise InputError(f"harmonic_bounds needs 1 < m < m', got m={m}, m'={m2}")
    s = math.fsum(1.0 / n for n in range(m, m2))
    return math.log(m2 / m), s, math.log((m2 - 1) / (m - 1))


def harmonic_sweep(m_max: int = 1000) -> dict:
    """Check the sandwich for every ``m in [2, m_max]``, ``m' in (m, 2m]``."""
    P = _harmonic_prefix(2 * m_max + 1)
    checked = low_bad = up_bad = 0
    worst_low = worst_up = math.inf
    for m in range(2, m_max + 1):
        m2 = np.arange(m + 1, 2 * m + 1)
        s = (P[m2 - 1] - P[m - 1]).astype(np.float64)
        lo = np.log(m2 / m)
        hi = np.log((m2 - 1) / (m - 1))
        low_bad += int(np.sum(lo > s))
        up_bad += int(np.sum(s > hi))
        worst_low = min(worst_low, float(np.min(s - lo)))
        worst_up = min(worst_up, float(np.min(hi - s)))
        checked += m2.size
    return {
        "checked": checked,
        "lower_violations": low_bad,
        "upper_violations": up_bad,
        "min_lower_gap": worst_low,
        "min_upper_gap": worst_up,
    }


# -- accumulated rate over an estimator window -------------------------------


@dataclass
class RateBoundCheck:
    n: int
    s_n: int
    t_start: int
    observed: Optional[float]
    bound: Optional[float]
    margin: Optional[float]
    skipped: Optional[str] = None


def rate_window_bound(n: int, s: int, t_start: int, k: int) -> float:
    """``16k / t_{n0} + 16k s log(s) / n``."""
    return 16 * k / t_start + 16 * k * s * math.log(s) / n


def worst_case_window_rates(n: int, s: int, t_start: int) -> np.ndarray:
    """Rates of one center that starts the window with a zero estimate and is
    then chosen at every step: ``1/t_{n0}``, then ``s / ((n - s) j)`` for
    ``j = 1 .. s-1``."""
    j = np.arange(1, s)
    return np.concatenate([[1.0 / t_start], s / ((n - s) * j)])


def window_rate_check(cum_rate, n: int, alpha: float, beta: float, k: int) -> RateBoundCheck:
    """Bound check on a cumulative-rate array ``cum[n] = sum_{n' < n} sum_j H_j^(n'+1)``."""
    s = window_length(n, alpha)
    n0 = n - s
    t0 = t_schedule(n0, beta)
    if not (math.e <= s + 1 <= n / 2):
        return RateBoundCheck(n, s, t0, None, None, None, skipped=f"needs e <= s_n + 1 <= n/2, have s_n={s}, n={n}")
    if n >= len(cum_rate):
        return RateBoundCheck(n, s, t0, None, None, None, skipped=f"history ends before n={n}")
    observed = float(cum_rate[n] - cum_rate[n0])
    bound = rate_window_bound(n, s, t0, k)
    return RateBoundCheck(n, s, t0, observed, bound, bound - observed)


def accumulated_rate_bound_check(trace: Trace, n: int) -> RateBoundCheck:
    """Margin of ``sum_j sum_{n0 <= n' < n} H_j^(n'+1)`` below its a.s. bound,
    ``n0 = n - s_n``.  Checkpoints outside ``e <= s_n + 1 <= n/2`` are skipped."""
    sched = trace.config.schedule
    if sched.policy != GENERALIZED:
        raise InputError("the accumulated-rate bound applies to generalized_lloyd traces")
    return window_rate_check(trace.cum_rate, n, sched.alpha, sched.beta, trace.k)


def worst_case_check(n: int, alpha: float, beta: float, k: int = 1) -> RateBoundCheck:
    """Replay :func:`worst_case_window_rates` as a history and check it."""
    s = window_length(n, alpha)
    rates = worst_case_window_rates(n, s, t_schedule(n - s, beta))
    cum = np.zeros(n + 1)
    cum[n - s + 1:] = np.cumsum(rates)
    return window_rate_check(cum, n, alpha, beta, k)


def accumulated_rate_checks(trace: Trace, points: int = 40) -> list:
    """Bound checks at log-spaced ``n`` across the trace."""
    N = len(trace.cum_rate) - 1
    if N < 8:
        return []
    ns = np.unique(np.geomspace(8, N, points).astype(int))
    return [accumulated_rate_bound_check(trace, int(n)) for n in ns]


# -- estimator concentration --------------------------------------------------


def threshold_value(c: float, t_start: int, s: int, n: int) -> float:
    """``c (1/t_{n0} + s log(s) / n)``."""
    return c * (1.0 / t_start + s * math.log(s) / n)


def thresholds(n: int, alpha: float, beta: float, c: float) -> float:
    """``a_n`` with ``s = s_n`` and ``n0 = n - s_n``."""
    s = window_length(n, alpha)
    return threshold_value(c, t_schedule(n - s, beta), s, n)


def concentration_constant(k: int, R: float, L: float) -> float:
    return max(1.0, 256 * k * R * L)


def condition_a(n: int, alpha: float) -> bool:
    """``4 n^(2/3) (log 2n)^(1/3) <= s_n <= n/2 - 1``."""
    s = window_length(n, alpha)
    return 4 * n ** (2 / 3) * math.log(2 * n) ** (1 / 3) <= s <= n / 2 - 1


def _first_log_n(ok) -> float:
    """Smallest ``x = log n`` with ``ok(x)``, for predicates that stay true once true."""
    lo, hi = 0.0, 1.0
    while not ok(hi):
        lo, hi = hi, hi * 2
        if hi > 1e6:
            return math.inf
    for _ in range(200):
        mid = (lo + hi) / 2
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def first_eligible_n(alpha: float) -> float:
    """Smallest ``n`` (continuous relaxation) with
    ``4 n^(2/3) (log 2n)^(1/3) <= n^alpha <= n/2 - 1``.

    Returned as a float; it is astronomically large for ``alpha`` near 2/3.
    """
    if not 2 / 3 < alpha < 1:
        return math.inf
    lower = _first_log_n(lambda x: alpha * x >= math.log(4) + 2 / 3 * x + math.log(math.log(2) + x) / 3)
    upper = _first_log_n(lambda x: x > math.log(2) and alpha * x <= math.log(math.exp(x) / 2 - 1)
                         if x < 700 else True)
    return math.exp(max(lower, upper))


@dataclass
class ConcentrationConfig:
    distribution: object = field(default_factory=lambda: {"type": "uniform", "low": 0.0, "high": 1.0})
    k: int = 2
    alpha: float = 0.7
    beta: float = 0.8
    checkpoints: Sequence[int] = (100_000,)
    runs: int = 200
    seed: int = 0
    c: Optional[float] = None
    lipschitz: Optional[float] = None
    jobs: int = 1

    def __post_init__(self):
        self.distribution = distribution_from_spec(self.distribution)
        RateSchedule(GENERALIZED, self.alpha, self.beta)
        self.checkpoints = tuple(sorted(int(n) for n in self.checkpoints))
        if not self.checkpoints or self.checkpoints[0] < 1:
            raise InputError("concentration needs positive checkpoints")
        if self.runs < 1:
            raise InputError("concentration needs at least one run")

    @classmethod
    def log_spaced(cls, n_max: int, points: int = 6, **kw) -> "ConcentrationConfig":
        cps = np.unique(np.geomspace(1_000, n_max, points).astype(int))
        return cls(checkpoints=tuple(int(c) for c in cps), **kw)


@dataclass
class CheckpointResult:
    n: int
    s_n: int
    t_start: int
    a_n: float
    bound: float
    qualifies: bool
    runs: int
    failures: int
    frequency: float
    allowed: float
    passed: bool
    max_deviation: float
    mean_deviation: float


@dataclass
class ConcentrationReport:
    c: float
    lipschitz: Optional[float]
    alpha: float
    beta: float
    first_eligible_n: float
    checkpoints: list
    substituted: bool
    note: str

    @property
    def passed(self) -> bool:
        return all(cp.passed for cp in self.checkpoints)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        if math.isinf(d["first_eligible_n"]):
            d["first_eligible_n"] = None
        return d


def _concentration_run(args):
    spec, k, alpha, beta, checkpoints, seed = args
    cfg = RunConfig(
        spec, k=k, schedule=RateSchedule(GENERALIZED, alpha, beta), n_max=max(checkpoints),
        seed=seed, stride=max(checkpoints) + 1, oracle="none", checkpoints=checkpoints,
    )
    tr = run(cfg)
    if tr.error:
        raise RuntimeError(f"concentration run seed={seed} failed: {tr.error}")
    dist = cfg.distribution
    out = []
    for n in checkpoints:
        phat, W = tr.checkpoint_data[n]
        P = voronoi_masses(dist, W, MomentOracle("exact" if dist.exact_moments else "mc"))
        out.append(np.abs(phat - P))
    return out


def concentration_experiment(config: ConcentrationConfig) -> ConcentrationReport:
    """Empirical frequency of ``|Phat_j^(n) - P_j^(n)| >= 3/8 a_n`` over seeded runs.

    Each run is an independent generalized-Lloyd run keyed by ``seed + r``;
    results are reduced in seed order.  A checkpoint "qualifies" when the
    window satisfies ``4 n^(2/3) (log 2n)^(1/3) <= s_n <= n/2 - 1``; the
    frequency is reported at every requested checkpoint regardless and the
    report says whether non-qualifying checkpoints were used.
    """
    dist = config.distribution
    L = config.lipschitz
    if config.c is not None:
        c = float(config.c)
    else:
        if L is None:
            L = _pilot_lipschitz(config)
        c = concentration_constant(config.k, dist.support_radius, L)
    args = [
        (dist.spec(), config.k, config.alpha, config.beta, config.checkpoints, config.seed + r)
        for r in range(config.runs)
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            results = list(ex.map(_concentration_run, args))
    else:
        results = [_concentration_run(a) for a in args]
    cps = []
    substituted = False
    for ci, n in enumerate(config.checkpoints):
        s = window_length(n, config.alpha)
        t0 = t_schedule(n - s, config.beta)
        a_n = thresholds(n, config.alpha, config.beta, c)
        bound = 3 / 8 * a_n
        devs = np.array([res[ci] for res in results])
        fails = int(np.sum(np.any(devs >= bound, axis=1)))
        runs = len(results)
        p0 = 1.0 / n
        allowed = p0 + 3 * math.sqrt(p0 * (1 - p0) / runs)
        q = condition_a(n, config.alpha)
        substituted |= not q
        cps.append(CheckpointResult(
            n=n, s_n=s, t_start=t0, a_n=a_n, bound=bound, qualifies=q, runs=runs, failures=fails,
            frequency=fails / runs, allowed=allowed, passed=fails / runs <= allowed,
            max_deviation=float(devs.max()), mean_deviation=float(devs.mean()),
        ))
    fe = first_eligible_n(config.alpha)
    note = (
        "all checkpoints satisfy the window-size condition" if not substituted else
        f"window-size condition 4n^(2/3)(log 2n)^(1/3) <= s_n fails at some checkpoints; "
        f"for alpha={config.alpha} it first holds near n={fe:.3g}. Frequencies there are "
        f"reported at the requested checkpoints instead. The core-set condition on a_n is not checked."
    )
    return ConcentrationReport(c, L, config.alpha, config.beta, fe, cps, substituted, note)


def _pilot_lipschitz(config: ConcentrationConfig) -> float:
    dist = config.distribution
    cfg = RunConfig(dist, k=config.k, schedule=RateSchedule(GENERALIZED, config.alpha, config.beta),
                    n_max=min(config.checkpoints), seed=config.seed, oracle="none",
                    stride=min(config.checkpoints) + 1)
    tr = run(cfg)
    return estimate_lipschitz(dist, [tr.final_centers], seed=config.seed).ratio


# -- local Lipschitz probe ----------------------------------------------------


def area_growth_bound(d: int, R: float, r: float) -> float:
    """``(2R)^(d-1) (1 + 2R/r)``: volume swept per unit perturbation, ``2r`` = separation."""
    return (2 * R) ** (d - 1) * (1 + 2 * R / r)


@dataclass
class LipschitzProbe:
    ratio: float
    bound: float
    separation: float
    density_bound: float
    probes: int
    skipped: int

    @property
    def within_bound(self) -> bool:
        return self.ratio <= self.bound


def _mass_bound(w, R: float, p_max: float) -> float:
    pts = w.points
    k, d = pts.shape
    best = 0.0
    for j in range(k):
        tot = 0.0
        for l in range(k):
            if l == j:
                continue
            r = float(np.linalg.norm(pts[j] - pts[l])) / 2
            tot += p_max * 2 * area_growth_bound(d, R, r)
        best = max(best, tot)
    return best


def lipschitz_probe(dist: Distribution, w, num_perturbations: int = 200, delta: float = 1e-3,
                    oracle: Optional[MomentOracle] = None, seed: int = 0) -> LipschitzProbe:
    """Largest observed ``|P_j(w') - P_j(w)| / ||w' - w||`` over random ``w'``
    at distance ``delta``, against ``p_max * 2 * (2R)^(d-1) (1 + 2R/r)``
    (summed over the other centers when ``k > 2``).

    Perturbations must stay within a quarter of the minimum separation;
    perturbed tuples leaving ``B(0, R)`` are skipped.
    """
    w = as_centers(w)
    if w.k < 2:
        raise InputError("lipschitz_probe needs at least two centers")
    oracle = oracle or MomentOracle("exact" if dist.exact_moments else "mc")
    sep = min_separation(w).distance
    if delta > sep / 4:
        raise InputError(f"perturbation {delta} exceeds a quarter of the separation {sep}")
    R = dist.support_radius
    p_max = dist.density_bound()
    bound = _mass_bound(w, R, p_max)
    if delta == 0:
        return LipschitzProbe(0.0, bound, sep, p_max, 0, 0)
    P0 = voronoi_masses(dist, w, oracle)
    rng = make_rng(seed, 11)
    best = 0.0
    used = skipped = 0
    for _ in range(num_perturbations):
        u = rng.standard_normal(w.points.shape)
        u *= delta / np.sqrt(np.sum(u**2))
        wp = w.points + u
        if not in_support_ball(wp, R):
            skipped += 1
            continue
        P1 = voronoi_masses(dist, wp, oracle)
        best = max(best, float(np.max(np.abs(P1 - P0))) / delta)
        used += 1
    return LipschitzProbe(best, bound, sep, p_max, used, skipped)


def estimate_lipschitz(dist: Distribution, states, num_perturbations: int = 50, seed: int = 0) -> LipschitzProbe:
    """Largest probe ratio over several center tuples (e.g. trace states)."""
    best = None
    for w in states:
        w = as_centers(w)
        delta = min(1e-3, min_separation(w).distance / 8)
        pr = lipschitz_probe(dist, w, num_perturbations, delta, seed=seed)
        if best is None or pr.ratio > best.ratio:
            best = pr
    return best


# -- convergence verdict ------------------------------------------------------


def known_stationary_points(dist: Distribution, k: int):
    """Catalogued non-degenerate stationary tuples, or ``None`` if unknown.

    For a uniform density on an interval the only one is the evenly spaced
    tuple whose centers sit at the midpoints of ``k`` equal sub-intervals.
    """
    if isinstance(dist, PiecewiseConstant1D) and dist.densities.size == 1:
        a, b = dist.breakpoints
        return [np.array([[a + (b - a) * (2 * i + 1) / (2 * k)] for i in range(k)])]
    return None


def distance_to_set(w, points) -> float:
    """Smallest, over catalogued tuples and center permutations, of the largest
    per-center distance."""
    w = as_centers(w).points
    best = math.inf
    for s in points:
        for perm in itertools.permutations(range(w.shape[0])):
            d = float(np.max(np.sqrt(np.sum((w[list(perm)] - s) ** 2, axis=1))))
            best = min(best, d)
    return best


@dataclass
class Verdict:
    eps: float
    last_exceedance: list
    final_gradnorms: list
    final_gradnorm: float
    final_cost: Optional[float]
    cost_oscillation: Optional[float]
    cost_converged: bool
    decrease_fraction: Optional[float]
    persistent_gradient: list
    distance_to_stationary: Optional[float]
    passed: bool

    def as_dict(self) -> dict:
        return asdict(self)


def convergence_verdict(trace: Trace, dist: Optional[Distribution] = None, oracle: Optional[MomentOracle] = None,
                        eps: float = 0.01, stationary=None, tol: float = 0.05,
                        cost_tol: float = 1e-3) -> Verdict:
    """Summarize whether the trace settles at a stationary point.

    ``last_exceedance[i]`` is the last audited ``n`` with
    ``||grad_i f|| > eps`` (``None`` if never).  A center's gradient is
    *persistent* if it exceeds ``eps`` at every audited step of the last
    decade ``[N/10, N]``.  The cost has converged when its range over that
    decade is below ``cost_tol``.
    """
    dist = dist or trace.config.distribution
    ns = np.array(trace.rows_n)
    G = trace.gradnorms()
    F = trace.costs()
    if np.isnan(G[-1]).any():
        oracle = oracle or trace.config.moment_oracle() or MomentOracle("exact" if dist.exact_moments else "mc")
        W = trace.final_centers
        G[-1] = gradient(dist, W, oracle).norms
        F[-1] = cost(dist, W, oracle).value
    k = G.shape[1]
    last = []
    for i in range(k):
        over = ns[(G[:, i] > eps) & ~np.isnan(G[:, i])]
        last.append(int(over[-1]) if over.size else None)
    N = ns[-1]
    tail = ns >= N / 10
    finite_f = ~np.isnan(F)
    if np.sum(tail & finite_f) >= 2:
        ft = F[tail & finite_f]
        osc = float(ft.max() - ft.min())
    else:
        osc = None
    fv = F[finite_f]
    dec = float(np.mean(np.diff(fv) <= 0)) if fv.size >= 2 else None
    persistent = []
    for i in range(k):
        gi = G[tail, i]
        gi = gi[~np.isnan(gi)]
        if gi.size and np.all(gi > eps):
            persistent.append(i)
    final = G[-1]
    total = float(np.sqrt(np.sum(final**2)))
    if stationary is None:
        stationary = known_stationary_points(dist, k)
    dist_st = distance_to_set(trace.final_centers, stationary) if stationary is not None else None
    passed = total < eps and not persistent and (dist_st is None or dist_st <= tol)
    return Verdict(
        eps=eps,
        last_exceedance=last,
        final_gradnorms=final.tolist(),
        final_gradnorm=total,
        final_cost=None if np.isnan(F[-1]) else float(F[-1]),
        cost_oscillation=osc,
        cost_converged=osc is not None and osc < cost_tol,
        decrease_fraction=dec,
        persistent_gradient=persistent,
        distance_to_stationary=dist_st,
        passed=passed,
    )
