"""The streaming loop: sample, assign, rate, update, and record a trace.

Two modes are supported.  ``single_center`` draws one point from ``p`` per
step and moves only its nearest center.  ``all_cells`` draws one point (or the
mean of ``batch_size`` points) from every cell's conditional law and moves all
centers at once.

Diagnostics (cost, gradient, descent decomposition) are only computed on
audited steps, every ``stride`` iterations, so long runs stay cheap.  The
update itself never consults an oracle, except for the oracle-backed
``ideal`` policies which need exact masses at every step.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    RNG_ALGORITHM,
    Centers,
    ConfigError,
    ContractViolation,
    InputError,
    StreamKMeansError,
    as_centers,
    in_support_ball,
    make_rng,
    min_separation,
)
from .distributions import (
    Distribution,
    EmptyCellError,
    MomentOracle,
    SampleStream,
    distribution_from_spec,
    voronoi_moments,
)
from .objective import gradient_from_moments
from .schedules import GENERALIZED, NAIVE, UNIFORM, RateController, RateSchedule

log = logging.getLogger(__name__)

__all__ = [
    "RunConfig",
    "RunState",
    "Trace",
    "init_centers",
    "step",
    "decompose_step",
    "descent_margin",
    "run",
    "check_trajectory",
    "write_trace_csv",
    "write_summary_json",
    "trace_header",
]

MODES = ("single_center", "all_cells")
ORACLES = ("auto", "exact", "mc", "none")
# Rounding slack tolerated before a center outside B(0, R) counts as an escape.
BALL_SLACK = 1e-12


@dataclass
class RunConfig:
    distribution: object
    k: int = 2
    init: object = "iid"
    schedule: RateSchedule = field(default_factory=RateSchedule)
    n_max: int = 10_000
    seed: int = 0
    stream: int = 0
    stride: int = 100
    oracle: str = "auto"
    mc_samples: int = 200_000
    mode: str = "single_center"
    batch_size: int = 1
    checkpoints: Sequence[int] = ()
    audit_descent: bool = True

    def __post_init__(self):
        self.distribution = distribution_from_spec(self.distribution)
        if isinstance(self.schedule, dict):
            self.schedule = RateSchedule(**self.schedule)
        if int(self.k) < 1:
            raise ConfigError("k must be at least 1")
        if int(self.n_max) < 0:
            raise ConfigError("n_max must be nonnegative")
        if int(self.stride) < 1:
            raise ConfigError("stride must be at least 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.oracle not in ORACLES:
            raise ConfigError(f"oracle must be one of {ORACLES}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.mode == "all_cells" and self.schedule.policy not in (NAIVE, UNIFORM):
            raise ConfigError(
                f"all_cells mode supports the naive_lloyd and uniform_decay policies, not {self.schedule.policy}"
            )
        if self.oracle == "exact" and not self.distribution.exact_moments:
            raise ConfigError("exact oracle requested for a distribution without exact moments")
        if self.schedule.needs_masses and not self.distribution.exact_moments:
            raise ConfigError(f"{self.schedule.policy} needs exact masses, unavailable for this distribution")
        if not (isinstance(self.init, str) and self.init == "iid"):
            self.init = Centers(self.init)
            if self.init.k != self.k:
                raise ConfigError(f"explicit init has {self.init.k} centers, k={self.k}")
        self.k, self.n_max, self.stride = int(self.k), int(self.n_max), int(self.stride)
        self.checkpoints = tuple(sorted(int(c) for c in self.checkpoints))

    @property
    def oracle_method(self) -> str:
        if self.oracle == "auto":
            return "exact" if self.distribution.exact_moments else "mc"
        return self.oracle

    def moment_oracle(self) -> Optional[MomentOracle]:
        m = self.oracle_method
        if m == "none":
            return None
        return MomentOracle(m, samples=self.mc_samples, seed=self.seed, stream=self.stream + 1)

    def as_dict(self) -> dict:
        return {
            "distribution": self.distribution.spec(),
            "k": self.k,
            "init": self.init if isinstance(self.init, str) else self.init.points.tolist(),
            "schedule": self.schedule.as_dict(),
            "n_max": self.n_max,
            "seed": self.seed,
            "stream": self.stream,
            "stride": self.stride,
            "oracle": self.oracle,
            "mc_samples": self.mc_samples,
            "mode": self.mode,
            "batch_size": self.batch_size,
            "checkpoints": list(self.checkpoints),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {
            "distribution", "k", "init", "schedule", "n_max", "seed", "stream", "stride",
            "oracle", "mc_samples", "mode", "batch_size", "checkpoints", "audit_descent",
        }
        extra = set(d) - known - {"schema_version"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "distribution" not in d:
            raise ConfigError("config needs a 'distribution' entry")
        d = dict(d)
        d.pop("schema_version", None)
        sched = d.get("schedule", {})
        if isinstance(sched, dict):
            unknown = set(sched) - {"policy", "alpha", "beta", "uniform_c"}
            if unknown:
                raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunState:
    n: int
    centers: Centers


@dataclass
class Trace:
    """Per-stride record of a run plus whole-run accumulators.

    Row ``r`` describes the state ``W^(n)`` at ``n = rows_n[r]`` together with
    the step taken from it (``I^(n+1)``, ``H^(n+1)``, ``A/B/C_{n+1}``); the last
    row (``n = n_max``) carries no step.  ``sumH`` and ``sumH2`` at row ``n``
    accumulate the rates applied to reach ``W^(n)``.  ``cum_rate[n]`` holds
    ``sum_j sum_{n' < n} H_j^(n'+1)`` for every ``n``, recorded or not.
    """

    config: RunConfig
    k: int
    d: int
    radius: float
    rows_n: list = field(default_factory=list)
    rows_I: list = field(default_factory=list)
    rows_H: list = field(default_factory=list)
    rows_phat: list = field(default_factory=list)
    rows_f: list = field(default_factory=list)
    rows_gradnorm: list = field(default_factory=list)
    rows_A: list = field(default_factory=list)
    rows_B: list = field(default_factory=list)
    rows_C: list = field(default_factory=list)
    rows_sumH: list = field(default_factory=list)
    rows_sumH2: list = field(default_factory=list)
    rows_centers: list = field(default_factory=list)
    descent: list = field(default_factory=list)  # (n, margin)
    cum_rate: Optional[np.ndarray] = None
    checkpoint_data: dict = field(default_factory=dict)  # n -> (phat, centers)
    max_rate: float = 0.0
    min_rate: float = 0.0
    redraws: int = 0
    projected: int = 0
    clamped: int = 0
    empty_cells: int = 0
    error: Optional[dict] = None

    @property
    def n_rows(self) -> int:
        return len(self.rows_n)

    @property
    def final_centers(self) -> Centers:
        return Centers(self.rows_centers[-1])

    def centers_at(self, row: int) -> np.ndarray:
        return np.asarray(self.rows_centers[row])

    def gradnorms(self) -> np.ndarray:
        return np.array([[np.nan] * self.k if g is None else g for g in self.rows_gradnorm], dtype=float)

    def costs(self) -> np.ndarray:
        return np.array([np.nan if f is None else f for f in self.rows_f], dtype=float)


def init_centers(config: RunConfig, rng=None, stream: Optional[SampleStream] = None) -> Centers:
    """``k`` distinct iid draws from ``p``, or the validated explicit centers."""
    dist = config.distribution
    if not isinstance(config.init, str):
        w = config.init
        if w.d != dist.dimension:
            raise ConfigError(f"init centers have dimension {w.d}, distribution has {dist.dimension}")
        if w.k >= 2 and min_separation(w).degenerate:
            raise ConfigError("explicit init centers are degenerate (two coincide)")
        if not in_support_ball(w, dist.support_radius):
            raise ConfigError(f"explicit init centers leave B(0, {dist.support_radius})")
        return w
    if stream is None:
        stream = SampleStream(dist, rng if rng is not None else make_rng(config.seed, config.stream))
    pts = []
    while len(pts) < config.k:
        x = stream.next()
        if x not in pts:
            pts.append(x)
    return Centers(pts)


def _nearest(W, x) -> int:
    best, bd = 0, math.inf
    if len(x) == 1:
        x0 = x[0]
        for j, wj in enumerate(W):
            t = wj[0] - x0
            t *= t
            if t < bd:
                best, bd = j, t
        return best
    for j, wj in enumerate(W):
        s = 0.0
        for a, b in zip(wj, x):
            t = a - b
            s += t * t
        if s < bd:
            best, bd = j, s
    return best


def _move(w, x, h):
    if h == 1.0:
        return list(x)
    return [a + h * (b - a) for a, b in zip(w, x)]


def _norm(v) -> float:
    return math.sqrt(math.fsum(a * a for a in v))


def decompose_step(dist: Distribution, W, H, X, oracle: Optional[MomentOracle] = None, moments=None):
    """Exact-descent, martingale-noise and quadratic-noise terms of one step.

    ``H`` is the rate vector and ``X`` a ``(k, d)`` array of the points each
    center moved toward (rows with ``H_i = 0`` are ignored).  Returns
    ``(A, B, C)``.
    """
    W = as_centers(W)
    H = np.asarray(H, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    m = moments if moments is not None else voronoi_moments(dist, W, oracle)
    g = gradient_from_moments(W, m)
    A = B = C = 0.0
    for i in range(W.k):
        h = H[i]
        if h == 0.0:
            continue
        if m.masses[i] <= 0.0:
            raise ContractViolation(f"center {i} updated although its cell has zero mass")
        A += h / m.masses[i] * float(g[i] @ g[i])
        B += h * float(g[i] @ (m.means[i] - X[i]))
        diff = W.points[i] - X[i]
        C += 0.5 * h * h * float(diff @ diff)
    return A, B, C


def descent_margin(dist: Distribution, W, W_next, H, X, oracle: Optional[MomentOracle] = None) -> float:
    """``f(W) - A + (C - B) - f(W_next)``; nonnegative up to oracle error."""
    m = voronoi_moments(dist, W, oracle)
    A, B, C = decompose_step(dist, W, H, X, oracle, moments=m)
    f_next = voronoi_moments(dist, W_next, oracle).cost
    return m.cost - A - B + C - f_next


def step(state: RunState, dist: Distribution, controller: RateController, stream: SampleStream,
         mode: str = "single_center", masses=None, batch_size: int = 1):
    """Advance one iteration; returns ``(next_state, H, X)``.

    A draw that would make two centers coincide exactly is discarded and
    redrawn.
    """
    W = state.centers.points.tolist()
    n = state.n
    k = len(W)
    for _ in range(1000):
        H = [0.0] * k
        X = [list(w) for w in W]
        new = [list(w) for w in W]
        if mode == "single_center":
            x = stream.next()
            i = _nearest(W, x)
            h = controller.rate(n, i, masses)
            H[i], X[i] = h, list(x)
            new[i] = _move(W[i], x, h)
            updated = [i]
        else:
            updated = []
            for i in range(k):
                try:
                    x = _cell_draw(W, i, stream, batch_size)
                except EmptyCellError:
                    continue
                h = controller.rate(n, i, masses)
                H[i], X[i] = h, x
                new[i] = _move(W[i], x, h)
                updated.append(i)
        if k < 2 or len({tuple(p) for p in new}) == k:
            break
    else:
        raise ContractViolation("could not find a non-degenerate update after 1000 redraws")
    for i in updated:
        controller.observe(i)
    return RunState(n + 1, Centers(new)), np.array(H), np.array(X)


def _cell_draw(W, i, stream, batch_size, max_tries=10**6):
    acc = None
    got = 0
    tries = 0
    while got < batch_size:
        x = stream.next()
        tries += 1
        if _nearest(W, x) == i:
            acc = list(x) if acc is None else [a + b for a, b in zip(acc, x)]
            got += 1
            tries = 0
        elif tries >= max_tries:
            raise EmptyCellError(f"cell {i} looks empty")
    return [a / batch_size for a in acc]


def _record(trace, n, W, ctrl, oracle, dist, sumH, sumH2):
    trace.rows_n.append(n)
    trace.rows_centers.append([list(w) for w in W])
    trace.rows_phat.append(ctrl.phat(n).tolist())
    trace.rows_sumH.append(list(sumH))
    trace.rows_sumH2.append(sumH2)
    if oracle is None:
        trace.rows_f.append(None)
        trace.rows_gradnorm.append(None)
        return None
    m = voronoi_moments(dist, W, oracle)
    g = gradient_from_moments(Centers(W), m)
    trace.rows_f.append(m.cost)
    trace.rows_gradnorm.append(np.sqrt(np.sum(g**2, axis=1)).tolist())
    return m


def run(config: RunConfig, controller: Optional[RateController] = None) -> Trace:
    """Execute ``config.n_max`` steps and return the trace.

    ``controller`` replaces the rate controller built from ``config.schedule``
    (used by adversarial fixtures).  Errors abort the loop; the partial trace
    is returned with ``trace.error`` set.
    """
    dist = config.distribution
    k, N, R = config.k, config.n_max, dist.support_radius
    rng = make_rng(config.seed, config.stream)
    stream = SampleStream(dist, rng)
    ctrl = controller or RateController(config.schedule, k, N)
    oracle = config.moment_oracle()
    mass_oracle = MomentOracle("exact") if config.schedule.needs_masses else None
    trace = Trace(config, k, dist.dimension, R)
    cum = np.zeros(N + 1)
    sumH = [0.0] * k
    sumH2 = 0.0
    total = 0.0
    hmax, hmin = 0.0, math.inf
    checkpoints = set(config.checkpoints)
    single = config.mode == "single_center"
    n = 0
    try:
        W = init_centers(config, stream=stream).points.tolist()
        for n in range(N):
            if n in checkpoints:
                trace.checkpoint_data[n] = (ctrl.phat(n).copy(), np.array(W))
            audit = n % config.stride == 0
            masses = voronoi_moments(dist, W, mass_oracle).masses if mass_oracle is not None else None
            if audit:
                m = _record(trace, n, W, ctrl, oracle, dist, sumH, sumH2)
            if single:
                # Inline fast path of step().
                for _ in range(1000):
                    x = stream.next()
                    i = _nearest(W, x)
                    h = ctrl.rate(n, i, masses)
                    new_i = _move(W[i], x, h)
                    if k < 2 or all(new_i != W[j] for j in range(k) if j != i):
                        break
                    trace.redraws += 1
                else:
                    raise ContractViolation("could not find a non-degenerate update after 1000 redraws")
                if h > 0.0:
                    nrm = _norm(new_i)
                    if nrm > R:
                        if nrm > R * (1 + BALL_SLACK):
                            raise ContractViolation(f"center {i} left B(0, {R}) at step {n}: norm {nrm!r}")
                        new_i = [a * (R / nrm) for a in new_i]
                        trace.projected += 1
                H_step = None
                if audit:
                    H_step = [0.0] * k
                    H_step[i] = h
                    X_step = [list(w) for w in W]
                    X_step[i] = list(x)
                    W_next = [list(w) for w in W]
                    W_next[i] = new_i
                W[i] = new_i
                ctrl.observe(i)
                sumH[i] += h
                sumH2 += h * h
                total += h
                hmax = max(hmax, h)
                hmin = min(hmin, h)
                I_rec = i
            else:
                state, H_arr, X_arr = step(RunState(n, Centers(W)), dist, ctrl, stream, "all_cells",
                                           masses, config.batch_size)
                W_next = state.centers.points.tolist()
                for j in range(k):
                    if H_arr[j] > 0 and _norm(W_next[j]) > R * (1 + BALL_SLACK):
                        raise ContractViolation(f"center {j} left B(0, {R}) at step {n}")
                H_step, X_step = H_arr.tolist(), X_arr.tolist()
                W = [list(w) for w in W_next]
                for j in range(k):
                    sumH[j] += H_step[j]
                    sumH2 += H_step[j] ** 2
                total += sum(H_step)
                hmax = max(hmax, max(H_step))
                hmin = min(hmin, min(H_step))
                I_rec = -1
            cum[n + 1] = total
            if audit:
                trace.rows_I.append(I_rec)
                trace.rows_H.append(H_step)
                if oracle is not None:
                    A, B, C = decompose_step(dist, trace.rows_centers[-1], H_step, X_step, oracle, moments=m)
                    trace.rows_A.append(A)
                    trace.rows_B.append(B)
                    trace.rows_C.append(C)
                    if config.audit_descent:
                        f_next = voronoi_moments(dist, W_next, oracle).cost
                        trace.descent.append((n, m.cost - A - B + C - f_next))
                else:
                    trace.rows_A.append(None)
                    trace.rows_B.append(None)
                    trace.rows_C.append(None)
        n = N
        if N in checkpoints:
            trace.checkpoint_data[N] = (ctrl.phat(N).copy(), np.array(W))
        _record(trace, N, W, ctrl, oracle, dist, sumH, sumH2)
        _pad_partial(trace)
    except StreamKMeansError as exc:
        log.error("run aborted at step %d: %s", n, exc)
        trace.error = {"step": n, "type": type(exc).__name__, "message": str(exc)}
        _pad_partial(trace)
        cum = cum[: n + 1]
    trace.cum_rate = cum
    trace.max_rate = hmax
    trace.min_rate = 0.0 if hmin == math.inf else hmin
    trace.clamped = ctrl.clamped
    if trace.redraws:
        log.info("degeneracy guard redrew %d data points", trace.redraws)
    return trace


def _pad_partial(trace: Trace):
    # A failure between recording a row and finishing its step leaves the
    # step columns one short.
    n = trace.n_rows
    for col in (trace.rows_I, trace.rows_H, trace.rows_A, trace.rows_B, trace.rows_C):
        while len(col) < n:
            col.append(None)


def check_trajectory(trace: Trace, pairs: int = 100, seed: int = 0, tol: float = 1e-12) -> dict:
    """Support, non-degeneracy, rate range and displacement-bound checks."""
    R = trace.radius
    pts = np.array(trace.rows_centers)
    norms = np.sqrt(np.sum(pts**2, axis=2))
    in_ball = bool(np.all(norms <= R))
    if trace.k >= 2:
        diff = pts[:, :, None, :] - pts[:, None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        iu = np.triu_indices(trace.k, 1)
        min_sep = float(dist[:, iu[0], iu[1]].min())
    else:
        min_sep = None
    rates_ok = 0.0 <= trace.min_rate and trace.max_rate <= 1.0
    rng = make_rng(seed, 7)
    rows = trace.n_rows
    worst = math.inf
    violations = 0
    checked = 0
    if rows >= 2:
        for _ in range(pairs):
            a, b = sorted(rng.choice(rows, size=2, replace=False))
            m, n = trace.rows_n[a], trace.rows_n[b]
            disp = float(np.sqrt(np.sum((pts[b] - pts[a]) ** 2)))
            bound = 2 * R * (trace.cum_rate[n] - trace.cum_rate[m])
            margin = bound - disp
            worst = min(worst, margin)
            checked += 1
            if margin < -tol:
                violations += 1
    return {
        "in_ball": in_ball,
        "max_center_norm": float(norms.max()),
        "nondegenerate": min_sep is None or min_sep > 0,
        "min_separation": min_sep,
        "rates_in_unit_interval": bool(rates_ok),
        "max_rate": trace.max_rate,
        "min_rate": trace.min_rate,
        "displacement_pairs": checked,
        "displacement_violations": violations,
        "displacement_worst_margin": worst if checked else None,
        "passed": in_ball and (min_sep is None or min_sep > 0) and rates_ok and violations == 0,
    }


def trace_header(k: int, d: int) -> list:
    cols = ["n", "I"]
    cols += [f"H_{i}" for i in range(k)]
    cols += [f"Phat_{i}" for i in range(k)]
    cols += ["f"]
    cols += [f"gradnorm_{i}" for i in range(k)]
    cols += ["A", "B", "C"]
    cols += [f"sumH_{i}" for i in range(k)]
    cols += ["sumH2"]
    cols += [f"w_{i}_{j}" for i in range(k) for j in range(d)]
    return cols


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def write_trace_csv(trace: Trace, path) -> None:
    """Write the trace with shortest round-trip float formatting."""
    k, d = trace.k, trace.d
    blank_k = [None] * k
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(trace_header(k, d))
        for r in range(trace.n_rows):
            row = [trace.rows_n[r], trace.rows_I[r]]
            row += trace.rows_H[r] if trace.rows_H[r] is not None else blank_k
            row += trace.rows_phat[r]
            row += [trace.rows_f[r]]
            row += trace.rows_gradnorm[r] if trace.rows_gradnorm[r] is not None else blank_k
            row += [trace.rows_A[r], trace.rows_B[r], trace.rows_C[r]]
            row += trace.rows_sumH[r]
            row += [trace.rows_sumH2[r]]
            row += [c for w in trace.rows_centers[r] for c in w]
            wr.writerow([_fmt(v) for v in row])


def summarize(trace: Trace) -> dict:
    cfg = trace.config
    margins = [m for _, m in trace.descent]
    out = {
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "rng": RNG_ALGORITHM,
        "rows": trace.n_rows,
        "final_n": trace.rows_n[-1] if trace.rows_n else None,
        "final_centers": trace.rows_centers[-1] if trace.rows_centers else None,
        "final_cost": trace.rows_f[-1] if trace.rows_f else None,
        "final_gradnorms": trace.rows_gradnorm[-1] if trace.rows_gradnorm else None,
        "sumH": trace.rows_sumH[-1] if trace.rows_sumH else None,
        "sumH2": trace.rows_sumH2[-1] if trace.rows_sumH2 else None,
        "clamped_rates": trace.clamped,
        "degeneracy_redraws": trace.redraws,
        "ulp_projections": trace.projected,
        "descent_audits": len(margins),
        "descent_worst_margin": min(margins) if margins else None,
        "error": trace.error,
    }
    if trace.n_rows:
        out["trajectory"] = check_trajectory(trace)
    return out


def write_summary_json(trace: Trace, path, extra: Optional[dict] = None) -> dict:
    summary = summarize(trace)
    if extra:
        summary.update(extra)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return summary


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
