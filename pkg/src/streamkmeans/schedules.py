"""Learning-rate policies for single-center online k-means.

Every policy emits a rate vector supported on the updated index ``I``:

=====================  ===============================================
``naive_lloyd``        ``1 / (N_I + 1)``, ``N_I`` = past updates of I
``ideal_lloyd``        ``1 / (n P_I)`` with exact masses
``ideal_prime_lloyd``  ``1 / max(n P_I, t_n)`` with exact masses
``generalized_lloyd``  ``1 / max(n Phat_I, t_n)``, windowed estimate
``uniform_decay``      ``c / (n + 1)`` for every center alike
=====================  ===============================================

``Phat_j`` is the fraction of the last ``s_n`` choices equal to ``j``.  The
window and floor follow power laws ``s_n = ceil(n^alpha)``,
``t_n = ceil(n^beta)`` (both floored at 1), with ``2/3 < alpha < beta < 1``.
Rates above 1 are clamped and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ConfigError, InputError

__all__ = [
    "POLICIES",
    "RateSchedule",
    "UpdateWindow",
    "RateController",
    "s_schedule",
    "t_schedule",
    "window_length",
    "validate_exponents",
    "estimate_masses",
    "next_rates",
]

NAIVE = "naive_lloyd"
IDEAL = "ideal_lloyd"
IDEAL_PRIME = "ideal_prime_lloyd"
GENERALIZED = "generalized_lloyd"
UNIFORM = "uniform_decay"
POLICIES = (NAIVE, IDEAL, IDEAL_PRIME, GENERALIZED, UNIFORM)
ORACLE_POLICIES = (IDEAL, IDEAL_PRIME)

ADMISSIBLE = "2/3 < alpha < beta < 1"


def s_schedule(n: int, alpha: float) -> int:
    """Estimator window ``max(1, ceil(n^alpha))``."""
    return max(1, math.ceil(n**alpha)) if n > 1 else 1


def t_schedule(n: int, beta: float) -> int:
    """Rate floor ``max(1, ceil(n^beta))``."""
    return max(1, math.ceil(n**beta)) if n > 1 else 1


def window_length(n: int, alpha: float) -> int:
    """Window actually used at step ``n``: never longer than the history."""
    return min(n, s_schedule(n, alpha))


def validate_exponents(alpha: Optional[float], beta: float):
    if alpha is not None and not (2 / 3 < alpha < beta < 1):
        raise ConfigError(
            f"schedule exponents alpha={alpha}, beta={beta} are outside the admissible region "
            f"{ADMISSIBLE} (window s_n = n^alpha, floor t_n = n^beta)"
        )
    if alpha is None and not (2 / 3 < beta < 1):
        raise ConfigError(f"floor exponent beta={beta} must satisfy 2/3 < beta < 1")


@dataclass(frozen=True)
class RateSchedule:
    policy: str = GENERALIZED
    alpha: float = 0.7
    beta: float = 0.8
    uniform_c: float = 1.0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown schedule policy {self.policy!r}; expected one of {POLICIES}")
        if self.policy == GENERALIZED:
            validate_exponents(self.alpha, self.beta)
        elif self.policy == IDEAL_PRIME:
            validate_exponents(None, self.beta)
        if self.policy == UNIFORM and not self.uniform_c > 0:
            raise ConfigError("uniform_c must be positive")

    @property
    def needs_masses(self) -> bool:
        return self.policy in ORACLE_POLICIES

    def s(self, n: int) -> int:
        return window_length(n, self.alpha)

    def t(self, n: int) -> int:
        return t_schedule(n, self.beta)

    def as_dict(self) -> dict:
        return {"policy": self.policy, "alpha": self.alpha, "beta": self.beta, "uniform_c": self.uniform_c}


class UpdateWindow:
    """Ring buffer of recent chosen indices with running per-center counts.

    ``push`` appends ``I^(n+1)``; ``trim(s)`` drops the oldest entries so the
    counts cover exactly the last ``s`` choices.  Windows only ever shrink
    relative to the pushed history (``s_{n+1} <= s_n + 1``), so nothing dropped
    is needed again.
    """

    def __init__(self, k: int, capacity: int):
        self.k = k
        self.capacity = max(1, int(capacity)) + 1
        self._buf = np.zeros(self.capacity, dtype=np.int64)
        self.counts = [0] * k
        self.n = 0  # choices pushed so far
        self._len = 0  # choices currently counted

    @classmethod
    def from_history(cls, k: int, indices: Sequence[int]) -> "UpdateWindow":
        win = cls(k, len(indices))
        for i in indices:
            win.push(int(i))
        return win

    def __len__(self):
        return self._len

    def push(self, i: int):
        if not 0 <= i < self.k:
            raise InputError(f"index {i} out of range for k={self.k}")
        if self._len == self.capacity:
            self._drop()
        self._buf[self.n % self.capacity] = i
        self.counts[i] += 1
        self.n += 1
        self._len += 1

    def _drop(self):
        oldest = int(self._buf[(self.n - self._len) % self.capacity])
        self.counts[oldest] -= 1
        self._len -= 1

    def trim(self, s: int):
        if s > self._len:
            raise InputError(f"window of length {s} requested but only {self._len} choices retained")
        while self._len > s:
            self._drop()

    def estimate(self, s: int) -> np.ndarray:
        if s <= 0:
            return np.zeros(self.k)
        self.trim(s)
        return np.asarray(self.counts, dtype=np.float64) / s


def estimate_masses(window: UpdateWindow, s: Optional[int] = None, alpha: float = 0.7) -> np.ndarray:
    """Windowed mass estimate ``Phat``; ``s`` defaults to the power-law window."""
    if s is None:
        s = window_length(window.n, alpha)
    return window.estimate(s)


def _raw_rate(policy: str, n: int, *, phat=0.0, mass=None, count=0, t_n=1, c=1.0) -> float:
    if policy == NAIVE:
        return 1.0 / (count + 1)
    if policy == UNIFORM:
        return c / (n + 1)
    if policy == GENERALIZED:
        return 1.0 / max(n * phat, t_n)
    if mass is None:
        raise InputError(f"policy {policy} needs exact masses")
    if mass <= 0.0:
        return 0.0
    if policy == IDEAL:
        return math.inf if n == 0 else 1.0 / (n * mass)
    return 1.0 / max(n * mass, t_n)


def next_rates(schedule: RateSchedule, n: int, chosen: int, k: int, *,
               window: Optional[UpdateWindow] = None, masses=None, counters=None) -> np.ndarray:
    """Rate vector ``H^(n+1)`` for a step that updates center ``chosen``.

    Stateless counterpart of :class:`RateController`; never reads the new
    data point.
    """
    if not 0 <= chosen < k:
        raise InputError(f"chosen index {chosen} out of range for k={k}")
    H = np.zeros(k)
    p = schedule.policy
    kw = {"t_n": schedule.t(n), "c": schedule.uniform_c}
    if p == GENERALIZED:
        if window is None:
            raise InputError("generalized_lloyd needs an update window")
        kw["phat"] = float(window.estimate(schedule.s(n))[chosen])
    elif p == NAIVE:
        kw["count"] = 0 if counters is None else int(counters[chosen])
    elif p in ORACLE_POLICIES:
        if masses is None:
            raise InputError(f"{p} needs exact masses")
        kw["mass"] = float(masses[chosen])
    H[chosen] = min(1.0, _raw_rate(p, n, **kw))
    return H


class RateController:
    """Per-run schedule state: update window, naive counters, clamp counter."""

    def __init__(self, schedule: RateSchedule, k: int, n_max: int):
        self.schedule = schedule
        self.k = k
        self.policy = schedule.policy
        self.counters = [0] * k
        self.clamped = 0
        self.window = UpdateWindow(k, s_schedule(max(n_max, 1), schedule.alpha)) if self.policy == GENERALIZED else None
        self._alpha = schedule.alpha
        self._beta = schedule.beta

    def phat(self, n: int) -> np.ndarray:
        """Current estimate ``Phat^(n)`` (zeros for policies without a window)."""
        if self.window is None:
            return np.zeros(self.k)
        return self.window.estimate(window_length(n, self._alpha))

    def rate(self, n: int, i: int, masses=None) -> float:
        """``H_i^(n+1)`` when center ``i`` is the one updated at step ``n``."""
        p = self.policy
        if p == GENERALIZED:
            s = window_length(n, self._alpha)
            if s > 0:
                self.window.trim(s)
                phat = self.window.counts[i] / s
            else:
                phat = 0.0
            t = max(1, math.ceil(n**self._beta)) if n > 1 else 1
            h = 1.0 / max(n * phat, t)
        elif p == NAIVE:
            h = 1.0 / (self.counters[i] + 1)
        elif p == UNIFORM:
            h = self.schedule.uniform_c / (n + 1)
        else:
            h = _raw_rate(p, n, mass=None if masses is None else float(masses[i]), t_n=self.schedule.t(n))
        if h > 1.0:
            self.clamped += 1
            h = 1.0
        return h

    def observe(self, i: int):
        """Record that step ``n`` chose center ``i``."""
        self.counters[i] += 1
        if self.window is not None:
            self.window.push(i)
