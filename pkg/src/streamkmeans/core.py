"""Geometric primitives shared across the package.

Centers are stored as a read-only ``(k, d)`` float64 array.  Nearest-center
assignment breaks ties toward the lowest index, so runs are reproducible even
when a draw lands exactly on a Voronoi boundary.

Random numbers come from numpy's PCG64 bit generator.  A generator is keyed by
``(seed, stream)`` through ``SeedSequence(seed, spawn_key=(stream,))``; PCG64
output for a given key is bit-identical on every platform numpy supports.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "StreamKMeansError",
    "InputError",
    "ConfigError",
    "CapabilityError",
    "DegenerateCentersError",
    "ContractViolation",
    "Centers",
    "Separation",
    "nearest_center",
    "min_separation",
    "in_support_ball",
    "make_rng",
    "RNG_ALGORITHM",
]

RNG_ALGORITHM = "PCG64 (numpy SeedSequence(seed, spawn_key=(stream,)))"

# Operations refuse center tuples closer than this.
NEAR_DEGENERATE = 1e-9


class StreamKMeansError(Exception):
    """Base class for package errors."""


class InputError(StreamKMeansError, ValueError):
    """Malformed arguments (wrong dimension, violated precondition)."""


class ConfigError(StreamKMeansError, ValueError):
    """Invalid run or schedule configuration."""


class CapabilityError(StreamKMeansError):
    """The requested computation is not supported for this distribution."""


class DegenerateCentersError(InputError):
    """Two centers coincide (or nearly so)."""


class ContractViolation(StreamKMeansError):
    """An invariant the algorithm guarantees was observed to fail."""


@dataclass(frozen=True, eq=False)
class Centers:
    """An ordered tuple of ``k`` centers in ``R^d``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InputError(f"centers must have shape (k, d) with k, d >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("centers must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.k

    def __getitem__(self, i):
        return self.points[i]

    def __eq__(self, other):
        if not isinstance(other, Centers):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.array_equal(self.points, other.points))

    def __repr__(self):
        return f"Centers({self.points.tolist()!r})"

    def replace(self, i: int, point) -> "Centers":
        pts = self.points.copy()
        pts[i] = point
        return Centers(pts)

    def to_row(self) -> str:
        """Serialize as ``k d v11 ... vkd`` with shortest round-trip floats."""
        vals = " ".join(repr(float(v)) for v in self.points.ravel())
        return f"{self.k} {self.d} {vals}"

    @classmethod
    def from_row(cls, row: str) -> "Centers":
        tokens = row.split()
        if len(tokens) < 2:
            raise InputError("center row needs at least 'k d'")
        try:
            k, d = int(tokens[0]), int(tokens[1])
            vals = [float(t) for t in tokens[2:]]
        except ValueError as exc:
            raise InputError(f"bad center row: {row!r}") from exc
        if k < 1 or d < 1 or len(vals) != k * d:
            raise InputError(f"center row declares k={k}, d={d} but carries {len(vals)} values")
        return cls(np.array(vals).reshape(k, d))


def as_centers(w) -> Centers:
    return w if isinstance(w, Centers) else Centers(w)


def _as_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != d:
        raise InputError(f"point has dimension {x.shape[0]}, centers have dimension {d}")
    return x


def nearest_center(w, x) -> int:
    """Index of the center closest to ``x``; ties go to the lowest index."""
    w = as_centers(w)
    x = _as_point(x, w.d)
    dist2 = np.sum((w.points - x) ** 2, axis=1)
    # np.argmin returns the first minimizer.
    return int(np.argmin(dist2))


class Separation(NamedTuple):
    distance: float
    degenerate: bool


def min_separation(w) -> Separation:
    """Smallest pairwise distance between centers, with a degeneracy flag."""
    w = as_centers(w)
    if w.k < 2:
        raise InputError("min_separation needs at least two centers")
    pts = w.points
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    iu = np.triu_indices(w.k, 1)
    m = float(dist[iu].min())
    return Separation(m, m == 0.0)


def is_degenerate(w, tol: float = 0.0) -> bool:
    w = as_centers(w)
    if w.k < 2:
        return False
    return min_separation(w).distance <= tol


def require_nondegenerate(w, tol: float = NEAR_DEGENERATE) -> Centers:
    w = as_centers(w)
    if w.k >= 2:
        sep = min_separation(w).distance
        if sep < tol or sep == 0.0:
            raise DegenerateCentersError(f"centers are (nearly) coincident: min separation {sep!r}")
    return w


def in_support_ball(w, R: float) -> bool:
    """True iff every center lies in the closed ball of radius ``R``."""
    w = as_centers(w)
    return bool(np.all(np.sqrt(np.sum(w.points**2, axis=1)) <= R))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator keyed by a 64-bit seed and a stream index."""
    if not (0 <= int(seed) < 2**64):
        raise InputError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def stack_points(points: Sequence) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=np.float64))
