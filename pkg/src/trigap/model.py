"""Domain types and the reflection catalogue for three competing particles.

Three systems of three interacting particles on the line are supported, each
determined by how the ranked motions share drift, noise, and the local-time
push generated at collisions:

* ``MIDDLE_DIFFUSIVE``: leader and laggard move ballistically, the middle
  particle carries the single Brownian motion; each collision push is split
  evenly between the two ranks involved.
* ``MIDDLE_BALLISTIC``: leader and laggard carry independent Brownian
  motions, the middle particle is ballistic; even split again.
* ``SKEW_ELASTIC``: single Brownian motion on the middle particle, but the
  lower collision pushes with an asymmetric 3:1 split, which makes the
  reflection data skew-symmetric against the noise covariance and produces a
  product-exponential invariant law for the gaps.

The adjacent spacings ("gaps") ``G = R1 - R2`` and ``H = R2 - R3`` of every
system form a semimartingale reflecting Brownian motion in the nonnegative
quadrant with drift ``m``, covariance ``C`` and reflection matrix
``R = I - Q``; :func:`reflection_spec` assembles that data, and everything
downstream (solvers, estimators) consumes it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SystemKind",
    "DriftSpec",
    "InitialPositions",
    "TimeGrid",
    "SamplePath",
    "ReflectionSpec",
    "SimConfig",
    "StationarityResult",
    "reflection_spec",
    "stationarity_check",
    "default_picard_tol",
]


class SystemKind(enum.Enum):
    """The three supported collision systems."""

    MIDDLE_DIFFUSIVE = "middle-diffusive"
    MIDDLE_BALLISTIC = "middle-ballistic"
    SKEW_ELASTIC = "skew-elastic"

    @property
    def n_brownian(self) -> int:
        """Number of driving Brownian motions (1 or 2)."""
        return 2 if self is SystemKind.MIDDLE_BALLISTIC else 1

    @property
    def regulator_split(self) -> tuple[tuple[float, float], ...]:
        """Coefficients of (A, Gamma) in each ranked path R1, R2, R3.

        A is the local time of the upper collision (G at 0), Gamma of the
        lower collision (H at 0). Rows are ranks 1..3.
        """
        if self is SystemKind.SKEW_ELASTIC:
            return ((0.5, 0.0), (-0.5, 1.5), (0.0, 0.5))
        return ((0.5, 0.0), (-0.5, 0.5), (0.0, -0.5))

    @property
    def noisy_ranks(self) -> tuple[int, ...]:
        """0-based ranks that carry a Brownian term."""
        if self is SystemKind.MIDDLE_BALLISTIC:
            return (0, 2)
        return (1,)


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class DriftSpec:
    """Per-rank drifts (delta1, delta2, delta3)."""

    delta1: float
    delta2: float
    delta3: float

    def __post_init__(self) -> None:
        _require_finite("drift", self.delta1, self.delta2, self.delta3)

    def as_array(self) -> np.ndarray:
        return np.array([self.delta1, self.delta2, self.delta3])


@dataclass(frozen=True)
class InitialPositions:
    """Strictly ordered starting positions x1 > x2 > x3."""

    x1: float
    x2: float
    x3: float

    def __post_init__(self) -> None:
        _require_finite("initial position", self.x1, self.x2, self.x3)
        if not (self.x1 > self.x2 > self.x3):
            raise ValueError(
                f"initial positions must satisfy x1 > x2 > x3, got "
                f"({self.x1}, {self.x2}, {self.x3})"
            )

    @property
    def g0(self) -> float:
        """Initial upper gap x1 - x2."""
        return self.x1 - self.x2

    @property
    def h0(self) -> float:
        """Initial lower gap x2 - x3."""
        return self.x2 - self.x3


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * dt, k = 0..n_steps."""

    dt: float
    n_steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps!r}")

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_points) * self.dt


@dataclass(frozen=True, eq=False)
class SamplePath:
    """A scalar path sampled on a :class:`TimeGrid`.

    ``values[k]`` is the path at t_k; length must equal ``grid.n_points``.
    The array is referenced, not copied.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.grid.n_points:
            raise ValueError(
                f"path needs {self.grid.n_points} values, got shape {v.shape}"
            )
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True, eq=False)
class ReflectionSpec:
    """Quadrant reflection data (m, C, R = I - Q) for the gap process."""

    system: SystemKind
    q: np.ndarray          # off-diagonal pull matrix, 2x2
    c: np.ndarray          # noise covariance of (z1, z2), 2x2
    m: np.ndarray          # gap drift (delta1-delta2, delta2-delta3)
    lam: np.ndarray        # stationary local-time rates, -R^{-1} m

    @property
    def r(self) -> np.ndarray:
        return np.eye(2) - self.q

    @property
    def q12(self) -> float:
        return float(self.q[0, 1])

    @property
    def q21(self) -> float:
        return float(self.q[1, 0])

    @property
    def spectral_radius(self) -> float:
        """rho(Q) = sqrt(q12 * q21); the per-sweep Picard contraction."""
        return math.sqrt(self.q12 * self.q21)


def reflection_spec(system: SystemKind, drifts: DriftSpec) -> ReflectionSpec:
    """Assemble the quadrant reflection data for a system and drift choice.

    Args:
        system: which collision system.
        drifts: per-rank drifts.

    Returns:
        ReflectionSpec with the pull matrix Q, noise covariance C, gap drift
        m and the closed-form rate vector lam solving R lam = -m.
    """
    d1, d2, d3 = drifts.delta1, drifts.delta2, drifts.delta3
    m = np.array([d1 - d2, d2 - d3])
    if system is SystemKind.SKEW_ELASTIC:
        q = np.array([[0.0, 1.5], [0.5, 0.0]])
        c = np.array([[1.0, -1.0], [-1.0, 1.0]])
        # R^{-1} = [[4, 6], [2, 4]] for R = [[1, -3/2], [-1/2, 1]].
        lam = 2.0 * np.array([3 * d3 - 2 * d1 - d2, 2 * d3 - d1 - d2])
    else:
        q = np.array([[0.0, 0.5], [0.5, 0.0]])
        if system is SystemKind.MIDDLE_BALLISTIC:
            c = np.eye(2)
        else:
            c = np.array([[1.0, -1.0], [-1.0, 1.0]])
        lam = (2.0 / 3.0) * np.array([d2 + d3 - 2 * d1, 2 * d3 - d1 - d2])
    return ReflectionSpec(system=system, q=q, c=c, m=m, lam=lam)


@dataclass(frozen=True)
class StationarityResult:
    """Outcome of a positive-recurrence test, with the failing inequality."""

    stationary: bool
    diagnostic: str

    def __bool__(self) -> bool:
        return self.stationary


def _neg(x: float) -> float:
    """Negative part max(-x, 0)."""
    return max(-x, 0.0)


def stationarity_check(system: SystemKind, drifts: DriftSpec) -> StationarityResult:
    """Decide positive recurrence of the gap process from the drifts alone.

    Args:
        system: which collision system.
        drifts: per-rank drifts.

    Returns:
        StationarityResult; ``diagnostic`` names the violated inequality when
        the answer is negative, or reads "stationary" otherwise.
    """
    d1, d2, d3 = drifts.delta1, drifts.delta2, drifts.delta3
    if system is SystemKind.MIDDLE_DIFFUSIVE:
        lhs1 = 2 * (d3 - d2) + _neg(d1 - d2)
        lhs2 = 2 * (d2 - d1) + _neg(d2 - d3)
        if lhs1 <= 0:
            return StationarityResult(
                False,
                f"2(delta3 - delta2) + (delta1 - delta2)^- = {lhs1:g} <= 0",
            )
        if lhs2 <= 0:
            return StationarityResult(
                False,
                f"2(delta2 - delta1) + (delta2 - delta3)^- = {lhs2:g} <= 0",
            )
    elif system is SystemKind.SKEW_ELASTIC:
        if not 3 * d3 > 2 * d1 + d2:
            return StationarityResult(
                False, f"3 delta3 > 2 delta1 + delta2 fails ({3*d3:g} <= {2*d1+d2:g})"
            )
        if not 2 * d3 > d1 + d2:
            return StationarityResult(
                False, f"2 delta3 > delta1 + delta2 fails ({2*d3:g} <= {d1+d2:g})"
            )
    else:  # MIDDLE_BALLISTIC: both rate components must be positive
        if not d2 + d3 - 2 * d1 > 0:
            return StationarityResult(
                False, f"delta2 + delta3 - 2 delta1 = {d2+d3-2*d1:g} <= 0"
            )
        if not 2 * d3 - d1 - d2 > 0:
            return StationarityResult(
                False, f"2 delta3 - delta1 - delta2 = {2*d3-d1-d2:g} <= 0"
            )
    return StationarityResult(True, "stationary")


def default_picard_tol(
    drifts: DriftSpec, x0: InitialPositions, grid: TimeGrid
) -> float:
    """Scaled solver tolerance 1e-10 * (1 + horizon scale).

    The scale proxy is deterministic (no sampled drivers): initial gaps plus
    the drift excursion |m_j| T plus three standard deviations of a Brownian
    motion at the horizon.
    """
    t = grid.horizon
    m1 = abs(drifts.delta1 - drifts.delta2)
    m2 = abs(drifts.delta2 - drifts.delta3)
    scale = max(x0.g0, x0.h0, m1 * t + 3 * math.sqrt(t), m2 * t + 3 * math.sqrt(t))
    return 1e-10 * (1.0 + scale)


@dataclass(frozen=True)
class SimConfig:
    """Everything one replication needs; validated eagerly.

    ``picard_tol`` defaults to the scaled tolerance of
    :func:`default_picard_tol`; ``eta`` (corner threshold) to 3 sqrt(dt);
    ``epsilon`` (excursion threshold) to 10 eta. All three are resolved at
    construction so downstream consumers see concrete positive numbers.
    """

    system: SystemKind
    drifts: DriftSpec
    x0: InitialPositions
    grid: TimeGrid
    seed: int
    replication_index: int = 0
    picard_tol: float | None = None
    eta: float | None = None
    epsilon: float | None = None

    def __post_init__(self) -> None:
        if self.replication_index < 0:
            raise ValueError("replication_index must be >= 0")
        if self.picard_tol is None:
            object.__setattr__(
                self, "picard_tol", default_picard_tol(self.drifts, self.x0, self.grid)
            )
        if self.eta is None:
            object.__setattr__(self, "eta", 3.0 * math.sqrt(self.grid.dt))
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", 10.0 * self.eta)
        for name in ("picard_tol", "eta", "epsilon"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if self.epsilon <= self.picard_tol:
            raise ValueError(
                f"epsilon = {self.epsilon:g} must exceed picard_tol = "
                f"{self.picard_tol:g}"
            )

    @property
    def reflection(self) -> ReflectionSpec:
        return reflection_spec(self.system, self.drifts)
