"""Skorokhod reflection: the one-sided map and the coupled two-gap solver.

The one-sided problem is classical: given a driver U with U(0) >= 0, the
minimal nondecreasing L keeping G = U + L nonnegative is the running maximum
L(t) = max_{s<=t} (-U(s))^+, and G touches 0 exactly where L grows.

The pair of gaps of three colliding particles solves a coupled version in
the quadrant (Harrison-Reiman reflection): with drivers z1, z2 and pull
matrix Q,

    G = g0 + z1 - q12 Gamma + A,      A    = running max of (q12 Gamma - g0 - z1)^+,
    H = h0 + z2 - q21 A     + Gamma,  Gamma = running max of (q21 A - h0 - z2)^+.

On a finite grid the fixed point is computed by Jacobi iteration of the two
running-max maps from (A, Gamma) = (0, 0); each sweep contracts the sup-norm
error by rho(Q) = sqrt(q12 q21) < 1, and the iterates increase monotonically
to the solution. Where A grows, G sits within the solver tolerance of zero
(and symmetrically for Gamma, H); that flatness is what
:func:`local_time_identification_check` audits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ReflectionSpec, SamplePath

__all__ = [
    "RegulatorPair",
    "GapPair",
    "NonConvergence",
    "LocalTimeReport",
    "reflect_1d",
    "solve_coupled_regulators",
    "local_time_identification_check",
]


@dataclass(frozen=True, eq=False)
class RegulatorPair:
    """Local-time pair: A for the upper collision, Gamma for the lower.

    Both start at 0 and are nondecreasing; each is flat wherever its gap is
    off the boundary.
    """

    A: SamplePath
    Gamma: SamplePath

    def __post_init__(self) -> None:
        for name, p in (("A", self.A), ("Gamma", self.Gamma)):
            v = p.values
            if v[0] != 0.0:
                raise ValueError(f"{name}(0) must be 0, got {v[0]!r}")
            if np.any(np.diff(v) < 0):
                raise ValueError(f"{name} must be nondecreasing")


@dataclass(frozen=True, eq=False)
class GapPair:
    """Adjacent spacings G = R1 - R2 and H = R2 - R3, pointwise >= 0."""

    G: SamplePath
    H: SamplePath

    def __post_init__(self) -> None:
        for name, p in (("G", self.G), ("H", self.H)):
            if np.any(p.values < 0.0):
                raise ValueError(f"{name} must be nonnegative everywhere")


class NonConvergence(RuntimeError):
    """Picard iteration failed to reach tolerance within max_iter sweeps."""

    def __init__(self, iterations: int, last_change: float, tol: float):
        self.iterations = iterations
        self.last_change = last_change
        self.tol = tol
        super().__init__(
            f"no convergence after {iterations} sweeps: "
            f"last sup-norm change {last_change:.3e} >= tol {tol:.3e}"
        )


def reflect_1d(u: SamplePath) -> tuple[SamplePath, SamplePath]:
    """Reflect a one-dimensional driver at the origin.

    Args:
        u: driver path with u(0) >= 0.

    Returns:
        (G, L): the reflected path G = u + L >= 0 and the regulator
        L(t) = max_{s<=t} (-u(s))^+, nondecreasing with L(0) = 0.

    Raises:
        ValueError: if u(0) < 0 (the regulator could not start at 0).
    """
    v = u.values
    if v[0] < 0.0:
        raise ValueError(f"driver must start nonnegative, got u(0) = {v[0]!r}")
    g, length = _kernels.reflect_running_max(v)
    return SamplePath(u.grid, g), SamplePath(u.grid, length)


def _default_tol(z1: np.ndarray, z2: np.ndarray, g0: float, h0: float) -> float:
    scale = max(
        g0, h0, float(np.max(np.abs(z1))), float(np.max(np.abs(z2)))
    )
    return 1e-10 * (1.0 + scale)


def solve_coupled_regulators(
    spec: ReflectionSpec,
    z1: SamplePath,
    z2: SamplePath,
    g0: float,
    h0: float,
    tol: float | None = None,
    max_iter: int = 200,
) -> tuple[RegulatorPair, GapPair, int]:
    """Solve the coupled quadrant reflection on the drivers' grid.

    Args:
        spec: reflection data; only the pull entries q12, q21 enter.
        z1, z2: centered drivers on a common grid with z(0) = 0.
        g0, h0: initial gaps, both >= 0.
        tol: sup-norm stopping tolerance for the Jacobi sweeps; default is
            1e-10 * (1 + problem scale) with scale = max(g0, h0, sup|z|).
        max_iter: sweep budget.

    Returns:
        (regulators, gaps, iterations). Gaps are clipped at exact zero; the
        clip is bounded by the solver tolerance.

    Raises:
        NonConvergence: if the last sweep still moved by >= tol.
        ValueError: on mismatched grids or bad initial data.
    """
    if z1.grid != z2.grid:
        raise ValueError("drivers must share one grid")
    if z1.values[0] != 0.0 or z2.values[0] != 0.0:
        raise ValueError("drivers must start at 0")
    if g0 < 0 or h0 < 0:
        raise ValueError(f"initial gaps must be >= 0, got ({g0!r}, {h0!r})")
    v1, v2 = z1.values, z2.values
    if tol is None:
        tol = _default_tol(v1, v2, g0, h0)
    a, gm, iters, change = _kernels.picard_coupled(
        v1, v2, float(g0), float(h0), spec.q12, spec.q21, float(tol), int(max_iter)
    )
    if not change < tol:
        raise NonConvergence(iters, change, tol)
    g = g0 + v1 - spec.q12 * gm + a
    h = h0 + v2 - spec.q21 * a + gm
    # converged iterates can undershoot by O(tol); anything worse is a bug
    worst = min(float(np.min(g)), float(np.min(h)))
    if worst < -10.0 * tol:
        raise NonConvergence(iters, -worst, tol)
    np.maximum(g, 0.0, out=g)
    np.maximum(h, 0.0, out=h)
    grid = z1.grid
    regulators = RegulatorPair(SamplePath(grid, a), SamplePath(grid, gm))
    gaps = GapPair(SamplePath(grid, g), SamplePath(grid, h))
    return regulators, gaps, iters


@dataclass(frozen=True)
class LocalTimeReport:
    """Audit of the complementarity between regulators and gaps.

    A growth step is an index k >= 1 with a strictly positive regulator
    increment over (t_{k-1}, t_k]. At such k the matching gap must sit
    within tol of the boundary; for a noisy shared-noise middle system the
    *other* gap must additionally sit strictly above tol (the two
    boundaries cannot charge the same instant, else the triple point was
    visited). ``exclusion_violations`` counts failures of that second,
    optional clause.
    """

    tol: float
    a_growth_steps: int
    a_violations: int
    max_g_at_a_growth: float
    gamma_growth_steps: int
    gamma_violations: int
    max_h_at_gamma_growth: float
    exclusion_violations: int
    exclusion_checked: bool

    @property
    def ok(self) -> bool:
        flat = self.a_violations == 0 and self.gamma_violations == 0
        if self.exclusion_checked:
            return flat and self.exclusion_violations == 0
        return flat


def local_time_identification_check(
    regulators: RegulatorPair,
    gaps: GapPair,
    tol: float,
    check_exclusion: bool = False,
) -> LocalTimeReport:
    """Check that each regulator only grows while its gap is at the boundary.

    Args:
        regulators: (A, Gamma) from the coupled solver.
        gaps: (G, H) from the same solve.
        tol: boundary tolerance, normally the solver tolerance.
        check_exclusion: also require that A only grows while H > tol and
            Gamma only grows while G > tol (meaningful for a noisy
            shared-noise middle system, where the corner is never visited;
            leave False for degenerate zero-noise drivers, which park both
            gaps at the corner).

    Returns:
        LocalTimeReport with per-regulator growth/violation counts; it
        reports, never raises.
    """
    da = np.diff(regulators.A.values)
    dg = np.diff(regulators.Gamma.values)
    g_right = gaps.G.values[1:]
    h_right = gaps.H.values[1:]
    a_mask = da > 0.0
    gm_mask = dg > 0.0
    g_at = g_right[a_mask]
    h_at = h_right[gm_mask]
    exclusion = int(np.sum(h_right[a_mask] <= tol)) + int(
        np.sum(g_right[gm_mask] <= tol)
    )
    return LocalTimeReport(
        tol=tol,
        a_growth_steps=int(a_mask.sum()),
        a_violations=int(np.sum(g_at > tol)),
        max_g_at_a_growth=float(g_at.max()) if g_at.size else 0.0,
        gamma_growth_steps=int(gm_mask.sum()),
        gamma_violations=int(np.sum(h_at > tol)),
        max_h_at_gamma_growth=float(h_at.max()) if h_at.size else 0.0,
        exclusion_violations=exclusion,
        exclusion_checked=bool(check_exclusion),
    )
