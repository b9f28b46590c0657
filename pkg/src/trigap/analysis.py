"""Deterministic analysis: generator drift checks and closed-form constants.

Contents:

* :func:`ito_drift_identity_check` verifies, pathwise on a grid, that the
  quadratic functional of the gaps satisfies its semimartingale
  decomposition with no local-time contribution: for the even-split system
  d(G^2+GH+H^2) = [1 - (3/2)(lambda1 G + lambda2 H)] dt + (H - G) dW, and
  the skew-elastic analogue with G^2+3GH+3H^2.
* :func:`lyapunov_drift_check` evaluates the exponential Lyapunov drift
  condition [A V] <= -kappa V + b 1{g+h <= a}, V = exp(sqrt(F)), on a grid;
  everything is computed V-normalized in log space because V itself
  overflows double precision on the relevant boxes.
* :func:`lambert_u` solves 2u log(u/(u-1)) = 3 log 2 by bisection and
  cross-checks the Lambert-W closed form (principal branch, Halley
  iteration; cf. Corless et al. 1996 for the iteration).
* :func:`corner_constants` assembles the corner geometry constants
  theta1 = arctan(1/2), alpha = (2/pi) arctan(4/3), the scaling index
  alpha/2, and c0 = 2/alpha + 2 alpha - 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import SamplePath, SystemKind, TimeGrid
from .skorokhod import GapPair, RegulatorPair

__all__ = [
    "ItoIdentityReport",
    "LyapunovReport",
    "CornerConstants",
    "ito_drift_identity_check",
    "lyapunov_drift_check",
    "lambert_u",
    "corner_constants",
]


@dataclass(frozen=True, eq=False)
class ItoIdentityReport:
    """Pathwise residual diagnostics of the gap drift identity.

    The per-step residual is Delta F - drift(t_k) dt - noise(t_k) Delta W.
    ``coef_a``/``coef_gamma`` are OLS coefficients of the residual on the
    regulator increments (with intercept, which absorbs the Ito dt mean);
    their standard errors are the classical OLS ones. ``drift_term_mean``
    averages the occupation part of the drift over the second half of the
    horizon (its stationary mean is 1, balancing the Ito term).
    """

    n_steps: int
    max_abs_residual: float
    mean_residual: float
    mean_residual_se: float
    coef_a: float
    se_a: float
    coef_gamma: float
    se_gamma: float
    drift_term_mean: float

    @property
    def t_a(self) -> float:
        return self.coef_a / self.se_a if self.se_a > 0 else math.nan

    @property
    def t_gamma(self) -> float:
        return self.coef_gamma / self.se_gamma if self.se_gamma > 0 else math.nan


def ito_drift_identity_check(
    gaps: GapPair,
    lam: tuple[float, float],
    grid: TimeGrid,
    w: SamplePath | None = None,
    regulators: RegulatorPair | None = None,
    system: SystemKind = SystemKind.MIDDLE_DIFFUSIVE,
) -> ItoIdentityReport:
    """Check the local-time-free drift identity of the gap functional.

    Args:
        gaps: gap pair of a run whose drifts correspond to ``lam`` (the
            rates determine the gap drift via the reflection matrix).
        lam: rate vector (lambda1, lambda2).
        grid: sampling grid.
        w: the driving Brownian path of the run; None means zero-noise
            drivers, for which the martingale term is absent and the
            residual is deterministically -dt + O(dt^2).
        regulators: local times of the same run; required for the
            regression part, otherwise only residual moments are reported.
        system: even-split middle system or the skew-elastic variant.

    Returns:
        ItoIdentityReport.
    """
    g = gaps.G.values
    h = gaps.H.values
    dt = grid.dt
    l1, l2 = float(lam[0]), float(lam[1])
    f_gg = g * g
    if system is SystemKind.SKEW_ELASTIC:
        f = f_gg + 3.0 * g * h + 3.0 * h * h
        drift = 1.0 - 0.5 * (l1 * g + 3.0 * l2 * h)
        noise = g + 3.0 * h
    elif system is SystemKind.MIDDLE_DIFFUSIVE:
        f = f_gg + g * h + h * h
        drift = 1.0 - 1.5 * (l1 * g + l2 * h)
        noise = h - g
    else:
        raise ValueError("identity applies to the shared-noise systems only")
    res = np.diff(f) - drift[:-1] * dt
    if w is not None:
        res -= noise[:-1] * np.diff(w.values)
    n = res.shape[0]
    mean = float(res.mean())
    mean_se = float(np.std(res, ddof=1) / math.sqrt(n)) if n > 1 else math.nan

    coef = [math.nan, math.nan]
    se = [math.nan, math.nan]
    if regulators is not None:
        da = np.diff(regulators.A.values)
        dgm = np.diff(regulators.Gamma.values)
        cols = [np.ones(n)]
        active = []
        for j, x in enumerate((da, dgm)):
            if float(x.max()) > float(x.min()):
                cols.append(x)
                active.append(j)
        if active:
            x_mat = np.column_stack(cols)
            beta, _, rank, _ = np.linalg.lstsq(x_mat, res, rcond=None)
            for pos, j in enumerate(active, start=1):
                coef[j] = float(beta[pos])
            # collinear regressors (e.g. A = Gamma on symmetric zero-noise
            # runs) leave the split between them unidentified; report the
            # minimum-norm coefficients but no standard errors
            dof = n - x_mat.shape[1]
            if rank == x_mat.shape[1] and dof > 0:
                resid = res - x_mat @ beta
                s2 = float(resid @ resid) / dof
                cov = s2 * np.linalg.inv(x_mat.T @ x_mat)
                for pos, j in enumerate(active, start=1):
                    se[j] = math.sqrt(float(cov[pos, pos]))

    burn = n // 2
    drift_term = 1.0 - drift[burn:]
    return ItoIdentityReport(
        n_steps=n,
        max_abs_residual=float(np.max(np.abs(res))),
        mean_residual=mean,
        mean_residual_se=mean_se,
        coef_a=coef[0],
        se_a=se[0],
        coef_gamma=coef[1],
        se_gamma=se[1],
        drift_term_mean=float(drift_term.mean()),
    )


@dataclass(frozen=True, eq=False)
class LyapunovReport:
    """Grid audit of the exponential drift condition.

    All pointwise quantities are V-normalized: ``gen_over_v`` is [A V]/V,
    ``bound_over_v`` is -kappa + (b/V) 1{g+h <= a}. ``b`` overflows to inf
    for small rates (log_b carries the exact value). A positive
    ``max_violation`` (attained at ``violating_node``) means the asserted
    inequality fails somewhere on the grid.
    """

    kappa: float
    a: float
    epsilon: float
    b: float
    log_b: float
    g_nodes: np.ndarray
    h_nodes: np.ndarray
    gen_over_v: np.ndarray
    bound_over_v: np.ndarray
    region_mask: np.ndarray
    max_violation: float
    violating_node: tuple[float, float] | None

    @property
    def passed(self) -> bool:
        return self.max_violation <= 0.0


def lyapunov_drift_check(
    lam: tuple[float, float],
    epsilon: float | None = None,
    a: float | None = None,
    grid_resolution: int = 200,
) -> LyapunovReport:
    """Evaluate [A V] <= -kappa V + b 1{g+h <= a} on a quadrant grid.

    With F = g^2 + gh + h^2 and V = exp(sqrt(F)),

        [A V] = V (1 - (3/2)(lambda1 g + lambda2 h)) / (2 sqrt(F))
                + V (g-h)^2 / (8 F) - V (g-h)^2 / (8 F^{3/2}),

    kappa = (3/4) min(lambda), and b is the supremum of
    V (1/8 + 1/(2 sqrt(F))) over the window {epsilon <= g+h <= a}. The
    evaluation region is {epsilon <= g+h <= 4a} (V is undefined at the
    origin, hence the epsilon exclusion); defaults are a = 8/kappa and
    epsilon = 1e-3 a.

    Args:
        lam: positive rate pair.
        epsilon: inner cutoff; default 1e-3 a.
        a: window size; default 8/kappa.
        grid_resolution: nodes per axis over [0, 4a].

    Returns:
        LyapunovReport; inspect ``passed``/``violating_node``. A violation
        signals the stated (kappa, b, a) do not dominate the generator at
        that node.
    """
    l1, l2 = float(lam[0]), float(lam[1])
    if not (l1 > 0 and l2 > 0):
        raise ValueError(f"rates must be positive, got ({l1}, {l2})")
    kappa = 0.75 * min(l1, l2)
    if a is None:
        a = 8.0 / kappa
    if epsilon is None:
        epsilon = 1e-3 * a
    if not 0 < epsilon < a:
        raise ValueError(f"need 0 < epsilon < a, got ({epsilon}, {a})")
    side = np.linspace(0.0, 4.0 * a, grid_resolution)
    gg, hh = np.meshgrid(side, side, indexing="ij")
    s = gg + hh
    region = (s >= epsilon) & (s <= 4.0 * a)
    f = gg * gg + gg * hh + hh * hh
    with np.errstate(divide="ignore", invalid="ignore"):
        rt = np.sqrt(f)
        sq_diff = (gg - hh) ** 2
        gen = (
            (1.0 - 1.5 * (l1 * gg + l2 * hh)) / (2.0 * rt)
            + sq_diff / (8.0 * f)
            - sq_diff / (8.0 * f * rt)
        )
    window = region & (s <= a)
    log_v = rt
    with np.errstate(divide="ignore", invalid="ignore"):
        log_b_terms = np.where(
            window, log_v + np.log(0.125 + 1.0 / (2.0 * rt)), -np.inf
        )
    log_b = float(np.max(log_b_terms))
    b = math.exp(log_b) if log_b < 709.0 else math.inf
    expo = np.where(window, log_b - log_v, -np.inf)
    bound = -kappa + np.where(
        expo > 700.0, np.inf, np.exp(np.minimum(expo, 700.0))
    )
    violation = np.where(region, gen - bound, -np.inf)
    idx = np.unravel_index(int(np.argmax(violation)), violation.shape)
    max_violation = float(violation[idx])
    node = (
        (float(gg[idx]), float(hh[idx])) if max_violation > 0 else None
    )
    return LyapunovReport(
        kappa=kappa,
        a=float(a),
        epsilon=float(epsilon),
        b=b,
        log_b=log_b,
        g_nodes=side,
        h_nodes=side,
        gen_over_v=gen,
        bound_over_v=bound,
        region_mask=region,
        max_violation=max_violation,
        violating_node=node,
    )


def _lambert_w_halley(z: float, tol: float = 1e-15, max_iter: int = 64) -> float:
    """Principal-branch Lambert W by Halley iteration.

    Valid for z in (-1/e, 0); the initial guess uses the branch-point
    series w = -1 + p - p^2/3, p = sqrt(2(e z + 1)), which is accurate in
    exactly the region this module needs.
    """
    if not -1.0 / math.e < z < 0.0:
        raise ValueError(f"argument {z!r} outside (-1/e, 0)")
    p = math.sqrt(2.0 * (math.e * z + 1.0))
    w = -1.0 + p - p * p / 3.0
    for _ in range(max_iter):
        ew = math.exp(w)
        fval = w * ew - z
        denom = ew * (w + 1.0) - (w + 2.0) * fval / (2.0 * w + 2.0)
        step = fval / denom
        w -= step
        if abs(step) < tol:
            break
    return w


def lambert_u(tol: float = 1e-12) -> float:
    """Root u > 1 of 2u log(u/(u-1)) = 3 log 2, to absolute tolerance.

    Bisection on the bracket (1 + 1e-9, 64), where the left end is +inf
    and the right end is below the target (the function decreases to 2).
    The Lambert-W closed form u = 3 ln 2 / (3 ln 2 + 2 W(-3 ln 2 /(4 sqrt 2)))
    is evaluated independently and must agree to 1e-10; disagreement means
    a branch mistake and raises.

    Returns:
        The bisection root. At this u, (u/(u-1))^{2u/3} = 2 holds to
        within a few ulps by construction.
    """
    target = 3.0 * math.log(2.0)

    def fn(u: float) -> float:
        return 2.0 * u * math.log(u / (u - 1.0)) - target

    lo, hi = 1.0 + 1e-9, 64.0
    if not (fn(lo) > 0 > fn(hi)):
        raise RuntimeError("bisection bracket lost")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid) > 0:
            lo = mid
        else:
            hi = mid
    u = 0.5 * (lo + hi)

    w = _lambert_w_halley(-target / (4.0 * math.sqrt(2.0)))
    u_closed = target / (target + 2.0 * w)
    if abs(u - u_closed) > 1e-10:
        raise RuntimeError(
            f"bisection root {u!r} and Lambert-W form {u_closed!r} disagree"
        )
    return u


@dataclass(frozen=True)
class CornerConstants:
    """Geometry constants of the quadrant corner for the two-noise system.

    ``alpha`` is the harmonic scaling exponent, ``kappa_index`` = alpha/2
    the time-change index of the corner clock, and ``c0`` the positive
    constant 2/alpha + 2 alpha - 4 entering the occupation asymptotics.
    """

    theta1: float
    alpha: float
    kappa_index: float
    c0: float


def corner_constants() -> CornerConstants:
    """Closed-form corner constants; alpha lies in (1/2, 2/3)."""
    theta1 = math.atan(0.5)
    alpha = (2.0 / math.pi) * math.atan(4.0 / 3.0)
    return CornerConstants(
        theta1=theta1,
        alpha=alpha,
        kappa_index=alpha / 2.0,
        c0=2.0 / alpha + 2.0 * alpha - 4.0,
    )
