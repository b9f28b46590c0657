"""Monte Carlo estimators and verification statistics for the gap process.

Conventions shared by every estimator here:

* 50% burn-in: time averages and boundary integrals use only the second
  half of the horizon (window [T/2, T]).
* Replication-level errors: each replication is summarized once
  (:func:`summarize_replication`); ensemble means carry standard errors
  computed across replications, never from within-path variability, so
  autocorrelation cannot fake precision.
* Thinning: distributional samples (KS tests, histograms) are subsampled at
  the decorrelation time of G, estimated from its empirical
  autocorrelation (first crossing of 1/e).

The boundary measures are estimated by local-time integrals: with window
length T', nu_hat_1(alpha) = (2/T') sum exp(-alpha H(t_k)) dA_k, and
symmetrically for nu_hat_2; at alpha = 0 these reduce exactly to
(2/T') * (growth of A over the window), which is the mass identity the
stationary theory predicts to converge to 2 lambda_1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats as sps

from . import _kernels, analysis
from .model import (
    DriftSpec,
    ReflectionSpec,
    SamplePath,
    SystemKind,
    stationarity_check,
)
from .systems import _PERM_TABLE, CollisionReport, NameTriple, RankTriple, detect_collisions

__all__ = [
    "MeanSE",
    "ReplicationSummary",
    "EnsembleSummary",
    "summarize_replication",
    "ensemble_summary",
    "lln_rates",
    "boundary_masses",
    "laplace_bar_residual",
    "symmetric_case_checks",
    "gamma_conjecture_test",
    "product_exponential_test",
    "no_product_form_witness",
    "corner_occupation_estimate",
    "downcrossing_local_time",
    "occupancy_fractions",
    "decorrelation_time",
    "ks_critical",
]


@dataclass(frozen=True)
class MeanSE:
    """A replication-ensemble mean with its standard error."""

    mean: float
    se: float
    n: int

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - 1.96 * self.se, self.mean + 1.96 * self.se)

    def z_against(self, target: float) -> float:
        return (self.mean - target) / self.se if self.se > 0 else math.inf


def _mean_se(xs: Sequence[float]) -> MeanSE:
    arr = np.asarray(list(xs), dtype=float)
    n = arr.shape[0]
    if n == 0:
        return MeanSE(math.nan, math.nan, 0)
    se = float(np.std(arr, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return MeanSE(float(arr.mean()), se, n)


def ks_critical(n: int, level: float = 0.05) -> float:
    """Asymptotic Kolmogorov-Smirnov critical value at the given level."""
    if n < 1:
        raise ValueError("need at least one sample")
    return float(special.kolmogi(level)) / math.sqrt(n)


def decorrelation_time(values: np.ndarray, dt: float, max_points: int = 65536) -> float:
    """Decorrelation time: first lag where the autocorrelation drops below 1/e.

    The series is strided down to at most ``max_points`` before the FFT, so
    the answer is resolved no finer than the stride; that only ever
    over-thins, never under-thins.
    """
    x = np.asarray(values, dtype=float)
    stride = max(1, int(math.ceil(x.shape[0] / max_points)))
    x = x[::stride]
    n = x.shape[0]
    if n < 8:
        return dt * stride
    x = x - x.mean()
    var = float(np.dot(x, x))
    if var == 0.0:
        return dt * stride
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[: n // 2] / var
    below = np.flatnonzero(acf < 1.0 / math.e)
    lag = int(below[0]) if below.size else n // 2
    return dt * stride * max(lag, 1)


def downcrossing_local_time(
    path: SamplePath | np.ndarray, level: float, u: float, zero_tol: float = 0.0
) -> float:
    """Local-time estimate u * (number of downcrossings from level+u to level).

    A downcrossing is a transition from >= level + u to <= level + zero_tol
    (arming at the top first). For a path reflected at ``level`` the count
    scales like L(T)/u, so the product estimates the terminal local time.

    Args:
        path: path to scan.
        level: boundary level.
        u: crossing height, > zero_tol >= 0.
        zero_tol: lower-edge tolerance; 0.0 demands exact returns to level.

    Returns:
        The estimate u * count.
    """
    if not u > zero_tol >= 0.0:
        raise ValueError(f"need u > zero_tol >= 0, got u={u!r}, zero_tol={zero_tol!r}")
    vals = path.values if isinstance(path, SamplePath) else np.asarray(path, dtype=float)
    count = _kernels.count_downcrossings(vals, float(level + zero_tol), float(level + u))
    return u * float(count)


def occupancy_fractions(names: NameTriple, after_index: int) -> np.ndarray:
    """Fraction of grid points each name spends at each rank from after_index on.

    Returns a 3x3 array, rows = names, columns = ranks; every row sums to 1
    up to float division.
    """
    codes = names.rank_codes[after_index:]
    if codes.shape[0] == 0:
        raise ValueError(f"after_index = {after_index} leaves no grid points")
    rof = _PERM_TABLE[codes]
    total = codes.shape[0]
    occ = np.empty((3, 3))
    for i in range(3):
        for k in range(3):
            occ[i, k] = np.count_nonzero(rof[:, i] == k) / total
    return occ


@dataclass(frozen=True, eq=False)
class ReplicationSummary:
    """Everything one replication contributes to ensemble statistics."""

    replication_index: int
    dt: float
    horizon: float
    burn_time: float
    lambda_hat: tuple[float, float]
    slln2: tuple[float, float]
    gap_means: dict[str, float]
    collision: CollisionReport
    occupancy: np.ndarray | None
    pi_hat: dict[tuple[float, float], float]
    nu_hat: tuple[dict[float, float], dict[float, float]]
    nu_total: tuple[float, float]
    tau_dec: float
    thinned_g: np.ndarray
    thinned_h: np.ndarray
    cond_h_at_g0: np.ndarray
    cond_g_at_h0: np.ndarray
    picard_iterations: int


def summarize_replication(
    ranks: RankTriple,
    *,
    alpha_pairs: Sequence[tuple[float, float]] = (),
    nu_alphas: Sequence[float] = (),
    names: NameTriple | None = None,
    max_thinned: int = 200_000,
) -> ReplicationSummary:
    """Reduce one simulated replication to its summary statistics.

    Args:
        ranks: simulated triple.
        alpha_pairs: (alpha1, alpha2) exponents for the joint transform
            pi_hat = window average of exp(-alpha1 G - alpha2 H); negative
            values are allowed (moment-generating direction).
        nu_alphas: exponents for the boundary transforms nu_hat_j.
        names: optional unfolded triple; post-collision occupancy is
            computed when the corner was hit.
        max_thinned: cap on stored thinned samples.

    Returns:
        ReplicationSummary.
    """
    cfg = ranks.config
    grid = ranks.grid
    n = grid.n_steps
    t_end = grid.horizon
    burn = n // 2
    g = ranks.gaps.G.values
    h = ranks.gaps.H.values
    a = ranks.regulators.A.values
    gm = ranks.regulators.Gamma.values
    window_t = (n - burn) * grid.dt

    a_end, gm_end = float(a[-1]), float(gm[-1])
    lambda_hat = (a_end / t_end, gm_end / t_end)
    slln2 = (
        (2.0 * a_end - gm_end) / (2.0 * t_end),
        (2.0 * gm_end - a_end) / (2.0 * t_end),
    )

    gw = g[burn:]
    hw = h[burn:]
    gap_means = {
        "G": float(gw.mean()),
        "H": float(hw.mean()),
        "sum": float((gw + hw).mean()),
    }

    pi_hat: dict[tuple[float, float], float] = {}
    for a1, a2 in alpha_pairs:
        pi_hat[(float(a1), float(a2))] = float(np.mean(np.exp(-a1 * gw - a2 * hw)))

    # boundary integrals: left-endpoint integrand against regulator increments
    da = np.diff(a[burn:])
    dgm = np.diff(gm[burn:])
    g_left = gw[:-1]
    h_left = hw[:-1]
    nu_total = (
        2.0 / window_t * (a_end - float(a[burn])),
        2.0 / window_t * (gm_end - float(gm[burn])),
    )
    nu1: dict[float, float] = {}
    nu2: dict[float, float] = {}
    for al in nu_alphas:
        al = float(al)
        if al == 0.0:
            # same number as nu_total by construction, not just statistically
            nu1[al], nu2[al] = nu_total
            continue
        nu1[al] = 2.0 / window_t * float(np.dot(np.exp(-al * h_left), da))
        nu2[al] = 2.0 / window_t * float(np.dot(np.exp(-al * g_left), dgm))

    collision = detect_collisions(ranks, cfg.eta)
    occupancy = None
    if names is not None and collision.first_triple_collision_index is not None:
        occupancy = occupancy_fractions(names, collision.first_triple_collision_index)

    tau = decorrelation_time(gw, grid.dt)
    stride = max(1, int(math.ceil(tau / grid.dt)))
    thinned_g = gw[::stride]
    thinned_h = hw[::stride]
    if thinned_g.shape[0] > max_thinned:
        extra = int(math.ceil(thinned_g.shape[0] / max_thinned))
        thinned_g = thinned_g[::extra]
        thinned_h = thinned_h[::extra]

    eta = cfg.eta
    cond_h = hw[gw <= eta]
    cond_g = gw[hw <= eta]

    return ReplicationSummary(
        replication_index=cfg.replication_index,
        dt=grid.dt,
        horizon=t_end,
        burn_time=burn * grid.dt,
        lambda_hat=lambda_hat,
        slln2=slln2,
        gap_means=gap_means,
        collision=collision,
        occupancy=occupancy,
        pi_hat=pi_hat,
        nu_hat=(nu1, nu2),
        nu_total=nu_total,
        tau_dec=tau,
        thinned_g=thinned_g.copy(),
        thinned_h=thinned_h.copy(),
        cond_h_at_g0=cond_h.copy(),
        cond_g_at_h0=cond_g.copy(),
        picard_iterations=ranks.picard_iterations,
    )


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    """Replication-ensemble reduction, merged in replication-index order."""

    n_replications: int
    replication_indices: tuple[int, ...]
    lambda_hat: tuple[MeanSE, MeanSE]
    slln2: tuple[MeanSE, MeanSE]
    gap_means: dict[str, MeanSE]
    nu_total: tuple[MeanSE, MeanSE]
    hit_fraction: float
    min_gap_sum: float
    mean_occupancy: np.ndarray | None
    n_with_occupancy: int


def ensemble_summary(summaries: Sequence[ReplicationSummary]) -> EnsembleSummary:
    """Merge replication summaries (ordered by replication index)."""
    if not summaries:
        raise ValueError("no replications to merge")
    ss = sorted(summaries, key=lambda s: s.replication_index)
    occs = [s.occupancy for s in ss if s.occupancy is not None]
    return EnsembleSummary(
        n_replications=len(ss),
        replication_indices=tuple(s.replication_index for s in ss),
        lambda_hat=(
            _mean_se([s.lambda_hat[0] for s in ss]),
            _mean_se([s.lambda_hat[1] for s in ss]),
        ),
        slln2=(
            _mean_se([s.slln2[0] for s in ss]),
            _mean_se([s.slln2[1] for s in ss]),
        ),
        gap_means={
            k: _mean_se([s.gap_means[k] for s in ss]) for k in ("G", "H", "sum")
        },
        nu_total=(
            _mean_se([s.nu_total[0] for s in ss]),
            _mean_se([s.nu_total[1] for s in ss]),
        ),
        hit_fraction=float(
            np.mean([s.collision.first_triple_collision_index is not None for s in ss])
        ),
        min_gap_sum=min(s.collision.min_gap_sum for s in ss),
        mean_occupancy=np.mean(occs, axis=0) if occs else None,
        n_with_occupancy=len(occs),
    )


@dataclass(frozen=True)
class LlnReport:
    """Regulator growth rates against their stationary targets."""

    lambda_hat: tuple[MeanSE, MeanSE]
    lambda_target: tuple[float, float]
    slln2: tuple[MeanSE, MeanSE]
    slln2_target: tuple[float, float]


def lln_rates(
    summaries: Sequence[ReplicationSummary], spec: ReflectionSpec, drifts: DriftSpec
) -> LlnReport:
    """Law-of-large-numbers report: A(T)/T and Gamma(T)/T against lambda.

    The secondary combinations (2A - Gamma)/(2T) and (2Gamma - A)/(2T)
    target the drift gaps delta2 - delta1 and delta3 - delta2 (exact
    consequences of R lambda = -m for the even-split systems). If the
    drifts are not in the positive-recurrence region the rates are still
    reported, with a warning that the lambda targets are uninterpreted.
    """
    check = stationarity_check(spec.system, drifts)
    if not check:
        warnings.warn(
            f"drifts are not positive-recurrent ({check.diagnostic}); "
            "rate targets are formal only",
            stacklevel=2,
        )
    ens = ensemble_summary(summaries)
    return LlnReport(
        lambda_hat=ens.lambda_hat,
        lambda_target=(float(spec.lam[0]), float(spec.lam[1])),
        slln2=ens.slln2,
        slln2_target=(
            drifts.delta2 - drifts.delta1,
            drifts.delta3 - drifts.delta2,
        ),
    )


@dataclass(frozen=True)
class BoundaryMassReport:
    """Total boundary masses nu_j(0) against 2 lambda_j."""

    nu1: MeanSE
    nu2: MeanSE
    total: MeanSE
    target: tuple[float, float]
    total_target: float


def boundary_masses(
    summaries: Sequence[ReplicationSummary], spec: ReflectionSpec
) -> BoundaryMassReport:
    """Boundary-mass estimates from regulator growth over the window."""
    nu1 = _mean_se([s.nu_total[0] for s in summaries])
    nu2 = _mean_se([s.nu_total[1] for s in summaries])
    tot = _mean_se([s.nu_total[0] + s.nu_total[1] for s in summaries])
    t1, t2 = 2.0 * float(spec.lam[0]), 2.0 * float(spec.lam[1])
    return BoundaryMassReport(nu1=nu1, nu2=nu2, total=tot, target=(t1, t2), total_target=t1 + t2)


@dataclass(frozen=True)
class LaplaceResidualRow:
    """One alpha pair's basic-adjoint residual with its ensemble error."""

    alpha1: float
    alpha2: float
    residual: MeanSE

    @property
    def z(self) -> float:
        return self.residual.mean / self.residual.se if self.residual.se > 0 else math.inf


def laplace_bar_residual(
    summaries: Sequence[ReplicationSummary],
    alpha_pairs: Sequence[tuple[float, float]],
    drifts: DriftSpec,
) -> list[LaplaceResidualRow]:
    """Residual of the stationary transform identity for the even-split system.

    For each (alpha1, alpha2) the identity predicts

        K(alpha) pi(alpha1, alpha2) = (alpha1 - alpha2/2) nu1(alpha2)
                                      + (alpha2 - alpha1/2) nu2(alpha1),
        K(alpha) = (alpha1 - alpha2)^2 + 2(delta2 - delta1) alpha1
                                       + 2(delta3 - delta2) alpha2,

    so the per-replication residual (LHS - RHS) should vanish within noise.
    Pairs on (or within 1e-6 of) the degenerate parabola K = 0 are rejected:
    there the identity pins no transform value.

    Raises:
        ValueError: for a near-parabola pair, or when a required transform
            was not computed in the summaries.
    """
    d1, d2, d3 = drifts.delta1, drifts.delta2, drifts.delta3
    rows = []
    for a1, a2 in alpha_pairs:
        a1, a2 = float(a1), float(a2)
        k = (a1 - a2) ** 2 + 2.0 * (d2 - d1) * a1 + 2.0 * (d3 - d2) * a2
        if abs(k) <= 1e-6:
            raise ValueError(
                f"alpha pair ({a1}, {a2}) lies on the degenerate parabola (K = {k:g})"
            )
        res = []
        for s in summaries:
            try:
                pi = s.pi_hat[(a1, a2)]
                n1 = s.nu_hat[0][a2]
                n2 = s.nu_hat[1][a1]
            except KeyError as exc:
                raise ValueError(
                    f"summary for replication {s.replication_index} lacks transform "
                    f"values for pair ({a1}, {a2}); recompute with matching alpha grids"
                ) from exc
            res.append(k * pi - (a1 - a2 / 2.0) * n1 - (a2 - a1 / 2.0) * n2)
        rows.append(LaplaceResidualRow(alpha1=a1, alpha2=a2, residual=_mean_se(res)))
    return rows


def _pooled_thinned(summaries: Sequence[ReplicationSummary]) -> tuple[np.ndarray, np.ndarray]:
    ss = sorted(summaries, key=lambda s: s.replication_index)
    g = np.concatenate([s.thinned_g for s in ss])
    h = np.concatenate([s.thinned_h for s in ss])
    return g, h


@dataclass(frozen=True)
class SymmetricFunctionalRow:
    """One alpha pair of the symmetric-case transform functional equation."""

    alpha1: float
    alpha2: float
    residual: MeanSE

    @property
    def z(self) -> float:
        return self.residual.mean / self.residual.se if self.residual.se > 0 else math.inf


@dataclass(frozen=True, eq=False)
class SymmetricCaseReport:
    """Verification bundle for the symmetric even-split system.

    ``mean_g``/``mean_h`` target 1/(3 lambda); ``functional_rows`` hold the
    transform functional-equation residuals; ``saturation`` is the window
    average of exp(lambda (G+H)), bounded by 2 in the stationary law;
    ``ks_exponential`` is the pooled thinned KS distance of G against
    Exp(2 lambda), which stays bounded away from 0 (the true marginal is
    not exponential); ``marginal_table`` tabulates the estimated marginal
    density against the convolution identity
    tau(xi) = lambda [2 exp(-lambda xi) - int_0^xi exp(-lambda(xi-z)) sigma(z) dz].
    """

    lam: float
    mean_g: MeanSE
    mean_h: MeanSE
    mean_target: float
    functional_rows: list[SymmetricFunctionalRow]
    saturation: MeanSE
    saturation_bound: float
    ks_exponential: float
    ks_exponential_critical: float
    n_pooled: int
    marginal_xi: np.ndarray
    marginal_tau_hat: np.ndarray
    marginal_tau_rhs: np.ndarray

    @property
    def marginal_sup_diff(self) -> float:
        return float(np.max(np.abs(self.marginal_tau_hat - self.marginal_tau_rhs)))


def _fd_bin_edges(samples: np.ndarray, hi: float) -> np.ndarray:
    """Fixed-width histogram edges on [0, hi], Freedman-Diaconis width."""
    q75, q25 = np.percentile(samples, [75, 25])
    width = 2.0 * (q75 - q25) / samples.shape[0] ** (1.0 / 3.0)
    n_bins = int(np.clip(math.ceil(hi / width) if width > 0 else 40, 10, 400))
    return np.linspace(0.0, hi, n_bins + 1)


def symmetric_case_checks(
    summaries: Sequence[ReplicationSummary],
    lam: float,
    alpha_pairs: Sequence[tuple[float, float]],
) -> SymmetricCaseReport:
    """Run the symmetric-case identity battery (equal rate components).

    Requires the summaries to carry pi_hat at each requested pair, at both
    matching diagonal points, and at (-lam, -lam) for the saturation
    statistic.
    """
    mean_g = _mean_se([s.gap_means["G"] for s in summaries])
    mean_h = _mean_se([s.gap_means["H"] for s in summaries])

    rows = []
    for a1, a2 in alpha_pairs:
        a1, a2 = float(a1), float(a2)
        res = []
        for s in summaries:
            try:
                p12 = s.pi_hat[(a1, a2)]
                p11 = s.pi_hat[(a1, a1)]
                p22 = s.pi_hat[(a2, a2)]
            except KeyError as exc:
                raise ValueError(
                    f"pi_hat lacks ({a1}, {a2}) or its diagonal companions"
                ) from exc
            lhs = p12 * ((a1 - a2) ** 2 + lam * (a1 + a2))
            rhs = lam * ((2 * a1 - a2) * p22 + (2 * a2 - a1) * p11)
            res.append(lhs - rhs)
        rows.append(SymmetricFunctionalRow(a1, a2, _mean_se(res)))

    sat_key = (-float(lam), -float(lam))
    try:
        sat = _mean_se([s.pi_hat[sat_key] for s in summaries])
    except KeyError as exc:
        raise ValueError(
            "saturation statistic needs pi_hat at (-lambda, -lambda)"
        ) from exc

    g_pool, h_pool = _pooled_thinned(summaries)
    ks = float(sps.kstest(g_pool, "expon", args=(0.0, 1.0 / (2.0 * lam))).statistic)

    both = np.concatenate([g_pool, h_pool])
    sums = g_pool + h_pool
    hi = float(np.quantile(both, 0.99))
    edges = _fd_bin_edges(both, hi)
    mids = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    tau_hat, _ = np.histogram(both, bins=edges, density=True)
    sigma_hat, _ = np.histogram(sums, bins=edges, density=True)
    # right-hand side: lambda [2 e^{-lam xi} - (e^{-lam .} * sigma)(xi)]
    rhs = np.empty_like(mids)
    for i, xi in enumerate(mids):
        z = mids[mids <= xi]
        conv = float(np.sum(np.exp(-lam * (xi - z)) * sigma_hat[: z.shape[0]]) * width)
        rhs[i] = lam * (2.0 * math.exp(-lam * xi) - conv)

    return SymmetricCaseReport(
        lam=float(lam),
        mean_g=mean_g,
        mean_h=mean_h,
        mean_target=1.0 / (3.0 * lam),
        functional_rows=rows,
        saturation=sat,
        saturation_bound=2.0,
        ks_exponential=ks,
        ks_exponential_critical=ks_critical(g_pool.shape[0]),
        n_pooled=int(g_pool.shape[0]),
        marginal_xi=mids,
        marginal_tau_hat=tau_hat,
        marginal_tau_rhs=rhs,
    )


@dataclass(frozen=True)
class GammaConjectureReport:
    """Informational fit of the conjectured gamma law for the gap sum.

    The candidate shape is 2u/3 and rate lambda u, where u solves
    2u log(u/(u-1)) = 3 log 2; the same u makes (u/(u-1))^{2u/3} = 2
    exactly, which collapses the implied marginal to
    tau(xi) = 2 lambda exp(-lambda xi) Q(2u/3, lambda (u-1) xi) with Q the
    regularized upper incomplete gamma function.
    """

    u: float
    shape: float
    rate: float
    ks_sum: float
    ks_sum_critical: float
    ks_marginal: float
    ks_marginal_critical: float
    n_sum: int
    n_marginal: int


def gamma_conjecture_test(
    summaries: Sequence[ReplicationSummary], lam: float
) -> GammaConjectureReport:
    """KS distances of G+H against the conjectured gamma law (informational)."""
    u = analysis.lambert_u()
    shape = 2.0 * u / 3.0
    rate = lam * u
    g_pool, h_pool = _pooled_thinned(summaries)
    sums = g_pool + h_pool
    ks_sum = float(sps.kstest(sums, "gamma", args=(shape, 0.0, 1.0 / rate)).statistic)

    both = np.sort(np.concatenate([g_pool, h_pool]))

    def marginal_cdf(xi: np.ndarray) -> np.ndarray:
        # integrate tau numerically on a dense grid reaching past the data
        hi = float(both[-1]) * 1.05 + 1e-12
        grid = np.linspace(0.0, hi, 4096)
        tau = (
            2.0
            * lam
            * np.exp(-lam * grid)
            * special.gammaincc(shape, lam * (u - 1.0) * grid)
        )
        cdf = np.concatenate([[0.0], np.cumsum((tau[1:] + tau[:-1]) * 0.5 * np.diff(grid))])
        cdf = np.clip(cdf, 0.0, 1.0)
        return np.interp(xi, grid, cdf)

    ks_marg = float(sps.ks_1samp(both, marginal_cdf).statistic)
    return GammaConjectureReport(
        u=u,
        shape=shape,
        rate=rate,
        ks_sum=ks_sum,
        ks_sum_critical=ks_critical(sums.shape[0]),
        ks_marginal=ks_marg,
        ks_marginal_critical=ks_critical(both.shape[0]),
        n_sum=int(sums.shape[0]),
        n_marginal=int(both.shape[0]),
    )


@dataclass(frozen=True)
class ProductExponentialReport:
    """Product-of-exponentials verification for the skew-elastic system."""

    rates: tuple[float, float]
    ks_g: float
    ks_h: float
    ks_critical: float
    n_pooled: int
    mean_g: MeanSE
    mean_h: MeanSE
    mean_targets: tuple[float, float]
    gap_correlation: MeanSE


def product_exponential_test(
    summaries: Sequence[ReplicationSummary], spec: ReflectionSpec
) -> ProductExponentialReport:
    """Test G ~ Exp(2 lambda1), H ~ Exp(2 lambda2), independent.

    Pooled thinned samples feed the KS distances; the gap correlation is
    computed per replication and averaged with its ensemble error.
    """
    r1, r2 = 2.0 * float(spec.lam[0]), 2.0 * float(spec.lam[1])
    g_pool, h_pool = _pooled_thinned(summaries)
    ks_g = float(sps.kstest(g_pool, "expon", args=(0.0, 1.0 / r1)).statistic)
    ks_h = float(sps.kstest(h_pool, "expon", args=(0.0, 1.0 / r2)).statistic)
    corrs = []
    for s in summaries:
        if s.thinned_g.shape[0] > 2:
            corrs.append(float(np.corrcoef(s.thinned_g, s.thinned_h)[0, 1]))
    return ProductExponentialReport(
        rates=(r1, r2),
        ks_g=ks_g,
        ks_h=ks_h,
        ks_critical=ks_critical(g_pool.shape[0]),
        n_pooled=int(g_pool.shape[0]),
        mean_g=_mean_se([s.gap_means["G"] for s in summaries]),
        mean_h=_mean_se([s.gap_means["H"] for s in summaries]),
        mean_targets=(1.0 / r1, 1.0 / r2),
        gap_correlation=_mean_se(corrs),
    )


@dataclass(frozen=True)
class WitnessReport:
    """Non-product-form witness: H near the G-boundary vs the H marginal.

    ``mean_diff`` averages, per replication, mean(H | G <= eta) - mean(H);
    a product-form law makes it vanish, the even-split law does not.
    ``ks_two_sample`` compares the pooled conditional sample against the
    pooled thinned marginal. ``insufficient`` flags too few boundary visits
    for any verdict.
    """

    mean_diff: MeanSE
    ks_two_sample: float
    n_conditional: int
    insufficient: bool

    @property
    def z(self) -> float:
        return self.mean_diff.mean / self.mean_diff.se if self.mean_diff.se > 0 else math.inf


def no_product_form_witness(
    summaries: Sequence[ReplicationSummary], min_samples: int = 30
) -> WitnessReport:
    """Compare the conditional law of H given G <= eta with the H marginal."""
    diffs = []
    cond_all = []
    for s in summaries:
        if s.cond_h_at_g0.shape[0] >= 3:
            diffs.append(float(s.cond_h_at_g0.mean()) - s.gap_means["H"])
            cond_all.append(s.cond_h_at_g0)
    n_cond = int(sum(c.shape[0] for c in cond_all))
    if n_cond < min_samples or len(diffs) < 2:
        return WitnessReport(
            mean_diff=MeanSE(math.nan, math.nan, len(diffs)),
            ks_two_sample=math.nan,
            n_conditional=n_cond,
            insufficient=True,
        )
    _, h_pool = _pooled_thinned(summaries)
    ks2 = float(sps.ks_2samp(np.concatenate(cond_all), h_pool).statistic)
    return WitnessReport(
        mean_diff=_mean_se(diffs),
        ks_two_sample=ks2,
        n_conditional=n_cond,
        insufficient=False,
    )


@dataclass(frozen=True, eq=False)
class CornerOccupationReport:
    """Corner local-time estimates across a sequence of thresholds."""

    epsilon: np.ndarray
    estimates: np.ndarray
    alpha: float
    theta1: float


def corner_occupation_estimate(
    ranks: RankTriple, epsilon_seq: Sequence[float]
) -> CornerOccupationReport:
    """Estimate the corner occupation functional of the driftless two-noise system.

    The harmonic scaling at the quadrant corner uses phi = rho^alpha
    cos(alpha theta - theta1) in polar coordinates of (G, H); for each
    epsilon the local functional

        (alpha (2 - alpha) / 2) eps^{1 - 2/alpha}
            * sum cos(alpha theta_k - theta1)^{2/alpha - 2} 1{phi_k < eps} dt

    converges (in the small-eps, long-horizon limit) to the corner
    occupation constant times the corner local time. Only meaningful for
    the isotropic two-noise system with equal drifts; other inputs are
    rejected.
    """
    cfg = ranks.config
    if cfg.system is not SystemKind.MIDDLE_BALLISTIC:
        raise ValueError("corner occupation needs the two-noise (isotropic) system")
    d = cfg.drifts
    if not (d.delta1 == d.delta2 == d.delta3):
        raise ValueError(
            f"corner occupation needs equal drifts, got "
            f"({d.delta1}, {d.delta2}, {d.delta3})"
        )
    consts = analysis.corner_constants()
    alpha, theta1 = consts.alpha, consts.theta1
    g = ranks.gaps.G.values
    h = ranks.gaps.H.values
    rho = np.hypot(g, h)
    theta = np.arctan2(h, g)
    cosfac = np.cos(alpha * theta - theta1)
    phi = rho**alpha * cosfac
    dt = ranks.grid.dt
    power = 2.0 / alpha - 2.0
    eps_arr = np.asarray(list(epsilon_seq), dtype=float)
    if np.any(eps_arr <= 0):
        raise ValueError("epsilon thresholds must be positive")
    ests = np.empty_like(eps_arr)
    pref = alpha * (2.0 - alpha) / 2.0
    for i, eps in enumerate(eps_arr):
        mask = phi < eps
        ests[i] = pref * eps ** (1.0 - 2.0 / alpha) * float(
            np.sum(cosfac[mask] ** power)
        ) * dt
    return CornerOccupationReport(
        epsilon=eps_arr, estimates=ests, alpha=alpha, theta1=theta1
    )
