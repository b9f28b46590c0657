"""Estimator semantics and identity batteries on synthetic and simulated data."""

import math

import numpy as np
import pytest
import scipy.special as special
import scipy.stats as sps

from trigap.model import (
    DriftSpec,
    InitialPositions,
    SimConfig,
    SystemKind,
    TimeGrid,
    reflection_spec,
)
from trigap.skorokhod import reflect_1d
from trigap.stats import (
    MeanSE,
    boundary_masses,
    corner_occupation_estimate,
    decorrelation_time,
    downcrossing_local_time,
    ensemble_summary,
    gamma_conjecture_test,
    ks_critical,
    laplace_bar_residual,
    lln_rates,
    no_product_form_witness,
    occupancy_fractions,
    product_exponential_test,
    summarize_replication,
    symmetric_case_checks,
)
from trigap.stats import ReplicationSummary
from trigap.systems import CollisionReport, simulate_ranks, unfold_names
from trigap import analysis

from test_systems import CoinStub, coin_rng, make_config, synthetic_triple


def run_and_summarize(cfg, alpha_pairs=(), nu_alphas=(), with_names=False):
    ranks = simulate_ranks(cfg)
    names = None
    if with_names:
        names = unfold_names(ranks, cfg.epsilon, coin_rng(cfg.seed, cfg.replication_index))
    return ranks, summarize_replication(
        ranks, alpha_pairs=alpha_pairs, nu_alphas=nu_alphas, names=names
    )


def fake_summary(idx, g, h, *, pi_hat=None, nu_hat=None, cond_h=None,
                 gap_means=None, dt=1e-3):
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if gap_means is None:
        gap_means = {"G": float(g.mean()), "H": float(h.mean()),
                     "sum": float((g + h).mean())}
    collision = CollisionReport(
        eta=0.1, first_triple_collision_index=None, g_collision_count=0,
        h_collision_count=0, corner_visits=0, min_gap_sum=float((g + h).min()))
    return ReplicationSummary(
        replication_index=idx, dt=dt, horizon=100.0, burn_time=50.0,
        lambda_hat=(0.0, 0.0), slln2=(0.0, 0.0), gap_means=gap_means,
        collision=collision, occupancy=None, pi_hat=pi_hat or {},
        nu_hat=nu_hat or ({}, {}), nu_total=(0.0, 0.0), tau_dec=dt,
        thinned_g=g, thinned_h=h,
        cond_h_at_g0=np.asarray(cond_h if cond_h is not None else [], dtype=float),
        cond_g_at_h0=np.asarray([], dtype=float), picard_iterations=1)


class TestBasics:
    def test_mean_se(self):
        m = MeanSE(1.0, 0.5, 4)
        assert m.ci95 == (1.0 - 0.98, 1.0 + 0.98)
        assert m.z_against(0.0) == pytest.approx(2.0)
        assert MeanSE(1.0, 0.0, 1).z_against(0.0) == math.inf

    def test_ks_critical_matches_asymptotic_formula(self):
        assert ks_critical(100) == pytest.approx(
            special.kolmogi(0.05) / 10.0)
        assert ks_critical(100) == pytest.approx(0.13581, abs=1e-4)
        assert ks_critical(400, level=0.01) > ks_critical(400, level=0.05)
        with pytest.raises(ValueError):
            ks_critical(0)

    def test_decorrelation_time_white_noise(self):
        rng = np.random.default_rng(1)
        tau = decorrelation_time(rng.normal(size=40_000), dt=0.01)
        assert tau == pytest.approx(0.01)

    def test_decorrelation_time_ar1(self):
        # AR(1) with acf exp(-lag dt / tau0) decorrelates at about tau0
        rng = np.random.default_rng(2)
        dt, tau0, n = 0.01, 0.5, 200_000
        a = math.exp(-dt / tau0)
        eps = rng.normal(size=n)
        x = np.empty(n)
        x[0] = eps[0]
        for k in range(1, n):
            x[k] = a * x[k - 1] + math.sqrt(1 - a * a) * eps[k]
        tau = decorrelation_time(x, dt)
        assert 0.6 * tau0 < tau < 1.4 * tau0

    def test_decorrelation_time_degenerate_series(self):
        assert decorrelation_time(np.ones(5), dt=0.2) == pytest.approx(0.2)
        assert decorrelation_time(np.full(100, 3.0), dt=0.2) == pytest.approx(0.2)


class TestDowncrossingLocalTime:
    def test_hand_count(self):
        x = np.array([0.5, 0.0, 0.6, 0.3, 0.05, 0.7, 0.02])
        assert downcrossing_local_time(x, 0.0, 0.4, zero_tol=0.1) == pytest.approx(
            0.4 * 3)

    def test_validation(self):
        with pytest.raises(ValueError):
            downcrossing_local_time(np.zeros(4), 0.0, 0.0)
        with pytest.raises(ValueError):
            downcrossing_local_time(np.zeros(4), 0.0, 0.1, zero_tol=0.2)

    def test_estimates_reflection_local_time(self):
        # positive control: the estimator recovers the Skorokhod regulator
        # of a reflected Brownian path with negative drift
        from trigap.model import SamplePath

        rng = np.random.default_rng(3)
        dt, n = 1e-4, 1_000_000
        w = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, math.sqrt(dt), n))])
        u = 0.3 - 0.5 * np.arange(n + 1) * dt + w
        g, length = reflect_1d(SamplePath(TimeGrid(dt=dt, n_steps=n), u))
        # the crossing height must sit well above the grid scale sqrt(dt) or
        # sub-grid dips go unseen; a small lower-edge tolerance recovers the
        # returns that stop short of an exact grid zero
        height = 10.0 * math.sqrt(dt)
        est = downcrossing_local_time(g.values, 0.0, height,
                                      zero_tol=height / 10.0)
        assert est == pytest.approx(length.terminal, rel=0.15)


class TestOccupancy:
    def test_hand_case(self):
        ranks = synthetic_triple(
            g=[0.5, 0.0, 0.5, 0.5, 0.5], h=[0.5, 0.4, 0.3, 0.5, 0.5])
        names = unfold_names(ranks, 0.25, CoinStub([0.9, 0.1]))
        occ = occupancy_fractions(names, 0)
        np.testing.assert_allclose(occ[0], [0.4, 0.6, 0.0])
        np.testing.assert_allclose(occ[1], [0.6, 0.4, 0.0])
        np.testing.assert_allclose(occ[2], [0.0, 0.0, 1.0])
        np.testing.assert_allclose(occ.sum(axis=1), 1.0)
        occ_tail = occupancy_fractions(names, 2)
        np.testing.assert_allclose(occ_tail[0], [0.0, 1.0, 0.0])

    def test_empty_window_rejected(self):
        ranks = synthetic_triple(
            g=[0.5, 0.0, 0.5, 0.5, 0.5], h=[0.5, 0.4, 0.3, 0.5, 0.5])
        names = unfold_names(ranks, 0.25, CoinStub([0.9, 0.1]))
        with pytest.raises(ValueError):
            occupancy_fractions(names, 5)


class TestSummarizeReplication:
    def test_rate_and_window_bookkeeping(self):
        cfg = make_config(n_steps=40_000)
        ranks, s = run_and_summarize(cfg, alpha_pairs=((1.0, 0.5),),
                                     nu_alphas=(0.0, 0.5, 1.0))
        t_end = cfg.grid.horizon
        assert s.lambda_hat[0] == ranks.regulators.A.terminal / t_end
        assert s.lambda_hat[1] == ranks.regulators.Gamma.terminal / t_end
        a_end, gm_end = ranks.regulators.A.terminal, ranks.regulators.Gamma.terminal
        assert s.slln2[0] == (2 * a_end - gm_end) / (2 * t_end)
        assert s.burn_time == pytest.approx(t_end / 2, rel=1e-3)
        assert (1.0, 0.5) in s.pi_hat
        assert 0.0 < s.pi_hat[(1.0, 0.5)] < 1.0
        assert s.thinned_g.shape == s.thinned_h.shape
        assert s.thinned_g.shape[0] > 10

    def test_nu_at_zero_is_total_mass_exactly(self):
        cfg = make_config(n_steps=40_000)
        _, s = run_and_summarize(cfg, nu_alphas=(0.0, 0.25))
        assert s.nu_hat[0][0.0] == s.nu_total[0]
        assert s.nu_hat[1][0.0] == s.nu_total[1]
        # positive exponents can only shrink the boundary integrals
        assert s.nu_hat[0][0.25] <= s.nu_total[0]
        assert s.nu_hat[1][0.25] <= s.nu_total[1]

    def test_occupancy_only_after_corner_hit(self):
        cfg = make_config(x0=(30.0, 0.0, -30.0), n_steps=2_000)
        _, s = run_and_summarize(cfg, with_names=True)
        assert s.collision.first_triple_collision_index is None
        assert s.occupancy is None


class TestEnsemble:
    def _ensemble(self, n_reps=4, n_steps=20_000, **kw):
        out = []
        for rep in range(n_reps):
            cfg = make_config(n_steps=n_steps, rep=rep, **kw)
            out.append(run_and_summarize(cfg)[1])
        return out

    def test_merge_orders_by_index(self):
        ss = self._ensemble()
        ens = ensemble_summary(ss[::-1])
        assert ens.replication_indices == (0, 1, 2, 3)
        assert ens.n_replications == 4
        direct = np.mean([s.lambda_hat[0] for s in ss])
        assert ens.lambda_hat[0].mean == pytest.approx(direct, rel=1e-12)
        assert 0.0 <= ens.hit_fraction <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no replications"):
            ensemble_summary([])

    def test_lln_report_targets(self):
        ss = self._ensemble()
        spec = reflection_spec(SystemKind.MIDDLE_DIFFUSIVE,
                               DriftSpec(0.01, 0.02, 0.03))
        report = lln_rates(ss, spec, DriftSpec(0.01, 0.02, 0.03))
        assert report.lambda_target == (pytest.approx(0.02), pytest.approx(0.02))
        assert report.slln2_target == (pytest.approx(0.01), pytest.approx(0.01))

    def test_lln_warns_outside_recurrence_region(self):
        ss = self._ensemble(n_reps=2, n_steps=2_000, deltas=(1.0, 0.0, -1.0))
        spec = reflection_spec(SystemKind.MIDDLE_DIFFUSIVE,
                               DriftSpec(1.0, 0.0, -1.0))
        with pytest.warns(UserWarning, match="positive-recurrent"):
            lln_rates(ss, spec, DriftSpec(1.0, 0.0, -1.0))

    def test_boundary_mass_targets(self):
        ss = self._ensemble(n_reps=2)
        spec = reflection_spec(SystemKind.MIDDLE_DIFFUSIVE,
                               DriftSpec(0.01, 0.02, 0.03))
        report = boundary_masses(ss, spec)
        assert report.target == (pytest.approx(0.04), pytest.approx(0.04))
        assert report.total_target == pytest.approx(0.08)
        assert report.total.mean == pytest.approx(
            report.nu1.mean + report.nu2.mean)


class TestLaplaceResidual:
    def test_degenerate_parabola_rejected(self):
        drifts = DriftSpec(0.01, 0.02, 0.03)
        with pytest.raises(ValueError, match="parabola"):
            laplace_bar_residual([], [(-1.1, -0.9)], drifts)

    def test_missing_transform_rejected(self):
        cfg = make_config(n_steps=5_000)
        _, s = run_and_summarize(cfg, alpha_pairs=((1.0, 0.5),),
                                 nu_alphas=(0.5, 1.0))
        with pytest.raises(ValueError, match="lacks transform"):
            laplace_bar_residual([s], [(2.0, 0.5)], cfg.drifts)

    def test_rows_report_finite_residuals(self):
        pairs = ((1.0, 0.5), (0.5, 0.25))
        alphas = (0.25, 0.5, 1.0)
        ss = []
        for rep in range(3):
            cfg = make_config(n_steps=20_000, rep=rep)
            ss.append(run_and_summarize(cfg, alpha_pairs=pairs,
                                        nu_alphas=alphas)[1])
        rows = laplace_bar_residual(ss, pairs, DriftSpec(0.01, 0.02, 0.03))
        assert [((r.alpha1, r.alpha2)) for r in rows] == list(pairs)
        for r in rows:
            assert math.isfinite(r.residual.mean)
            assert math.isfinite(r.z)


class TestSymmetricCase:
    def test_requires_diagonal_companions(self):
        s = fake_summary(0, [0.1, 0.2], [0.1, 0.2],
                         pi_hat={(1.0, 0.5): 0.5, (-1.0, -1.0): 1.5})
        with pytest.raises(ValueError, match="diagonal"):
            symmetric_case_checks([s, s], 1.0, [(1.0, 0.5)])

    def test_requires_saturation_point(self):
        pi = {(1.0, 0.5): 0.5, (1.0, 1.0): 0.4, (0.5, 0.5): 0.6}
        s = fake_summary(0, [0.1, 0.2], [0.1, 0.2], pi_hat=pi)
        with pytest.raises(ValueError, match="-lambda"):
            symmetric_case_checks([s, s], 1.0, [(1.0, 0.5)])

    def test_report_structure_on_simulated_ensemble(self):
        lam = 1.0
        pairs = ((1.0, 0.5),)
        needed = ((1.0, 0.5), (1.0, 1.0), (0.5, 0.5), (-lam, -lam))
        ss = []
        for rep in range(3):
            cfg = make_config(deltas=(-0.5, 0.0, 0.5), x0=(0.5, 0.0, -0.5),
                              n_steps=50_000, rep=rep)
            ss.append(run_and_summarize(cfg, alpha_pairs=needed)[1])
        report = symmetric_case_checks(ss, lam, pairs)
        assert report.mean_target == pytest.approx(1.0 / 3.0)
        assert report.saturation_bound == 2.0
        assert report.n_pooled > 100
        assert 0.0 < report.ks_exponential < 1.0
        assert report.marginal_xi.shape == report.marginal_tau_hat.shape
        assert math.isfinite(report.marginal_sup_diff)
        assert len(report.functional_rows) == 1


class TestGammaConjecture:
    def test_sum_ks_accepts_matching_synthetic_draws(self):
        lam = 1.0
        u = analysis.lambert_u()
        shape, rate = 2 * u / 3, lam * u
        rng = np.random.default_rng(7)
        ss = []
        for rep in range(4):
            total = rng.gamma(shape, 1.0 / rate, size=5_000)
            frac = rng.uniform(size=5_000)
            ss.append(fake_summary(rep, total * frac, total * (1 - frac)))
        report = gamma_conjecture_test(ss, lam)
        assert report.u == pytest.approx(u)
        assert report.shape == pytest.approx(shape)
        assert report.rate == pytest.approx(rate)
        assert report.n_sum == 20_000
        assert report.ks_sum < 1.5 * report.ks_sum_critical

    def test_sum_ks_rejects_wrong_rate(self):
        lam = 1.0
        rng = np.random.default_rng(8)
        ss = [fake_summary(0, rng.exponential(2.0, 20_000),
                           rng.exponential(2.0, 20_000))]
        report = gamma_conjecture_test(ss, lam)
        assert report.ks_sum > 3.0 * report.ks_sum_critical


class TestProductExponential:
    def test_accepts_matching_product_law(self):
        spec = reflection_spec(SystemKind.SKEW_ELASTIC, DriftSpec(-1.0, -2.0, -1.0))
        r1, r2 = 2 * float(spec.lam[0]), 2 * float(spec.lam[1])
        rng = np.random.default_rng(9)
        ss = [fake_summary(rep, rng.exponential(1 / r1, 10_000),
                           rng.exponential(1 / r2, 10_000))
              for rep in range(3)]
        report = product_exponential_test(ss, spec)
        assert report.rates == (pytest.approx(4.0), pytest.approx(4.0))
        assert report.mean_targets == (pytest.approx(0.25), pytest.approx(0.25))
        assert report.ks_g < 1.5 * report.ks_critical
        assert report.ks_h < 1.5 * report.ks_critical
        assert abs(report.gap_correlation.mean) < 0.05

    def test_rejects_correlated_gaps(self):
        spec = reflection_spec(SystemKind.SKEW_ELASTIC, DriftSpec(-1.0, -2.0, -1.0))
        rng = np.random.default_rng(10)
        g = rng.exponential(0.25, 10_000)
        ss = [fake_summary(0, g, g)]
        report = product_exponential_test(ss, spec)
        assert report.gap_correlation.mean == pytest.approx(1.0)


class TestWitness:
    def test_insufficient_guard(self):
        ss = [fake_summary(rep, [0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
              for rep in range(3)]
        report = no_product_form_witness(ss)
        assert report.insufficient
        assert math.isnan(report.ks_two_sample)

    def test_detects_conditional_shift(self):
        rng = np.random.default_rng(11)
        ss = []
        for rep in range(6):
            h = rng.exponential(1.0, 5_000)
            cond = rng.exponential(2.0, 500)  # H given G ~ 0 is stretched
            ss.append(fake_summary(rep, rng.exponential(1.0, 5_000), h,
                                   cond_h=cond))
        report = no_product_form_witness(ss)
        assert not report.insufficient
        assert report.z > 3.0
        assert report.ks_two_sample > 0.1


class TestCornerOccupation:
    def test_rejects_wrong_system(self):
        ranks = simulate_ranks(make_config(n_steps=500))
        with pytest.raises(ValueError, match="two-noise"):
            corner_occupation_estimate(ranks, [0.1])

    def test_rejects_unequal_drifts(self):
        ranks = simulate_ranks(make_config(
            system=SystemKind.MIDDLE_BALLISTIC, deltas=(-0.5, 0.0, 0.5),
            n_steps=500))
        with pytest.raises(ValueError, match="equal drifts"):
            corner_occupation_estimate(ranks, [0.1])

    def test_rejects_nonpositive_threshold(self):
        ranks = simulate_ranks(make_config(
            system=SystemKind.MIDDLE_BALLISTIC, deltas=(0.0, 0.0, 0.0),
            n_steps=500))
        with pytest.raises(ValueError, match="positive"):
            corner_occupation_estimate(ranks, [0.1, 0.0])

    def test_estimates_positive_near_visited_corner(self):
        ranks = simulate_ranks(make_config(
            system=SystemKind.MIDDLE_BALLISTIC, deltas=(0.0, 0.0, 0.0),
            x0=(0.5, 0.0, -0.5), dt=0.01, n_steps=100_000))
        report = corner_occupation_estimate(ranks, [0.4, 0.2, 0.1])
        assert report.alpha == pytest.approx(analysis.corner_constants().alpha)
        assert np.all(np.isfinite(report.estimates))
        assert np.all(report.estimates > 0)
