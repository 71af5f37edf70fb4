import math

import numpy as np
import pytest

from modpend.errors import InsufficientDataError
from modpend.floquet import SplittingSample
from modpend.stats import (RegimeWarning, beta_correlation_scale, cauchy_cdf,
                           cauchy_gof, half_cauchy_samples,
                           normalize_fluctuations, regular_action_fit)


class TestNormalize:
    def test_median_normalization(self):
        d = half_cauchy_samples(500, seed=1) * 3e-4
        ens = normalize_fluctuations(d)
        assert ens.delta_typ == pytest.approx(np.median(d))
        assert np.median(ens.normalized) == pytest.approx(1.0)

    def test_accepts_splitting_samples(self):
        samples = [SplittingSample(hbar_eff=0.2, beta=0.0, delta=d,
                                   island_kind="momentum-pair", method="exact")
                   for d in half_cauchy_samples(60, seed=2) * 1e-4]
        ens = normalize_fluctuations(samples)
        assert len(ens.samples) == 60

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            normalize_fluctuations([1e-4] * 10)

    def test_nonfinite_dropped(self):
        d = list(half_cauchy_samples(60, seed=3)) + [float("nan"), float("inf")]
        ens = normalize_fluctuations(d)
        assert len(ens.samples) == 60


class TestCauchyCdf:
    def test_known_values(self):
        assert cauchy_cdf(0.0) == pytest.approx(0.0)
        assert cauchy_cdf(1.0) == pytest.approx(0.5)   # median of the law
        assert cauchy_cdf(1e9) == pytest.approx(1.0, abs=1e-8)

    def test_monotone(self):
        x = np.linspace(0, 50, 200)
        assert np.all(np.diff(cauchy_cdf(x)) > 0)


class TestGof:
    def test_half_cauchy_accepted(self):
        for seed in (0, 1, 2):
            d = half_cauchy_samples(400, seed=seed)
            ks = cauchy_gof(normalize_fluctuations(d))
            assert ks < 0.15

    def test_lognormal_control_rejected(self):
        # sigma = 0.5 log-normal: clearly non-Cauchy tails
        rng = np.random.default_rng(7)
        d = np.exp(0.5 * rng.standard_normal(400))
        ks = cauchy_gof(normalize_fluctuations(d))
        assert ks > 0.15

    def test_ks_distance_definition(self):
        # a point mass at the law's median has KS distance 1/2
        ens = normalize_fluctuations(np.ones(100))
        assert cauchy_gof(ens) == pytest.approx(0.5)


class TestRegularFit:
    def test_recovers_action(self):
        s_true, c_true = 2.5, -3.0
        hbars = np.linspace(0.1, 0.3, 12)
        deltas = np.exp(c_true - s_true / hbars)
        fit = regular_action_fit(list(zip(hbars, deltas)))
        assert fit.action == pytest.approx(s_true, rel=1e-9)
        assert fit.prefactor == pytest.approx(c_true, rel=1e-9)
        assert fit.residual < 1e-12

    def test_chaotic_sweep_warns(self):
        rng = np.random.default_rng(5)
        hbars = np.linspace(0.1, 0.3, 40)
        deltas = np.exp(-2.0 / hbars + 3.0 * rng.standard_normal(40))
        with pytest.warns(RegimeWarning):
            regular_action_fit(list(zip(hbars, deltas)))

    def test_clean_sweep_does_not_warn(self):
        hbars = np.linspace(0.1, 0.3, 12)
        deltas = np.exp(-2.5 / hbars)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("error", RegimeWarning)
            regular_action_fit(list(zip(hbars, deltas)))

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            regular_action_fit([(0.1, 1e-4), (0.2, 1e-3)])


class TestCorrelationScale:
    def test_known_scale_from_smoothed_noise(self):
        # moving-average of white noise has a correlation length set by the
        # window; the measured scale must grow with the window
        rng = np.random.default_rng(9)
        betas = np.linspace(-0.25, 0.25, 600)
        noise = rng.standard_normal(640)
        scales = []
        for w in (5, 20):
            y = np.convolve(noise, np.ones(w) / w, mode="same")[:600]
            deltas = np.exp(y)
            cs = beta_correlation_scale(betas, deltas)
            assert not cs.lower_bound_only
            scales.append(cs.scale)
        assert scales[1] > scales[0]

    def test_monotone_trend_flagged_as_lower_bound(self):
        # a smooth trend correlated across the whole window can only bound
        # the correlation scale from below
        betas = np.linspace(-0.25, 0.25, 200)
        cs = beta_correlation_scale(betas, np.exp(5 * betas))
        assert cs.lower_bound_only
        assert cs.scale == pytest.approx((200 // 4) * (0.5 / 199))

    def test_nonuniform_grid_rejected(self):
        betas = np.geomspace(0.01, 0.4, 150)
        with pytest.raises(InsufficientDataError):
            beta_correlation_scale(betas, np.ones(150))

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            beta_correlation_scale(np.linspace(0, 1, 50), np.ones(50))


class TestHalfCauchySamples:
    def test_deterministic(self):
        assert np.array_equal(half_cauchy_samples(100, seed=4),
                              half_cauchy_samples(100, seed=4))

    def test_positive_and_heavy_tailed(self):
        d = half_cauchy_samples(2000, seed=6)
        assert np.all(d > 0)
        assert np.median(d) == pytest.approx(1.0, rel=0.1)
        assert d.max() > 50   # heavy tail shows up in 2000 draws
