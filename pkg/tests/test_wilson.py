"""Noisy-common-value model: posterior values, limits, extrapolation recovery."""

import numpy as np
import pytest
from scipy import stats

from auctionlab.wilson import (
    WilsonSpec,
    covariate_from_sigma,
    lognormal_quantile,
    neville_to_zero,
    precision_from_covariate,
    sigma_from_covariate,
)

NORM = stats.norm()


def normal_quantile_spec(sigmas=(1.0, 1.0)):
    return WilsonSpec(gamma0=NORM.ppf, sigmas=sigmas, gamma0_is_normal_quantile=True)


class TestPrecisionLink:
    def test_roundtrip(self):
        sig = np.array([0.2, 0.7, 1.0, 3.0])
        z = covariate_from_sigma(sig)
        np.testing.assert_allclose(sigma_from_covariate(z), sig, atol=1e-12)

    def test_reference_values(self):
        # sigma = 1: Z = sqrt(2), precision 1, posterior scale S2 = 3 for n=2
        z = covariate_from_sigma(np.array([1.0, 1.0]))
        np.testing.assert_allclose(z, np.sqrt(2.0))
        s2 = 1.0 + precision_from_covariate(z).sum()
        assert s2 == pytest.approx(3.0)


class TestPosteriorValue:
    def test_symmetric_median_is_zero(self):
        spec = normal_quantile_spec()
        assert spec.posterior_value(np.array([0.5, 0.5])) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_posterior_mean(self):
        spec = normal_quantile_spec()
        val = spec.posterior_value(np.array([NORM.cdf(1.0), 0.5]))
        assert val == pytest.approx(np.sqrt(2.0) / 3.0, abs=1e-10)

    def test_lognormal_matches_montecarlo(self):
        g0 = lognormal_quantile(0.0, 0.5)
        spec = WilsonSpec(gamma0=g0, sigmas=(0.8, 1.2))
        A = np.array([0.7, 0.4])
        got = spec.posterior_value(A)
        # independent oracle: sample the value from its exact normal posterior
        z = spec.covariates
        s2 = 1.0 + precision_from_covariate(z).sum()
        mean = float(z @ NORM.ppf(A)) / s2
        rng = np.random.default_rng(42)
        nu = mean + rng.standard_normal(400_000) / np.sqrt(s2)
        vals = g0(NORM.cdf(nu))
        mc, se = vals.mean(), vals.std() / np.sqrt(vals.size)
        assert abs(got - mc) < 3 * se

    def test_signals_on_boundary_rejected(self):
        with pytest.raises(ValueError):
            normal_quantile_spec().posterior_value(np.array([0.0, 0.5]))


class TestLimitValue:
    def test_median_limit_zero(self):
        spec = normal_quantile_spec()
        seq = spec.limit_value_sequence(0, np.array([0.5, 0.5]), [5, 10, 20, 40])
        assert abs(seq[-1]) < 1e-8

    def test_exact_inversion_limit_one(self):
        spec = normal_quantile_spec()
        seq = spec.limit_value_sequence(0, np.array([NORM.cdf(1.0), 0.5]), [5, 10, 20, 40, 80])
        lim = neville_to_zero(1.0 / np.array([5, 10, 20, 40, 80]), seq)
        assert lim == pytest.approx(1.0, abs=1e-4)

    def test_lognormal_extrapolation_recovers_quantile(self):
        g0 = lognormal_quantile(0.0, 0.5)
        spec = WilsonSpec(gamma0=g0, sigmas=(1.0, 1.0))
        for a in [0.25, 0.75]:
            got = spec.extrapolated_limit(0, np.array([a, 0.5]), [5, 10, 20, 40])
            assert got == pytest.approx(g0(a), rel=5e-3)

    def test_nonincreasing_sequence_rejected(self):
        spec = normal_quantile_spec()
        with pytest.raises(ValueError):
            spec.limit_value_sequence(0, np.array([0.5, 0.5]), [10, 5])
