import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from policast import seir
from policast.errors import DomainError, ShapeError
from policast.gp import gram
from policast.model import (
    LOG1P_CUMULATIVE,
    RAW_CUMULATIVE,
    AlphaTensors,
    ModelConfig,
    RegionLatents,
    RegionModelData,
    contact_kernel_spec,
    initial_state,
    joint_log_density,
    lower_layer_prior,
    policy_groups,
    softplus_inv,
    torch_seir_deaths,
    transform_latents,
    upper_inputs,
)
from refimpl import mvn_logpdf

finite_latents = st.floats(min_value=-20, max_value=20)
positive_rates = st.floats(min_value=1e-3, max_value=2.0)


def latents_for(region, value_pre=-0.9, value_post=-2.5, lockdown_day=10,
                sigma=0.2, gamma=0.1, mu=0.01, ell=7.0):
    n = region.n_observed_days
    series = np.where(np.arange(n) < lockdown_day - 1, value_pre, value_post)
    return RegionLatents(ell, series, sigma, gamma, mu)


class TestTransform:
    def test_zero_latent_gives_reference_rate(self, config):
        latents = RegionLatents(7.0, np.zeros(5), 0.2, 0.1, 0.01)
        params, _ = transform_latents(latents, config, 1e6)
        np.testing.assert_allclose(params.contact_rate_series, config.beta_reference)

    def test_sigmoid_limits(self, config):
        latents = RegionLatents(7.0, np.array([-40.0, 40.0]), 0.2, 0.1, 0.01)
        params, _ = transform_latents(latents, config, 1e6)
        assert params.contact_rate_series[0] < 1e-12
        assert params.contact_rate_series[1] == pytest.approx(2 * config.beta_reference)

    def test_hand_example(self):
        # 0.8 * sigmoid(1), re-checked by script.
        config = ModelConfig(beta_reference=0.4)
        latents = RegionLatents(7.0, np.array([1.0]), 0.2, 0.1, 0.01)
        params, _ = transform_latents(latents, config, 1e6)
        assert params.contact_rate_series[0] == pytest.approx(0.5848468629040039, rel=1e-12)

    def test_scalars_pass_through_identity(self, config):
        latents = RegionLatents(6.5, np.zeros(3), 0.21, 0.11, 0.015)
        params, kernel = transform_latents(latents, config, 1e6)
        assert params.incubation_rate == 0.21
        assert params.recovery_rate == 0.11
        assert params.mortality_rate == 0.015
        assert kernel.lengthscale[0] == 6.5

    @settings(max_examples=100, deadline=None)
    @given(z=finite_latents, sigma=positive_rates, gamma=positive_rates,
           mu=positive_rates, ell=positive_rates)
    def test_range_property(self, z, sigma, gamma, mu, ell):
        config = ModelConfig()
        latents = RegionLatents(ell, np.array([z]), sigma, gamma, mu)
        params, kernel = transform_latents(latents, config, 1e6)
        beta = params.contact_rate_series[0]
        assert 0.0 < beta < 2 * config.beta_reference
        assert kernel.lengthscale[0] > 0

    @settings(max_examples=50, deadline=None)
    @given(z=st.floats(min_value=-5, max_value=5),
           bump=st.floats(min_value=1e-3, max_value=2.0))
    def test_latent_to_r0_monotone(self, z, bump):
        config = ModelConfig()

        def r0_of(latent):
            latents = RegionLatents(7.0, np.array([latent]), 0.2, 0.1, 0.01)
            params, _ = transform_latents(latents, config, 1e6)
            return seir.reproduction_number(params, 0)

        assert r0_of(z + bump) > r0_of(z)

    def test_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            RegionLatents(7.0, np.array([np.nan]), 0.2, 0.1, 0.01)
        with pytest.raises(DomainError):
            RegionLatents(-1.0, np.zeros(2), 0.2, 0.1, 0.01)

    def test_softplus_inv_roundtrip(self):
        for v in (1e-4, 0.01, 0.5, 7.0, 50.0):
            assert math.log1p(math.exp(softplus_inv(v))) == pytest.approx(v, rel=1e-9)


class TestLowerLayerPrior:
    def test_disease_free_constant_mean(self, config, toy_region):
        # A region that never saw a death starts disease-free: flat prior.
        import dataclasses

        region = dataclasses.replace(
            toy_region, fatalities=np.zeros(toy_region.n_observed_days))
        latents = latents_for(region)
        prior = lower_layer_prior(region, latents, config)
        np.testing.assert_array_equal(prior.death_series, 0.0)
        np.testing.assert_array_equal(prior.mean_values, 0.0)  # log1p(0) = 0

    def test_matches_composed_seir_oracle(self, config, toy_region):
        latents = latents_for(toy_region)
        prior = lower_layer_prior(toy_region, latents, config)
        params, _ = transform_latents(latents, config, toy_region.population)
        init = initial_state(toy_region.fatalities[0], latents.recovery_rate,
                             latents.mortality_rate, toy_region.population, config)
        oracle = seir.integrate_euler(init, params, latents.n_days - 1,
                                      config.seir_step_size).deaths()
        np.testing.assert_allclose(prior.death_series, oracle, rtol=0, atol=1e-12)
        np.testing.assert_allclose(prior.mean_values, np.log1p(oracle), atol=1e-12)

    def test_mean_function_lookup(self, config, toy_region):
        latents = latents_for(toy_region)
        prior = lower_layer_prior(toy_region, latents, config)
        days = np.arange(1, toy_region.n_observed_days + 1, dtype=float)[:, None]
        np.testing.assert_array_equal(prior.mean_function(days), prior.mean_values)
        with pytest.raises(ShapeError):
            prior.mean_function(np.array([[999.0]]))

    def test_latents_must_cover_observations(self, config, toy_region):
        latents = RegionLatents(7.0, np.zeros(3), 0.2, 0.1, 0.01)
        with pytest.raises(ShapeError):
            lower_layer_prior(toy_region, latents, config)


class TestPolicyGroups:
    def test_first_appearance_order(self):
        indicators = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        index, vectors = policy_groups(indicators)
        np.testing.assert_array_equal(index, [0, 1, 0, 2])
        np.testing.assert_array_equal(vectors, [[0, 0], [1, 0], [1, 1]])

    def test_upper_inputs_concatenation(self):
        rows = upper_inputs(np.array([1.0, 2.0]), np.array([[0.5], [0.9]]))
        np.testing.assert_array_equal(rows, [[1.0, 2.0, 0.5], [1.0, 2.0, 0.9]])


class TestJointLogDensity:
    def test_single_observation_at_mean_unit_variance(self, config, toy_region):
        import dataclasses

        # One observed day; kernel variance + noise + jitter == 1 makes the
        # data term the standard normal constant. Prior terms subtracted.
        region = dataclasses.replace(
            toy_region,
            fatalities=toy_region.fatalities[:1],
            policy=toy_region.policy.sliced(1),
        )
        cfg = dataclasses.replace(config, lower_signal_variance=0.6,
                                  lower_noise_variance=0.4 - 0.6e-8)
        latents = RegionLatents(7.0, np.zeros(1), 0.2, 0.1, 0.01)
        # Force the SEIR mean to hit the observation exactly: day-1 mean is
        # always the observed day-1 count by construction.
        total = joint_log_density(region, latents, cfg)
        prior_terms = _prior_terms_oracle(region, latents, cfg)
        assert total - prior_terms == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-6)

    def test_noise_increase_never_helps_at_zero_residuals(self, config, toy_region):
        import dataclasses

        region = dataclasses.replace(
            toy_region,
            fatalities=toy_region.fatalities[:1],
            policy=toy_region.policy.sliced(1),
        )
        latents = RegionLatents(7.0, np.zeros(1), 0.2, 0.1, 0.01)
        base = joint_log_density(region, latents, config)
        doubled = joint_log_density(
            region, latents,
            dataclasses.replace(config, lower_noise_variance=2 * config.lower_noise_variance),
        )
        assert doubled <= base

    def test_three_day_toy_matches_dense_oracle(self, config):
        from conftest import make_region
        import dataclasses

        region = dataclasses.replace(make_region(n_days=3, lockdown_day=2),
                                     features=np.array([0.4, -1.2]))
        latents = RegionLatents(5.0, np.array([-0.8, -2.0, -2.0]), 0.19, 0.12, 0.012)
        ours = joint_log_density(region, latents, config)
        oracle = _joint_oracle(region, latents, config)
        assert ours == pytest.approx(oracle, abs=1e-8)

    def test_raw_observation_space(self, config):
        from conftest import make_region
        import dataclasses

        region = make_region(n_days=5)
        cfg = dataclasses.replace(config, observation_space=RAW_CUMULATIVE,
                                  lower_signal_variance=4.0, lower_noise_variance=1.0)
        latents = latents_for(region)
        ours = joint_log_density(region, latents, cfg)
        oracle = _joint_oracle(region, latents, cfg)
        assert ours == pytest.approx(oracle, abs=1e-8)

    def test_continuity_under_small_perturbation(self, config, toy_region):
        latents = latents_for(toy_region)
        base = joint_log_density(toy_region, latents, config)
        for eps in (1e-7, -1e-7):
            import dataclasses

            bumped = dataclasses.replace(
                latents, beta_latent_series=latents.beta_latent_series + eps)
            assert abs(joint_log_density(toy_region, bumped, config) - base) < 1e-2

    def test_determinism(self, config, toy_region):
        latents = latents_for(toy_region)
        a = joint_log_density(toy_region, latents, config)
        b = joint_log_density(toy_region, latents, config)
        assert a == b

    def test_nonconstant_latent_within_group_rejected(self, config, toy_region):
        series = latents_for(toy_region).beta_latent_series.copy()
        series[0] += 0.5  # pre-lockdown days share a policy vector
        with pytest.raises(DomainError):
            joint_log_density(toy_region, RegionLatents(7.0, series, 0.2, 0.1, 0.01),
                              config)


def _prior_terms_oracle(region, latents, config):
    """Upper-layer prior terms computed with numpy/scipy only."""
    index, vectors = policy_groups(region.policy.indicators[: latents.n_days])
    group_values = np.array([latents.beta_latent_series[index == g][0]
                             for g in range(vectors.shape[0])])
    kernel = contact_kernel_spec(config, len(region.features),
                                 region.policy.n_indicators)
    inputs = upper_inputs(region.features, vectors)
    k = gram(kernel, inputs) + 1e-8 * kernel.signal_variance * np.eye(inputs.shape[0])
    total = mvn_logpdf(group_values, np.full(len(group_values), config.contact_mean), k)

    def scalar_prior(value, mean, variance):
        z = softplus_inv(value)
        return -0.5 * ((z - mean) ** 2 / variance + math.log(variance)
                       + math.log(2 * math.pi))

    total += scalar_prior(latents.lower_lengthscale, config.timescale_mean,
                          config.timescale_signal_variance)
    total += scalar_prior(latents.incubation_rate, config.incubation_mean,
                          config.incubation_signal_variance)
    total += scalar_prior(latents.recovery_rate, config.recovery_mean,
                          config.recovery_signal_variance)
    total += scalar_prior(latents.mortality_rate, config.mortality_mean,
                          config.mortality_signal_variance)
    return total


def _joint_oracle(region, latents, config):
    """Dense scipy reconstruction of the full joint log-density."""
    prior = lower_layer_prior(region, latents, config)
    t = region.n_observed_days
    days = np.arange(1, t + 1, dtype=float)
    dist = np.abs(days[:, None] - days[None, :])
    from policast.gp import matern_value

    k = (config.lower_signal_variance
         * matern_value(config.kernel_family, dist / latents.lower_lengthscale))
    k += (config.lower_noise_variance
          + 1e-8 * config.lower_signal_variance) * np.eye(t)
    if config.observation_space == LOG1P_CUMULATIVE:
        y = np.log1p(region.fatalities)
    else:
        y = region.fatalities.astype(float)
    return mvn_logpdf(y, prior.mean_values[:t], k) + _prior_terms_oracle(
        region, latents, config)


class TestTorchNumpyEquivalence:
    def test_batched_torch_seir_matches_public_euler(self, config):
        rng = np.random.default_rng(9)
        n_days = 25
        beta = rng.uniform(0.1, 0.9, (3, n_days))
        sigma, gamma, mu = 0.2, np.array([0.1, 0.15, 0.08]), np.array([0.01, 0.02, 0.012])
        pop = np.array([1e6, 5e5, 2e6])
        d1 = np.array([2.0, 5.0, 1.0])
        deaths = torch_seir_deaths(
            torch.as_tensor(beta), torch.tensor([sigma] * 3, dtype=torch.float64),
            torch.as_tensor(gamma), torch.as_tensor(mu), torch.as_tensor(pop[:, None])[:, 0],
            torch.as_tensor(d1), config, n_days,
        ).numpy()
        for b in range(3):
            init = initial_state(d1[b], gamma[b], mu[b], pop[b], config)
            params = seir.SeirParams(beta[b], sigma, gamma[b], mu[b], pop[b])
            oracle = seir.integrate_euler(init, params, n_days - 1,
                                          config.seir_step_size).deaths()
            np.testing.assert_allclose(deaths[b], oracle, rtol=0, atol=1e-10)

    def test_alpha_tensors_roundtrip(self, config):
        alpha = AlphaTensors.from_config(config, 3, 2)
        assert float(alpha.contact_mean) == config.contact_mean
        assert alpha.contact_log_ls.shape == (5,)
        np.testing.assert_allclose(np.exp(alpha.contact_log_ls[:3].numpy()),
                                   config.contact_feature_lengthscale)
