import dataclasses
import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_region
from policast import seir
from policast.data import PolicyTimeline
from policast.errors import DomainError, InsufficientVariationError, ShapeError
from policast.forecast import (
    ForecastResult,
    ScenarioSpec,
    aggregate_forecasts,
    baseline_forecast,
    counterfactual_shift,
    cumulative_error,
    expected_r0_series,
    forecast,
    hold_last_policy,
    stringency_regression,
)
from policast.model import (
    ModelConfig,
    RegionLatents,
    initial_state,
    lower_layer_prior,
    policy_groups,
    softplus_inv,
    transform_latents,
)
from policast.svi import PosteriorModel, RegionPosterior


def hand_model(records, contact_by_group, config=None, signal=0.05, noise=0.01,
               latent_std=1e-6, gamma=0.1, mu=0.01, sigma=0.2, ell=7.0):
    """PosteriorModel assembled directly from chosen latents (no training)."""
    config = config or ModelConfig(lower_signal_variance=signal,
                                   lower_noise_variance=noise)
    log_std = math.log(latent_std)
    regions = {}
    for record in records:
        _, vectors = policy_groups(record.policy.indicators[: record.n_observed_days])
        contact = np.asarray(contact_by_group[record.region_id], dtype=float)
        assert len(contact) == len(vectors)
        regions[record.region_id] = RegionPosterior(
            contact_mean=contact,
            contact_log_std=np.full(len(contact), log_std),
            group_policies=vectors,
            timescale=(softplus_inv(ell), log_std),
            recovery=(softplus_inv(gamma), log_std),
            mortality=(softplus_inv(mu), log_std),
        )
    d = len(records[0].features)
    k = records[0].policy.n_indicators
    alpha = {
        "contact_mean": config.contact_mean,
        "contact_log_signal": math.log(config.contact_signal_variance),
        "contact_log_ls": np.log(np.concatenate([
            np.full(d, config.contact_feature_lengthscale),
            np.full(k, config.contact_policy_lengthscale),
        ])),
        "timescale_mean": config.timescale_mean,
        "timescale_log_signal": math.log(config.timescale_signal_variance),
        "incubation_mean": config.incubation_mean,
        "incubation_log_signal": math.log(config.incubation_signal_variance),
        "recovery_mean": config.recovery_mean,
        "recovery_log_signal": math.log(config.recovery_signal_variance),
        "mortality_mean": config.mortality_mean,
        "mortality_log_signal": math.log(config.mortality_signal_variance),
        "lower_log_signal": math.log(signal),
        "lower_log_noise": math.log(noise),
    }
    return PosteriorModel(
        config=config, alpha=alpha,
        incubation=(softplus_inv(sigma), log_std),
        regions=regions, n_features=d, n_indicators=k,
    )


def seir_consistent_region(region_id="SC", n_days=30, horizon=14, lockdown_day=12,
                           contact=(-0.7, -2.4), gamma=0.1, mu=0.01, sigma=0.2):
    """Region whose observed series IS the SEIR mean of the hand latents."""
    total = n_days + horizon
    indicators = np.zeros((total, 2))
    indicators[lockdown_day - 1 :, :] = 1.0
    config = ModelConfig(lower_signal_variance=1e-14, lower_noise_variance=1e-14)
    series = np.where(np.arange(total) < lockdown_day - 1, contact[0], contact[1])
    latents = RegionLatents(7.0, series, sigma, gamma, mu)
    seed_fatalities = np.full(total, 2.0)
    stub = make_region(region_id, n_days=total, n_indicators=2)
    stub = dataclasses.replace(
        stub, fatalities=seed_fatalities,
        policy=PolicyTimeline(indicators, date(2020, 3, 1)))
    prior = lower_layer_prior(stub, latents, config)
    record = dataclasses.replace(
        stub,
        fatalities=prior.death_series[:n_days],
        policy=PolicyTimeline(indicators[:n_days], date(2020, 3, 1)),
    )
    return record, latents, config, prior.death_series


class TestForecastMechanics:
    def test_degenerate_posterior_matches_seir_continuation(self):
        record, latents, config, deaths = seir_consistent_region()
        model = hand_model([record], {"SC": [-0.7, -2.4]}, config=config,
                           signal=1e-14, noise=1e-14)
        spec = ScenarioSpec("SC", hold_last_policy(record, 14), 14)
        result = forecast(model, [record], spec, num_samples=200, seed=0)
        # Latent stds sit at the 1e-6 clamp floor, so the collapse is exact
        # up to 1e-6 relative (SEIR amplifies the absolute latent wobble).
        np.testing.assert_allclose(result.mean, deaths[29:], rtol=1e-6)
        assert np.all((result.q95 - result.q5) <= 1e-5 * result.mean)

    def test_zero_horizon_filters_current_value(self):
        record, latents, config, deaths = seir_consistent_region()
        model = hand_model([record], {"SC": [-0.7, -2.4]}, config=config,
                           signal=0.01, noise=0.005)
        spec = ScenarioSpec("SC", hold_last_policy(record, 0), 0)
        result = forecast(model, [record], spec, num_samples=400, seed=1)
        assert len(result) == 1
        assert result.days[0] == record.n_observed_days
        # Mean tracks the observed value; the band reflects observation noise.
        assert result.mean[0] == pytest.approx(record.fatalities[-1], rel=0.25)
        assert result.q95[0] > result.q5[0]

    def test_quantile_coherence_and_monotone_median(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        spec = ScenarioSpec(record.region_id, hold_last_policy(record, 10), 10)
        result = forecast(model, train, spec, num_samples=200, seed=2)
        for lo, hi in [(result.q5, result.q25), (result.q25, result.q50),
                       (result.q50, result.q75), (result.q75, result.q95)]:
            assert np.all(lo <= hi + 1e-12)
        assert np.all(np.diff(result.q50) >= -1e-9)
        assert np.all((result.mean >= result.q5) & (result.mean <= result.q95))

    def test_seeded_determinism(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[1]
        spec = ScenarioSpec(record.region_id, hold_last_policy(record, 7), 7)
        a = forecast(model, train, spec, num_samples=150, seed=9)
        b = forecast(model, train, spec, num_samples=150, seed=9)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.q5, b.q5)
        c = forecast(model, train, spec, num_samples=150, seed=10)
        assert not np.array_equal(a.mean, c.mean)

    def test_monte_carlo_stability(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        spec = ScenarioSpec(record.region_id, hold_last_policy(record, 7), 7)
        small = forecast(model, train, spec, num_samples=400, seed=3)
        big = forecast(model, train, spec, num_samples=800, seed=4)
        pooled_se = np.sqrt(small.std**2 / small.num_samples + big.std**2 / big.num_samples)
        assert np.all(np.abs(small.mean - big.mean) <= 2.0 * pooled_se + 1e-9)

    def test_unknown_and_untrained_regions(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        with pytest.raises(KeyError):
            forecast(model, train, ScenarioSpec("NOPE", hold_last_policy(record, 3), 3),
                     num_samples=100, seed=0)
        stranger = make_region("STRANGER", n_indicators=record.policy.n_indicators)
        with pytest.raises(KeyError):
            forecast(model, [stranger] + train.records,
                     ScenarioSpec("STRANGER", hold_last_policy(stranger, 3), 3),
                     num_samples=100, seed=0)

    def test_num_samples_floor(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        with pytest.raises(DomainError):
            forecast(model, train, ScenarioSpec(record.region_id,
                                                hold_last_policy(record, 3), 3),
                     num_samples=50, seed=0)

    def test_divergent_samples_raise_forecast_error(self):
        from policast.errors import ForecastError

        record, latents, config, _ = seir_consistent_region()
        # gamma/mu implies an initial recovered compartment beyond 10x the
        # population, so every sample trips the failure-rate guard.
        model = hand_model([record], {"SC": [-0.7, -2.4]}, config=config,
                           gamma=1000.0, mu=1e-4)
        spec = ScenarioSpec("SC", hold_last_policy(record, 5), 5)
        with pytest.raises(ForecastError):
            forecast(model, [record], spec, num_samples=120, seed=0)

    def test_scenario_spec_validation(self):
        with pytest.raises(ShapeError):
            ScenarioSpec("R", np.zeros((3, 2)), 5)
        with pytest.raises(DomainError):
            ScenarioSpec("R", np.full((3, 2), 1.5), 2)

    def test_novel_policy_vector_goes_through_upper_gp(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        novel = np.full((8, record.policy.n_indicators), 0.77)  # unseen vector
        result = forecast(model, train, ScenarioSpec(record.region_id, novel, 7),
                          num_samples=150, seed=6)
        assert np.all(np.isfinite(result.mean))

    def test_csv_round_trip_header(self, tmp_path, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        result = forecast(model, train,
                          ScenarioSpec(record.region_id, hold_last_policy(record, 5), 5),
                          num_samples=120, seed=0)
        path = tmp_path / "fc.csv"
        result.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "day,date,mean,q5,q25,q50,q75,q95,daily_mean"
        assert len(lines) == len(result) + 1


class TestCounterfactual:
    def test_zero_shift_is_exact_identity(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        rid = train.records[0].region_id
        baseline, shifted, diff = counterfactual_shift(model, train, rid, 0, 10,
                                                       num_samples=150, seed=7)
        assert diff == 0.0
        np.testing.assert_array_equal(baseline.mean, shifted.mean)
        np.testing.assert_array_equal(baseline.q5, shifted.q5)

    def test_earlier_lockdown_reduces_deaths_on_seir_region(self):
        record, latents, config, _ = seir_consistent_region(n_days=40, lockdown_day=20)
        model = hand_model([record], {"SC": [-0.7, -2.4]}, config=config,
                           signal=1e-10, noise=1e-10)
        baseline, shifted, diff = counterfactual_shift(model, [record], "SC", -7, 21,
                                                       num_samples=150, seed=8)
        assert diff < 0
        assert shifted.mean[-1] < baseline.mean[-1]

    def test_shift_bound(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        with pytest.raises(DomainError):
            counterfactual_shift(model, train, train.records[0].region_id, 45, 7,
                                 num_samples=150, seed=0)

    def test_full_window_coverage(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        baseline, shifted, _ = counterfactual_shift(model, train, record.region_id,
                                                    -5, 7, num_samples=150, seed=1)
        assert baseline.days[0] == 1
        assert baseline.days[-1] == record.n_observed_days + 7


class TestCumulativeError:
    def _result(self, mean):
        mean = np.asarray(mean, dtype=float)
        n = len(mean)
        return ForecastResult(
            days=np.arange(1, n + 1), dates=tuple(["2020-03-01"] * n),
            mean=mean, q5=mean, q25=mean, q50=mean, q75=mean, q95=mean,
            daily_mean=np.diff(np.concatenate([[0.0], mean])),
            std=np.zeros(n), num_samples=1, seed=0,
        )

    def test_perfect_forecast(self):
        result = self._result([5.0, 6.0, 7.0])
        assert cumulative_error(np.array([6.0, 7.0]), result, 2) == 0.0

    def test_hand_example(self):
        result = self._result([9.0, 11.0, 11.0])
        assert cumulative_error(np.array([10.0, 12.0]), result, 2) == 0.0

    def test_constant_underprediction(self):
        result = self._result(np.arange(8, dtype=float))
        truth = np.arange(1, 8, dtype=float) + 1.0
        assert cumulative_error(truth, result, 7) == pytest.approx(7.0)

    def test_horizon_mismatch(self):
        with pytest.raises(ShapeError):
            cumulative_error(np.array([1.0, 2.0]), self._result([1.0, 2.0, 3.0]), 3)

    @settings(max_examples=50, deadline=None)
    @given(shift=st.floats(min_value=-50, max_value=50),
           horizon=st.integers(min_value=1, max_value=6))
    def test_linearity_in_forecast(self, shift, horizon):
        mean = np.cumsum(np.abs(np.sin(np.arange(horizon + 1) + 1.0)))
        truth = mean[1:] + 0.5
        base = cumulative_error(truth, self._result(mean), horizon)
        shifted = cumulative_error(truth, self._result(mean + shift), horizon)
        assert shifted == pytest.approx(base - horizon * shift, rel=1e-9, abs=1e-9)


class TestStringencyRegression:
    def _three_level_region(self, r0_by_level):
        """Region with stringency levels 20/50/80 and chosen R0 per level."""
        n = 12
        indicators = np.zeros((n, 1))
        indicators[:4] = 0.2
        indicators[4:8] = 0.8
        indicators[8:] = 0.5
        record = dataclasses.replace(
            make_region("SR", n_days=n, n_indicators=1),
            policy=PolicyTimeline(indicators, date(2020, 3, 1)),
        )
        gamma, mu, sigma = 0.1, 0.01, 0.2
        g = sigma / ((mu + sigma) * (mu + gamma))
        contact = []
        for level in (0.2, 0.8, 0.5):
            beta = r0_by_level[level] / g
            contact.append(math.log(beta / (1.0 - beta)))  # 2*beta_ref = 1
        model = hand_model([record], {"SR": contact}, gamma=gamma, mu=mu, sigma=sigma)
        return model, record

    def test_constant_r0_zero_slope(self):
        model, record = self._three_level_region({0.2: 2.0, 0.8: 2.0, 0.5: 2.0})
        slope, intercept, points = stringency_regression(model, [record], "SR")
        assert slope == pytest.approx(0.0, abs=1e-9)
        assert intercept == pytest.approx(2.0, abs=1e-6)

    def test_hand_ols_slope(self):
        # (20, 3.0) and (80, 1.2) duplicated, plus (50, 2.1) sitting exactly
        # on the same line: least squares leaves the slope at -0.03.
        model, record = self._three_level_region({0.2: 3.0, 0.8: 1.2, 0.5: 2.1})
        slope, intercept, points = stringency_regression(model, [record], "SR")
        assert slope == pytest.approx(-0.03, abs=1e-6)
        assert intercept == pytest.approx(3.6, abs=1e-4)
        assert len(points) == record.n_observed_days

    def test_policy_suppression_learned_negative_slope(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        slope, _, _ = stringency_regression(model, train, train.records[0].region_id)
        assert slope < 0

    def test_insufficient_variation(self):
        model, record = self._three_level_region({0.2: 2.0, 0.8: 2.0, 0.5: 2.0})
        flat = dataclasses.replace(
            record, policy=PolicyTimeline(np.full((12, 1), 0.2), date(2020, 3, 1)))
        flat_model = hand_model([flat], {"SR": [-0.7]})
        with pytest.raises(InsufficientVariationError):
            stringency_regression(flat_model, [flat], "SR")


class TestBaselines:
    def test_gompertz_recovers_generating_curve(self):
        t = np.arange(1, 41, dtype=float)
        truth = 1000.0 * np.exp(-5.0 * np.exp(-0.1 * t))
        result = baseline_forecast("gompertz", truth, 14, seed=0)
        extended = 1000.0 * np.exp(-5.0 * np.exp(-0.1 * np.arange(40, 55, dtype=float)))
        np.testing.assert_allclose(result.mean, extended, rtol=0.01)

    def test_constant_series_plateaus(self):
        truth = np.full(20, 37.0)
        result = baseline_forecast("gompertz", truth, 10, seed=0)
        np.testing.assert_allclose(result.mean, 37.0, rtol=0.02)

    def test_vanilla_seir_recovers_generator(self):
        true_params = seir.SeirParams(np.full(60, 0.3), 0.2, 0.12, 0.015, 1e6)
        config = ModelConfig()
        init = initial_state(2.0, 0.12, 0.015, 1e6, config)
        deaths = seir.integrate_euler(init, true_params, 59, 0.25).deaths()
        result = baseline_forecast("vanilla_seir", deaths[:45], 14,
                                   population=1e6, seed=0)
        np.testing.assert_allclose(result.mean, deaths[44:59], rtol=0.05)

    def test_too_few_observations(self):
        with pytest.raises(ShapeError):
            baseline_forecast("gompertz", np.array([1.0, 2.0, 3.0]), 5)

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            baseline_forecast("prophet", np.arange(10, dtype=float), 5)


class TestPolicyMonotonicity:
    @settings(max_examples=25, deadline=None)
    @given(drop=st.floats(min_value=0.05, max_value=0.5),
           seed=st.integers(min_value=0, max_value=100))
    def test_lower_beta_series_never_increases_prior_mean(self, drop, seed):
        rng = np.random.default_rng(seed)
        n = 40
        beta_high = rng.uniform(0.2, 0.6, n)
        beta_low = beta_high * (1.0 - drop)
        init = seir.SeirState(1e6 - 150.0, 100.0, 50.0, 0.0, 0.0)
        high = seir.integrate_euler(
            init, seir.SeirParams(beta_high, 0.2, 0.1, 0.01, 1e6), n, 0.25).deaths()
        low = seir.integrate_euler(
            init, seir.SeirParams(beta_low, 0.2, 0.1, 0.01, 1e6), n, 0.25).deaths()
        assert np.all(low <= high + 1e-9)


class TestAggregateForecasts:
    def _result(self, mean, std, days=None):
        mean = np.asarray(mean, dtype=float)
        n = len(mean)
        days = days if days is not None else np.arange(1, n + 1)
        std = np.asarray(std, dtype=float)
        return ForecastResult(
            days=days, dates=tuple(["2020-04-01"] * n), mean=mean,
            q5=mean - 1.645 * std, q25=mean - 0.674 * std, q50=mean,
            q75=mean + 0.674 * std, q95=mean + 1.645 * std,
            daily_mean=np.diff(np.concatenate([[0.0], mean])),
            std=std, num_samples=100, seed=0,
        )

    def test_sums_means_and_variances(self):
        a = self._result([10.0, 20.0], [2.0, 3.0])
        b = self._result([5.0, 6.0], [1.0, 1.5])
        national = aggregate_forecasts([a, b])
        np.testing.assert_allclose(national.mean, [15.0, 26.0])
        np.testing.assert_allclose(national.std, np.sqrt([5.0, 11.25]))
        assert np.all(national.q5 <= national.q50)
        assert np.all(national.q50 <= national.q95)

    def test_day_mismatch(self):
        a = self._result([1.0, 2.0], [0.1, 0.1])
        b = self._result([1.0, 2.0], [0.1, 0.1], days=np.array([2, 3]))
        with pytest.raises(Exception):
            aggregate_forecasts([a, b])


class TestExpectedR0:
    def test_matches_monte_carlo(self, mini_benchmark):
        model, train = mini_benchmark["model"], mini_benchmark["train"]
        record = train.records[0]
        series = expected_r0_series(model, record)
        posterior = model.regions[record.region_id]
        rng = np.random.default_rng(0)
        n = 40000
        from scipy.special import expit

        def softplus(x):
            return np.logaddexp(0.0, x)

        z_c = posterior.contact_mean[0] + np.exp(posterior.contact_log_std[0]) \
            * rng.standard_normal(n)
        z_s = model.incubation[0] + math.exp(model.incubation[1]) * rng.standard_normal(n)
        z_g = posterior.recovery[0] + math.exp(posterior.recovery[1]) * rng.standard_normal(n)
        z_m = posterior.mortality[0] + math.exp(posterior.mortality[1]) * rng.standard_normal(n)
        beta = 2 * model.config.beta_reference * expit(z_c)
        sig, gam, mu = softplus(z_s), softplus(z_g), softplus(z_m)
        mc = (beta * sig / ((mu + sig) * (mu + gam))).mean()
        assert series[0] == pytest.approx(mc, rel=0.02)
