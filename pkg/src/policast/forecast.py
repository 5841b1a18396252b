"""Posterior-predictive forecasting and scenario analysis.

For each Monte Carlo sample: draw the region's latents from the trained
variational posterior; produce contact latents for policy vectors outside
the trained set from the upper-layer GP posterior predictive (conditioned
on this region's sampled latents plus every other region's posterior
means); integrate the SEIR prior mean; condition the lower-layer GP on
the observed series; sample a future trajectory. Quantiles are empirical
over samples. Counterfactual timeline edits re-run this machinery with a
shifted policy history over the full historical window.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.special import expit
from scipy.stats import norm

from . import gp, seir
from .data import Dataset, RegionRecord
from .errors import (
    AlignmentError,
    DomainError,
    FitError,
    ForecastError,
    InsufficientVariationError,
    ShapeError,
)
from .model import (
    ModelConfig,
    initial_state,
    observation_map,
    observation_unmap,
    softplus,
    upper_inputs,
)
from .svi import PosteriorModel

QUANTILES = (5, 25, 50, 75, 95)
MIN_FORECAST_SAMPLES = 100
MAX_SAMPLE_FAILURE_RATE = 0.10
DEFAULT_NUM_SAMPLES = 1000
TEST_NUM_SAMPLES = 200
MAX_SHIFT_DAYS = 28

CSV_HEADER = ["day", "date", "mean", "q5", "q25", "q50", "q75", "q95", "daily_mean"]


@dataclass(frozen=True)
class ScenarioSpec:
    """A forecasting request: future policy over [t, t+T] plus optional history edit."""

    region_id: str
    future_policy: np.ndarray  # (horizon_T + 1, K)
    horizon_T: int
    historical_edit: Optional[int] = None  # shift_days applied to the observed timeline

    def __post_init__(self):
        fp = np.atleast_2d(np.asarray(self.future_policy, dtype=float))
        object.__setattr__(self, "future_policy", fp)
        if self.horizon_T < 0:
            raise DomainError("horizon_T must be >= 0")
        if fp.shape[0] != self.horizon_T + 1:
            raise ShapeError(
                f"future_policy has {fp.shape[0]} rows, expected horizon_T + 1 = "
                f"{self.horizon_T + 1}"
            )
        if np.any(fp < 0) or np.any(fp > 1):
            raise DomainError("future policy entries must lie in [0, 1]")


@dataclass(frozen=True)
class ForecastResult:
    """Per-day predictive summary over the forecast window."""

    days: np.ndarray  # 1-based outbreak-relative day indices
    dates: tuple  # ISO strings aligned with days
    mean: np.ndarray
    q5: np.ndarray
    q25: np.ndarray
    q50: np.ndarray
    q75: np.ndarray
    q95: np.ndarray
    daily_mean: np.ndarray
    std: np.ndarray  # kept for national aggregation; not serialized to CSV
    num_samples: int
    seed: int

    def __post_init__(self):
        qs = [self.q5, self.q25, self.q50, self.q75, self.q95]
        for lo, hi in zip(qs, qs[1:]):
            if np.any(lo > hi + 1e-9):
                raise DomainError("quantiles out of order")
        if np.any(np.diff(self.q50) < -1e-9):
            raise DomainError("cumulative median must be non-decreasing")
        scale = np.maximum(np.abs(self.mean), 1.0)
        if np.any(self.mean < self.q5 - 1e-9 * scale) or np.any(self.mean > self.q95 + 1e-9 * scale):
            raise DomainError("mean must lie within [q5, q95]")

    def __len__(self):
        return len(self.days)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for k in range(len(self.days)):
                writer.writerow(
                    [int(self.days[k]), self.dates[k]]
                    + [repr(float(v[k])) for v in (self.mean, self.q5, self.q25, self.q50,
                                                   self.q75, self.q95, self.daily_mean)]
                )

    def to_dict(self) -> dict:
        return {
            "days": [int(d) for d in self.days],
            "dates": list(self.dates),
            "mean": [float(v) for v in self.mean],
            "q5": [float(v) for v in self.q5],
            "q25": [float(v) for v in self.q25],
            "q50": [float(v) for v in self.q50],
            "q75": [float(v) for v in self.q75],
            "q95": [float(v) for v in self.q95],
            "daily_mean": [float(v) for v in self.daily_mean],
            "num_samples": self.num_samples,
            "seed": self.seed,
        }


def _records_by_id(data) -> dict:
    if isinstance(data, Dataset):
        records = data.records
    elif isinstance(data, dict):
        return data
    else:
        records = list(data)
    return {r.region_id: r for r in records}


def _match_groups(policy_matrix: np.ndarray, trained_vectors: np.ndarray):
    """Map each day's policy vector onto trained groups or novel vectors.

    Returns (source, index, novel_vectors): for day k, source[k] is 0 for
    a trained group (index into trained_vectors) and 1 for a novel vector
    (index into novel_vectors, first-appearance order).
    """
    trained = {row.tobytes(): g for g, row in enumerate(np.atleast_2d(trained_vectors))}
    novel = {}
    novel_rows = []
    source = np.zeros(policy_matrix.shape[0], dtype=int)
    index = np.zeros(policy_matrix.shape[0], dtype=int)
    for k, row in enumerate(policy_matrix):
        key = row.tobytes()
        if key in trained:
            source[k], index[k] = 0, trained[key]
        else:
            if key not in novel:
                novel[key] = len(novel_rows)
                novel_rows.append(row.copy())
            source[k], index[k] = 1, novel[key]
    novel_vectors = np.array(novel_rows) if novel_rows else np.empty((0, policy_matrix.shape[1]))
    return source, index, novel_vectors


def _upper_conditioning(model: PosteriorModel, records: dict, region_id: str):
    """Training points for the contact-output GP across all trained regions.

    Returns (posterior template, mean targets, slice of the current
    region's rows). Regions absent from the dataset are skipped.
    """
    inputs = []
    targets = []
    own = None
    for rid, post in model.regions.items():
        if rid not in records:
            if rid == region_id:
                raise KeyError(f"region {region_id!r} missing from dataset")
            continue
        rows = upper_inputs(records[rid].features, post.group_policies)
        if rid == region_id:
            own = slice(len(targets), len(targets) + rows.shape[0])
        inputs.append(rows)
        targets.extend(post.contact_mean)
    inputs = np.vstack(inputs)
    targets = np.array(targets)
    mean_const = float(model.alpha["contact_mean"])
    template = gp.gp_posterior(
        lambda x: np.full(x.shape[0], mean_const), model.contact_kernel(), inputs, targets
    )
    return template, targets, own


def _sample_seir_deaths(model: PosteriorModel, record: RegionRecord, beta_latent: np.ndarray,
                        z_timescale, z_incubation, z_recovery, z_mortality, n_days: int):
    """Batched SEIR solve across samples; returns raw death series (S, n_days)."""
    config = model.config
    s_count = beta_latent.shape[0]
    beta = 2.0 * config.beta_reference * expit(beta_latent)
    gamma = softplus(z_recovery)
    mu = softplus(z_mortality)
    sigma = softplus(z_incubation)
    d1 = float(record.fatalities[0])
    if d1 > 0:
        e0 = np.maximum(1.0, config.initial_exposed_multiplier * d1 * (gamma + mu) / mu)
        i0 = config.initial_infectious_ratio * e0
        r0 = d1 * gamma / mu
    else:
        e0 = i0 = r0 = np.zeros(s_count)
    d0 = np.full(s_count, d1)
    s0 = np.maximum(record.population - e0 - i0 - r0 - d0, 0.0)
    initial = np.column_stack([s0, e0, i0, r0, d0])
    deaths, diverged, _ = seir.integrate_euler_batch(
        initial, beta, sigma, gamma, mu,
        np.full(s_count, record.population), n_days - 1, config.seir_step_size,
    )
    return deaths, diverged


def forecast(model: PosteriorModel, data, scenario: ScenarioSpec,
             num_samples: int = DEFAULT_NUM_SAMPLES, seed: int = 0) -> ForecastResult:
    """Monte Carlo posterior predictive under the scenario's policy timeline.

    Without a historical edit the window is [t, t+T]; with one (including
    a zero shift) the counterfactual trajectory is produced over the full
    historical window plus the horizon.
    """
    if num_samples < MIN_FORECAST_SAMPLES:
        raise DomainError(f"num_samples must be >= {MIN_FORECAST_SAMPLES}")
    records = _records_by_id(data)
    if scenario.region_id not in records:
        raise KeyError(f"unknown region {scenario.region_id!r}")
    record = records[scenario.region_id]
    posterior = model.region(scenario.region_id)  # KeyError if untrained
    if scenario.future_policy.shape[1] != record.policy.n_indicators:
        raise ShapeError(
            f"future policy has {scenario.future_policy.shape[1]} indicators, "
            f"region has {record.policy.n_indicators}"
        )
    config = model.config
    t_obs = record.n_observed_days
    horizon = scenario.horizon_T
    n_days = t_obs + horizon

    timeline = record.policy.sliced(t_obs)
    if scenario.historical_edit is not None:
        timeline = timeline.shift_changes(scenario.historical_edit)
    policy_matrix = np.vstack([timeline.indicators[: t_obs - 1], scenario.future_policy])
    source, index, novel_vectors = _match_groups(policy_matrix, posterior.group_policies)

    region_word = int.from_bytes(
        hashlib.sha256(scenario.region_id.encode("utf-8")).digest()[:4], "big"
    )
    rng = np.random.default_rng([region_word, seed])
    n_groups = len(posterior.contact_mean)
    eps_contact = rng.standard_normal((num_samples, n_groups))
    eps_scalar = rng.standard_normal((num_samples, 4))  # timescale, incubation, recovery, mortality
    eps_novel = rng.standard_normal((num_samples, novel_vectors.shape[0]))
    predict_days = (
        np.arange(1, n_days + 1) if scenario.historical_edit is not None
        else np.arange(t_obs, n_days + 1)
    )
    eps_path = rng.standard_normal((num_samples, len(predict_days)))

    z_contact = posterior.contact_mean + np.exp(posterior.contact_log_std) * eps_contact
    z_timescale = posterior.timescale[0] + math.exp(posterior.timescale[1]) * eps_scalar[:, 0]
    z_incubation = model.incubation[0] + math.exp(model.incubation[1]) * eps_scalar[:, 1]
    z_recovery = posterior.recovery[0] + math.exp(posterior.recovery[1]) * eps_scalar[:, 2]
    z_mortality = posterior.mortality[0] + math.exp(posterior.mortality[1]) * eps_scalar[:, 3]

    # Contact latents for policy vectors outside the trained set come from
    # the upper-layer posterior predictive, conditioned per sample on this
    # region's own draws (other regions enter at their posterior means).
    if novel_vectors.shape[0] > 0:
        template, base_targets, own = _upper_conditioning(model, records, scenario.region_id)
        queries = upper_inputs(record.features, novel_vectors)
        z_novel = np.empty((num_samples, novel_vectors.shape[0]))
        for s in range(num_samples):
            targets = base_targets.copy()
            targets[own] = z_contact[s]
            conditioned = template.with_targets(targets)
            mean_q, cov_q = gp.gp_predict(conditioned, queries, want_covariance=True)
            factor, _ = gp._chol_with_jitter(cov_q, max(float(np.max(np.diag(cov_q))), 1e-12))
            z_novel[s] = mean_q + factor @ eps_novel[s]
    else:
        z_novel = np.empty((num_samples, 0))

    beta_latent = np.where(
        source[None, :] == 0,
        z_contact[:, np.where(source == 0, index, 0)],
        z_novel[:, np.where(source == 1, index, 0)] if novel_vectors.shape[0] else 0.0,
    )

    deaths, diverged = _sample_seir_deaths(
        model, record, beta_latent, z_timescale, z_incubation, z_recovery, z_mortality, n_days
    )
    failure_rate = float(diverged.mean())
    if failure_rate > MAX_SAMPLE_FAILURE_RATE:
        raise ForecastError(
            f"{failure_rate:.0%} of samples diverged during SEIR integration"
        )

    y_obs = observation_map(record.fatalities, config.observation_space)
    obs_days = np.arange(1, t_obs + 1, dtype=float)
    dist_oo = np.abs(obs_days[:, None] - obs_days[None, :])
    dist_wo = np.abs(predict_days[:, None].astype(float) - obs_days[None, :])
    dist_ww = np.abs(predict_days[:, None].astype(float) - predict_days[None, :].astype(float))
    signal = float(np.exp(model.alpha["lower_log_signal"]))
    noise = float(np.exp(model.alpha["lower_log_noise"]))
    family = config.kernel_family

    keep = ~diverged
    paths = np.empty((int(keep.sum()), len(predict_days)))
    row = 0
    for s in range(num_samples):
        if diverged[s]:
            continue
        mean_series = observation_map(deaths[s], config.observation_space)
        ell = softplus(z_timescale[s])
        k_oo = signal * gp.matern_value(family, dist_oo / ell) + noise * np.eye(t_obs)
        factor, _ = gp._chol_with_jitter(k_oo, signal)
        k_wo = signal * gp.matern_value(family, dist_wo / ell)
        k_ww = signal * gp.matern_value(family, dist_ww / ell)
        resid = y_obs - mean_series[:t_obs]
        alpha_vec = np.linalg.solve(factor.T, np.linalg.solve(factor, resid))
        mean_w = mean_series[predict_days - 1] + k_wo @ alpha_vec
        v = np.linalg.solve(factor, k_wo.T)
        cov_w = k_ww - v.T @ v + noise * np.eye(len(predict_days))
        path_factor, _ = gp._chol_with_jitter(cov_w, max(signal + noise, 1e-12))
        sample_path = mean_w + path_factor @ eps_path[s]
        raw = observation_unmap(sample_path, config.observation_space)
        paths[row] = np.maximum.accumulate(np.maximum(raw, 0.0))
        row += 1

    mean = paths.mean(axis=0)
    std = paths.std(axis=0)
    quantiles = np.percentile(paths, QUANTILES, axis=0)
    anchor = float(record.fatalities[predict_days[0] - 2]) if predict_days[0] > 1 else 0.0
    daily = np.diff(np.concatenate([[anchor], mean]))
    dates = tuple(record.date_of_day(int(d)).isoformat() for d in predict_days)
    return ForecastResult(
        days=predict_days.astype(int),
        dates=dates,
        mean=mean,
        q5=quantiles[0],
        q25=quantiles[1],
        q50=quantiles[2],
        q75=quantiles[3],
        q95=quantiles[4],
        daily_mean=daily,
        std=std,
        num_samples=int(keep.sum()),
        seed=seed,
    )


def hold_last_policy(record: RegionRecord, horizon: int) -> np.ndarray:
    """Future policy matrix (horizon + 1 rows) holding the last observed vector."""
    last = record.policy.indicators[record.n_observed_days - 1]
    return np.tile(last, (horizon + 1, 1))


def counterfactual_shift(model: PosteriorModel, data, region_id: str, shift_days: int,
                         horizon: int, num_samples: int = DEFAULT_NUM_SAMPLES,
                         seed: int = 0):
    """Compare the observed-policy forecast against a shifted-timeline one.

    Both runs cover the full historical window plus the horizon under the
    same seed; the returned difference is shifted minus baseline final
    cumulative deaths.
    """
    if abs(shift_days) > MAX_SHIFT_DAYS:
        raise DomainError(f"|shift_days| must be <= {MAX_SHIFT_DAYS}")
    records = _records_by_id(data)
    record = records[region_id]
    future = hold_last_policy(record, horizon)
    baseline = forecast(
        model, records,
        ScenarioSpec(region_id, future, horizon, historical_edit=0),
        num_samples=num_samples, seed=seed,
    )
    shifted = forecast(
        model, records,
        ScenarioSpec(region_id, future, horizon, historical_edit=shift_days),
        num_samples=num_samples, seed=seed,
    )
    difference = float(shifted.mean[-1] - baseline.mean[-1])
    return baseline, shifted, difference


def cumulative_error(truth: Sequence[float], result: ForecastResult, horizon_T: int) -> float:
    """Signed cumulative-death error over the horizon.

    sum_{k=1..T} (Y(t+k) - Yhat(t+k)); positive means under-prediction.
    ``truth`` holds the true cumulative deaths for days t+1 .. t+T.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (horizon_T,):
        raise ShapeError(f"truth must have length horizon_T={horizon_T}, got {truth.shape}")
    if len(result.mean) < horizon_T:
        raise ShapeError(f"forecast covers {len(result.mean)} days, need {horizon_T}")
    predicted = result.mean[-horizon_T:] if horizon_T > 0 else np.empty(0)
    return float(np.sum(truth - predicted))


def _gauss_hermite_expectation(fn, mean, std, nodes=64):
    """E[fn(Z)], Z ~ N(mean, std^2), by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite.hermgauss(nodes)
    return (w * fn(mean + math.sqrt(2.0) * std * x)).sum() / math.sqrt(math.pi)


def expected_r0_series(model: PosteriorModel, record: RegionRecord) -> np.ndarray:
    """Posterior-mean reproduction number per observed day.

    R0 factorizes as beta * g(sigma, gamma, mu) with independent
    mean-field latents, so the expectation is a product of a 1-D and a
    3-D Gauss-Hermite quadrature (deterministic, no sampling).
    """
    posterior = model.region(record.region_id)
    config = model.config
    source, index, novel = _match_groups(
        record.policy.indicators[: record.n_observed_days], posterior.group_policies
    )
    if novel.shape[0] > 0:
        raise ShapeError("observed policy vector missing from the trained groups")

    e_beta = np.array([
        _gauss_hermite_expectation(
            lambda z: 2.0 * config.beta_reference * expit(z),
            posterior.contact_mean[g], math.exp(posterior.contact_log_std[g]),
        )
        for g in range(len(posterior.contact_mean))
    ])

    x, w = np.polynomial.hermite.hermgauss(16)
    shift = math.sqrt(2.0) * x

    def nodes(pair):
        return softplus(pair[0] + math.exp(pair[1]) * shift)

    sig = nodes(model.incubation)
    gam = nodes(posterior.recovery)
    mu = nodes(posterior.mortality)
    g_vals = (
        sig[:, None, None] / (mu[None, None, :] + sig[:, None, None])
        / (mu[None, None, :] + gam[None, :, None])
    )
    weights = w[:, None, None] * w[None, :, None] * w[None, None, :]
    e_g = float((weights * g_vals).sum() / math.pi ** 1.5)
    return e_beta[index] * e_g


def stringency_regression(model: PosteriorModel, data, region_id: str):
    """OLS of inferred daily R0 against the stringency index.

    Returns (slope, intercept, points) where points pairs each observed
    day's stringency with its posterior-mean R0.
    """
    records = _records_by_id(data)
    record = records[region_id]
    r0 = expected_r0_series(model, record)
    stringency = record.policy.stringency_series()[: record.n_observed_days]
    if len(np.unique(np.round(stringency, 9))) < 3:
        raise InsufficientVariationError(
            f"region {region_id!r} has fewer than 3 distinct stringency values"
        )
    slope, intercept = np.polyfit(stringency, r0, 1)
    return float(slope), float(intercept), list(zip(stringency.tolist(), r0.tolist()))


def _gompertz(t, a, b, c):
    return a * np.exp(-b * np.exp(-c * t))


def _fit_gompertz(truth: np.ndarray, seed: int):
    t = np.arange(1, len(truth) + 1, dtype=float)
    base = np.array([max(truth[-1] * 2.0, 1.0), 5.0, 0.1])
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(5):
        scale = np.ones(3) if attempt == 0 else rng.lognormal(0.0, 0.5, 3)
        x0 = np.log(base * scale)
        try:
            fit = least_squares(
                lambda p: _gompertz(t, *np.exp(p)) - truth, x0, method="lm", max_nfev=20000
            )
        except Exception:
            continue
        if fit.success and (best is None or fit.cost < best.cost):
            best = fit
    if best is None:
        raise FitError("Gompertz fit failed to converge in 5 restarts")
    return np.exp(best.x)


def _fit_vanilla_seir(truth: np.ndarray, population: float, seed: int,
                      incubation_rate: float = 0.2, step_size: float = 0.25):
    """Least-squares fit of constant (beta, gamma, mu) to cumulative deaths."""
    config = ModelConfig()
    horizon = len(truth) - 1

    def simulate(log_params, n_days):
        beta, gamma, mu = np.exp(log_params)
        params = seir.SeirParams(
            np.full(max(n_days, 1), beta), incubation_rate, gamma, mu, population
        )
        init = initial_state(truth[0], gamma, mu, population, config)
        traj = seir.integrate_euler(init, params, n_days, step_size)
        return traj.deaths()

    def residuals(log_params):
        try:
            deaths = simulate(log_params, horizon)
        except Exception:
            return np.full(len(truth), 1e6)
        return np.log1p(deaths) - np.log1p(truth)

    rng = np.random.default_rng(seed)
    base = np.log(np.array([0.3, 0.1, 0.01]))
    best = None
    for attempt in range(5):
        x0 = base if attempt == 0 else base + rng.normal(0.0, 0.5, 3)
        try:
            fit = least_squares(residuals, x0, max_nfev=4000)
        except Exception:
            continue
        if fit.success and (best is None or fit.cost < best.cost):
            best = fit
    if best is None:
        raise FitError("vanilla SEIR fit failed to converge in 5 restarts")
    return np.exp(best.x), simulate


def baseline_forecast(method: str, truth: Sequence[float], horizon: int,
                      population: float = 1e7, seed: int = 0,
                      anchor_date=None) -> ForecastResult:
    """Mean-only reference forecasts: Gompertz curve or fixed-rate SEIR.

    The result's quantile bands all equal the mean (no uncertainty model).
    """
    truth = np.asarray(truth, dtype=float)
    if len(truth) < 5:
        raise ShapeError("baselines need at least 5 observed days")
    t_obs = len(truth)
    grid = np.arange(t_obs, t_obs + horizon + 1, dtype=float)
    if method == "gompertz":
        a, b, c = _fit_gompertz(truth, seed)
        mean = np.maximum.accumulate(np.maximum(_gompertz(grid, a, b, c), 0.0))
    elif method == "vanilla_seir":
        best_params, simulate = _fit_vanilla_seir(truth, population, seed)
        deaths = simulate(np.log(best_params), t_obs - 1 + horizon)
        mean = deaths[t_obs - 1 :]
    else:
        raise DomainError(f"unknown baseline method {method!r}")

    days = np.arange(t_obs, t_obs + horizon + 1)
    from datetime import date, timedelta

    base_date = anchor_date or date(2020, 1, 1)
    dates = tuple((base_date + timedelta(days=int(d) - 1)).isoformat() for d in days)
    anchor = float(truth[t_obs - 2]) if t_obs > 1 else 0.0
    daily = np.diff(np.concatenate([[anchor], mean]))
    return ForecastResult(
        days=days, dates=dates, mean=mean,
        q5=mean.copy(), q25=mean.copy(), q50=mean.copy(), q75=mean.copy(), q95=mean.copy(),
        daily_mean=daily, std=np.zeros_like(mean), num_samples=1, seed=seed,
    )


def aggregate_forecasts(children: Sequence[ForecastResult]) -> ForecastResult:
    """National forecast as the sum of child forecasts.

    Means add; variances add under the documented independence
    assumption, with quantiles reconstructed from a normal approximation.
    """
    if not children:
        raise ShapeError("no forecasts to aggregate")
    first = children[0]
    for child in children[1:]:
        if not np.array_equal(child.days, first.days) or child.dates != first.dates:
            raise AlignmentError("child forecasts cover different days")
    mean = np.sum([c.mean for c in children], axis=0)
    var = np.sum([c.std**2 for c in children], axis=0)
    std = np.sqrt(var)
    z = {q: norm.ppf(q / 100.0) for q in QUANTILES}
    daily = np.sum([c.daily_mean for c in children], axis=0)
    return ForecastResult(
        days=first.days.copy(),
        dates=first.dates,
        mean=mean,
        q5=mean + z[5] * std,
        q25=mean + z[25] * std,
        q50=mean.copy(),
        q75=mean + z[75] * std,
        q95=mean + z[95] * std,
        daily_mean=daily,
        std=std,
        num_samples=min(c.num_samples for c in children),
        seed=first.seed,
    )
