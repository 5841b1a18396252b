"""Two-layer GP composition over the SEIR prior mean.

The lower layer is a GP over time within each region whose prior mean is
the death compartment of an SEIR integration; the upper layer is a GP
over (region features, policy indicators) that emits the lower-layer
parameters. The contact-rate output is squashed through
beta(t) = 2 * beta_reference * sigmoid(latent); the remaining outputs map
to positive values through a softplus (offset zero) so that the "identity"
transform holds on the unconstrained scale.

Latent values are tied across days that share an identical policy vector:
the upper layer is a function of (features, policy), so equal inputs must
produce equal outputs. The per-day latent series is the expanded view of
one value per distinct policy vector.

The differentiable core (torch, float64) lives here too so that the
public densities and the trainer share one implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import torch
from scipy.special import expit

from . import gp, seir
from .data import RegionRecord
from .errors import DomainError, NumericalError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)

RAW_CUMULATIVE = "raw_cumulative"
LOG1P_CUMULATIVE = "log1p_cumulative"
OBSERVATION_SPACES = (RAW_CUMULATIVE, LOG1P_CUMULATIVE)

UPPER_OUTPUTS = ("contact", "timescale", "incubation", "recovery", "mortality")

# Defaults chosen so the initial latent means imply a pre-policy
# reproduction number of 2.5 with sigma=0.2, gamma=0.1, mu=0.01 per day
# and a 7-day lower-layer lengthscale.
_INIT_SIGMA, _INIT_GAMMA, _INIT_MU, _INIT_R0 = 0.2, 0.1, 0.01, 2.5
_INIT_LOWER_LENGTHSCALE = 7.0


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of log(1 + exp(x)), stable for large y."""
    y = np.asarray(y, dtype=float)
    out = y + np.log1p(-np.exp(-y))
    return float(out) if out.ndim == 0 else out


def _default_contact_mean(beta_reference=0.5):
    beta = _INIT_R0 * (_INIT_GAMMA + _INIT_MU) * (_INIT_SIGMA + _INIT_MU) / _INIT_SIGMA
    p = beta / (2.0 * beta_reference)
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class ModelConfig:
    """Structural configuration plus initial upper-layer hyperparameters.

    The *_mean fields are the constant upper-GP means on the unconstrained
    output scale; training treats all hyperparameters here as the starting
    point of the learned values.
    """

    beta_reference: float = 0.5
    observation_space: str = LOG1P_CUMULATIVE
    seir_step_size: float = 0.25
    kernel_family: str = gp.MATERN_THREE_HALF
    contact_mean: float = _default_contact_mean()
    contact_signal_variance: float = 1.0
    contact_feature_lengthscale: float = 3.0
    contact_policy_lengthscale: float = 0.5
    timescale_mean: float = softplus_inv(_INIT_LOWER_LENGTHSCALE)
    timescale_signal_variance: float = 1.0
    incubation_mean: float = softplus_inv(_INIT_SIGMA)
    incubation_signal_variance: float = 0.25
    recovery_mean: float = softplus_inv(_INIT_GAMMA)
    recovery_signal_variance: float = 0.25
    mortality_mean: float = softplus_inv(_INIT_MU)
    mortality_signal_variance: float = 0.25
    lower_signal_variance: float = 0.05
    lower_noise_variance: float = 0.01
    initial_exposed_multiplier: float = 10.0
    initial_infectious_ratio: float = 0.5

    def __post_init__(self):
        if self.beta_reference <= 0:
            raise DomainError("beta_reference must be positive")
        if self.observation_space not in OBSERVATION_SPACES:
            raise DomainError(f"unknown observation space {self.observation_space!r}")
        for name in ("contact_signal_variance", "timescale_signal_variance",
                     "incubation_signal_variance", "recovery_signal_variance",
                     "mortality_signal_variance", "lower_signal_variance",
                     "lower_noise_variance"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(values) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass(frozen=True)
class RegionLatents:
    """Lower-layer parameter set for one region.

    ``beta_latent_series`` is the per-day unconstrained contact latent
    (the upper GP's output at each day's (features, policy) input); the
    scalar rates are already on their positive, constrained scale.
    """

    lower_lengthscale: float
    beta_latent_series: np.ndarray
    incubation_rate: float
    recovery_rate: float
    mortality_rate: float

    def __post_init__(self):
        series = np.asarray(self.beta_latent_series, dtype=float)
        object.__setattr__(self, "beta_latent_series", series)
        if not np.all(np.isfinite(series)):
            raise DomainError("beta_latent_series must be finite")
        for name in ("lower_lengthscale", "incubation_rate", "recovery_rate", "mortality_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v}")

    @property
    def n_days(self) -> int:
        return len(self.beta_latent_series)


def observation_map(x, space: str):
    if space == LOG1P_CUMULATIVE:
        return np.log1p(x)
    return np.asarray(x, dtype=float)


def observation_unmap(y, space: str):
    if space == LOG1P_CUMULATIVE:
        return np.expm1(y)
    return np.asarray(y, dtype=float)


def contact_rate_from_latent(latent, beta_reference: float):
    """beta(t) = 2 * beta_reference * sigmoid(latent)."""
    return 2.0 * beta_reference * expit(np.asarray(latent, dtype=float))


def transform_latents(latents: RegionLatents, config: ModelConfig, population: float):
    """Map latents onto (SeirParams, lower-layer KernelSpec)."""
    beta = contact_rate_from_latent(latents.beta_latent_series, config.beta_reference)
    params = seir.SeirParams(
        contact_rate_series=beta,
        incubation_rate=latents.incubation_rate,
        recovery_rate=latents.recovery_rate,
        mortality_rate=latents.mortality_rate,
        population=population,
    )
    kernel = gp.KernelSpec(
        family=config.kernel_family,
        lengthscale=np.array([latents.lower_lengthscale]),
        signal_variance=config.lower_signal_variance,
        noise_variance=config.lower_noise_variance,
    )
    return params, kernel


def initial_state(day1_deaths: float, recovery_rate: float, mortality_rate: float,
                  population: float, config: ModelConfig) -> seir.SeirState:
    """Initial compartments anchored at the first observed day.

    E(0) = initial_exposed_multiplier * D1 * (gamma + mu) / mu, floored at
    one person whenever any deaths were observed; with zero observed
    deaths the region starts disease-free.
    """
    d1 = float(day1_deaths)
    if d1 <= 0:
        e0 = i0 = r0 = 0.0
    else:
        e0 = max(1.0, config.initial_exposed_multiplier * d1
                 * (recovery_rate + mortality_rate) / mortality_rate)
        i0 = config.initial_infectious_ratio * e0
        r0 = d1 * recovery_rate / mortality_rate
    s0 = max(population - e0 - i0 - r0 - d1, 0.0)
    return seir.SeirState(s0, e0, i0, r0, d1, day=0)


@dataclass(frozen=True)
class LowerLayerPrior:
    """Prior mean over days plus the lower-layer kernel."""

    mean_values: np.ndarray  # observation-space prior mean, days 1..n
    kernel: gp.KernelSpec
    death_series: np.ndarray  # raw cumulative deaths from the SEIR solve

    def mean_function(self, queries):
        days = np.atleast_2d(np.asarray(queries, dtype=float))[:, 0]
        idx = np.rint(days).astype(int) - 1
        if np.any(idx < 0) or np.any(idx >= len(self.mean_values)):
            raise ShapeError("query day outside the integrated range")
        return self.mean_values[idx]


def lower_layer_prior(region: RegionRecord, latents: RegionLatents,
                      config: ModelConfig) -> LowerLayerPrior:
    """SEIR-integrated prior mean (observation space) and time kernel."""
    if latents.n_days < region.n_observed_days:
        raise ShapeError(
            f"latents cover {latents.n_days} days, region has {region.n_observed_days}"
        )
    params, kernel = transform_latents(latents, config, region.population)
    init = initial_state(region.fatalities[0], latents.recovery_rate,
                         latents.mortality_rate, region.population, config)
    if latents.n_days == 1:
        deaths = np.array([init.deceased])
    else:
        traj = seir.integrate_euler(init, params, latents.n_days - 1, config.seir_step_size)
        deaths = traj.deaths()
    return LowerLayerPrior(
        mean_values=observation_map(deaths, config.observation_space),
        kernel=kernel,
        death_series=deaths,
    )


def policy_groups(indicators: np.ndarray):
    """Distinct policy vectors in first-appearance order.

    Returns (group_index, group_vectors): group_index[t] is the group of
    day t+1 and group_vectors stacks one vector per group. Exact float
    equality defines identity (the feeds carry discrete levels).
    """
    indicators = np.atleast_2d(np.asarray(indicators, dtype=float))
    seen = {}
    index = np.empty(indicators.shape[0], dtype=int)
    vectors = []
    for t, row in enumerate(indicators):
        key = row.tobytes()
        if key not in seen:
            seen[key] = len(vectors)
            vectors.append(row.copy())
        index[t] = seen[key]
    return index, np.array(vectors)


def upper_inputs(features: np.ndarray, policy_vectors: np.ndarray) -> np.ndarray:
    """Concatenate region features with each policy vector."""
    policy_vectors = np.atleast_2d(policy_vectors)
    tiled = np.tile(np.asarray(features, dtype=float), (policy_vectors.shape[0], 1))
    return np.concatenate([tiled, policy_vectors], axis=1)


def contact_kernel_spec(config: ModelConfig, n_features: int, n_indicators: int) -> gp.KernelSpec:
    ls = np.concatenate([
        np.full(n_features, config.contact_feature_lengthscale),
        np.full(n_indicators, config.contact_policy_lengthscale),
    ])
    return gp.KernelSpec(config.kernel_family, ls, config.contact_signal_variance, 0.0)


# ---------------------------------------------------------------------------
# Differentiable core (torch, float64)
# ---------------------------------------------------------------------------

_DTYPE = torch.float64


def _t(x):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=_DTYPE)


@dataclass
class RegionModelData:
    """Precomputed constants for one region's joint-density term."""

    region_id: str
    y: torch.Tensor  # (T,) observation-space targets
    day_dist: torch.Tensor  # (T, T) |t - t'| over observed days
    group_index: torch.Tensor  # (n_days,) long, day -> distinct-policy group
    group_diff: torch.Tensor  # (G, G, D) pairwise input differences
    group_vectors: np.ndarray  # (G, K) distinct policy vectors
    group_inputs: np.ndarray  # (G, d + K)
    population: float
    day1_deaths: float
    n_days: int  # days the latents cover (observed window during training)
    n_obs: int

    @classmethod
    def from_record(cls, record: RegionRecord, config: ModelConfig,
                    n_days: Optional[int] = None) -> "RegionModelData":
        t_obs = record.n_observed_days
        n_days = n_days or t_obs
        if record.policy.n_days < n_days:
            raise ShapeError(
                f"{record.region_id}: policy covers {record.policy.n_days} days, need {n_days}"
            )
        group_index, group_vectors = policy_groups(record.policy.indicators[:n_days])
        inputs = upper_inputs(record.features, group_vectors)
        days = np.arange(1, t_obs + 1, dtype=float)
        return cls(
            region_id=record.region_id,
            y=_t(observation_map(record.fatalities, config.observation_space)),
            day_dist=_t(np.abs(days[:, None] - days[None, :])),
            group_index=torch.as_tensor(group_index, dtype=torch.long),
            group_diff=_t(inputs[:, None, :] - inputs[None, :, :]),
            group_vectors=group_vectors,
            group_inputs=inputs,
            population=float(record.population),
            day1_deaths=float(record.fatalities[0]),
            n_days=n_days,
            n_obs=t_obs,
        )

    @property
    def n_groups(self) -> int:
        return self.group_vectors.shape[0]


@dataclass
class AlphaTensors:
    """Upper-layer hyperparameters on their unconstrained scales."""

    contact_mean: torch.Tensor
    contact_log_signal: torch.Tensor
    contact_log_ls: torch.Tensor  # (d + K,)
    timescale_mean: torch.Tensor
    timescale_log_signal: torch.Tensor
    incubation_mean: torch.Tensor
    incubation_log_signal: torch.Tensor
    recovery_mean: torch.Tensor
    recovery_log_signal: torch.Tensor
    mortality_mean: torch.Tensor
    mortality_log_signal: torch.Tensor
    lower_log_signal: torch.Tensor
    lower_log_noise: torch.Tensor

    @classmethod
    def from_config(cls, config: ModelConfig, n_features: int, n_indicators: int) -> "AlphaTensors":
        ls = np.concatenate([
            np.full(n_features, config.contact_feature_lengthscale),
            np.full(n_indicators, config.contact_policy_lengthscale),
        ])
        return cls(
            contact_mean=_t(config.contact_mean),
            contact_log_signal=_t(math.log(config.contact_signal_variance)),
            contact_log_ls=_t(np.log(ls)),
            timescale_mean=_t(config.timescale_mean),
            timescale_log_signal=_t(math.log(config.timescale_signal_variance)),
            incubation_mean=_t(config.incubation_mean),
            incubation_log_signal=_t(math.log(config.incubation_signal_variance)),
            recovery_mean=_t(config.recovery_mean),
            recovery_log_signal=_t(math.log(config.recovery_signal_variance)),
            mortality_mean=_t(config.mortality_mean),
            mortality_log_signal=_t(math.log(config.mortality_signal_variance)),
            lower_log_signal=_t(math.log(config.lower_signal_variance)),
            lower_log_noise=_t(math.log(config.lower_noise_variance)),
        )


@dataclass
class LatentSample:
    """Reparameterized latent draws, leading dimension = samples.

    ``contact`` holds one (S, G_r) tensor per region (unconstrained);
    scalar latents are (R, S); ``incubation`` is (S,) and shared globally.
    All on the unconstrained scale.
    """

    contact: list
    timescale: torch.Tensor
    recovery: torch.Tensor
    mortality: torch.Tensor
    incubation: torch.Tensor


def _torch_matern(family: str, r: torch.Tensor) -> torch.Tensor:
    if family == gp.MATERN_HALF:
        return torch.exp(-r)
    if family == gp.MATERN_THREE_HALF:
        c = math.sqrt(3.0) * r
        return (1.0 + c) * torch.exp(-c)
    if family == gp.MATERN_FIVE_HALF:
        c = math.sqrt(5.0) * r
        return (1.0 + c + c * c / 3.0) * torch.exp(-c)
    raise DomainError(f"unknown kernel family {family!r}")


def _torch_chol(k: torch.Tensor, signal: torch.Tensor) -> torch.Tensor:
    """Batched Cholesky under the same jitter-escalation policy as gp.py.

    Escalates tenfold from 1e-8 * signal up to the 1e-2 * signal cap.
    """
    eye = torch.eye(k.shape[-1], dtype=k.dtype)
    jitter = gp.JITTER_INITIAL * signal
    for _ in range(7):
        factor, info = torch.linalg.cholesky_ex(k + jitter * eye)
        if int(info.abs().sum().item()) == 0:
            return factor
        jitter = jitter * gp.JITTER_GROWTH
    raise NumericalError(
        "batched Cholesky failed after jitter escalation",
        diagnostics={"size": int(k.shape[-1])},
    )


def _torch_mvn_logpdf(resid: torch.Tensor, chol: torch.Tensor) -> torch.Tensor:
    """log N(resid; 0, L L^T) for batched residuals/factors."""
    sol = torch.linalg.solve_triangular(chol, resid.unsqueeze(-1), upper=False).squeeze(-1)
    logdet = 2.0 * torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)).sum(-1)
    n = resid.shape[-1]
    return -0.5 * (sol * sol).sum(-1) - 0.5 * logdet - 0.5 * n * LOG_2PI


def _normal_logpdf(x: torch.Tensor, mean: torch.Tensor, variance: torch.Tensor) -> torch.Tensor:
    return -0.5 * ((x - mean) ** 2 / variance + torch.log(variance) + LOG_2PI)


class ClampCounter:
    """Accumulates sub-step clamping events without forcing graph syncs."""

    def __init__(self):
        self._buffer = torch.zeros((), dtype=torch.int64)

    def add(self, *tensors):
        with torch.no_grad():
            for t in tensors:
                self._buffer += (t < 0).sum()

    @property
    def total(self) -> int:
        return int(self._buffer.item())


def torch_seir_deaths(beta: torch.Tensor, sigma: torch.Tensor, gamma: torch.Tensor,
                      mu: torch.Tensor, population: torch.Tensor, day1_deaths: torch.Tensor,
                      config: ModelConfig, n_days: int,
                      clamp_counter: Optional[ClampCounter] = None) -> torch.Tensor:
    """Batched Euler death series at integer days.

    ``beta`` is (..., n_days); the rate tensors broadcast against its
    leading shape. Returns deaths with shape (..., n_days), day 1 equal to
    the observed day-1 count. Mirrors seir.integrate_euler step for step.
    """
    substeps = max(1, round(1.0 / config.seir_step_size))
    h = 1.0 / substeps
    d1 = day1_deaths
    positive = (d1 > 0).to(beta.dtype)
    e = positive * torch.clamp(
        config.initial_exposed_multiplier * d1 * (gamma + mu) / mu, min=1.0
    )
    i = config.initial_infectious_ratio * e
    r = positive * d1 * gamma / mu
    d = d1 * torch.ones_like(gamma)
    s = torch.clamp(population - e - i - r - d, min=0.0)
    musig = mu + sigma
    gammu = gamma + mu
    inv_n = 1.0 / population
    collected = [d.expand(beta.shape[:-1])]
    for day in range(n_days - 1):
        b = beta[..., day]
        for _ in range(substeps):
            infection = b * s * i * inv_n
            new_s = s + h * (mu * (population - s) - infection)
            new_e = e + h * (infection - musig * e)
            new_i = i + h * (sigma * e - gammu * i)
            new_r = r + h * (gamma * i - mu * r)
            d = d + h * (mu * i)
            if clamp_counter is not None:
                clamp_counter.add(new_s, new_e, new_i, new_r)
            s = torch.clamp(new_s, min=0.0)
            e = torch.clamp(new_e, min=0.0)
            i = torch.clamp(new_i, min=0.0)
            r = torch.clamp(new_r, min=0.0)
        collected.append(d)
    return torch.stack(collected, dim=-1)


def torch_joint_log_density(batch: list, sample: LatentSample, alpha: AlphaTensors,
                            config: ModelConfig,
                            clamp_counter: Optional[ClampCounter] = None) -> torch.Tensor:
    """Per-sample sum over regions of log P(Y_i | theta_i) P(theta_i | X_i, P_i, alpha).

    SEIR solves are batched across regions; the GP marginal likelihoods
    and contact priors are batched across regions sharing a day count /
    group count. The shared incubation latent's prior appears once per
    region, matching the per-region factorization of the likelihood.
    """
    n_regions = len(batch)
    s_count = sample.incubation.shape[0]
    max_days = max(d.n_days for d in batch)

    sigma = torch.nn.functional.softplus(sample.incubation).unsqueeze(0).expand(n_regions, -1)
    gamma = torch.nn.functional.softplus(sample.recovery)
    mu = torch.nn.functional.softplus(sample.mortality)
    ell = torch.nn.functional.softplus(sample.timescale)

    betas = []
    for r, d in enumerate(batch):
        b = 2.0 * config.beta_reference * torch.sigmoid(sample.contact[r][:, d.group_index])
        if d.n_days < max_days:
            b = torch.cat([b, b[:, -1:].expand(s_count, max_days - d.n_days)], dim=1)
        betas.append(b)
    beta = torch.stack(betas, dim=0)  # (R, S, max_days)

    population = _t([d.population for d in batch]).view(n_regions, 1)
    d1 = _t([d.day1_deaths for d in batch]).view(n_regions, 1)
    deaths = torch_seir_deaths(beta, sigma, gamma, mu, population, d1, config,
                               max_days, clamp_counter)

    total = torch.zeros(s_count, dtype=_DTYPE)
    signal = torch.exp(alpha.lower_log_signal)
    noise = torch.exp(alpha.lower_log_noise)

    # Lower-layer marginal likelihoods, batched over regions with equal
    # observation counts (one Cholesky call per group).
    by_t = {}
    for r, d in enumerate(batch):
        by_t.setdefault(d.n_obs, []).append(r)
    for t_obs, idxs in by_t.items():
        d_ref = batch[idxs[0]]
        series = torch.stack([deaths[r, :, :t_obs] for r in idxs], dim=0)
        if config.observation_space == LOG1P_CUMULATIVE:
            mean = torch.log1p(series)
        else:
            mean = series
        ell_g = torch.stack([ell[r] for r in idxs], dim=0)  # (n, S)
        r_mat = d_ref.day_dist.view(1, 1, t_obs, t_obs) / ell_g.view(len(idxs), s_count, 1, 1)
        k = signal * _torch_matern(config.kernel_family, r_mat)
        k = k + noise * torch.eye(t_obs, dtype=_DTYPE)
        chol = _torch_chol(k, signal)
        y = torch.stack([batch[r].y for r in idxs], dim=0)  # (n, T)
        total = total + _torch_mvn_logpdf(y.unsqueeze(1) - mean, chol).sum(dim=0)

    # Upper-layer contact priors, batched over regions with equal group counts.
    ls = torch.exp(alpha.contact_log_ls)
    contact_signal = torch.exp(alpha.contact_log_signal)
    by_g = {}
    for r, d in enumerate(batch):
        by_g.setdefault(d.n_groups, []).append(r)
    for n_groups, idxs in by_g.items():
        diff = torch.stack([batch[r].group_diff for r in idxs], dim=0)  # (n, G, G, D)
        scaled = diff / ls
        d2 = (scaled * scaled).sum(-1)
        # sqrt has an infinite slope at 0; mask the structurally-zero
        # (diagonal) distances so their gradient path stays finite.
        nonzero = (diff != 0).any(-1)
        r_g = torch.where(nonzero, torch.sqrt(torch.where(nonzero, d2, torch.ones_like(d2))),
                          torch.zeros_like(d2))
        k_g = contact_signal * _torch_matern(config.kernel_family, r_g)
        chol_g = _torch_chol(k_g, contact_signal)
        contact = torch.stack([sample.contact[r] for r in idxs], dim=0)  # (n, S, G)
        resid = contact - alpha.contact_mean
        total = total + _torch_mvn_logpdf(resid, chol_g.unsqueeze(1)).sum(dim=0)

    # Scalar priors, vectorized across regions; the global incubation
    # latent contributes once per region.
    total = total + _normal_logpdf(
        sample.timescale, alpha.timescale_mean, torch.exp(alpha.timescale_log_signal)
    ).sum(dim=0)
    total = total + _normal_logpdf(
        sample.recovery, alpha.recovery_mean, torch.exp(alpha.recovery_log_signal)
    ).sum(dim=0)
    total = total + _normal_logpdf(
        sample.mortality, alpha.mortality_mean, torch.exp(alpha.mortality_log_signal)
    ).sum(dim=0)
    total = total + n_regions * _normal_logpdf(
        sample.incubation, alpha.incubation_mean, torch.exp(alpha.incubation_log_signal)
    )
    return total


def latents_to_sample(latents: RegionLatents, data: RegionModelData) -> tuple:
    """Unconstrained (contact_groups, timescale, incubation, recovery, mortality)
    tensors (sample dimension 1) for one region's RegionLatents.

    Validates that the per-day beta latent series is constant within each
    distinct-policy group (the upper layer is a function of its inputs).
    """
    series = latents.beta_latent_series[: data.n_days]
    index = data.group_index.numpy()
    group_values = np.empty(data.n_groups)
    for g in range(data.n_groups):
        values = series[index == g]
        if not np.all(values == values[0]):
            raise DomainError(
                "beta_latent_series must be constant across days sharing a policy vector"
            )
        group_values[g] = values[0]
    return (
        _t(group_values).unsqueeze(0),
        _t([softplus_inv(latents.lower_lengthscale)]),
        _t([softplus_inv(latents.incubation_rate)]),
        _t([softplus_inv(latents.recovery_rate)]),
        _t([softplus_inv(latents.mortality_rate)]),
    )


def joint_log_density(region: RegionRecord, latents: RegionLatents,
                      config: ModelConfig) -> float:
    """log P(Y | theta) + log P(theta | X, P, alpha) for one region.

    The data term is the lower-layer GP marginal likelihood of the
    observed series around the SEIR prior mean; the prior term evaluates
    the upper-layer GP at the region's (features, policy) inputs with the
    configured constant means.
    """
    if region.n_observed_days < 1:
        raise ShapeError("region has no observations")
    if latents.n_days < region.n_observed_days:
        raise ShapeError("latents do not cover the observed day range")
    data = RegionModelData.from_record(region, config, n_days=latents.n_days)
    contact, timescale, incubation, recovery, mortality = latents_to_sample(latents, data)
    sample = LatentSample(
        contact=[contact],
        timescale=timescale.unsqueeze(0),
        recovery=recovery.unsqueeze(0),
        mortality=mortality.unsqueeze(0),
        incubation=incubation,
    )
    alpha = AlphaTensors.from_config(config, len(region.features),
                                     region.policy.n_indicators)
    with torch.no_grad():
        value = torch_joint_log_density([data], sample, alpha, config)
    return float(value[0].item())
