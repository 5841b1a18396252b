"""Stochastic variational inference for the two-layer model.

Mean-field normal variational family over per-region latents on the
unconstrained scale, a reparameterized Monte Carlo ELBO, and ADAM. The
upper-layer hyperparameters are point-estimated by the same optimizer
(empirical Bayes). For a fixed seed every quantity here is a pure
function of its inputs.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import gp
from .errors import DomainError, ShapeError, TrainingError
from .model import (
    LOG_2PI,
    AlphaTensors,
    ClampCounter,
    LatentSample,
    ModelConfig,
    RegionModelData,
    torch_joint_log_density,
)

LOG_STD_MIN = math.log(1e-6)
LOG_STD_MAX = math.log(1e3)
LOG_STD_INIT = -2.0
DEFAULT_ITERATIONS = 1000
DEFAULT_LEARNING_RATE = 0.01
DEFAULT_NUM_SAMPLES = 8
NONFINITE_ABORT_STREAK = 10

_DTYPE = torch.float64

_ALPHA_SCALARS = (
    "contact_mean", "contact_log_signal",
    "timescale_mean", "timescale_log_signal",
    "incubation_mean", "incubation_log_signal",
    "recovery_mean", "recovery_log_signal",
    "mortality_mean", "mortality_log_signal",
    "lower_log_signal", "lower_log_noise",
)


@dataclass
class ParamLayout:
    """Name-addressable layout of the flat parameter vector.

    The vector holds the point-estimated upper-layer hyperparameters
    followed by (mean, log_std) pairs for every variational latent: the
    globally shared incubation latent first, then per region one contact
    latent per distinct policy vector plus timescale, recovery and
    mortality.
    """

    names: list
    alpha_index: dict  # name -> int or np.ndarray of ints
    pair_names: list  # latent-space names
    mean_index: np.ndarray  # (P,) into the flat vector
    log_std_index: np.ndarray  # (P,)
    region_latents: dict  # region_id -> {"contact": slice, "timescale": int, ...}
    incubation_latent: int
    region_ids: list
    n_features: int
    n_indicators: int

    @property
    def n_values(self) -> int:
        return len(self.names)

    @property
    def n_latents(self) -> int:
        return len(self.pair_names)

    def torch_indices(self):
        return (
            torch.as_tensor(self.mean_index, dtype=torch.long),
            torch.as_tensor(self.log_std_index, dtype=torch.long),
        )


@dataclass
class VariationalParams:
    """Flat parameter vector plus its layout."""

    layout: ParamLayout
    values: np.ndarray

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.layout, self.values.copy())

    def get(self, name: str) -> float:
        return float(self.values[self.layout.names.index(name)])

    def latent_mean(self, latent_name: str) -> float:
        p = self.layout.pair_names.index(latent_name)
        return float(self.values[self.layout.mean_index[p]])

    def latent_std(self, latent_name: str) -> float:
        p = self.layout.pair_names.index(latent_name)
        return float(np.exp(np.clip(self.values[self.layout.log_std_index[p]],
                                    LOG_STD_MIN, LOG_STD_MAX)))


def build_layout(records, config: ModelConfig):
    """Layout plus initial values for a dataset.

    Initial variational means equal the configured upper-layer constant
    means; log-stds start at -2.
    """
    if not records:
        raise ShapeError("need at least one region")
    datas = [RegionModelData.from_record(r, config) for r in records]
    n_features = len(records[0].features)
    n_indicators = records[0].policy.n_indicators

    names = []
    values = []

    def add(name, value):
        names.append(name)
        values.append(float(value))
        return len(names) - 1

    alpha_index = {}
    alpha0 = AlphaTensors.from_config(config, n_features, n_indicators)
    for key in _ALPHA_SCALARS:
        alpha_index[key] = add(f"alpha/{key}", float(getattr(alpha0, key)))
    ls0 = alpha0.contact_log_ls.numpy()
    idx = [add(f"alpha/contact_log_ls_{j}", ls0[j]) for j in range(len(ls0))]
    alpha_index["contact_log_ls"] = np.array(idx)

    pair_names = []
    mean_index = []
    log_std_index = []

    def add_pair(latent_name, mean0):
        pair_names.append(latent_name)
        mean_index.append(add(f"q/{latent_name}/mean", mean0))
        log_std_index.append(add(f"q/{latent_name}/log_std", LOG_STD_INIT))
        return len(pair_names) - 1

    incubation_latent = add_pair("__global__/incubation", config.incubation_mean)
    region_latents = {}
    for rec, data in zip(records, datas):
        start = len(pair_names)
        for g in range(data.n_groups):
            add_pair(f"{rec.region_id}/contact_{g}", config.contact_mean)
        meta = {
            "contact": slice(start, start + data.n_groups),
            "timescale": add_pair(f"{rec.region_id}/timescale", config.timescale_mean),
            "recovery": add_pair(f"{rec.region_id}/recovery", config.recovery_mean),
            "mortality": add_pair(f"{rec.region_id}/mortality", config.mortality_mean),
        }
        region_latents[rec.region_id] = meta

    layout = ParamLayout(
        names=names,
        alpha_index=alpha_index,
        pair_names=pair_names,
        mean_index=np.array(mean_index),
        log_std_index=np.array(log_std_index),
        region_latents=region_latents,
        incubation_latent=incubation_latent,
        region_ids=[r.region_id for r in records],
        n_features=n_features,
        n_indicators=n_indicators,
    )
    return layout, VariationalParams(layout, np.array(values)), datas


def initial_params(records, config: ModelConfig) -> VariationalParams:
    _, params, _ = build_layout(records, config)
    return params


def _alpha_from_values(values_t: torch.Tensor, layout: ParamLayout) -> AlphaTensors:
    kwargs = {key: values_t[layout.alpha_index[key]] for key in _ALPHA_SCALARS}
    kwargs["contact_log_ls"] = values_t[
        torch.as_tensor(layout.alpha_index["contact_log_ls"], dtype=torch.long)
    ]
    return AlphaTensors(**kwargs)


def _latent_sample(z: torch.Tensor, layout: ParamLayout) -> LatentSample:
    contact = []
    timescale, recovery, mortality = [], [], []
    for rid in layout.region_ids:
        meta = layout.region_latents[rid]
        contact.append(z[:, meta["contact"]])
        timescale.append(z[:, meta["timescale"]])
        recovery.append(z[:, meta["recovery"]])
        mortality.append(z[:, meta["mortality"]])
    return LatentSample(
        contact=contact,
        timescale=torch.stack(timescale, dim=0),
        recovery=torch.stack(recovery, dim=0),
        mortality=torch.stack(mortality, dim=0),
        incubation=z[:, layout.incubation_latent],
    )


def _elbo_samples(values_t: torch.Tensor, layout: ParamLayout, datas, config: ModelConfig,
                  eps: torch.Tensor, clamp_counter=None) -> torch.Tensor:
    """Per-sample joint - log Q at reparameterized draws, shape (S,)."""
    mean_idx, log_std_idx = layout.torch_indices()
    mean = values_t[mean_idx]
    log_std = torch.clamp(values_t[log_std_idx], LOG_STD_MIN, LOG_STD_MAX)
    z = mean + torch.exp(log_std) * eps
    sample = _latent_sample(z, layout)
    alpha = _alpha_from_values(values_t, layout)
    joint = torch_joint_log_density(datas, sample, alpha, config, clamp_counter)
    log_q = (-log_std - 0.5 * LOG_2PI).sum() - 0.5 * (eps * eps).sum(dim=1)
    return joint - log_q


def _draw_eps(seed, num_samples: int, n_latents: int) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.as_tensor(rng.standard_normal((num_samples, n_latents)), dtype=_DTYPE)


def elbo_estimate(params: VariationalParams, batch, config: ModelConfig,
                  num_samples: int, seed) -> float:
    """Seeded Monte Carlo ELBO estimate over the given regions."""
    if num_samples < 1:
        raise DomainError("num_samples must be >= 1")
    datas = [RegionModelData.from_record(r, config) for r in batch]
    eps = _draw_eps(seed, num_samples, params.layout.n_latents)
    with torch.no_grad():
        values_t = torch.as_tensor(params.values, dtype=_DTYPE)
        samples = _elbo_samples(values_t, params.layout, datas, config, eps)
    return float(samples.mean().item())


def elbo_gradient(params: VariationalParams, batch, config: ModelConfig,
                  num_samples: int, seed) -> np.ndarray:
    """Gradient of the same seeded estimator, aligned with params.values."""
    datas = [RegionModelData.from_record(r, config) for r in batch]
    eps = _draw_eps(seed, num_samples, params.layout.n_latents)
    values_t = torch.tensor(params.values, dtype=_DTYPE, requires_grad=True)
    elbo = _elbo_samples(values_t, params.layout, datas, config, eps).mean()
    (grad,) = torch.autograd.grad(elbo, values_t)
    grad = grad.numpy()
    if not np.all(np.isfinite(grad)):
        bad = params.layout.names[int(np.flatnonzero(~np.isfinite(grad))[0])]
        raise TrainingError(f"non-finite ELBO gradient for {bad}", parameter=bad)
    return grad


def optimize_elbo(elbo_fn, values0: np.ndarray, iterations: int, learning_rate: float,
                  seed, num_samples: int, n_latents: int):
    """Generic ADAM ascent on a seeded reparameterized ELBO.

    ``elbo_fn(values_t, eps) -> scalar tensor``; fresh noise is drawn per
    iteration from default_rng([seed, iteration]). Iterations with a
    non-finite ELBO or gradient skip the step; ten such iterations in a
    row abort.
    """
    values = torch.tensor(np.asarray(values0, dtype=float), requires_grad=True)
    optimizer = torch.optim.Adam([values], lr=learning_rate)
    trace = np.empty(iterations)
    bad_streak = 0
    nonfinite = 0
    for it in range(iterations):
        eps = _draw_eps([seed, it], num_samples, n_latents)
        optimizer.zero_grad(set_to_none=True)
        elbo = elbo_fn(values, eps)
        trace[it] = float(elbo.item())
        ok = bool(torch.isfinite(elbo))
        if ok:
            (-elbo).backward()
            ok = bool(torch.all(torch.isfinite(values.grad)))
        if not ok:
            nonfinite += 1
            bad_streak += 1
            if bad_streak >= NONFINITE_ABORT_STREAK:
                raise TrainingError(
                    f"ELBO non-finite for {bad_streak} consecutive iterations "
                    f"(last at iteration {it}, trace tail "
                    f"{np.array2string(trace[max(0, it - 5): it + 1], precision=3)})"
                )
            continue
        bad_streak = 0
        optimizer.step()
    return values.detach().numpy().copy(), trace, nonfinite


def _gaussian_elbo(joint_fn, values_t: torch.Tensor, eps: torch.Tensor,
                   n_latents: int) -> torch.Tensor:
    """Mean over samples of joint(z) - log Q(z) for a flat (mean, log_std) vector."""
    mean = values_t[:n_latents]
    log_std = torch.clamp(values_t[n_latents:], LOG_STD_MIN, LOG_STD_MAX)
    z = mean + torch.exp(log_std) * eps
    log_q = (-log_std - 0.5 * LOG_2PI).sum() - 0.5 * (eps * eps).sum(dim=1)
    return (joint_fn(z) - log_q).mean()


def gaussian_vi_elbo_and_grad(joint_fn, mean, log_std, num_samples: int, seed):
    """Seeded generic-VI ELBO value and gradient w.r.t. (mean, log_std)."""
    mean = np.asarray(mean, dtype=float)
    p = mean.size
    values = torch.tensor(np.concatenate([mean, np.asarray(log_std, dtype=float)]),
                          dtype=_DTYPE, requires_grad=True)
    eps = _draw_eps(seed, num_samples, p)
    elbo = _gaussian_elbo(joint_fn, values, eps, p)
    (grad,) = torch.autograd.grad(elbo, values)
    return float(elbo.item()), grad.numpy()


def fit_gaussian_vi(joint_fn, init_mean, init_log_std, iterations: int,
                    learning_rate: float = DEFAULT_LEARNING_RATE,
                    num_samples: int = DEFAULT_NUM_SAMPLES, seed=0):
    """Mean-field normal VI against an arbitrary joint log-density.

    ``joint_fn(z) -> (S,)`` for draws z of shape (S, P). Returns
    (mean, log_std, elbo_trace).
    """
    init_mean = np.asarray(init_mean, dtype=float)
    init_log_std = np.asarray(init_log_std, dtype=float)
    p = init_mean.size
    values0 = np.concatenate([init_mean, init_log_std])
    final, trace, _ = optimize_elbo(
        lambda values_t, eps: _gaussian_elbo(joint_fn, values_t, eps, p),
        values0, iterations, learning_rate, seed, num_samples, p,
    )
    return final[:p], np.clip(final[p:], LOG_STD_MIN, LOG_STD_MAX), trace


@dataclass
class TrainReport:
    elbo_trace: np.ndarray
    final_params: VariationalParams
    wall_clock_seconds: float
    nonfinite_iterations: int
    seir_clamp_events: int
    seed: int

    def __post_init__(self):
        self.elbo_trace = np.asarray(self.elbo_trace, dtype=float)


@dataclass
class RegionPosterior:
    """Trained variational parameters for one region (unconstrained scale)."""

    contact_mean: np.ndarray  # (G,)
    contact_log_std: np.ndarray  # (G,)
    group_policies: np.ndarray  # (G, K) distinct policy vectors, first-appearance order
    timescale: tuple  # (mean, log_std)
    recovery: tuple
    mortality: tuple


@dataclass
class PosteriorModel:
    """Trained upper-layer hyperparameters plus per-region posteriors."""

    config: ModelConfig
    alpha: dict
    incubation: tuple  # global (mean, log_std)
    regions: dict
    n_features: int
    n_indicators: int
    schema_version: int = 1

    def contact_kernel(self) -> gp.KernelSpec:
        return gp.KernelSpec(
            family=self.config.kernel_family,
            lengthscale=np.exp(np.asarray(self.alpha["contact_log_ls"])),
            signal_variance=float(np.exp(self.alpha["contact_log_signal"])),
            noise_variance=0.0,
        )

    def lower_kernel(self, lengthscale: float) -> gp.KernelSpec:
        return gp.KernelSpec(
            family=self.config.kernel_family,
            lengthscale=np.array([lengthscale]),
            signal_variance=float(np.exp(self.alpha["lower_log_signal"])),
            noise_variance=float(np.exp(self.alpha["lower_log_noise"])),
        )

    def region(self, region_id: str) -> RegionPosterior:
        if region_id not in self.regions:
            raise KeyError(f"region {region_id!r} was not trained")
        return self.regions[region_id]

    def payload(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config.as_dict(),
            "alpha": {k: (list(np.asarray(v).ravel()) if np.ndim(v) else float(v))
                      for k, v in self.alpha.items()},
            "incubation": list(self.incubation),
            "n_features": self.n_features,
            "n_indicators": self.n_indicators,
            "regions": {
                rid: {
                    "contact_mean": list(r.contact_mean),
                    "contact_log_std": list(r.contact_log_std),
                    "group_policies": [list(row) for row in r.group_policies],
                    "timescale": list(r.timescale),
                    "recovery": list(r.recovery),
                    "mortality": list(r.mortality),
                }
                for rid, r in self.regions.items()
            },
        }

    @property
    def checkpoint_id(self) -> str:
        blob = json.dumps(self.payload(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def params_to_model(params: VariationalParams, datas, config: ModelConfig) -> PosteriorModel:
    layout = params.layout
    values = params.values
    alpha = {}
    for key in _ALPHA_SCALARS:
        alpha[key] = float(values[layout.alpha_index[key]])
    alpha["contact_log_ls"] = values[layout.alpha_index["contact_log_ls"]].copy()

    def pair(latent_index):
        m = float(values[layout.mean_index[latent_index]])
        s = float(np.clip(values[layout.log_std_index[latent_index]], LOG_STD_MIN, LOG_STD_MAX))
        return (m, s)

    regions = {}
    for data in datas:
        meta = layout.region_latents[data.region_id]
        c = meta["contact"]
        contact_idx = range(c.start, c.stop)
        regions[data.region_id] = RegionPosterior(
            contact_mean=np.array([pair(i)[0] for i in contact_idx]),
            contact_log_std=np.array([pair(i)[1] for i in contact_idx]),
            group_policies=data.group_vectors.copy(),
            timescale=pair(meta["timescale"]),
            recovery=pair(meta["recovery"]),
            mortality=pair(meta["mortality"]),
        )
    return PosteriorModel(
        config=config,
        alpha=alpha,
        incubation=pair(layout.incubation_latent),
        regions=regions,
        n_features=layout.n_features,
        n_indicators=layout.n_indicators,
    )


def train(data, config: ModelConfig, iterations: int = DEFAULT_ITERATIONS,
          learning_rate: float = DEFAULT_LEARNING_RATE, seed: int = 0,
          num_samples: int = DEFAULT_NUM_SAMPLES):
    """Fit the model by ADAM ascent on the Monte Carlo ELBO.

    Returns (PosteriorModel, TrainReport). iterations=0 returns the
    initialization unchanged.
    """
    records = list(data)
    if not records or all(r.n_observed_days < 5 for r in records):
        raise ShapeError("need at least one region with >= 5 observations")
    started = time.perf_counter()
    layout, params, datas = build_layout(records, config)

    def elbo_fn(values_t, eps):
        return _elbo_samples(values_t, layout, datas, config, eps).mean()

    if iterations == 0:
        final_values, trace, nonfinite = params.values.copy(), np.empty(0), 0
    else:
        final_values, trace, nonfinite = optimize_elbo(
            elbo_fn, params.values, iterations, learning_rate, seed, num_samples,
            layout.n_latents,
        )
    final_values[layout.log_std_index] = np.clip(
        final_values[layout.log_std_index], LOG_STD_MIN, LOG_STD_MAX
    )
    final_params = VariationalParams(layout, final_values)
    model = params_to_model(final_params, datas, config)

    # One counted diagnostic pass at the trained parameters; per-substep
    # counting on every training iteration would dominate the hot loop.
    clamp_counter = ClampCounter()
    with torch.no_grad():
        _elbo_samples(torch.as_tensor(final_values, dtype=_DTYPE), layout, datas, config,
                      _draw_eps([seed, iterations], num_samples, layout.n_latents),
                      clamp_counter)
    report = TrainReport(
        elbo_trace=trace,
        final_params=final_params,
        wall_clock_seconds=time.perf_counter() - started,
        nonfinite_iterations=nonfinite,
        seir_clamp_events=clamp_counter.total,
        seed=seed,
    )
    return model, report


def save_checkpoint(model: PosteriorModel, path) -> str:
    """Write a versioned JSON checkpoint; returns the checkpoint id."""
    payload = model.payload()
    checkpoint_id = model.checkpoint_id
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"checkpoint_id": checkpoint_id, **payload}, handle, sort_keys=True)
        handle.write("\n")
    return checkpoint_id


def load_checkpoint(path) -> PosteriorModel:
    with open(path, encoding="utf-8") as handle:
        blob = json.load(handle)
    if blob.get("schema_version") != 1:
        raise DomainError(f"unsupported checkpoint schema {blob.get('schema_version')!r}")
    alpha = {k: (np.array(v) if isinstance(v, list) else float(v))
             for k, v in blob["alpha"].items()}
    regions = {
        rid: RegionPosterior(
            contact_mean=np.array(r["contact_mean"]),
            contact_log_std=np.array(r["contact_log_std"]),
            group_policies=np.array(r["group_policies"]),
            timescale=tuple(r["timescale"]),
            recovery=tuple(r["recovery"]),
            mortality=tuple(r["mortality"]),
        )
        for rid, r in blob["regions"].items()
    }
    model = PosteriorModel(
        config=ModelConfig.from_dict(blob["config"]),
        alpha=alpha,
        incubation=tuple(blob["incubation"]),
        regions=regions,
        n_features=blob["n_features"],
        n_indicators=blob["n_indicators"],
    )
    if model.checkpoint_id != blob["checkpoint_id"]:
        raise DomainError("checkpoint id mismatch; file corrupted or edited")
    return model


def save_elbo_trace(report: TrainReport, path):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("iteration,elbo\n")
        for it, value in enumerate(report.elbo_trace):
            handle.write(f"{it},{value!r}\n")
