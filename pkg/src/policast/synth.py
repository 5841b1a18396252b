"""Seeded synthetic benchmark with a known feature-to-contact-rate mapping.

Twelve regions by default. Each region's pre-policy contact latent is a
fixed linear function of its features; policy phases (none, partial, full
lockdown) subtract a region-specific multiple of the stringency from the
latent. Fatalities come from an SEIR solve with multiplicative log-normal
observation noise, rounded and made non-decreasing. The ground truth
(per-region pre-policy R0, rates, phase days) is written alongside the
CSV feeds so recovery benchmarks can score against it.
"""

from __future__ import annotations

import csv
import json
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import seir

CALENDAR_START = date(2020, 1, 22)
PARTIAL_PATTERN = np.array([0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0])
FULL_PATTERN = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5])
FEATURE_WEIGHTS = np.array([0.55, -0.40, 0.30, 0.0, 0.0, 0.0])
LATENT_INTERCEPT = -0.65
POLICY_SLOPE_BASE = 2.8
POLICY_SLOPE_FEATURE = 0.25  # modulated by tanh(feature 5)
OBS_NOISE_LOG_STD = 0.025
INITIAL_DEATHS = 2  # cumulative deaths anchoring day 1; noise-proof under rounding


def _region_truth(rng: np.random.Generator, n_features: int):
    features = rng.standard_normal(n_features)
    population = 10 ** (6.5 + rng.uniform(0.0, 1.0))
    gamma = 0.1 * np.exp(0.08 * features[3 % n_features])
    mu = 0.01 * np.exp(0.10 * features[4 % n_features])
    sigma = 0.2
    latent_pre = LATENT_INTERCEPT + float(FEATURE_WEIGHTS[:n_features] @ features)
    slope = POLICY_SLOPE_BASE * (1.0 + POLICY_SLOPE_FEATURE * np.tanh(features[5 % n_features]))
    partial_day = int(rng.integers(6, 13))  # observed-day index of the partial phase
    full_day = partial_day + int(rng.integers(6, 11))
    return {
        "features": features,
        "population": float(population),
        "gamma": float(gamma),
        "mu": float(mu),
        "sigma": sigma,
        "latent_pre": float(latent_pre),
        "policy_slope": float(slope),
        "partial_day": partial_day,
        "full_day": full_day,
    }


def _phase_indicators(n_days: int, n_indicators: int, partial_day: int, full_day: int):
    indicators = np.zeros((n_days, n_indicators))
    indicators[partial_day - 1 : full_day - 1] = PARTIAL_PATTERN[:n_indicators]
    indicators[full_day - 1 :] = FULL_PATTERN[:n_indicators]
    return indicators


def _latent_series(truth: dict, indicators: np.ndarray, beta_reference: float):
    stringency = indicators.mean(axis=1)  # in [0, 1]
    latents = truth["latent_pre"] - truth["policy_slope"] * stringency
    return latents, 2.0 * beta_reference * expit(latents)


def generate_benchmark(out_dir, seed: int = 42, n_regions: int = 12, n_features: int = 6,
                       n_indicators: int = 9, observed_days: int = 74,
                       holdout_days: int = 14, beta_reference: float = 0.5) -> dict:
    """Write features/fatalities/policies CSVs plus truth.json; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_days = observed_days + holdout_days

    regions = []
    for k in range(n_regions):
        region_id = f"R{k + 1:02d}"
        truth = _region_truth(rng, n_features)
        indicators = _phase_indicators(n_days, n_indicators, truth["partial_day"],
                                       truth["full_day"])
        latents, betas = _latent_series(truth, indicators, beta_reference)

        # Day 1 starts from the same anchored initial state the model's
        # documented initializer reconstructs from day-1 deaths, so the
        # recovery benchmark probes the feature-to-contact-rate mapping
        # rather than initial-condition misspecification.
        pop = truth["population"]
        d0 = float(INITIAL_DEATHS)
        gamma, mu = truth["gamma"], truth["mu"]
        e0 = max(1.0, 10.0 * d0 * (gamma + mu) / mu)
        i0 = 0.5 * e0
        r0 = d0 * gamma / mu
        init = seir.SeirState(pop - e0 - i0 - r0 - d0, e0, i0, r0, d0, day=0)
        beta_pre = 2.0 * beta_reference * expit(truth["latent_pre"])
        params = seir.SeirParams(betas, truth["sigma"], gamma, mu, pop)
        traj = seir.integrate_euler(init, params, n_days - 1, 0.25)
        d_series = traj.deaths()
        t0 = int(rng.integers(0, 30))  # calendar offset; staggers anchor dates

        noise = np.exp(rng.normal(0.0, OBS_NOISE_LOG_STD, n_days))
        observed = np.maximum.accumulate(np.rint(d_series * noise)).astype(int)
        observed = np.maximum(observed, int(d0))  # day 1 sits at the outbreak threshold

        r0_pre = (truth["sigma"] / (truth["mu"] + truth["sigma"])) * (
            beta_pre / (truth["mu"] + truth["gamma"])
        )
        regions.append({
            "region_id": region_id,
            "truth": truth,
            "indicators": indicators,
            "observed": observed,
            "anchor": CALENDAR_START + timedelta(days=t0),
            "r0_pre": float(r0_pre),
            "true_deaths": d_series,
        })

    paths = {
        "features": out / "features.csv",
        "fatalities": out / "fatalities.csv",
        "policies": out / "policies.csv",
        "truth": out / "truth.json",
    }
    with open(paths["features"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["region_id", "population"]
                        + [f"feature_{j + 1}" for j in range(n_features)])
        for reg in regions:
            writer.writerow([reg["region_id"], repr(reg["truth"]["population"])]
                            + [repr(float(v)) for v in reg["truth"]["features"]])
    with open(paths["fatalities"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["region_id", "date", "cumulative_deaths"])
        for reg in regions:
            for day in range(n_days):
                writer.writerow([
                    reg["region_id"],
                    (reg["anchor"] + timedelta(days=day)).isoformat(),
                    int(reg["observed"][day]),
                ])
    with open(paths["policies"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["region_id", "date"]
                        + [f"indicator_{j + 1}" for j in range(n_indicators)]
                        + ["stringency"])
        for reg in regions:
            for day in range(n_days):
                row = reg["indicators"][day]
                writer.writerow(
                    [reg["region_id"], (reg["anchor"] + timedelta(days=day)).isoformat()]
                    + [repr(float(v)) for v in row]
                    + [repr(float(100.0 * row.mean()))]
                )
    truth_blob = {
        "seed": seed,
        "n_regions": n_regions,
        "observed_days": observed_days,
        "holdout_days": holdout_days,
        "beta_reference": beta_reference,
        "regions": {
            reg["region_id"]: {
                "r0_pre": reg["r0_pre"],
                "gamma": reg["truth"]["gamma"],
                "mu": reg["truth"]["mu"],
                "sigma": reg["truth"]["sigma"],
                "population": reg["truth"]["population"],
                "latent_pre": reg["truth"]["latent_pre"],
                "policy_slope": reg["truth"]["policy_slope"],
                "partial_day": reg["truth"]["partial_day"],
                "full_day": reg["truth"]["full_day"],
                "true_deaths": [float(v) for v in reg["true_deaths"]],
            }
            for reg in regions
        },
    }
    with open(paths["truth"], "w", encoding="utf-8") as handle:
        json.dump(truth_blob, handle, sort_keys=True, indent=1)
        handle.write("\n")
    return {k: str(v) for k, v in paths.items()}
