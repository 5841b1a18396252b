"""Deterministic SEIR compartmental model with a time-varying contact rate.

Compartments: Susceptible, Exposed, Infectious, Recovered, Deceased. The
flow equations include vital dynamics (mu also acts as the natural
birth/death rate, feeding the mu*(n - S) term) and a cumulative death
compartment dD/dt = mu*I. Days are zero-based indices into the per-day
contact-rate series; production integration is forward Euler with
compartments clamped at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError, RangeError

DIVERGENCE_FACTOR = 10.0  # any compartment above 10*n aborts integration
DEFAULT_STEP_SIZE = 0.25


@dataclass(frozen=True)
class SeirParams:
    """Epidemiological parameters for one region.

    ``contact_rate_series`` holds beta for each simulated day (1/day);
    the remaining rates are constant over time.
    """

    contact_rate_series: np.ndarray  # per-day beta, index 0 = first day
    incubation_rate: float  # sigma (1/day)
    recovery_rate: float  # gamma (1/day)
    mortality_rate: float  # mu (1/day)
    population: float  # n (persons)

    def __post_init__(self):
        series = np.asarray(self.contact_rate_series, dtype=float)
        object.__setattr__(self, "contact_rate_series", series)
        for name in ("incubation_rate", "recovery_rate", "mortality_rate", "population"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be strictly positive and finite, got {value}")
        if series.ndim != 1 or series.size == 0:
            raise DomainError("contact_rate_series must be a non-empty 1-D array")
        if not np.all(np.isfinite(series)) or np.any(series <= 0):
            raise DomainError("contact_rate_series entries must be strictly positive and finite")

    def contact_rate(self, day: int) -> float:
        if not 0 <= day < len(self.contact_rate_series):
            raise RangeError(
                f"day {day} outside contact_rate_series range [0, {len(self.contact_rate_series)})"
            )
        return float(self.contact_rate_series[day])


@dataclass(frozen=True)
class SeirState:
    """Compartment occupancies (persons) at an integer day."""

    susceptible: float
    exposed: float
    infectious: float
    recovered: float
    deceased: float
    day: int = 0

    def __post_init__(self):
        for name in ("susceptible", "exposed", "infectious", "recovered", "deceased"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} is not finite: {value}")
            if value < 0:
                raise DomainError(f"{name} must be non-negative, got {value}")
        if self.day < 0:
            raise DomainError(f"day must be non-negative, got {self.day}")

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.susceptible, self.exposed, self.infectious, self.recovered, self.deceased]
        )


@dataclass(frozen=True)
class SeirTrajectory:
    """Daily states from an integration run.

    ``clamp_events`` counts sub-steps where a compartment overshot below
    zero and was clamped.
    """

    states: tuple  # SeirState per integer day, strictly increasing day
    step_size: float
    clamp_events: int = 0

    def __post_init__(self):
        days = [s.day for s in self.states]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise DomainError("trajectory days must be strictly increasing")

    def deaths(self) -> np.ndarray:
        return np.array([s.deceased for s in self.states])

    def days(self) -> np.ndarray:
        return np.array([s.day for s in self.states])


def seir_derivatives(state: SeirState, params: SeirParams, day: int) -> tuple:
    """Per-compartment time derivatives (persons/day) at an integer day.

    Returns (dS, dE, dI, dR, dD):
        dS = mu*(n - S) - beta*S*I/n
        dE = beta*S*I/n - (mu + sigma)*E
        dI = sigma*E - (gamma + mu)*I
        dR = gamma*I - mu*R
        dD = mu*I
    """
    beta = params.contact_rate(day)
    s, e, i, r = state.susceptible, state.exposed, state.infectious, state.recovered
    n = params.population
    mu = params.mortality_rate
    sigma = params.incubation_rate
    gamma = params.recovery_rate
    infection = beta * s * i / n
    d_s = mu * (n - s) - infection
    d_e = infection - (mu + sigma) * e
    d_i = sigma * e - (gamma + mu) * i
    d_r = gamma * i - mu * r
    d_d = mu * i
    return (d_s, d_e, d_i, d_r, d_d)


def _steps_per_day(step_size: float) -> int:
    if not 0 < step_size <= 1:
        raise DomainError(f"step_size must lie in (0, 1], got {step_size}")
    # Snap to an integer number of sub-steps so samples land on integer days.
    return max(1, round(1.0 / step_size))


def integrate_euler(
    initial: SeirState,
    params: SeirParams,
    horizon_days: int,
    step_size: float = DEFAULT_STEP_SIZE,
) -> SeirTrajectory:
    """Forward-Euler trajectory sampled at integer days.

    The requested step size is snapped to 1/round(1/step_size) so that
    every day boundary is hit exactly. Compartments are clamped at zero
    (events counted). Raises IntegrationError if any compartment exceeds
    10x the population.
    """
    if horizon_days < 1:
        raise DomainError(f"horizon_days must be >= 1, got {horizon_days}")
    substeps = _steps_per_day(step_size)
    h = 1.0 / substeps
    last_day_needed = initial.day + horizon_days - 1
    if last_day_needed >= len(params.contact_rate_series):
        raise RangeError(
            f"contact_rate_series (length {len(params.contact_rate_series)}) does not cover "
            f"day {last_day_needed}"
        )

    n = params.population
    mu, sigma, gamma = params.mortality_rate, params.incubation_rate, params.recovery_rate
    s, e, i, r, d = initial.as_vector()
    limit = DIVERGENCE_FACTOR * n
    clamp_events = 0
    states = [initial]
    for day_offset in range(horizon_days):
        day = initial.day + day_offset
        beta = params.contact_rate_series[day]
        for _ in range(substeps):
            infection = beta * s * i / n
            d_s = mu * (n - s) - infection
            d_e = infection - (mu + sigma) * e
            d_i = sigma * e - (gamma + mu) * i
            d_r = gamma * i - mu * r
            d_d = mu * i
            s += h * d_s
            e += h * d_e
            i += h * d_i
            r += h * d_r
            d += h * d_d
            for value in (s, e, i, r, d):
                if value < 0:
                    clamp_events += 1
            s, e, i, r, d = (max(s, 0.0), max(e, 0.0), max(i, 0.0), max(r, 0.0), max(d, 0.0))
        if max(s, e, i, r, d) > limit:
            raise IntegrationError(
                f"integration diverged on day {day + 1} (compartment exceeds {limit:g})",
                day=day + 1,
            )
        states.append(SeirState(s, e, i, r, d, day=day + 1))
    return SeirTrajectory(states=tuple(states), step_size=h, clamp_events=clamp_events)


def reproduction_number(params: SeirParams, day: int) -> float:
    """Reproduction number at a given day.

    R0(day) = sigma/(mu + sigma) * beta(day)/(mu + gamma).
    """
    beta = params.contact_rate(day)
    mu, sigma, gamma = params.mortality_rate, params.incubation_rate, params.recovery_rate
    return (sigma / (mu + sigma)) * (beta / (mu + gamma))


def integrate_euler_batch(
    initial: np.ndarray,
    beta_series: np.ndarray,
    incubation_rate: np.ndarray,
    recovery_rate: np.ndarray,
    mortality_rate: np.ndarray,
    population: np.ndarray,
    horizon_days: int,
    step_size: float = DEFAULT_STEP_SIZE,
):
    """Vectorized Euler across a batch of parameter sets.

    ``initial`` is (B, 5) in compartment order (S, E, I, R, D);
    ``beta_series`` is (B, n_days); the rate arrays are (B,). Returns
    (deaths, diverged, clamp_events) where ``deaths`` is (B, horizon_days + 1)
    sampled at integer days starting at the initial day, and ``diverged``
    flags batch members whose compartments exceeded 10x population
    (flagged rather than raised, so callers can drop bad Monte Carlo
    samples). Matches integrate_euler trajectory-for-trajectory.
    """
    substeps = _steps_per_day(step_size)
    h = 1.0 / substeps
    if beta_series.shape[1] < horizon_days:
        raise RangeError(
            f"beta_series covers {beta_series.shape[1]} days, need {horizon_days}"
        )
    state = np.array(initial, dtype=float).T.copy()  # (5, B)
    s, e, i, r, d = state
    n = np.asarray(population, dtype=float)
    mu = np.asarray(mortality_rate, dtype=float)
    sigma = np.asarray(incubation_rate, dtype=float)
    gamma = np.asarray(recovery_rate, dtype=float)
    limit = DIVERGENCE_FACTOR * n
    batch = s.shape[0]
    deaths = np.empty((batch, horizon_days + 1))
    deaths[:, 0] = d
    diverged = np.zeros(batch, dtype=bool)
    clamp_events = 0
    for day in range(horizon_days):
        beta = beta_series[:, day]
        for _ in range(substeps):
            infection = beta * s * i / n
            d_s = mu * (n - s) - infection
            d_e = infection - (mu + sigma) * e
            d_i = sigma * e - (gamma + mu) * i
            d_r = gamma * i - mu * r
            d_d = mu * i
            s = s + h * d_s
            e = e + h * d_e
            i = i + h * d_i
            r = r + h * d_r
            d = d + h * d_d
            clamp_events += int((s < 0).sum() + (e < 0).sum() + (i < 0).sum() + (r < 0).sum())
            np.maximum(s, 0.0, out=s)
            np.maximum(e, 0.0, out=e)
            np.maximum(i, 0.0, out=i)
            np.maximum(r, 0.0, out=r)
            np.maximum(d, 0.0, out=d)
        diverged |= (
            (s > limit) | (e > limit) | (i > limit) | (r > limit) | (d > limit)
            | ~np.isfinite(s) | ~np.isfinite(d)
        )
        deaths[:, day + 1] = d
    return deaths, diverged, clamp_events
