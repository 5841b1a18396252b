"""Gaussian process primitives shared by both layers of the model.

Matern kernels with ARD lengthscales, exact posteriors via Cholesky
factorization with an escalating jitter policy, and an independent
multi-output wrapper. All math is float64 numpy/scipy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky

from .errors import DomainError, NumericalError, ShapeError

MATERN_HALF = "matern_half"
MATERN_THREE_HALF = "matern_three_half"
MATERN_FIVE_HALF = "matern_five_half"
KERNEL_FAMILIES = (MATERN_HALF, MATERN_THREE_HALF, MATERN_FIVE_HALF)

JITTER_INITIAL = 1e-8  # relative to signal_variance
JITTER_MAX = 1e-2
JITTER_GROWTH = 10.0


@dataclass(frozen=True)
class KernelSpec:
    """Matern kernel with per-dimension lengthscales.

    ``lengthscale`` may be a scalar (isotropic) or a vector matching the
    input dimension (ARD).
    """

    family: str = MATERN_THREE_HALF
    lengthscale: np.ndarray = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        object.__setattr__(self, "lengthscale", ls)
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise DomainError("lengthscales must be strictly positive and finite")
        if not (self.signal_variance > 0 and math.isfinite(self.signal_variance)):
            raise DomainError(f"signal_variance must be positive, got {self.signal_variance}")
        if self.noise_variance < 0 or not math.isfinite(self.noise_variance):
            raise DomainError(f"noise_variance must be non-negative, got {self.noise_variance}")


def _scaled_distance(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise ARD-scaled Euclidean distance between row sets."""
    ls = spec.lengthscale
    if ls.size == 1:
        ls = np.full(x.shape[1], ls[0])
    if ls.size != x.shape[1]:
        raise ShapeError(
            f"lengthscale has {ls.size} dims but inputs have {x.shape[1]}"
        )
    dx = (x[:, None, :] - y[None, :, :]) / ls
    return np.sqrt(np.maximum(np.sum(dx * dx, axis=-1), 0.0))


def matern_value(family: str, r: np.ndarray) -> np.ndarray:
    """Unit-variance Matern correlation at scaled distance r."""
    if family == MATERN_HALF:
        return np.exp(-r)
    if family == MATERN_THREE_HALF:
        c = math.sqrt(3.0) * r
        return (1.0 + c) * np.exp(-c)
    if family == MATERN_FIVE_HALF:
        c = math.sqrt(5.0) * r
        return (1.0 + c + c * c / 3.0) * np.exp(-c)
    raise DomainError(f"unknown kernel family {family!r}")


def kernel_eval(spec: KernelSpec, x: Sequence[float], y: Sequence[float]) -> float:
    """Kernel value k(x, y) for two single points."""
    xa = np.atleast_2d(np.asarray(x, dtype=float))
    ya = np.atleast_2d(np.asarray(y, dtype=float))
    if xa.shape[1] != ya.shape[1]:
        raise ShapeError(f"x has {xa.shape[1]} dims, y has {ya.shape[1]}")
    r = _scaled_distance(spec, xa, ya)[0, 0]
    return float(spec.signal_variance * matern_value(spec.family, np.asarray(r)))


def gram(spec: KernelSpec, x: np.ndarray, y: Optional[np.ndarray] = None) -> np.ndarray:
    """Gram matrix between row sets (noise-free)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = x if y is None else np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"inputs have mismatched dims {x.shape[1]} vs {y.shape[1]}")
    return spec.signal_variance * matern_value(spec.family, _scaled_distance(spec, x, y))


def _chol_with_jitter(k: np.ndarray, signal_variance: float):
    """Lower Cholesky factor of k + jitter*I under the escalation policy.

    Starts at 1e-8 * signal_variance and grows tenfold up to
    1e-2 * signal_variance before giving up. Returns (factor, jitter_used).
    """
    jitter = JITTER_INITIAL * signal_variance
    last_error = None
    while jitter <= JITTER_MAX * signal_variance * (1 + 1e-12):
        try:
            factor = cholesky(k + jitter * np.eye(k.shape[0]), lower=True)
            return factor, jitter
        except LinAlgError as exc:
            last_error = exc
            jitter *= JITTER_GROWTH
    eigvals = np.linalg.eigvalsh(k)
    raise NumericalError(
        "Cholesky failed after jitter escalation",
        diagnostics={
            "min_eigenvalue": float(eigvals.min()),
            "max_eigenvalue": float(eigvals.max()),
            "condition": float(eigvals.max() / max(abs(eigvals.min()), 1e-300)),
            "last_error": str(last_error),
        },
    )


def _zero_mean(x: np.ndarray) -> np.ndarray:
    return np.zeros(x.shape[0])


@dataclass(frozen=True)
class GpPosterior:
    """Exact GP conditioned on (inputs, targets) with a cached Cholesky factor."""

    training_inputs: np.ndarray
    training_targets: np.ndarray
    mean_function: Callable[[np.ndarray], np.ndarray]
    kernel: KernelSpec
    chol_lower: Optional[np.ndarray]  # factor of K + noise*I + jitter*I; None when no data
    alpha: Optional[np.ndarray]  # (K + noise*I)^-1 residuals
    jitter_used: float = 0.0

    def with_targets(self, targets: np.ndarray) -> "GpPosterior":
        """Re-condition on new targets at the same inputs, reusing the factor."""
        targets = np.asarray(targets, dtype=float)
        if targets.shape != self.training_targets.shape:
            raise ShapeError(
                f"targets shape {targets.shape} != {self.training_targets.shape}"
            )
        residuals = targets - self.mean_function(self.training_inputs)
        alpha = cho_solve((self.chol_lower, True), residuals)
        return replace(self, training_targets=targets, alpha=alpha)


def gp_posterior(
    prior_mean: Optional[Callable[[np.ndarray], np.ndarray]],
    kernel: KernelSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
) -> GpPosterior:
    """Condition a GP with the given prior mean on (inputs, targets).

    With zero training points the returned posterior falls back to the
    prior at prediction time.
    """
    mean_fn = prior_mean if prior_mean is not None else _zero_mean
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float).ravel()
    if inputs.shape[0] == 0:
        return GpPosterior(inputs, targets, mean_fn, kernel, None, None)
    if inputs.shape[0] != targets.shape[0]:
        raise ShapeError(f"{inputs.shape[0]} inputs vs {targets.shape[0]} targets")
    if not np.all(np.isfinite(targets)):
        raise DomainError("targets must be finite")
    k = gram(kernel, inputs) + kernel.noise_variance * np.eye(inputs.shape[0])
    factor, jitter = _chol_with_jitter(k, kernel.signal_variance)
    residuals = targets - np.asarray(mean_fn(inputs), dtype=float).ravel()
    alpha = cho_solve((factor, True), residuals)
    return GpPosterior(inputs, targets, mean_fn, kernel, factor, alpha, jitter)


def gp_predict(posterior: GpPosterior, queries: np.ndarray, want_covariance: bool = False):
    """Posterior mean and variance (or full covariance) at query rows."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    prior_mean = np.asarray(posterior.mean_function(queries), dtype=float).ravel()
    if posterior.chol_lower is None:
        # No conditioning data: prior mean and covariance.
        if want_covariance:
            return prior_mean, gram(posterior.kernel, queries)
        return prior_mean, np.full(queries.shape[0], posterior.kernel.signal_variance)
    if queries.shape[1] != posterior.training_inputs.shape[1]:
        raise ShapeError(
            f"queries have {queries.shape[1]} dims, training inputs "
            f"{posterior.training_inputs.shape[1]}"
        )
    k_cross = gram(posterior.kernel, queries, posterior.training_inputs)
    mean = prior_mean + k_cross @ posterior.alpha
    v = np.linalg.solve(posterior.chol_lower, k_cross.T)
    if want_covariance:
        cov = gram(posterior.kernel, queries) - v.T @ v
        cov = (cov + cov.T) / 2.0
        # Clip tiny negative eigen-leakage on the diagonal.
        diag = np.maximum(np.diag(cov), 0.0)
        np.fill_diagonal(cov, diag)
        return mean, cov
    var = posterior.kernel.signal_variance - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def multi_output_gp(
    output_names: Sequence[str],
    shared_inputs: np.ndarray,
    per_output_targets: Mapping[str, np.ndarray],
    per_output_kernels: Mapping[str, KernelSpec],
    per_output_means: Optional[Mapping[str, Callable]] = None,
) -> dict:
    """Independent single-output GPs over the same inputs, one per name."""
    shared_inputs = np.atleast_2d(np.asarray(shared_inputs, dtype=float))
    posteriors = {}
    for name in output_names:
        if name not in per_output_targets:
            raise ShapeError(f"missing targets for output {name!r}")
        targets = np.asarray(per_output_targets[name], dtype=float).ravel()
        if targets.shape[0] != shared_inputs.shape[0]:
            raise ShapeError(
                f"output {name!r}: {targets.shape[0]} targets for "
                f"{shared_inputs.shape[0]} inputs"
            )
        mean_fn = per_output_means.get(name) if per_output_means else None
        posteriors[name] = gp_posterior(mean_fn, per_output_kernels[name], shared_inputs, targets)
    return posteriors


def mvn_logpdf_chol(residuals: np.ndarray, chol_lower: np.ndarray) -> float:
    """Multivariate normal log-density at ``residuals`` given a covariance factor."""
    solve = np.linalg.solve(chol_lower, residuals)
    logdet = 2.0 * np.sum(np.log(np.diag(chol_lower)))
    n = residuals.shape[0]
    return float(-0.5 * (solve @ solve) - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi))
