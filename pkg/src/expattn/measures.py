"""Intrinsic measures h(x) and input validation helpers.

Four carrier measures are supported, each with a closed-form log normalizer
for the sufficient statistic u(x) = x:

- :class:`DiscretePoints` -- weighted sum of Dirac masses (the key set)
- :class:`GaussianMeasure` -- a single Gaussian N(mu, Sigma)
- :class:`SharedCovMixture` -- Gaussian mixture with one shared covariance
- :class:`GeneralMixture` -- Gaussian mixture with per-component covariances

Natural parameters, dual parameters and ensembles are plain float64 numpy
arrays; the ``as_*`` helpers validate them at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

SYM_TOL = 1e-12
EIG_CLAMP = 1e-10


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class UnsupportedMeasureError(TypeError):
    """The operation has no implementation for this measure variant."""


def as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.array(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1 or v.size < 1:
        raise ContractError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractError(f"{name} has non-finite coordinates")
    return v


def as_natural_param(eta, dim: int | None = None) -> np.ndarray:
    """Validate a natural parameter; optionally check its dimension."""
    v = as_vector(eta, "natural parameter")
    if dim is not None and v.size != dim:
        raise ContractError(f"dimension mismatch: expected D={dim}, got {v.size}")
    return v


def as_ensemble(params, dim: int | None = None) -> np.ndarray:
    """Validate an ensemble of natural parameters as an (N, D) array."""
    a = np.array(params, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractError(f"ensemble must have shape (N, D) with N, D >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("ensemble has non-finite entries")
    if dim is not None and a.shape[1] != dim:
        raise ContractError(f"dimension mismatch: expected D={dim}, got {a.shape[1]}")
    return np.ascontiguousarray(a)


def as_psd(m, dim: int | None = None, name: str = "matrix") -> np.ndarray:
    """Validate a symmetric PSD matrix.

    Eigenvalues in ``[-1e-10, 0)`` are treated as construction noise and
    clamped to zero; anything more negative is rejected.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"{name} must be square, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ContractError(f"dimension mismatch: {name} is {a.shape[0]}x{a.shape[0]}, expected D={dim}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    if np.max(np.abs(a - a.T), initial=0.0) > SYM_TOL:
        raise ContractError(f"{name} is not symmetric")
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    if w[0] < -EIG_CLAMP:
        raise ContractError(f"{name} is not PSD (min eigenvalue {w[0]:.3e})")
    if w[0] < 0.0:
        w = np.clip(w, 0.0, None)
        a = (v * w) @ v.T
        a = 0.5 * (a + a.T)
    return a


def _as_point_matrix(points, name: str) -> np.ndarray:
    a = np.array(points, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractError(f"{name} must have shape (N, D) with N >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    return np.ascontiguousarray(a)


def _as_weights(weights, n: int) -> np.ndarray:
    w = np.array(weights, dtype=np.float64).reshape(-1)
    if w.size != n:
        raise ContractError(f"expected {n} mixture weights, got {w.size}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise ContractError("mixture weights must be finite and strictly positive")
    return w


@dataclass(frozen=True, eq=False)
class DiscretePoints:
    """h(x) = sum_n w_n delta(x - x_n); default weights give the counting measure."""

    points: np.ndarray
    log_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = _as_point_matrix(self.points, "points")
        if self.log_weights is None:
            lw = np.zeros(pts.shape[0])
        else:
            lw = np.array(self.log_weights, dtype=np.float64).reshape(-1)
            if lw.size != pts.shape[0]:
                raise ContractError(f"expected {pts.shape[0]} log weights, got {lw.size}")
            if not np.all(np.isfinite(lw)):
                raise ContractError("log weights must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "log_weights", lw)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """h(x) = N(x; mean, cov). ``cov`` may be singular."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = as_vector(self.mean, "mean")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "cov", as_psd(self.cov, mu.size, "cov"))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True, eq=False)
class SharedCovMixture:
    """h(x) = sum_n pi_n N(x; mu_n, cov). Weights need not sum to one."""

    weights: np.ndarray
    means: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mus = _as_point_matrix(self.means, "means")
        object.__setattr__(self, "means", mus)
        object.__setattr__(self, "weights", _as_weights(self.weights, mus.shape[0]))
        object.__setattr__(self, "cov", as_psd(self.cov, mus.shape[1], "cov"))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n(self) -> int:
        return self.means.shape[0]


@dataclass(frozen=True, eq=False)
class GeneralMixture:
    """h(x) = sum_n pi_n N(x; mu_n, cov_n). Weights need not sum to one."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        mus = _as_point_matrix(self.means, "means")
        n, d = mus.shape
        covs = np.array(self.covs, dtype=np.float64)
        if d == 1 and covs.ndim == 1:
            covs = covs.reshape(-1, 1, 1)
        if covs.ndim != 3 or covs.shape[0] != n:
            raise ContractError(f"expected {n} component covariances, got shape {covs.shape}")
        covs = np.stack([as_psd(c, d, f"covs[{i}]") for i, c in enumerate(covs)])
        object.__setattr__(self, "means", mus)
        object.__setattr__(self, "weights", _as_weights(self.weights, n))
        object.__setattr__(self, "covs", covs)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n(self) -> int:
        return self.means.shape[0]


IntrinsicMeasure = Union[DiscretePoints, GaussianMeasure, SharedCovMixture, GeneralMixture]

MEASURE_TYPES = (DiscretePoints, GaussianMeasure, SharedCovMixture, GeneralMixture)


def check_measure(h) -> None:
    if not isinstance(h, MEASURE_TYPES):
        raise UnsupportedMeasureError(f"not an intrinsic measure: {type(h).__name__}")
