"""Log normalizer G(eta) = log Z(eta) and its derivatives for each measure.

With sufficient statistic u(x) = x the normalizer is the Laplace transform of
the carrier measure, ``Z(eta) = int h(x) exp(x.eta) dx``. Everything here is a
closed form except :func:`fenchel_conjugate`, which solves the concave dual
problem numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp, softmax

from . import kernels
from .measures import (
    ContractError,
    DiscretePoints,
    GaussianMeasure,
    GeneralMixture,
    SharedCovMixture,
    UnsupportedMeasureError,
    as_natural_param,
    check_measure,
)

WEIGHT_NORM_TOL = 1e-9


class ConjugateError(RuntimeError):
    """Dual solve failed; ``residual`` is the final ``||grad G(eta) - eta*||``."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def _eta(h, eta) -> np.ndarray:
    check_measure(h)
    return as_natural_param(eta, h.dim)


def _quad(eta, cov):
    return 0.5 * float(eta @ cov @ eta)


def _general_logits(h: GeneralMixture, eta):
    # a_n = log pi_n + mu_n.eta + 1/2 eta' Sigma_n eta
    quad = 0.5 * np.einsum("i,nij,j->n", eta, h.covs, eta)
    return np.log(h.weights) + h.means @ eta + quad


def discrete_softmax_mean(points, log_weights, eta) -> np.ndarray:
    """Softmax attention average sum_n softmax(x_n.eta + lw_n) x_n."""
    avg, _ = kernels.softmax_average(eta[None, :], points, log_weights, 1.0)
    return avg[0]


def log_partition(h, eta) -> float:
    """G(eta) in closed form for any supported measure."""
    eta = _eta(h, eta)
    if isinstance(h, DiscretePoints):
        _, lse = kernels.softmax_average(eta[None, :], h.points, h.log_weights, 1.0)
        return float(lse[0])
    if isinstance(h, GaussianMeasure):
        return float(h.mean @ eta) + _quad(eta, h.cov)
    if isinstance(h, SharedCovMixture):
        return _quad(eta, h.cov) + float(logsumexp(np.log(h.weights) + h.means @ eta))
    return float(logsumexp(_general_logits(h, eta)))


def grad_log_partition(h, eta) -> np.ndarray:
    """Mean parameter grad G(eta) = E[x] under p(x | eta)."""
    eta = _eta(h, eta)
    if isinstance(h, DiscretePoints):
        return discrete_softmax_mean(h.points, h.log_weights, eta)
    if isinstance(h, GaussianMeasure):
        return h.mean + h.cov @ eta
    if isinstance(h, SharedCovMixture):
        return h.cov @ eta + discrete_softmax_mean(h.means, np.log(h.weights), eta)
    r = softmax(_general_logits(h, eta))
    comp = h.means + np.einsum("nij,j->ni", h.covs, eta)
    return r @ comp


def _weighted_cov(p, xs):
    centered = xs - p @ xs
    return (centered * p[:, None]).T @ centered


def hessian_log_partition(h, eta) -> np.ndarray:
    """Fisher information: covariance of x under p(x | eta)."""
    eta = _eta(h, eta)
    if isinstance(h, DiscretePoints):
        p = softmax(h.points @ eta + h.log_weights)
        out = _weighted_cov(p, h.points)
    elif isinstance(h, GaussianMeasure):
        out = h.cov.copy()
    elif isinstance(h, SharedCovMixture):
        p = softmax(np.log(h.weights) + h.means @ eta)
        out = h.cov + _weighted_cov(p, h.means)
    else:
        r = softmax(_general_logits(h, eta))
        comp = h.means + np.einsum("nij,j->ni", h.covs, eta)
        out = np.einsum("n,nij->ij", r, h.covs) + _weighted_cov(r, comp)
    return 0.5 * (out + out.T)


def attention_weights(h, eta, scale: float = 1.0) -> np.ndarray:
    """Softmax over ``scale * x_n.eta + log_weight_n`` for a discrete measure."""
    if not isinstance(h, DiscretePoints):
        raise UnsupportedMeasureError(
            f"attention weights need a DiscretePoints measure, got {type(h).__name__}"
        )
    if not scale > 0:
        raise ContractError(f"scale must be positive, got {scale}")
    eta = as_natural_param(eta, h.dim)
    return softmax(scale * (h.points @ eta) + h.log_weights)


def _require_normalized(h):
    if not isinstance(h, GeneralMixture):
        raise UnsupportedMeasureError(
            f"the Jensen bound is defined for GeneralMixture, got {type(h).__name__}"
        )
    total = float(h.weights.sum())
    if abs(total - 1.0) > WEIGHT_NORM_TOL:
        raise ContractError(f"mixture weights must sum to 1 for the Jensen bound (sum={total!r})")


def lower_bound_log_partition(h: GeneralMixture, eta) -> float:
    """Jensen lower bound sum_n pi_n (mu_n.eta + 1/2 eta' Sigma_n eta)."""
    _require_normalized(h)
    eta = as_natural_param(eta, h.dim)
    per = h.means @ eta + 0.5 * np.einsum("i,nij,j->n", eta, h.covs, eta)
    return float(h.weights @ per)


def grad_lower_bound(h: GeneralMixture, eta) -> np.ndarray:
    """sum_n pi_n (mu_n + Sigma_n eta)."""
    _require_normalized(h)
    eta = as_natural_param(eta, h.dim)
    return h.weights @ (h.means + np.einsum("nij,j->ni", h.covs, eta))


@dataclass(frozen=True)
class ConjugateResult:
    value: float
    argmax: np.ndarray
    residual: float
    iterations: int

    def __iter__(self):
        # allows ``value, argmax = fenchel_conjugate(...)``
        yield self.value
        yield self.argmax


def hull_interior_margin(points, y) -> float:
    """Largest t such that y = sum w_n x_n, sum w = 1, all w_n >= t.

    Positive iff y is in the relative interior of the convex hull;
    ``-inf`` when y is outside the hull altogether.
    """
    n, d = points.shape
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_eq = np.zeros((d + 1, n + 1))
    a_eq[:d, :n] = points.T
    a_eq[d, :n] = 1.0
    b_eq = np.append(y, 1.0)
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * n + [(None, 1.0)], method="highs")
    if res.status != 0:
        return -np.inf
    return float(res.x[-1])


def fenchel_conjugate(h, eta_star, solver_tol: float = 1e-9, max_iter: int = 10_000,
                      armijo: float = 1e-4, shrink: float = 0.5) -> ConjugateResult:
    """G*(eta*) = sup_eta (eta.eta* - G(eta)) by backtracking gradient ascent.

    Starts at eta = 0 and stops once ``||eta* - grad G(eta)|| <= solver_tol``.
    Raises :class:`ConjugateError` if eta* lies outside the dual range or the
    iteration budget runs out.
    """
    check_measure(h)
    y = as_natural_param(eta_star, h.dim)
    if not solver_tol > 0:
        raise ContractError(f"solver_tol must be positive, got {solver_tol}")
    if isinstance(h, DiscretePoints):
        margin = hull_interior_margin(h.points, y)
        if not margin > 1e-10:
            raise ConjugateError(
                f"eta* is not in the strict interior of the convex hull of the points "
                f"(LP margin {margin:.3e}); the supremum is not attained",
                residual=float("nan"), iterations=0)

    def objective(e):
        return float(e @ y) - log_partition(h, e)

    eta = np.zeros(h.dim)
    phi = objective(eta)
    g = y - grad_log_partition(h, eta)
    gnorm = float(np.linalg.norm(g))
    t = 1.0
    it = 0
    while gnorm > solver_tol:
        if it >= max_iter:
            raise ConjugateError(
                f"no convergence after {max_iter} iterations (residual {gnorm:.3e})",
                residual=gnorm, iterations=it)
        it += 1
        gg = gnorm * gnorm
        noise = 8 * np.finfo(float).eps * (1.0 + abs(phi))
        while True:
            cand = eta + t * g
            phi_c = objective(cand)
            g_c = y - grad_log_partition(h, cand)
            if phi_c >= phi + armijo * t * gg:
                break
            # improvement below roundoff in phi: accept while the slope along g is
            # still non-negative, which by concavity means phi_c >= phi
            if abs(phi_c - phi) <= noise and float(g_c @ g) >= 0.0:
                break
            t *= shrink
            if t < 1e-300:
                raise ConjugateError("line search failed", residual=gnorm, iterations=it)
        eta, phi, g = cand, phi_c, g_c
        if not np.all(np.isfinite(eta)) or np.linalg.norm(eta) > 1e12:
            raise ConjugateError("iterates diverged; eta* is outside the dual range",
                                 residual=gnorm, iterations=it)
        gnorm = float(np.linalg.norm(g))
        t *= 2.0
    return ConjugateResult(value=phi, argmax=eta, residual=gnorm, iterations=it)


def grad_log_partition_batch(h, etas) -> np.ndarray:
    """Row-wise grad G for an (M, D) stack of natural parameters."""
    check_measure(h)
    etas = np.ascontiguousarray(etas, dtype=np.float64)
    if etas.ndim != 2 or etas.shape[1] != h.dim:
        raise ContractError(f"dimension mismatch: expected (M, {h.dim}), got {etas.shape}")
    if isinstance(h, DiscretePoints):
        return kernels.softmax_average(etas, h.points, h.log_weights, 1.0)[0]
    if isinstance(h, GaussianMeasure):
        return h.mean + etas @ h.cov
    if isinstance(h, SharedCovMixture):
        avg, _ = kernels.softmax_average(etas, h.means, np.log(h.weights), 1.0)
        return etas @ h.cov + avg
    quad = 0.5 * np.einsum("mi,nij,mj->mn", etas, h.covs, etas)
    r = softmax(np.log(h.weights) + etas @ h.means.T + quad, axis=1)
    comp = h.means[None, :, :] + np.einsum("nij,mj->mni", h.covs, etas)
    return np.einsum("mn,mni->mi", r, comp)


def log_partition_batch(h, etas) -> np.ndarray:
    """Row-wise G for an (M, D) stack of natural parameters."""
    check_measure(h)
    etas = np.ascontiguousarray(etas, dtype=np.float64)
    if etas.ndim != 2 or etas.shape[1] != h.dim:
        raise ContractError(f"dimension mismatch: expected (M, {h.dim}), got {etas.shape}")
    if isinstance(h, DiscretePoints):
        return kernels.softmax_average(etas, h.points, h.log_weights, 1.0)[1]
    if isinstance(h, GaussianMeasure):
        return etas @ h.mean + 0.5 * np.einsum("mi,ij,mj->m", etas, h.cov, etas)
    if isinstance(h, SharedCovMixture):
        quad = 0.5 * np.einsum("mi,ij,mj->m", etas, h.cov, etas)
        return quad + logsumexp(np.log(h.weights) + etas @ h.means.T, axis=1)
    quad = 0.5 * np.einsum("mi,nij,mj->mn", etas, h.covs, etas)
    return logsumexp(np.log(h.weights) + etas @ h.means.T + quad, axis=1)
