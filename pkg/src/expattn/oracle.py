"""Independent numerical oracles: finite differences, Monte Carlo, grid search.

Nothing here imports the closed-form code in :mod:`expattn.expfam`; the
measures are read only as parameter containers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import (
    DiscretePoints,
    GaussianMeasure,
    GeneralMixture,
    SharedCovMixture,
    UnsupportedMeasureError,
    as_natural_param,
)

MC_CHUNK = 1 << 16


class OracleDomainError(ArithmeticError):
    """The function under test produced a non-finite value."""


class OracleScaleError(ValueError):
    """The instance is too large for an exhaustive oracle."""


@dataclass(frozen=True)
class FiniteDiffSpec:
    step: float = 1e-5

    def __post_init__(self):
        if not 1e-9 <= self.step <= 1e-2:
            raise ValueError(f"finite-difference step must lie in [1e-9, 1e-2], got {self.step}")


@dataclass(frozen=True)
class McSpec:
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.n_samples < 1000:
            raise ValueError(f"n_samples must be >= 1000, got {self.n_samples}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _finite(v, where):
    if not np.all(np.isfinite(v)):
        raise OracleDomainError(f"non-finite function value at {where}")
    return v


def fd_gradient(f, eta, spec: FiniteDiffSpec = FiniteDiffSpec()) -> np.ndarray:
    """Central differences (f(eta + h e_i) - f(eta - h e_i)) / 2h."""
    eta = as_natural_param(eta)
    h = spec.step
    out = np.empty(eta.size)
    for i in range(eta.size):
        e = np.zeros(eta.size)
        e[i] = h
        fp = _finite(float(f(eta + e)), eta + e)
        fm = _finite(float(f(eta - e)), eta - e)
        out[i] = (fp - fm) / (2 * h)
    return out


def fd_jacobian(g, eta, spec: FiniteDiffSpec = FiniteDiffSpec()) -> np.ndarray:
    """Central-difference Jacobian of a vector function; column i is d g / d eta_i."""
    eta = as_natural_param(eta)
    h = spec.step
    cols = []
    for i in range(eta.size):
        e = np.zeros(eta.size)
        e[i] = h
        gp = _finite(np.asarray(g(eta + e), dtype=float), eta + e)
        gm = _finite(np.asarray(g(eta - e), dtype=float), eta - e)
        cols.append((gp - gm) / (2 * h))
    return np.column_stack(cols)


def fd_hessian(f, eta, spec: FiniteDiffSpec = FiniteDiffSpec()) -> np.ndarray:
    """Second-order central differences of a scalar function, symmetrized."""
    eta = as_natural_param(eta)
    d = eta.size
    h = spec.step

    def ev(x):
        return _finite(float(f(x)), x)

    f0 = ev(eta)
    out = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        out[i, i] = (ev(eta + ei) - 2 * f0 + ev(eta - ei)) / (h * h)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            v = (ev(eta + ei + ej) - ev(eta + ei - ej) - ev(eta - ei + ej) + ev(eta - ei - ej)) / (4 * h * h)
            out[i, j] = out[j, i] = v
    return 0.5 * (out + out.T)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    # counter-style stream: (seed, chunk index) fully determines the chunk's samples
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _sqrt_psd(cov):
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def _mixture_parts(h):
    if isinstance(h, GaussianMeasure):
        return np.ones(1), h.mean[None, :], h.cov[None, :, :]
    if isinstance(h, SharedCovMixture):
        return h.weights, h.means, np.broadcast_to(h.cov, (h.n,) + h.cov.shape)
    if isinstance(h, GeneralMixture):
        return h.weights, h.means, h.covs
    if isinstance(h, DiscretePoints):
        raise UnsupportedMeasureError("discrete log normalizer is exact; no Monte Carlo oracle")
    raise UnsupportedMeasureError(f"not an intrinsic measure: {type(h).__name__}")


def mc_log_partition(h, eta, spec: McSpec) -> tuple[float, float]:
    """Monte Carlo estimate of log Z(eta) and its delta-method standard error.

    Draws x ~ h / W exactly (component index, then a Gaussian) and returns
    ``log W + log mean exp(x.eta)``.
    """
    weights, means, covs = _mixture_parts(h)
    eta = as_natural_param(eta, means.shape[1])
    total = float(weights.sum())
    probs = weights / total
    roots = np.stack([_sqrt_psd(c) for c in covs])
    # per-component projections: x.eta = mu.eta + z.(R' eta)
    mean_proj = means @ eta
    root_proj = np.einsum("nij,i->nj", roots, eta)
    s = np.empty(spec.n_samples)
    n_chunks = -(-spec.n_samples // MC_CHUNK)
    for c in range(n_chunks):
        lo = c * MC_CHUNK
        hi = min(lo + MC_CHUNK, spec.n_samples)
        rng = _chunk_rng(spec.seed, c)
        comp = rng.choice(len(probs), size=hi - lo, p=probs)
        z = rng.standard_normal((hi - lo, means.shape[1]))
        s[lo:hi] = mean_proj[comp] + np.einsum("mj,mj->m", z, root_proj[comp])
    m = s.max()
    e = np.exp(s - m)
    mean_e = e.mean()
    se = e.std() / (np.sqrt(spec.n_samples) * mean_e)
    return float(np.log(total) + m + np.log(mean_e)), float(se)


def grid_sup(f, box, resolution: float, vectorized: bool = False):
    """Exhaustive maximization of ``f`` over a grid on a box in R^1 or R^2.

    ``box`` is a sequence of (lo, hi) pairs, one per coordinate. With
    ``vectorized=True``, ``f`` receives an (M, D) array and returns M values.
    """
    box = [tuple(map(float, b)) for b in box]
    d = len(box)
    if d > 2:
        raise OracleScaleError(f"grid oracle supports D <= 2, got D={d}")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    axes = [np.arange(lo, hi + 0.5 * resolution, resolution) for lo, hi in box]
    grid = np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=1)
    if vectorized:
        vals = np.asarray(f(grid), dtype=float)
    else:
        vals = np.array([float(f(p)) for p in grid])
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    k = int(np.argmax(vals))
    return grid[k].copy(), float(vals[k])
