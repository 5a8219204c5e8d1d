"""Ensemble dynamics under attention followed by renormalization.

An ensemble is an (N, D) array of natural parameters treated as a discretized
distribution. One layer applies the attention operator A (pointwise, with the
keys chosen by a measure policy) and then the renormalization operator RN,
an affine re-whitening to a target mean and covariance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import stats

from .attention import AttentionConfig, attention_update
from .measures import (
    ContractError,
    DiscretePoints,
    GaussianMeasure,
    as_ensemble,
    as_psd,
    as_vector,
    check_measure,
)

log = logging.getLogger(__name__)

ROOT_CLAMP = 1e-12
RANK_RTOL = 1e-12


class InsufficientSamplesError(ContractError):
    pass


class SingularCovarianceError(ArithmeticError):
    def __init__(self, rank: int, dim: int):
        super().__init__(f"ensemble covariance is singular (rank {rank} < D={dim}) and ridge is 0")
        self.rank = rank
        self.dim = dim


class SimulationError(RuntimeError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"simulation failed at step {step}: {cause}")
        self.step = step


# ---------------------------------------------------------------- matrix roots

def sym_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues clamped at 1e-12 first."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, ROOT_CLAMP, None))) @ v.T


def sym_inv_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v / np.sqrt(np.clip(w, ROOT_CLAMP, None))) @ v.T


# ---------------------------------------------------------------- moments / RN

@dataclass(frozen=True, eq=False)
class EnsembleMoments:
    mean: np.ndarray
    cov: np.ndarray


def moments(ensemble) -> EnsembleMoments:
    """Mean and centered covariance with divisor N."""
    x = as_ensemble(ensemble)
    if x.shape[0] < 2:
        raise InsufficientSamplesError(f"moments need N >= 2 members, got {x.shape[0]}")
    mean = x.mean(axis=0)
    c = x - mean
    cov = c.T @ c / x.shape[0]
    return EnsembleMoments(mean, 0.5 * (cov + cov.T))


@dataclass(frozen=True, eq=False)
class RenormSpec:
    target_mean: np.ndarray
    target_cov: np.ndarray
    ridge: float = 1e-8

    def __post_init__(self):
        mu = as_vector(self.target_mean, "target_mean")
        cov = as_psd(self.target_cov, mu.size, "target_cov")
        if np.linalg.eigvalsh(cov)[0] < 1e-12:
            raise ContractError("target_cov must be strictly positive definite")
        if not (np.isfinite(self.ridge) and self.ridge >= 0):
            raise ContractError(f"ridge must be a non-negative real, got {self.ridge}")
        object.__setattr__(self, "target_mean", mu)
        object.__setattr__(self, "target_cov", cov)

    @property
    def dim(self) -> int:
        return self.target_mean.size


def renorm_map(mom: EnsembleMoments, spec: RenormSpec):
    """Affine map ``eta -> offset + M (eta - mean)`` of RN for given moments.

    Returns ``(M, ridge_used)``; the ridge is only added when the covariance
    is rank deficient.
    """
    d = spec.dim
    if mom.mean.size != d:
        raise ContractError(f"dimension mismatch: ensemble D={mom.mean.size}, spec D={d}")
    w = np.linalg.eigvalsh(mom.cov)
    rank = int(np.sum(w > RANK_RTOL * max(1.0, float(w[-1]))))
    cov = mom.cov
    ridge_used = 0.0
    if rank < d:
        if spec.ridge == 0:
            raise SingularCovarianceError(rank, d)
        ridge_used = spec.ridge
        cov = cov + spec.ridge * np.eye(d)
        log.info("renormalize: covariance rank %d < %d, ridge %.1e applied", rank, d, ridge_used)
    return sym_sqrt(spec.target_cov) @ sym_inv_sqrt(cov), ridge_used


def renormalize(ensemble, spec: RenormSpec, info: Optional[dict] = None) -> np.ndarray:
    """Re-whiten the ensemble so its moments become (target_mean, target_cov).

    If ``info`` is given, ``info["ridge"]`` records the ridge actually used.
    """
    x = as_ensemble(ensemble, spec.dim)
    mom = moments(x)
    m, ridge = renorm_map(mom, spec)
    if info is not None:
        info["ridge"] = ridge
    return spec.target_mean + (x - mom.mean) @ m.T


# ---------------------------------------------------------------- policies

@dataclass(frozen=True, eq=False)
class FixedMeasure:
    """Keys never change (the Hopfield setting)."""

    h: object

    def __post_init__(self):
        check_measure(self.h)


@dataclass(frozen=True)
class SelfPatterns:
    """Keys are the current hidden states (the transformer setting)."""


@dataclass(frozen=True, eq=False)
class PointwiseMap:
    """Keys are the image x_i = Sigma eta_i of the ensemble.

    The image is summarized by its moment-matched Gaussian, so the attention
    step is the affine map eta -> m + (I + C) eta with (m, C) the image moments.
    """

    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cov", as_psd(self.cov, name="PointwiseMap cov"))


MeasurePolicy = Union[FixedMeasure, SelfPatterns, PointwiseMap]


def _clean_psd(c):
    w, v = np.linalg.eigh(0.5 * (c + c.T))
    c = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (c + c.T)


def materialize(policy: MeasurePolicy, ensemble: np.ndarray):
    """The intrinsic measure a policy induces for the current ensemble."""
    if isinstance(policy, FixedMeasure):
        return policy.h
    if isinstance(policy, SelfPatterns):
        return DiscretePoints(ensemble)
    if isinstance(policy, PointwiseMap):
        if policy.cov.shape[0] != ensemble.shape[1]:
            raise ContractError("PointwiseMap covariance does not match ensemble dimension")
        image = ensemble @ policy.cov
        mean = image.mean(axis=0)
        c = image - mean
        return GaussianMeasure(mean, _clean_psd(c.T @ c / image.shape[0]))
    raise ContractError(f"unknown measure policy {policy!r}")


# ---------------------------------------------------------------- trajectory

PHASES = ("after_attention", "after_renorm")
CSV_FIELDS = ("step", "phase", "mean_norm", "cov_trace", "cov_logdet",
              "mean_dist_to_target", "cov_dist_to_target", "max_marginal_skewness")


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    phase: str
    mean_norm: float
    cov_trace: float
    cov_logdet: float
    mean_dist_to_target: float
    cov_dist_to_target: float
    max_marginal_skewness: float

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in CSV_FIELDS)


def max_marginal_skewness(x: np.ndarray) -> float:
    c = x - x.mean(axis=0)
    m2 = np.mean(c * c, axis=0)
    m3 = np.mean(c * c * c, axis=0)
    ok = m2 > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(m3[ok] / m2[ok] ** 1.5)))


def make_record(step: int, phase: str, x: np.ndarray, ref_mean, ref_cov) -> TrajectoryRecord:
    mean = x.mean(axis=0)
    c = x - mean
    cov = c.T @ c / x.shape[0]
    w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    # singular covariances get a large negative but finite log-determinant
    logdet = float(np.sum(np.log(np.clip(w, np.finfo(float).tiny, None))))
    return TrajectoryRecord(
        step=step,
        phase=phase,
        mean_norm=float(np.linalg.norm(mean)),
        cov_trace=float(np.trace(cov)),
        cov_logdet=logdet,
        mean_dist_to_target=float(np.linalg.norm(mean - ref_mean)),
        cov_dist_to_target=float(np.linalg.norm(cov - ref_cov)),
        max_marginal_skewness=max_marginal_skewness(x),
    )


def _identity_spec(x):
    # RN targeting the current moments is the identity; a degenerate
    # covariance cannot be a target, and identity is then applied directly
    mom = moments(x)
    if np.linalg.eigvalsh(mom.cov)[0] < 1e-12:
        return None
    return RenormSpec(mom.mean, mom.cov, ridge=0.0)


def layer_step(ensemble, policy: MeasurePolicy, cfg: AttentionConfig, spec: Optional[RenormSpec],
               step: int = 0, reference: Optional[tuple] = None, info: Optional[dict] = None):
    """One RN o A layer. Returns ``(ensemble, (record_after_A, record_after_RN))``.

    ``spec=None`` disables renormalization by targeting the post-attention
    moments themselves. Record distances are measured against ``reference``
    (a (mean, cov) pair) when given, otherwise against the renorm target, or
    against the input moments when renormalization is disabled.
    """
    x = as_ensemble(ensemble)
    if reference is None:
        if spec is not None:
            reference = (spec.target_mean, spec.target_cov)
        else:
            m0 = moments(x)
            reference = (m0.mean, m0.cov)
    ref_mean, ref_cov = reference
    h = materialize(policy, x)
    xa = attention_update(x, h, cfg)
    rec_a = make_record(step, PHASES[0], xa, ref_mean, ref_cov)
    if spec is None:
        spec = _identity_spec(xa)
    xr = xa if spec is None else renormalize(xa, spec, info)
    rec_r = make_record(step, PHASES[1], xr, ref_mean, ref_cov)
    return xr, (rec_a, rec_r)


def simulate(initial, policy: MeasurePolicy, cfg: AttentionConfig, spec: Optional[RenormSpec],
             steps: int, reference: Optional[tuple] = None, info: Optional[dict] = None
             ) -> list[TrajectoryRecord]:
    """Iterate :func:`layer_step`; returns 2 * steps records in order.

    ``info``, if given, receives ``"ridge_steps"`` (steps where RN needed a
    ridge) and ``"final"`` (the last ensemble).
    """
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    x = as_ensemble(initial)
    if reference is None and spec is None:
        m0 = moments(x)
        reference = (m0.mean, m0.cov)
    records: list[TrajectoryRecord] = []
    ridge_steps = []
    for k in range(steps):
        step_info: dict = {}
        try:
            x, recs = layer_step(x, policy, cfg, spec, step=k, reference=reference, info=step_info)
        except Exception as exc:
            raise SimulationError(k, exc) from exc
        if step_info.get("ridge", 0.0) > 0:
            ridge_steps.append(k)
        records.extend(recs)
    if info is not None:
        info["ridge_steps"] = ridge_steps
        info["final"] = x
    return records


# ---------------------------------------------------------------- equilibrium

@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    """Moment pushforward of the equilibrium Gaussian through RN o A."""

    target_mean: np.ndarray
    target_cov: np.ndarray
    intermediate_mean: np.ndarray
    intermediate_cov: np.ndarray
    final_mean: np.ndarray
    final_cov: np.ndarray
    mean_error: float
    cov_error: float
    tol: float

    @property
    def max_error(self) -> float:
        return max(self.mean_error, self.cov_error)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def equilibrium_affine_check(mu, sigma, tol: float = 1e-10) -> EquilibriumReport:
    """Exact, sample-free check that N(Sigma^-1 mu, Sigma^-1) is fixed by RN o A.

    The Gaussian moments are pushed through the affine attention map
    ``eta -> mu + (I + Sigma) eta`` and then through the RN moment remap with
    target (Sigma^-1 mu, Sigma^-1), using the same matrix roots as
    :func:`renormalize`.
    """
    mu = as_vector(mu, "mu")
    sigma = as_psd(sigma, mu.size, "sigma")
    d = mu.size
    if np.linalg.eigvalsh(sigma)[0] <= 0:
        raise SingularCovarianceError(int(np.linalg.matrix_rank(sigma)), d)
    sigma_inv = np.linalg.inv(sigma)
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    eq_mean = sigma_inv @ mu
    a = np.eye(d) + sigma
    mid_mean = mu + a @ eq_mean
    mid_cov = a @ sigma_inv @ a.T
    mid_cov = 0.5 * (mid_cov + mid_cov.T)
    spec = RenormSpec(eq_mean, sigma_inv, ridge=0.0)
    m, _ = renorm_map(EnsembleMoments(mid_mean, mid_cov), spec)
    # RN: eta -> eta0 + M (eta - mid_mean), so the mean lands on eta0 + M * 0
    fin_mean = spec.target_mean + m @ (mid_mean - mid_mean)
    fin_cov = m @ mid_cov @ m.T
    fin_cov = 0.5 * (fin_cov + fin_cov.T)
    return EquilibriumReport(
        target_mean=eq_mean, target_cov=sigma_inv,
        intermediate_mean=mid_mean, intermediate_cov=mid_cov,
        final_mean=fin_mean, final_cov=fin_cov,
        mean_error=float(np.max(np.abs(fin_mean - eq_mean))),
        cov_error=float(np.max(np.abs(fin_cov - sigma_inv))),
        tol=tol,
    )


def sample_gaussian(mean, cov, n: int, seed: int) -> np.ndarray:
    """n draws from N(mean, cov) via the symmetric root; seed-deterministic."""
    mean = as_vector(mean, "mean")
    cov = as_psd(cov, mean.size, "cov")
    rng = np.random.Generator(np.random.Philox(seed))
    w, v = np.linalg.eigh(cov)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return mean + rng.standard_normal((n, mean.size)) @ root


@dataclass(frozen=True)
class Band:
    """Largest sampling fluctuations seen over independent calibration draws."""

    mean_dist: float
    cov_dist: float
    skewness: float
    n_seeds: int


def calibrate_band(mean, cov, n: int, seed: int, n_seeds: int = 30) -> Band:
    """Monte Carlo band: per-statistic maximum over ``n_seeds`` fresh N-samples.

    Calibration streams are derived from ``seed`` but never coincide with the
    stream used for the run itself.
    """
    mean = as_vector(mean, "mean")
    cov = as_psd(cov, mean.size, "cov")
    md = cd = sk = 0.0
    for k in range(n_seeds):
        ss = np.random.SeedSequence(seed, spawn_key=(0xCA1B, k))
        x = sample_gaussian(mean, cov, n, int(ss.generate_state(1, np.uint64)[0]))
        mom_mean = x.mean(axis=0)
        c = x - mom_mean
        md = max(md, float(np.linalg.norm(mom_mean - mean)))
        cd = max(cd, float(np.linalg.norm(c.T @ c / n - cov)))
        sk = max(sk, max_marginal_skewness(x))
    return Band(md, cd, sk, n_seeds)


MIN_BAND_N = 64


@dataclass
class EmpiricalReport:
    records: list
    band: Band
    max_mean_drift: float
    max_cov_drift: float
    max_skewness: float
    skew_trend_tau: float
    skew_trend_pvalue: float
    cov_trace_excess: float
    expansion_holds: bool
    verdict: str
    ridge_steps: list

    @property
    def drift_direction(self) -> str:
        if self.cov_trace_excess > self.band.cov_dist:
            return "expanded (covariance trace above equilibrium)"
        if self.cov_trace_excess < -self.band.cov_dist:
            return "contracted (covariance trace below equilibrium)"
        return "none"


def empirical_equilibrium(mu, sigma, n: int, steps: int, seed: int,
                          cfg: AttentionConfig = AttentionConfig(),
                          spec: Optional[RenormSpec] = None,
                          band: Optional[Band] = None,
                          initial: Optional[np.ndarray] = None,
                          trend_alpha: float = 0.01) -> EmpiricalReport:
    """Run RN o A from equilibrium samples and compare against p_eq.

    Drift is measured on the post-RN moments against (Sigma^-1 mu, Sigma^-1),
    whatever target ``spec`` renormalizes to. Passing requires every post-RN
    drift and skewness value to stay inside the calibration band and the
    skewness series to show no monotone trend (Kendall tau p > trend_alpha).
    """
    mu = as_vector(mu, "mu")
    sigma = as_psd(sigma, mu.size, "sigma")
    sigma_inv = np.linalg.inv(sigma)
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    eq_mean = sigma_inv @ mu
    if spec is None:
        spec = RenormSpec(eq_mean, sigma_inv)
    if band is None:
        band = calibrate_band(eq_mean, sigma_inv, n, seed)
    x0 = sample_gaussian(eq_mean, sigma_inv, n, seed) if initial is None else as_ensemble(initial)
    info: dict = {}
    records = simulate(x0, PointwiseMap(sigma), cfg, spec, steps,
                       reference=(eq_mean, sigma_inv), info=info)
    after_a = [r for r in records if r.phase == PHASES[0]]
    after_rn = [r for r in records if r.phase == PHASES[1]]
    max_mean = max(r.mean_dist_to_target for r in after_rn)
    max_cov = max(r.cov_dist_to_target for r in after_rn)
    max_skew = max(r.max_marginal_skewness for r in after_rn)
    skew = np.array([r.max_marginal_skewness for r in after_rn])
    if skew.size >= 3 and np.ptp(skew) > 0:
        tau, p = stats.kendalltau(np.arange(skew.size), skew)
        tau, p = float(tau), float(p)
    else:
        tau, p = 0.0, 1.0  # constant series: no trend
    excess = after_rn[-1].cov_trace - float(np.trace(sigma_inv))
    expansion = all(a.cov_trace > r.cov_trace for a, r in zip(after_a, after_rn))
    if n < MIN_BAND_N:
        verdict = "inconclusive"
    else:
        ok = (max_mean <= band.mean_dist and max_cov <= band.cov_dist
              and max_skew <= band.skewness and p > trend_alpha)
        verdict = "pass" if ok else "fail"
    return EmpiricalReport(records, band, max_mean, max_cov, max_skew, tau, p, excess,
                           expansion, verdict, info["ridge_steps"])
