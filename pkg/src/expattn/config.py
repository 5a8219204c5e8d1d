"""Experiment configuration files (YAML).

Field names are fixed and unknown keys are errors. Matrices are written as
row-major lists of rows (or one flat row-major list), or with the shorthands
``identity`` and ``{scaled_identity: c}``. Vectors are lists or ``zeros``.
The parsed config keeps those raw forms, so re-serializing reproduces the
input field for field.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from .attention import AttentionConfig
from .dynamics import Band, FixedMeasure, PointwiseMap, RenormSpec, SelfPatterns
from .measures import (ContractError, DiscretePoints, GaussianMeasure, GeneralMixture, SharedCovMixture,
                       as_psd)


class ConfigError(ValueError):
    pass


TOP_KEYS = ("dim", "n_points", "seed", "measure", "policy", "attention", "renorm",
            "steps", "initial_distribution", "band")
REQUIRED = ("dim", "n_points", "seed", "policy", "steps", "initial_distribution")
MEASURE_KEYS = {
    "discrete": ("points", "log_weights"),
    "gaussian": ("mean", "cov"),
    "shared_cov_mixture": ("weights", "means", "cov"),
    "general_mixture": ("weights", "means", "covs"),
}
POLICIES = ("fixed", "self", "pointwise")
ATTENTION_DEFAULTS = {"step_size": 1.0, "scale": 1.0, "bilinear": "identity", "residual": True}
RENORM_KEYS = ("target_mean", "target_cov", "ridge")
BAND_KEYS = ("mean_dist", "cov_dist", "skewness")


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_vector(v, dim: int, where: str) -> np.ndarray:
    if v == "zeros":
        return np.zeros(dim)
    try:
        a = np.array(v, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric vector") from exc
    if a.shape != (dim,):
        raise ConfigError(f"{where}: expected a vector of length {dim}, got shape {a.shape}")
    return a


def parse_matrix(m, dim: int, where: str) -> np.ndarray:
    if m == "identity":
        return np.eye(dim)
    if isinstance(m, dict):
        _check_keys(m, ("scaled_identity",), where)
        if "scaled_identity" not in m:
            raise ConfigError(f"{where}: expected 'scaled_identity'")
        return float(m["scaled_identity"]) * np.eye(dim)
    try:
        a = np.array(m, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric matrix") from exc
    if a.ndim == 1 and a.size == dim * dim:
        a = a.reshape(dim, dim)
    if a.shape != (dim, dim):
        raise ConfigError(f"{where}: expected a {dim}x{dim} matrix, got shape {a.shape}")
    return a


def _as_int(v, where, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where} must be an integer")
    if lo is not None and v < lo:
        raise ConfigError(f"{where} must be >= {lo}")
    return v


def _as_float(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(v)


def build_measure(desc: dict, dim: Optional[int] = None):
    """Build an intrinsic measure from a ``{type: ..., ...}`` description."""
    _check_keys(desc, ("type",) + tuple(k for ks in MEASURE_KEYS.values() for k in ks), "measure")
    kind = desc.get("type")
    if kind not in MEASURE_KEYS:
        raise ConfigError(f"measure.type must be one of {', '.join(MEASURE_KEYS)}, got {kind!r}")
    _check_keys(desc, ("type",) + MEASURE_KEYS[kind], f"measure ({kind})")
    try:
        if kind == "discrete":
            pts = np.array(desc["points"], dtype=np.float64)
            if pts.ndim == 1:
                pts = pts.reshape(-1, 1)
            d = pts.shape[1] if dim is None else dim
            if pts.shape[1] != d:
                raise ConfigError(f"measure.points have dimension {pts.shape[1]}, expected {d}")
            return DiscretePoints(pts, desc.get("log_weights"))
        if kind == "gaussian":
            d = len(desc["mean"]) if dim is None else dim
            return GaussianMeasure(parse_vector(desc["mean"], d, "measure.mean"),
                                   parse_matrix(desc["cov"], d, "measure.cov"))
        means = np.array(desc["means"], dtype=np.float64)
        if means.ndim == 1:
            means = means.reshape(-1, 1)
        d = means.shape[1] if dim is None else dim
        if means.shape[1] != d:
            raise ConfigError(f"measure.means have dimension {means.shape[1]}, expected {d}")
        if kind == "shared_cov_mixture":
            return SharedCovMixture(desc["weights"], means, parse_matrix(desc["cov"], d, "measure.cov"))
        covs = [parse_matrix(c, d, f"measure.covs[{i}]") for i, c in enumerate(desc["covs"])]
        return GeneralMixture(desc["weights"], means, np.array(covs))
    except KeyError as exc:
        raise ConfigError(f"measure ({kind}) is missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid measure: {exc}") from exc


@dataclass
class ExperimentConfig:
    dim: int
    n_points: int
    seed: int
    policy: str
    steps: int
    initial_distribution: dict
    measure: Optional[dict] = None
    attention: Optional[dict] = None
    renorm: Optional[dict] = None
    band: Optional[dict] = None

    def __post_init__(self):
        if self.attention is None:
            self.attention = dict(ATTENTION_DEFAULTS)
        else:
            self.attention = {**ATTENTION_DEFAULTS, **self.attention}
        if self.renorm is not None and "ridge" not in self.renorm:
            self.renorm = {**self.renorm, "ridge": 1e-8}
        self.validate()

    # -- construction

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(d, TOP_KEYS, "config")
        missing = [k for k in REQUIRED if k not in d]
        if missing:
            raise ConfigError(f"missing required field(s): {', '.join(missing)}")
        return cls(**copy.deepcopy(d))

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_yaml(f.read())

    def to_dict(self) -> dict:
        out = {k: copy.deepcopy(getattr(self, k)) for k in TOP_KEYS}
        return {k: v for k, v in out.items() if v is not None or k in REQUIRED}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    # -- validation / materialization

    def validate(self) -> None:
        _as_int(self.dim, "dim", 1)
        _as_int(self.n_points, "n_points", 1)
        _as_int(self.seed, "seed", 0)
        if self.seed >= 2**64:
            raise ConfigError("seed must fit in 64 bits")
        _as_int(self.steps, "steps", 1)
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {', '.join(POLICIES)}, got {self.policy!r}")
        if self.policy in ("fixed", "pointwise") and self.measure is None:
            raise ConfigError(f"policy {self.policy!r} needs a measure")
        if self.policy == "pointwise" and self.measure.get("type") != "gaussian":
            raise ConfigError("policy 'pointwise' needs a gaussian measure (its cov is the map)")
        _check_keys(self.attention, tuple(ATTENTION_DEFAULTS), "attention")
        _check_keys(self.initial_distribution, ("gaussian",), "initial_distribution")
        if "gaussian" not in self.initial_distribution:
            raise ConfigError("initial_distribution needs a 'gaussian' entry")
        _check_keys(self.initial_distribution["gaussian"], ("mean", "cov"), "initial_distribution.gaussian")
        if self.renorm is not None:
            _check_keys(self.renorm, RENORM_KEYS, "renorm")
        if self.band is not None:
            _check_keys(self.band, BAND_KEYS, "band")
            for k in BAND_KEYS:
                if k not in self.band:
                    raise ConfigError(f"band is missing {k!r}")
                _as_float(self.band[k], f"band.{k}")
        # materializing catches dimension and PSD errors early
        try:
            self.build_measure()
            self.build_attention()
            self.build_renorm()
            self.initial_moments()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def build_measure(self):
        return None if self.measure is None else build_measure(self.measure, self.dim)

    def build_policy(self):
        if self.policy == "self":
            return SelfPatterns()
        h = self.build_measure()
        if self.policy == "fixed":
            return FixedMeasure(h)
        return PointwiseMap(h.cov)

    def build_attention(self) -> AttentionConfig:
        a = self.attention
        if not isinstance(a["residual"], bool):
            raise ConfigError("attention.residual must be true or false")
        bil = None if a["bilinear"] == "identity" else parse_matrix(a["bilinear"], self.dim, "attention.bilinear")
        return AttentionConfig(step_size=_as_float(a["step_size"], "attention.step_size"),
                               scale=_as_float(a["scale"], "attention.scale"),
                               bilinear=bil, residual=a["residual"])

    def build_renorm(self) -> Optional[RenormSpec]:
        if self.renorm is None:
            return None
        r = self.renorm
        for k in ("target_mean", "target_cov"):
            if k not in r:
                raise ConfigError(f"renorm is missing {k!r}")
        return RenormSpec(parse_vector(r["target_mean"], self.dim, "renorm.target_mean"),
                          parse_matrix(r["target_cov"], self.dim, "renorm.target_cov"),
                          ridge=_as_float(r["ridge"], "renorm.ridge"))

    def build_band(self) -> Optional[Band]:
        if self.band is None:
            return None
        return Band(float(self.band["mean_dist"]), float(self.band["cov_dist"]),
                    float(self.band["skewness"]), n_seeds=0)

    def initial_moments(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.initial_distribution["gaussian"]
        cov = parse_matrix(g.get("cov", "identity"), self.dim, "initial_distribution.gaussian.cov")
        try:
            cov = as_psd(cov, self.dim)
        except ContractError as exc:
            raise ConfigError(f"initial_distribution.gaussian.cov: {exc}") from exc
        return parse_vector(g.get("mean", "zeros"), self.dim, "initial_distribution.gaussian.mean"), cov

