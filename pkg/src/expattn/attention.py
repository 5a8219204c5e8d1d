"""Attention as a pointwise gradient step on the log normalizer.

Each hidden state eta is treated as a natural parameter and moved along the
gradient of G at that point, ``eta' = eta + step * B' grad G(scale * B eta)``.
For a discrete measure over the keys the gradient is the softmax-weighted key
average, so with ``B = I`` this is exactly softmax attention with values tied
to keys plus the residual connection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .expfam import grad_log_partition_batch
from .measures import ContractError, DiscretePoints, as_ensemble, check_measure


@dataclass(frozen=True, eq=False)
class AttentionConfig:
    """Update settings.

    ``bilinear`` is the matrix B in the logits ``x' B eta`` (None = identity).
    ``residual=False`` drops the skip connection so the output is the pure
    attention average, which is used for the contraction experiment.
    """

    step_size: float = 1.0
    scale: float = 1.0
    bilinear: Optional[np.ndarray] = None
    residual: bool = True

    def __post_init__(self):
        if not np.isfinite(self.step_size):
            raise ContractError("step_size must be finite")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ContractError(f"scale must be positive, got {self.scale}")
        if self.bilinear is not None:
            b = np.array(self.bilinear, dtype=np.float64)
            if b.ndim != 2 or b.shape[0] != b.shape[1] or not np.all(np.isfinite(b)):
                raise ContractError("bilinear form must be a finite square matrix")
            object.__setattr__(self, "bilinear", b)

    def check_dim(self, dim: int) -> None:
        if self.bilinear is not None and self.bilinear.shape[0] != dim:
            raise ContractError(
                f"bilinear form is {self.bilinear.shape[0]}x{self.bilinear.shape[0]}, expected D={dim}")


def attention_update(ensemble, h, cfg: AttentionConfig = AttentionConfig()) -> np.ndarray:
    """Apply the attention operator to every member of an (N, D) ensemble.

    Members are updated independently against the fixed measure ``h``; the
    output keeps the input order.
    """
    check_measure(h)
    etas = as_ensemble(ensemble, h.dim)
    cfg.check_dim(h.dim)
    pts = etas if cfg.bilinear is None else etas @ cfg.bilinear.T
    grads = grad_log_partition_batch(h, cfg.scale * pts)
    if cfg.bilinear is not None:
        grads = grads @ cfg.bilinear
    step = cfg.step_size * grads
    return etas + step if cfg.residual else step


def softmax_attention_layer(queries, keys, cfg: AttentionConfig = AttentionConfig()) -> np.ndarray:
    """Conventional single-head attention with V = K and a residual connection.

    ``out_i = q_i + step * sum_j softmax_j(scale * k_j' B q_i) k_j``. Written
    directly in numpy, independent of the log-normalizer code path.
    """
    q = as_ensemble(queries)
    k = as_ensemble(keys, q.shape[1])
    cfg.check_dim(q.shape[1])
    bq = q if cfg.bilinear is None else q @ cfg.bilinear.T
    logits = cfg.scale * (bq @ k.T)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    out = cfg.step_size * (w @ k)
    return q + out if cfg.residual else out


def self_attention_update(ensemble, cfg: AttentionConfig = AttentionConfig()) -> np.ndarray:
    """Simultaneous update where the keys are the current (pre-update) states.

    Keys are reduced in lexicographic order, so permuting the ensemble
    permutes the output bit for bit.
    """
    etas = as_ensemble(ensemble)
    keys = etas[np.lexsort(etas.T[::-1])]
    return attention_update(etas, DiscretePoints(keys), cfg)
