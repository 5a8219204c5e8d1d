"""Pure numpy implementations of the hot kernels.

Same signatures and semantics as the compiled ``_kernels_cy`` module; used
when the extension is not built or ``EXPATTN_KERNELS=python`` is set.
"""

import numpy as np


def softmax_average(queries, keys, log_weights, scale):
    """Softmax-weighted key average for each query.

    Returns ``(avg, lse)`` where ``lse[i] = logsumexp_j(scale * k_j.q_i + lw_j)``
    and ``avg[i] = sum_j softmax_j * k_j``.
    """
    # einsum rather than BLAS gemm: each output element is reduced in a fixed
    # order that does not depend on the row's position in the batch
    logits = scale * np.einsum("id,jd->ij", queries, keys) + log_weights
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    avg = np.einsum("ij,jd->id", e, keys) / s
    lse = (m + np.log(s)).reshape(-1)
    return avg, lse


def max_pairwise_distance(points):
    """Largest Euclidean distance between any two rows."""
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    # exact recomputation for the winning pair avoids cancellation error
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    return float(np.linalg.norm(points[i] - points[j]))
