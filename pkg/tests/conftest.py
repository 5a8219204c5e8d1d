import numpy as np
import pytest

from expattn import _kernels_py, kernels
from expattn.measures import DiscretePoints, GaussianMeasure, GeneralMixture, SharedCovMixture

try:
    from expattn import _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None

BACKENDS = {"python": _kernels_py, "cython": _kernels_cy}
VARIANTS = ("discrete", "gaussian", "shared_cov_mixture", "general_mixture")


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    impl = BACKENDS[request.param]
    if impl is None:
        pytest.skip("compiled kernels not built")
    monkeypatch.setattr(kernels, "_impl", impl)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_cov(rng, d, scale=1.0):
    a = rng.uniform(-1, 1, (d, d))
    return scale * a @ a.T / d


def random_pd(rng, d, cond):
    """Random SPD matrix with eigenvalues log-spaced over a condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lo = -0.5 * np.log10(cond)
    w = 10.0 ** rng.uniform(lo, -lo, d)
    w[0], w[-1] = 10.0 ** lo, 10.0 ** -lo
    m = (q * w) @ q.T
    return 0.5 * (m + m.T)


def random_measure(rng, variant, d, n=None, normalized=False):
    """Random instance with coordinates in [-2, 2]."""
    n = int(rng.integers(1, 17)) if n is None else n
    if variant == "discrete":
        return DiscretePoints(rng.uniform(-2, 2, (n, d)), rng.uniform(-2, 2, n))
    if variant == "gaussian":
        return GaussianMeasure(rng.uniform(-2, 2, d), random_cov(rng, d))
    w = rng.uniform(0.1, 1.0, n)
    if normalized:
        w = w / w.sum()
    means = rng.uniform(-2, 2, (n, d))
    if variant == "shared_cov_mixture":
        return SharedCovMixture(w, means, random_cov(rng, d))
    return GeneralMixture(w, means, np.stack([random_cov(rng, d) for _ in range(n)]))
