"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -m acceptance -s`` or ``pytest tests/test_acceptance.py -v``.
"""

import contextlib
import time

import numpy as np
import pytest

from expattn import expfam, oracle
from expattn.attention import AttentionConfig, attention_update, softmax_attention_layer
from expattn.cli import main as cli_main
from expattn.dynamics import empirical_equilibrium, equilibrium_affine_check
from expattn.measures import DiscretePoints, GaussianMeasure

from conftest import VARIANTS, random_cov, random_measure, random_pd

pytestmark = pytest.mark.acceptance

FD = oracle.FiniteDiffSpec(1e-5)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


@pytest.fixture
def criterion(capsys):
    """Context manager that times a block and prints its verdict line."""

    @contextlib.contextmanager
    def run(number, title, budget, already_spent=0.0):
        detail = {}
        t0 = time.perf_counter() - already_spent
        ok = False
        try:
            yield detail
            ok = True
        finally:
            dt = time.perf_counter() - t0
            within = dt < budget
            verdict = "PASS" if ok and within else "FAIL"
            extra = "".join(f" {k}={v:.3g}" if isinstance(v, float) else f" {k}={v}" for k, v in detail.items())
            with capsys.disabled():
                print(f"\n[criterion {number:2d}] {verdict} {title} ({dt:.2f}s, budget {budget:g}s){extra}")
        assert within, f"criterion {number} took {dt:.1f}s > {budget}s"

    return run


def test_c01_gradient_identity_suite(criterion):
    rng = np.random.Generator(np.random.Philox(101))
    with criterion(1, "gradient identity suite, 4 variants x 100", 10) as d:
        worst = {}
        for variant in VARIANTS:
            errs = []
            for t in range(100):
                dim = int(rng.integers(1, 9))
                h = random_measure(rng, variant, dim)
                eta = rng.uniform(-2, 2, dim)
                fd = oracle.fd_gradient(lambda e: expfam.log_partition(h, e), eta, FD)
                errs.append(rel_err(expfam.grad_log_partition(h, eta), fd))
            worst[variant] = max(errs)
        d["max_rel_err"] = max(worst.values())
        assert d["max_rel_err"] <= 1e-6, worst


def test_c02_attention_equivalence(criterion, backend):
    rng = np.random.Generator(np.random.Philox(202))
    with criterion(2, f"attention equivalence, 100 instances [{backend}]", 5) as d:
        worst = 0.0
        for _ in range(100):
            n, dim = int(rng.integers(1, 65)), int(rng.integers(1, 17))
            keys = rng.uniform(-2, 2, (n, dim))
            queries = rng.uniform(-2, 2, (int(rng.integers(1, 65)), dim))
            cfg = AttentionConfig(step_size=float(rng.uniform(0.1, 2.0)), scale=1.0 / np.sqrt(dim))
            ours = attention_update(queries, DiscretePoints(keys), cfg)
            ref = softmax_attention_layer(queries, keys, cfg)
            worst = max(worst, float(np.max(np.abs(ours - ref))))
        d["max_abs_err"] = worst
        assert worst <= 1e-12


def test_c03_jensen_bound(criterion):
    rng = np.random.Generator(np.random.Philox(303))
    with criterion(3, "Jensen lower bound, 1000 normalized mixtures", 10) as d:
        min_slack, zero_err, grad_err = np.inf, 0.0, 0.0
        for _ in range(1000):
            dim = int(rng.integers(1, 9))
            h = random_measure(rng, "general_mixture", dim, normalized=True)
            eta = rng.uniform(-2, 2, dim)
            min_slack = min(min_slack, expfam.log_partition(h, eta) - expfam.lower_bound_log_partition(h, eta))
            zero = np.zeros(dim)
            zero_err = max(zero_err, abs(expfam.lower_bound_log_partition(h, zero)),
                           abs(expfam.log_partition(h, zero)))
            fd = oracle.fd_gradient(lambda e: expfam.lower_bound_log_partition(h, e), eta, FD)
            grad_err = max(grad_err, rel_err(expfam.grad_lower_bound(h, eta), fd))
        d.update(min_slack=min_slack, zero_err=zero_err, grad_rel_err=grad_err)
        assert min_slack >= -1e-12
        assert zero_err <= 1e-12
        assert grad_err <= 1e-6


def test_c04_equilibrium_exact(criterion):
    rng = np.random.Generator(np.random.Philox(404))
    with criterion(4, "equilibrium affine check, 100 (mu, Sigma), cond <= 1e4", 5) as d:
        cases = [(np.zeros(4), np.eye(4))]
        for _ in range(99):
            dim = int(rng.integers(1, 9))
            cases.append((rng.uniform(-2, 2, dim), random_pd(rng, dim, float(rng.uniform(1, 1e4)))))
        worst = 0.0
        for mu, sigma in cases:
            assert np.linalg.cond(sigma) <= 1e4 * (1 + 1e-9)
            r = equilibrium_affine_check(mu, sigma, tol=1e-10)
            worst = max(worst, r.max_error)
            assert r.passed, (mu, sigma, r.max_error)
        d["max_err"] = worst


@pytest.fixture(scope="module")
def equilibrium_run():
    t0 = time.perf_counter()
    rep = empirical_equilibrium(np.zeros(4), np.eye(4), n=4096, steps=50, seed=7)
    return rep, time.perf_counter() - t0


def test_c05_equilibrium_empirical(criterion, equilibrium_run):
    rep, elapsed = equilibrium_run
    with criterion(5, "empirical RN o A, N=4096 D=4 50 steps", 60, elapsed) as d:
        d.update(mean_drift=rep.max_mean_drift, band_mean=rep.band.mean_dist,
                 cov_drift=rep.max_cov_drift, band_cov=rep.band.cov_dist,
                 kendall_p=rep.skew_trend_pvalue)
        assert rep.band.n_seeds == 30
        assert rep.max_mean_drift <= rep.band.mean_dist
        assert rep.max_cov_drift <= rep.band.cov_dist
        assert rep.max_skewness <= rep.band.skewness
        assert rep.skew_trend_pvalue > 0.01
        assert rep.verdict == "pass"


def _fy_instance(rng, kind, dim):
    if kind == "discrete":
        n = int(rng.integers(dim + 2, dim + 10))
        return DiscretePoints(rng.uniform(-2, 2, (n, dim)), rng.uniform(-1, 1, n))
    return GaussianMeasure(rng.uniform(-2, 2, dim), random_pd(rng, dim, 100.0))


def test_c06_fenchel_young(criterion):
    rng = np.random.Generator(np.random.Philox(606))
    with criterion(6, "Fenchel-Young, 50 discrete + 50 Gaussian, grid cross-check", 30) as d:
        worst_gap, worst_grid = 0.0, 0.0
        for kind in ("discrete", "gaussian"):
            for t in range(50):
                dim = (1, 2, 3, 4)[t % 4]
                h = _fy_instance(rng, kind, dim)
                eta = rng.uniform(-1, 1, dim)
                eta_star = expfam.grad_log_partition(h, eta)
                conj = expfam.fenchel_conjugate(h, eta_star, solver_tol=1e-9)
                gap = expfam.log_partition(h, eta) + conj.value - eta @ eta_star
                worst_gap = max(worst_gap, abs(gap))
                assert abs(gap) <= 1e-6, (kind, dim, gap)
                if dim <= 2:
                    res = 1e-3 if dim == 1 else 2e-2
                    # integer-anchored box: the grid does not contain the solver's argmax
                    box = [(np.floor(c) - 1.0, np.floor(c) + 2.0) for c in conj.argmax]
                    garg, gval = oracle.grid_sup(lambda e: e @ eta_star - expfam.log_partition_batch(h, e),
                                              box, res, vectorized=True)
                    delta = conj.value - gval
                    worst_grid = max(worst_grid, abs(delta))
                    # the grid can only under-estimate the sup, by at most O(res^2 * curvature)
                    assert -1e-9 <= delta <= res, (kind, dim, delta)
                    hess_min = np.linalg.eigvalsh(expfam.hessian_log_partition(h, conj.argmax))[0]
                    assert np.linalg.norm(garg - conj.argmax) <= res * np.sqrt(dim) / min(1.0, hess_min) ** 0.5
        d.update(max_fy_gap=worst_gap, max_grid_delta=worst_grid)


def test_c07_hessian_fisher(criterion):
    rng = np.random.Generator(np.random.Philox(707))
    with criterion(7, "Hessian PSD and finite-difference match", 10) as d:
        worst, min_eig = 0.0, np.inf
        for variant in VARIANTS:
            for t in range(25):
                dim = int(rng.integers(1, 7))
                h = random_measure(rng, variant, dim)
                eta = rng.uniform(-2, 2, dim)
                hess = expfam.hessian_log_partition(h, eta)
                assert np.array_equal(hess, hess.T)
                min_eig = min(min_eig, float(np.linalg.eigvalsh(hess)[0]))
                fd = oracle.fd_hessian(lambda e: expfam.log_partition(h, e), eta, oracle.FiniteDiffSpec(1e-4))
                worst = max(worst, float(np.max(np.abs(hess - fd))))
                if variant == "gaussian":
                    assert np.array_equal(hess, h.cov)
        d.update(max_abs_err=worst, min_eig=min_eig)
        assert worst <= 1e-4
        assert min_eig >= -1e-12


def test_c08_expansion(criterion, equilibrium_run):
    rng = np.random.Generator(np.random.Philox(808))
    with criterion(8, "norm expansion on 1e4 (Sigma, eta), trace expansion per step", 5) as d:
        worst = np.inf
        for _ in range(10_000):
            dim = int(rng.integers(1, 9))
            h = GaussianMeasure(np.zeros(dim), random_cov(rng, dim, float(rng.uniform(0.01, 5.0))))
            eta = rng.uniform(-3, 3, (1, dim))
            out = attention_update(eta, h)
            worst = min(worst, float(np.linalg.norm(out) - np.linalg.norm(eta)))
        rep, _ = equilibrium_run
        d.update(min_norm_gain=worst, trace_expansion=rep.expansion_holds)
        assert worst >= 0.0
        assert rep.expansion_holds


def test_c09_monte_carlo_concordance(criterion):
    rng = np.random.Generator(np.random.Philox(909))
    with criterion(9, "Monte Carlo concordance, 20 instances at 1e6 samples", 60) as d:
        worst_z = 0.0
        kinds = ("gaussian", "shared_cov_mixture", "general_mixture")
        for t in range(20):
            dim = int(rng.integers(1, 5))
            h = random_measure(rng, kinds[t % 3], dim, n=int(rng.integers(1, 6)))
            # keep eta' Sigma eta moderate so the lognormal weights have finite-sample-friendly tails
            eta = rng.normal(size=dim)
            eta *= 0.6 / max(np.linalg.norm(eta), 1e-12)
            est, se = oracle.mc_log_partition(h, eta, oracle.McSpec(10**6, 1000 + t))
            z = abs(expfam.log_partition(h, eta) - est) / se
            worst_z = max(worst_z, z)
            assert z <= 4.0, (t, z)
        d["max_z"] = worst_z


def test_c10_cli_determinism(criterion, tmp_path):
    import pathlib

    configs = pathlib.Path(__file__).resolve().parents[1] / "configs"
    commands = [
        ("gradcheck", ["gradcheck", "--seed", "11"], "gradcheck.csv"),
        ("equilibrium", ["equilibrium", "--config", str(configs / "equilibrium.yaml")], "trajectory.csv"),
        ("dynamics-self", ["dynamics", "--config", str(configs / "self_patterns.yaml")], "trajectory.csv"),
        ("dynamics-fixed", ["dynamics", "--config", str(configs / "fixed_single_key.yaml")], "trajectory.csv"),
        ("conjugate", ["conjugate", "--config", str(configs / "conjugate_two_points.yaml")], "summary.txt"),
    ]
    with criterion(10, "CLI determinism, byte-identical outputs", 120) as d:
        for name, argv, artifact in commands:
            blobs = []
            for rep in range(2):
                out = tmp_path / f"{name}-{rep}"
                assert cli_main(argv + ["--out", str(out)]) == 0
                blobs.append((out / artifact).read_bytes())
            assert blobs[0] == blobs[1], name
            assert blobs[0]
        d["commands"] = len(commands)
