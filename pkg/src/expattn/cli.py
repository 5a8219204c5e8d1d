"""Command-line harness.

Exit codes: 0 pass, 1 quantitative failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np
import yaml

from . import expfam, kernels, oracle
from .config import ConfigError, ExperimentConfig, build_measure
from .dynamics import (
    CSV_FIELDS,
    SimulationError,
    empirical_equilibrium,
    equilibrium_affine_check,
    sample_gaussian,
    simulate,
)
from .measures import (
    ContractError,
    DiscretePoints,
    GaussianMeasure,
    GeneralMixture,
    SharedCovMixture,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
EXACT_TOL = 1e-10
VARIANTS = ("discrete", "gaussian", "shared_cov_mixture", "general_mixture")

log = logging.getLogger("expattn")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, np.ndarray):
        return "[" + ", ".join(fmt(v) for v in x.reshape(-1)) + "]"
    return str(x)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(buf.getvalue())


def write_summary(path, items) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, v in items:
            f.write(f"{k}: {fmt(v)}\n")


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------- gradcheck

def random_measure(variant: str, dim: int, rng: np.random.Generator):
    """Random instance with coordinates in [-2, 2] and N <= 16."""
    n = int(rng.integers(1, 17))
    if variant == "discrete":
        return DiscretePoints(rng.uniform(-2, 2, (n, dim)), rng.uniform(-2, 2, n))

    def cov():
        a = rng.uniform(-1, 1, (dim, dim))
        return a @ a.T / dim

    if variant == "gaussian":
        return GaussianMeasure(rng.uniform(-2, 2, dim), cov())
    weights = rng.uniform(0.1, 1.0, n)
    means = rng.uniform(-2, 2, (n, dim))
    if variant == "shared_cov_mixture":
        return SharedCovMixture(weights, means, cov())
    return GeneralMixture(weights, means, np.stack([cov() for _ in range(n)]))


def rel_err(a, b) -> float:
    """Max-norm error relative to max(1, ||b||_inf)."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def gradcheck_rows(dims, trials: int, seed: int, tol: float):
    """One row per comparison: (variant, check, D, N, max_rel_err, pass)."""
    rng = np.random.Generator(np.random.Philox(seed))
    fd = oracle.FiniteDiffSpec(1e-5)
    rows = []
    for variant in VARIANTS:
        for t in range(trials):
            d = int(dims[t % len(dims)])
            h = random_measure(variant, d, rng)
            eta = rng.uniform(-2, 2, d)
            n = getattr(h, "n", 1)
            g_err = rel_err(expfam.grad_log_partition(h, eta),
                            oracle.fd_gradient(lambda e: expfam.log_partition(h, e), eta, fd))
            h_err = rel_err(expfam.hessian_log_partition(h, eta),
                            oracle.fd_jacobian(lambda e: expfam.grad_log_partition(h, e), eta, fd))
            rows.append((variant, "gradient", d, n, g_err, g_err <= tol))
            rows.append((variant, "hessian", d, n, h_err, h_err <= tol))
    return rows


def cmd_gradcheck(args) -> int:
    if args.seed is None:
        raise ConfigError("--seed is mandatory")
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    tol = 1e-6 if args.tol is None else args.tol
    dims = [int(v) for v in args.dims.split(",")]
    if any(d < 1 for d in dims):
        raise ConfigError("--dims must be positive integers")
    try:
        rows = gradcheck_rows(dims, args.trials, args.seed, tol)
    except oracle.OracleDomainError as exc:
        print(f"oracle domain error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = _out_dir(args)
    write_csv(os.path.join(out, "gradcheck.csv"),
              ("variant", "check", "D", "N", "max_rel_err", "pass"), rows)
    n_fail = sum(1 for r in rows if not r[5])
    worst = max(r[4] for r in rows)
    verdict = "pass" if n_fail == 0 else "fail"
    write_summary(os.path.join(out, "summary.txt"), [
        ("command", "gradcheck"), ("seed", args.seed), ("tol", tol),
        ("comparisons", len(rows)), ("failures", n_fail), ("max_rel_err", worst),
        ("verdict", verdict)])
    print(f"gradcheck: {len(rows)} comparisons, {n_fail} failures, max_rel_err {worst:.3e} -> {verdict}")
    return EXIT_PASS if n_fail == 0 else EXIT_FAIL


# ---------------------------------------------------------------- simulations

def _initial_ensemble(cfg: ExperimentConfig) -> np.ndarray:
    mean, cov = cfg.initial_moments()
    return sample_gaussian(mean, cov, cfg.n_points, cfg.seed)


def cmd_equilibrium(args) -> int:
    cfg = _load_config(args)
    if cfg.policy != "pointwise":
        raise ConfigError("equilibrium needs policy: pointwise")
    h = cfg.build_measure()
    mu, sigma = h.mean, h.cov
    exact = equilibrium_affine_check(mu, sigma, tol=EXACT_TOL)
    tol = EXACT_TOL if args.tol is None else args.tol
    rep = empirical_equilibrium(mu, sigma, cfg.n_points, cfg.steps, cfg.seed,
                                cfg=cfg.build_attention(), spec=cfg.build_renorm(),
                                band=cfg.build_band(), initial=_initial_ensemble(cfg))
    out = _out_dir(args)
    write_csv(os.path.join(out, "trajectory.csv"), CSV_FIELDS, [r.as_row() for r in rep.records])
    exact_ok = exact.max_error <= tol
    ok = exact_ok and rep.verdict in ("pass", "inconclusive")
    items = [
        ("command", "equilibrium"), ("seed", cfg.seed), ("n_points", cfg.n_points),
        ("steps", cfg.steps), ("kernel_backend", kernels.BACKEND),
        ("exact_mean_error", exact.mean_error), ("exact_cov_error", exact.cov_error),
        ("exact_verdict", "pass" if exact_ok else "fail"),
        ("max_mean_drift", rep.max_mean_drift), ("max_cov_drift", rep.max_cov_drift),
        ("max_skewness", rep.max_skewness),
        ("band_mean_dist", rep.band.mean_dist), ("band_cov_dist", rep.band.cov_dist),
        ("band_skewness", rep.band.skewness), ("band_seeds", rep.band.n_seeds),
        ("skew_trend_tau", rep.skew_trend_tau), ("skew_trend_pvalue", rep.skew_trend_pvalue),
        ("expansion_holds", rep.expansion_holds),
        ("ridge_steps", len(rep.ridge_steps)),
        ("drift_direction", rep.drift_direction),
        ("empirical_verdict", rep.verdict),
        ("verdict", "pass" if ok else "fail"),
    ]
    write_summary(os.path.join(out, "summary.txt"), items)
    print(f"equilibrium: exact {exact.max_error:.3e} ({'pass' if exact_ok else 'fail'}), "
          f"empirical {rep.verdict}; drift mean {rep.max_mean_drift:.3e} cov {rep.max_cov_drift:.3e}")
    if not ok:
        print(f"drift direction: {rep.drift_direction}")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_dynamics(args) -> int:
    cfg = _load_config(args)
    info: dict = {}
    records = simulate(_initial_ensemble(cfg), cfg.build_policy(), cfg.build_attention(),
                       cfg.build_renorm(), cfg.steps, info=info)
    out = _out_dir(args)
    write_csv(os.path.join(out, "trajectory.csv"), CSV_FIELDS, [r.as_row() for r in records])
    write_summary(os.path.join(out, "summary.txt"), [
        ("command", "dynamics"), ("seed", cfg.seed), ("policy", cfg.policy),
        ("steps", cfg.steps), ("rows", len(records)), ("ridge_steps", len(info["ridge_steps"]))])
    print(f"dynamics: {len(records)} records written")
    return EXIT_PASS


# ---------------------------------------------------------------- conjugate

@dataclass
class ConjugateReport:
    value: float
    argmax: np.ndarray
    residual: float
    iterations: int
    grid_value: float | None = None
    grid_argmax: np.ndarray | None = None

    @property
    def grid_delta(self):
        return None if self.grid_value is None else abs(self.value - self.grid_value)


def grid_crosscheck(h, eta_star, center):
    d = h.dim
    res = 1e-4 if d == 1 else 1e-2
    box = [(c - 2.0, c + 2.0) for c in center]
    return oracle.grid_sup(lambda e: e @ eta_star - expfam.log_partition_batch(h, e),
                           box, res, vectorized=True)


def run_conjugate(h, eta_star, tol: float) -> ConjugateReport:
    r = expfam.fenchel_conjugate(h, eta_star, solver_tol=tol)
    rep = ConjugateReport(r.value, r.argmax, r.residual, r.iterations)
    if h.dim <= 2:
        rep.grid_argmax, rep.grid_value = grid_crosscheck(h, np.asarray(eta_star, float), r.argmax)
    return rep


def cmd_conjugate(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            doc = yaml.safe_load(f)
        if not isinstance(doc, dict):
            raise ConfigError("conjugate config must be a mapping")
        unknown = sorted(set(doc) - {"measure", "eta_star", "tol"})
        if unknown:
            raise ConfigError(f"unknown key(s) in conjugate config: {', '.join(unknown)}")
        desc, eta_star, tol = doc.get("measure"), doc.get("eta_star"), doc.get("tol")
    else:
        desc = yaml.safe_load(args.measure) if args.measure else None
        eta_star = yaml.safe_load(args.eta_star) if args.eta_star is not None else None
        tol = None
    if desc is None or eta_star is None:
        raise ConfigError("conjugate needs a measure and eta_star")
    if args.tol is not None:
        tol = args.tol
    tol = 1e-9 if tol is None else float(tol)
    h = build_measure(desc)
    try:
        eta_star = np.atleast_1d(np.array(eta_star, dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eta_star: {exc}") from exc
    if eta_star.shape != (h.dim,):
        raise ConfigError(f"eta_star has shape {eta_star.shape}, measure dimension is {h.dim}")
    try:
        rep = run_conjugate(h, eta_star, tol)
    except expfam.ConjugateError as exc:
        print(f"conjugate: no convergence: {exc}")
        print(f"residual: {fmt(exc.residual)}")
        return EXIT_FAIL
    items = [("value", rep.value), ("argmax", rep.argmax), ("residual", rep.residual),
             ("iterations", rep.iterations)]
    if rep.grid_value is not None:
        items += [("grid_value", rep.grid_value), ("grid_argmax", rep.grid_argmax),
                  ("grid_delta", rep.grid_delta)]
    for k, v in items:
        print(f"{k}: {fmt(v)}")
    if args.out:
        write_summary(os.path.join(_out_dir(args), "summary.txt"), [("command", "conjugate")] + items)
    return EXIT_PASS


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tol", type=float, help="tolerance")
    common.add_argument("--config", help="YAML config path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="expattn", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gradcheck", parents=[common], help="closed forms vs finite differences")
    g.add_argument("--dims", default="1,2,4,8", help="comma-separated dimensions")
    g.add_argument("--trials", type=int, default=100, help="instances per measure variant")
    g.set_defaults(func=cmd_gradcheck)
    e = sub.add_parser("equilibrium", parents=[common], help="exact and empirical RN o A fixed-point check")
    e.set_defaults(func=cmd_equilibrium)
    d = sub.add_parser("dynamics", parents=[common], help="trajectory of ensemble statistics")
    d.set_defaults(func=cmd_dynamics)
    c = sub.add_parser("conjugate", parents=[common], help="Fenchel conjugate of the log normalizer")
    c.add_argument("--measure", help="inline YAML measure description")
    c.add_argument("--eta-star", help="inline YAML list for the dual point")
    c.set_defaults(func=cmd_conjugate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc.__cause__, (ContractError, ValueError)) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
