"""Monte Carlo performance harness.

Replications draw samples from a known density, run each estimator on a
shared grid and accumulate pointwise bias, variance and integrated squared
error. Each replication gets its own seed spawned from the run seed, so
results do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    MixtureDensity,
    NormalDensity,
    concentrated_lattice,
    normal_family,
    parametric_posterior,
)
from .dirichlet import DirichletPrior, dp_estimate, semiparam_estimate, semiparam_posterior
from .errors import BayesDensError, DomainError
from .kernels import GAUSSIAN, kde
from .local import predictive_correction_estimate

# lattice points per axis; spacing 0.4 posterior sd
SIM_LATTICE = 41

TRUTHS = {
    "normal": NormalDensity(0.0, 1.0),
    "skewed-mixture": MixtureDensity([0.75, 0.25], [NormalDensity(0.0, 1.0),
                                                    NormalDensity(1.5, 0.5)]),
}


def default_bandwidth(n: int) -> float:
    return n ** -0.2


def _est_kde(x, grid, h, truth, params):
    return kde(x, GAUSSIAN, h, grid)


def _est_dp(x, grid, h, truth, params):
    prior = DirichletPrior(params.get("a", 5.0), NormalDensity(0.0, 1.0))
    return dp_estimate(prior, x, GAUSSIAN, h, grid)


def _est_semiparam(x, grid, h, truth, params):
    fam = normal_family()
    post = semiparam_posterior(fam, x, lattice=concentrated_lattice(x, size=SIM_LATTICE))
    return semiparam_estimate(params.get("a", 5.0), fam, post, x, GAUSSIAN, h, grid)


def _est_correction(x, grid, h, truth, params):
    fam = normal_family()
    post = parametric_posterior(fam, x, lattice=concentrated_lattice(x, size=SIM_LATTICE))
    return predictive_correction_estimate(x, GAUSSIAN, h, grid, fam, post, c=params.get("c", 0.0))


def _est_oracle(x, grid, h, truth, params):
    return truth.pdf(grid)


ESTIMATORS = {
    "kde": _est_kde,
    "dp": _est_dp,
    "semiparam": _est_semiparam,
    "correction": _est_correction,
    "oracle": _est_oracle,
}


def _draw(truth, rng, n):
    if isinstance(truth, MixtureDensity):
        return truth.sample(rng, n)
    return truth.mu + truth.sigma * rng.standard_normal(n)


@dataclass
class EstimatorSummary:
    mise: float
    mise_se: float
    bias: np.ndarray
    variance: np.ndarray
    failed: int
    ise: np.ndarray = field(repr=False)


@dataclass
class SimReport:
    truth: str
    n: int
    replications: int
    seed: int
    bandwidth: float
    grid: np.ndarray
    results: dict

    def to_csv(self) -> str:
        """Long-format CSV: ``estimator,statistic,x,value``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "statistic", "x", "value"])
        for name, r in self.results.items():
            w.writerow([name, "mise", "", f"{r.mise:.9g}"])
            w.writerow([name, "mise_se", "", f"{r.mise_se:.9g}"])
            w.writerow([name, "failed", "", str(r.failed)])
            for x, b, v in zip(self.grid, r.bias, r.variance):
                w.writerow([name, "bias", f"{x:.9g}", f"{b:.9g}"])
                w.writerow([name, "variance", f"{x:.9g}", f"{v:.9g}"])
        return buf.getvalue()


def _one_replication(args):
    truth_id, estimators, n, grid, h, params, seq = args
    truth = TRUTHS[truth_id]
    rng = np.random.default_rng(seq)
    x = _draw(truth, rng, n)
    out = {}
    for name in estimators:
        try:
            out[name] = np.asarray(ESTIMATORS[name](x, grid, h, truth, params), dtype=float)
        except (BayesDensError, FloatingPointError, np.linalg.LinAlgError):
            out[name] = None
    return out


def simulate(truth: str = "normal", estimators=("kde",), n: int = 100, replications: int = 100,
             seed: int = 0, grid=None, h: float | None = None, params=None,
             workers: int = 1) -> SimReport:
    """Run ``replications`` seeded replications and summarise each estimator.

    Failing estimator calls are skipped and counted in ``failed``.
    """
    if truth not in TRUTHS:
        raise DomainError(f"unknown truth {truth!r}; choose from {tuple(TRUTHS)}")
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise DomainError(f"unknown estimators {unknown}; choose from {tuple(ESTIMATORS)}")
    if replications < 2:
        raise DomainError("need at least 2 replications")
    grid = np.linspace(-4.0, 5.0, 181) if grid is None else np.asarray(grid, dtype=float)
    h = default_bandwidth(n) if h is None else float(h)
    params = dict(params or {})
    seqs = np.random.SeedSequence(seed).spawn(replications)
    jobs = [(truth, tuple(estimators), n, grid, h, params, sq) for sq in seqs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_one_replication, jobs, chunksize=max(1, replications // (4 * workers))))
    else:
        reps = [_one_replication(j) for j in jobs]

    f = TRUTHS[truth].pdf(grid)
    results = {}
    for name in estimators:
        curves = [r[name] for r in reps if r[name] is not None]
        failed = replications - len(curves)
        if len(curves) < 2:
            nanv = np.full(grid.size, math.nan)
            results[name] = EstimatorSummary(math.nan, math.nan, nanv, nanv, failed, np.empty(0))
            continue
        arr = np.stack(curves)
        ise = np.trapezoid((arr - f) ** 2, grid, axis=1)
        results[name] = EstimatorSummary(
            float(ise.mean()), float(ise.std(ddof=1) / math.sqrt(ise.size)),
            arr.mean(axis=0) - f, arr.var(axis=0, ddof=1), failed, ise)
    return SimReport(truth, n, replications, seed, h, grid, results)
