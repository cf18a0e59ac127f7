"""Additive Hermite expansions around the normal density.

Two variants share one model type:

* ``straight``: ``phi(u)/sigma * (1 + sum_{j>=3} gamma_j H_j(u)/j!)``
* ``robust``: ``phi(u)/sigma * sum_{j>=0} delta_j H_j(sqrt2 u)/sqrt(j!)``

with ``u = (x - mu)/sigma`` and probabilists' Hermite polynomials. The
Bayes estimator works with the robust variant: ``(mu, sigma)`` come from an
approximate binormal posterior and the coefficients from importance
sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import SQRT2PI, as_sample, ensure_positive
from .errors import DomainError, UnreliablePosteriorError

SQRT2 = math.sqrt(2.0)
VARIANTS = ("straight", "robust")


def hermite_poly(j: int, x):
    """``H_j(x)`` by ``H_{j+1} = x H_j - j H_{j-1}``."""
    if j < 0 or int(j) != j:
        raise DomainError("order j must be a nonnegative integer")
    return hermite_all(int(j), x)[-1]


def hermite_all(m: int, x) -> np.ndarray:
    """Stack ``H_0(x), ..., H_m(x)`` along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((m + 1,) + x.shape)
    out[0] = 1.0
    if m >= 1:
        out[1] = x
    for j in range(1, m):
        out[j + 1] = x * out[j] - j * out[j - 1]
    return out


def _sqrt_fact(m: int) -> np.ndarray:
    return np.exp(0.5 * gammaln(np.arange(m + 1) + 1.0))


def _robust_basis(m: int, u) -> np.ndarray:
    """``H_j(sqrt2 u)/sqrt(j!)`` for ``j = 0..m``."""
    hb = hermite_all(m, SQRT2 * np.asarray(u, dtype=float))
    return hb / _sqrt_fact(m).reshape((-1,) + (1,) * (hb.ndim - 1))


@dataclass(frozen=True)
class HermiteModel:
    """An expansion of order ``m``.

    ``coeffs`` has length ``m + 1`` and is indexed by ``j``. For the straight
    variant entries 0..2 are forced to ``1, 0, 0``.
    """

    variant: str
    mu: float
    sigma: float
    coeffs: tuple

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"variant must be one of {VARIANTS}")
        ensure_positive("sigma", self.sigma)
        c = np.asarray(self.coeffs, dtype=float).ravel()
        if c.size == 0:
            raise DomainError("need at least one coefficient")
        if self.variant == "straight":
            c = c.copy()
            c[:3] = (1.0, 0.0, 0.0)[:min(3, c.size)]
        object.__setattr__(self, "coeffs", tuple(float(v) for v in c))

    @property
    def m(self) -> int:
        return len(self.coeffs) - 1


def straight_coeffs(sample, mu: float, sigma: float, m: int) -> np.ndarray:
    """Coefficients ``gamma_0..gamma_m`` of the straight expansion.

    ``gamma_j`` is the sample mean of ``H_j((x_i - mu)/sigma)`` for ``j >= 3``;
    the first three are fixed at ``1, 0, 0`` by construction of the model.
    """
    s = as_sample(sample)
    ensure_positive("sigma", sigma)
    u = (s.values - mu) / sigma
    g = hermite_all(m, u).mean(axis=1)
    g[:min(3, m + 1)] = (1.0, 0.0, 0.0)[:min(3, m + 1)]
    return g


def robust_coeffs(sample, mu: float, sigma: float, m: int) -> np.ndarray:
    """``delta_j = sqrt2 * mean H_j(sqrt2 u_i) exp(-u_i^2/2) / sqrt(j!)``.

    The averaged function is bounded in ``u``, so the result is finite for
    any data.
    """
    s = as_sample(sample)
    ensure_positive("sigma", sigma)
    u = (s.values - mu) / sigma
    with np.errstate(over="ignore", invalid="ignore"):
        damp = np.exp(-0.5 * u * u)
        vals = _robust_basis(m, u) * damp
    # far outliers give inf * 0; the true limit is 0
    vals = np.where(damp == 0.0, 0.0, vals)
    return SQRT2 * vals.mean(axis=1)


def robust_bound(j: int, grid_halfwidth: float = 30.0, points: int = 200001) -> float:
    """``sqrt2 * max_u |H_j(sqrt2 u) exp(-u^2/2)| / sqrt(j!)`` on a dense grid."""
    u = np.linspace(-grid_halfwidth, grid_halfwidth, points)
    v = np.abs(hermite_poly(j, SQRT2 * u) * np.exp(-0.5 * u * u))
    return float(SQRT2 * v.max() / math.exp(0.5 * gammaln(j + 1.0)))


def eval_density(model: HermiteModel, x):
    """Evaluate the expansion; the result can be negative."""
    x = np.asarray(x, dtype=float)
    u = (x - model.mu) / model.sigma
    base = np.exp(-0.5 * u * u) / (SQRT2PI * model.sigma)
    c = np.asarray(model.coeffs)
    if model.variant == "straight":
        h = hermite_all(model.m, u)
        fact = np.exp(gammaln(np.arange(model.m + 1) + 1.0))
        series = np.tensordot(c / fact, h, axes=1)
    else:
        series = np.tensordot(c, _robust_basis(model.m, u), axes=1)
    out = base * series
    return float(out) if out.ndim == 0 else out


def robust_mass(coeffs) -> float:
    """``int f_m`` for the robust variant: ``sum_{j even} delta_j (j-1)!!/sqrt(j!)``.

    Uses ``E H_j(Z) = (j-1)!!`` for even ``j`` when ``Z ~ N(0, 2)``.
    """
    d = np.asarray(coeffs, dtype=float)
    return float(_mass_weights(d.size - 1) @ d)


# ---------------------------------------------------------------------------
# (mu, sigma) posterior draws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MuSigmaDraws:
    mu: np.ndarray
    sigma: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    regularized: bool


def musigma_moments(sample):
    """Sample mean, sd, skewness and excess kurtosis."""
    s = as_sample(sample)
    x = s.values
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    if not sd > 0:
        raise DomainError("sample has zero spread")
    z = (x - mean) / sd
    return mean, sd, float(np.mean(z ** 3)), float(np.mean(z ** 4) - 3.0)


def musigma_posterior_draws(sample, count: int, seed=None, rng=None) -> MuSigmaDraws:
    """Draw ``(mu, sigma)`` from the skewness/kurtosis-corrected binormal.

    ``(mu/sd*, log sigma) ~ N((mean*/sd*, log sd*), C/n)`` with
    ``C = [[1, g3/2], [g3/2, 1/2 + g4/4]]``. A non positive definite ``C``
    (very negative kurtosis) is repaired by raising the lower-right entry and
    flagged in ``regularized``.
    """
    s = as_sample(sample)
    if s.n < 8:
        raise DomainError("need at least 8 observations")
    mean, sd, g3, g4 = musigma_moments(s)
    cov = np.array([[1.0, 0.5 * g3], [0.5 * g3, 0.5 + 0.25 * g4]]) / s.n
    regularized = False
    floor = 1e-3 / s.n
    if cov[1, 1] <= 0 or np.linalg.det(cov) <= 0:
        cov[1, 1] = cov[0, 1] ** 2 / cov[0, 0] + floor
        regularized = True
    centre = np.array([mean / sd, math.log(sd)])
    rng = rng if rng is not None else np.random.default_rng(seed)
    z = rng.multivariate_normal(centre, cov, size=int(count), method="cholesky")
    return MuSigmaDraws(z[:, 0] * sd, np.exp(z[:, 1]), centre, cov, regularized)


# ---------------------------------------------------------------------------
# Coefficient posterior by importance sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientPrior:
    """Independent normal priors on ``delta_0..delta_m``; sd 0 fixes a coefficient."""

    means: tuple
    sds: tuple

    def __post_init__(self):
        m = np.asarray(self.means, dtype=float).ravel()
        s = np.asarray(self.sds, dtype=float).ravel()
        if m.shape != s.shape or m.size == 0:
            raise DomainError("means and sds must have equal nonzero length")
        if np.any(s < 0) or np.any(~np.isfinite(s)):
            raise DomainError("prior sds must be finite and nonnegative")
        object.__setattr__(self, "means", tuple(m))
        object.__setattr__(self, "sds", tuple(s))

    @property
    def m(self) -> int:
        return len(self.means) - 1

    @classmethod
    def default(cls, m: int, sd0: float = 0.05, scale: float = 0.2) -> "CoefficientPrior":
        """``delta_0 ~ N(1, sd0^2)`` and ``delta_j ~ N(0, (scale/j)^2)``."""
        means = [1.0] + [0.0] * m
        sds = [sd0] + [scale / j for j in range(1, m + 1)]
        return cls(tuple(means), tuple(sds))


@dataclass(frozen=True)
class BayesHermiteResult:
    value: np.ndarray
    mc_se: np.ndarray
    min_ess: float
    mu: np.ndarray
    sigma: np.ndarray


_T_DF = 5.0


def _mass_weights(m: int) -> np.ndarray:
    """``c_j`` with ``int f_m = sum_j c_j delta_j`` (zero for odd ``j``)."""
    c = np.zeros(m + 1)
    for j in range(0, m + 1, 2):
        dfact = float(np.prod(np.arange(j - 1, 0, -2))) if j > 0 else 1.0
        c[j] = dfact / math.exp(0.5 * gammaln(j + 1.0))
    return c


def _unit_mass_chart(means, sds):
    """Affine chart ``delta = offset + A t`` of the unit-mass hyperplane.

    Coefficients with sd 0 stay at their means. Among the free ones, the
    one with the largest ``|c_j| sd_j`` is solved from ``sum c_j delta_j = 1``;
    pivoting on a tightly held coefficient would make the chart ill-conditioned.
    """
    k = means.size
    c = _mass_weights(k - 1)
    free = sds > 0
    fixed_mass = float(c[~free] @ means[~free])
    offset = np.where(free, 0.0, means)
    cf = np.where(free, c, 0.0)
    if not np.any(cf != 0):
        if abs(fixed_mass - 1.0) > 1e-12:
            raise DomainError("fixed coefficients do not give a unit-mass expansion")
        cols = np.flatnonzero(free)
        a = np.zeros((k, cols.size))
        a[cols, np.arange(cols.size)] = 1.0
        return offset, a, means[cols]
    pivot = int(np.argmax(np.abs(cf) * sds))
    cols = np.flatnonzero(free & (np.arange(k) != pivot))
    a = np.zeros((k, cols.size))
    a[cols, np.arange(cols.size)] = 1.0
    a[pivot] = -c[cols] / c[pivot]
    offset[pivot] = (1.0 - fixed_mass) / c[pivot]
    return offset, a, means[cols]


def _laplace_mode(basis, offset, a, means, prec, start, max_iter=100):
    """Newton ascent for ``sum log(B delta) - 0.5 sum prec (delta - means)^2`` in the chart."""
    ba = a.T @ basis
    b0 = offset @ basis

    def value(t):
        d = offset + a @ t
        lin = b0 + t @ ba
        if np.any(lin <= 0):
            return -np.inf, lin
        return float(np.log(lin).sum() - 0.5 * np.sum(prec * (d - means) ** 2)), lin

    t = start.copy()
    val, lin = value(t)
    if not np.isfinite(val):
        raise UnreliablePosteriorError("prior mean gives a non-positive density at the data")
    pa = a.T @ (prec[:, None] * a)
    for _ in range(max_iter):
        r = ba / lin
        grad = r.sum(axis=1) - a.T @ (prec * (offset + a @ t - means))
        try:
            step = np.linalg.solve(r @ r.T + pa, grad)
        except np.linalg.LinAlgError:
            raise UnreliablePosteriorError("coefficient posterior curvature is singular") from None
        if not np.all(np.isfinite(step)):
            raise UnreliablePosteriorError("coefficient posterior curvature is singular")
        s = 1.0
        for _ in range(60):
            nv, nl = value(t + s * step)
            if nv >= val:
                break
            s *= 0.5
        else:
            break
        t = t + s * step
        done = abs(nv - val) <= 1e-12 * max(1.0, abs(val))
        val, lin = nv, nl
        if done:
            break
    r = ba / lin
    return t, r @ r.T + pa


def coefficient_posterior_mean(sample, mu: float, sigma: float, prior: CoefficientPrior,
                               draws: int, rng: np.random.Generator, x=None):
    """Self-normalised importance-sampling posterior mean of ``delta``.

    The prior is restricted to coefficient vectors whose expansion has unit
    mass, so the likelihood ``prod f_m(x_i)`` is a proper density product.
    The proposal is a multivariate t centred at the posterior mode with the
    inverse observed information as scale. Draws giving a non-positive
    density at any data point get zero weight.

    Returns ``(delta_mean, ess, curve_se)``; ``curve_se`` is the Monte Carlo
    standard error of ``f_m(x)`` (``None`` when ``x`` is ``None``).
    """
    s = as_sample(sample)
    m = prior.m
    means = np.asarray(prior.means)
    sds = np.asarray(prior.sds)
    u = (s.values - mu) / sigma
    bd = _robust_basis(m, u)
    offset, a, start = _unit_mass_chart(means, sds)
    xb = None
    if x is not None:
        ux = (np.atleast_1d(np.asarray(x, dtype=float)) - mu) / sigma
        xb = _robust_basis(m, ux) * (np.exp(-0.5 * ux * ux) / (SQRT2PI * sigma))
    if a.shape[1] == 0:
        se = None if xb is None else np.zeros(xb.shape[1])
        return offset.copy(), math.inf, se
    prec = np.where(sds > 0, 1.0 / np.where(sds > 0, sds, 1.0) ** 2, 0.0)
    mode, info = _laplace_mode(bd, offset, a, means, prec, start)
    k = mode.size
    chol = np.linalg.cholesky(np.linalg.inv(info))
    z = rng.standard_normal((draws, k))
    w = rng.chisquare(_T_DF, size=draws) / _T_DF
    dev = (z @ chol.T) / np.sqrt(w)[:, None]
    # log proposal density up to a constant
    qf = np.sum(np.linalg.solve(chol, dev.T) ** 2, axis=0)
    logq = -0.5 * (_T_DF + k) * np.log1p(qf / _T_DF)
    full = offset + (mode + dev) @ a.T
    lin = full @ bd
    ok = np.all(lin > 0, axis=1)
    logt = np.full(draws, -np.inf)
    ll = np.log(np.where(lin > 0, lin, 1.0)).sum(axis=1)
    logt[ok] = ll[ok] - 0.5 * np.sum(prec * (full[ok] - means) ** 2, axis=1)
    logw = logt - logq
    if not np.any(np.isfinite(logw)):
        raise UnreliablePosteriorError("every importance draw has zero weight", ess=0.0)
    wts = np.exp(logw - logw[np.isfinite(logw)].max())
    wts /= wts.sum()
    ess = 1.0 / np.sum(wts ** 2)
    if ess < 10:
        raise UnreliablePosteriorError(
            f"importance sampling effective sample size {ess:.2f} < 10", ess=float(ess))
    post = wts @ full
    se = None
    if xb is not None:
        curves = full @ xb
        centre = post @ xb
        se = np.sqrt(np.sum((wts[:, None] * (curves - centre)) ** 2, axis=0))
    return post, float(ess), se


def bayes_estimate(sample, x, m: int = 4, prior: CoefficientPrior | None = None,
                   param_draws: int = 100, coef_draws: int = 2000, seed=None) -> BayesHermiteResult:
    """Bayes estimate of the density under the robust expansion.

    For each of ``param_draws`` draws of ``(mu, sigma)`` the coefficient
    posterior mean is found by importance sampling; the resulting curves are
    averaged at ``x``. The ``(mu, sigma)`` stream and the coefficient streams
    are seeded independently, so changing ``coef_draws`` leaves the
    ``(mu, sigma)`` draws unchanged.
    """
    s = as_sample(sample)
    prior = prior or CoefficientPrior.default(m)
    if prior.m != m:
        raise DomainError("prior length does not match the order m")
    root = np.random.SeedSequence(seed)
    ms_seq, coef_seq = root.spawn(2)
    ms = musigma_posterior_draws(s, param_draws, rng=np.random.default_rng(ms_seq))
    xs = np.asarray(x, dtype=float)
    flat = np.atleast_1d(xs).ravel()
    total = np.zeros(flat.size)
    var = np.zeros(flat.size)
    min_ess = math.inf
    for child, mu, sg in zip(coef_seq.spawn(param_draws), ms.mu, ms.sigma):
        rng = np.random.default_rng(child)
        delta, ess, se = coefficient_posterior_mean(s, mu, sg, prior, coef_draws, rng, flat)
        total += eval_density(HermiteModel("robust", mu, sg, tuple(delta)), flat)
        var += se ** 2
        min_ess = min(min_ess, ess)
    value = total / param_draws
    mc_se = np.sqrt(var) / param_draws
    if xs.ndim == 0:
        value, mc_se = value[0], mc_se[0]
    return BayesHermiteResult(value, mc_se, min_ess, ms.mu, ms.sigma)
