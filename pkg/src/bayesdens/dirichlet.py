"""Dirichlet-process based density estimators.

Covers the binned Dirichlet-smoothed histogram, the kernel-smoothed posterior
mean of a Dirichlet process and its posterior variance, semiparametric
predictive mixtures built on a parametric start family, residual-density
estimators for location-scale models, and their pinned-down (control set)
variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .core import (
    Density,
    LocationScale,
    PosteriorGrid,
    as_density,
    as_sample,
    default_lattice,
    ensure_nonnegative,
    ensure_positive,
    grid_posterior_normalize,
    loglik_lattice,
    normal_family,
    parametric_posterior,
    _log_prior_on,
)
from .errors import ControlBoundaryError, DomainError, OutOfSupportError
from .kernels import GAUSSIAN, convolve, get_kernel, kde, kde_squared

SQRT2PI = math.sqrt(2.0 * math.pi)


def prior_weight(a: float, n: int) -> float:
    """``w_n = a/(a + n)``, the weight carried by the prior guess."""
    a = ensure_nonnegative("prior strength a", a)
    if a == 0 and n == 0:
        raise DomainError("w_n undefined for a = 0 and n = 0")
    if math.isinf(a):
        return 1.0
    return a / (a + n)


@dataclass(frozen=True)
class DirichletPrior:
    """Dirichlet process prior ``a F0`` with a fixed base density."""

    a: float
    base: Density

    def __post_init__(self):
        ensure_nonnegative("prior strength a", self.a)
        object.__setattr__(self, "base", as_density(self.base))

    def weight(self, n: int) -> float:
        return prior_weight(self.a, n)


# ---------------------------------------------------------------------------
# Binned data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BinnedData:
    """Cell boundaries, counts and prior cell probabilities."""

    edges: np.ndarray
    counts: np.ndarray
    prior_probs: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        counts = np.asarray(self.counts)
        p0 = np.asarray(self.prior_probs, dtype=float)
        k = edges.size - 1
        if k < 1 or not np.all(np.diff(edges) > 0):
            raise DomainError("cell edges must be strictly increasing")
        if counts.shape != (k,) or np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise DomainError("counts must be k nonnegative integers")
        if p0.shape != (k,) or np.any(p0 <= 0) or abs(p0.sum() - 1.0) > 1e-10:
            raise DomainError("prior cell probabilities must be positive and sum to 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "prior_probs", p0)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def cell_of(self, x):
        """Index of the cell holding ``x``; cells are ``[e_j, e_{j+1})``, last closed."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        idx = np.where(x == self.edges[-1], self.edges.size - 2, idx)
        if np.any((idx < 0) | (idx >= self.edges.size - 1)):
            raise OutOfSupportError("x lies outside every cell")
        return idx

    @classmethod
    def from_sample(cls, sample, edges, prior_probs=None):
        s = as_sample(sample)
        edges = np.asarray(edges, dtype=float)
        if s.values[0] < edges[0] or s.values[-1] > edges[-1]:
            raise OutOfSupportError("data fall outside the binning range")
        counts, _ = np.histogram(s.values, bins=edges)
        if prior_probs is None:
            w = np.diff(edges)
            prior_probs = w / w.sum()
        return cls(edges, counts, prior_probs)


def binned_estimate(a: float, data: BinnedData, x):
    """Dirichlet-smoothed histogram.

    ``w_n p0_j / h_j + (1 - w_n) N_j / (n h_j)`` for ``x`` in cell ``j``,
    written as ``(a p0_j + N_j) / ((a + n) h_j)`` so that ``n = 0`` and
    ``a = 0`` are both handled.
    """
    a = ensure_nonnegative("prior strength a", a)
    n = data.n
    if a == 0 and n == 0:
        raise DomainError("no prior mass and no data")
    j = data.cell_of(x)
    num = a * data.prior_probs[j] + data.counts[j]
    out = num / ((a + n) * data.widths[j])
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Kernel-smoothed Dirichlet process
# ---------------------------------------------------------------------------


def dp_estimate(prior: DirichletPrior, sample, kernel, h: float, x):
    """Posterior mean of ``int K_h(t - x) dF(t)`` under a Dirichlet prior.

    ``w_n (f0 * K_h)(x) + (1 - w_n) f_n(x)``. With the uniform kernel on
    ``[-1/2, 1/2]`` this is the moving-cell estimator.
    """
    s = as_sample(sample)
    w = prior.weight(s.n)
    fn = kde(s, kernel, h, x)
    if w == 0.0:
        return fn
    return w * convolve(prior.base, kernel, h, x) + (1.0 - w) * fn


def dp_posterior_variance(prior: DirichletPrior, sample, kernel, h: float, x):
    """Leading term of the posterior variance of the smoothed functional.

    ``(nh)^-1 n^2/((n+a)(n+a+1)) n^-1 sum h^-1 K((x_i - x)/h)^2``.
    """
    s = as_sample(sample)
    a = ensure_nonnegative("prior strength a", prior.a)
    h = ensure_positive("bandwidth h", h)
    n = s.n
    factor = n * n / ((n + a) * (n + a + 1.0)) / (n * h)
    return factor * kde_squared(s, kernel, h, x)


# ---------------------------------------------------------------------------
# First semiparametric framework
# ---------------------------------------------------------------------------


def semiparam_posterior(family: LocationScale, sample, log_prior=None,
                        lattice=None) -> PosteriorGrid:
    """Lattice posterior for the start-family parameter.

    ``pi(theta) * prod_{distinct} f0(x_i, theta)``; tied observations enter
    once.
    """
    return parametric_posterior(family, sample, lattice, log_prior, distinct=True)


def predictive_convolved(family: LocationScale, posterior: PosteriorGrid, kernel, h, x,
                         rel: float = 1e-14):
    """``int K_h(t - x) fhat0(t) dt`` for the predictive mixture ``fhat0``."""
    k = get_kernel(kernel)
    (mu, sg), w = posterior.support(rel)
    xs = np.asarray(x, dtype=float)
    if k is GAUSSIAN and family.is_normal():
        s2 = np.sqrt(sg * sg + h * h)
        z = (np.atleast_1d(xs).ravel()[:, None] - mu[None, :]) / s2[None, :]
        out = (np.exp(-0.5 * z * z) / (SQRT2PI * s2) * w).sum(axis=1)
    else:
        out = np.zeros(np.atleast_1d(xs).size)
        for m, s_, wi in zip(mu, sg, w):
            out += wi * np.atleast_1d(convolve(family.at(m, s_), k, h, np.atleast_1d(xs).ravel()))
    return float(out[0]) if xs.ndim == 0 else out.reshape(xs.shape)


def semiparam_estimate(a: float, family: LocationScale, posterior: PosteriorGrid,
                       sample, kernel, h: float, x):
    """``w_n int K_h(t - x) fhat0(t) dt + (1 - w_n) f_n(x)``.

    ``fhat0`` is the posterior predictive of the start family, taken from
    ``posterior`` (see :func:`semiparam_posterior`).
    """
    s = as_sample(sample)
    w = prior_weight(a, s.n)
    fn = kde(s, kernel, h, x)
    if w == 0.0:
        return fn
    return w * predictive_convolved(family, posterior, kernel, h, x) + (1.0 - w) * fn


# ---------------------------------------------------------------------------
# Residual densities
# ---------------------------------------------------------------------------


def variable_kernel_density(y, centres, bandwidths):
    """``n^-1 sum h_i^-1 phi((y - e_i)/h_i)``, normal kernel."""
    e = np.asarray(centres, dtype=float)
    hb = np.asarray(bandwidths, dtype=float)
    if np.any(~(hb > 0)):
        raise DomainError("bandwidths must be positive")
    ys = np.asarray(y, dtype=float)
    z = (np.atleast_1d(ys).ravel()[:, None] - e[None, :]) / hb[None, :]
    out = (np.exp(-0.5 * z * z) / (SQRT2PI * hb)).mean(axis=1)
    return float(out[0]) if ys.ndim == 0 else out.reshape(ys.shape)


@dataclass(frozen=True)
class ResidualFit:
    """Estimated residuals and their bandwidths."""

    mu: float
    sigma: float
    residuals: np.ndarray
    bandwidths: np.ndarray


BANDWIDTH_RULES = ("standardized", "literal", "delta")


def residual_bandwidths(sample, posterior: PosteriorGrid, rule: str = "standardized") -> ResidualFit:
    """Residuals ``(x_i - mu)/sigma`` at the posterior mean and bandwidths ``v_i/sqrt(n)``.

    rule
        ``"standardized"``: ``v_i^2 = 1 + (x_i - mu)^2 / (2 sigma^2)`` (the
        normal-model delta method with a flat prior; ``v_i = 1`` when sigma
        is fixed). ``"literal"``: ``v_i^2 = 1 + (x_i - mu)/(2 sigma^2)`` as
        printed in the source; raises when negative. ``"delta"``: delta
        method applied to the lattice posterior covariance.
    """
    s = as_sample(sample)
    mean = posterior.mean()
    mu, sigma = float(mean[0]), float(mean[1])
    x = s.values
    eps = (x - mu) / sigma
    n = s.n
    sigma_fixed = posterior.axes[1].size == 1
    if rule == "standardized":
        v2 = np.ones_like(eps) if sigma_fixed else 1.0 + 0.5 * eps * eps
        hb = np.sqrt(v2 / n)
    elif rule == "literal":
        v2 = np.ones_like(eps) if sigma_fixed else 1.0 + 0.5 * (x - mu) / sigma ** 2
        if np.any(v2 <= 0):
            raise DomainError("literal bandwidth form is negative for some residual")
        hb = np.sqrt(v2 / n)
    elif rule == "delta":
        cov = posterior.cov()
        # d eps / d(mu, sigma) = (-1/sigma, -eps/sigma)
        g = np.stack([-np.ones_like(eps) / sigma, -eps / sigma])
        var = np.einsum("ik,ij,jk->k", g, cov, g)
        if np.any(~(var > 0)):
            raise DomainError("posterior covariance gives a zero bandwidth; lattice too coarse")
        hb = np.sqrt(var)
    else:
        raise DomainError(f"unknown bandwidth rule {rule!r}")
    return ResidualFit(mu, sigma, eps, hb)


def residual_density(a: float, family: LocationScale, sample, posterior: PosteriorGrid, y,
                     rule: str = "standardized", fit: ResidualFit | None = None):
    """Bayes estimate of the residual density.

    ``w_n g0(y) + (1 - w_n) n^-1 sum h_i^-1 phi((y - e_i)/h_i)`` with
    residuals and bandwidths from :func:`residual_bandwidths` (or ``fit``).
    """
    s = as_sample(sample)
    w = prior_weight(a, s.n)
    fit = fit or residual_bandwidths(s, posterior, rule)
    gn = variable_kernel_density(y, fit.residuals, fit.bandwidths)
    if w == 0.0:
        return gn
    return w * family.base.pdf(y) + (1.0 - w) * gn


# ---------------------------------------------------------------------------
# Pinned-down Dirichlet processes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlSets:
    """Partition ``B_1 = (-inf, c_1], (c_1, c_2], ..., (c_{m-1}, inf)`` with masses ``z``."""

    cuts: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        cuts = np.atleast_1d(np.asarray(self.cuts, dtype=float))
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if cuts.size and not np.all(np.diff(cuts) > 0):
            raise DomainError("control boundaries must be increasing")
        if z.size != cuts.size + 1 or np.any(z <= 0) or abs(z.sum() - 1.0) > 1e-12:
            raise DomainError("need m = len(cuts)+1 positive masses summing to 1")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "z", z)

    @property
    def m(self) -> int:
        return int(self.z.size)

    @classmethod
    def whole_line(cls) -> "ControlSets":
        return cls(np.empty(0), np.array([1.0]))

    @classmethod
    def quantile(cls, p: float) -> "ControlSets":
        """Sets ``(-inf, c_p], (c_p, inf)`` with masses ``(p, 1-p)``, ``Phi(c_p) = p``."""
        if not 0 < p < 1:
            raise DomainError("p must lie in (0, 1)")
        return cls(np.array([float(ndtri(p))]), np.array([p, 1.0 - p]))

    def index(self, x, strict: bool = False):
        """Control set index of ``x``; with ``strict`` reject boundary points."""
        x = np.asarray(x, dtype=float)
        if strict and self.cuts.size and np.any(np.isin(x, self.cuts)):
            raise ControlBoundaryError("point lies on a control-set boundary")
        return np.searchsorted(self.cuts, x, side="left")

    def counts(self, values):
        """``C_j``: number of values in each set (ties counted)."""
        return np.bincount(self.index(values), minlength=self.m)

    def base_masses(self, base: Density):
        """``G0(B_j)`` for a base distribution with a cdf."""
        edges = np.concatenate([[0.0], base.cdf(self.cuts), [1.0]])
        return np.diff(edges)


def pinned_estimate(prior: DirichletPrior, control: ControlSets, sample, kernel, h: float, x):
    """Density estimate under a Dirichlet prior pinned to ``F(B_j) = z_j``.

    ``z_j {a int K(z) f0(x + hz) dz + n f_n(x)} / {a z_j + n F_n(B_j)}``
    for ``x`` interior to ``B_j``.
    """
    s = as_sample(sample)
    a = prior.a
    xs = np.asarray(x, dtype=float)
    j = control.index(xs, strict=True)
    fn = np.asarray(kde(s, kernel, h, xs))
    smooth = np.asarray(convolve(prior.base, kernel, h, xs)) if a > 0 else 0.0
    nb = control.counts(s.values)[j]
    zj = control.z[j]
    den = a * zj + nb
    if np.any(den == 0):
        raise DomainError("control set without prior mass or data")
    out = zj * (a * smooth + s.n * fn) / den
    return float(out) if xs.ndim == 0 else out


def _log_rising(a_z: np.ndarray, n: int) -> np.ndarray:
    """Table ``L[j, C] = sum_{k<C} log(a z_j + k)`` for ``C = 0..n``."""
    k = np.arange(n, dtype=float)
    terms = np.log(a_z[:, None] + k[None, :])
    return np.concatenate([np.zeros((a_z.size, 1)), np.cumsum(terms, axis=1)], axis=1)


def pinned_log_m(a: float, control: ControlSets, family: LocationScale, sample,
                 mu_axis, sigma_axis) -> np.ndarray:
    """``log M_n(theta)`` on the lattice, up to a theta-free constant.

    ``M_n = prod_j z_j^{C_j} / Gamma(a z_j + C_j)``; the constant
    ``prod_j Gamma(a z_j)`` is divided out so large ``a`` stays accurate.
    """
    a = ensure_positive("prior strength a", a)
    s = as_sample(sample)
    table = _log_rising(a * control.z, s.n)
    logz = np.log(control.z)
    out = np.zeros((mu_axis.size, sigma_axis.size))
    rows = np.arange(sigma_axis.size)[:, None]
    for i, mu in enumerate(mu_axis):
        # one mu row at a time keeps memory at O(n_sigma * n)
        idx = control.index(family.inverse(s.values[None, :], mu, sigma_axis[:, None]))
        counts = np.zeros((sigma_axis.size, control.m), dtype=np.int64)
        np.add.at(counts, (np.broadcast_to(rows, idx.shape), idx), 1)
        out[i] = (counts * logz).sum(axis=1) - table[np.arange(control.m), counts].sum(axis=1)
    return out


def pinned_posterior(a: float, control: ControlSets, family: LocationScale, sample,
                     log_prior=None, lattice=None) -> PosteriorGrid:
    """Posterior ``pi(theta) L_n(theta) M_n(theta)`` on the lattice.

    ``L_n`` is the distinct-value likelihood; ``M_n`` counts residuals
    ``T_theta^{-1}(x_i)`` falling in each control set. Computed in log space.
    """
    s = as_sample(sample)
    mu_axis, sigma_axis = lattice if lattice is not None else default_lattice(s)
    mu_axis = np.asarray(mu_axis, dtype=float)
    sigma_axis = np.asarray(sigma_axis, dtype=float)
    lw = loglik_lattice(family, s.distinct, np.ones(s.n_distinct), mu_axis, sigma_axis)
    lw = lw + pinned_log_m(a, control, family, s, mu_axis, sigma_axis)
    lw = lw + _log_prior_on(log_prior, mu_axis[:, None], sigma_axis[None, :])
    return grid_posterior_normalize(lw, (mu_axis, sigma_axis), ("mu", "sigma"))


def pinned_residual_density(a: float, control: ControlSets, family: LocationScale, sample,
                            posterior: PosteriorGrid, y, rule: str = "delta",
                            fit: ResidualFit | None = None):
    """Residual density under the pinned-down prior.

    ``z_j {a g0(y) + n g_n(y)} / {a z_j + n G_n(B_j)}``, ``g_n`` the
    variable-bandwidth normal-kernel estimate at the estimated residuals.
    Residuals come from the pinned posterior mean; bandwidths by the delta
    method on its covariance unless ``rule`` says otherwise.
    """
    s = as_sample(sample)
    a = ensure_nonnegative("prior strength a", a)
    fit = fit or residual_bandwidths(s, posterior, rule)
    ys = np.asarray(y, dtype=float)
    j = control.index(ys, strict=True)
    gn = np.asarray(variable_kernel_density(ys, fit.residuals, fit.bandwidths))
    nb = control.counts(fit.residuals)[j]
    zj = control.z[j]
    den = a * zj + nb
    if np.any(den == 0):
        raise DomainError("control set without prior mass or residuals")
    out = zj * (a * family.base.pdf(ys) + s.n * gn) / den
    return float(out) if ys.ndim == 0 else out


def pinned_quantile_estimate(a: float, p: float, sample, family: LocationScale | None = None,
                             log_prior=None, lattice=None) -> float:
    """Quantile estimate ``mu_hat + sigma_hat c_p`` from the pinned posterior.

    Control sets are ``(-inf, c_p], (c_p, inf)`` with masses ``(p, 1-p)`` and
    ``(mu_hat, sigma_hat)`` are posterior means.
    """
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    family = family or normal_family()
    control = ControlSets.quantile(p)
    post = pinned_posterior(a, control, family, sample, log_prior, lattice)
    mu, sigma = post.mean()
    return float(mu + sigma * control.cuts[0])
