"""Locally parametric Bayesian density estimators.

Everything rests on the kernel smoothed local likelihood at ``x``::

    sum_i Kbar((x_i - x)/h) log f(x_i, theta) - n int Kbar((t - x)/h) f(t, theta) dt

with the level-normalised kernel ``Kbar = K/K(0)``. The estimators below are
posterior means of ``f(x, theta)`` for various local vehicle models and
priors, plus the empirical Bayes mixture driven by the ``Q`` statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .core import (
    SQRT2PI,
    LocationScale,
    NormalDensity,
    PosteriorGrid,
    as_density,
    as_sample,
    ensure_nonnegative,
    ensure_positive,
    grid_posterior_normalize,
    loglik_lattice,
    predictive_pdf,
    quadrature,
    _log_prior_on,
)
from .errors import DomainError, NoLocalDataError, SingularStartDensityError
from .kernels import GAUSSIAN, convolve, correction_kde, get_kernel, kde, kde_deriv

# ---------------------------------------------------------------------------
# Vehicle models and the local likelihood
# ---------------------------------------------------------------------------


class ConstantVehicle:
    """``f(t, theta) = theta`` near ``x``."""

    dim = 1

    def logf(self, t, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(theta > 0, np.log(np.where(theta > 0, theta, 1.0)), -np.inf) \
                + 0.0 * np.asarray(t, dtype=float)

    def window_integral(self, kernel, h, x, theta):
        return np.asarray(theta, dtype=float) * h / kernel.k0


class ScaledVehicle:
    """``f(t, theta) = theta * f0(t)``: a start density times a local constant."""

    dim = 1

    def __init__(self, f0):
        self.f0 = as_density(f0)

    def logf(self, t, theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.where(theta > 0, np.log(np.where(theta > 0, theta, 1.0)), -np.inf)
        return lt + self.f0.logpdf(t)

    def window_integral(self, kernel, h, x, theta):
        # int Kbar((t-x)/h) f0(t) dt = (h/k0) int K(z) f0(x+hz) dz
        return np.asarray(theta, dtype=float) * (h / kernel.k0) * convolve(self.f0, kernel, h, x)


class NormalVehicle:
    """``f(t; mu, sigma)`` normal; ``theta = (mu, sigma)``."""

    dim = 2

    def __init__(self):
        self.family = LocationScale(NormalDensity(), "normal")

    def logf(self, t, mu, sigma):
        return self.family.logpdf(t, mu, sigma)

    def window_integral(self, kernel, h, x, mu, sigma):
        mu = np.asarray(mu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if kernel is GAUSSIAN:
            s2 = sigma * sigma + h * h
            return SQRT2PI * h * np.exp(-0.5 * (x - mu) ** 2 / s2) / np.sqrt(2.0 * math.pi * s2)
        out = np.empty(np.broadcast(mu, sigma).shape)
        for idx in np.ndindex(out.shape):
            m = np.broadcast_to(mu, out.shape)[idx]
            s = np.broadcast_to(sigma, out.shape)[idx]
            out[idx] = (h / kernel.k0) * convolve(NormalDensity(m, s), kernel, h, x)
        return out


def _weights(sample, kernel, h, x):
    """``Kbar((x_i - x)/h)`` over distinct values, times multiplicity."""
    s = as_sample(sample)
    return s.distinct, s.counts * kernel.normalized((s.distinct - x) / h)


def local_loglik(vehicle, sample, kernel, h: float, x: float, *theta):
    """Kernel smoothed local log-likelihood at ``x``.

    ``theta`` entries broadcast against each other. Points with zero kernel
    weight are skipped; a non-positive ``f`` at a weighted point gives
    ``-inf``.
    """
    h = ensure_positive("bandwidth h", h)
    k = get_kernel(kernel)
    s = as_sample(sample)
    t, w = _weights(s, k, h, x)
    keep = w > 0
    t, w = t[keep], w[keep]
    theta = [np.asarray(v, dtype=float) for v in theta]
    shape = np.broadcast(*theta).shape if theta else ()
    total = np.zeros(shape)
    for ti, wi in zip(t, w):
        total = total + wi * vehicle.logf(ti, *theta)
    return total - s.n * vehicle.window_integral(k, h, x, *theta)


def local_posterior(vehicle, sample, kernel, h: float, x: float, axes, log_prior=None,
                    names=()) -> PosteriorGrid:
    """Lattice posterior ``pi(theta) L_n(x, theta)`` over the product of ``axes``."""
    k = get_kernel(kernel)
    axes = tuple(np.asarray(ax, dtype=float) for ax in axes)
    if len(axes) != vehicle.dim:
        raise DomainError(f"vehicle needs {vehicle.dim} lattice axes")
    if isinstance(vehicle, NormalVehicle):
        t, w = _weights(sample, k, h, x)
        s = as_sample(sample)
        mu, sg = axes
        lw = loglik_lattice(vehicle.family, t, w, mu, sg)
        lw = lw - s.n * vehicle.window_integral(k, h, x, mu[:, None], sg[None, :])
        lw = lw + _log_prior_on(log_prior, mu[:, None], sg[None, :])
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        lw = local_loglik(vehicle, sample, k, h, x, *mesh)
        if log_prior is not None:
            lw = lw + np.asarray(log_prior(*mesh), dtype=float)
    return grid_posterior_normalize(lw, axes, names)


# ---------------------------------------------------------------------------
# Local constant level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaPosterior:
    shape: float
    rate: float

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def var(self) -> float:
        return self.shape / self.rate ** 2


@dataclass(frozen=True)
class NormalPosterior:
    mean: float
    var: float


def _local_mass(sample, kernel, h, x):
    """``n h / k0`` and ``f_n(x)`` (arrays follow ``x``)."""
    s = as_sample(sample)
    k = get_kernel(kernel)
    return s.n * h / k.k0, np.asarray(kde(s, k, h, x))


def _strength(c, x):
    cx = c(x) if callable(c) else c
    cx = np.asarray(cx, dtype=float)
    if np.any(np.isnan(cx)) or np.any(cx < 0):
        raise DomainError("prior strength c must be nonnegative")
    return cx


def _out(v, x):
    return float(v) if np.ndim(x) == 0 else np.asarray(v)


def local_const_posterior(sample, kernel, h: float, x: float, c: float, f0) -> GammaPosterior:
    """``Gamma(c f0(x) + nh f_n(x)/k0, c + nh/k0)`` for the local level."""
    h = ensure_positive("bandwidth h", h)
    w, fn = _local_mass(sample, kernel, h, x)
    cx = float(_strength(c, x))
    f0x = float(as_density(f0).pdf(x))
    return GammaPosterior(cx * f0x + w * float(fn), cx + w)


def local_const_estimate(sample, kernel, h: float, x, c, f0):
    """``{c f0(x) + nh f_n(x)/k0} / {c + nh/k0}``; ``c`` may be a function of ``x``."""
    h = ensure_positive("bandwidth h", h)
    w, fn = _local_mass(sample, kernel, h, x)
    cx = _strength(c, x)
    f0x = np.asarray(as_density(f0).pdf(x), dtype=float)
    est = np.where(np.isinf(cx), f0x,
                   (np.where(np.isinf(cx), 0.0, cx) * f0x + w * fn)
                   / (np.where(np.isinf(cx), 1.0, cx) + w))
    return _out(est, x)


def local_two_stage_estimate(sample, kernel, h: float, x, c: float, family: LocationScale,
                             background: PosteriorGrid):
    """Mix the background predictive density and ``f_n`` with weights ``c : nh/k0``.

    ``background`` is the lattice posterior of the background parameter from
    the full parametric likelihood.
    """
    h = ensure_positive("bandwidth h", h)
    w, fn = _local_mass(sample, kernel, h, x)
    c = ensure_nonnegative("prior strength c", c)
    if c == 0:
        return _out(fn, x)
    pred = predictive_pdf(family, background, x)
    if math.isinf(c):
        return _out(pred, x)
    return _out((c * pred + w * fn) / (c + w), x)


# ---------------------------------------------------------------------------
# Local level and slope
# ---------------------------------------------------------------------------


def local_slope_posterior(sample, h: float, x: float, beta0: float = 0.0,
                          w0: float = 0.0) -> NormalPosterior:
    """Approximate normal posterior of the local log-slope (gaussian kernel).

    Prior ``beta ~ N(beta0, 1/w0^2)``; ``w0 = 0`` is the flat prior and
    ``w0 = inf`` a point mass. The local Gamma strength ``c`` is taken small
    relative to ``nh`` and drops out.
    """
    h = ensure_positive("bandwidth h", h)
    s = as_sample(sample)
    w0 = ensure_nonnegative("prior precision root w0", w0)
    fn = kde(s, GAUSSIAN, h, x)
    if not fn > 0:
        raise NoLocalDataError(f"kernel estimate vanishes at x={x!r}")
    if math.isinf(w0):
        return NormalPosterior(float(beta0), 0.0)
    gn = kde_deriv(s, GAUSSIAN, h, x)
    info = s.n * h ** 3 * fn / GAUSSIAN.k0
    prec = w0 * w0 + info
    return NormalPosterior((w0 * w0 * beta0 + info * gn / fn) / prec, 1.0 / prec)


def slope_adjusted_level(fn: float, h: float, mean: float, var: float) -> float:
    """``f_n exp{-h^2 m^2 / (2(1 + h^2 v))} / sqrt(1 + h^2 v)``."""
    d = 1.0 + h * h * var
    return fn * math.exp(-0.5 * h * h * mean * mean / d) / math.sqrt(d)


def local_slope_estimate(sample, h: float, x, beta0: float = 0.0, w0: float = 0.0):
    """Level estimate after averaging the local slope over its posterior."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(xs.size)
    for i, xi in enumerate(xs):
        post = local_slope_posterior(sample, h, float(xi), beta0, w0)
        out[i] = slope_adjusted_level(kde(sample, GAUSSIAN, h, float(xi)), h, post.mean, post.var)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# Start density times a local correction
# ---------------------------------------------------------------------------


def _start_at(f0, x):
    f0x = np.asarray(as_density(f0).pdf(x), dtype=float)
    if np.any(~(f0x > 0)):
        raise SingularStartDensityError("start density vanishes at x")
    return f0x


def guess_times_const_estimate(sample, kernel, h: float, x, c: float, f0):
    """``f0(x) {c + nh f_n(x)/k0} / {c + nh (f0 * K_h)(x)/k0}`` (Gamma(c, c) multiplier)."""
    h = ensure_positive("bandwidth h", h)
    c = ensure_nonnegative("prior strength c", c)
    k = get_kernel(kernel)
    w, fn = _local_mass(sample, k, h, x)
    f0x = _start_at(f0, x)
    smooth = np.asarray(convolve(as_density(f0), k, h, x))
    return _out(f0x * (c + w * fn) / (c + w * smooth), x)


def correction_estimate(sample, kernel, h: float, x, c: float, f0):
    """``f0(x) {c + nh f0(x) r_n(x)/k0} / {c + nh f0(x)/k0}`` with the ratio kernel estimate ``r_n``."""
    h = ensure_positive("bandwidth h", h)
    c = ensure_nonnegative("prior strength c", c)
    k = get_kernel(kernel)
    s = as_sample(sample)
    w = s.n * h / k.k0
    f0x = _start_at(f0, x)
    rn = np.asarray(correction_kde(s, k, h, f0, x))
    if c == 0:
        return _out(f0x * rn, x)
    return _out(f0x * (c + w * f0x * rn) / (c + w * f0x), x)


def predictive_correction_estimate(sample, kernel, h: float, x, family: LocationScale,
                                   background: PosteriorGrid, c: float = 0.0,
                                   rel: float = 1e-14):
    """Correction-factor estimate averaged over the background posterior.

    ``sum_xi w(xi) f(x, xi) {c + nh f(x, xi) r_n(x, xi)/k0} / {c + nh f(x, xi)/k0}``.
    With ``c = 0`` this is ``n^-1 sum_i K_h(x_i - x) E{f(x, xi)/f(x_i, xi) | data}``.
    """
    h = ensure_positive("bandwidth h", h)
    c = ensure_nonnegative("prior strength c", c)
    k = get_kernel(kernel)
    s = as_sample(sample)
    (mu, sg), wts = background.support(rel)
    xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    lfd = family.logpdf(s.distinct[:, None], mu[None, :], sg[None, :])  # (d, xi)
    if np.any(~np.isfinite(lfd)):
        raise SingularStartDensityError("a background density vanishes at a data point")
    lfx = family.logpdf(xs[:, None], mu[None, :], sg[None, :])  # (x, xi)
    kh = k.func((s.distinct[None, :] - xs[:, None]) / h) / h * s.counts[None, :]
    # r_n(x, xi) = n^-1 sum_i K_h(x_i - x) / f(x_i, xi), shifted per xi against overflow
    shift = (-lfd).max(axis=0)
    with np.errstate(divide="ignore"):
        lrn = np.log(kh @ np.exp(-lfd - shift[None, :])) + shift[None, :] - math.log(s.n)
    if c == 0:
        out = np.exp(logsumexp(lfx + lrn, b=wts[None, :], axis=1))
    else:
        w = s.n * h / k.k0
        fx = np.exp(lfx)
        term = fx * (c + w * np.exp(lfx + lrn)) / (c + w * fx)
        out = term @ wts
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# Running normal density with known sigma
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunningNormalResult:
    value: float
    delta_mean: float


def running_normal_estimate(sample, h: float, x: float, sigma: float, mu0: float,
                            tau: float, tol: float = 1e-10) -> RunningNormalResult:
    """Posterior mean of ``phi((x - mu)/sigma)/sigma`` for a local normal with known sigma.

    Gaussian kernel; prior ``mu ~ N(mu0, tau^2)``. With ``delta = mu - x``
    the local log-likelihood is
    ``-(nh f_n/phi(0)) (delta - h^2 g_n/f_n)^2 / (2 sigma^2)
    - nh (sigma^2+h^2)^-1/2 exp(-delta^2 / (2(sigma^2+h^2)))``.
    The integral over ``delta`` is done by adaptive quadrature.
    """
    h = ensure_positive("bandwidth h", h)
    sigma = ensure_positive("sigma", sigma)
    tau = ensure_nonnegative("tau", tau)
    s = as_sample(sample)
    fn = kde(s, GAUSSIAN, h, x)
    if not fn > 0:
        raise NoLocalDataError(f"kernel estimate vanishes at x={x!r}")
    if tau == 0:
        d = mu0 - x
        return RunningNormalResult(math.exp(-0.5 * d * d / sigma ** 2) / (SQRT2PI * sigma), d)
    gn = kde_deriv(s, GAUSSIAN, h, x)
    prec_lik = s.n * h * fn / GAUSSIAN.k0 / sigma ** 2
    centre = h * h * gn / fn
    s2 = sigma * sigma + h * h
    amp = s.n * h / math.sqrt(s2)

    def logpost(d):
        return (-0.5 * (x + d - mu0) ** 2 / tau ** 2 - 0.5 * prec_lik * (d - centre) ** 2
                - amp * np.exp(-0.5 * d * d / s2))

    # bracket the mass: the last term is bounded, so the two gaussians decide
    spread = 12.0 * max(tau, 1.0 / math.sqrt(prec_lik), math.sqrt(s2))
    lo = min(mu0 - x, centre, 0.0) - spread
    hi = max(mu0 - x, centre, 0.0) + spread
    grid = np.linspace(lo, hi, 8001)
    step = grid[1] - grid[0]
    # a sharp prior can sit between grid nodes; add the gaussian modes explicitly
    prec_prior = 1.0 / tau ** 2
    joint = (prec_prior * (mu0 - x) + prec_lik * centre) / (prec_prior + prec_lik)
    cand = np.concatenate([grid, [mu0 - x, centre, joint]])
    lp = logpost(cand)
    best = float(cand[np.argmax(lp)])
    ref = optimize.minimize_scalar(lambda d: -logpost(d), bounds=(best - step, best + step),
                                   method="bounded", options={"xatol": 1e-3 * min(step, tau)})
    if -ref.fun > lp.max():
        best = float(ref.x)
    top = max(float(lp.max()), float(logpost(best)))
    live = cand[lp > top - 60.0]
    a, b = min(live.min(), best) - step, max(live.max(), best) + step
    # break points on the scale of the quadratic part's curvature so narrow peaks are seen
    width = 1.0 / math.sqrt(prec_prior + prec_lik)
    pts = sorted({float(p) for p in best + width * np.array([-8.0, -1.0, 0.0, 1.0, 8.0])
                  if a < p < b})

    def integrand(d):
        w = np.exp(logpost(d) - top)
        dens = np.exp(-0.5 * d * d / sigma ** 2) / (SQRT2PI * sigma)
        return np.stack([w, w * dens, w * d], axis=1)

    z, num, dm = quadrature(integrand, a, b, tol=tol, rtol=1e-12, points=pts)
    return RunningNormalResult(float(num / z), float(dm / z))


# ---------------------------------------------------------------------------
# Empirical Bayes mixture
# ---------------------------------------------------------------------------


def default_positions(sample) -> np.ndarray:
    """Sample deciles, duplicates removed."""
    s = as_sample(sample)
    return np.unique(np.quantile(s.values, np.linspace(0.1, 0.9, 9)))


def q_statistic(sample, kernel, h: float, f0, positions=None) -> float:
    """``Q = m^-1 sum_j {f_n(x'_j) - f0(x'_j)}^2 / f0(x'_j)``: a rough estimate of ``1/c``."""
    pos = default_positions(sample) if positions is None else np.asarray(positions, dtype=float)
    if pos.size == 0 or np.unique(pos).size != pos.size:
        raise DomainError("checking positions must be distinct and non-empty")
    f0p = np.asarray(as_density(f0).pdf(pos), dtype=float)
    if np.any(~(f0p > 0)):
        raise SingularStartDensityError("start density vanishes at a checking position")
    fnp = np.asarray(kde(sample, kernel, h, pos))
    return float(np.mean((fnp - f0p) ** 2 / f0p))


def stein_mixture(f0x, fnx, n: int, h: float, k0: float, q: float):
    """``{f0 + (nh/k0) Q f_n} / {1 + (nh/k0) Q}``."""
    if not q >= 0:
        raise DomainError("Q must be nonnegative")
    wq = n * h / k0 * q
    f0x = np.asarray(f0x, dtype=float)
    fnx = np.asarray(fnx, dtype=float)
    if math.isinf(wq):
        return fnx
    return f0x / (1.0 + wq) + (wq / (1.0 + wq)) * fnx


def empirical_bayes_estimate(sample, kernel, h: float, x, f0=None, positions=None,
                             q: float | None = None):
    """Stein-type mixture of ``f0`` and ``f_n`` with weight from ``Q``.

    ``q`` overrides the statistic (useful to probe the limits).
    """
    h = ensure_positive("bandwidth h", h)
    k = get_kernel(kernel)
    s = as_sample(sample)
    if f0 is None:
        raise DomainError("a start density f0 is required")
    q = q_statistic(s, k, h, f0, positions) if q is None else q
    f0x = as_density(f0).pdf(x)
    fnx = kde(s, k, h, x)
    return _out(stein_mixture(f0x, fnx, s.n, h, k.k0, q), x)


def hierarchical_empirical_bayes(sample, kernel, h: float, x, family: LocationScale,
                                 background: PosteriorGrid, draws: int = 100, seed=None,
                                 positions=None):
    """Average the Stein mixture over ``draws`` start densities from the background posterior."""
    h = ensure_positive("bandwidth h", h)
    if draws < 1:
        raise DomainError("need at least one draw")
    k = get_kernel(kernel)
    s = as_sample(sample)
    rng = np.random.default_rng(seed)
    mus, sgs = background.draw(rng, draws)
    fnx = np.asarray(kde(s, k, h, x))
    total = np.zeros(np.shape(fnx))
    for mu, sg in zip(mus, sgs):
        f0 = family.at(mu, sg)
        q = q_statistic(s, k, h, f0, positions)
        total = total + stein_mixture(f0.pdf(x), fnx, s.n, h, k.k0, q)
    return _out(total / draws, x)


__all__ = [
    "ConstantVehicle", "ScaledVehicle", "NormalVehicle", "local_loglik", "local_posterior",
    "GammaPosterior", "NormalPosterior", "local_const_posterior", "local_const_estimate",
    "local_two_stage_estimate", "local_slope_posterior", "local_slope_estimate",
    "slope_adjusted_level", "guess_times_const_estimate", "correction_estimate",
    "predictive_correction_estimate", "RunningNormalResult", "running_normal_estimate",
    "default_positions", "q_statistic", "stein_mixture", "empirical_bayes_estimate",
    "hierarchical_empirical_bayes",
]
