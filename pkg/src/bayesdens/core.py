"""Shared data model and numerical utilities.

Holds the sample container, evaluation grids and curves, adaptive quadrature,
lattice posteriors over parameters, fixed densities and the location-scale
family used as parametric start model throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from .errors import (
    DegeneratePosteriorError,
    DomainError,
    QuadratureError,
)

SQRT2PI = math.sqrt(2.0 * math.pi)
LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)

# Unbounded integrals are cut at this many scale units (tail mass < 1e-22).
TAIL_SDS = 10.0


# ---------------------------------------------------------------------------
# Sample
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sample:
    """Immutable sorted univariate sample with a distinct-value view.

    ``distinct`` holds the strictly increasing distinct values and ``counts``
    their multiplicities.
    """

    values: np.ndarray
    distinct: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    def __init__(self, values: Iterable[float]):
        arr = np.sort(np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                                 dtype=float).ravel())
        if arr.size < 1:
            raise DomainError("a sample needs at least one observation")
        if not np.all(np.isfinite(arr)):
            raise DomainError("sample values must be finite")
        arr.setflags(write=False)
        distinct, counts = np.unique(arr, return_counts=True)
        distinct.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "distinct", distinct)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def n_distinct(self) -> int:
        return int(self.distinct.size)

    def pairs(self):
        """Sequence of ``(value, multiplicity)`` pairs."""
        return list(zip(self.distinct.tolist(), self.counts.tolist()))

    def mean(self) -> float:
        return float(self.values.mean())

    def sd(self) -> float:
        if self.n < 2:
            return 0.0
        return float(self.values.std(ddof=1))

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Sample(n={self.n}, distinct={self.n_distinct})"


def as_sample(data) -> Sample:
    return data if isinstance(data, Sample) else Sample(data)


# ---------------------------------------------------------------------------
# Grids and curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EvalGrid:
    points: np.ndarray
    uniform: bool = False

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        if pts.size < 1:
            raise DomainError("evaluation grid is empty")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise DomainError("evaluation grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lo: float, hi: float, count: int) -> "EvalGrid":
        if count < 1 or (count > 1 and not hi > lo):
            raise DomainError("grid needs count >= 1 and hi > lo")
        return cls(np.linspace(lo, hi, count), uniform=True)

    def __len__(self):
        return self.points.size


@dataclass(frozen=True, eq=False)
class DensityCurve:
    grid: EvalGrid
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size != len(self.grid):
            raise DomainError("curve length does not match its grid")
        if not np.all(np.isfinite(vals)):
            raise DomainError("curve values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def integral(self) -> float:
        """Trapezoidal integral over the grid (0 for a single point)."""
        if len(self.grid) < 2:
            return 0.0
        return float(np.trapezoid(self.values, self.grid.points))


# ---------------------------------------------------------------------------
# Adaptive Gauss-Kronrod quadrature
# ---------------------------------------------------------------------------

# 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
_XGK = np.array([
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
])
_WGK = np.array([
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600151137170,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
])
_WG_HALF = np.zeros(11)
_WG_HALF[[1, 3, 5, 7, 9]] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
]
GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
GAUSS_WEIGHTS = np.concatenate([_WG_HALF[:-1], _WG_HALF[::-1]])

_MAX_INTERVALS = 4000
_BATCH = 64


def _gk_batch(f, lo, hi):
    """Kronrod estimates and error bounds on a batch of intervals."""
    c = 0.5 * (lo + hi)
    hw = 0.5 * (hi - lo)
    x = (c[:, None] + hw[:, None] * GK_NODES[None, :]).ravel()
    fx = np.asarray(f(x), dtype=float)
    if fx.shape[0] != x.size:
        raise DomainError("integrand must return one value (or row) per abscissa")
    if not np.all(np.isfinite(fx)):
        raise DomainError("integrand is not finite on the interval")
    fx = fx.reshape((lo.size, GK_NODES.size) + fx.shape[1:])
    kron = np.tensordot(fx, GK_WEIGHTS, axes=([1], [0]))
    gauss = np.tensordot(fx, GAUSS_WEIGHTS, axes=([1], [0]))
    scale = hw.reshape((-1,) + (1,) * (kron.ndim - 1))
    kron = kron * scale
    gauss = gauss * scale
    diff = np.abs(kron - gauss)
    err = diff if diff.ndim == 1 else diff.reshape(lo.size, -1).max(axis=1)
    return kron, err


def quadrature(
    integrand: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-9,
    rtol: float = 0.0,
    points: Sequence[float] | None = None,
    full_output: bool = False,
):
    """Integrate a vectorised function over ``[a, b]`` by adaptive bisection.

    Each subinterval is handled by the 21-point Gauss-Kronrod pair; the
    subintervals with the largest error estimates are bisected until the
    summed error bound falls below ``max(tol, rtol * |estimate|)``.

    The integrand receives a 1-D array of abscissae and returns either one
    value per abscissa or a 2-D array with one row per abscissa (vector
    valued integrands share the subdivision; the error bound is the largest
    component error).

    Parameters
    ----------
    points : optional interior break points (kinks, discontinuities).
    full_output : also return the error bound.

    Raises
    ------
    QuadratureError
        When the interval budget is exhausted; carries the best estimate.
    """
    if not tol > 0:
        raise DomainError("quadrature tolerance must be positive")
    a = float(a)
    b = float(b)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise DomainError("quadrature interval must be bounded")
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    if a == b:
        probe = np.asarray(integrand(np.array([a])), dtype=float)
        zero = np.zeros(probe.shape[1:]) if probe.ndim > 1 else 0.0
        return (zero, 0.0) if full_output else zero

    cuts = [a]
    if points is not None:
        cuts += sorted(float(p) for p in points if a < p < b)
    cuts.append(b)
    edges = np.array(cuts)
    lo, hi = edges[:-1], edges[1:]
    est, err = _gk_batch(integrand, lo, hi)

    while True:
        total = est.sum(axis=0)
        total_err = float(err.sum())
        target = max(tol, rtol * float(np.max(np.abs(total))))
        if total_err <= target:
            break
        if lo.size >= _MAX_INTERVALS:
            raise QuadratureError("interval budget exhausted", sign * total, total_err)
        local = target / lo.size
        order = np.argsort(err)[::-1]
        pick = order[err[order] > local][:_BATCH]
        if pick.size == 0:
            pick = order[:1]
        mids = 0.5 * (lo[pick] + hi[pick])
        if np.any((mids <= lo[pick]) | (mids >= hi[pick])):
            raise QuadratureError("subinterval too small to bisect", sign * total, total_err)
        new_lo = np.concatenate([lo[pick], mids])
        new_hi = np.concatenate([mids, hi[pick]])
        new_est, new_err = _gk_batch(integrand, new_lo, new_hi)
        keep = np.ones(lo.size, dtype=bool)
        keep[pick] = False
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        est = np.concatenate([est[keep], new_est])
        err = np.concatenate([err[keep], new_err])

    result = sign * (float(total) if np.ndim(total) == 0 else total)
    return (result, total_err) if full_output else result


# ---------------------------------------------------------------------------
# Lattice posteriors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    """Normalised weights on a rectangular parameter lattice.

    ``axes`` holds one 1-D array per parameter, ``masses`` has shape
    ``tuple(len(ax) for ax in axes)``.
    """

    axes: tuple
    masses: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        axes = tuple(np.asarray(ax, dtype=float).ravel() for ax in self.axes)
        masses = np.asarray(self.masses, dtype=float)
        if masses.shape != tuple(ax.size for ax in axes):
            raise DomainError("mass array does not match the lattice axes")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-10:
            raise DomainError("posterior masses must be nonnegative and sum to 1")
        masses = masses.copy()
        masses.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "masses", masses)
        names = tuple(self.names) or tuple(f"theta{i}" for i in range(len(axes)))
        object.__setattr__(self, "names", names)

    @property
    def shape(self):
        return self.masses.shape

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    def mean(self) -> np.ndarray:
        return np.array([(m * self.masses).sum() for m in self.mesh()])

    def cov(self) -> np.ndarray:
        mesh = [m.ravel() for m in self.mesh()]
        w = self.masses.ravel()
        mu = np.array([(m * w).sum() for m in mesh])
        dev = np.stack([m - c for m, c in zip(mesh, mu)])
        return (dev * w) @ dev.T

    def expect(self, fn: Callable) -> float:
        """Posterior mean of ``fn(*theta)`` evaluated on the lattice mesh."""
        return float((np.asarray(fn(*self.mesh())) * self.masses).sum())

    def support(self, rel: float = 1e-14):
        """Lattice points whose mass exceeds ``rel`` times the largest mass.

        Returns ``(coords, masses)`` where ``coords`` is a tuple of flat
        arrays. Dropped mass is below ``rel * size`` in total.
        """
        w = self.masses.ravel()
        keep = w > rel * w.max()
        coords = tuple(m.ravel()[keep] for m in self.mesh())
        return coords, w[keep]

    def draw(self, rng: np.random.Generator, size: int):
        """Draw lattice points with probability equal to their mass."""
        w = self.masses.ravel()
        idx = rng.choice(w.size, size=size, p=w / w.sum())
        mesh = [m.ravel() for m in self.mesh()]
        return tuple(m[idx] for m in mesh)


def grid_posterior_normalize(log_weights, axes=None, names=()) -> PosteriorGrid:
    """Turn unnormalised log-weights into a :class:`PosteriorGrid`.

    Weights are exponentiated after subtracting their maximum, so adding a
    constant to every log-weight leaves the result unchanged.
    """
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise DomainError("log-weights must be finite or -inf")
    top = lw.max() if lw.size else -np.inf
    if not np.isfinite(top):
        raise DegeneratePosteriorError("all log-weights are -inf")
    w = np.exp(lw - top)
    w /= w.sum()
    if axes is None:
        axes = tuple(np.arange(k, dtype=float) for k in lw.shape)
    return PosteriorGrid(tuple(axes), w, tuple(names))


# ---------------------------------------------------------------------------
# Fixed densities
# ---------------------------------------------------------------------------


class Density:
    """A fixed univariate density with ``pdf``/``logpdf``/``cdf``."""

    def pdf(self, x):
        raise NotImplementedError

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def cdf(self, x):
        raise NotImplementedError

    def bounds(self):
        """Interval carrying all but a negligible amount of mass."""
        raise NotImplementedError

    def __call__(self, x):
        return self.pdf(x)


@dataclass(frozen=True)
class NormalDensity(Density):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("normal scale must be positive")

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (SQRT2PI * self.sigma)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return -0.5 * z * z - LOG_SQRT2PI - math.log(self.sigma)

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def ppf(self, p):
        return self.mu + self.sigma * ndtri(np.asarray(p, dtype=float))

    def bounds(self):
        return (self.mu - TAIL_SDS * self.sigma, self.mu + TAIL_SDS * self.sigma)


@dataclass(frozen=True)
class UniformDensity(Density):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DomainError("uniform density needs hi > lo")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.lo) & (x <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def ppf(self, p):
        return self.lo + (self.hi - self.lo) * np.asarray(p, dtype=float)

    def bounds(self):
        return (self.lo, self.hi)


class MixtureDensity(Density):
    """Finite mixture of normal components."""

    def __init__(self, weights, components: Sequence[NormalDensity]):
        w = np.asarray(weights, dtype=float)
        if w.size != len(components) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise DomainError("mixture weights must be nonnegative and sum to 1")
        self.weights = w
        self.components = tuple(components)

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def cdf(self, x):
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        which = rng.choice(len(self.components), size=n, p=self.weights)
        mus = np.array([c.mu for c in self.components])[which]
        sds = np.array([c.sigma for c in self.components])[which]
        return mus + sds * rng.standard_normal(n)

    def bounds(self):
        b = [c.bounds() for c in self.components]
        return (min(lo for lo, _ in b), max(hi for _, hi in b))

    def __repr__(self):
        return f"MixtureDensity({self.weights.tolist()}, {list(self.components)})"


class CallableDensity(Density):
    """Wrap a plain vectorised callable as a density (pdf only)."""

    def __init__(self, fn, bounds=None):
        self.fn = fn
        self._bounds = bounds

    def pdf(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def bounds(self):
        if self._bounds is None:
            raise DomainError("callable density has no declared support")
        return self._bounds


def as_density(f) -> Density:
    return f if isinstance(f, Density) else CallableDensity(f)


# ---------------------------------------------------------------------------
# Location-scale family
# ---------------------------------------------------------------------------


class LocationScale:
    """Location-scale family ``f0(x; mu, sigma) = g0((x - mu)/sigma)/sigma``.

    Doubles as the transformation model ``X = mu + sigma * eps`` with residual
    base density ``g0``. The named instance is :func:`normal_family`.
    Parameter arrays broadcast against ``x``.
    """

    dim = 2

    def __init__(self, base: Density | None = None, name: str = "normal"):
        self.base = base if base is not None else NormalDensity()
        self.name = name

    # transformation view
    @staticmethod
    def forward(eps, mu, sigma):
        return mu + sigma * np.asarray(eps, dtype=float)

    @staticmethod
    def inverse(x, mu, sigma):
        return (np.asarray(x, dtype=float) - mu) / sigma

    # density view
    def logpdf(self, x, mu, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return self.base.logpdf(self.inverse(x, mu, sigma)) - np.log(sigma)

    def pdf(self, x, mu, sigma):
        return np.exp(self.logpdf(x, mu, sigma))

    def cdf(self, x, mu, sigma):
        return self.base.cdf(self.inverse(x, mu, sigma))

    def ppf(self, p, mu, sigma):
        return self.forward(self.base.ppf(p), mu, sigma)

    def at(self, mu: float, sigma: float) -> Density:
        """Freeze the family at one parameter value."""
        if isinstance(self.base, NormalDensity) and self.base == NormalDensity():
            return NormalDensity(float(mu), float(sigma))
        fam = self
        lo, hi = self.base.bounds()
        return CallableDensity(lambda t: fam.pdf(t, mu, sigma),
                               bounds=(mu + sigma * lo, mu + sigma * hi))

    def is_normal(self) -> bool:
        return isinstance(self.base, NormalDensity) and self.base == NormalDensity()


def normal_family() -> LocationScale:
    return LocationScale(NormalDensity(), name="normal")


# ---------------------------------------------------------------------------
# (mu, sigma) lattices and parametric posteriors
# ---------------------------------------------------------------------------

LATTICE_SIZE = 101


def default_lattice(sample, size: int = LATTICE_SIZE, sigma: float | None = None,
                    mu_sds: float = 6.0, sigma_factor: float = 8.0):
    """Default ``(mu, sigma)`` lattice axes for a sample.

    ``mu`` spans mean +- ``mu_sds`` sd, ``sigma`` spans sd * [1/8, 8] evenly on
    the log scale. Location and spread are taken from the distinct values, so
    duplicating observations does not move the lattice. With ``sigma`` given
    the scale axis collapses to that single value.
    """
    s = as_sample(sample)
    vals = s.distinct
    centre = float(vals.mean())
    sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    if not sd > 0:
        sd = 1.0
    mu_axis = np.linspace(centre - mu_sds * sd, centre + mu_sds * sd, size)
    if sigma is not None:
        if not sigma > 0:
            raise DomainError("fixed sigma must be positive")
        sigma_axis = np.array([float(sigma)])
    else:
        sigma_axis = np.exp(np.linspace(math.log(sd / sigma_factor),
                                        math.log(sd * sigma_factor), size))
    return mu_axis, sigma_axis


def concentrated_lattice(sample, size: int = LATTICE_SIZE, width: float = 8.0,
                         sigma: float | None = None):
    """Lattice scaled to the posterior spread, ``mean +- width*sd/sqrt(n)``.

    Useful for large samples where the default lattice is coarser than the
    posterior itself.
    """
    s = as_sample(sample)
    vals = s.values
    sd = float(vals.std(ddof=1)) if s.n > 1 else 1.0
    if not sd > 0:
        sd = 1.0
    se = sd / math.sqrt(s.n)
    mu_axis = np.linspace(vals.mean() - width * se, vals.mean() + width * se, size)
    if sigma is not None:
        return mu_axis, np.array([float(sigma)])
    half = width / math.sqrt(2.0 * s.n)
    sigma_axis = sd * np.exp(np.linspace(-half, half, size))
    return mu_axis, sigma_axis


def _log_prior_on(log_prior, mu, sigma):
    if log_prior is None:
        return np.zeros(np.broadcast(mu, sigma).shape)
    lp = np.asarray(log_prior(mu, sigma), dtype=float)
    return np.broadcast_to(lp, np.broadcast(mu, sigma).shape)


def loglik_lattice(family: LocationScale, x, weights, mu_axis, sigma_axis):
    """``sum_i w_i log f0(x_i; mu, sigma)`` on the lattice, shape (n_mu, n_sigma)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    mu_axis = np.asarray(mu_axis, dtype=float)
    sigma_axis = np.asarray(sigma_axis, dtype=float)
    if family.is_normal():
        # sufficient statistics keep this O(n + lattice)
        sw = w.sum()
        s1 = (w * x).sum()
        s2 = (w * x * x).sum()
        mu = mu_axis[:, None]
        sg = sigma_axis[None, :]
        ss = s2 - 2.0 * mu * s1 + sw * mu * mu
        return -0.5 * ss / (sg * sg) - sw * (np.log(sg) + LOG_SQRT2PI)
    out = np.zeros((mu_axis.size, sigma_axis.size))
    for xi, wi in zip(x, w):
        out += wi * family.logpdf(xi, mu_axis[:, None], sigma_axis[None, :])
    return out


def parametric_posterior(family: LocationScale, sample, lattice=None, log_prior=None,
                         distinct: bool = False) -> PosteriorGrid:
    """Lattice posterior ``pi(theta) * prod f0(x_i, theta)``.

    With ``distinct=True`` the product runs over distinct data values only.
    ``log_prior(mu, sigma)`` defaults to flat in ``(mu, log sigma)``.
    """
    s = as_sample(sample)
    mu_axis, sigma_axis = lattice if lattice is not None else default_lattice(s)
    if distinct:
        x, w = s.distinct, np.ones(s.n_distinct)
    else:
        x, w = s.distinct, s.counts.astype(float)
    lw = loglik_lattice(family, x, w, mu_axis, sigma_axis)
    lw = lw + _log_prior_on(log_prior, mu_axis[:, None], sigma_axis[None, :])
    return grid_posterior_normalize(lw, (mu_axis, sigma_axis), ("mu", "sigma"))


def predictive_pdf(family: LocationScale, posterior: PosteriorGrid, t, rel: float = 1e-14):
    """Posterior predictive density ``sum_theta mass * f0(t, theta)``."""
    (mu, sg), w = posterior.support(rel)
    t = np.asarray(t, dtype=float)
    lf = family.logpdf(t[..., None], mu, sg)
    return np.exp(logsumexp(lf, b=w, axis=-1))


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------


def ensure_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0 or not np.isfinite(value):
        raise DomainError(f"{name} must be positive, got {value!r}")
    return value


def ensure_nonnegative(name: str, value: float) -> float:
    value = float(value)
    if not value >= 0 or np.isnan(value):
        raise DomainError(f"{name} must be nonnegative, got {value!r}")
    return value
