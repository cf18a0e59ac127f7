"""Log-linear (exponential family) density expansions on a bounded interval.

Densities have the form ``exp(sum c_j psi_j(y)) / a(c)`` on ``[0, 1]``; data
on any other interval are mapped there affinely and the density is mapped
back with the Jacobian. ``log a`` and its derivatives (basis moments) are
computed by adaptive quadrature with the exponent shifted by its maximum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import as_sample, quadrature
from .errors import BoundaryMLEError, ConvergenceError, DomainError

BASES = ("cosine", "monomial")
MARGIN = 0.001
_QUAD_TOL = 1e-13
_SHIFT_GRID = np.linspace(0.0, 1.0, 1025)


def _check_basis(basis: str) -> str:
    if basis not in BASES:
        raise DomainError(f"unknown basis {basis!r}; choose from {BASES}")
    return basis


def basis_matrix(basis: str, m: int, y) -> np.ndarray:
    """Rows ``psi_1(y), ..., psi_m(y)``, shape ``(m,) + y.shape``."""
    _check_basis(basis)
    y = np.asarray(y, dtype=float)
    j = np.arange(1, m + 1).reshape((-1,) + (1,) * y.ndim)
    if basis == "cosine":
        return math.sqrt(2.0) * np.cos(j * math.pi * y)
    return y ** j


def basis_eval(basis: str, j: int, y):
    """``psi_j(y)`` on ``[0, 1]``: ``sqrt2 cos(j pi y)`` or ``y^j``."""
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y > 1)) or np.any(np.isnan(y)):
        raise DomainError("basis functions are defined on [0, 1]")
    if j < 1:
        raise DomainError("basis index starts at 1")
    out = basis_matrix(basis, j, y)[-1]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Support:
    """Affine map between ``[lo, hi]`` and ``[0, 1]``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.hi > self.lo:
            raise DomainError("support needs finite lo < hi")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lo) / self.width

    def from_unit(self, y):
        return self.lo + self.width * np.asarray(y, dtype=float)

    @classmethod
    def from_data(cls, sample, margin: float = MARGIN) -> "Support":
        """Interval sending the data range to ``[margin, 1 - margin]``."""
        s = as_sample(sample)
        lo, hi = float(s.values[0]), float(s.values[-1])
        if not hi > lo:
            raise BoundaryMLEError("all observations coincide; no interior fit exists")
        width = (hi - lo) / (1.0 - 2.0 * margin)
        return cls(lo - margin * width, lo - margin * width + width)


UNIT = Support(0.0, 1.0)


def _exponent(basis, c, y):
    return np.tensordot(c, basis_matrix(basis, c.size, y), axes=1)


def _shift(basis, c):
    return float(_exponent(basis, c, _SHIFT_GRID).max())


def log_normalizer(basis: str, coeffs) -> float:
    """``log int_0^1 exp(sum c_j psi_j(y)) dy``."""
    c = np.asarray(coeffs, dtype=float).ravel()
    _check_basis(basis)
    if c.size == 0 or not np.any(c):
        return 0.0
    top = _shift(basis, c)
    val = quadrature(lambda y: np.exp(_exponent(basis, c, y) - top), 0.0, 1.0,
                     tol=_QUAD_TOL, rtol=1e-14)
    return top + math.log(val)


@dataclass(frozen=True)
class MomentSet:
    """Model moments of the basis at ``c``.

    ``mean[j] = E psi_j``, ``cov = Cov(psi)``, ``third[j,k,l]`` the third
    central moment tensor (``None`` unless requested).
    """

    log_norm: float
    mean: np.ndarray
    cov: np.ndarray
    third: np.ndarray | None = None


def moments(basis: str, coeffs, third: bool = False) -> MomentSet:
    """First three derivatives of ``log a`` via basis moments under ``f(., c)``."""
    c = np.asarray(coeffs, dtype=float).ravel()
    _check_basis(basis)
    m = c.size
    top = _shift(basis, c)

    def integrand(y):
        psi = basis_matrix(basis, m, y).T
        e = np.exp(psi @ c - top)
        cols = [e[:, None], e[:, None] * psi,
                (e[:, None, None] * psi[:, :, None] * psi[:, None, :]).reshape(y.size, -1)]
        if third:
            p3 = psi[:, :, None, None] * psi[:, None, :, None] * psi[:, None, None, :]
            cols.append((e[:, None, None, None] * p3).reshape(y.size, -1))
        return np.concatenate(cols, axis=1)

    raw = quadrature(integrand, 0.0, 1.0, tol=_QUAD_TOL, rtol=1e-14)
    a = raw[0]
    mu = raw[1:1 + m] / a
    e2 = raw[1 + m:1 + m + m * m].reshape(m, m) / a
    cov = e2 - np.outer(mu, mu)
    cov = 0.5 * (cov + cov.T)
    g3 = None
    if third:
        e3 = raw[1 + m + m * m:].reshape(m, m, m) / a
        g3 = (e3 - np.einsum("j,kl->jkl", mu, e2) - np.einsum("k,jl->jkl", mu, e2)
              - np.einsum("l,jk->jkl", mu, e2) + 2.0 * np.einsum("j,k,l->jkl", mu, mu, mu))
    return MomentSet(top + math.log(a), mu, cov, g3)


@dataclass(frozen=True, eq=False)
class LogLinearModel:
    """A fitted or specified log-linear density."""

    basis: str
    coeffs: np.ndarray
    support: Support = UNIT

    def __post_init__(self):
        _check_basis(self.basis)
        c = np.asarray(self.coeffs, dtype=float).ravel()
        if c.size < 1:
            raise DomainError("order m must be at least 1")
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "_log_norm", log_normalizer(self.basis, c))

    @property
    def m(self) -> int:
        return self.coeffs.size

    @property
    def log_norm(self) -> float:
        return self._log_norm

    def pdf(self, x):
        """Density on the original scale; zero outside the support."""
        x = np.asarray(x, dtype=float)
        y = self.support.to_unit(x)
        inside = (y >= 0) & (y <= 1)
        yc = np.clip(y, 0.0, 1.0)
        val = np.exp(_exponent(self.basis, self.coeffs, yc) - self.log_norm) / self.support.width
        out = np.where(inside, val, 0.0)
        return float(out) if out.ndim == 0 else out

    def loglik(self, sample) -> float:
        """``n (c . mean psi - log a)`` on the unit scale (Jacobian dropped)."""
        s = as_sample(sample)
        y = self.support.to_unit(s.values)
        return s.n * (float(self.coeffs @ empirical_moments(self.basis, self.m, y)) - self.log_norm)

    def sample(self, rng: np.random.Generator, size: int, grid: int = 20001) -> np.ndarray:
        """Inverse-cdf draws using a trapezoid cdf on a fine grid."""
        y = np.linspace(0.0, 1.0, grid)
        f = np.exp(_exponent(self.basis, self.coeffs, y) - self.log_norm)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(y))])
        cdf /= cdf[-1]
        u = rng.random(size)
        return self.support.from_unit(np.interp(u, cdf, y))


def empirical_moments(basis: str, m: int, y) -> np.ndarray:
    """``mean_i psi_j(y_i)`` for ``j = 1..m``."""
    y = np.asarray(y, dtype=float)
    if np.any((y < 0) | (y > 1)):
        raise DomainError("data fall outside the support")
    return basis_matrix(basis, m, y).mean(axis=1)


def _unit_data(sample, support: Support | None):
    s = as_sample(sample)
    support = support or Support.from_data(s)
    y = support.to_unit(s.values)
    if np.any((y < 0) | (y > 1)):
        raise DomainError("data fall outside the given support")
    return s, support, y


@dataclass(frozen=True)
class CoefPriorNormal:
    """Multinormal prior with mean ``means`` and precision ``precision``."""

    means: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        c0 = np.asarray(self.means, dtype=float).ravel()
        om = np.asarray(self.precision, dtype=float)
        if om.ndim == 1:
            om = np.diag(om)
        if om.shape != (c0.size, c0.size):
            raise DomainError("precision matrix does not match the prior mean")
        if not np.allclose(om, om.T, rtol=1e-12, atol=0.0):
            raise DomainError("precision matrix must be symmetric")
        if np.linalg.eigvalsh(om).min() < -1e-10 * max(1.0, np.abs(om).max()):
            raise DomainError("precision matrix must be positive semidefinite")
        object.__setattr__(self, "means", c0)
        object.__setattr__(self, "precision", om)

    @property
    def m(self) -> int:
        return self.means.size

    @classmethod
    def shrinking(cls, means, tau: float) -> "CoefPriorNormal":
        """``c_j ~ N(c0_j, tau^2/j^2)``: precision ``j^2/tau^2``."""
        c0 = np.asarray(means, dtype=float).ravel()
        if not tau > 0:
            raise DomainError("tau must be positive")
        j = np.arange(1, c0.size + 1)
        return cls(c0, np.diag(j * j / tau ** 2))

    @classmethod
    def flat(cls, m: int) -> "CoefPriorNormal":
        return cls(np.zeros(m), np.zeros((m, m)))

    def logpdf(self, c) -> float:
        d = np.asarray(c, dtype=float) - self.means
        return -0.5 * float(d @ self.precision @ d)


@dataclass(frozen=True)
class FitResult:
    model: LogLinearModel
    iterations: int
    residual: float
    moments_hat: np.ndarray


def _newton(objective, derivs, c, tol, max_iter, what):
    """Maximise a concave objective by Newton with step halving.

    ``derivs(c)`` returns ``(grad, neg_hess, residual)``. After 30 halvings
    without ascent a gradient step is tried; if that fails too the iterate is
    declared stagnant.
    """
    val = objective(c)
    trace = [val]
    for it in range(1, max_iter + 1):
        grad, nh, resid = derivs(c)
        if resid <= tol:
            return c, it - 1, resid
        if np.max(np.abs(c)) > 1e4:
            raise BoundaryMLEError(f"{what}: coefficients diverge (no interior solution)", trace)
        try:
            step = np.linalg.solve(nh, grad)
        except np.linalg.LinAlgError:
            raise BoundaryMLEError(f"{what}: information matrix is singular", trace) from None
        improved = False
        for direction in (step, grad / max(1.0, float(np.abs(nh).max()))):
            t = 1.0
            for _ in range(31):
                cand = c + t * direction
                try:
                    v = objective(cand)
                except (OverflowError, FloatingPointError):
                    v = -math.inf
                if v > val:
                    improved = True
                    break
                t *= 0.5
            if improved:
                break
        if not improved:
            # no ascent direction left at working precision
            return c, it, resid
        c, val = cand, v
        trace.append(val)
    raise ConvergenceError(f"{what}: no convergence in {max_iter} iterations", trace)


def mle(sample, basis: str, m: int, support: Support | None = None, tol: float = 1e-10,
        max_iter: int = 200) -> FitResult:
    """Maximum likelihood fit: solves ``mean psi_j(y_i) = E_c psi_j``.

    Newton on the concave ``n (c . mu_hat - log a(c))``. Raises
    :class:`BoundaryMLEError` when the moments lie on the boundary of the
    attainable set (the coefficients then diverge).
    """
    s, support, y = _unit_data(sample, support)
    if m < 1:
        raise DomainError("order m must be at least 1")
    mu_hat = empirical_moments(basis, m, y)

    def objective(c):
        return float(c @ mu_hat) - log_normalizer(basis, c)

    def derivs(c):
        mo = moments(basis, c)
        g = mu_hat - mo.mean
        return g, mo.cov, float(np.abs(g).max())

    c, it, resid = _newton(objective, derivs, np.zeros(m), tol, max_iter, "mle")
    if resid > 1e-6:
        raise BoundaryMLEError(f"mle stalled with moment residual {resid:.3g}")
    return FitResult(LogLinearModel(basis, c, support), it, resid, mu_hat)


def posterior_mode(sample, basis: str, prior: CoefPriorNormal, support: Support | None = None,
                   tol: float | None = None, max_iter: int = 200) -> FitResult:
    """Maximiser of ``log pi(c) + n (c . mu_hat - log a(c))``.

    The returned ``residual`` is the gradient norm of the log posterior; the
    default tolerance is ``1e-8`` scaled by ``max(1, n, ||precision||)``.
    """
    s, support, y = _unit_data(sample, support)
    m = prior.m
    mu_hat = empirical_moments(basis, m, y)
    n = s.n
    om0, c0 = prior.precision, prior.means
    scale = max(1.0, float(n), float(np.abs(om0).max()))
    tol = 1e-8 * scale if tol is None else tol

    def objective(c):
        return prior.logpdf(c) + n * (float(c @ mu_hat) - log_normalizer(basis, c))

    def derivs(c):
        mo = moments(basis, c)
        g = -om0 @ (c - c0) + n * (mu_hat - mo.mean)
        return g, om0 + n * mo.cov, float(np.linalg.norm(g))

    c, it, resid = _newton(objective, derivs, c0.copy(), tol, max_iter, "posterior mode")
    return FitResult(LogLinearModel(basis, c, support), it, resid, mu_hat)


def quadratic_mode(c_hat, cov_hat, n: int, prior: CoefPriorNormal, literal: bool = False):
    """Minimiser of ``(c - c0)' P (c - c0) + n (c - c_hat)' Omega (c - c_hat)``.

    ``{P + n Omega}^-1 {P c0 + n Omega c_hat}``. With ``literal`` the prior
    mean enters without its precision, ``{P + n Omega}^-1 {c0 + n Omega c_hat}``.
    """
    c_hat = np.asarray(c_hat, dtype=float)
    om = np.asarray(cov_hat, dtype=float)
    p = prior.precision
    lhs = p + n * om
    rhs = (prior.means if literal else p @ prior.means) + n * om @ c_hat
    if np.linalg.cond(lhs) > 1e14:
        raise DomainError("combined precision matrix is singular")
    return np.linalg.solve(lhs, rhs)


def quadratic_mode_for(sample, basis: str, prior: CoefPriorNormal,
                       support: Support | None = None, literal: bool = False) -> np.ndarray:
    """:func:`quadratic_mode` at the maximum likelihood fit of ``sample``."""
    s, support, _ = _unit_data(sample, support)
    fit = mle(s, basis, prior.m, support)
    mo = moments(basis, fit.model.coeffs)
    return quadratic_mode(fit.model.coeffs, mo.cov, s.n, prior, literal)


@dataclass(frozen=True)
class SicResult:
    order: int
    scores: dict
    loglik: dict
    skipped: tuple


def sic_select(sample, basis: str, m_max: int, support: Support | None = None,
               prior_for=None) -> SicResult:
    """Pick ``m`` maximising ``n (c . mu_hat - log a(c)) - (log n / 2) m``.

    Coefficients are the MLE, or the posterior mode when ``prior_for(m)``
    supplies a :class:`CoefPriorNormal`. Orders whose fit fails are skipped
    with a warning. Ties go to the smaller ``m``.
    """
    if m_max < 1:
        raise DomainError("m_max must be at least 1")
    s, support, y = _unit_data(sample, support)
    pen = 0.5 * math.log(s.n)
    scores, logliks, skipped = {}, {}, []
    for m in range(1, m_max + 1):
        try:
            if prior_for is None:
                fit = mle(s, basis, m, support)
            else:
                fit = posterior_mode(s, basis, prior_for(m), support)
        except (ConvergenceError, DomainError) as exc:
            warnings.warn(f"order {m} skipped: {exc}", RuntimeWarning, stacklevel=2)
            skipped.append(m)
            continue
        ll = s.n * (float(fit.model.coeffs @ fit.moments_hat) - fit.model.log_norm)
        logliks[m] = ll
        scores[m] = ll - pen * m
    if not scores:
        raise ConvergenceError("no order could be fitted")
    best = max(scores, key=lambda k: (scores[k], -k))
    return SicResult(best, scores, logliks, tuple(skipped))
