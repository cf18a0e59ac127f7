"""Penalty-smoothed Dirichlet distributions on the probability simplex.

The density kernel is ``prod p_j^(alpha_j - 1) * exp(-lam * Delta(p))`` with a
roughness penalty ``Delta`` on neighbouring cell probabilities. It stays
conjugate for multinomial counts. The normalising constant is never computed;
every density value here is unnormalised.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BoundaryModeError, ConvergenceError, DomainError

PENALTIES = ("d1", "d2", "dlog")
_ALIASES = {
    "squared-difference": "d1",
    "squared-second-difference": "d2",
    "squared-log-difference": "dlog",
}


def _penalty_id(name: str) -> str:
    key = _ALIASES.get(name, name)
    if key not in PENALTIES:
        raise DomainError(f"unknown penalty {name!r}; choose from {PENALTIES}")
    return key


def _diff_matrix(k: int, order: int) -> np.ndarray:
    return np.diff(np.eye(k), n=order, axis=0)


def _as_simplex(p, strict: bool = True) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise DomainError("p must be a vector of length >= 2")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise DomainError("p must be nonnegative and sum to 1")
    if strict and np.any(p == 0):
        raise DomainError("p must lie strictly inside the simplex")
    return p


def penalty(kind: str, p) -> float:
    """Roughness ``Delta(p)``.

    ``d1``: sum of squared first differences. ``d2``: squared second
    differences (needs ``k >= 3``). ``dlog``: squared differences of
    ``log p`` (needs a strictly interior ``p``).
    """
    kind = _penalty_id(kind)
    p = _as_simplex(p, strict=(kind == "dlog"))
    if kind == "d2" and p.size < 3:
        raise DomainError("second-difference penalty needs k >= 3")
    if kind == "dlog":
        return float(np.sum(np.diff(np.log(p)) ** 2))
    return float(np.sum(np.diff(p, n=1 if kind == "d1" else 2) ** 2))


def _penalty_grad_hess(kind: str, p: np.ndarray):
    """Gradient and Hessian of ``Delta`` with respect to ``p``."""
    k = p.size
    if kind in ("d1", "d2"):
        d = _diff_matrix(k, 1 if kind == "d1" else 2)
        q = 2.0 * d.T @ d
        return q @ p, q
    d = _diff_matrix(k, 1)
    q = 2.0 * d.T @ d
    ql = q @ np.log(p)
    grad = ql / p
    hess = q / np.outer(p, p) - np.diag(ql / (p * p))
    return grad, hess


@dataclass(frozen=True)
class GenDirichletSpec:
    """Parameters ``alpha``, penalty id and strength ``lam``."""

    alphas: tuple
    penalty: str = "d1"
    lam: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float).ravel()
        if a.size < 2:
            raise DomainError("need k >= 2 cells")
        if np.any(~np.isfinite(a)) or np.any(a <= 0):
            raise DomainError("alphas must be positive")
        lam = float(self.lam)
        if not lam >= 0 or not math.isfinite(lam):
            raise DomainError("lam must be finite and nonnegative")
        kind = _penalty_id(self.penalty)
        if kind == "d2" and a.size < 3:
            raise DomainError("second-difference penalty needs k >= 3")
        object.__setattr__(self, "alphas", tuple(float(v) for v in a))
        object.__setattr__(self, "penalty", kind)
        object.__setattr__(self, "lam", lam)

    @property
    def k(self) -> int:
        return len(self.alphas)

    @classmethod
    def from_prior(cls, a: float, p0, penalty: str = "d1", lam: float = 0.0):
        """``alpha_j = a * p0_j`` from a prior strength and prior guess."""
        return cls(tuple(a * np.asarray(p0, dtype=float)), penalty, lam)


def log_density(spec: GenDirichletSpec, p) -> float:
    """Unnormalised log density ``sum (alpha_j - 1) log p_j - lam * Delta(p)``.

    On the simplex boundary a zero cell contributes ``0`` when
    ``alpha_j == 1``, ``-inf`` when ``alpha_j > 1`` and ``+inf`` when
    ``alpha_j < 1``. The log-difference penalty is undefined there.
    """
    p = _as_simplex(p, strict=False)
    if p.size != spec.k:
        raise DomainError("p and alphas differ in length")
    am1 = np.asarray(spec.alphas) - 1.0
    zero = p == 0
    if np.any(zero) and spec.penalty == "dlog" and spec.lam > 0:
        raise DomainError("log-difference penalty requires a strictly interior p")
    terms = np.zeros_like(p)
    terms[~zero] = am1[~zero] * np.log(p[~zero])
    terms[zero & (am1 > 0)] = -np.inf
    terms[zero & (am1 < 0)] = np.inf
    total = terms.sum()
    if np.isinf(total) and np.any(terms == np.inf) and np.any(terms == -np.inf):
        raise DomainError("boundary point mixes +inf and -inf contributions")
    if spec.lam == 0:
        return float(total)
    return float(total - spec.lam * penalty(spec.penalty, p))


def _counts(counts, k: int) -> np.ndarray:
    n = np.asarray(counts)
    if n.shape != (k,):
        raise DomainError(f"expected {k} counts")
    if np.any(n < 0) or np.any(n != np.round(n)):
        raise DomainError("counts must be nonnegative integers")
    return n.astype(float)


def posterior_update(spec: GenDirichletSpec, counts) -> GenDirichletSpec:
    """Conjugate update ``alpha_j <- alpha_j + N_j``; penalty and ``lam`` kept."""
    n = _counts(counts, spec.k)
    return replace(spec, alphas=tuple(np.asarray(spec.alphas) + n))


def coarsen_counts(alphas, blocks) -> np.ndarray:
    """Sum ``alphas`` over consecutive blocks of cells.

    ``blocks`` is a sequence of index sequences (0-based) that must partition
    ``0..k-1`` into consecutive runs, in order.
    """
    a = np.asarray(alphas, dtype=float)
    nxt = 0
    out = []
    for b in blocks:
        b = [int(i) for i in b]
        if not b or b != list(range(nxt, nxt + len(b))):
            raise DomainError("blocks must be consecutive, ordered and non-empty")
        out.append(a[b].sum())
        nxt += len(b)
    if nxt != a.size:
        raise DomainError("blocks must cover every cell")
    return np.array(out)


@dataclass(frozen=True)
class ModeResult:
    p: np.ndarray
    iterations: int
    kkt: float
    warning: str | None = None
    trace: list = field(default_factory=list, repr=False)


def _objective(c, lam, kind, p):
    with np.errstate(divide="ignore", invalid="ignore"):
        val = float(np.sum(c * np.log(p)))
    if lam > 0:
        val -= lam * penalty(kind, p)
    return val


def _softmax(eta):
    e = np.exp(eta - eta.max())
    return e / e.sum()


def _eta_derivs(c, lam, kind, p):
    """Gradient and Hessian of the objective in logits (all k coordinates)."""
    csum = c.sum()
    grad = c - csum * p
    hess = -csum * (np.diag(p) - np.outer(p, p))
    if lam > 0:
        dg, dh = _penalty_grad_hess(kind, p)
        g = -lam * dg
        jac = np.diag(p) - np.outer(p, p)
        u = g * p
        s = u.sum()
        grad = grad + u - p * s
        hess = hess + jac @ (-lam * dh) @ jac + np.diag(u) - np.outer(u, p) \
            - np.outer(p, u) + 2.0 * s * np.outer(p, p) - s * np.diag(p)
    return grad, hess


def posterior_mode(spec: GenDirichletSpec, counts=None, max_iter: int = 200,
                   tol: float | None = None) -> ModeResult:
    """Maximise ``sum (alpha_j + N_j - 1) log p_j - lam * Delta(p)`` on the simplex.

    Damped Newton on logits against the last cell, started from the uniform
    vector. Convergence is certified by the KKT residual
    ``max_j |p_j (g_j - sum_l p_l g_l)|`` with ``g`` the gradient in ``p``.
    """
    post = posterior_update(spec, counts) if counts is not None else spec
    c = np.asarray(post.alphas) - 1.0
    lam, kind, k = post.lam, post.penalty, post.k
    scale = max(1.0, lam, float(np.abs(c).max()))
    tol = 1e-8 * scale if tol is None else tol
    target = min(tol, 1e-12 * scale)

    if lam == 0 or kind != "dlog":
        if np.any(c < 0):
            raise BoundaryModeError(
                "alpha_j + N_j < 1 in some cell: the density is unbounded at the boundary")
    if lam == 0:
        if np.all(c == 0):
            raise BoundaryModeError("flat density: every point of the simplex is a mode")
        if np.any(c == 0):
            p = c / c.sum()
            warnings.warn("alpha_j + N_j == 1 in some cell; mode placed on the boundary",
                          RuntimeWarning, stacklevel=2)
            return ModeResult(p, 0, 0.0, "boundary cells set to zero")

    eta = np.zeros(k)
    p = _softmax(eta)
    val = _objective(c, lam, kind, p)
    trace = []
    kkt = math.inf
    for it in range(1, max_iter + 1):
        grad, hess = _eta_derivs(c, lam, kind, p)
        kkt = float(np.abs(grad).max())
        trace.append((val, kkt))
        # polish past tol while Newton still makes progress
        stalled = len(trace) > 2 and kkt >= 0.5 * trace[-3][1]
        if kkt <= target or (kkt <= tol and stalled):
            return ModeResult(p, it - 1, kkt, None, trace)
        g, h = grad[:-1], -hess[:-1, :-1]
        # Levenberg shift until the Newton system is positive definite
        shift = 0.0
        hscale = max(1e-12, float(np.abs(np.diag(h)).max()))
        while True:
            try:
                chol = np.linalg.cholesky(h + shift * np.eye(k - 1))
                break
            except np.linalg.LinAlgError:
                shift = max(2.0 * shift, 1e-10 * hscale)
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        t = 1.0
        slope = float(g @ step)
        for _ in range(60):
            trial = eta.copy()
            trial[:-1] += t * step
            pt = _softmax(trial)
            if np.all(pt > 0):
                vt = _objective(c, lam, kind, pt)
                if vt >= val + 1e-4 * t * slope or (abs(vt - val) <= 1e-15 * max(1.0, abs(val))):
                    break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed", trace)
        eta = trial
        p, val = pt, vt
    raise ConvergenceError(f"no convergence in {max_iter} iterations (kkt={kkt:.3g})", trace)
