"""Exact and entropy-regularized optimal transport between non-negative vectors.

Conventions used throughout the package:

* The entropic problem is ``min_T <T, C> + gamma * sum(T log T)`` over
  couplings with prescribed marginals, so the Gibbs kernel is
  ``K = exp(-C / gamma)`` and plans factor as ``diag(u) K diag(v)``.
* Histograms need not be normalized; both marginals must carry the same mass.
* Batched routines take one histogram per column (``(m, t)`` arrays).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.special import xlogy

from .errors import (
    DimensionMismatch,
    MassMismatch,
    NonConvergenceWarning,
    NumericalUnderflow,
)

TAU_MASS = 1e-6
SINKHORN_TOL = 1e-9
SINKHORN_MAX_ITER = 100_000  # a cap, not a budget: converged solves stop at the tolerance

# Scaling vectors outside this range trigger the log-domain iterations.
_SCALING_LIMIT = 1e290
# Kernel products below this are treated as underflowed.
_TINY = 1e-280
# Upper bound on elements of an (m, n, chunk) temporary in log-domain code.
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class CostMatrix:
    """Ground cost between a source grid (rows) and a target grid (columns)."""

    entries: np.ndarray
    source_grid: np.ndarray | None = None
    target_grid: np.ndarray | None = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2:
            raise DimensionMismatch(f"cost matrix must be 2-D, got shape {entries.shape}")
        if np.any(entries < 0) or not np.all(np.isfinite(entries)):
            raise ValueError("cost entries must be finite and non-negative")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        for name, size in (("source_grid", entries.shape[0]), ("target_grid", entries.shape[1])):
            grid = getattr(self, name)
            if grid is not None:
                grid = np.asarray(grid, dtype=float)
                if grid.shape != (size,):
                    raise DimensionMismatch(f"{name} has {grid.size} entries, cost has {size}")
                object.__setattr__(self, name, grid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def mean(self) -> float:
        return float(self.entries.mean())


@dataclass(frozen=True)
class GibbsKernel:
    """``K = exp(-C / gamma)`` together with its logarithm and the cost."""

    cost: np.ndarray
    gamma: float
    K: np.ndarray = field(init=False, repr=False)
    log_K: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cost = self.cost.entries if isinstance(self.cost, CostMatrix) else self.cost
        cost = np.array(cost, dtype=float)
        if cost.ndim != 2:
            raise DimensionMismatch(f"cost matrix must be 2-D, got shape {cost.shape}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        log_K = -cost / self.gamma
        for arr in (cost, log_K):
            arr.setflags(write=False)
        K = np.exp(log_K)
        K.setflags(write=False)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "log_K", log_K)
        object.__setattr__(self, "K", K)

    @classmethod
    def from_cost(cls, cost, gamma: float) -> "GibbsKernel":
        return cls(cost, gamma)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape


@dataclass
class TransportPlan:
    entries: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    converged: bool = True
    n_iter: int = 0

    def marginal_violation(self) -> float:
        """Largest L1 deviation of the plan's marginals from the targets."""
        rows = np.abs(self.entries.sum(axis=1) - self.row_marginal).sum()
        cols = np.abs(self.entries.sum(axis=0) - self.col_marginal).sum()
        return float(max(rows, cols))


def entropy(T) -> float:
    """``sum(T log T)`` with the convention ``0 log 0 = 0``."""
    T = np.asarray(T, dtype=float)
    return float(xlogy(T, T).sum())


def _check_pair(a, b, shape, tau_mass=TAU_MASS):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or (a.size, b.size) != tuple(shape):
        raise DimensionMismatch(
            f"histograms of sizes {a.shape}, {b.shape} do not match cost shape {shape}"
        )
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("histograms must be non-negative")
    ma, mb = a.sum(), b.sum()
    if abs(ma - mb) > tau_mass * max(ma, mb):
        raise MassMismatch(f"masses differ: {ma!r} vs {mb!r}")
    return a, b, ma


def exact_ot(a, b, C, tau_mass: float = TAU_MASS) -> tuple[float, TransportPlan]:
    """Unregularized transport cost and a vertex-optimal plan.

    Solved as a transportation LP with the HiGHS dual simplex, which returns
    a basic (vertex) solution.
    """
    C = C.entries if isinstance(C, CostMatrix) else np.asarray(C, dtype=float)
    a, b, mass = _check_pair(a, b, C.shape, tau_mass)
    m, n = C.shape
    if mass == 0:
        return 0.0, TransportPlan(np.zeros((m, n)), a, b)
    b_fit = b * (mass / b.sum())
    # empty bins carry no flow; restricting to the supports shrinks the LP
    ia, ib = np.flatnonzero(a > 0), np.flatnonzero(b_fit > 0)
    sub = C[np.ix_(ia, ib)]
    p, q = sub.shape

    rows = sp.kron(sp.eye(p), np.ones((1, q)))
    cols = sp.kron(np.ones((1, p)), sp.eye(q))
    # one column constraint is implied by the others
    A_eq = sp.vstack([rows, cols.tocsr()[:-1]]).tocsc()
    b_eq = np.concatenate([a[ia], b_fit[ib][:-1]])
    res = linprog(sub.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status == 2:
        # presolve can misjudge feasibility when masses span many decades
        res = linprog(sub.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds",
                      options=dict(presolve=False))
    if res.status != 0:
        raise MassMismatch(f"transportation LP failed: {res.message}")
    T = np.zeros((m, n))
    T[np.ix_(ia, ib)] = np.maximum(res.x.reshape(p, q), 0.0)
    return float((T * C).sum()), TransportPlan(T, a, b)


# --------------------------------------------------------------------------
# Sinkhorn


@dataclass
class SinkhornResult:
    """Log scalings of a batch of entropic plans ``diag(u) K diag(v)``."""

    log_u: np.ndarray
    log_v: np.ndarray
    converged: np.ndarray
    n_iter: int
    log_domain: bool

    def plan(self, kernel: GibbsKernel, col: int = 0) -> np.ndarray:
        return np.exp(self.log_u[:, col, None] + kernel.log_K + self.log_v[None, :, col])


def _safe_div(num, den):
    out = np.zeros(np.broadcast_shapes(num.shape, den.shape))
    np.divide(num, den, out=out, where=num > 0)
    return out


def _safe_log(x):
    out = np.full(x.shape, -np.inf)
    np.log(x, out=out, where=x > 0)
    return out


def _chunks(total, per_item):
    step = max(1, _CHUNK_ELEMS // max(per_item, 1))
    for start in range(0, total, step):
        yield slice(start, min(start + step, total))


def _lse(z, axis):
    # plain max-shifted log-sum-exp; scipy's version is slow for many small calls
    top = z.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(z - top).sum(axis=axis)) + np.squeeze(top, axis=axis)


def _lse_rows(log_K, G):
    """``log(K exp(G))`` column by column; ``G`` is ``(n, t)``, output ``(m, t)``."""
    m, n = log_K.shape
    out = np.empty((m, G.shape[1]))
    for sl in _chunks(G.shape[1], m * n):
        out[:, sl] = _lse(log_K[:, :, None] + G[None, :, sl], axis=1)
    return out


def _lse_cols(log_K, F):
    """``log(K^T exp(F))``; ``F`` is ``(m, t)``, output ``(n, t)``."""
    m, n = log_K.shape
    out = np.empty((n, F.shape[1]))
    for sl in _chunks(F.shape[1], m * n):
        out[:, sl] = _lse(log_K[:, :, None] + F[:, None, sl], axis=0)
    return out


def _scalings_ok(*arrays):
    for x in arrays:
        if not np.all(np.isfinite(x)):
            return False
        pos = x[x > 0]
        if pos.size and (pos.max() > _SCALING_LIMIT or pos.min() < 1.0 / _SCALING_LIMIT):
            return False
    return True


def sinkhorn_batch(A, B, kernel: GibbsKernel, max_iter: int = SINKHORN_MAX_ITER,
                   tol: float = SINKHORN_TOL, log_v0=None) -> SinkhornResult:
    """Sinkhorn scaling for every column pair ``(A[:, i], B[:, i])``.

    Every iterate ends with a row update, so row marginals are exact; the
    stopping rule bounds the column violation by ``tol * mass``. Falls back
    to log-sum-exp updates when a scaling leaves ``[1e-290, 1e290]``.
    ``log_v0`` warm-starts the column scaling.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    K = kernel.K
    mass = A.sum(axis=0)
    thresh = tol * np.maximum(mass, np.finfo(float).tiny)

    if log_v0 is None:
        v = np.ones_like(B)
    else:
        log_v0 = np.where(B > 0, log_v0, -np.inf)
        finite = np.isfinite(log_v0)
        hi = np.where(finite, log_v0, -np.inf).max(axis=0)
        lo = np.where(finite, log_v0, np.inf).min(axis=0)
        # centre the range so that both u and v stay representable
        v = np.exp(log_v0 - np.where(np.isfinite(hi), 0.5 * (hi + lo), 0.0))
    u = _safe_div(A, K @ v)
    it = 0
    healthy = _scalings_ok(u, v)
    while healthy:
        KTu = K.T @ u
        converged = np.abs(v * KTu - B).sum(axis=0) <= thresh
        if converged.all() or it >= max_iter:
            res = SinkhornResult(_safe_log(u), _safe_log(v), converged, it, False)
            _warn_unconverged(res)
            return res
        v_new = _safe_div(B, KTu)
        u_new = _safe_div(A, K @ v_new)
        it += 1
        healthy = _scalings_ok(u_new, v_new)
        if healthy:
            u, v = u_new, v_new

    # log-domain continuation from the last sane scalings
    log_A, log_B = _safe_log(A), _safe_log(B)
    if _scalings_ok(v):
        g = _safe_log(v)
    elif log_v0 is not None:
        g = log_v0
    else:
        g = np.where(B > 0, 0.0, -np.inf)
    f = np.where(A > 0, log_A - _lse_rows(kernel.log_K, g), -np.inf)
    while True:
        lse = _lse_cols(kernel.log_K, f)
        converged = np.abs(np.exp(g + lse) - B).sum(axis=0) <= thresh
        if converged.all() or it >= max_iter:
            break
        g = np.where(B > 0, log_B - lse, -np.inf)
        f = np.where(A > 0, log_A - _lse_rows(kernel.log_K, g), -np.inf)
        it += 1
    if not (np.all(np.isfinite(f[A > 0])) and np.all(np.isfinite(g[B > 0]))):
        raise NumericalUnderflow("log-domain Sinkhorn produced non-finite potentials")
    res = SinkhornResult(f, g, converged, it, True)
    _warn_unconverged(res)
    return res


def _warn_unconverged(res: SinkhornResult):
    if not res.converged.all():
        warnings.warn(
            f"Sinkhorn stopped after {res.n_iter} iterations with "
            f"{int((~res.converged).sum())} unconverged column(s)",
            NonConvergenceWarning,
            stacklevel=3,
        )


def entropic_values(A, B, res: SinkhornResult, kernel: GibbsKernel) -> np.ndarray:
    """Regularized objective ``<T, C> + gamma * sum(T log T)`` per column.

    Uses ``gamma * (<a, log u> + <b, log v>)``, valid for ``T = diag(u) K diag(v)``
    with the marginals ``a``, ``b``.
    """
    term_u = np.where(A > 0, A * res.log_u, 0.0).sum(axis=0)
    term_v = np.where(B > 0, B * res.log_v, 0.0).sum(axis=0)
    return kernel.gamma * (term_u + term_v)


def sinkhorn(a, b, kernel: GibbsKernel, max_iter: int = SINKHORN_MAX_ITER,
             tol: float = SINKHORN_TOL) -> tuple[float, TransportPlan]:
    """Entropic transport plan between ``a`` and ``b``.

    Returns the transport part ``<T, C>`` of the cost, not the regularized
    objective; use :func:`entropic_ot` for the latter.
    """
    a, b, mass = _check_pair(a, b, kernel.shape)
    m, n = kernel.shape
    if mass == 0:
        return 0.0, TransportPlan(np.zeros((m, n)), a, b)
    b = b * (mass / b.sum())
    res = sinkhorn_batch(a[:, None], b[:, None], kernel, max_iter, tol)
    T = res.plan(kernel)
    plan = TransportPlan(T, a, b, converged=bool(res.converged[0]), n_iter=res.n_iter)
    return float((T * kernel.cost).sum()), plan


def entropic_ot(a, b, kernel: GibbsKernel, max_iter: int = SINKHORN_MAX_ITER,
                tol: float = SINKHORN_TOL) -> float:
    """Regularized loss ``min_T <T, C> + gamma * sum(T log T)``."""
    a, b, mass = _check_pair(a, b, kernel.shape)
    if mass == 0:
        return 0.0
    b = b * (mass / b.sum())
    res = sinkhorn_batch(a[:, None], b[:, None], kernel, max_iter, tol)
    return float(entropic_values(a[:, None], b[:, None], res, kernel)[0])


# --------------------------------------------------------------------------
# Convex conjugate of the entropic loss in its second argument


def _log_kernel_alpha(Y, kernel: GibbsKernel, X):
    """Stable ``log(K exp(Y / gamma))`` plus the shifted quantities reused by the gradient."""
    gamma = kernel.gamma
    shift = Y.max(axis=0)
    alpha = np.exp((Y - shift) / gamma)
    Ka = kernel.K @ alpha
    bad = np.any((Ka < _TINY) & (X > 0), axis=0)
    return shift, alpha, Ka, bad


def ot_conjugate_batch(X, Y, kernel: GibbsKernel) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate value and gradient for each column pair ``(X[:, i], Y[:, i])``.

    ``value = gamma * (<x, log K alpha> - sum(x log x))`` and
    ``grad = alpha * K^T (x / K alpha)`` with ``alpha = exp(y / gamma)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    gamma = kernel.gamma
    shift, alpha, Ka, bad = _log_kernel_alpha(Y, kernel, X)

    log_Ka = _safe_log(Ka) + shift / gamma
    ratio = _safe_div(X, Ka)
    grad = alpha * (kernel.K.T @ ratio)

    if bad.any():
        idx = np.flatnonzero(bad)
        Yb, Xb = Y[:, idx] / gamma, X[:, idx]
        lk = _lse_rows(kernel.log_K, Yb)
        log_Ka[:, idx] = lk
        # grad_j = sum_i x_i exp(log K_ij + y_j - log(K alpha)_i)
        log_ratio = np.where(Xb > 0, _safe_log(Xb) - lk, -np.inf)
        grad[:, idx] = np.exp(_lse_cols(kernel.log_K, log_ratio) + Yb)
        if not np.all(np.isfinite(lk[Xb > 0])):
            raise NumericalUnderflow("kernel product underflowed in log domain")

    cross = np.where(X > 0, X * log_Ka, 0.0).sum(axis=0)
    value = gamma * (cross - xlogy(X, X).sum(axis=0))
    return value, grad


def ot_conjugate(x, y, kernel: GibbsKernel) -> tuple[float, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m, n = kernel.shape
    if x.shape != (m,) or y.shape != (n,):
        raise DimensionMismatch(f"x {x.shape} and y {y.shape} do not match kernel {kernel.shape}")
    if np.any(x < 0) or not x.any():
        raise ValueError("x must be non-negative and non-zero")
    value, grad = ot_conjugate_batch(x[:, None], y[:, None], kernel)
    return float(value[0]), grad[:, 0]


# --------------------------------------------------------------------------
# Barycenters


def ot_barycenter(histograms, kernel: GibbsKernel, weights=None,
                  max_iter: int = SINKHORN_MAX_ITER, tol: float = SINKHORN_TOL,
                  tau_mass: float = TAU_MASS) -> np.ndarray:
    """Entropic Wasserstein barycenter by iterative Bregman projections.

    ``histograms`` is ``(m, S)`` (one histogram per column) or a list of
    length-``m`` vectors; the barycenter lives on the kernel's target grid.
    The result carries the common input mass.
    """
    H = np.column_stack(histograms) if isinstance(histograms, (list, tuple)) else np.asarray(histograms, dtype=float)
    H = np.asarray(H, dtype=float)
    m, S = H.shape
    if m != kernel.shape[0]:
        raise DimensionMismatch(f"histograms have {m} bins, kernel expects {kernel.shape[0]}")
    w = np.full(S, 1.0 / S) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (S,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
        raise ValueError("weights must lie on the simplex")
    masses = H.sum(axis=0)
    mass = masses.max()
    if np.any(np.abs(masses - mass) > tau_mass * mass):
        raise MassMismatch("barycenter inputs must share the same mass")

    keep = w > 0
    H, w = H[:, keep], w[keep]
    K = kernel.K
    n = kernel.shape[1]

    V = np.ones((n, H.shape[1]))
    p = np.zeros(n)
    converged = False
    log_domain = False
    for it in range(max_iter):
        U = _safe_div(H, K @ V)
        KTU = K.T @ U
        if not _scalings_ok(U, KTU):
            log_domain = True
            break
        p_new = np.exp(_safe_log(KTU) @ w)
        V = _safe_div(np.broadcast_to(p_new[:, None], KTU.shape), KTU)
        change = np.abs(p_new - p).sum()
        p = p_new
        if change <= tol * mass:
            converged = True
            break

    if log_domain:
        p, converged = _barycenter_log(H, kernel, w, max_iter, tol * mass)

    if not converged:
        warnings.warn("barycenter did not reach the fixed-point tolerance",
                      NonConvergenceWarning, stacklevel=2)
    total = p.sum()
    if total > 0:
        p = p * (mass / total)
    return p


def _barycenter_log(H, kernel, w, max_iter, tol):
    log_H = _safe_log(H)
    n = kernel.shape[1]
    g = np.zeros((n, H.shape[1]))
    log_p = np.full(n, -np.inf)
    for _ in range(max_iter):
        f = np.where(H > 0, log_H - _lse_rows(kernel.log_K, g), -np.inf)
        lse = _lse_cols(kernel.log_K, f)
        new_log_p = lse @ w
        g = np.where(np.isfinite(lse), new_log_p[:, None] - lse, 0.0)
        change = np.abs(np.exp(new_log_p) - np.exp(log_p)).sum()
        log_p = new_log_p
        if change <= tol:
            return np.exp(log_p), True
    return np.exp(log_p), False
