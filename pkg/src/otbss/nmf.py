"""Optimal-transport NMF solved by alternating full dual optimization.

The coefficient problem keeps ``W >= 0`` unnormalized, regularized by
``rho1 * sum(W log W)``; the dictionary problem keeps every atom on the simplex,
regularized by ``rho2 * sum(D log D)``. Both sub-problems are solved in the dual
with :func:`otbss.optim.minimize_smooth` and mapped back through the
closed-form primal-dual relations.

Shapes: ``X`` is ``(m, t)`` on the data grid, ``D`` is ``(n, k)`` on the
dictionary grid and the Gibbs kernel is ``(m, n)``. For training both grids
coincide.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax, xlogy

from .errors import (DegenerateWeights, DimensionMismatch, InvalidRank, NoTrainingFrames,
                     NonConvergenceWarning)
from .optim import SolverParams, minimize_smooth
from .ot_core import (
    CostMatrix,
    GibbsKernel,
    entropic_values,
    ot_barycenter,
    ot_conjugate_batch,
    sinkhorn_batch,
)


@dataclass(frozen=True)
class RegularizerSpec:
    gamma: float
    rho1: float
    rho2: float

    def __post_init__(self):
        for name in ("gamma", "rho1", "rho2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def default(cls, cost, X=None, k: int = 1) -> "RegularizerSpec":
        """Defaults tied to the mean ground cost.

        ``rho2`` is also multiplied by the mass each atom explains on average
        (``||X||_1 / k``), so the dictionary smoothing does not depend on the
        loudness or length of the training data.
        """
        c = cost.mean if isinstance(cost, CostMatrix) else float(np.mean(cost))
        usage = 1.0 if X is None else float(np.asarray(X).sum()) / k
        return cls(gamma=c / 200, rho1=c / 100, rho2=c / 100 * usage)


@dataclass
class Dictionary:
    atoms: np.ndarray
    frequency_grid: np.ndarray | None = None
    source_labels: list | None = None

    @property
    def rank(self) -> int:
        return self.atoms.shape[1]

    @staticmethod
    def concatenate(dicts: list["Dictionary"]) -> "Dictionary":
        labels = []
        for d in dicts:
            labels.extend(d.source_labels or [None] * d.rank)
        return Dictionary(np.hstack([d.atoms for d in dicts]), dicts[0].frequency_grid, labels)


@dataclass
class DualState:
    g: np.ndarray
    objective_trace: list = field(default_factory=list)
    converged: bool | np.ndarray = False
    value: float | np.ndarray = np.nan


@dataclass
class FitOptions:
    max_outer_iter: int = 50
    outer_tol: float = 1e-5
    solver: SolverParams = SolverParams()
    seed: int = 0
    silence: float = 1e-6
    init_noise: float = 0.05
    # the initial barycenter uses gamma >= init_smoothing * mean(C); it only seeds the dictionary
    init_smoothing: float = 0.02
    init_max_iter: int = 500
    init_tol: float = 1e-6
    # "primal": evaluate the objective with Sinkhorn; "dual": use the negated
    # coefficient dual value, exact at convergence and free to compute
    objective: str = "primal"
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 5000


@dataclass
class NmfModel:
    dictionary: Dictionary
    coefficients: np.ndarray
    reg: RegularizerSpec | None
    objective_trace: list
    active: np.ndarray
    converged: bool = False

    def reconstruction(self) -> np.ndarray:
        return self.dictionary.atoms @ self.coefficients


# --------------------------------------------------------------------------
# conjugates of the entropic regularizers


def regularizer_conjugates(rho: float, x, mode: str = "simplex"):
    """Value and gradient of the conjugate of ``rho * sum(w log w)``.

    ``simplex``: ``w`` restricted to the simplex, giving ``rho * logsumexp(x / rho)``
    with a softmax gradient. ``orthant``: ``w >= 0``, giving
    ``rho * sum(exp(x / rho - 1))``. A 2-D ``x`` is handled column by column.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    x = np.asarray(x, dtype=float)
    if mode == "simplex":
        value = rho * logsumexp(x / rho, axis=0)
        grad = softmax(x / rho, axis=0)
    elif mode == "orthant":
        grad = np.exp(x / rho - 1.0)
        value = rho * grad.sum(axis=0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return (float(value) if np.ndim(value) == 0 else value), grad


# --------------------------------------------------------------------------
# primal objective


def primal_objective(X, D, W, reg: RegularizerSpec, kernel: GibbsKernel, *,
                     include_dictionary: bool = True, tol: float = 1e-10,
                     max_iter: int = 5000, warm_g=None) -> float:
    """``sum_i OT_gamma(x_i, D w_i) + rho1 sum W log W (+ rho2 sum D log D)``.

    Columns of ``D W`` are rescaled to the mass of ``X`` before transport,
    which removes solver-level mass drift. ``warm_g`` (dual variables with
    ``v = exp(g / gamma)``) warm-starts Sinkhorn.
    """
    X = np.asarray(X, dtype=float)
    Z = D @ W
    mass = X.sum(axis=0)
    zm = Z.sum(axis=0)
    live = mass > 0
    Z = Z[:, live] * (mass[live] / zm[live])
    res = sinkhorn_batch(X[:, live], Z, kernel, max_iter=max_iter, tol=tol,
                         log_v0=None if warm_g is None else warm_g[:, live] / kernel.gamma)
    total = entropic_values(X[:, live], Z, res, kernel).sum()
    total += reg.rho1 * xlogy(W, W).sum()
    if include_dictionary:
        total += reg.rho2 * xlogy(D, D).sum()
    return float(total)


# --------------------------------------------------------------------------
# sub-problems


_EXP_CAP = np.log(np.finfo(float).max) - 1.0


def _active_columns(X, silence):
    mass = X.sum(axis=0)
    top = mass.max() if mass.size else 0.0
    return (mass > silence * top) & (mass > 0)


def _coefficient_dual(X, D, rho1, kernel):
    def fun(G):
        val, grad = ot_conjugate_batch(X, G, kernel)
        W = np.exp(-(D.T @ G) / rho1 - 1.0)
        return val + rho1 * W.sum(axis=0), grad - D @ W

    return fun


def update_coefficients(X, D, reg: RegularizerSpec, kernel: GibbsKernel,
                        solver: SolverParams = SolverParams(), g0=None,
                        active=None) -> tuple[np.ndarray, DualState]:
    """Optimal unnormalized coefficients for a fixed dictionary.

    Each active column solves ``min_g OT*(x, g) + R1*(-D^T g)`` and maps back
    through ``w = exp(-D^T g / rho1 - 1)``. Inactive (silent) columns get
    ``w = 0``.
    """
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    m, t = X.shape
    if kernel.shape != (m, D.shape[0]):
        raise DimensionMismatch(f"kernel {kernel.shape} does not match X {X.shape} and D {D.shape}")
    if active is None:
        active = X.sum(axis=0) > 0
    n, k = D.shape
    G = np.zeros((n, t)) if g0 is None else np.array(g0, dtype=float)
    W = np.zeros((k, t))
    value = np.zeros(t)
    converged = np.ones(t, dtype=bool)
    if active.any():
        Xa = X[:, active]
        mass = Xa.sum(axis=0)
        fun = _coefficient_dual(Xa, D, reg.rho1, kernel)
        step0 = 1.0 / (mass * (1.0 / kernel.gamma + 1.0 / reg.rho1))
        start = G[:, active]
        if g0 is not None:
            # a warm start from another dictionary can sit far out on the exponential; keep
            # it only for columns where it beats the cold start
            with np.errstate(over="ignore", invalid="ignore"):
                warm, _ = fun(start)
                cold, _ = fun(np.zeros_like(start))
            start = np.where(np.nan_to_num(warm, nan=np.inf) <= cold, start, 0.0)
        res = minimize_smooth(fun, start, solver, batched=True, tol_scale=mass, step0=step0)
        G[:, active] = res.x
        # an unconverged dual can overflow the primal map; cap it at the largest finite exponent
        W[:, active] = np.exp(np.minimum(-(D.T @ res.x) / reg.rho1 - 1.0, _EXP_CAP))
        value[active] = res.value
        converged[active] = res.converged
        trace = res.trace
    else:
        trace = []
    return W, DualState(G, trace, converged, value)


def _mass_feasible(W, X):
    """Rescale columns of ``W`` so ``sum_k w_ki = ||x_i||_1`` exactly."""
    s = W.sum(axis=0)
    mass = X.sum(axis=0)
    scale = np.divide(mass, s, out=np.zeros_like(s), where=s > 0)
    return W * scale


def update_dictionary(X, W, reg: RegularizerSpec, kernel: GibbsKernel,
                      solver: SolverParams = SolverParams(), g0=None,
                      fallback_atoms=None) -> tuple[np.ndarray, DualState]:
    """Optimal simplex-constrained dictionary for fixed coefficients.

    Solves ``min_G sum_i OT*(x_i, g_i) + sum_k R2*(-G w_k)`` over the whole
    ``(n, t)`` dual matrix and returns ``D = softmax(-G W^T / rho2)``. Columns
    of ``W`` are first rescaled so each matches the mass of its frame, without
    which the problem is infeasible. Atoms whose weight row is identically
    zero are replaced by the matching column of ``fallback_atoms``.
    """
    X = np.asarray(X, dtype=float)
    W = _mass_feasible(np.asarray(W, dtype=float), X)
    m, t = X.shape
    n = kernel.shape[1]
    if kernel.shape[0] != m or W.shape[1] != t:
        raise DimensionMismatch("X, W and kernel shapes are inconsistent")
    rho2 = reg.rho2

    def fun(G):
        val, grad = ot_conjugate_batch(X, G, kernel)
        Z = -(G @ W.T) / rho2
        Dm = softmax(Z, axis=0)
        return val.sum() + rho2 * logsumexp(Z, axis=0).sum(), grad - Dm @ W

    G0 = np.zeros((n, t)) if g0 is None else np.array(g0, dtype=float)
    total = X.sum()
    res = minimize_smooth(fun, G0, solver, tol_scale=total,
                               step0=1.0 / (total / kernel.gamma + total / rho2))
    D = softmax(-(res.x @ W.T) / rho2, axis=0)
    dead = ~np.any(W > 0, axis=1)
    if dead.any():
        if fallback_atoms is None:
            raise DegenerateWeights(f"atoms {np.flatnonzero(dead).tolist()} have all-zero weights")
        D[:, dead] = fallback_atoms[:, dead]
    return D, DualState(res.x, res.trace, bool(res.converged), float(res.value))


# --------------------------------------------------------------------------
# initialization and alternating minimization


def barycenter_init(X, k: int, kernel: GibbsKernel, rng: np.random.Generator,
                    noise: float = 0.05, max_iter: int = 2000, tol: float = 1e-9) -> np.ndarray:
    """Barycenter of the unit-mass frames plus independent Gaussian noise per atom.

    Noise rows are drawn in an order fixed by the data itself, so permuting
    the frequency bins permutes the initial dictionary the same way.
    """
    H = X / X.sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        bary = ot_barycenter(H, kernel, max_iter=max_iter, tol=tol)
    n = bary.size
    draws = rng.standard_normal((n, k))
    order = np.lexsort(X[:, ::-1].T)
    eps = np.empty_like(draws)
    eps[order] = draws
    D = bary[:, None] + noise * bary.max() * eps
    D = np.maximum(D, 1e-12)
    return D / D.sum(axis=0)


def fit(X, k: int, reg: RegularizerSpec, C, opts: FitOptions = FitOptions(),
        D0=None) -> NmfModel:
    """Alternating minimization of the OT-NMF objective.

    Stops when the relative objective change between outer iterations drops
    below ``opts.outer_tol`` or after ``opts.max_outer_iter`` iterations.
    """
    X = np.asarray(X, dtype=float)
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidRank(f"rank must be a positive integer, got {k!r}")
    cost = C if isinstance(C, CostMatrix) else CostMatrix(C)
    m, t = X.shape
    if cost.shape != (m, m):
        raise DimensionMismatch(f"training cost must be {m}x{m}, got {cost.shape}")
    if np.any(X < 0):
        raise ValueError("X must be non-negative")
    active = _active_columns(X, opts.silence)
    if not active.any():
        raise NoTrainingFrames("no non-silent frame to fit")

    Xa = X[:, active]
    kernel = GibbsKernel(cost, reg.gamma)
    rng = np.random.default_rng(opts.seed)
    init_kernel = GibbsKernel(cost, max(reg.gamma, opts.init_smoothing * cost.mean))
    bary_atoms = lambda: barycenter_init(Xa, k, init_kernel, rng, opts.init_noise,  # noqa: E731
                                         opts.init_max_iter, opts.init_tol)
    D = bary_atoms() if D0 is None else np.asarray(D0, dtype=float)

    if opts.objective not in ("primal", "dual"):
        raise ValueError(f"objective must be 'primal' or 'dual', got {opts.objective!r}")

    def objective(D, W, dual):
        if opts.objective == "dual":
            return float(-np.sum(dual.value) + reg.rho2 * xlogy(D, D).sum())
        return primal_objective(Xa, D, W, reg, kernel, tol=opts.sinkhorn_tol,
                                max_iter=opts.sinkhorn_max_iter, warm_g=dual.g)

    W, wdual = update_coefficients(Xa, D, reg, kernel, opts.solver)
    W = _mass_feasible(W, Xa)
    trace = [objective(D, W, wdual)]
    G_d = None
    converged = False
    for _ in range(opts.max_outer_iter):
        fallback = bary_atoms() if not np.all(np.any(W > 0, axis=1)) else None
        D, ddual = update_dictionary(Xa, W, reg, kernel, opts.solver, g0=G_d, fallback_atoms=fallback)
        G_d = ddual.g
        W, wdual = update_coefficients(Xa, D, reg, kernel, opts.solver, g0=wdual.g)
        W = _mass_feasible(W, Xa)
        trace.append(objective(D, W, wdual))
        if abs(trace[-2] - trace[-1]) <= opts.outer_tol * max(abs(trace[-1]), 1e-300):
            converged = True
            break

    W_full = np.zeros((k, t))
    W_full[:, active] = W
    grid = cost.source_grid
    return NmfModel(Dictionary(D, grid), W_full, reg, trace, active, converged)


# --------------------------------------------------------------------------
# Euclidean baseline


@dataclass
class EuclideanOptions:
    max_iter: int = 500
    tol: float = 1e-8
    seed: int = 0
    eps: float = 1e-12


def _lee_seung_w(X, D, W, eps):
    return W * (D.T @ X) / (D.T @ D @ W + eps)


def fit_euclidean(X, k: int, opts: EuclideanOptions = EuclideanOptions()) -> NmfModel:
    """Squared-Euclidean NMF with Lee-Seung multiplicative updates.

    Atoms are rescaled to unit mass at the end (weights absorb the scale), so
    the dictionary has the same normalization as the transport model.
    """
    X = np.asarray(X, dtype=float)
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidRank(f"rank must be a positive integer, got {k!r}")
    rng = np.random.default_rng(opts.seed)
    m, t = X.shape
    scale = np.sqrt(max(X.mean(), 1e-12) / k)
    D = rng.random((m, k)) * scale + opts.eps
    W = rng.random((k, t)) * scale + opts.eps
    trace = [0.5 * np.sum((X - D @ W) ** 2)]
    converged = False
    for _ in range(opts.max_iter):
        W = _lee_seung_w(X, D, W, opts.eps)
        D = D * (X @ W.T) / (D @ W @ W.T + opts.eps)
        trace.append(0.5 * np.sum((X - D @ W) ** 2))
        if trace[-2] - trace[-1] <= opts.tol * max(trace[-2], 1e-300):
            converged = True
            break
    norms = D.sum(axis=0)
    norms[norms == 0] = 1.0
    D = D / norms
    W = W * norms[:, None]
    return NmfModel(Dictionary(D), W, None, trace, np.ones(t, dtype=bool), converged)


def euclidean_coefficients(X, D, n_iter: int = 500, eps: float = 1e-12, seed: int = 0) -> np.ndarray:
    """Multiplicative-update coefficients for a fixed dictionary."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    W = rng.random((D.shape[1], X.shape[1])) * max(X.mean(), 1e-12) + eps
    for _ in range(n_iter):
        W = _lee_seung_w(X, D, W, eps)
    return W
