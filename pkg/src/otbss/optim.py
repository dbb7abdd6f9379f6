"""Smooth unconstrained minimization for the dual sub-problems.

Two methods are available: Nesterov's accelerated gradient with backtracking
and adaptive restart (``"agd"``), and scipy's L-BFGS-B (``"lbfgs"``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import minimize

from .errors import NonConvergenceWarning


@dataclass(frozen=True)
class SolverParams:
    method: str = "lbfgs"
    tol: float = 1e-7
    max_iter: int = 5000
    armijo: float = 1e-4
    step0: float = 1.0
    growth: float = 1.25
    max_backtracks: int = 60
    history: int = 20


@dataclass
class AGDResult:
    x: np.ndarray
    value: np.ndarray
    grad_norm: np.ndarray
    converged: np.ndarray
    n_iter: int
    trace: list = field(default_factory=list)


def accelerated_gradient(fun, x0, params: SolverParams = SolverParams(), *,
                         batched: bool = False, tol_scale=None, step0=None) -> AGDResult:
    """Minimize a smooth convex function.

    ``fun(x)`` returns ``(value, grad)``. With ``batched=True``, ``x`` has
    shape ``(d, B)`` and holds ``B`` independent problems: ``value`` has shape
    ``(B,)`` and every column gets its own step size, restart and stopping
    test. Otherwise ``x`` is any array and ``value`` a scalar.

    A column stops once ``||grad||_2 <= params.tol * tol_scale``. An iterate
    that would increase the objective is rejected and the momentum reset, so
    ``trace`` (the summed objective) never increases beyond rounding.
    """
    x0 = np.asarray(x0, dtype=float)
    if batched:
        shape = x0.shape
        call = fun
    else:
        shape = x0.shape
        x0 = x0.reshape(-1, 1)

        def call(z):
            v, g = fun(z.reshape(shape))
            return np.atleast_1d(np.asarray(v, dtype=float)), np.asarray(g, dtype=float).reshape(-1, 1)

    B = x0.shape[1]
    tol = params.tol * (np.ones(B) if tol_scale is None else np.broadcast_to(tol_scale, (B,)))
    step = np.full(B, params.step0, dtype=float) if step0 is None else np.array(
        np.broadcast_to(step0, (B,)), dtype=float)

    x = x0.copy()
    fx, gx = call(x)
    if not np.all(np.isfinite(fx)):
        raise ValueError("objective is not finite at the initial point")
    y, fy, gy = x, fx, gx
    theta = np.ones(B)
    trace = [float(fx.sum())]
    gnorm = np.linalg.norm(gx, axis=0)
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while it < params.max_iter and not np.all(gnorm <= tol):
            it += 1
            gy2 = (gy * gy).sum(axis=0)
            s = step.copy()
            done = np.zeros(B, dtype=bool)
            xn = y.copy()
            fn = np.full(B, np.inf)
            gn = np.zeros_like(gy)
            for _ in range(params.max_backtracks):
                trial = y - s * gy
                ft, gt = call(trial)
                # By convexity f(y) - f(trial) >= s <g(trial), g(y)>, which certifies
                # the Armijo decrease when rounding hides it in f itself.
                ok = np.isfinite(ft) & (
                    (ft <= fy - params.armijo * s * gy2)
                    | ((gt * gy).sum(axis=0) >= params.armijo * gy2)
                ) & ~done
                xn[:, ok], fn[ok], gn[:, ok] = trial[:, ok], ft[ok], gt[:, ok]
                done |= ok
                if done.all():
                    break
                s = np.where(done, s, 0.5 * s)

            # monotone restart: keep x and drop the momentum where f went up;
            # <g(xn), xn - x> <= 0 certifies f(xn) <= f(x)
            worse = ~((fn <= fx) | ((gn * (xn - x)).sum(axis=0) <= 0)) | ~done
            xn[:, worse], fn[worse], gn[:, worse] = x[:, worse], fx[worse], gx[:, worse]
            # gradient restart: momentum pointing uphill is dropped as well
            restart = worse | ((gy * (xn - x)).sum(axis=0) > 0)
            theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta ** 2))
            beta = np.where(restart, 0.0, (theta - 1.0) / theta_new)
            theta = np.where(restart, 1.0, theta_new)

            y = xn + beta * (xn - x)
            x, fx, gx = xn, fn, gn
            if np.any(beta > 0):
                fy, gy = call(y)
                bad = ~np.isfinite(fy)
                if bad.any():
                    y[:, bad], fy[bad], gy[:, bad] = x[:, bad], fx[bad], gx[:, bad]
                    theta[bad] = 1.0
            else:
                fy, gy = fx, gx
            step = np.where(restart, s * params.growth, s)
            gnorm = np.linalg.norm(gx, axis=0)
            trace.append(float(fx.sum()))

    converged = gnorm <= tol
    if not converged.all():
        warnings.warn(
            f"accelerated gradient stopped after {it} iterations; "
            f"max gradient norm {gnorm.max():.3g}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    if not batched:
        return AGDResult(x.reshape(shape), fx[0], gnorm[0], converged[0], it, trace)
    return AGDResult(x, fx, gnorm, converged, it, trace)


def lbfgs(fun, x0, params: SolverParams = SolverParams(), *, batched: bool = False,
          tol_scale=None) -> AGDResult:
    """L-BFGS-B on the same interface as :func:`accelerated_gradient`.

    Batched problems are independent, so they are solved jointly as their sum.
    The run stops once every column passes its own gradient test.
    """
    x0 = np.asarray(x0, dtype=float)
    shape = x0.shape
    B = shape[1] if batched else 1
    tol = params.tol * (np.ones(B) if tol_scale is None else np.broadcast_to(tol_scale, (B,)))
    trace = []
    last = {}

    def joint(z):
        with np.errstate(over="ignore", invalid="ignore"):
            v, g = fun(z.reshape(shape))
        total = float(np.sum(v))
        if not np.isfinite(total):
            return np.inf, np.zeros_like(z)
        g = np.asarray(g, dtype=float)
        trace.append(total)
        last[z.tobytes()] = np.linalg.norm(g.reshape(shape[0], -1) if batched else g.reshape(-1, 1), axis=0)
        return total, g.ravel()

    def stop(intermediate_result):
        norms = last.get(intermediate_result.x.tobytes())
        last.clear()
        if norms is not None and np.all(norms <= tol):
            raise StopIteration

    res = minimize(joint, x0.ravel(), jac=True, method="L-BFGS-B", callback=stop,
                   options=dict(maxiter=params.max_iter, maxfun=10 * params.max_iter,
                                maxcor=params.history, gtol=0.0, ftol=0.0))
    x = res.x.reshape(shape)
    value, grad = fun(x)
    grad = np.asarray(grad).reshape(shape[0], -1) if batched else np.asarray(grad).reshape(-1, 1)
    gnorm = np.linalg.norm(grad, axis=0)
    converged = gnorm <= tol
    if not converged.all():
        warnings.warn(
            f"L-BFGS stopped after {res.nit} iterations ({res.message}); "
            f"max gradient norm {gnorm.max():.3g}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    if not batched:
        return AGDResult(x, float(np.sum(value)), gnorm[0], converged[0], res.nit, trace)
    return AGDResult(x, np.asarray(value), gnorm, converged, res.nit, trace)


def minimize_smooth(fun, x0, params: SolverParams = SolverParams(), *, batched: bool = False,
                    tol_scale=None, step0=None) -> AGDResult:
    if params.method == "agd":
        return accelerated_gradient(fun, x0, params, batched=batched, tol_scale=tol_scale, step0=step0)
    if params.method == "lbfgs":
        return lbfgs(fun, x0, params, batched=batched, tol_scale=tol_scale)
    raise ValueError(f"unknown solver method {params.method!r}")
