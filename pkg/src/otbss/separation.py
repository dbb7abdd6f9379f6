"""Supervised separation with per-source transport dictionaries.

Training learns one dictionary per source. At test time the dictionaries are
concatenated, a single coefficient matrix is solved against the mixture, and
the per-source reconstructions ``D_k W_k`` are turned into test-domain
magnitudes by a Wiener filter, the transport-based generalized filter, or
nearest-bin mapping followed by a Wiener filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import Signal, Spectrogram, istft, reattach_phase, stft
from .config import MODES, Config
from .errors import DimensionMismatch, GridMismatch, MassMismatch, NoTrainingFrames
from .nmf import (Dictionary, EuclideanOptions, NmfModel, RegularizerSpec,
                  euclidean_coefficients, fit, fit_euclidean, update_coefficients)
from .ot_core import GibbsKernel, _lse_rows, exact_ot, sinkhorn_batch
from .spectral import CostSpec, build_cost, heuristic_map


@dataclass(frozen=True)
class SourceModel:
    dictionaries: list
    training_grid: np.ndarray
    reg: RegularizerSpec
    cost_spec: CostSpec = CostSpec()

    def __post_init__(self):
        grid = np.asarray(self.training_grid, dtype=float)
        for d in self.dictionaries:
            if d.atoms.shape[0] != grid.size:
                raise DimensionMismatch(f"dictionary has {d.atoms.shape[0]} rows, grid has {grid.size}")
            if not np.allclose(d.atoms.sum(axis=0), 1.0, atol=1e-9):
                raise ValueError("dictionary atoms must sum to one")
        object.__setattr__(self, "training_grid", grid)

    @property
    def labels(self) -> list:
        return [(d.source_labels or [f"source{i}"])[0] for i, d in enumerate(self.dictionaries)]

    @property
    def ranks(self) -> list:
        return [d.rank for d in self.dictionaries]


@dataclass
class SeparationResult:
    model_magnitudes: list
    test_magnitudes: list
    coefficients: list
    mode: str
    dual: np.ndarray | None = None
    active: np.ndarray | None = None
    info: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# training


def train_source_model(signal: Signal, k: int, config: Config = Config(),
                       label: str | None = None) -> NmfModel:
    """Fit an OT-NMF dictionary to one source's magnitude spectrogram."""
    spec = stft(signal, config.window_size, config.hop)
    X = spec.magnitude
    if not X.any():
        raise NoTrainingFrames("training audio is silent")
    grid = spec.frequency_grid
    cost = build_cost(grid, grid, config.cost_spec)
    reg = config.regularizer(cost.mean, X.sum(), k)
    model = fit(X, k, reg, cost, config.fit_options())
    model.dictionary.source_labels = [label] * k
    return model


def train_source(signal: Signal, k: int, config: Config = Config(),
                 label: str | None = None) -> Dictionary:
    return train_source_model(signal, k, config, label).dictionary


def build_model(dictionaries: list, config: Config, training_grid) -> SourceModel:
    """Bundle trained dictionaries with the regularization used at test time.

    ``gamma`` and ``rho1`` are taken relative to the mean training cost.
    """
    grid = np.asarray(training_grid, dtype=float)
    c = build_cost(grid, grid, config.cost_spec).mean
    reg = RegularizerSpec(config.gamma * c, config.rho1 * c, config.rho2 * c)
    return SourceModel(list(dictionaries), grid, reg, config.cost_spec)


# --------------------------------------------------------------------------
# filters


def _ratios(parts):
    total = parts.sum(axis=0)
    n = parts.shape[0]
    # 0/0 bins are split evenly
    return np.where(total > 0, parts / np.where(total > 0, total, 1.0), 1.0 / n)


def _exact_split(total, outs):
    """``outs`` plus a remainder, adjusted so their floating-point sum is exactly ``total``.

    The given outputs are truncated to multiples of the spacing of ``total``
    (a change of at most one ulp), which makes every partial sum and the
    remainder exactly representable.
    """
    if np.iscomplexobj(total):
        re = _exact_split(total.real, [o.real for o in outs])
        im = _exact_split(total.imag, [o.imag for o in outs])
        return [r + 1j * i for r, i in zip(re, im)]
    q = np.spacing(np.abs(total))
    outs = [np.trunc(o / q) * q for o in outs]
    return outs + [total - sum(outs)]


def wiener_filter(X, parts) -> list:
    """``X * part_k / sum(parts)``; the last output takes the remainder so outputs sum to ``X``."""
    X = np.asarray(X, dtype=float)
    parts = np.asarray([np.asarray(p, dtype=float) for p in parts])
    if parts.ndim < 2 or parts.shape[1:] != X.shape:
        raise DimensionMismatch(f"parts of shape {parts.shape[1:]} do not match X {X.shape}")
    if np.any(parts < 0):
        raise ValueError("parts must be non-negative")
    return _exact_split(X, list(X * _ratios(parts)[:-1]))


def generalized_filter_batch(X, parts, kernel: GibbsKernel, *, exact: bool = False,
                             warm_g=None, tol: float = 1e-6, max_iter: int = 2000) -> list:
    """Split every test frame ``x_i`` through a transport plan to ``sum_k part_k``.

    ``X`` is ``(m, t)`` on the test grid, each part ``(n, t)`` on the model grid,
    and ``kernel`` is ``(m, n)``. The parts are rescaled to the mass of each
    frame, a plan ``T`` with row marginal ``x_i`` is computed (entropic by
    default, exact LP if ``exact``), and ``x_hat_k = T (part_k / sum(parts))``.
    Rows of ``T`` sum to ``x_i`` so the outputs add up to ``X``.
    """
    X = np.asarray(X, dtype=float)
    parts = np.asarray([np.asarray(p, dtype=float) for p in parts])
    m, t = X.shape
    N, n = parts.shape[0], parts.shape[1]
    if kernel.shape != (m, n) or parts.shape[2:] != (t,):
        raise DimensionMismatch(f"kernel {kernel.shape}, X {X.shape}, parts {parts.shape[1:]}")
    if np.any(parts < 0) or np.any(X < 0):
        raise ValueError("inputs must be non-negative")
    total = parts.sum(axis=0)
    R = _ratios(parts)
    xm, pm = X.sum(axis=0), total.sum(axis=0)
    live = (xm > 0) & (pm > 0)
    out = np.zeros((N, m, t))
    # no model mass to follow: split evenly
    idle = (xm > 0) & ~live
    out[:, :, idle] = X[:, idle] / N
    if not live.any():
        return list(out)
    B = total[:, live] * (xm[live] / pm[live])
    A = X[:, live]
    if abs(B.sum() - A.sum()) > 1e-6 * A.sum():
        raise MassMismatch("rescaled parts do not match the frame masses")
    if exact:
        for col, i in enumerate(np.flatnonzero(live)):
            _, plan = exact_ot(A[:, col], B[:, col], kernel.cost)
            T = plan.entries
            out[:, :, i] = np.einsum("mn,kn->km", T, R[:, :, i])
        return list(out)

    res = sinkhorn_batch(A, B, kernel, max_iter=max_iter, tol=tol,
                         log_v0=None if warm_g is None else warm_g[:, live] / kernel.gamma)
    Rl = R[:, :, live]
    if res.log_domain:
        with np.errstate(divide="ignore"):
            for j in range(N):
                out[j][:, live] = np.exp(res.log_u + _lse_rows(kernel.log_K, res.log_v + np.log(Rl[j])))
    else:
        u, v = np.exp(res.log_u), np.exp(res.log_v)
        for j in range(N):
            out[j][:, live] = u * (kernel.K @ (v * Rl[j]))
    return list(out)


def generalized_filter(x, parts, C, gamma: float, *, exact: bool = False) -> list:
    """Single-frame generalized filter; ``C`` is test grid (rows) by model grid."""
    x = np.asarray(x, dtype=float)
    kernel = GibbsKernel.from_cost(C, gamma)
    outs = generalized_filter_batch(x[:, None], [np.asarray(p, dtype=float)[:, None] for p in parts],
                                    kernel, exact=exact)
    return [o[:, 0] for o in outs]


# --------------------------------------------------------------------------
# separation


def _same_grid(a, b) -> bool:
    return a.shape == b.shape and np.allclose(a, b, rtol=1e-12, atol=0)


def separate(mixture: Spectrogram, model: SourceModel, config: Config = Config(),
             mode: str | None = None) -> SeparationResult:
    """Decompose the mixture over the concatenated dictionaries and filter.

    The coefficient problem is solved with a cost between the mixture grid
    (rows) and the training grid, so the two grids may differ.
    """
    mode = config.mode if mode is None else mode
    X = mixture.magnitude
    D = np.hstack([d.atoms for d in model.dictionaries])
    cost = build_cost(mixture.frequency_grid, model.training_grid, model.cost_spec)
    kernel = GibbsKernel.from_cost(cost, model.reg.gamma)
    mass = X.sum(axis=0)
    top = mass.max() if mass.size else 0.0
    active = (mass > config.silence * top) & (mass > 0)
    W, dual = update_coefficients(X, D, model.reg, kernel, config.solver, active=active)
    blocks = np.cumsum([0] + model.ranks)
    coeffs = [W[blocks[j]:blocks[j + 1]] for j in range(len(model.ranks))]
    parts = [d.atoms @ w for d, w in zip(model.dictionaries, coeffs)]
    result = SeparationResult(parts, [], coeffs, mode, dual.g, active,
                              info=dict(converged=bool(np.all(dual.converged))))
    result.test_magnitudes = apply_filter(result, mixture, model, config, mode)
    return result


def apply_filter(result: SeparationResult, mixture: Spectrogram, model: SourceModel,
                 config: Config = Config(), mode: str = "generalized") -> list:
    """Test-domain magnitudes of each source, summing to the mixture magnitude."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    X = mixture.magnitude
    test_grid = mixture.frequency_grid
    if mode == "wiener":
        if not _same_grid(test_grid, model.training_grid):
            raise GridMismatch("Wiener filtering needs the test STFT on the training grid; "
                               "use the generalized or heuristic mode for cross-domain input")
        return wiener_filter(X, result.model_magnitudes)
    if mode == "heuristic":
        mapped = [heuristic_map(p, model.training_grid, test_grid, model.cost_spec)
                  for p in result.model_magnitudes]
        return wiener_filter(X, mapped)
    cost = build_cost(test_grid, model.training_grid, model.cost_spec)
    kernel = GibbsKernel.from_cost(cost, model.reg.gamma)
    return generalized_filter_batch(X, result.model_magnitudes, kernel, warm_g=result.dual,
                                    tol=config.sinkhorn_tol, max_iter=config.sinkhorn_max_iter)


def split_spectrogram(magnitudes: list, mixture: Spectrogram) -> list:
    """Complex per-source spectrograms sharing the mixture phase.

    The DC row is split in proportion to each source's share of the frame
    mass, the last source taking the remainder, so the complex spectrograms
    add up to the mixture.
    """
    mags = np.asarray(magnitudes)
    shares = _ratios(mags.sum(axis=1))
    dc = mixture.dc_row
    dcs = _exact_split(dc, [dc * s for s in shares[:-1]])
    out = []
    for mag, d in zip(mags, dcs):
        spec = reattach_phase(mag, mixture)
        frames = spec.complex_frames.copy()
        frames[0] = d
        out.append(Spectrogram(frames, spec.sample_rate, spec.window_size, spec.hop_size, spec.length))
    return out


def reconstruct(result: SeparationResult, mixture: Spectrogram, mode: str | None = None,
                model: SourceModel | None = None, config: Config = Config()) -> list:
    """Per-source time signals. Re-filters when ``mode`` differs from the stored one."""
    mags = result.test_magnitudes
    if mode is not None and mode != result.mode:
        if model is None:
            raise ValueError("a model is needed to re-filter in another mode")
        mags = apply_filter(result, mixture, model, config, mode)
    return [istft(s) for s in split_spectrogram(mags, mixture)]


def conservation_residual(magnitudes: list, mixture: Spectrogram) -> np.ndarray:
    """Per-frame L1 distance between the summed source magnitudes and the mixture."""
    return np.abs(np.sum(magnitudes, axis=0) - mixture.magnitude).sum(axis=0)


# --------------------------------------------------------------------------
# Euclidean baseline


def train_euclidean(signal: Signal, k: int, config: Config = Config()) -> Dictionary:
    spec = stft(signal, config.window_size, config.hop)
    model = fit_euclidean(spec.magnitude, k, EuclideanOptions(seed=config.seed))
    return Dictionary(model.dictionary.atoms, spec.frequency_grid)


def separate_euclidean(mixture: Spectrogram, dictionaries: list, config: Config = Config()) -> list:
    """Same-domain Euclidean NMF separation with a Wiener filter."""
    D = np.hstack([d.atoms for d in dictionaries])
    if D.shape[0] != mixture.magnitude.shape[0]:
        raise GridMismatch("Euclidean separation needs the training grid")
    W = euclidean_coefficients(mixture.magnitude, D, seed=config.seed)
    blocks = np.cumsum([0] + [d.rank for d in dictionaries])
    parts = [d.atoms @ W[blocks[j]:blocks[j + 1]] for j, d in enumerate(dictionaries)]
    return wiener_filter(mixture.magnitude, parts)
