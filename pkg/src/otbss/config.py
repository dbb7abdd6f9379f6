"""Run configuration: flat ``key = value`` files with command-line overrides.

``gamma``, ``rho1`` and ``rho2`` are multipliers, not absolute values:
the transport regularization is ``gamma * mean(C)``, the coefficient entropy
weight ``rho1 * mean(C)``, and the dictionary entropy weight
``rho2 * mean(C) * ||X||_1 / k`` for a training matrix ``X``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .errors import InvalidSpec
from .nmf import FitOptions, RegularizerSpec
from .optim import SolverParams
from .spectral import CostSpec

MODES = ("wiener", "generalized", "heuristic")

# file/flag key -> field name
_ALIASES = {"lambda": "lam", "window": "window_size", "hop": "hop_size", "k": "rank"}


@dataclass(frozen=True)
class Config:
    sample_rate: int = 16000
    window_size: int = 1024
    hop_size: int = 0  # 0 means window_size // 2
    rank: int = 5
    gamma: float = 0.005
    rho1: float = 0.01
    rho2: float = 0.01
    lam: float = 100.0
    power: float = 0.5
    # audio-sized problems; the library solver defaults are much tighter
    tol: float = 1e-4
    max_iter: int = 300
    outer_iter: int = 10
    outer_tol: float = 1e-5
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 2000
    seed: int = 0
    silence: float = 1e-6
    mode: str = "generalized"
    objective: str = "dual"
    threads: int = 1

    def __post_init__(self):
        positive = ("sample_rate", "window_size", "rank", "gamma", "rho1", "rho2", "power",
                    "tol", "max_iter", "outer_iter", "sinkhorn_tol", "sinkhorn_max_iter", "threads")
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidSpec(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("hop_size", "lam", "outer_tol", "silence", "seed"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if self.window_size % 2:
            raise InvalidSpec(f"window size must be even, got {self.window_size}")
        if self.hop_size > self.window_size // 2:
            raise InvalidSpec("hop size must not exceed half the window")
        if self.objective not in ("primal", "dual"):
            raise InvalidSpec(f"objective must be 'primal' or 'dual', got {self.objective!r}")
        if self.mode not in MODES:
            raise InvalidSpec(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def hop(self) -> int:
        return self.hop_size or self.window_size // 2

    @property
    def cost_spec(self) -> CostSpec:
        return CostSpec(self.lam, self.power)

    @property
    def solver(self) -> SolverParams:
        return SolverParams(tol=self.tol, max_iter=self.max_iter)

    def fit_options(self) -> FitOptions:
        return FitOptions(max_outer_iter=self.outer_iter, outer_tol=self.outer_tol,
                          solver=self.solver, seed=self.seed, silence=self.silence,
                          sinkhorn_tol=self.sinkhorn_tol, sinkhorn_max_iter=self.sinkhorn_max_iter,
                          objective=self.objective)

    def regularizer(self, cost_mean: float, mass: float, k: int) -> RegularizerSpec:
        return RegularizerSpec(self.gamma * cost_mean, self.rho1 * cost_mean,
                               self.rho2 * cost_mean * mass / k)

    def override(self, **values) -> "Config":
        """Copy with the non-``None`` entries of ``values`` replaced."""
        values = {_ALIASES.get(k, k): v for k, v in values.items() if v is not None}
        return _coerce(self, values)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(base: Config, values: dict) -> Config:
    types = {f.name: type(getattr(base, f.name)) for f in fields(Config)}
    clean = {}
    for key, value in values.items():
        if key not in types:
            raise InvalidSpec(f"unknown configuration key {key!r}")
        try:
            if types[key] is int and isinstance(value, str):
                number = float(value)
                if number != int(number):
                    raise ValueError
                clean[key] = int(number)
            else:
                clean[key] = types[key](value)
        except ValueError:
            raise InvalidSpec(f"{key}: cannot read {value!r} as {types[key].__name__}") from None
    return replace(base, **clean)


def parse_config(text: str, base: Config = Config()) -> Config:
    values = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"line {number}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[_ALIASES.get(key, key)] = value
    return _coerce(base, values)


def load_config(path, base: Config = Config()) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)
