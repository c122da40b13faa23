"""Run configuration: a flat dataclass loaded from YAML, unknown keys rejected."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Literal

import yaml

from ..errors import BudgetError, ConfigError

Policy = Literal["oed", "random", "tracing"]
Study = Literal["sequential", "continuation", "oed-vs-random", "batch"]

PROBLEMS = ("diffusion_reaction", "flow_transport")
POLICIES = ("oed", "random", "tracing")
STUDIES = ("sequential", "continuation", "oed-vs-random", "batch")
CORRECTORS = ("iterate", "single", "none")


# problem-specific defaults, applied to fields left as None
PROBLEM_DEFAULTS = {
    "diffusion_reaction": dict(n=65, kappa=0.05, gamma_reg=1e-3, prior_u_gamma=0.1,
                               prior_u_beta=1.0, prior_z_gamma=1.0, prior_z_beta=10.0,
                               alpha_d=1e-2, rank_rel_tol=1e-3),
    "flow_transport": dict(n=101, kappa=None, gamma_reg=1e-6, prior_u_gamma=0.1,
                           prior_u_beta=1.0, prior_z_gamma=0.1, prior_z_beta=1.0,
                           alpha_d=1e-6, rank_rel_tol=1e-5),
}


@dataclass
class RunConfig:
    problem: str = "diffusion_reaction"
    n: int | None = None              # grid nodes (state and control share the grid)
    n_time_steps: int = 400           # flow problem only
    kappa: float | None = None        # diffusion-reaction only
    gamma_reg: float | None = None
    # prior W = gamma K + beta M for the intercept/slope (W_u) and the control (W_z)
    prior_u_gamma: float | None = None
    prior_u_beta: float | None = None
    prior_z_gamma: float | None = None
    prior_z_beta: float | None = None
    alpha_d: float | None = None
    rank: int | None = None           # None: automatic truncation
    rank_rel_tol: float | None = None
    rank_cap: int = 25
    n_steps: int = 3
    corrector: str = "iterate"
    corrector_tol: float = 1e-10
    N_budget: int = 3
    batch_size: int = 1
    policy: str = "oed"
    n_starts: int = 8
    alpha_min_rel: float = 1e-6       # alpha floor relative to ||z~||_M^2 / tr(W_z^-1 M_z)
    n_random: int = 30                # random comparison points (oed-vs-random)
    study_seeds: int = 1              # seeds per policy in oed-vs-random
    batch_sizes: list[int] = field(default_factory=lambda: [1, 2, 3, 6])
    continuation_steps: list[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    continuation_corrector: str = "single"
    seed: int = 0
    out: str = "results"
    study: str = "sequential"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        for name, value in PROBLEM_DEFAULTS[self.problem].items():
            if getattr(self, name) is None:
                setattr(self, name, value)
        self.validate()

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}, got {self.study!r}")
        for name in ("corrector", "continuation_corrector"):
            if getattr(self, name) not in CORRECTORS:
                raise ConfigError(f"{name} must be one of {CORRECTORS}")
        if self.n < 3 or self.n_time_steps < 1 or self.n_steps < 1 or self.n_starts < 1:
            raise ConfigError("grid size, step counts and n_starts must be positive")
        if not self.alpha_d > 0 or not self.gamma_reg > 0:
            raise ConfigError("alpha_d and gamma_reg must be positive")
        if self.kappa is not None and not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        for name in ("prior_u_gamma", "prior_u_beta", "prior_z_gamma", "prior_z_beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.rank is not None and self.rank < 1:
            raise ConfigError("rank must be at least 1")
        if self.n_random < 0 or self.study_seeds < 1:
            raise ConfigError("n_random must be >= 0 and study_seeds >= 1")
        if any(n < 1 for n in self.continuation_steps):
            raise ConfigError("continuation step counts must be positive")
        if self.N_budget < 1:
            raise BudgetError("N_budget must be at least 1")
        if not 1 <= self.batch_size <= self.N_budget:
            raise BudgetError(f"batch size {self.batch_size} must lie in [1, N_budget={self.N_budget}]")
        if any(p < 1 for p in self.batch_sizes):
            raise BudgetError("batch sizes must be positive")
        if self.study == "batch" and max(self.batch_sizes, default=1) > self.N_budget:
            raise BudgetError(f"batch study needs N_budget >= {max(self.batch_sizes)}")
        if self.policy == "tracing" and self.batch_size != 1:
            raise BudgetError("the tracing policy acquires one point per round")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_from_dict(data: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping of keys to values")
    return config_from_dict(data)
