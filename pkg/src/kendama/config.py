"""One JSON document configures every stage of the pipeline.

Unknown keys are rejected at every level and the document carries a schema
version, so a stale or misspelled config fails before any work starts.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .dynamics import PhysicalParams
from .noise import NoiseModel
from .sets import Box
from .sim import MEASURED_E_TR, ExperimentConfig
from .swingup import Perturbation, SolverOptions, SwingupProblem, _default_x_f

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unreadable, malformed or invalid configuration documents."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Pair = tuple[float, float]


class BoxSpec(_Strict):
    lo: Pair
    hi: Pair

    @model_validator(mode="after")
    def _ordered(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("box needs lo <= hi")
        return self

    def build(self) -> Box:
        return Box(self.lo, self.hi)

    @classmethod
    def of(cls, box: Box) -> "BoxSpec":
        return cls(lo=tuple(box.lo.tolist()), hi=tuple(box.hi.tolist()))


class Paths(_Strict):
    samples: Optional[str] = None  # samples CSV consumed by learn-support
    support: Optional[str] = None  # support JSON consumed by rollout
    summary: Optional[str] = None  # summary JSON consumed by report


class PhysicalSpec(_Strict):
    m_c: float = Field(0.2, gt=0)
    m_b: float = Field(0.03, gt=0)
    r: float = Field(0.153, gt=0)
    g: float = Field(9.81, gt=0)

    def build(self) -> PhysicalParams:
        return PhysicalParams(self.m_c, self.m_b, self.r, self.g)


class SolverSpec(_Strict):
    tol: float = Field(1e-6, gt=0)
    term_tol: float = Field(1e-4, gt=0)
    max_outer: int = Field(40, ge=1)
    max_inner: int = Field(3000, ge=1)
    rho0: float = Field(100.0, gt=0)
    rho_max: float = Field(1e8, gt=0)


class PerturbationSpec(_Strict):
    mass_frac: float = Field(0.05, ge=0, lt=1)
    length_frac: float = Field(0.05, ge=0, lt=1)
    force_std: float = Field(0.05, ge=0)


Six = tuple[float, float, float, float, float, float]


class SwingupSpec(_Strict):
    N: int = Field(150, ge=2)
    Ts: float = Field(0.01, gt=0)
    Q_diag: Six = (1.0, 1.0, 1.0, 0.1, 0.1, 0.1)
    R_diag: Pair = (0.01, 0.01)
    x_lo: Six = (-0.5, -0.5, -2 * np.pi, -5.0, -5.0, -40.0)
    x_hi: Six = (0.5, 0.5, 2 * np.pi, 5.0, 5.0, 40.0)
    F_lo: Pair = (-20.0, -20.0)
    F_hi: Pair = (20.0, 25.0)
    x_init: Six = (0.0,) * 6
    x_f: Six = tuple(_default_x_f().tolist())
    solver: SolverSpec = SolverSpec()
    perturbation: PerturbationSpec = PerturbationSpec()

    @field_validator("Q_diag", "R_diag")
    @classmethod
    def _positive(cls, v):
        if min(v) <= 0:
            raise ValueError("weights must be positive")
        return v

    def problem(self, params: PhysicalParams) -> SwingupProblem:
        return SwingupProblem(
            N=self.N, Ts=self.Ts, Q=np.diag(self.Q_diag), R=np.diag(self.R_diag),
            x_lo=np.array(self.x_lo), x_hi=np.array(self.x_hi),
            F_lo=np.array(self.F_lo), F_hi=np.array(self.F_hi),
            x_init=np.array(self.x_init), x_f=np.array(self.x_f), params=params,
        )

    def options(self) -> SolverOptions:
        return SolverOptions(**self.solver.model_dump())

    def perturbation_for(self, seed: int) -> Perturbation:
        return Perturbation(**self.perturbation.model_dump(), seed=seed)


class NoiseSpec(_Strict):
    mu: Pair = (0.0, 0.0)
    sigma: Pair = (0.004, 0.006)
    n: int = Field(100, ge=8)  # samples drawn by calibrate-noise
    epsilon: float = Field(0.1, gt=0, lt=1)

    @field_validator("sigma")
    @classmethod
    def _nonneg(cls, v):
        if min(v) < 0:
            raise ValueError("sigma must be non-negative")
        return v

    def build(self) -> NoiseModel:
        return NoiseModel.from_arrays(self.mu, self.sigma)


class ControllerSpec(_Strict):
    T: int = Field(25, ge=1)
    dt: float = Field(0.01, gt=0)
    E_tr: BoxSpec = BoxSpec.of(MEASURED_E_TR)
    U: BoxSpec = BoxSpec(lo=(-8.0, -8.0), hi=(8.0, 8.0))
    W: BoxSpec = BoxSpec(lo=(-0.002, -0.002), hi=(0.002, 0.002))
    W_m: BoxSpec = BoxSpec(lo=(-0.002, -0.002), hi=(0.002, 0.002))
    observer_poles: Pair = (0.6, 0.6)
    control_poles: Pair = (0.7, 0.7)
    q_e: float = Field(500.0, gt=0)
    r_u: float = Field(0.4, gt=0)
    rpi_tol: float = Field(1e-4, gt=0)


class ExperimentSpec(_Strict):
    n_schedule: tuple[int, ...] = (50, 100, 200, 400, 800, 1400, 2000)
    rollouts_per_n: int = Field(1000, ge=1)
    workers: int = Field(1, ge=1)
    cup_radius: float = Field(0.035, gt=0)
    max_impact_vz: float = 0.1
    hit_center_tol: float = Field(0.005, gt=0)
    keep_traces: bool = False

    @field_validator("n_schedule")
    @classmethod
    def _increasing(cls, v):
        if not v or min(v) < 8 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("n_schedule must be strictly increasing with entries >= 8")
        return v


class RunConfig(_Strict):
    schema_version: int
    seed: int = Field(0, ge=0)
    paths: Paths = Paths()
    physical: PhysicalSpec = PhysicalSpec()
    swingup: SwingupSpec = SwingupSpec()
    noise: NoiseSpec = NoiseSpec()
    controller: ControllerSpec = ControllerSpec()
    experiment: ExperimentSpec = ExperimentSpec()

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else self.model_copy(update={"seed": seed})

    def experiment_config(self) -> ExperimentConfig:
        c, x = self.controller, self.experiment
        try:
            return ExperimentConfig(
                n_schedule=tuple(x.n_schedule),
                rollouts_per_n=x.rollouts_per_n,
                epsilon=self.noise.epsilon,
                T=c.T,
                seed=self.seed,
                noise=self.noise.build(),
                W_m=c.W_m.build(),
                W=c.W.build(),
                E_tr=c.E_tr.build(),
                U=c.U.build(),
                dt=c.dt,
                observer_poles=tuple(c.observer_poles),
                control_poles=tuple(c.control_poles),
                q_e=c.q_e,
                r_u=c.r_u,
                rpi_tol=c.rpi_tol,
                cup_radius=x.cup_radius,
                max_impact_vz=x.max_impact_vz,
                hit_center_tol=x.hit_center_tol,
                workers=x.workers,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def default_config() -> RunConfig:
    return RunConfig(schema_version=SCHEMA_VERSION)


def parse_config(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> RunConfig:
    """Read and validate a config file; ``None`` means all defaults."""
    if path is None:
        return default_config()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_config(doc)
