"""Run configuration: a single JSON document validated against a strict schema.

Exactly one parameter block is allowed: ``model`` (N, chi, gamma, omega) or
``cavity`` (N, g, delta, kappa, omega), the latter converted via adiabatic
elimination. In ``model``, chi and omega may instead be given as the ratios
2 chi/gamma and 2 omega/(N gamma).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import InvalidParameterError
from .params import CavityParams, ModelParams, model_from_cavity

SUBCOMMANDS = ("steady-state", "meanfield", "dynamics", "spectrum", "envelope", "sweep", "phase-diagram")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)


class ModelBlock(_Strict):
    n_atoms: int = Field(ge=1)
    gamma: float = Field(ge=0)
    chi: float | None = None
    chi_ratio: float | None = None
    omega: float | None = Field(default=None, ge=0)
    omega_ratio: float | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _one_of_each(self):
        if (self.chi is None) == (self.chi_ratio is None):
            raise ValueError("give exactly one of chi, chi_ratio")
        if (self.omega is None) == (self.omega_ratio is None):
            raise ValueError("give exactly one of omega, omega_ratio")
        return self

    def to_params(self) -> ModelParams:
        chi = self.chi if self.chi is not None else 0.5 * self.chi_ratio * self.gamma
        omega = self.omega if self.omega is not None else 0.5 * self.omega_ratio * self.n_atoms * self.gamma
        return ModelParams(self.n_atoms, chi, self.gamma, omega)


class CavityBlock(_Strict):
    n_atoms: int = Field(ge=1)
    g: float = Field(ge=0)
    delta: float
    kappa: float = Field(gt=0)
    omega: float = Field(ge=0)

    def to_params(self) -> ModelParams:
        return model_from_cavity(self.n_atoms, CavityParams(self.g, self.delta, self.kappa), self.omega)


class SouthPole(_Strict):
    kind: Literal["south_pole"]


class NorthPole(_Strict):
    kind: Literal["north_pole"]


class Coherent(_Strict):
    kind: Literal["coherent"]
    theta: float = Field(ge=0, le=3.141592653589793)
    phi: float


InitialState = Annotated[Union[SouthPole, NorthPole, Coherent], Field(discriminator="kind")]


class Axis(_Strict):
    """A sweep axis. ``omega`` values are 2 omega/(N gamma), ``chi`` values 2 chi/gamma."""

    name: Literal["omega", "chi", "n_atoms"]
    min: float
    max: float
    points: int = Field(ge=2)
    scale: Literal["linear", "log"] = "linear"

    @model_validator(mode="after")
    def _range(self):
        if self.max < self.min:
            raise ValueError("axis max must be >= min")
        if self.scale == "log" and self.min <= 0:
            raise ValueError("log axis needs min > 0")
        return self

    def values(self):
        import numpy as np

        if self.scale == "log":
            v = np.geomspace(self.min, self.max, self.points)
        else:
            v = np.linspace(self.min, self.max, self.points)
        if self.name == "n_atoms":
            return [int(round(x)) for x in v]
        return [float(x) for x in v]


class Grid(_Strict):
    min: float = Field(ge=0)
    max: float = Field(ge=0)
    points: int = Field(ge=2)

    def values(self):
        import numpy as np

        return [float(x) for x in np.linspace(self.min, self.max, self.points)]


class HusimiBlock(_Strict):
    n_theta: int = Field(default=61, ge=3)
    n_phi: int = Field(default=120, ge=3)


class SteadyStateTask(_Strict):
    kind: Literal["steady-state"]
    omega_grid: Grid | None = None  # in units of omega_c
    husimi: HusimiBlock | None = None


class MeanfieldTask(_Strict):
    kind: Literal["meanfield"]
    t_final: float = Field(gt=0)
    n_points: int = Field(default=1001, ge=2)
    tol: float = Field(default=1e-11, gt=0)


class DynamicsTask(_Strict):
    kind: Literal["dynamics"]
    t_final: float = Field(gt=0)
    n_points: int = Field(default=401, ge=2)
    rel_tol: float = Field(default=1e-8, gt=0)
    abs_tol: float = Field(default=1e-10, gt=0)
    eig_every: int = Field(default=1, ge=0)
    checkpoint: bool = True
    resume_from: str | None = None


class SpectrumTask(_Strict):
    kind: Literal["spectrum"]
    k: int = Field(default=60, ge=1)
    omega_ratios: list[float] | None = None  # 2 omega/(N gamma); default: the model's omega only
    n_list: list[int] | None = None


class EnvelopeTask(_Strict):
    kind: Literal["envelope"]
    t_final: float = Field(gt=0)
    n_points: int = Field(default=401, ge=2)
    exact: bool = False
    rel_tol: float = Field(default=1e-7, gt=0)
    abs_tol: float = Field(default=1e-9, gt=0)
    fit_n: list[int] | None = None


class TimeAveragedCell(_Strict):
    kind: Literal["time-averaged-inversion"]
    window_t: float = Field(gt=0)
    rel_tol: float = Field(default=1e-7, gt=0)
    abs_tol: float = Field(default=1e-9, gt=0)


class SteadyCell(_Strict):
    kind: Literal["steady-state"]


class GapCell(_Strict):
    kind: Literal["spectrum"]
    k: int = Field(default=60, ge=1)


class PhaseCell(_Strict):
    kind: Literal["phase"]


class MeanfieldAverageCell(_Strict):
    kind: Literal["meanfield-average"]
    window_t: float = Field(gt=0)


Cell = Annotated[
    Union[TimeAveragedCell, SteadyCell, GapCell, PhaseCell, MeanfieldAverageCell], Field(discriminator="kind")
]


class SweepTask(_Strict):
    kind: Literal["sweep"]
    axes: list[Axis] = Field(min_length=1, max_length=2)
    cell: Cell

    @model_validator(mode="after")
    def _distinct(self):
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValueError("sweep axes must be distinct")
        return self


class DiscBlock(_Strict):
    """Initial conditions sampled on a cap around the south pole."""

    n_theta0: int = Field(default=4, ge=1)
    n_phi0: int = Field(default=8, ge=1)
    theta_max: float = Field(default=0.5, gt=0, le=3.141592653589793)


class PhaseDiagramTask(_Strict):
    kind: Literal["phase-diagram"]
    omega: Axis  # 2 omega/(N gamma)
    chi: Axis  # 2 chi/gamma
    disc: DiscBlock | None = None

    @model_validator(mode="after")
    def _names(self):
        if self.omega.name != "omega" or self.chi.name != "chi":
            raise ValueError("phase-diagram axes must be named omega and chi")
        return self


Task = Annotated[
    Union[SteadyStateTask, MeanfieldTask, DynamicsTask, SpectrumTask, EnvelopeTask, SweepTask, PhaseDiagramTask],
    Field(discriminator="kind"),
]


class OutputBlock(_Strict):
    directory: str = "out"
    format: Literal["csv", "json"] = "csv"


class Parallelism(_Strict):
    workers: int = Field(default=1, ge=1)


class RunConfig(_Strict):
    model: ModelBlock | None = None
    cavity: CavityBlock | None = None
    initial_state: InitialState = SouthPole(kind="south_pole")
    task: Task
    output: OutputBlock = OutputBlock()
    seed: int = 0
    parallelism: Parallelism = Parallelism()

    @model_validator(mode="after")
    def _one_block(self):
        if (self.model is None) == (self.cavity is None):
            raise ValueError("exactly one parameter block (model or cavity) is required")
        return self

    def params(self) -> ModelParams:
        block = self.model if self.model is not None else self.cavity
        return block.to_params()


class ConfigError(InvalidParameterError):
    """Schema or semantic violation in a run configuration."""


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config_dict(data: dict) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    try:
        cfg.params()
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config_dict(data)
