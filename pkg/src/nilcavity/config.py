"""Versioned YAML scenario configuration.

One file drives every subcommand: top-level ``seed``, ``threads`` and
``out_dir`` plus one section per subcommand.  Unknown keys are errors, and
every error names the offending field and its line in the file.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .coupling import ControlSchedule, CouplingCoefficients, Window
from .nilpotent import NilpotentPolynomial
from .protocols import TargetState
from .validation import GROUPS as VALIDATION_GROUPS

SCHEMA_VERSION = 1
DEFAULT_OUT_DIR = "nilcavity-out"
OUT_DIR_ENV = "NILCAVITY_OUT_DIR"

# a complex number is written either as a real scalar or as [re, im]
Complex = Union[float, tuple[float, float]]


def as_complex(x: Complex) -> complex:
    if isinstance(x, (tuple, list)):
        return complex(x[0], x[1])
    return complex(x)


class ConfigError(ValueError):
    """Schema violation, with ``field`` and ``line`` when they are known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field, self.line = field, line
        where = ", ".join(x for x in (None if line is None else f"line {line}", field) if x)
        super().__init__(f"{where}: {message}" if where else message)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# -- shared pieces ---------------------------------------------------------------------------


class SegmentSpec(_Strict):
    duration: float = Field(gt=0)
    laser_amplitude: float
    couplings: list[float]


class ScheduleSpec(_Strict):
    omega_cavity: float
    omega_atoms: list[float] = Field(min_length=1)
    segments: list[SegmentSpec] = Field(min_length=1)

    @model_validator(mode="after")
    def _widths(self):
        for i, s in enumerate(self.segments):
            if len(s.couplings) != len(self.omega_atoms):
                raise ValueError(f"segment {i} has {len(s.couplings)} couplings for {len(self.omega_atoms)} atoms")
        return self

    def build(self) -> ControlSchedule:
        return ControlSchedule.from_dict(self.model_dump())


class CoefficientsSpec(_Strict):
    """Either ``uniform`` with ``num_atoms`` (and optional ``pair``), or explicit ``linear``/``bilinear``."""

    num_atoms: int | None = Field(default=None, ge=1)
    uniform: Complex | None = None
    pair: Complex = 0.0
    linear: list[Complex] | None = None
    bilinear: list[list[Complex]] | None = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.uniform is None) == (self.linear is None):
            raise ValueError("give exactly one of 'uniform' (with num_atoms) or 'linear'")
        if self.uniform is not None and self.num_atoms is None:
            raise ValueError("'uniform' needs 'num_atoms'")
        if self.linear is not None and self.num_atoms not in (None, len(self.linear)):
            raise ValueError("num_atoms disagrees with the length of 'linear'")
        if self.bilinear is not None:
            n = len(self.linear) if self.linear is not None else self.num_atoms
            if len(self.bilinear) != n or any(len(r) != n for r in self.bilinear):
                raise ValueError(f"bilinear must be {n} x {n}")
        return self

    def build(self) -> CouplingCoefficients:
        if self.uniform is not None:
            return CouplingCoefficients.uniform(self.num_atoms, as_complex(self.uniform), as_complex(self.pair))
        lin = np.array([as_complex(x) for x in self.linear])
        bil = None if self.bilinear is None else np.array([[as_complex(x) for x in r] for r in self.bilinear])
        return CouplingCoefficients(lin, bil)


class TargetSpec(_Strict):
    kind: Literal["ghz", "w", "dicke"]
    num_atoms: int = Field(ge=1)
    excitations: int | None = None

    def build(self) -> TargetState:
        if self.kind == "ghz":
            return TargetState.ghz(self.num_atoms)
        if self.kind == "w":
            return TargetState.w(self.num_atoms)
        if self.excitations is None:
            raise ValueError("a Dicke target needs 'excitations'")
        return TargetState.dicke(self.num_atoms, self.excitations)


# -- subcommand sections ---------------------------------------------------------------------


class DickeSweepSection(_Strict):
    N: int = Field(default=10, ge=1)
    M: list[int] | None = None  # default 1..N
    c_max: float = Field(default=2.0, gt=0)
    grid_points: int = Field(default=401, ge=2)

    def excitations(self) -> list[int]:
        Ms = list(range(1, self.N + 1)) if self.M is None else self.M
        bad = [m for m in Ms if not 0 <= m <= self.N]
        if bad:
            raise ConfigError(f"excitation numbers {bad} outside 0..{self.N}", "dicke_sweep.M")
        return Ms


class GhzSection(_Strict):
    num_atoms: int = Field(default=3, ge=2)
    couplings: Literal["phase_matched", "uniform"] | list[Complex] = "phase_matched"
    magnitude: float = Field(default=0.3, gt=0)
    condition: Literal["derived", "published"] = "derived"
    dynamic: bool = True
    kappa: float = 1.0
    kerr_strength: float = Field(default=0.01, gt=0)  # kappa * E**3
    gap: int | None = None
    omega_cavity: float = 0.0


class TwoEnsembleSection(_Strict):
    n: int = Field(default=2, ge=1)
    mu: Complex = 0.25
    g: float = 0.03
    t: float = 1.0
    check_oracle: bool = True


class WindowSpec(_Strict):
    atoms: list[int] = Field(min_length=1)
    duration: float = Field(gt=0)
    coupling: float = 1.0

    def build(self) -> Window:
        return Window(tuple(self.atoms), self.duration, self.coupling)


class ScheduleSolveSection(_Strict):
    omega_cavity: float
    omega_atoms: list[float] = Field(min_length=1)
    windows: list[WindowSpec] = Field(min_length=1)
    target: CoefficientsSpec
    targets: list[list[int]] | None = None
    max_condition: float = 1e12


class CanonicalizeSection(_Strict):
    state: TargetSpec | None = None
    amplitudes: list[Complex] | None = None  # atomic vector, atom n is bit n-1
    num_atoms: int | None = None
    restarts: int = Field(default=8, ge=1)
    max_sweeps: int = Field(default=500, ge=1)

    @model_validator(mode="after")
    def _one_form(self):
        if (self.state is None) == (self.amplitudes is None):
            raise ValueError("give exactly one of 'state' or 'amplitudes'")
        if self.amplitudes is not None:
            if self.num_atoms is None:
                raise ValueError("'amplitudes' needs 'num_atoms'")
            if len(self.amplitudes) != 1 << self.num_atoms:
                raise ValueError(f"expected {1 << self.num_atoms} amplitudes")
        return self

    def build(self) -> NilpotentPolynomial:
        if self.state is not None:
            vec, N = self.state.build().vector(), self.state.num_atoms
        else:
            vec, N = np.array([as_complex(x) for x in self.amplitudes]), self.num_atoms
        return NilpotentPolynomial.from_dense(vec[None, :], N, 0)


class ValidateSection(_Strict):
    groups: list[Literal[VALIDATION_GROUPS]] = Field(default_factory=lambda: list(VALIDATION_GROUPS))


class DisplaceStage(_Strict):
    op: Literal["displace"]
    lam: Complex = Field(alias="lambda")


class SqueezeStage(_Strict):
    op: Literal["squeeze"]
    g: float
    t: float
    zeta: Literal["published", "exact"] = "published"


class KerrStage(_Strict):
    op: Literal["kerr"]
    kappa: float = 1.0
    laser_amplitude: float
    gap: int | None = None
    omega_cavity: float = 0.0
    t: float | None = None  # default: the GHZ time for the derived condition


class MeasureStage(_Strict):
    op: Literal["measure"]
    photons: int = Field(ge=0)


class ProjectStage(_Strict):
    op: Literal["project"]
    B: Complex | None = None  # default: the GHZ condition
    C: Complex | None = None
    gap: int | None = None


Stage = Annotated[
    Union[DisplaceStage, SqueezeStage, KerrStage, MeasureStage, ProjectStage], Field(discriminator="op")
]
TERMINAL = ("measure", "project")


class ScenarioSection(_Strict):
    schedule: ScheduleSpec | None = None
    coefficients: CoefficientsSpec | None = None
    pipeline: list[Stage] = Field(default_factory=list)
    target: TargetSpec | None = None
    check_oracle: bool = True

    @model_validator(mode="after")
    def _rules(self):
        if (self.schedule is None) == (self.coefficients is None):
            raise ValueError("give exactly one of 'schedule' or 'coefficients'")
        terminals = [i for i, s in enumerate(self.pipeline) if s.op in TERMINAL]
        if not terminals:
            raise ValueError("pipeline has no terminal measurement or projection")
        if len(terminals) > 1 or terminals[0] != len(self.pipeline) - 1:
            raise ValueError("pipeline needs exactly one terminal measurement or projection, as its last stage")
        return self

    def build_coefficients(self) -> CouplingCoefficients:
        if self.schedule is not None:
            from .coupling import integrate_coefficients

            return integrate_coefficients(self.schedule.build())
        return self.coefficients.build()


class Config(_Strict):
    version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    out_dir: str = DEFAULT_OUT_DIR
    dicke_sweep: DickeSweepSection = Field(default_factory=DickeSweepSection)
    ghz: GhzSection = Field(default_factory=GhzSection)
    two_ensemble: TwoEnsembleSection = Field(default_factory=TwoEnsembleSection)
    schedule_solve: ScheduleSolveSection | None = None
    canonicalize: CanonicalizeSection | None = None
    validate_: ValidateSection = Field(default_factory=ValidateSection, alias="validate")
    scenario: ScenarioSection | None = None

    def to_yaml(self) -> str:
        data = self.model_dump(mode="json", by_alias=True, exclude_none=True)
        return yaml.safe_dump(data, sort_keys=False)


# -- loading with line diagnostics -----------------------------------------------------------


def _line_map(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_map(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


def _locate(loc: tuple, lines: dict) -> tuple[str, int | None]:
    # discriminator tags and union branch names appear in pydantic locations but not in the file
    path: tuple = ()
    for part in loc:
        if path + (part,) in lines:
            path = path + (part,)
        elif isinstance(part, str) and path + (str(part),) in lines:
            path = path + (str(part),)
    name = ".".join(str(p) for p in path) or "<root>"
    return name, lines.get(path)


def parse_config(text: str, source: str = "<config>") -> Config:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: invalid YAML: {exc}", line=None if mark is None else mark.line + 1) from None
    if node is None:
        return Config()
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{source}: top level must be a mapping", line=node.start_mark.line + 1)
    lines = _line_map(node)
    data = yaml.safe_load(text)
    try:
        return Config.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        name, line = _locate(tuple(err["loc"]), lines)
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key"
        raise ConfigError(msg, name, line) from None


def load_config(path: str | os.PathLike | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def resolve_out_dir(config: Config, flag: str | None) -> str:
    """Flag beats the environment variable, which beats the config file."""
    if flag:
        return flag
    return os.environ.get(OUT_DIR_ENV) or config.out_dir


__all__ = [
    "CanonicalizeSection",
    "CoefficientsSpec",
    "Config",
    "ConfigError",
    "DickeSweepSection",
    "GhzSection",
    "OUT_DIR_ENV",
    "SCHEMA_VERSION",
    "ScenarioSection",
    "ScheduleSolveSection",
    "TwoEnsembleSection",
    "VALIDATION_GROUPS",
    "ValidateSection",
    "as_complex",
    "load_config",
    "parse_config",
    "resolve_out_dir",
]
