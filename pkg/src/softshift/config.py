from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .shift_analysis import THEOREM_MIN_R, BetaMode, ShiftKind

MAX_SEED = 2**64 - 1
SUBCOMMANDS = (
    "verify-gradient",
    "verify-facts",
    "verify-bounds",
    "verify-beta",
    "icl",
    "plot",
)

BMode = Literal["simplex", "box01", "gaussian"]


class ConfigError(RuntimeError):
    pass


def _check_range(value: tuple[int, int]) -> tuple[int, int]:
    low, high = value
    if low < 1:
        raise ValueError("range lower end must be >= 1")
    if high < low:
        raise ValueError("range is empty (upper end below lower end)")
    return value


class SampleConfig(BaseModel):
    """Hypothesis region and bookkeeping for one suite run."""

    model_config = ConfigDict(extra="forbid", frozen=True)
    n_range: tuple[int, int] = (2, 32)
    d_range: tuple[int, int] = (1, 8)
    R: float = Field(default=4.0, gt=0, lt=200)
    rho: float = Field(default=0.5, gt=0, lt=1)
    b_mode: BMode = "simplex"
    trials: int = Field(default=10_000, ge=1)
    master_seed: int = Field(default=0, ge=0, le=MAX_SEED)
    shift_kind: ShiftKind = ShiftKind.WEIGHT
    theorem_mode: bool = True
    beta_mode: BetaMode = BetaMode.FLOOR
    h: float = Field(default=1e-5, ge=1e-8, le=1e-3)
    workers: int = Field(default=1, ge=1, le=64)

    @field_validator("n_range", "d_range")
    @classmethod
    def validate_range(cls, value: tuple[int, int]) -> tuple[int, int]:
        return _check_range(value)

    @model_validator(mode="after")
    def check_theorem_radius(self) -> "SampleConfig":
        if self.theorem_mode and self.R < THEOREM_MIN_R:
            raise ValueError(f"R >= {THEOREM_MIN_R:g} required in theorem mode")
        return self


class GDConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)
    eta: float = Field(default=1e-3, gt=0)
    steps: int = Field(default=50, ge=1)
    sign: Literal["descent", "paper_plus"] = "descent"
    backtracking: bool = False


class CliConfig(BaseModel):
    """Merged view of built-in defaults, an optional config file and flags."""

    model_config = ConfigDict(extra="forbid")
    subcommand: str
    suite: Literal["theorem", "lemmas"] = "theorem"
    mode: Literal["x", "a"] = "x"
    task: Literal["linear", "softmax"] = "linear"
    trials: int = Field(default=10_000, ge=1)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    r: float = Field(default=4.0, gt=0, lt=200)
    rho: float = Field(default=0.5, gt=0, lt=1)
    n_range: tuple[int, int] = (2, 32)
    d_range: tuple[int, int] = (1, 8)
    b_mode: BMode = "simplex"
    eta: float = Field(default=1e-3, gt=0)
    steps: int = Field(default=50, ge=1)
    workers: int = Field(default=1, ge=1, le=64)
    h: float = Field(default=1e-5, ge=1e-8, le=1e-3)
    beta_mode: BetaMode = BetaMode.FLOOR
    out: str | None = None
    format: Literal["json", "csv"] = "json"
    plot: str | None = None
    trajectory: str | None = None
    report: str | None = None

    @field_validator("subcommand")
    @classmethod
    def validate_subcommand(cls, value: str) -> str:
        if value not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {value!r}")
        return value

    @field_validator("n_range", "d_range")
    @classmethod
    def validate_range(cls, value: tuple[int, int]) -> tuple[int, int]:
        return _check_range(value)

    @field_validator("out", "plot", "trajectory")
    @classmethod
    def validate_output_path(cls, value: str | None) -> str | None:
        if value is None:
            return None
        parent = Path(value).expanduser().resolve().parent
        if parent.exists() and not parent.is_dir():
            raise ValueError(f"output parent is not a directory: {parent}")
        return value

    def sample_config(self, *, theorem_mode: bool, shift_kind: ShiftKind) -> SampleConfig:
        return SampleConfig(
            n_range=self.n_range,
            d_range=self.d_range,
            R=self.r,
            rho=self.rho,
            b_mode=self.b_mode,
            trials=self.trials,
            master_seed=self.seed,
            shift_kind=shift_kind,
            theorem_mode=theorem_mode,
            beta_mode=self.beta_mode,
            h=self.h,
            workers=self.workers,
        )

    def gd_config(self, **overrides: Any) -> GDConfig:
        return GDConfig(eta=self.eta, steps=self.steps, **overrides)


def load_config_file(path: Path, subcommand: str) -> dict[str, Any]:
    """Read a YAML (or JSON) config file and flatten the section for ``subcommand``.

    Top-level keys apply to every subcommand; a mapping stored under a subcommand
    name (for example ``verify-gradient:``) overrides them for that subcommand only.
    """
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Failed to parse config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file must contain a mapping: {path}")
    sections = {name: data.pop(name) for name in SUBCOMMANDS if name in data}
    section = sections.get(subcommand) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"Config section {subcommand!r} must be a mapping")
    data.pop("version", None)
    return {**data, **section}


def build_cli_config(
    *,
    subcommand: str,
    defaults: dict[str, Any],
    file_values: dict[str, Any],
    flag_values: dict[str, Any],
) -> CliConfig:
    merged: dict[str, Any] = {**defaults, **file_values}
    merged.update({key: value for key, value in flag_values.items() if value is not None})
    merged["subcommand"] = subcommand
    return CliConfig.model_validate(merged)


def describe_validation_error(exc: ValidationError, flag_names: dict[str, str]) -> list[str]:
    """One line per failed field, naming the flag that sets it."""
    lines: list[str] = []
    for error in exc.errors():
        loc = [str(part) for part in error["loc"]]
        message = str(error["msg"]).removeprefix("Value error, ")
        if not loc:
            lines.append(message)
            continue
        field = loc[0]
        flag = flag_names.get(field, "--" + field.replace("_", "-"))
        lines.append(f"{flag}: {message}")
    return lines
