"""
Run configuration.

A flat YAML document validated into `RunConfig`. Every key can be overridden by an environment
variable `CHVEM_<KEY>` (also read from a `.env` file); override values are parsed as YAML so
`CHVEM_SNAPSHOT_TIMES=[0, 0.5]` arrives as a list.
"""

import os
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from chvem.errors import ConfigError
from chvem.problems import InitialDatum, InitialKind, exact_case
from chvem.timestepper import Schedule, StepParameters

ENV_PREFIX = "CHVEM_"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mesh: str
    gamma: float = Field(gt=0)
    k: float = Field(gt=0)
    T: Optional[float] = Field(default=None, ge=0)
    N: Optional[int] = Field(default=None, ge=0)

    newton_tol: float = Field(default=1e-6, gt=0)
    newton_max_iter: int = Field(default=25, ge=1)
    linear_solver: Literal["direct", "bicgstab"] = "direct"
    line_search: bool = False
    adaptive: bool = False
    max_halvings: int = Field(default=4, ge=1)

    initial: InitialKind = InitialKind.CONSTANT
    initial_value: float = 0.0
    initial_expression: Optional[str] = None
    smoothing_width: Optional[float] = Field(default=None, gt=0)
    forcing: Literal["none", "manufactured"] = "none"
    seed: int = 0

    snapshot_times: List[float] = Field(default_factory=list)
    output_dir: str = "output"
    deterministic: bool = True
    threads: Optional[int] = Field(default=None, ge=1)
    corner_angle_tol: float = Field(default=1e-8, gt=0)
    regularity_constant: float = Field(default=0.05, gt=0)

    levels: List[int] = Field(default_factory=list)
    mesh_family: Literal["quad", "tri"] = "quad"
    exact_case: Literal["manufactured", "constant"] = "manufactured"

    @field_validator("levels")
    @classmethod
    def _positive_levels(cls, levels: List[int]) -> List[int]:
        if any(n < 1 for n in levels):
            raise ValueError("mesh levels must be positive")
        return levels

    @model_validator(mode="after")
    def _check_schedule(self) -> "RunConfig":
        if (self.T is None) == (self.N is None):
            raise ValueError("exactly one of T and N must be given")
        end = self.end_time
        bad = [t for t in self.snapshot_times if t < 0 or t > end * (1 + 1e-12)]
        if bad:
            raise ValueError(f"snapshot times {bad} lie outside [0, {end}]")
        if self.initial is InitialKind.EXPRESSION and not self.initial_expression:
            raise ValueError("initial 'expression' requires initial_expression")
        return self

    @property
    def end_time(self) -> float:
        return self.T if self.T is not None else self.N * self.k

    def schedule(self) -> Schedule:
        return Schedule(k=self.k, T=self.T, N=self.N)

    def step_parameters(self) -> StepParameters:
        forcing = None
        if self.forcing == "manufactured":
            forcing = exact_case("manufactured", self.gamma).forcing
        return StepParameters(
            gamma=self.gamma,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
            linear_solver=self.linear_solver,
            line_search=self.line_search,
            adaptive=self.adaptive,
            max_halvings=self.max_halvings,
            forcing=forcing,
        )

    def initial_datum(self) -> InitialDatum:
        return InitialDatum(
            kind=self.initial,
            value=self.initial_value,
            expression=self.initial_expression,
            seed=self.seed,
            smoothing_width=self.smoothing_width,
            gamma=self.gamma,
        )


def env_overrides(environ: Mapping[str, str]) -> Dict[str, object]:
    overrides = {}
    for name in RunConfig.model_fields:
        key = f"{ENV_PREFIX}{name.upper()}"
        if key in environ:
            try:
                overrides[name] = yaml.safe_load(environ[key])
            except yaml.YAMLError as e:
                raise ConfigError(f"Cannot parse {key}: {e}") from e
            logger.debug(f"Config key '{name}' overridden from {key}")
    return overrides


def load_config_text(text: str, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Validate a YAML document; `environ` supplies CHVEM_* overrides (none when omitted)."""
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("Config must be a mapping of keys to values")
    if environ is not None:
        data.update(env_overrides(environ))
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}") from e


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a config file, applying `.env` and CHVEM_* environment overrides."""
    load_dotenv()
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except FileNotFoundError:
        logger.error(f"Config file not found at {path}")
        raise
    config = load_config_text(text, os.environ)
    logger.info(f"Loaded config {path}: mesh={config.mesh} gamma={config.gamma} k={config.k} T={config.end_time}")
    return config


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
