"""Validated experiment configurations, read from TOML or JSON.

A config file holds the settings of one experiment at top level, or under a
table named after the experiment. Unknown keys are rejected.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .experiment import DEFAULT_BETA_TRUE, DEFAULT_KAPPA_TRUE


class ConfigFileError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentConfig(_Strict):
    experiment: str
    out: Optional[str] = None
    seed: int = Field(0, ge=0)


class Example1Config(ExperimentConfig):
    experiment: Literal["example1"] = "example1"
    q: float = Field(gt=0, lt=1)
    x: float
    xt: float
    y: float
    steps: list[int] = [1, 5, 20, 100]
    replicates: int = Field(100_000, ge=2)
    init: Optional[float] = None
    trace_steps: int = Field(200, ge=0)


class AR1Config(ExperimentConfig):
    experiment: Literal["ar1"] = "ar1"
    alpha: float = Field(0.5, gt=0, lt=1)
    alphatilde: float = Field(0.4, gt=0, lt=1)
    steps: list[int] = [1, 5, 20, 100]
    replicates: int = Field(10_000, ge=2)
    trace_steps: int = Field(200, ge=0)


class NoisyIMHConfig(ExperimentConfig):
    experiment: Literal["noisy-imh"] = "noisy-imh"
    sigma2: float = Field(0.01, gt=0)
    region: tuple[float, float] = (0.8, 1.0)
    steps: list[int] = [1, 5, 20, 100]
    replicates: int = Field(10_000, ge=4)
    init: float = 0.5
    trace_steps: int = Field(200, ge=0)


class SamplerSettings(_Strict):
    iterations: int = Field(50_000, ge=2)
    burn_in: Optional[int] = Field(None, ge=0)
    k: int = Field(100, ge=2)
    cv_order: Literal[1, 2] = 2
    proposal_scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _burn_in_below_iterations(self):
        if self.burn_in is not None and self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        return self


class VonMisesConfig(ExperimentConfig):
    experiment: Literal["vonmises"] = "vonmises"
    seed: int = Field(7, ge=0)
    n: int = Field(10_000, ge=2)
    d_z: int = Field(10, ge=1)
    beta_true: list[float] = list(DEFAULT_BETA_TRUE)
    kappa_true: float = Field(DEFAULT_KAPPA_TRUE, gt=0)
    data_seed: int = Field(2024, ge=0)
    sampler: SamplerSettings = SamplerSettings()
    full_baseline: bool = True

    @model_validator(mode="after")
    def _beta_matches_features(self):
        if len(self.beta_true) != self.d_z:
            raise ValueError(f"beta_true has {len(self.beta_true)} entries, d_z is {self.d_z}")
        return self


class BoundsConfig(ExperimentConfig):
    experiment: Literal["bounds"] = "bounds"
    theorem: Literal[1, 2] = 1
    alpha: float = Field(gt=0, le=1)
    epsilon: float = Field(ge=0)
    w0: float = Field(0.0, ge=0)
    steps: list[int] = [1, 5, 20, 100]
    beta: Optional[float] = Field(None, gt=0, lt=1)
    L: Optional[float] = Field(None, ge=0)
    integral_V_p0: float = Field(1.0, ge=1)


class SelftestConfig(ExperimentConfig):
    experiment: Literal["metrics-selftest"] = "metrics-selftest"
    instances: int = Field(100, ge=1)


CONFIG_MODELS = {
    "example1": Example1Config,
    "ar1": AR1Config,
    "noisy-imh": NoisyIMHConfig,
    "vonmises": VonMisesConfig,
    "bounds": BoundsConfig,
    "metrics-selftest": SelftestConfig,
}


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigFileError(f"cannot read config file {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigFileError(f"cannot parse config file {path}: {exc}") from exc


def resolve_config(experiment, file_values=None, overrides=None):
    """Merge file values and command-line overrides, then validate.

    Raises
    ------
    pydantic.ValidationError
        When required keys are missing, types are wrong or keys are unknown.
    """
    values = dict(file_values or {})
    if isinstance(values.get(experiment), dict):
        section = values.pop(experiment)
        values.update(section)
    for key, value in (overrides or {}).items():
        if "." in key:
            outer, inner = key.split(".", 1)
            values.setdefault(outer, {})
            values[outer][inner] = value
        else:
            values[key] = value
    values.setdefault("experiment", experiment)
    return CONFIG_MODELS[experiment].model_validate(values)
