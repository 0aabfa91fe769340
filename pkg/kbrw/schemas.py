from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .config import Config
from .config_loader import load_json, section
from .errors import ParameterError


SCHEMA_VERSION = 1

_CAP_DEFAULTS = {
    "max_generations": 10**6,
    "max_population": 10**7,
    "max_total_counted": 10**9,
}

_FAMILY_PARAMS = {
    "two_point": ["p"],
    "gaussian": ["mu", "sigma"],
    "user_lattice": ["support"],
}


# Model and run limits
class ModelSpec(BaseModel):
    """Schema for a step model file."""
    family: str = Field(description="Step family: two_point, gaussian or user_lattice")
    params: Dict[str, Any] = Field(default_factory=dict, description="Family parameters")
    b: int = Field(description="Branching factor")
    calibrate: bool = Field(default=False, description="Solve the free parameter for criticality")

    @field_validator('family')
    @classmethod
    def validate_family(cls, v):
        if v not in ['two_point', 'gaussian', 'user_lattice']:
            raise ValueError('family must be two_point, gaussian or user_lattice')
        return v

    @field_validator('b')
    @classmethod
    def validate_b(cls, v):
        if v < 2:
            raise ValueError('b must be at least 2')
        return v

    @model_validator(mode='after')
    def validate_params(self):
        if self.calibrate:
            required = ['support', 'weights'] if self.family == 'user_lattice' else []
        else:
            required = _FAMILY_PARAMS[self.family]
            if self.family == 'user_lattice' and 'probs' not in self.params and 'weights' not in self.params:
                raise ValueError('user_lattice params need probs or weights')
        missing = [name for name in required if name not in self.params]
        if missing:
            raise ValueError(f'{self.family} params missing {", ".join(missing)}')
        return self


class Caps(BaseModel):
    """Schema for branching-walk resource caps."""
    max_generations: int = Field(default=_CAP_DEFAULTS["max_generations"], gt=0)
    max_population: int = Field(default=_CAP_DEFAULTS["max_population"], gt=0)
    max_total_counted: int = Field(default=_CAP_DEFAULTS["max_total_counted"], gt=0)

    @classmethod
    def from_config(cls) -> "Caps":
        merged = section("caps", _CAP_DEFAULTS)
        return cls(**{name: merged[name] for name in _CAP_DEFAULTS})


class BandTolerances(BaseModel):
    """Schema for acceptance band ratios."""
    exact_ratio: float = Field(default=2.0, gt=1.0, description="Exact-solver scaled statistics")
    mc_ratio: float = Field(default=4.0, gt=1.0, description="Monte Carlo tail statistics")
    two_stage_ratio: float = Field(default=3.0, gt=1.0, description="Two-stage estimator statistics")
    overshoot_ratio: float = Field(default=1.5, gt=1.0, description="Overshoot moment stability")
    agreement_sigmas: float = Field(default=3.0, gt=0.0, description="Dual-source agreement")

    @classmethod
    def from_config(cls) -> "BandTolerances":
        return cls(**section("acceptance", {}).get("bands", {}))


# Experiment config
class ExperimentConfig(BaseModel):
    """Schema for one CLI experiment."""
    command: str = Field(description="Subcommand name")
    model: Optional[ModelSpec] = Field(default=None, description="Inline model")
    model_file: Optional[str] = Field(default=None, description="Path of a model JSON file")
    params: Dict[str, Any] = Field(default_factory=dict, description="Subcommand parameters")
    seed: Optional[int] = Field(default=None, description="64-bit master seed")
    workers: int = Field(default_factory=lambda: Config.WORKERS, ge=1)
    output_dir: str = Field(default_factory=lambda: Config.OUTPUT_DIR)
    bands: BandTolerances = Field(default_factory=BandTolerances.from_config)
    schema_version: int = Field(default=SCHEMA_VERSION)

    @field_validator('seed')
    @classmethod
    def validate_seed(cls, v):
        if v is not None and not 0 <= v < 2**64:
            raise ValueError('seed must be a 64-bit unsigned integer')
        return v

    @field_validator('schema_version')
    @classmethod
    def validate_schema_version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f'unsupported schema_version {v}')
        return v

    @model_validator(mode='after')
    def resolve_model(self):
        if self.model_file is not None:
            if not os.path.exists(self.model_file):
                raise ValueError(f'model file {self.model_file} does not exist')
            if self.model is None:
                data = load_json(self.model_file)
                if not data:
                    raise ValueError(f'model file {self.model_file} is not valid JSON')
                self.model = ModelSpec(**data)
        return self

    def require_seed(self) -> int:
        if self.seed is None:
            raise ParameterError(f"{self.command} needs --seed")
        return self.seed

    def config_hash(self) -> str:
        """sha256 over the canonical JSON of everything that determines the output."""
        payload = self.model_dump(mode="json", exclude={"workers", "output_dir"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def parse_grid(text: str) -> List[float]:
    """Parse ``"10,100,1e3"`` into an ascending list of floats."""
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ParameterError(f"bad grid {text!r}: {e}") from e
    if not values:
        raise ParameterError("empty grid")
    if any(b < a for a, b in zip(values, values[1:])):
        raise ParameterError(f"grid {text!r} is not ascending")
    return values
