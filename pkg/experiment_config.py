#!/usr/bin/env python3
"""
Experiment configuration
Validated JSON settings for the runner and the model spec files it reads
"""

import hashlib
import json
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, model_validator

from errors import ConfigInvalid
from markov_chain import MAX_STATES
from particle_models import BirthDeathSpec, ZeroRangeSpec, two_site_lambda

DEFAULT_CONFIG = "metastability_config.json"


class BirthDeathFile(BaseModel):
    """
    Birth-death model section.

    potential "product": H(x) = prod_i |x - a_i|^alpha_i.
    potential "local": H(x) = |x - a_i|^alpha_i within ``neighborhood`` of
    a_i and ``h_outside`` elsewhere.
    rates "one": lambda = 1; "two_site": lambda_N of the two-site zero-range.
    """

    zeros: List[float] = [0.0, 1.0]
    exponents: Optional[List[float]] = None
    interval: Tuple[float, float] = (0.0, 1.0)
    potential: Literal["product", "local"] = "product"
    neighborhood: Optional[float] = Field(default=None, gt=0)
    h_outside: float = Field(default=1.0, gt=0)
    rates: Literal["one", "two_site"] = "one"
    rate_scale: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _local_needs_neighborhood(self):
        if self.potential == "local" and self.neighborhood is None:
            raise ValueError("the local potential needs a neighborhood radius")
        if self.exponents is not None and len(self.zeros) != len(self.exponents):
            raise ValueError("one exponent per zero is required")
        return self


class ExperimentConfig(BaseModel):
    """Everything one run of the runner needs; every field has a default"""

    model: Literal["zr", "bd", "chain"] = "zr"
    kappa: int = Field(default=2, ge=2)
    alpha: float = Field(default=3.0, gt=1)
    n_grid: List[int] = [10, 20, 40]
    ell: Optional[int] = Field(default=None, ge=1)
    beta: Optional[float] = Field(default=None, gt=0)
    theta_normalization: Literal["trace", "full"] = "trace"
    birth_death: BirthDeathFile = BirthDeathFile()
    chain_file: Optional[str] = None
    wells: Dict[str, List[Any]] = {}
    route: Literal["auto", "elimination", "1d"] = "auto"

    horizon: float = Field(default=5.0, gt=0)
    jump_budget: float = Field(default=1e9, gt=0)
    replicas: int = Field(default=20, ge=1)
    base_seed: int = Field(default=0, ge=0, lt=2 ** 64)
    max_workers: int = Field(default=4, ge=1)
    max_states: int = Field(default=MAX_STATES, ge=2)
    out_dir: str = "results"

    simulate: bool = True
    conditions: bool = True
    hypotheses: bool = True
    cauchy: bool = True
    delta_time_exact: bool = False
    verify: bool = False
    verify_chains: int = Field(default=50, ge=1)
    verify_sizes: List[int] = [4, 8, 16, 32]

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.model != "chain":
            if not self.n_grid:
                raise ValueError("n_grid must not be empty")
            if any(n < 1 for n in self.n_grid):
                raise ValueError("n_grid entries must be positive")
            if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
                raise ValueError("n_grid must be strictly ascending")
        if self.ell is not None and self.beta is not None:
            raise ValueError("give either ell or beta, not both")
        if self.model == "chain":
            if not self.chain_file:
                raise ValueError("model 'chain' needs chain_file")
            if len(self.wells) < 2:
                raise ValueError("model 'chain' needs at least two wells")
        if any(n < 2 for n in self.verify_sizes):
            raise ValueError("verify_sizes entries must be at least 2")
        return self


def _invalid(source: str, error: Exception) -> ConfigInvalid:
    return ConfigInvalid(f"{source}: {error}")


def validate_config(data: Dict[str, Any], source: str = "config") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except PydanticValidationError as e:
        raise _invalid(source, e) from e


def load_config(filename: str = DEFAULT_CONFIG) -> ExperimentConfig:
    """Read a JSON config; a missing file gives the defaults"""
    try:
        with open(filename, 'r') as f:
            raw = json.load(f)
    except FileNotFoundError:
        print(f"Config file {filename} not found, using defaults")
        return ExperimentConfig()
    except json.JSONDecodeError as e:
        raise _invalid(filename, e) from e
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"{filename}: top level must be a JSON object")
    config = validate_config(raw, filename)
    print(f"Configuration loaded from {filename}")
    return config


def save_config(config: ExperimentConfig, filename: str = DEFAULT_CONFIG):
    with open(filename, 'w') as f:
        f.write(config.model_dump_json(indent=4))
    print(f"Configuration saved to {filename}")


def with_overrides(config: ExperimentConfig, **updates) -> ExperimentConfig:
    """Copy of the config with the given fields replaced; None values are skipped"""
    data = config.model_dump()
    data.update({k: v for k, v in updates.items() if v is not None})
    return validate_config(data, "command line")


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form"""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_chain_file(config: ExperimentConfig, config_path: Optional[str] = None) -> str:
    """Chain files are looked up relative to the config file"""
    path = config.chain_file
    if config_path and not os.path.isabs(path):
        path = os.path.join(os.path.dirname(os.path.abspath(config_path)), path)
    return path


# ---------------------------------------------------------------------------
# Model specs
# ---------------------------------------------------------------------------

def _product_potential(zeros, exponents):
    def H(x: float) -> float:
        value = 1.0
        for z, e in zip(zeros, exponents):
            value *= abs(x - z) ** e
        return value
    return H


def model_spec(config: ExperimentConfig, N: int):
    """ZeroRangeSpec or BirthDeathSpec for grid point N"""
    if config.model == "zr":
        return ZeroRangeSpec(config.kappa, config.alpha, N, ell=config.ell, beta=config.beta)
    if config.model == "bd":
        section = config.birth_death
        exponents = section.exponents or [config.alpha] * len(section.zeros)
        lam = two_site_lambda(N, max(exponents)) if section.rates == "two_site" else None
        if section.potential == "product":
            H, H_outside = _product_potential(section.zeros, exponents), None
        else:
            H, H_outside = None, (lambda x, c=section.h_outside: c)
        return BirthDeathSpec(
            N=N, zeros=tuple(section.zeros), exponents=tuple(exponents),
            interval=tuple(section.interval), H=H, H_outside=H_outside,
            neighborhood=section.neighborhood, lam=lam, ell=config.ell, beta=config.beta,
            rate_scale=section.rate_scale)
    raise ConfigInvalid(f"model {config.model!r} has no spec builder")
