"""The JSON run configuration shared by all subcommands."""

import logging
import math
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dynamics import SystemSpec
from .errors import InvalidConfig
from .harness import SampleSpec, Thresholds
from .integrator import IntegrationParams
from .model import KernelSpec, PotentialSpec
from .sticky import StickyParams

logger = logging.getLogger(__name__)


class _Block(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class InitialState(_Block):
    """Explicit initial positions and velocities, one row per agent."""

    x: list[list[float]]
    v: list[list[float]]


class SweepConfig(_Block):
    trials: int = Field(default=1, ge=0)
    master_seed: int = Field(default=0, ge=0)
    parallelism: int | None = Field(default=None, ge=1)


class OutputConfig(_Block):
    directory: Path = Path("results")
    prefix: str = "run"


class RunConfig(_Block):
    system: SystemSpec
    integration: IntegrationParams
    sampling: SampleSpec = Field(default_factory=SampleSpec)
    initial: InitialState | None = None
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    thresholds: Thresholds = Field(default_factory=Thresholds)
    sticky: StickyParams | None = None
    output: OutputConfig = Field(default_factory=OutputConfig)
    # weight of the cross term in the modified pair energy
    epsilon: float = Field(default=0.1, ge=0.0)

    @model_validator(mode="after")
    def _check_initial(self) -> "RunConfig":
        if self.initial is not None:
            shape = (self.system.N, self.system.n)
            for name, rows in (("x", self.initial.x), ("v", self.initial.v)):
                if len(rows) != shape[0] or any(len(row) != shape[1] for row in rows):
                    raise ValueError(f"initial.{name} must have shape {shape}")
        return self

    @property
    def sticky_params(self) -> StickyParams:
        return self.sticky or StickyParams(t_max=self.integration.T)


def _describe(exc: ValidationError) -> str:
    lines = []
    for error in exc.errors():
        loc = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{loc}: {error['msg']}")
    return "; ".join(lines)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        raise InvalidConfig(f"{source}: {_describe(exc)}") from exc


def load_config(path: Path) -> RunConfig:
    """Read and validate a JSON run configuration."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfig(f"Cannot read config '{path}': {exc}") from exc
    config = parse_config(text, str(path))
    logger.debug("Loaded config from %s", path)
    return config


def with_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Apply CLI flag overrides (T, h, seed, trials, parallelism, output_dir) and re-validate."""
    data = config.model_dump(mode="json")
    targets = {
        "T": ("integration", "T"),
        "h": ("integration", "h"),
        "seed": ("sweep", "master_seed"),
        "trials": ("sweep", "trials"),
        "parallelism": ("sweep", "parallelism"),
        "output_dir": ("output", "directory"),
    }
    for name, value in overrides.items():
        if value is None:
            continue
        if name not in targets:
            raise InvalidConfig(f"Unknown override '{name}'")
        block, field = targets[name]
        data[block][field] = str(value) if name == "output_dir" else value
    if overrides.get("seed") is not None:
        data["sampling"]["seed"] = overrides["seed"]
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfig(_describe(exc)) from exc


class ValidationRequest(_Block):
    """Kernel/potential pair for `validate`; radius defaults to twice the kernel support, or 10."""

    kernel: KernelSpec
    potential: PotentialSpec
    radius: float | None = Field(default=None, gt=0.0)
    grid: int = Field(default=10_000, ge=100)

    @property
    def span(self) -> float:
        if self.radius is not None:
            return self.radius
        reach = self.kernel.support_radius
        return 2.0 * reach if 0.0 < reach < math.inf else 10.0


def load_validation_request(path: Path) -> ValidationRequest:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfig(f"Cannot read '{path}': {exc}") from exc
    try:
        return ValidationRequest.model_validate_json(text)
    except ValidationError as exc:
        raise InvalidConfig(f"{path}: {_describe(exc)}") from exc
