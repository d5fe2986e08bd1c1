"""Run configuration shared by every CLI command.

A config is a flat record of plain values (areas in units of pi) so that it
serializes to JSON and back without loss and can be embedded verbatim in every
output artifact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from blockade_gates.experiments import DEFAULT_EPSILON_GRID, USAGE_THRESHOLD, AreaBudget
from blockade_gates.optimizer import DEFAULT_AREA_RANGE, SCHEMA_VERSION, ConstraintSet
from blockade_gates.qubit_system import GateSpec

COMMANDS = ("optimize", "sweep", "minarea", "usage", "census", "mechanism")
DEFAULT_RESTARTS = 10_000


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _tuple(values, cast) -> tuple:
    if isinstance(values, (str, bytes)) or not hasattr(values, "__iter__"):
        raise ConfigError(f"expected a list, got {values!r}")
    return tuple(cast(v) for v in values)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    gate: str = "pab"
    n_qubits: int = 2
    n_pulses: tuple[int, ...] = (3,)
    sigma_order: tuple[float, ...] = ()
    positivity: bool = False
    targeted: tuple[tuple[str, float], ...] = ()
    area_cap_pi: float | None = None
    area_range_pi: tuple[float, float] = tuple(v / math.pi for v in DEFAULT_AREA_RANGE)
    independent: bool = False
    restarts: int = DEFAULT_RESTARTS
    master_seed: int = 0
    epsilon_grid: tuple[float, ...] = DEFAULT_EPSILON_GRID
    fidelity_targets: tuple[float, ...] = (0.999,)
    restarts_per_probe: int = AreaBudget.restarts_per_probe
    resolution_pi: float = AreaBudget.resolution / math.pi
    max_probes: int = AreaBudget.max_probes
    threshold: float = USAGE_THRESHOLD
    input: str | None = None
    protocol: str | None = None
    output: str | None = None
    workers: int | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        try:
            set_("n_pulses", _tuple(self.n_pulses, int))
            set_("sigma_order", _tuple(self.sigma_order, float))
            set_("targeted", tuple((str(q), float(v)) for q, v in self.targeted))
            set_("area_range_pi", _tuple(self.area_range_pi, float))
            set_("epsilon_grid", _tuple(self.epsilon_grid, float))
            set_("fidelity_targets", _tuple(self.fidelity_targets, float))
            if self.area_cap_pi is not None:
                set_("area_cap_pi", float(self.area_cap_pi))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not self.n_pulses or min(self.n_pulses) < 1:
            raise ConfigError("n_pulses must be a non-empty list of positive integers")
        if len(self.area_range_pi) != 2:
            raise ConfigError("area_range_pi needs exactly two values")
        if self.restarts < 1 or self.restarts_per_probe < 1 or self.max_probes < 1:
            raise ConfigError("restart and probe counts must be >= 1")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError("threshold must lie in [0, 1)")
        if any(not 0.0 < t < 1.0 for t in self.fidelity_targets):
            raise ConfigError("fidelity targets must lie in (0, 1)")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        # surface gate and constraint errors at load time
        self.gate_spec()
        self.constraint_set()

    def gate_spec(self) -> GateSpec:
        try:
            return GateSpec.from_name(self.gate, self.n_qubits)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def constraint_set(self) -> ConstraintSet:
        try:
            return ConstraintSet(
                sigma_order=self.sigma_order,
                positivity=self.positivity,
                targeted=dict(self.targeted),
                area_cap=None if self.area_cap_pi is None else self.area_cap_pi * math.pi,
                per_pulse_area_range=tuple(v * math.pi for v in self.area_range_pi),
                one_hot=self.independent,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def area_budget(self) -> AreaBudget:
        return AreaBudget(self.restarts_per_probe, self.resolution_pi * math.pi, self.max_probes)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "command" not in data:
            raise ConfigError("config needs a 'command'")
        if "targeted" in data:
            t = data["targeted"]
            data["targeted"] = tuple(t.items()) if isinstance(t, Mapping) else tuple(map(tuple, t))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)
