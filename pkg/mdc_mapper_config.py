"""
MDC Mapper: Configuration
Accelerator, energy and pruning settings, and the JSON files they live in.
"""

import json
import logging
import os
from dataclasses import dataclass, field, asdict
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Mapping, Union

from mdc_mapper_errors import ConfigError

logger = logging.getLogger(__name__)

CONFIGS_DIR = Path(__file__).parent.resolve() / "configs"
APP_DATA_BASE_DIR_NAME = ".mdc_mapper"
PRESETS = ("p1", "p2")


def app_home() -> Path:
    override = os.environ.get("MDC_MAPPER_HOME")
    return Path(override) if override else Path.home() / APP_DATA_BASE_DIR_NAME


@dataclass(frozen=True)
class EnergyProfile:
    """Per-event energy costs. Defaults are illustrative and only meaningful relative to each other."""
    mac: float = 1.0
    l1_read: float = 1.0
    l1_write: float = 1.0
    l2_read: float = 6.0
    l2_write: float = 6.0
    dram_read: float = 200.0
    dram_write: float = 200.0
    noc_per_byte_per_hop: float = 2.0

    def __post_init__(self):
        for key, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"Energy cost '{key}' must be >= 0, got {value}.")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EnergyProfile":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            logger.warning(f"Ignoring unknown energy_profile keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items() if k in cls.__dataclass_fields__})


class DbMode(Enum):
    EXACT = "exact"
    SUMMED = "summed"  # extent of MIV dims taken as the plain sum of tile sizes


@dataclass(frozen=True)
class PruningFlags:
    factor_tiles: bool = True
    utilization: bool = True
    db_mode: DbMode = DbMode.EXACT
    absent_loop_factor: bool = True

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["db_mode"] = self.db_mode.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PruningFlags":
        valid = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "db_mode" in valid:
            valid["db_mode"] = DbMode(valid["db_mode"])
        return cls(**valid)


@dataclass(frozen=True)
class AcceleratorConfig:
    name: str = "custom"
    num_pes: int = 168
    clock_mhz: float = 200.0
    noc_bandwidth_gbps: float = 2.4
    l1_bytes: int = 512
    l2_bytes: int = 110592
    dram_block_bytes: int = 64
    multicast: bool = True
    max_parallel_loops: int = 3
    utilization_bound: float = 0.1
    energy_profile: EnergyProfile = field(default_factory=EnergyProfile)

    def __post_init__(self):
        for key in ("num_pes", "l1_bytes", "l2_bytes", "dram_block_bytes", "max_parallel_loops"):
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"Accelerator '{self.name}': {key} must be a positive integer, got {value!r}.")
        for key in ("clock_mhz", "noc_bandwidth_gbps"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"Accelerator '{self.name}': {key} must be positive.")
        if not (0 < self.utilization_bound <= 1):
            raise ConfigError(f"Accelerator '{self.name}': utilization_bound must be in (0, 1], "
                              f"got {self.utilization_bound}.")

    @property
    def noc_bandwidth_bytes_per_sec(self) -> float:
        return self.noc_bandwidth_gbps * 1e9

    @property
    def noc_bytes_per_cycle(self) -> Fraction:
        """Exact bytes the NoC moves per clock cycle."""
        return Fraction(str(self.noc_bandwidth_gbps)) * 1000 / Fraction(str(self.clock_mhz))

    @property
    def clock_hz(self) -> float:
        return self.clock_mhz * 1e6

    @property
    def peak_gops(self) -> float:
        return float(Fraction(self.num_pes * 2) * Fraction(str(self.clock_mhz)) / 1000)

    def with_overrides(self, **overrides: Any) -> "AcceleratorConfig":
        data = {**self.__dict__, **{k: v for k, v in overrides.items() if v is not None}}
        return AcceleratorConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["energy_profile"] = self.energy_profile.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], name: str = "custom") -> "AcceleratorConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            logger.warning(f"Ignoring unknown accelerator keys: {sorted(unknown)}")
        valid = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        valid.setdefault("name", name)
        profile = valid.pop("energy_profile", None)
        try:
            if profile is not None:
                if not isinstance(profile, Mapping):
                    raise ConfigError("energy_profile must be an object.")
                valid["energy_profile"] = EnergyProfile.from_dict(profile)
            return cls(**valid)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid accelerator config '{valid.get('name')}': {e}") from e


def load_accelerator(path_or_preset: Union[str, Path]) -> AcceleratorConfig:
    """Load a config file, or a shipped preset by name ('p1', 'p2')."""
    path = Path(path_or_preset)
    if not path.is_file():
        preset = CONFIGS_DIR / f"{path_or_preset}.json"
        if not preset.is_file():
            raise ConfigError(f"Accelerator config '{path_or_preset}' is neither a file nor a preset {PRESETS}.")
        path = preset
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Could not read accelerator config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Accelerator config {path} must be a JSON object.")
    config = AcceleratorConfig.from_dict(data, name=path.stem)
    logger.info(f"Accelerator '{config.name}': {config.num_pes} PEs @ {config.clock_mhz} MHz, "
                f"NoC {config.noc_bandwidth_gbps} GB/s, L1 {config.l1_bytes} B, L2 {config.l2_bytes} B")
    return config


def save_accelerator(config: AcceleratorConfig, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2)
