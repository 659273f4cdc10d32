import json
from fractions import Fraction

import pytest

from mdc_mapper_config import (AcceleratorConfig, DbMode, EnergyProfile, PruningFlags, app_home,
                               load_accelerator, save_accelerator)
from mdc_mapper_errors import ConfigError


def test_presets(p1, p2):
    assert (p1.num_pes, p1.clock_mhz, p1.noc_bandwidth_gbps, p1.l1_bytes, p1.l2_bytes, p1.dram_block_bytes) == \
        (168, 200, 2.4, 512, 110592, 64)
    assert (p2.num_pes, p2.noc_bandwidth_gbps) == (1024, 25.6)
    assert p1.multicast and p1.max_parallel_loops == 3
    assert p1.utilization_bound == pytest.approx(0.1)


def test_peak_gops(p1, p2):
    assert p1.peak_gops == pytest.approx(67.2)
    assert p2.peak_gops == pytest.approx(409.6)


def test_noc_bytes_per_cycle_is_exact(p1):
    assert p1.noc_bytes_per_cycle == Fraction(12)


def test_round_trip(tmp_path, p2):
    path = tmp_path / "hw.json"
    save_accelerator(p2, path)
    loaded = load_accelerator(path)
    assert loaded == AcceleratorConfig.from_dict(p2.to_dict(), name="hw")
    assert loaded.energy_profile == p2.energy_profile


def test_unknown_keys_are_ignored(tmp_path, caplog):
    path = tmp_path / "odd.json"
    path.write_text(json.dumps({"num_pes": 16, "flux_capacitor": 1}))
    with caplog.at_level("WARNING"):
        hw = load_accelerator(path)
    assert hw.num_pes == 16
    assert "flux_capacitor" in caplog.text


@pytest.mark.parametrize("data", [
    {"num_pes": 0},
    {"l2_bytes": -1},
    {"utilization_bound": 1.5},
    {"utilization_bound": 0},
    {"clock_mhz": 0},
    {"energy_profile": {"mac": -1}},
    {"energy_profile": 3},
])
def test_invalid_values(tmp_path, data):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigError):
        load_accelerator(path)


def test_missing_config():
    with pytest.raises(ConfigError):
        load_accelerator("p9")


def test_overrides_skip_none(p1):
    hw = p1.with_overrides(utilization_bound=None, max_parallel_loops=2)
    assert hw.max_parallel_loops == 2
    assert hw.utilization_bound == p1.utilization_bound


def test_pruning_flags_round_trip():
    flags = PruningFlags(factor_tiles=False, db_mode=DbMode.SUMMED)
    assert PruningFlags.from_dict(flags.to_dict()) == flags
    assert flags.to_dict()["db_mode"] == "summed"


def test_energy_profile_defaults():
    e = EnergyProfile()
    assert e.dram_read > e.l2_read > e.l1_read


def test_app_home_follows_environment(mapper_home):
    assert app_home() == mapper_home
