import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from mdc_mapper_config import AcceleratorConfig, PruningFlags, load_accelerator  # noqa: E402
from mdc_mapper_workloads import GemmParams, make_conv1d, make_gemm  # noqa: E402


@pytest.fixture(autouse=True)
def mapper_home(tmp_path, monkeypatch):
    """Keep log files out of the real home directory."""
    home = tmp_path / "mapper_home"
    monkeypatch.setenv("MDC_MAPPER_HOME", str(home))
    return home


@pytest.fixture(scope="module")
def p1():
    return load_accelerator("p1")


@pytest.fixture(scope="module")
def p2():
    return load_accelerator("p2")


@pytest.fixture(scope="module")
def tiny_hw():
    """Desk-scale array the simulator can follow."""
    return AcceleratorConfig(name="tiny", num_pes=8, clock_mhz=200, noc_bandwidth_gbps=2.4,
                             l1_bytes=512, l2_bytes=4096, dram_block_bytes=4)


@pytest.fixture(scope="module")
def no_utilization():
    return PruningFlags(utilization=False)


@pytest.fixture(scope="module")
def conv1d_two_pe():
    """Two outputs, six taps."""
    return make_conv1d(outputs=2, taps=6)


@pytest.fixture(scope="module")
def gemm_small():
    return make_gemm(GemmParams(4, 4, 4), name="gemm4")
