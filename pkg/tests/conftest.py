import os
import sys

import numpy as np
import pytest

# 添加專案根目錄到路徑
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from modules.comms import CommParams
from modules.deployment import build_topology
from modules.kernel import KernelConfig
from modules.sinr import SinrParams


@pytest.fixture
def sinr():
    return SinrParams()


@pytest.fixture
def line_topology(sinr):
    """四個節點排成一列，間距 50 m：只有相鄰兩點互為鄰居，Δ = 2"""
    positions = np.array([[0.0, 0.0], [50.0, 0.0], [100.0, 0.0], [150.0, 0.0]])
    return build_topology(positions, sinr)


@pytest.fixture
def comm_params(line_topology):
    return CommParams(tx_const=0.15, duration=300, delta=line_topology.delta)


@pytest.fixture
def kernel_config():
    return KernelConfig(master_seed=11, max_slots=200_000)


@pytest.fixture
def app():
    from app import create_app
    return create_app({"TESTING": True, "LOG_LEVEL": "WARNING"})


@pytest.fixture
def runner(app):
    return app.test_cli_runner()
