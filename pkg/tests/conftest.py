from __future__ import annotations

import pytest

from r2o.config import default_config
from r2o.sim import building, power, traffic


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def power_case(config):
    return power.run_power_case(power.case1_fixture(0), config)


@pytest.fixture(scope="session")
def building_case(config):
    return building.run_building_case(building.cold_day_fixture(0), config)


@pytest.fixture(scope="session")
def traffic_case(config):
    return traffic.run_traffic_case(traffic.default_fixture(0), config)
