import importlib.resources as resources

import numpy as np
import pytest

from armteleop.kinematics import load_arm


def arm_config_path(name: str) -> str:
    return str(resources.files("armteleop") / "configs" / f"{name}.cfg")


@pytest.fixture(scope="session")
def ur5e():
    return load_arm(arm_config_path("ur5e"))


@pytest.fixture(scope="session")
def irb120():
    return load_arm(arm_config_path("irb120"))


@pytest.fixture(scope="session")
def ur5e_home():
    return np.deg2rad([0.0, -90.0, 90.0, -90.0, -90.0, 0.0])


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
