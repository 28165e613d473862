import numpy as np
import pytest

from phconv.plant import GridProfile, LoadProfile, PlantParams
from phconv.sim_engine import ControllerConfig, Scenario, run_scenario


@pytest.fixture(scope="session")
def plant():
    return PlantParams()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)


def short_scenario(plant, duration=0.05, controller="ph", load_w=500e3,
                   decimation=1, **kw):
    """A small steady scenario for fast structural tests."""
    return Scenario(
        name="short",
        duration=duration,
        plant=plant,
        control=ControllerConfig(kind=controller),
        grid=GridProfile.steady(plant.f_nom),
        load=LoadProfile.constant(load_w),
        decimation=decimation,
        **kw,
    )


@pytest.fixture(scope="session")
def steady_run(plant):
    """One 50 ms steady run at rated load, shared across tests."""
    return run_scenario(short_scenario(plant))
