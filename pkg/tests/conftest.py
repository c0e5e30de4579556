import os
import sys

# single-threaded BLAS: the suite's matrices are tiny (threading only adds
# lock contention) and timing-sensitive tests want a quiet machine
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from swingnet.datasets import (collocation_grid, generate,
                               generate_offset_validation, scenario_grid)
from swingnet.network import find_equilibrium, load_bundled_case


@pytest.fixture(scope="session")
def kundur11():
    return load_bundled_case("kundur11")


@pytest.fixture(scope="session")
def ieee39():
    return load_bundled_case("ieee39")


@pytest.fixture(scope="session")
def kundur11_equilibrium(kundur11):
    return find_equilibrium(kundur11)


@pytest.fixture(scope="session")
def ieee39_equilibrium(ieee39):
    return find_equilibrium(ieee39)


# Scenario datasets are expensive; generate once per session and share.

@pytest.fixture(scope="session")
def scenario_data(kundur11, kundur11_equilibrium):
    data = {}
    for label in ("A", "B", "C", "D", "E"):
        data[label] = generate(kundur11, label, equilibrium=kundur11_equilibrium)
    return data


@pytest.fixture(scope="session")
def validation_data(kundur11, kundur11_equilibrium):
    data = {}
    for label in ("A", "E"):
        data[label] = generate_offset_validation(
            kundur11, scenario_grid(label), scenario=label,
            equilibrium=kundur11_equilibrium,
        )
    return data


@pytest.fixture(scope="session")
def test_data(kundur11, kundur11_equilibrium):
    return generate(kundur11, "test", equilibrium=kundur11_equilibrium)


@pytest.fixture(scope="session")
def collocation(kundur11):
    return collocation_grid(model=kundur11)


@pytest.fixture(scope="session")
def quick_vanilla_model(kundur11, scenario_data, validation_data):
    """A briefly trained 5x32 vanilla net, enough for timing and IO tests."""
    from swingnet.training import preset_hyperparameters, train

    hyper = preset_hyperparameters("vanilla", "A", seed=0, max_epochs=40, patience=40)
    return train(kundur11, scenario_data["A"], validation_data["A"], hyper)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
