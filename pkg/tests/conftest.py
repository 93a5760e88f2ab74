"""
Shared fixtures: a one-qubit model with a driven X term, Z detuning and
amplitude damping, a short Pauli-6 plan and a sampled dataset.
"""
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from models.model_space import level_spec
from services.experiment import amplitude_damping_matrix, build_plan, ground_truth, sample_synthetic

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

A_X = 1.0
A_Z = 0.314
GAMMA = 0.05


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def qubit_spec():
    return level_spec(1, "local", "local")


@pytest.fixture(scope="session")
def qubit_truth(qubit_spec):
    return ground_truth(
        qubit_spec,
        hamiltonian={((0,), "X"): A_X, ((0,), "Z"): A_Z},
        dissipators={(0,): amplitude_damping_matrix(GAMMA)},
    )


@pytest.fixture(scope="session")
def qubit_plan():
    return build_plan(1, "pauli6", t_end=5.0, n_times=11, n_shots=1000)


@pytest.fixture(scope="session")
def qubit_dataset(qubit_spec, qubit_truth, qubit_plan):
    return sample_synthetic((qubit_spec, qubit_truth), qubit_plan, seed=7)
