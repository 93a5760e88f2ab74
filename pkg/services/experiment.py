"""
Experiment planning, ground-truth models and seeded synthetic data.
"""
import logging

import numpy as np

from core.errors import DatasetError, SpecError
from models.dataset import CountRecord, ExperimentPlan, TomographyDataset
from models.gates import PAULI6, SIC4, gate, sequence_unitary
from models.model_space import (
    HAMILTONIAN_LETTERS, ParameterSet, dissipation_to_theta, parameter_layout, state_to_theta
)
from services.likelihood import predict_probabilities

logger = logging.getLogger('experiment')

__all__ = [
    "PAULI6", "SIC4", "gate", "sequence_unitary", "build_plan", "enumerate_configurations",
    "amplitude_damping_matrix", "dephasing_matrix", "ground_truth", "cosine_envelope",
    "cosine_envelope_params", "sample_synthetic",
]

# === PLANS ===

def build_plan(n_observed, prep_set="pauli6", t_end=5.0, n_times=50, n_shots=1000, custom_preps=None):
    """
    Plan with n_times equally spaced times on [0, t_end] µs.

    Args:
        n_observed: Observed qubits
        prep_set: pauli6, sic4 or custom
        t_end: Last time in µs
        n_times: Number of times including t = 0
        n_shots: Shots per record

    Returns:
        ExperimentPlan
    """
    if n_times < 1:
        raise DatasetError("n_times must be >= 1")
    times = np.linspace(0.0, t_end, n_times) if n_times > 1 else np.zeros(1)
    return ExperimentPlan(n_observed, prep_set, tuple(times.tolist()), n_shots, custom_preps=custom_preps)

def enumerate_configurations(plan):
    """Preparation product outer, basis product inner, both lexicographic"""
    return plan.configurations()

# === GROUND TRUTH ===

def amplitude_damping_matrix(gamma):
    """Dissipation matrix of sqrt(gamma) |0><1| on one qubit (basis X, Y, Z)"""
    return 0.25 * gamma * np.array([[1, -1j, 0], [1j, 1, 0], [0, 0, 0]], dtype=complex)

def dephasing_matrix(gamma_phi):
    """Pure dephasing with coherences decaying as exp(-gamma_phi t)"""
    return np.diag([0.0, 0.0, 0.5 * gamma_phi]).astype(complex)

def ground_truth(spec, hamiltonian=None, dissipators=None, states=None):
    """
    Assemble a ParameterSet from physical coefficients.

    Args:
        spec: ModelSpec
        hamiltonian: {(connection, letters): value} with H = sum value * P; values are
            arrays over anchors for time-dependent specs
        dissipators: {connection: D} per dissipator block
        states: {qubit: 2x2 density matrix} for parameterized qubits

    Returns:
        ParameterSet
    """
    layout = parameter_layout(spec)
    params = ParameterSet.zeros(spec)
    theta_rho = np.array(params.theta_rho)
    theta_H = [np.zeros(shape) for shape in layout.ham_shapes]
    theta_L = np.zeros(layout.diss_shape)

    for (connection, letters), value in (hamiltonian or {}).items():
        connection = tuple(connection)
        k = len(connection)
        if len(letters) != k or k > spec.ham.k_max or connection not in spec.ham.connections(k):
            raise SpecError(f"Hamiltonian term {letters} on {connection} is not in the model")
        index = tuple(HAMILTONIAN_LETTERS.index(letter) for letter in letters.upper())
        row = spec.ham.connections(k).index(connection)
        theta_H[k - 1][(row,) + index] = value

    for connection, D in (dissipators or {}).items():
        connection = tuple(connection)
        if connection not in spec.diss.connections:
            raise SpecError(f"No dissipator block on {connection}")
        theta_L[spec.diss.connections.index(connection)] = dissipation_to_theta(D)

    slots = {q: i for i, q in enumerate(spec.parameterized_qubits)}
    for qubit, rho in (states or {}).items():
        if qubit not in slots:
            raise SpecError(f"Qubit {qubit} has no parameterized initial state")
        theta_rho[slots[qubit]] = state_to_theta(rho)

    return ParameterSet(theta_rho, tuple(theta_H), theta_L).check(spec)

def cosine_envelope(times, amplitude, duration):
    """Raised-cosine pulse amplitude * (1 - cos(2 pi t / duration)) / 2 on [0, duration]"""
    t = np.clip(np.asarray(times, dtype=float), 0.0, duration)
    return 0.5 * amplitude * (1.0 - np.cos(2.0 * np.pi * t / duration))

def cosine_envelope_params(spec, amplitude, qubit=0, letter="X", dissipators=None, states=None):
    """Time-dependent ground truth with one cosine-envelope drive term sampled at the anchors"""
    if not spec.is_time_dependent:
        raise SpecError("Cosine envelopes need an anchored (time-dependent) spec")
    anchors = spec.time_dependence
    values = cosine_envelope(anchors.times - anchors.t_start, amplitude, anchors.t_end - anchors.t_start)
    return ground_truth(spec, {((qubit,), letter): values}, dissipators, states)

# === SYNTHETIC DATA ===

def sample_synthetic(truth, plan, seed, solver=None):
    """
    Draw multinomial counts from a ground-truth model.

    Each record uses its own generator keyed by (seed, configuration id, time
    index), so any single record can be regenerated in isolation.

    Args:
        truth: (ModelSpec, ParameterSet)
        plan: ExperimentPlan
        seed: Integer seed
        solver: SolverConfig for the forward model

    Returns:
        TomographyDataset: records in configuration-major, time-minor order
    """
    spec, params = truth
    table = predict_probabilities(params, spec, plan, solver=solver)
    records = []
    for c, config in enumerate(table.configs):
        config_id = plan.config_id(config)
        for t_index in range(len(plan.times_us)):
            p = table.probabilities[c, t_index]
            rng = np.random.default_rng([int(seed), config_id, t_index])
            counts = rng.multinomial(plan.n_shots, p / p.sum())
            records.append(CountRecord(config, t_index, counts))
    logger.info(f"Sampled {len(records)} records ({len(table.configs)} configurations, "
                f"{len(plan.times_us)} times, {plan.n_shots} shots, seed {seed})")
    return TomographyDataset(plan, records)
