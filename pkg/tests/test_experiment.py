import numpy as np
import pytest

from core.errors import DatasetError, SpecError
from models.dataset import Configuration, CountRecord, ExperimentPlan, TomographyDataset
from models.gates import basis_unitary, preparation_unitaries
from models.model_space import Anchors, level_spec
from models.pauli import pauli_matrix
from services.experiment import (
    PAULI6, SIC4, amplitude_damping_matrix, build_plan, cosine_envelope, cosine_envelope_params,
    dephasing_matrix, enumerate_configurations, gate, ground_truth, sample_synthetic, sequence_unitary
)
from services.likelihood import predict_probabilities

GROUND = np.array([1.0, 0.0], dtype=complex)


def _bloch(psi):
    rho = np.outer(psi, psi.conj())
    return np.array([np.trace(rho @ pauli_matrix(p)).real for p in "XYZ"])


def _same_up_to_phase(U, V):
    overlap = np.trace(U.conj().T @ V) / 2
    return abs(abs(overlap) - 1.0) < 1e-12

# === GATES ===

def test_gate_library():
    assert _same_up_to_phase(gate("X180"), pauli_matrix("X"))
    assert _same_up_to_phase(sequence_unitary(["X90", "X90"]), gate("X180"))
    assert _same_up_to_phase(sequence_unitary(["Y90", "Ym90"]), np.eye(2))
    np.testing.assert_allclose(gate("VZ", np.pi / 2), np.diag([np.exp(-0.25j * np.pi), np.exp(0.25j * np.pi)]))
    for name in ("X180", "X90", "Y90", "XSIC"):
        U = gate(name)
        np.testing.assert_allclose(U @ U.conj().T, np.eye(2), atol=1e-14)


def test_gate_errors():
    with pytest.raises(SpecError):
        gate("H")
    with pytest.raises(SpecError):
        gate("VZ")
    with pytest.raises(SpecError):
        gate("X90", 0.1)


def test_sequence_applies_left_to_right():
    sequence = ["X90", ("VZ", 0.7)]
    np.testing.assert_allclose(sequence_unitary(sequence), gate("VZ", 0.7) @ gate("X90"))


def test_pauli6_bloch_vectors():
    expected = [(0, 0, 1), (0, 0, -1), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]
    for sequence, bloch in zip(PAULI6, expected):
        np.testing.assert_allclose(_bloch(sequence_unitary(sequence) @ GROUND), bloch, atol=1e-12)


def test_sic4_states_form_a_tetrahedron():
    vectors = [_bloch(sequence_unitary(sequence) @ GROUND) for sequence in SIC4]
    for i in range(4):
        assert np.linalg.norm(vectors[i]) == pytest.approx(1.0)
        for j in range(i + 1, 4):
            assert vectors[i] @ vectors[j] == pytest.approx(-1.0 / 3.0, abs=1e-12)


def test_sic4_phase_convention():
    states = [sequence_unitary(sequence) @ GROUND for sequence in SIC4]
    # global phase fixed by a real positive |0> amplitude
    states = [psi * np.exp(-1j * np.angle(psi[0])) for psi in states]
    np.testing.assert_allclose(states[0], [1.0, 0.0], atol=1e-12)
    for psi, phi in zip(states[1:], (0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0)):
        expected = [np.sqrt(1.0 / 3.0), -1j * np.sqrt(2.0 / 3.0) * np.exp(1j * phi)]
        np.testing.assert_allclose(psi, expected, atol=1e-12)
    azimuths = [np.degrees(np.arctan2(v[1], v[0])) for v in map(_bloch, states[1:])]
    np.testing.assert_allclose(azimuths, [-90.0, 30.0, 150.0], atol=1e-9)


def test_basis_rotations_map_axis_to_z():
    for letter, sequence in zip("xyz", (PAULI6[2], PAULI6[4], PAULI6[0])):
        psi = basis_unitary(letter) @ sequence_unitary(sequence) @ GROUND
        assert abs(psi[0]) ** 2 == pytest.approx(1.0)

# === PLANS ===

def test_configuration_counts():
    assert len(enumerate_configurations(build_plan(1))) == 18
    assert len(enumerate_configurations(build_plan(2))) == 324
    assert len(enumerate_configurations(build_plan(1, "sic4"))) == 12
    five = build_plan(5, n_times=2)
    assert five.n_prep_configs * five.n_basis_configs == 248832


def test_configuration_order_matches_ids():
    plan = build_plan(2, n_times=2)
    configs = enumerate_configurations(plan)
    assert configs[0] == Configuration((0, 0), (0, 0))
    assert configs[1] == Configuration((0, 0), (0, 1))
    assert configs[9] == Configuration((0, 1), (0, 0))
    assert [plan.config_id(c) for c in configs] == list(range(len(configs)))


def test_build_plan_times():
    plan = build_plan(1, t_end=5.0, n_times=50)
    assert plan.times_us[0] == 0.0
    assert plan.times_us[-1] == pytest.approx(5.0)
    assert len(plan.times_us) == 50


def test_plan_validation():
    with pytest.raises(DatasetError):
        ExperimentPlan(1, "pauli6", (0.5, 1.0), 100)
    with pytest.raises(DatasetError):
        ExperimentPlan(1, "pauli6", (0.0, 1.0, 1.0), 100)
    with pytest.raises(DatasetError):
        ExperimentPlan(1, "tetra", (0.0,), 100)
    with pytest.raises(DatasetError):
        ExperimentPlan(1, "custom", (0.0,), 100)


def test_custom_preparations():
    plan = build_plan(1, "custom", n_times=2, custom_preps=[["I"], ["X180"], [["RY", 0.5]]])
    assert plan.n_prep == 3
    assert len(preparation_unitaries(plan.prep_set, plan.custom_preps)) == 3
    assert ExperimentPlan.from_dict(plan.header()) == plan


def test_dataset_validation():
    plan = build_plan(1, n_times=2, n_shots=10)
    config = Configuration((0,), (2,))
    with pytest.raises(DatasetError):
        TomographyDataset(plan, [CountRecord(config, 0, np.array([5, 4]))])
    with pytest.raises(DatasetError):
        TomographyDataset(plan, [CountRecord(config, 2, np.array([5, 5]))])
    with pytest.raises(DatasetError):
        TomographyDataset(plan, [CountRecord(Configuration((6,), (2,)), 0, np.array([5, 5]))])
    with pytest.raises(DatasetError):
        CountRecord(config, 0, np.array([4.5, 5.5]))

# === GROUND TRUTH ===

def test_standard_dissipation_matrices():
    D = amplitude_damping_matrix(0.2)
    np.testing.assert_allclose(D, D.conj().T)
    assert np.trace(D).real == pytest.approx(0.1)
    assert np.linalg.eigvalsh(D).min() > -1e-14
    np.testing.assert_allclose(dephasing_matrix(0.4), np.diag([0.0, 0.0, 0.2]))


def test_ground_truth_places_terms():
    spec = level_spec(2, "nn", "local")
    params = ground_truth(
        spec,
        hamiltonian={((1,), "Z"): 0.5, ((0, 1), "XY"): -0.2},
        dissipators={(1,): dephasing_matrix(0.1)},
        states={0: np.diag([0.0, 1.0])},
    )
    assert params.theta_H[0][1, 2] == 0.5
    assert params.theta_H[1][0, 0, 1] == -0.2
    assert np.count_nonzero(params.theta_L[0]) == 0
    assert params.theta_L[1, 2, 2] == pytest.approx(np.sqrt(0.05))
    np.testing.assert_allclose(params.theta_rho[0], [[0.0, 0.0], [0.0, 1.0]], atol=1e-12)


def test_ground_truth_rejects_terms_outside_model():
    spec = level_spec(3, "nn", "local")
    with pytest.raises(SpecError):
        ground_truth(spec, hamiltonian={((0, 2), "XX"): 0.1})
    with pytest.raises(SpecError):
        ground_truth(spec, dissipators={(0, 1): np.eye(15)})
    with pytest.raises(SpecError):
        ground_truth(level_spec(2, "local", "none", state_param=(True, False)), states={1: np.eye(2) / 2})


def test_cosine_envelope():
    t = np.array([0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(cosine_envelope(t, 2.0, 1.0), [0.0, 2.0, 0.0, 0.0], atol=1e-12)


def test_cosine_envelope_params_need_anchors():
    with pytest.raises(SpecError):
        cosine_envelope_params(level_spec(1, "local", "none"), 1.0)
    spec = level_spec(1, "local", "none", anchors=Anchors(5, 0.0, 2.0))
    params = cosine_envelope_params(spec, 1.5)
    np.testing.assert_allclose(params.theta_H[0][0, 0], [0.0, 0.75, 1.5, 0.75, 0.0], atol=1e-12)

# === SYNTHETIC DATA ===

def test_sample_synthetic_is_reproducible(qubit_spec, qubit_truth, qubit_plan, qubit_dataset):
    again = sample_synthetic((qubit_spec, qubit_truth), qubit_plan, seed=7)
    np.testing.assert_array_equal(again.index.counts, qubit_dataset.index.counts)
    other = sample_synthetic((qubit_spec, qubit_truth), qubit_plan, seed=8)
    assert not np.array_equal(other.index.counts, qubit_dataset.index.counts)


def test_sample_synthetic_layout(qubit_plan, qubit_dataset):
    assert len(qubit_dataset) == 18 * 11
    assert np.all(qubit_dataset.index.shots == qubit_plan.n_shots)
    first = qubit_dataset.records[:12]
    assert [r.t_index for r in first[:11]] == list(range(11))
    assert first[11].config == Configuration((0,), (1,))


def test_single_record_regenerates_from_its_key(qubit_spec, qubit_truth, qubit_plan, qubit_dataset):
    record = qubit_dataset.records[40]
    config_id = qubit_plan.config_id(record.config)
    table = predict_probabilities(qubit_truth, qubit_spec, qubit_plan)
    p = table.lookup(record.config, record.t_index)
    counts = np.random.default_rng([7, config_id, record.t_index]).multinomial(qubit_plan.n_shots, p / p.sum())
    np.testing.assert_array_equal(counts, record.counts)


def test_large_shot_counts_fall_in_binomial_bands(qubit_spec, qubit_truth):
    n_shots = 10 ** 6
    plan = build_plan(1, t_end=5.0, n_times=11, n_shots=n_shots)
    dataset = sample_synthetic((qubit_spec, qubit_truth), plan, seed=3)
    table = predict_probabilities(qubit_truth, qubit_spec, plan)
    p = np.array([table.lookup(r.config, r.t_index)[0] for r in dataset.records])
    frequency = dataset.index.counts[:, 0] / n_shots
    band = 4.0 * np.sqrt(p * (1.0 - p) / n_shots) + 1e-12
    assert np.mean(np.abs(frequency - p) <= band) >= 0.99
