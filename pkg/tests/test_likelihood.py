import math

import numpy as np
import pytest

from core.errors import DatasetError, LikelihoodError
from models.dataset import Configuration, CountRecord, ExperimentPlan, TomographyDataset
from models.gates import rotation
from models.model_space import ParameterSet, build_hamiltonian, hamiltonian_terms, level_spec, parameter_layout
from models.pauli import pauli_matrix
from services.estimator import init_params
from services.experiment import (
    amplitude_damping_matrix, build_plan, dephasing_matrix, ground_truth, sample_synthetic
)
from services.likelihood import (
    batch_ll_and_gradient, evaluate, finite_difference_gradient, floor_probabilities,
    ll_and_gradient, ll_gradient, marginalize, multinomial_ll, predict_counts, predict_probabilities,
    saturated_ll, total_ll
)
from services.propagator import SolverConfig

TIGHT = SolverConfig(rtol=1e-9, atol=1e-10)

# === MULTINOMIAL ===

def test_multinomial_ll_value():
    expected = math.log(4) + 3 * math.log(0.75) + math.log(0.25)
    assert multinomial_ll([3, 1], [0.75, 0.25]) == pytest.approx(expected, rel=1e-12)


def test_multinomial_ll_maximized_at_frequencies():
    counts = np.array([6, 3, 1])
    best = multinomial_ll(counts, counts / 10)
    assert best > multinomial_ll(counts, [0.5, 0.4, 0.1])
    assert best > multinomial_ll(counts, [1 / 3, 1 / 3, 1 / 3])


def test_multinomial_ll_zero_probability():
    with pytest.raises(LikelihoodError):
        multinomial_ll([2, 1], [1.0, 0.0], floor=0.0)
    assert np.isfinite(multinomial_ll([2, 1], [1.0, 0.0]))
    assert multinomial_ll([3, 0], [1.0, 0.0], floor=0.0) == pytest.approx(0.0, abs=1e-12)


def test_multinomial_ll_checks_shot_total():
    with pytest.raises(LikelihoodError):
        multinomial_ll([3, 1], [0.5, 0.5], n_shots=5)


def test_floor_probabilities_renormalizes():
    q = floor_probabilities(np.array([[1.0, 0.0, 0.0]]), floor=0.01)
    assert q.sum() == pytest.approx(1.0)
    assert q[0, 1] == pytest.approx(0.01 / 1.02)


def test_marginalize_traces_out_hidden_qubit():
    spec = level_spec(2, "local", "none", observed=(0,))
    diagonals = np.array([[0.1, 0.2, 0.3, 0.4]])
    np.testing.assert_allclose(marginalize(diagonals, spec), [[0.3, 0.7]])
    spec_hidden_first = level_spec(2, "local", "none", observed=(1,))
    np.testing.assert_allclose(marginalize(diagonals, spec_hidden_first), [[0.4, 0.6]])

# === FORWARD MODEL ===

def test_rabi_probabilities_per_basis():
    spec = level_spec(1, "local", "none")
    params = ground_truth(spec, hamiltonian={((0,), "X"): 0.7})
    plan = build_plan(1, n_times=6, t_end=2.5)
    table = predict_probabilities(params, spec, plan, solver=TIGHT)
    t = plan.times
    z_from_ground = table.lookup(Configuration((0,), (2,)), slice(None))
    np.testing.assert_allclose(z_from_ground[:, 1], np.sin(0.7 * t) ** 2, atol=1e-7)
    x_from_ground = table.lookup(Configuration((0,), (0,)), slice(None))
    np.testing.assert_allclose(x_from_ground, 0.5, atol=1e-7)
    x_from_plus = table.lookup(Configuration((2,), (0,)), slice(None))
    np.testing.assert_allclose(x_from_plus[:, 0], 1.0, atol=1e-7)


def test_preparation_and_basis_conventions_at_time_zero():
    spec = level_spec(1, "none", "none")
    plan = ExperimentPlan(1, "pauli6", (0.0,), 10)
    table = predict_probabilities(ParameterSet.zeros(spec), spec, plan, floor=0.0)
    # rows: state |0>,|1>,|+>,|->,|+i>,|-i>; columns: basis x, y, z
    expected_p0 = np.array([
        [0.5, 0.5, 1.0],
        [0.5, 0.5, 0.0],
        [1.0, 0.5, 0.5],
        [0.0, 0.5, 0.5],
        [0.5, 1.0, 0.5],
        [0.5, 0.0, 0.5],
    ])
    p0 = table.probabilities[:, 0, 0].reshape(6, 3)
    np.testing.assert_allclose(p0, expected_p0, atol=1e-12)


def test_two_qubit_outcomes_are_big_endian():
    spec = level_spec(2, "none", "none")
    plan = ExperimentPlan(2, "pauli6", (0.0,), 10)
    table = predict_probabilities(ParameterSet.zeros(spec), spec, plan, configs=[Configuration((0, 1), (2, 2))], floor=0.0)
    np.testing.assert_allclose(table.probabilities[0, 0], [0.0, 1.0, 0.0, 0.0], atol=1e-12)


def test_spec_and_data_must_observe_same_qubits(qubit_dataset):
    spec = level_spec(2, "local", "local")
    with pytest.raises(DatasetError):
        total_ll(ParameterSet.zeros(spec), spec, qubit_dataset)


def test_zero_probability_observation_without_floor():
    spec = level_spec(1, "none", "none")
    plan = ExperimentPlan(1, "pauli6", (0.0,), 10)
    dataset = TomographyDataset(plan, [CountRecord(Configuration((0,), (2,)), 0, np.array([9, 1]))])
    with pytest.raises(LikelihoodError):
        total_ll(ParameterSet.zeros(spec), spec, dataset, floor=0.0)
    assert np.isfinite(total_ll(ParameterSet.zeros(spec), spec, dataset))

# === TOTALS ===

def test_total_ll_bounded_by_saturated(qubit_spec, qubit_truth, qubit_dataset):
    ll = total_ll(qubit_truth, qubit_spec, qubit_dataset)
    assert ll < saturated_ll(qubit_dataset)
    assert ll > total_ll(init_params(qubit_spec, seed=0), qubit_spec, qubit_dataset)


def test_record_terms_are_additive(qubit_spec, qubit_truth, qubit_dataset):
    full = evaluate(qubit_truth, qubit_spec, qubit_dataset)
    ids = np.arange(len(qubit_dataset))
    first = evaluate(qubit_truth, qubit_spec, qubit_dataset, record_ids=ids[::2])
    second = evaluate(qubit_truth, qubit_spec, qubit_dataset, record_ids=ids[1::2])
    assert first.ll + second.ll == pytest.approx(full.ll, rel=1e-12)
    np.testing.assert_allclose(first.terms, full.terms[::2], rtol=1e-14)


def test_thread_count_does_not_change_result(qubit_spec, qubit_truth, qubit_dataset):
    serial = evaluate(qubit_truth, qubit_spec, qubit_dataset, gradient=True, threads=1)
    parallel = evaluate(qubit_truth, qubit_spec, qubit_dataset, gradient=True, threads=4)
    assert serial.ll == parallel.ll
    np.testing.assert_array_equal(serial.gradient, parallel.gradient)


def test_predict_counts_sum_to_shots(qubit_spec, qubit_truth, qubit_dataset):
    predicted = predict_counts(qubit_truth, qubit_spec, qubit_dataset)
    np.testing.assert_allclose(predicted.sum(axis=1), qubit_dataset.plan.n_shots)


def test_sampled_counts_track_predictions(qubit_spec, qubit_truth, qubit_dataset):
    predicted = predict_counts(qubit_truth, qubit_spec, qubit_dataset)
    observed = qubit_dataset.index.counts
    z = np.abs(observed - predicted) / np.sqrt(np.maximum(predicted, 1.0))
    assert z.max() < 6.0

# === GRADIENTS ===

def _assert_gradient_matches(gradient, fd):
    mask = np.abs(gradient) > 1e-8
    rel = np.abs(fd[mask] - gradient[mask]) / np.maximum(np.abs(gradient[mask]), np.abs(fd[mask]))
    assert rel.max() < 1e-4
    np.testing.assert_allclose(fd[~mask], gradient[~mask], atol=1e-6)


def test_gradient_matches_finite_differences(qubit_spec, qubit_dataset):
    params = init_params(qubit_spec, seed=3)
    result = evaluate(params, qubit_spec, qubit_dataset, gradient=True)
    fd = finite_difference_gradient(params, qubit_spec, qubit_dataset, schedule=result.schedule)
    _assert_gradient_matches(result.gradient, fd)


def test_gradient_with_hidden_qubit(rng):
    spec = level_spec(2, "a2a", "local", observed=(0,))
    truth = ground_truth(spec, hamiltonian={((0,), "X"): 0.9, ((0, 1), "ZZ"): 0.4, ((1,), "X"): 0.3})
    plan = build_plan(1, n_times=5, t_end=2.0, n_shots=500)
    dataset = sample_synthetic((spec, truth), plan, seed=11)
    params = init_params(spec, seed=5)
    result = evaluate(params, spec, dataset, gradient=True)
    fd = finite_difference_gradient(params, spec, dataset, schedule=result.schedule)
    _assert_gradient_matches(result.gradient, fd)


def test_gradient_time_dependent():
    from models.model_space import Anchors
    spec = level_spec(1, "local", "local", anchors=Anchors(3, 0.0, 2.0))
    plan = build_plan(1, n_times=5, t_end=2.0, n_shots=500)
    truth = ground_truth(spec, hamiltonian={((0,), "X"): np.array([0.2, 1.0, 0.4])})
    dataset = sample_synthetic((spec, truth), plan, seed=2)
    params = init_params(spec, seed=9)
    result = evaluate(params, spec, dataset, gradient=True)
    fd = finite_difference_gradient(params, spec, dataset, schedule=result.schedule)
    _assert_gradient_matches(result.gradient, fd)


def test_finite_difference_subset_leaves_nan(qubit_spec, qubit_dataset):
    params = init_params(qubit_spec, seed=3)
    fd = finite_difference_gradient(params, qubit_spec, qubit_dataset, indices=[4, 5])
    assert np.all(np.isfinite(fd[[4, 5]]))
    assert np.isnan(fd[0])


def test_ll_and_gradient_consistent(qubit_spec, qubit_truth, qubit_dataset):
    ll, grad = ll_and_gradient(qubit_truth, qubit_spec, qubit_dataset)
    assert ll == total_ll(qubit_truth, qubit_spec, qubit_dataset)
    assert grad.shape == (16,)


def test_batch_gradient_uses_only_batch_records(qubit_spec, qubit_truth, qubit_dataset):
    ids = np.nonzero(qubit_dataset.index.prep_ids == 0)[0]
    ll, grad = batch_ll_and_gradient(qubit_truth, qubit_spec, qubit_dataset, ids)
    full = evaluate(qubit_truth, qubit_spec, qubit_dataset, gradient=True)
    assert ll == pytest.approx(full.terms[ids].sum(), abs=1e-2)
    assert grad.shape == full.gradient.shape


def test_t0_records_give_zero_generator_gradient(qubit_spec, qubit_truth):
    plan = ExperimentPlan(1, "pauli6", (0.0,), 200)
    dataset = sample_synthetic((qubit_spec, qubit_truth), plan, seed=4)
    params = init_params(qubit_spec, seed=3)
    grad = ll_gradient(params, qubit_spec, dataset)
    n_state = parameter_layout(qubit_spec).n_state
    np.testing.assert_array_equal(grad[n_state:], 0.0)
    assert np.any(grad[:n_state] != 0.0)


def test_doubling_counts_doubles_gradient(qubit_spec, qubit_dataset):
    plan = qubit_dataset.plan
    doubled_plan = ExperimentPlan(plan.n_observed, plan.prep_set, plan.times_us, 2 * plan.n_shots)
    doubled = TomographyDataset(doubled_plan, [
        CountRecord(record.config, record.t_index, 2 * record.counts) for record in qubit_dataset.records
    ])
    params = init_params(qubit_spec, seed=3)
    grad = ll_gradient(params, qubit_spec, qubit_dataset)
    np.testing.assert_allclose(ll_gradient(params, qubit_spec, doubled), 2 * grad,
                               rtol=1e-12, atol=1e-12 * np.max(np.abs(grad)))


def test_directional_derivative_matches_gradient(qubit_spec, qubit_dataset, rng):
    params = init_params(qubit_spec, seed=3)
    base = evaluate(params, qubit_spec, qubit_dataset, gradient=True)
    theta = params.flatten()
    direction = rng.normal(size=theta.size)
    direction /= np.linalg.norm(direction)
    h = 1e-5

    def ll_at(values):
        moved = ParameterSet.unflatten(values, qubit_spec)
        return evaluate(moved, qubit_spec, qubit_dataset, schedule=base.schedule).ll

    slope = (ll_at(theta + h * direction) - ll_at(theta - h * direction)) / (2 * h)
    assert slope == pytest.approx(base.gradient @ direction, rel=1e-6)

# === GAUGE ===

def test_hidden_qubit_unitary_leaves_likelihood_unchanged():
    spec = level_spec(2, "a2a", "local", observed=(0,))
    hamiltonian = {((0,), "X"): 0.8, ((1,), "Z"): 0.5, ((1,), "X"): 0.2, ((0, 1), "XX"): 0.3, ((0, 1), "ZY"): 0.15}
    hidden_D = amplitude_damping_matrix(0.1) + dephasing_matrix(0.05)
    rho_observed = np.array([[0.9, 0.1], [0.1, 0.1]], dtype=complex)
    rho_hidden = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    original = ground_truth(spec, hamiltonian=hamiltonian,
                            dissipators={(0,): amplitude_damping_matrix(0.1), (1,): hidden_D},
                            states={0: rho_observed, 1: rho_hidden})

    V = rotation("Y", 0.7) @ rotation("Z", 0.3)
    # hidden qubit is the least significant factor
    U = np.kron(np.eye(2), V)
    H = U @ build_hamiltonian(original.theta_H, spec) @ U.conj().T
    labels, ops = hamiltonian_terms(spec)
    rotated_terms = {(connection, letters): float(np.trace(op @ H).real / 4)
                     for (_, connection, letters), op in zip(labels, ops)}
    # V P_a V^dag = sum_b R_ba P_b
    R = np.array([[np.trace(pauli_matrix(b) @ V @ pauli_matrix(a) @ V.conj().T).real / 2 for a in "XYZ"]
                  for b in "XYZ"])
    rotated = ground_truth(spec, hamiltonian=rotated_terms,
                           dissipators={(0,): amplitude_damping_matrix(0.1), (1,): R @ hidden_D @ R.T},
                           states={0: rho_observed, 1: V @ rho_hidden @ V.conj().T})
    assert not np.allclose(rotated.flatten(), original.flatten())

    plan = build_plan(1, n_times=5, t_end=2.0, n_shots=500)
    dataset = sample_synthetic((spec, original), plan, seed=8)
    first = evaluate(original, spec, dataset, solver=TIGHT)
    second = evaluate(rotated, spec, dataset, solver=TIGHT)
    np.testing.assert_allclose(second.probabilities, first.probabilities, rtol=0, atol=1e-8)
    assert abs(second.ll - first.ll) < 1e-4
