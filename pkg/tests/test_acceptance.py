"""
End-to-end checks on published five-qubit lattice values and on synthetic
recovery, likelihood-ratio calibration, hidden-qubit discrimination and
anchor reconstruction.
"""
import os

import numpy as np
import pytest
from scipy.stats import chi2, kstest

from models.model_space import (
    Anchors, ParameterSet, build_dissipator, dof_count, embed_warm_start, level_spec, parameter_layout
)
from services.estimator import (
    FitResult, OptimizerConfig, fit, hessian_uncertainty, init_params, term_indices, uncertainty_from_gradient
)
from services.experiment import (
    amplitude_damping_matrix, build_plan, cosine_envelope, cosine_envelope_params, ground_truth, sample_synthetic
)
from services.likelihood import evaluate, total_ll
from services.propagator import SolverConfig
from services.selection import (
    explanatory_power, greedy_path, load_lattice_csv, rank_information_criteria, wilks_pvalue
)

from tests.conftest import A_X, A_Z, GAMMA

N_OBS_FIVE_QUBIT = 796_262_400
XI_THRESHOLD = 1.65
POLISH = SolverConfig(rtol=1e-8, atol=1e-8)


@pytest.fixture
def lattice(fixtures_dir):
    return load_lattice_csv(os.path.join(fixtures_dir, "five_qubit_models.csv"))


def test_five_qubit_greedy_reproduction(lattice):
    path = greedy_path(lattice)
    assert path.stop == ("3local", "a2a")
    assert len(path.moves) == 7


def test_five_qubit_dof_matches_table(lattice):
    for (ham_level, diss_level), node in lattice.items():
        if "3local" in (ham_level, diss_level):
            continue
        assert dof_count(level_spec(5, ham_level, diss_level)).generator_dof == node.dof


def test_information_criteria_goldens(lattice):
    rows = {(r["ham_level"], r["diss_level"]): r for r in rank_information_criteria(lattice, N_OBS_FIVE_QUBIT)}
    assert rows[("a2a", "a2a")]["aic"] == pytest.approx(815.80e6, abs=0.01e6)
    assert rows[("a2a", "a2a")]["bic"] == pytest.approx(815.84e6, abs=0.01e6)
    assert rows[("none", "none")]["aic"] == pytest.approx(1024.98e6, abs=0.01e6)
    assert rows[("none", "none")]["bic"] == pytest.approx(1024.98e6, abs=0.01e6)


def _decay_rate(params, spec):
    D = build_dissipator(params.theta_L, spec)[0].D
    return 2.0 * float((D[0, 0] + D[1, 1]).real)


def _polish(params, spec, dataset, free=None, max_iterations=8):
    """Newton ascent on the free coordinates, stepping only along well-curved directions"""
    theta = params.flatten()
    free = np.arange(theta.size) if free is None else np.asarray(free)
    ll = total_ll(params, spec, dataset, solver=POLISH)
    for _ in range(max_iterations):
        base = theta.copy()
        current = evaluate(ParameterSet.unflatten(base, spec), spec, dataset, gradient=True, solver=POLISH)

        def gradient(values):
            moved = base.copy()
            moved[free] = values
            return evaluate(ParameterSet.unflatten(moved, spec), spec, dataset, gradient=True,
                            solver=POLISH, schedule=current.schedule).gradient[free]

        eigenvalues, vectors = np.linalg.eigh(uncertainty_from_gradient(gradient, base[free]).information)
        keep = eigenvalues > 1e-6 * eigenvalues.max()
        g = current.gradient[free]
        step = vectors[:, keep] @ ((vectors[:, keep].T @ g) / eigenvalues[keep])
        for _ in range(8):
            trial = base.copy()
            trial[free] += step
            trial_ll = total_ll(ParameterSet.unflatten(trial, spec), spec, dataset, solver=POLISH)
            if trial_ll >= ll:
                break
            step = 0.5 * step
        else:
            break
        gain = trial_ll - ll
        theta, ll = trial, trial_ll
        if gain < 1e-8:
            break
    return ParameterSet.unflatten(theta, spec), ll


@pytest.mark.slow
def test_single_qubit_recovery(qubit_spec, qubit_truth):
    plan = build_plan(1, t_end=5.0, n_times=50, n_shots=10_000)
    dataset = sample_synthetic((qubit_spec, qubit_truth), plan, seed=2024)
    rng = np.random.default_rng(5)
    start = ParameterSet.unflatten(qubit_truth.flatten() * (1.0 + 0.1 * rng.normal(size=16)), qubit_spec)

    coarse = fit(dataset, qubit_spec, start, OptimizerConfig(learning_rate=5e-3, max_steps=600, plateau_window=20))
    result = fit(dataset, qubit_spec, coarse.params,
                 OptimizerConfig(learning_rate=5e-4, max_steps=400, plateau_window=20))
    x_index = term_indices(qubit_spec, (0,), "X")[0]
    z_index = term_indices(qubit_spec, (0,), "Z")[0]
    values = result.params.flatten()
    assert values[x_index] == pytest.approx(A_X, rel=0.05)
    assert values[z_index] == pytest.approx(A_Z, rel=0.05)
    assert _decay_rate(result.params, qubit_spec) == pytest.approx(GAMMA, rel=0.05)

    # the 3 sigma bands are stated for the likelihood maximum itself
    mle, mle_ll = _polish(result.params, qubit_spec, dataset)
    at_mle = FitResult(spec=qubit_spec, params=mle, ll_full=mle_ll, stop_reason="plateau")
    covariance = hessian_uncertainty(at_mle, dataset, method="expected", solver=POLISH).covariance
    theta = mle.flatten()
    h = 1e-6
    decay_jacobian = np.array([
        (_decay_rate(ParameterSet.unflatten(theta + h * e, qubit_spec), qubit_spec)
         - _decay_rate(ParameterSet.unflatten(theta - h * e, qubit_spec), qubit_spec)) / (2 * h)
        for e in np.eye(theta.size)
    ])
    se_gamma = np.sqrt(decay_jacobian @ covariance @ decay_jacobian)
    assert abs(theta[x_index] - A_X) < 3.0 * np.sqrt(covariance[x_index, x_index])
    assert abs(theta[z_index] - A_Z) < 3.0 * np.sqrt(covariance[z_index, z_index])
    assert abs(_decay_rate(mle, qubit_spec) - GAMMA) < 3.0 * se_gamma


@pytest.mark.slow
def test_likelihood_ratio_follows_chi_square():
    spec = level_spec(1, "local", "none", state_param=(False,))
    truth = ground_truth(spec, hamiltonian={((0,), "X"): A_X, ((0,), "Z"): A_Z})
    plan = build_plan(1, t_end=3.0, n_times=8, n_shots=500)
    y_index = term_indices(spec, (0,), "Y")[0]
    without_y = [i for i in range(parameter_layout(spec).size) if i != y_index]

    stats = []
    for replicate in range(200):
        dataset = sample_synthetic((spec, truth), plan, seed=1000 + replicate)
        _, ll_small = _polish(truth, spec, dataset, free=without_y)
        _, ll_large = _polish(truth, spec, dataset)
        stats.append(max(0.0, 2.0 * (ll_large - ll_small)))
    stats = np.array(stats)

    assert kstest(stats, "chi2", args=(1,)).pvalue > 0.01
    assert 0.7 <= stats.mean() <= 1.3
    np.testing.assert_allclose([wilks_pvalue(s, 1) for s in stats], chi2.sf(stats, 1), rtol=1e-10, atol=1e-14)


@pytest.mark.slow
def test_hidden_qubit_discrimination():
    coupled = level_spec(2, "a2a", "local", observed=(0,))
    truth = ground_truth(
        coupled,
        hamiltonian={((0,), "X"): 0.6, ((1,), "Z"): 0.2, ((0, 1), "XX"): 0.4, ((0, 1), "YY"): 0.4},
        dissipators={(0,): amplitude_damping_matrix(GAMMA)},
    )
    plan = build_plan(1, t_end=10.0, n_times=21, n_shots=1000)
    dataset = sample_synthetic((coupled, truth), plan, seed=99, solver=POLISH)

    single = level_spec(1, "local", "local")
    markovian = fit(dataset, single, init_params(single, seed=0),
                    OptimizerConfig(learning_rate=1e-2, max_steps=400, plateau_window=30), POLISH)
    hidden, ll_hidden = _polish(truth, coupled, dataset)
    d_hidden = dof_count(coupled).generator_dof
    assert explanatory_power(markovian.ll_full, ll_hidden, markovian.generator_dof, d_hidden) > 10.0

    two_hidden = level_spec(3, "a2a", "local", observed=(0,))
    extended = fit(dataset, two_hidden, embed_warm_start(hidden, coupled, two_hidden),
                   OptimizerConfig(learning_rate=1e-3, max_steps=100, plateau_window=20), POLISH,
                   baseline_ll=ll_hidden)
    assert explanatory_power(ll_hidden, extended.ll_full, d_hidden, extended.generator_dof) <= XI_THRESHOLD


@pytest.mark.slow
def test_cosine_envelope_anchor_reconstruction():
    duration = 0.12
    peak = 150.0
    anchors = Anchors(15, 0.0, duration)
    spec = level_spec(1, "local", "none", anchors=anchors, state_param=(False,))
    truth = cosine_envelope_params(spec, peak)
    # 4 ns truncations
    plan = build_plan(1, t_end=duration, n_times=31, n_shots=10_000)
    dataset = sample_synthetic((spec, truth), plan, seed=31)

    x, y, z = (term_indices(spec, (0,), letter) for letter in "XYZ")
    start = ParameterSet.unflatten(0.97 * truth.flatten(), spec)
    result = fit(dataset, spec, start,
                 OptimizerConfig(learning_rate=0.05, max_steps=200, plateau_window=20, fixed=tuple(z)))
    fitted, _ = _polish(result.params, spec, dataset, free=np.concatenate([x, y]))

    values = fitted.flatten()
    np.testing.assert_array_less(np.abs(values[x] - cosine_envelope(anchors.times, peak, duration)), 0.05 * peak)
    np.testing.assert_array_less(np.abs(values[y]), 0.05 * peak)
    np.testing.assert_array_equal(values[z], 0.0)
