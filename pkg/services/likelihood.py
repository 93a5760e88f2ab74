"""
Forward model and multinomial likelihood of tomography counts.

Trajectories are batched over preparations: a full-data evaluation always
propagates every preparation of the plan over every plan time, so any record's
term is independent of which other records are present.
"""
import math
import logging
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np
from scipy.special import gammaln

from config.settings import PROB_FLOOR
from core.errors import DatasetError, LikelihoodError
from core.utils import ordered_map
from models.gates import basis_unitaries, preparation_unitaries
from models.model_space import build_initial_state, initial_state_gradient, parameter_layout
from models.pauli import embed_operator
from services.propagator import LindbladGenerator, backpropagate, integrate

logger = logging.getLogger('likelihood')

# === OPERATORS ===

@dataclass
class ProbabilityTable:
    """Floored and renormalized outcome probabilities per (configuration, time)"""
    configs: list
    times: np.ndarray
    probabilities: np.ndarray

    def lookup(self, config, t_index):
        return self.probabilities[self.configs.index(config), t_index]

def check_compatible(spec, plan):
    if spec.n_observed != plan.n_observed:
        raise DatasetError(
            f"Model observes {spec.n_observed} qubits but the data has {plan.n_observed}"
        )

@lru_cache(maxsize=8192)
def preparation_operator(spec, plan, prep_id):
    """Full-register preparation unitary U_i (identity on hidden qubits)"""
    local = preparation_unitaries(plan.prep_set, plan.custom_preps)
    choice = np.unravel_index(prep_id, (plan.n_prep,) * plan.n_observed)
    product = reduce(np.kron, [local[c] for c in choice])
    return embed_operator(product, spec.observed, spec.n_total)

@lru_cache(maxsize=4096)
def measurement_operator(spec, plan, basis_id):
    """Full-register basis rotation U_m applied before computational readout"""
    local = basis_unitaries(plan.basis_set)
    choice = np.unravel_index(basis_id, (plan.n_basis,) * plan.n_observed)
    product = reduce(np.kron, [local[c] for c in choice])
    return embed_operator(product, spec.observed, spec.n_total)

@lru_cache(maxsize=64)
def outcome_index(spec):
    """Observed bit-string index of every full-register basis state (big-endian in observed order)"""
    full = np.arange(spec.dim)
    index = np.zeros(spec.dim, dtype=int)
    for j, q in enumerate(spec.observed):
        bit = (full >> (spec.n_total - 1 - q)) & 1
        index |= bit << (spec.n_observed - 1 - j)
    index.setflags(write=False)
    return index

def marginalize(diagonals, spec):
    """Partial trace over hidden qubits of computational-basis populations"""
    index = outcome_index(spec)
    out = np.empty((diagonals.shape[0], 2 ** spec.n_observed))
    for outcome in range(out.shape[1]):
        out[:, outcome] = diagonals[:, index == outcome].sum(axis=1)
    return out

def floor_probabilities(p, floor=PROB_FLOOR):
    """Clamp below the floor and renormalize each row"""
    q = np.maximum(p, floor)
    return q / q.sum(axis=-1, keepdims=True)

# === MULTINOMIAL ===

def multinomial_ll(counts, probs, n_shots=None, floor=PROB_FLOOR):
    """
    log N! - sum_b log x_b! + sum_b x_b log p_b

    Args:
        counts: Integer counts per outcome
        probs: Outcome probabilities (floored and renormalized when floor > 0)
        n_shots: Expected total count (defaults to the sum of counts)
        floor: Probability floor

    Returns:
        float: Log-likelihood including the multinomial coefficient
    """
    x = np.asarray(counts, dtype=float)
    p = np.asarray(probs, dtype=float)
    if x.shape != p.shape:
        raise LikelihoodError(f"counts {x.shape} and probabilities {p.shape} differ in shape")
    total = float(x.sum())
    if n_shots is not None and total != float(n_shots):
        raise LikelihoodError(f"Counts sum to {total:g}, expected {n_shots}")
    if floor > 0:
        p = floor_probabilities(p, floor)
    observed = x > 0
    if np.any(p[observed] <= 0.0):
        raise LikelihoodError("Zero probability assigned to an observed outcome")
    value = gammaln(total + 1.0) - float(np.sum(gammaln(x + 1.0))) + float(np.sum(x[observed] * np.log(p[observed])))
    return float(value)

def saturated_ll(dataset):
    """Per-record multinomial maximum, an upper bound for any model"""
    idx = dataset.index
    terms = [multinomial_ll(x, x / n, n, floor=0.0) for x, n in zip(idx.counts, idx.shots)]
    return math.fsum(terms)

# === EVALUATION ===

@dataclass
class LikelihoodEvaluation:
    ll: float
    terms: np.ndarray
    probabilities: np.ndarray
    gradient: np.ndarray = None
    schedule: object = None


def evaluate(params, spec, dataset, record_ids=None, prep_scope="plan", gradient=False,
             solver=None, floor=PROB_FLOOR, threads=None, schedule=None):
    """
    Likelihood (and optionally its gradient) over selected records.

    Args:
        params: ParameterSet matching spec
        spec: ModelSpec
        dataset: TomographyDataset
        record_ids: Records to include (default: all)
        prep_scope: "plan" propagates every plan preparation, "records" only those used
        gradient: Also compute the gradient with respect to the packed parameters
        solver: SolverConfig
        floor: Probability floor
        threads: Worker threads for the per-basis record terms
        schedule: StepSchedule to replay (frozen step sequence)

    Returns:
        LikelihoodEvaluation
    """
    plan = dataset.plan
    check_compatible(spec, plan)
    params.check(spec)
    idx = dataset.index
    rows = np.arange(len(dataset)) if record_ids is None else np.asarray(record_ids, dtype=int)
    layout = parameter_layout(spec)
    if len(rows) == 0:
        return LikelihoodEvaluation(0.0, np.zeros(0), np.zeros((0, plan.n_outcomes)),
                                    np.zeros(layout.size) if gradient else None)

    if prep_scope == "plan":
        prep_list = np.arange(plan.n_prep_configs)
    else:
        prep_list = np.unique(idx.prep_ids[rows])
    slots = np.searchsorted(prep_list, idx.prep_ids[rows])

    U = np.stack([preparation_operator(spec, plan, int(p)) for p in prep_list])
    rho0 = build_initial_state(params.theta_rho, spec)
    states0 = U @ rho0 @ np.conj(np.swapaxes(U, -1, -2))
    gen = LindbladGenerator.from_model(spec, params)
    trajectory = integrate(gen, states0, plan.times, solver, record=gradient, schedule=schedule)

    t_rows = idx.t_index[rows]
    counts = idx.counts[rows].astype(float)
    shots = idx.shots[rows].astype(float)
    basis_rows = idx.basis_ids[rows]
    out_index = outcome_index(spec)

    def _basis_group(basis_id):
        pos = np.nonzero(basis_rows == basis_id)[0]
        V = measurement_operator(spec, plan, int(basis_id))
        states = trajectory.states[t_rows[pos], slots[pos]]
        diagonals = np.einsum('ki,rij,kj->rk', V, states, V.conj()).real
        p = marginalize(diagonals, spec)
        q = np.maximum(p, floor)
        norm = q.sum(axis=1)
        p_tilde = q / norm[:, None]
        x = counts[pos]
        n = shots[pos]
        if np.any((x > 0) & (p_tilde <= 0.0)):
            raise LikelihoodError("Zero probability assigned to an observed outcome")
        safe = np.where(x > 0, p_tilde, 1.0)
        terms = gammaln(n + 1.0) - gammaln(x + 1.0).sum(axis=1) + (x * np.log(safe)).sum(axis=1)
        G = None
        if gradient:
            w = np.where(p > floor, x / np.where(q > 0, q, 1.0) - (n / norm)[:, None], 0.0)
            w_full = w[:, out_index]
            G = np.einsum('ki,rk,kj->rij', V.conj(), w_full, V)
        return pos, terms, p_tilde, G

    groups = ordered_map(_basis_group, np.unique(basis_rows), threads)

    terms = np.empty(len(rows))
    probabilities = np.empty((len(rows), plan.n_outcomes))
    for pos, group_terms, p_tilde, _ in groups:
        terms[pos] = group_terms
        probabilities[pos] = p_tilde
    ll = math.fsum(terms)
    if not np.isfinite(ll):
        raise LikelihoodError("Non-finite log-likelihood")

    grad = None
    if gradient:
        save_grads = np.zeros_like(trajectory.states)
        for pos, _, _, G in groups:
            np.add.at(save_grads, (t_rows[pos], slots[pos]), G)
        adjoint = backpropagate(gen, trajectory, save_grads)
        g_rho0 = np.einsum('pji,pjk,pkl->il', U.conj(), adjoint.initial, U)
        grad_state = initial_state_gradient(params.theta_rho, spec, g_rho0)
        grad_diss = np.stack(adjoint.dissipator) if adjoint.dissipator else np.zeros(layout.diss_shape)
        grad = np.concatenate([grad_state.ravel(), np.ravel(adjoint.hamiltonian), grad_diss.ravel()])
        if not np.all(np.isfinite(grad)):
            raise LikelihoodError("Non-finite gradient")

    return LikelihoodEvaluation(ll, terms, probabilities, grad, trajectory.schedule)

# === PUBLIC API ===

def total_ll(params, spec, dataset, solver=None, floor=PROB_FLOOR, threads=None, schedule=None):
    """Full-data log-likelihood summed in record order"""
    return evaluate(params, spec, dataset, solver=solver, floor=floor, threads=threads, schedule=schedule).ll

def ll_gradient(params, spec, dataset, solver=None, floor=PROB_FLOOR, threads=None, schedule=None):
    """Gradient of total_ll with respect to the packed ParameterSet"""
    return evaluate(params, spec, dataset, gradient=True, solver=solver, floor=floor,
                    threads=threads, schedule=schedule).gradient

def ll_and_gradient(params, spec, dataset, solver=None, floor=PROB_FLOOR, threads=None, schedule=None):
    result = evaluate(params, spec, dataset, gradient=True, solver=solver, floor=floor,
                      threads=threads, schedule=schedule)
    return result.ll, result.gradient

def batch_ll_and_gradient(params, spec, dataset, record_ids, solver=None, floor=PROB_FLOOR, threads=None):
    """Minibatch value and gradient, propagating only the batch's own preparations"""
    result = evaluate(params, spec, dataset, record_ids=record_ids, prep_scope="records",
                      gradient=True, solver=solver, floor=floor, threads=threads)
    return result.ll, result.gradient

def record_probabilities(params, spec, dataset, solver=None, floor=PROB_FLOOR, threads=None, schedule=None):
    """Model probabilities for every record, shape (n_records, n_outcomes)"""
    return evaluate(params, spec, dataset, solver=solver, floor=floor, threads=threads,
                    schedule=schedule).probabilities

def predict_counts(params, spec, dataset, solver=None, floor=PROB_FLOOR, threads=None):
    """Predicted mean counts n_shots * p per record"""
    probabilities = record_probabilities(params, spec, dataset, solver, floor, threads)
    return probabilities * dataset.index.shots[:, None]

def predict_probabilities(params, spec, plan, configs=None, times=None, solver=None, floor=PROB_FLOOR):
    """
    Outcome probabilities for configurations at the requested times.

    Args:
        params: ParameterSet
        spec: ModelSpec
        plan: ExperimentPlan supplying the preparation and basis sets
        configs: Configurations (default: all of the plan)
        times: Times in µs (default: plan times)
        solver: SolverConfig
        floor: Probability floor

    Returns:
        ProbabilityTable
    """
    check_compatible(spec, plan)
    params.check(spec)
    configs = plan.configurations() if configs is None else list(configs)
    times = plan.times if times is None else np.asarray(times, dtype=float)

    prep_ids = np.array([c.prep_index(plan.n_prep) for c in configs], dtype=int)
    basis_ids = np.array([c.basis_index(plan.n_basis) for c in configs], dtype=int)
    prep_list = np.unique(prep_ids)
    slots = np.searchsorted(prep_list, prep_ids)

    U = np.stack([preparation_operator(spec, plan, int(p)) for p in prep_list])
    rho0 = build_initial_state(params.theta_rho, spec)
    states0 = U @ rho0 @ np.conj(np.swapaxes(U, -1, -2))
    gen = LindbladGenerator.from_model(spec, params)
    states = integrate(gen, states0, times, solver).states

    probabilities = np.empty((len(configs), len(times), plan.n_outcomes))
    for basis_id in np.unique(basis_ids):
        pos = np.nonzero(basis_ids == basis_id)[0]
        V = measurement_operator(spec, plan, int(basis_id))
        block = states[:, slots[pos]]
        diagonals = np.einsum('ki,tcij,kj->tck', V, block, V.conj()).real
        flat = marginalize(diagonals.reshape(-1, spec.dim), spec)
        p = floor_probabilities(flat, floor).reshape(len(times), len(pos), plan.n_outcomes)
        probabilities[pos] = np.swapaxes(p, 0, 1)
    return ProbabilityTable(configs=configs, times=times, probabilities=probabilities)

# === VERIFICATION ===

def finite_difference_gradient(params, spec, dataset, rel_step=1e-5, schedule=None, solver=None,
                               floor=PROB_FLOOR, threads=None, indices=None):
    """
    Central differences of total_ll on a frozen step sequence.

    Differences are accumulated as sum x log(p+ / p-) so the multinomial
    constants cancel exactly.

    Args:
        params: ParameterSet
        spec: ModelSpec
        dataset: TomographyDataset
        rel_step: Step h = rel_step * max(1, |theta_i|)
        schedule: StepSchedule to replay (recorded at params when omitted)
        indices: Packed components to differentiate (default: all)

    Returns:
        np.ndarray: Finite-difference gradient (NaN outside indices)
    """
    theta = params.flatten()
    if schedule is None:
        schedule = evaluate(params, spec, dataset, solver=solver, floor=floor, threads=threads).schedule
    counts = dataset.index.counts.astype(float)
    observed = counts > 0
    indices = range(theta.size) if indices is None else indices
    out = np.full(theta.size, np.nan)
    for i in indices:
        h = rel_step * max(1.0, abs(theta[i]))
        shifted = []
        for sign in (1.0, -1.0):
            values = theta.copy()
            values[i] += sign * h
            probs = evaluate(params.unflatten(values, spec), spec, dataset, solver=solver, floor=floor,
                             threads=threads, schedule=schedule).probabilities
            shifted.append(probs)
        ratio = np.log(shifted[0][observed] / shifted[1][observed])
        out[i] = math.fsum(counts[observed] * ratio) / (2.0 * h)
    return out
