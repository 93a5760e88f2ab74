"""
Maximum-likelihood fitting of Lindblad models.

Adam ascent on the (minibatch) log-likelihood gradient, plateau stopping,
warm starts across nested models and Hessian-based uncertainties.
"""
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from tqdm import tqdm

from config.settings import (
    DEFAULT_LEARNING_RATE, DEFAULT_MAX_STEPS, DEFAULT_PLATEAU_REL_TOL,
    DEFAULT_PLATEAU_WINDOW, DEFAULT_SIGMA0, RESTART_LR_FACTOR
)
from core.errors import FitAbortedError, LikelihoodError, SolverError, SpecError
from models.model_space import (
    HAMILTONIAN_LETTERS, ModelSpec, ParameterSet, ZERO_STATE_THETA, dof_count,
    embed_warm_start, hamiltonian_terms, parameter_layout
)
from services.likelihood import batch_ll_and_gradient, evaluate

logger = logging.getLogger('estimator')

MONOTONICITY_TOL = 1e-6
EIGEN_FLOOR_REL = 1e-10

# === CONFIGURATION ===

@dataclass(frozen=True)
class OptimizerConfig:
    """Adam and stopping-rule settings"""
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = DEFAULT_MAX_STEPS
    plateau_rel_tol: float = DEFAULT_PLATEAU_REL_TOL
    plateau_window: int = DEFAULT_PLATEAU_WINDOW
    minibatch_fraction: float = 1.0
    seed: int = 0
    restart_lr_factor: float = RESTART_LR_FACTOR
    threads: int = None
    progress: bool = False
    fixed: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'fixed', tuple(int(i) for i in self.fixed))
        if not self.learning_rate > 0:
            raise SpecError("learning_rate must be positive")
        if not 0.0 < self.minibatch_fraction <= 1.0:
            raise SpecError("minibatch_fraction must lie in (0, 1]")
        if self.max_steps < 0:
            raise SpecError("max_steps must be non-negative")
        if self.plateau_window < 1:
            raise SpecError("plateau_window must be at least 1")

    @property
    def n_batches(self):
        return max(1, int(round(1.0 / self.minibatch_fraction)))

    def with_learning_rate(self, learning_rate):
        data = asdict(self)
        data["learning_rate"] = learning_rate
        return OptimizerConfig(**data)

    def to_dict(self):
        data = asdict(self)
        data["fixed"] = list(self.fixed)
        data.pop("progress")
        return data


class Adam:
    """Adam moment estimates for gradient ascent on a flat parameter vector"""

    def __init__(self, size, learning_rate=DEFAULT_LEARNING_RATE, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, theta, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta + self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

# === RESULTS ===

@dataclass
class FitResult:
    spec: ModelSpec
    params: ParameterSet
    ll_full: float
    trace: list = field(default_factory=list)
    stop_reason: str = "max_steps"
    diagnostics: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    manifest: str = None

    @property
    def dof(self):
        return dof_count(self.spec)

    @property
    def generator_dof(self):
        return self.dof.generator_dof

    def to_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "params": self.params.to_dict(self.spec),
            "ll_full": float(self.ll_full),
            "generator_dof": self.generator_dof,
            "dof": self.dof.to_dict(),
            "trace": [[int(s), float(ll)] for s, ll in self.trace],
            "stop_reason": self.stop_reason,
            "diagnostics": self.diagnostics,
            "optimizer": self.optimizer,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            spec = ModelSpec.from_dict(data["spec"])
            return cls(
                spec=spec,
                params=ParameterSet.from_dict(data["params"], spec),
                ll_full=float(data["ll_full"]),
                trace=[(int(s), float(ll)) for s, ll in data.get("trace", [])],
                stop_reason=data.get("stop_reason", "max_steps"),
                diagnostics=dict(data.get("diagnostics") or {}),
                optimizer=dict(data.get("optimizer") or {}),
                manifest=data.get("manifest"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SpecError(f"Malformed fit result: {e}") from e

# === INITIALIZATION ===

def init_params(spec, seed=None, sigma0=DEFAULT_SIGMA0):
    """
    Random starting point.

    Generator parameters of locality k are drawn from N(0, (sigma0 * 10^-(k-1))^2);
    state parameters start at |0><0| plus N(0, sigma0^2) noise. Draw order is
    theta_rho, theta_H by ascending locality, theta_L.

    Args:
        spec: ModelSpec
        seed: Seed for numpy's default generator
        sigma0: Base standard deviation

    Returns:
        ParameterSet
    """
    if sigma0 < 0:
        raise SpecError("sigma0 must be non-negative")
    rng = np.random.default_rng(seed)
    layout = parameter_layout(spec)
    theta_rho = np.tile(ZERO_STATE_THETA, (layout.n_state_qubits, 1, 1))
    theta_rho = theta_rho + rng.normal(0.0, sigma0, size=theta_rho.shape)
    theta_H = tuple(
        rng.normal(0.0, sigma0 * 10.0 ** -(k - 1), size=shape)
        for k, shape in enumerate(layout.ham_shapes, start=1)
    )
    sigma_L = sigma0 * 10.0 ** -(spec.diss.k - 1) if spec.diss.k else 0.0
    theta_L = rng.normal(0.0, sigma_L, size=layout.diss_shape)
    return ParameterSet(theta_rho, theta_H, theta_L)

def term_indices(spec, connection, letters):
    """Flat parameter indices of one Hamiltonian term (one per anchor)"""
    labels, _ = hamiltonian_terms(spec)
    target = (len(connection), tuple(connection), letters.upper())
    if any(letter not in HAMILTONIAN_LETTERS for letter in target[2]) or target not in labels:
        raise SpecError(f"Hamiltonian term {letters} on {tuple(connection)} is not in the model")
    position = labels.index(target)
    start = parameter_layout(spec).n_state + position * spec.n_anchors
    return np.arange(start, start + spec.n_anchors)

# === FITTING ===

def _plateaued(history, config):
    if len(history) <= config.plateau_window:
        return False
    recent = history[-(config.plateau_window + 1):]
    for previous, current in zip(recent, recent[1:]):
        if (current - previous) >= config.plateau_rel_tol * max(abs(previous), 1e-300):
            return False
    return True

def _minibatches(dataset, config, rng):
    """Record ids per minibatch, partitioning records by configuration"""
    config_ids = dataset.index.config_ids
    unique = np.unique(config_ids)
    order = rng.permutation(unique)
    batches = []
    for chunk in np.array_split(order, min(config.n_batches, len(unique))):
        batches.append(np.nonzero(np.isin(config_ids, chunk))[0])
    return batches

def _run(dataset, spec, init, config, solver):
    layout = parameter_layout(spec)
    theta = init.flatten()
    free = np.ones(layout.size)
    if config.fixed:
        free[np.asarray(config.fixed)] = 0.0
    adam = Adam(layout.size, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    full_batch = config.n_batches == 1

    trace = []
    history = []
    best_ll, best_theta = -np.inf, theta
    stop_reason = "max_steps"
    step = 0

    def _abort(message, values):
        params = ParameterSet.unflatten(values, spec)
        logger.error(f"Fit aborted at step {step}: {message}")
        return FitAbortedError(f"Fit aborted at step {step}: {message}", params=params, step=step)

    bar = tqdm(total=config.max_steps, desc="fit", unit="step", disable=not config.progress)
    try:
        while step < config.max_steps:
            if full_batch:
                try:
                    result = evaluate(ParameterSet.unflatten(theta, spec), spec, dataset,
                                      gradient=True, solver=solver, threads=config.threads)
                except (LikelihoodError, SolverError) as e:
                    raise _abort(str(e), theta) from e
                trace.append((step, result.ll))
                if result.ll > best_ll:
                    best_ll, best_theta = result.ll, theta
                history.append(result.ll)
                if _plateaued(history, config):
                    stop_reason = "plateau"
                    break
                theta = adam.step(theta, result.gradient * free)
                step += 1
                bar.update(1)
                bar.set_postfix(ll=f"{result.ll:.6g}")
                continue

            epoch_ll = 0.0
            batches = _minibatches(dataset, config, rng)
            logger.debug(f"Epoch at step {step}: {len(batches)} minibatches")
            for rows in batches:
                if step >= config.max_steps:
                    break
                try:
                    ll, grad = batch_ll_and_gradient(ParameterSet.unflatten(theta, spec), spec, dataset,
                                                     rows, solver=solver, threads=config.threads)
                except (LikelihoodError, SolverError) as e:
                    raise _abort(str(e), theta) from e
                trace.append((step, ll))
                epoch_ll += ll
                theta = adam.step(theta, grad * free)
                step += 1
                bar.update(1)
            else:
                history.append(epoch_ll)
                bar.set_postfix(epoch_ll=f"{epoch_ll:.6g}")
                if _plateaued(history, config):
                    stop_reason = "plateau"
                    break
    finally:
        bar.close()

    params = ParameterSet.unflatten(theta, spec)
    try:
        final_ll = evaluate(params, spec, dataset, solver=solver, threads=config.threads).ll
    except (LikelihoodError, SolverError) as e:
        raise _abort(str(e), theta) from e
    if full_batch and best_ll > final_ll:
        params, final_ll = ParameterSet.unflatten(best_theta, spec), best_ll
    return params, final_ll, trace, stop_reason

def fit(dataset, spec, init, config=None, solver=None, baseline_ll=None):
    """
    Maximize the log-likelihood starting from init.

    Args:
        dataset: TomographyDataset
        spec: ModelSpec
        init: Starting ParameterSet (random or warm start)
        config: OptimizerConfig
        solver: SolverConfig for every forward/adjoint pass
        baseline_ll: Full-data LL of a nested smaller model; a result below it
            triggers one restart with a reduced learning rate

    Returns:
        FitResult: parameters with their full-data LL
    """
    config = config or OptimizerConfig()
    init.check(spec)
    logger.info(f"Fit start: {parameter_layout(spec).size} parameters, {len(dataset)} records, "
                f"lr={config.learning_rate}, batches={config.n_batches}, max_steps={config.max_steps}")

    params, ll_full, trace, stop_reason = _run(dataset, spec, init, config, solver)
    diagnostics = {"baseline_ll": baseline_ll, "monotonic": True, "restarted": False}

    if baseline_ll is not None and ll_full < baseline_ll - MONOTONICITY_TOL:
        logger.warning(f"Fit LL {ll_full:.6f} below nested baseline {baseline_ll:.6f}; restarting")
        restart = config.with_learning_rate(config.learning_rate * config.restart_lr_factor)
        params_r, ll_r, trace_r, stop_r = _run(dataset, spec, init, restart, solver)
        diagnostics["restarted"] = True
        if ll_r > ll_full:
            params, ll_full, trace, stop_reason = params_r, ll_r, trace_r, stop_r
        if ll_full < baseline_ll - MONOTONICITY_TOL:
            diagnostics["monotonic"] = False
            logger.warning(f"Monotonicity violated after restart: {ll_full:.6f} < {baseline_ll:.6f}")

    logger.info(f"Fit stop ({stop_reason}) after {len(trace)} steps: LL = {ll_full:.6f}")
    return FitResult(spec=spec, params=params, ll_full=ll_full, trace=trace, stop_reason=stop_reason,
                     diagnostics=diagnostics, optimizer=config.to_dict())

def fit_sequence(dataset, specs, config=None, init=None, jitter=0.0, solver=None):
    """
    Fit a chain of nested specs, each warm-started from the previous fit.

    Args:
        dataset: TomographyDataset
        specs: Nested ModelSpecs, smallest first
        config: OptimizerConfig
        init: Starting ParameterSet for the first spec (random otherwise)
        jitter: Noise on newly introduced parameters of each warm start
        solver: SolverConfig

    Returns:
        list: FitResult per spec
    """
    config = config or OptimizerConfig()
    results = []
    for spec in specs:
        if not results:
            start = init if init is not None else init_params(spec, config.seed)
            results.append(fit(dataset, spec, start, config, solver))
            continue
        previous = results[-1]
        start = embed_warm_start(previous.params, previous.spec, spec, jitter=jitter, seed=config.seed)
        results.append(fit(dataset, spec, start, config, solver, baseline_ll=previous.ll_full))
    return results

# === UNCERTAINTY ===

@dataclass
class Uncertainty:
    """Standard errors from the (observed or expected) information matrix"""
    standard_errors: np.ndarray
    covariance: np.ndarray
    information: np.ndarray
    eigenvalues: np.ndarray
    null_directions: np.ndarray
    indefinite: bool = False
    method: str = "observed"

    @property
    def n_flagged(self):
        return int(self.null_directions.shape[0])

    def to_dict(self):
        return {
            "method": self.method,
            "standard_errors": self.standard_errors.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "n_flagged": self.n_flagged,
            "indefinite": self.indefinite,
        }

def information_uncertainty(information, flag_rel_tol=1e-6, method="observed"):
    """
    Pseudo-inverse covariance of an information matrix.

    Eigenvalues below 1e-10 times the largest are dropped from the inverse;
    directions below flag_rel_tol times the largest are reported as null.
    """
    info = np.atleast_2d(np.asarray(information, dtype=float))
    info = 0.5 * (info + info.T)
    eigenvalues, vectors = np.linalg.eigh(info)
    top = float(np.max(eigenvalues)) if eigenvalues.size else 0.0
    if top <= 0.0:
        raise LikelihoodError("Information matrix has no positive curvature")
    keep = eigenvalues > EIGEN_FLOOR_REL * top
    covariance = (vectors[:, keep] / eigenvalues[keep]) @ vectors[:, keep].T
    flagged = np.abs(eigenvalues) <= flag_rel_tol * top
    indefinite = bool(np.any(eigenvalues < -flag_rel_tol * top))
    if indefinite:
        logger.warning(f"Indefinite information matrix (min eigenvalue {eigenvalues.min():.3e})")
    return Uncertainty(
        standard_errors=np.sqrt(np.clip(np.diag(covariance), 0.0, None)),
        covariance=covariance,
        information=info,
        eigenvalues=eigenvalues,
        null_directions=vectors[:, flagged].T,
        indefinite=indefinite,
        method=method,
    )

def _steps(theta, rel_step):
    return rel_step * np.maximum(1.0, np.abs(theta))

def uncertainty_from_gradient(gradient_fn, theta, rel_step=1e-5, flag_rel_tol=1e-6):
    """
    Observed information -d(grad)/d(theta) by central differences of a gradient function.

    Args:
        gradient_fn: Callable theta -> gradient of the log-likelihood
        theta: Point (the MLE)
        rel_step: Step h = rel_step * max(1, |theta_i|)

    Returns:
        Uncertainty
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    steps = _steps(theta, rel_step)
    hessian = np.empty((theta.size, theta.size))
    for i, h in enumerate(steps):
        shift = np.zeros_like(theta)
        shift[i] = h
        hessian[:, i] = (np.asarray(gradient_fn(theta + shift)) - np.asarray(gradient_fn(theta - shift))) / (2.0 * h)
    return information_uncertainty(-hessian, flag_rel_tol, "observed")

def hessian_uncertainty(fit_result, dataset, method="observed", solver=None, rel_step=1e-5,
                        flag_rel_tol=1e-6, threads=None):
    """
    Standard errors of a fit from the curvature of the full-data log-likelihood.

    The solver step sequence of the MLE evaluation is frozen for every
    perturbed evaluation.

    Args:
        fit_result: FitResult at (or near) the MLE
        dataset: Dataset the fit was computed on
        method: "observed" (finite differences of the gradient) or "expected"
            (Fisher information from a probability Jacobian)
        solver: SolverConfig
        rel_step: Relative finite-difference step
        flag_rel_tol: Relative eigenvalue threshold for null directions
        threads: Worker threads for likelihood evaluation

    Returns:
        Uncertainty
    """
    spec = fit_result.spec
    theta = fit_result.params.flatten()
    if fit_result.stop_reason != "plateau":
        logger.warning(f"Uncertainty requested for a fit stopped by {fit_result.stop_reason}")
    base = evaluate(fit_result.params, spec, dataset, gradient=True, solver=solver, threads=threads)
    schedule = base.schedule

    if method == "observed":
        def _gradient(values):
            return evaluate(ParameterSet.unflatten(values, spec), spec, dataset, gradient=True,
                            solver=solver, threads=threads, schedule=schedule).gradient
        return uncertainty_from_gradient(_gradient, theta, rel_step, flag_rel_tol)

    if method == "expected":
        steps = _steps(theta, rel_step)
        shots = dataset.index.shots.astype(float)
        p0 = base.probabilities
        jacobian = np.empty((theta.size,) + p0.shape)
        for i, h in enumerate(steps):
            shift = np.zeros_like(theta)
            shift[i] = h
            plus = evaluate(ParameterSet.unflatten(theta + shift, spec), spec, dataset, solver=solver,
                            threads=threads, schedule=schedule).probabilities
            minus = evaluate(ParameterSet.unflatten(theta - shift, spec), spec, dataset, solver=solver,
                             threads=threads, schedule=schedule).probabilities
            jacobian[i] = (plus - minus) / (2.0 * h)
        weights = shots[:, None] / p0
        information = np.einsum('irb,jrb,rb->ij', jacobian, jacobian, weights)
        return information_uncertainty(information, flag_rel_tol, "expected")

    raise SpecError(f"Unknown uncertainty method '{method}'")
