"""
Lindblad propagator.

Adaptive Tsit5 (Tsitouras 5(4)) integration of batched density matrices,
a discrete adjoint pass over the recorded step sequence, and a dense
superoperator oracle for verification.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from config.settings import (
    DEFAULT_ATOL, DEFAULT_MAX_SOLVER_STEPS, DEFAULT_RTOL,
    POSITIVITY_TOLERANCE, TRACE_TOLERANCE
)
from core.errors import PhysicalityError, SolverError, SpecError
from models.model_space import (
    build_dissipator, hamiltonian_coefficients, hamiltonian_terms,
    split_lower_factor
)

logger = logging.getLogger('propagator')

# === TSIT5 TABLEAU ===

TSIT5_C = np.array([0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0])
TSIT5_A = (
    (),
    (0.161,),
    (-0.008480655492356989, 0.335480655492357),
    (2.897153057105493, -6.359448489975075, 4.3622954328695815),
    (5.325864828439257, -11.748883564062828, 7.4955393428898365, -0.09249506636175525),
    (5.86145544294642, -12.92096931784711, 8.159367898576159, -0.071584973281401,
     -0.028269050394068383),
)
TSIT5_B = np.array([0.09646076681806523, 0.01, 0.4798896504144996, 1.379008574103742,
                    -3.290069515436081, 2.324710524099774, 0.0])
TSIT5_BTILDE = np.array([-0.00178001105222577714, -0.0008164344596567469, 0.007880878010261995,
                         -0.1447110071732629, 0.5823571654525552, -0.45808210592918697,
                         1.0 / 66.0])

# PI step-size controller
BETA1 = 0.14
BETA2 = 0.08
SAFETY = 0.9
QMIN = 0.2
QMAX = 10.0

# === CONFIG AND GENERATOR ===

@dataclass(frozen=True)
class SolverConfig:
    """
    Tolerances and limits for adaptive integration.

    Accuracy is stated in the controller norm (see solution_error), not as
    a per-element absolute bound: on long horizons the largest element of a
    difference may exceed atol while the norm stays below 1.
    """
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    max_steps: int = DEFAULT_MAX_SOLVER_STEPS
    initial_step: float = None
    check_physical: bool = True
    trace_tol: float = TRACE_TOLERANCE
    positivity_tol: float = POSITIVITY_TOLERANCE

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise SpecError("Solver tolerances must be positive")
        if self.max_steps < 1:
            raise SpecError("max_steps must be at least 1")

    def to_dict(self):
        return {"rtol": self.rtol, "atol": self.atol, "max_steps": self.max_steps,
                "initial_step": self.initial_step}


class LindbladGenerator:
    """
    Compiled action rho -> -i[H(t), rho] + sum_a (L_a rho L_a^dagger - 1/2 {L_a^dagger L_a, rho}).

    Works on single matrices (d, d) or batches (B, d, d).
    """

    def __init__(self, dim, ham_ops=None, ham_coefficients=None, anchors=None,
                 jump_operators=None, spec=None, blocks=None):
        self.dim = dim
        self.spec = spec
        self.blocks = blocks or []
        self.anchors = anchors
        self.ham_ops = np.zeros((0, dim, dim), dtype=complex) if ham_ops is None else np.asarray(ham_ops)
        if ham_coefficients is None:
            ham_coefficients = np.zeros(len(self.ham_ops) if anchors is None else (len(self.ham_ops), anchors.count))
        self.ham_coefficients = np.asarray(ham_coefficients, dtype=float)

        jumps = np.zeros((0, dim, dim), dtype=complex) if jump_operators is None else np.asarray(jump_operators, dtype=complex)
        if len(jumps):
            keep = np.array([np.any(L != 0) for L in jumps])
            jumps = jumps[keep]
        self.jump_operators = jumps
        self.jump_adjoints = np.conj(np.swapaxes(jumps, -1, -2))
        self.K = np.einsum('aji,ajk->ik', jumps.conj(), jumps) if len(jumps) else np.zeros((dim, dim), dtype=complex)

        if anchors is None:
            self._static_h = self._combine(self.ham_coefficients)
        else:
            self._static_h = None

    @classmethod
    def from_model(cls, spec, params):
        """Compile the generator of a ModelSpec with its ParameterSet"""
        params.check(spec)
        _, ops = hamiltonian_terms(spec)
        coefficients = hamiltonian_coefficients(params.theta_H, spec)
        blocks = build_dissipator(params.theta_L, spec)
        jumps = [block.jump_operators() for block in blocks]
        jumps = np.concatenate(jumps) if jumps else None
        return cls(spec.dim, ops, coefficients, spec.time_dependence, jumps, spec=spec, blocks=blocks)

    @classmethod
    def from_operators(cls, hamiltonian=None, jump_operators=(), dim=None):
        """Time-independent generator from explicit H and jump operators"""
        if dim is None:
            dim = np.shape(hamiltonian)[0] if hamiltonian is not None else np.shape(jump_operators[0])[0]
        ops = None if hamiltonian is None else np.asarray(hamiltonian, dtype=complex)[None]
        coefficients = None if hamiltonian is None else np.ones(1)
        jumps = np.asarray(jump_operators, dtype=complex) if len(jump_operators) else None
        return cls(dim, ops, coefficients, None, jumps)

    @property
    def time_dependent(self):
        return self.anchors is not None

    @property
    def stop_times(self):
        return self.anchors.times if self.time_dependent else np.zeros(0)

    def _combine(self, coefficients):
        if len(self.ham_ops) == 0:
            return np.zeros((self.dim, self.dim), dtype=complex)
        return np.einsum('j,jab->ab', coefficients, self.ham_ops)

    def anchor_weights(self, t):
        return self.anchors.weights(t)

    def hamiltonian(self, t=0.0):
        if self._static_h is not None:
            return self._static_h
        return self._combine(self.ham_coefficients @ self.anchor_weights(t))

    def effective_hamiltonian(self, t=0.0):
        return self.hamiltonian(t) - 0.5j * self.K

    def action(self, rho, t=0.0):
        rho = np.asarray(rho)
        if rho.shape[-2:] != (self.dim, self.dim):
            raise SpecError(f"State shape {rho.shape} does not match generator dimension {self.dim}")
        h_eff = self.effective_hamiltonian(t)
        out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
        for L, Ld in zip(self.jump_operators, self.jump_adjoints):
            out = out + L @ rho @ Ld
        return out

    def adjoint_action(self, lam, t=0.0):
        """Dual map with respect to Re tr(A^dagger B)"""
        h_eff = self.effective_hamiltonian(t)
        out = 1j * (h_eff.conj().T @ lam - lam @ h_eff)
        for L, Ld in zip(self.jump_operators, self.jump_adjoints):
            out = out + Ld @ lam @ L
        return out


def apply_generator(gen, rho, t=0.0):
    """d rho / dt for a single or batched state"""
    return gen.action(rho, t)

# === INTEGRATION ===

@dataclass
class StepSchedule:
    """Accepted step sequence of a trajectory, replayable without error control"""
    save_times: np.ndarray
    starts: np.ndarray
    sizes: np.ndarray


@dataclass
class Trajectory:
    states: np.ndarray
    save_times: np.ndarray
    schedule: StepSchedule
    save_state_index: np.ndarray
    step_states: list = field(default_factory=list)
    n_rejected: int = 0


def _error_norm(err, y_old, y_new, cfg):
    scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))

def _initial_step(gen, t0, y0, f0, cfg, span):
    """Explicit Runge-Kutta starting-step heuristic"""
    scale = cfg.atol + cfg.rtol * np.abs(y0)
    d0 = float(np.sqrt(np.mean(np.abs(y0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean(np.abs(f0 / scale) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = gen.action(y1, t0 + h0)
    d2 = float(np.sqrt(np.mean(np.abs((f1 - f0) / scale) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1, span)

def _stages(gen, t, y, h, k1=None):
    """Stages 1-6 of a Tsit5 step; returns (stage states, derivatives)"""
    Y = [y]
    K = [gen.action(y, t) if k1 is None else k1]
    for i in range(1, 6):
        yi = y.copy()
        for a, k in zip(TSIT5_A[i], K):
            yi = yi + (h * a) * k
        Y.append(yi)
        K.append(gen.action(yi, t + TSIT5_C[i] * h))
    return Y, K

def _advance(y, h, K):
    y_new = y.copy()
    for b, k in zip(TSIT5_B[:6], K):
        y_new = y_new + (h * b) * k
    return y_new

def _stop_times(save_times, gen):
    stops = set(float(t) for t in save_times if t > 0.0)
    if gen.time_dependent and len(save_times):
        t_end = float(save_times[-1])
        stops.update(float(t) for t in gen.stop_times if 0.0 < t < t_end)
    return np.array(sorted(stops))

def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        raise SolverError(f"Non-finite state at t = {t:.6g} µs (stiff or invalid parameters)")

def integrate(gen, rho0, save_times, config=None, record=False, schedule=None):
    """
    Integrate from t = 0 and save at the requested times.

    Args:
        gen: LindbladGenerator
        rho0: Initial state (d, d) or batch (B, d, d)
        save_times: Ascending times in µs, first >= 0
        config: SolverConfig
        record: Keep the state at every accepted step (for the adjoint pass)
        schedule: StepSchedule to replay instead of adaptive stepping

    Returns:
        Trajectory
    """
    cfg = config or SolverConfig()
    save_times = np.asarray(save_times, dtype=float)
    if save_times.ndim != 1 or (len(save_times) and save_times[0] < 0) or np.any(np.diff(save_times) <= 0):
        raise SpecError("save_times must be strictly ascending and non-negative")
    y = np.array(rho0, dtype=complex)
    if y.shape[-2:] != (gen.dim, gen.dim):
        raise SpecError(f"Initial state shape {y.shape} does not match generator dimension {gen.dim}")

    states = np.empty((len(save_times),) + y.shape, dtype=complex)
    save_state_index = np.zeros(len(save_times), dtype=int)
    step_states = [y] if record else []
    starts, sizes = [], []
    save_lookup = {float(t): i for i, t in enumerate(save_times)}

    t = 0.0
    n_states = 0
    for i, ts in enumerate(save_times):
        if ts == 0.0:
            states[i] = y
            save_state_index[i] = 0

    def _commit(t_new, y_new):
        nonlocal n_states
        n_states += 1
        if record:
            step_states.append(y_new)
        index = save_lookup.get(float(t_new))
        if index is not None:
            states[index] = y_new
            save_state_index[index] = n_states

    if schedule is not None:
        if not np.array_equal(schedule.save_times, save_times):
            raise SpecError("Replayed schedule was recorded for different save times")
        for t_start, h in zip(schedule.starts, schedule.sizes):
            _, K = _stages(gen, t_start, y, h)
            y = _advance(y, h, K)
            _check_finite(y, t_start + h)
            starts.append(t_start)
            sizes.append(h)
            t_new = _snap(t_start + h, save_lookup)
            _commit(t_new, y)
        trajectory = Trajectory(states, save_times, StepSchedule(save_times, np.array(starts), np.array(sizes)),
                                save_state_index, step_states)
        _check_physical(trajectory, cfg)
        return trajectory

    stops = _stop_times(save_times, gen)
    n_rejected = 0
    if len(stops):
        k1 = gen.action(y, t)
        h = cfg.initial_step or _initial_step(gen, t, y, k1, cfg, stops[-1])
        err_prev = 1.0
        stop_index = 0
        n_steps = 0
        while stop_index < len(stops):
            target = stops[stop_index]
            remaining = target - t
            clipped = h >= remaining * (1.0 - 1e-12)
            h_try = remaining if clipped else h

            Y, K = _stages(gen, t, y, h_try, k1)
            y_new = _advance(y, h_try, K)
            k7 = gen.action(y_new, t + h_try)
            err_vec = TSIT5_BTILDE[6] * k7
            for bt, k in zip(TSIT5_BTILDE[:6], K):
                err_vec = err_vec + bt * k
            err = _error_norm(h_try * err_vec, y, y_new, cfg)

            n_steps += 1
            if n_steps > cfg.max_steps:
                raise SolverError(f"Exceeded {cfg.max_steps} solver steps before t = {target:.6g} µs")
            if not np.isfinite(err):
                raise SolverError(f"Non-finite error estimate at t = {t:.6g} µs")

            if err <= 1.0:
                _check_finite(y_new, t + h_try)
                starts.append(t)
                sizes.append(h_try)
                t = target if clipped else t + h_try
                y = y_new
                k1 = k7
                _commit(t, y)
                if clipped:
                    stop_index += 1
                if err == 0.0:
                    factor = QMAX
                else:
                    factor = SAFETY * err ** (-BETA1) * err_prev ** BETA2
                    factor = min(QMAX, max(QMIN, factor))
                err_prev = max(err, 1e-4)
                h_next = h_try * factor
                h = max(h_next, h) if clipped else h_next
            else:
                n_rejected += 1
                h = h_try * max(QMIN, SAFETY * err ** (-0.2))
        logger.debug(f"Integrated to t = {t:.6g} µs: {len(sizes)} accepted, {n_rejected} rejected steps")

    trajectory = Trajectory(states, save_times, StepSchedule(save_times, np.array(starts), np.array(sizes)),
                            save_state_index, step_states, n_rejected)
    _check_physical(trajectory, cfg)
    return trajectory

def _snap(t, save_lookup):
    """Map a replayed step end onto the exact save time it was recorded at"""
    for ts in save_lookup:
        if abs(ts - t) <= 1e-12 * max(1.0, abs(ts)):
            return ts
    return t

def _check_physical(trajectory, cfg):
    if not cfg.check_physical or len(trajectory.states) == 0:
        return
    states = trajectory.states
    traces = np.trace(states, axis1=-2, axis2=-1).real
    worst = float(np.max(np.abs(traces - 1.0)))
    if worst > cfg.trace_tol:
        raise PhysicalityError(f"Trace deviates from 1 by {worst:.3e}")
    hermitian = 0.5 * (states + np.conj(np.swapaxes(states, -1, -2)))
    min_eig = float(np.min(np.linalg.eigvalsh(hermitian)))
    if min_eig < -cfg.positivity_tol:
        raise PhysicalityError(f"State lost positivity (min eigenvalue {min_eig:.3e})")

def evolve(gen, rho0, save_times, solver_config=None):
    """
    States at save_times; first axis indexes time.

    Args:
        gen: LindbladGenerator
        rho0: Valid density matrix, or a batch of them
        save_times: Ascending times in µs
        solver_config: SolverConfig

    Returns:
        np.ndarray: (n_times, d, d) or (n_times, B, d, d)
    """
    return integrate(gen, rho0, save_times, solver_config).states

def solution_error(states, reference, config=None):
    """
    Largest controller error norm between two arrays of saved states.

    Each saved state is scored like an accepted step: the RMS of the
    difference over atol + rtol * max(|a|, |b|) elementwise. Halving rtol and
    atol of a converged run moves every saved state by less than one unit
    of this norm under the coarser config.

    Args:
        states: Saved states, first axis indexes time
        reference: Array of the same shape
        config: SolverConfig providing rtol and atol

    Returns:
        float: Maximum over save times
    """
    cfg = config or SolverConfig()
    states = np.asarray(states)
    reference = np.asarray(reference)
    if states.shape != reference.shape:
        raise SpecError(f"State arrays differ in shape: {states.shape} vs {reference.shape}")
    return max((_error_norm(a - b, a, b, cfg) for a, b in zip(states, reference)), default=0.0)

# === ADJOINT ===

@dataclass
class AdjointResult:
    """Gradients of a real functional of the saved states"""
    initial: np.ndarray
    hamiltonian: np.ndarray
    dissipator: list


def backpropagate(gen, trajectory, save_grads):
    """
    Discrete adjoint of the recorded Tsit5 steps.

    Args:
        gen: Generator the trajectory was computed with
        trajectory: Trajectory recorded with record=True
        save_grads: dF/drho(t) per save time, shape of trajectory.states,
            in the convention dF = Re tr(g^dagger drho)

    Returns:
        AdjointResult: gradient with respect to the initial state(s), the
            Hamiltonian coefficients (term order, anchor-last when time-dependent)
            and each dissipator block's real parameters
    """
    if not trajectory.step_states:
        raise SolverError("Trajectory was not recorded; integrate with record=True")
    save_grads = np.asarray(save_grads, dtype=complex)
    starts, sizes = trajectory.schedule.starts, trajectory.schedule.sizes
    n_steps = len(sizes)

    pending = {}
    for i, state_index in enumerate(trajectory.save_state_index):
        pending.setdefault(int(state_index), []).append(i)

    dim = gen.dim
    lam = np.zeros_like(trajectory.step_states[0])
    n_terms = len(gen.ham_ops)
    if gen.time_dependent:
        c_accum = np.zeros((gen.anchors.count, dim, dim), dtype=complex)
    else:
        c_accum = np.zeros((dim, dim), dtype=complex)
    want_diss = bool(gen.blocks)
    w_accum = np.zeros((dim,) * 4, dtype=complex) if want_diss else None
    s_accum = np.zeros((dim, dim), dtype=complex) if want_diss else None

    for n in range(n_steps - 1, -1, -1):
        for i in pending.get(n + 1, []):
            lam = lam + save_grads[i]
        t, h = starts[n], sizes[n]
        Y, _ = _stages(gen, t, trajectory.step_states[n], h)
        g_Y = [None] * 6
        for i in range(5, -1, -1):
            g_k = (h * TSIT5_B[i]) * lam
            for j in range(i + 1, 6):
                g_k = g_k + (h * TSIT5_A[j][i]) * g_Y[j]
            t_i = t + TSIT5_C[i] * h
            g_Y[i] = gen.adjoint_action(g_k, t_i)

            gd = np.conj(np.swapaxes(g_k, -1, -2))
            y_i = Y[i]
            if n_terms:
                c_stage = 1j * (gd @ y_i - y_i @ gd)
                if c_stage.ndim == 3:
                    c_stage = c_stage.sum(axis=0)
                if gen.time_dependent:
                    c_accum += np.einsum('a,ij->aij', gen.anchor_weights(t_i), c_stage)
                else:
                    c_accum += c_stage
            if want_diss:
                gd_b = gd if gd.ndim == 3 else gd[None]
                y_b = y_i if y_i.ndim == 3 else y_i[None]
                w_accum += np.einsum('bij,bkl->jkli', gd_b, y_b)
                s_accum += (y_b @ gd_b + gd_b @ y_b).sum(axis=0)
        lam = lam + sum(g_Y)
    for i in pending.get(0, []):
        lam = lam + save_grads[i]

    if n_terms == 0:
        grad_h = np.zeros(gen.ham_coefficients.shape)
    elif gen.time_dependent:
        grad_h = np.real(np.einsum('aij,nji->na', c_accum, gen.ham_ops))
    else:
        grad_h = np.real(np.einsum('ij,nji->n', c_accum, gen.ham_ops))

    grad_blocks = []
    for block in gen.blocks:
        P = block.basis
        k1 = np.einsum('mjk,nli,jkli->mn', P, P, w_accum)
        k2 = np.einsum('mij,nji->mn', P @ s_accum, P)
        T = k1 - 0.5 * k2
        grad_blocks.append(split_lower_factor(block.M @ (T + T.conj().T)))

    return AdjointResult(initial=lam, hamiltonian=grad_h, dissipator=grad_blocks)

# === SUPEROPERATOR ORACLE ===

def superoperator_oracle(gen):
    """
    Column-stacked superoperator of a time-independent generator.

    vec(A rho B) = (B^T kron A) vec(rho), vec stacking columns.
    """
    if gen.time_dependent:
        raise SpecError("The superoperator oracle needs a time-independent generator")
    d = gen.dim
    eye = np.eye(d, dtype=complex)
    H = gen.hamiltonian()
    sup = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for L in gen.jump_operators:
        LdL = L.conj().T @ L
        sup += np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye)
    return sup

def oracle_evolve(gen, rho0, times):
    """Reference states expm(L t) vec(rho0) for each time"""
    sup = superoperator_oracle(gen)
    d = gen.dim
    vec0 = np.asarray(rho0, dtype=complex).reshape(-1, order='F')
    return np.array([(expm(sup * t) @ vec0).reshape(d, d, order='F') for t in times])
