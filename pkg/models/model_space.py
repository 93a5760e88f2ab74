"""
Model space for Lindblad learning.

Maps the structured real parameters {theta_rho, theta_H, theta_L} to initial
states, (time-dependent) Hamiltonians and dissipator blocks, counts degrees of
freedom and embeds smaller models into larger nested ones.
"""
import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

from config.settings import LEVELS, MAX_BLOCK_LOCALITY
from core.errors import DegenerateParameterError, NotNestedError, SpecError
from models.pauli import (
    ConnectionGraph, PauliString, build_connections, embed_letters,
    embed_string, embedded_block_basis, enumerate_block_basis
)

logger = logging.getLogger('model_space')

ZERO_STATE = np.array([[1, 0], [0, 0]], dtype=complex)
ZERO_STATE_THETA = np.array([[1.0, 0.0], [0.0, 0.0]])
HAMILTONIAN_LETTERS = "XYZ"

# === MODEL SPECIFICATION ===

@dataclass(frozen=True)
class Anchors:
    """Equally spaced anchor times for piecewise-linear Hamiltonian coefficients"""
    count: int
    t_start: float
    t_end: float

    def __post_init__(self):
        if int(self.count) < 2:
            raise SpecError(f"Anchor count must be >= 2, got {self.count}")
        if not self.t_end > self.t_start:
            raise SpecError(f"Anchor range [{self.t_start}, {self.t_end}] is empty")

    @property
    def times(self):
        return np.linspace(self.t_start, self.t_end, self.count)

    def weights(self, t):
        """Hat-function weights at time t; constant extrapolation outside the range"""
        return np.array([np.interp(t, self.times, row) for row in np.eye(self.count)])

    def to_dict(self):
        return {"kind": "anchors", "count": int(self.count),
                "t_start": float(self.t_start), "t_end": float(self.t_end)}


@dataclass(frozen=True)
class DissipatorStructure:
    """Dissipator blocks live on the connections of a single locality k (0 = none)"""
    k: int = 0
    connections: tuple = ()

    @property
    def block_size(self):
        return 4 ** self.k - 1 if self.k > 0 else 0

    def to_dict(self):
        return {"k_max": self.k, "connections": [list(c) for c in self.connections]}


@dataclass(frozen=True)
class ModelSpec:
    """Structural choice of a Lindblad model (all qubit indices 0-based)"""
    n_total: int
    observed: tuple
    ham: ConnectionGraph
    diss: DissipatorStructure
    time_dependence: Anchors = None
    state_param: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'observed', tuple(int(q) for q in self.observed))
        if self.state_param is None:
            object.__setattr__(self, 'state_param', (True,) * self.n_total)
        else:
            object.__setattr__(self, 'state_param', tuple(bool(f) for f in self.state_param))
        self.validate()

    def validate(self):
        if self.n_total < 1:
            raise SpecError("A model needs at least one qubit")
        if not self.observed:
            raise SpecError("At least one qubit must be observed")
        if len(set(self.observed)) != len(self.observed):
            raise SpecError(f"Duplicate observed qubits {self.observed}")
        if any(q < 0 or q >= self.n_total for q in self.observed):
            raise SpecError(f"Observed qubits {self.observed} out of range for {self.n_total} qubits")
        if self.ham.n_qubits != self.n_total:
            raise SpecError("Hamiltonian graph size does not match n_total")
        if self.ham.k_max > MAX_BLOCK_LOCALITY:
            raise SpecError(f"Hamiltonian locality {self.ham.k_max} exceeds cap {MAX_BLOCK_LOCALITY}")
        if self.diss.k < 0 or self.diss.k > min(MAX_BLOCK_LOCALITY, self.n_total):
            raise SpecError(f"Invalid dissipator locality {self.diss.k}")
        if self.diss.k == 0 and self.diss.connections:
            raise SpecError("Dissipator connections given without a locality")
        seen = set()
        for c in self.diss.connections:
            if len(c) != self.diss.k or any(i < 0 or i >= self.n_total for i in c) \
                    or any(a >= b for a, b in zip(c, c[1:])) or c in seen:
                raise SpecError(f"Invalid dissipator connection {c}")
            seen.add(c)
        if len(self.state_param) != self.n_total:
            raise SpecError("state_param needs one flag per qubit")

    @property
    def hidden(self):
        return tuple(q for q in range(self.n_total) if q not in self.observed)

    @property
    def n_observed(self):
        return len(self.observed)

    @property
    def dim(self):
        return 2 ** self.n_total

    @property
    def is_time_dependent(self):
        return self.time_dependence is not None

    @property
    def n_anchors(self):
        return self.time_dependence.count if self.is_time_dependent else 1

    @property
    def parameterized_qubits(self):
        return tuple(q for q in range(self.n_total) if self.state_param[q])

    def to_dict(self):
        return {
            "n_total": self.n_total,
            "observed": list(self.observed),
            "ham": {"k_max": self.ham.k_max, "connections": self.ham.to_dict()},
            "diss": self.diss.to_dict(),
            "time_dependence": self.time_dependence.to_dict() if self.is_time_dependent else {"kind": "none"},
            "state_param": list(self.state_param),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            n_total = int(data["n_total"])
            ham = ConnectionGraph.from_dict(n_total, data["ham"].get("connections", {}))
            if ham.k_max != int(data["ham"].get("k_max", ham.k_max)):
                ham = ConnectionGraph(n_total, ham.components + ((),) * (int(data["ham"]["k_max"]) - ham.k_max))
            diss = DissipatorStructure(
                k=int(data["diss"].get("k_max", 0)),
                connections=tuple(tuple(int(i) for i in c) for c in data["diss"].get("connections", []))
            )
            td = data.get("time_dependence") or {"kind": "none"}
            anchors = None
            if td.get("kind", "none") == "anchors":
                anchors = Anchors(int(td["count"]), float(td["t_start"]), float(td["t_end"]))
            return cls(n_total=n_total, observed=tuple(data["observed"]), ham=ham, diss=diss,
                       time_dependence=anchors, state_param=data.get("state_param"))
        except (KeyError, TypeError, ValueError) as e:
            raise SpecError(f"Malformed model spec: {e}") from e

# === LATTICE LEVELS ===

def _ham_components(level, n_total):
    if level == "none":
        return ()
    singles = build_connections("local", n_total)
    if level == "local":
        return (singles,)
    if level == "nn":
        return (singles, build_connections("nearest_chain", n_total))
    if level == "a2a":
        return (singles, build_connections("all_pairs", n_total))
    if level == "3local":
        return (singles, build_connections("all_pairs", n_total),
                build_connections("k_local_complete", n_total, 3))
    raise SpecError(f"Unknown level '{level}' (expected one of {LEVELS})")

def _diss_structure(level, n_total):
    if level == "none":
        return DissipatorStructure()
    if level == "local":
        return DissipatorStructure(1, build_connections("local", n_total))
    if level == "nn":
        return DissipatorStructure(2, build_connections("nearest_chain", n_total))
    if level == "a2a":
        return DissipatorStructure(2, build_connections("all_pairs", n_total))
    if level == "3local":
        return DissipatorStructure(3, build_connections("k_local_complete", n_total, 3))
    raise SpecError(f"Unknown level '{level}' (expected one of {LEVELS})")

def level_spec(n_total, ham_level, diss_level, observed=None, anchors=None, state_param=None):
    """
    Build the lattice node spec for a (Hamiltonian, dissipator) level pair.

    Args:
        n_total: Register size including hidden qubits
        ham_level: One of none, local, nn, a2a, 3local
        diss_level: One of none, local, nn, a2a, 3local
        observed: Observed qubits (default: all)
        anchors: Optional Anchors for time-dependent Hamiltonian coefficients
        state_param: Per-qubit flags for parameterized initial states

    Returns:
        ModelSpec
    """
    observed = tuple(range(n_total)) if observed is None else tuple(observed)
    return ModelSpec(
        n_total=n_total,
        observed=observed,
        ham=ConnectionGraph(n_total, _ham_components(ham_level, n_total)),
        diss=_diss_structure(diss_level, n_total),
        time_dependence=anchors,
        state_param=state_param,
    )

def infer_levels(spec):
    """Map a spec back to its (ham_level, diss_level) lattice node"""
    ham_level = diss_level = None
    for level in LEVELS:
        try:
            if ham_level is None and _ham_components(level, spec.n_total) == spec.ham.components:
                ham_level = level
            if diss_level is None and _diss_structure(level, spec.n_total) == spec.diss:
                diss_level = level
        except SpecError:
            continue
    if ham_level is None or diss_level is None:
        raise SpecError("Spec does not correspond to a lattice node")
    return ham_level, diss_level

# === PARAMETERS ===

@dataclass(frozen=True)
class ParameterLayout:
    """Shapes and flat offsets of the three parameter groups"""
    n_state_qubits: int
    ham_shapes: tuple
    diss_shape: tuple

    @property
    def n_state(self):
        return 4 * self.n_state_qubits

    @property
    def n_ham(self):
        return int(sum(np.prod(s) for s in self.ham_shapes))

    @property
    def n_diss(self):
        return int(np.prod(self.diss_shape))

    @property
    def size(self):
        return self.n_state + self.n_ham + self.n_diss

    @property
    def state_slice(self):
        return slice(0, self.n_state)

    @property
    def ham_slice(self):
        return slice(self.n_state, self.n_state + self.n_ham)

    @property
    def diss_slice(self):
        return slice(self.n_state + self.n_ham, self.size)

    def descriptor(self):
        return {
            "order": ["theta_rho", "theta_H", "theta_L"],
            "theta_rho": [self.n_state_qubits, 2, 2],
            "theta_H": [list(s) for s in self.ham_shapes],
            "theta_L": list(self.diss_shape),
            "size": self.size,
        }

def parameter_layout(spec):
    ham_shapes = []
    for k in range(1, spec.ham.k_max + 1):
        shape = (len(spec.ham.connections(k)),) + (3,) * k
        if spec.is_time_dependent:
            shape = shape + (spec.n_anchors,)
        ham_shapes.append(shape)
    m = spec.diss.block_size
    return ParameterLayout(
        n_state_qubits=len(spec.parameterized_qubits),
        ham_shapes=tuple(ham_shapes),
        diss_shape=(len(spec.diss.connections), m, m),
    )

def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ParameterSet:
    """
    Real parameters {theta_rho, theta_H, theta_L}.

    Flat packing: theta_rho qubit-major row-major, then theta_H by ascending k,
    lexicographic connection, odometer Pauli index (x<y<z) and anchor index,
    then theta_L block by block row-major.
    """
    theta_rho: np.ndarray
    theta_H: tuple
    theta_L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'theta_rho', _frozen(self.theta_rho))
        object.__setattr__(self, 'theta_H', tuple(_frozen(a) for a in self.theta_H))
        object.__setattr__(self, 'theta_L', _frozen(self.theta_L))

    def flatten(self):
        parts = [self.theta_rho.ravel()] + [a.ravel() for a in self.theta_H] + [self.theta_L.ravel()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def check(self, spec):
        """Raise SpecError unless the shapes match the spec"""
        layout = parameter_layout(spec)
        if self.theta_rho.shape != (layout.n_state_qubits, 2, 2):
            raise SpecError(f"theta_rho shape {self.theta_rho.shape} does not match spec")
        if tuple(a.shape for a in self.theta_H) != layout.ham_shapes:
            raise SpecError(f"theta_H shapes {[a.shape for a in self.theta_H]} do not match spec")
        if self.theta_L.shape != layout.diss_shape:
            raise SpecError(f"theta_L shape {self.theta_L.shape} does not match spec")
        if not np.all(np.isfinite(self.flatten())):
            raise SpecError("Parameters contain non-finite entries")
        return self

    @classmethod
    def unflatten(cls, vector, spec):
        layout = parameter_layout(spec)
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (layout.size,):
            raise SpecError(f"Expected {layout.size} parameters, got {vector.shape}")
        theta_rho = vector[layout.state_slice].reshape(layout.n_state_qubits, 2, 2)
        theta_H = []
        offset = layout.n_state
        for shape in layout.ham_shapes:
            size = int(np.prod(shape))
            theta_H.append(vector[offset:offset + size].reshape(shape))
            offset += size
        theta_L = vector[layout.diss_slice].reshape(layout.diss_shape)
        return cls(theta_rho, tuple(theta_H), theta_L)

    @classmethod
    def zeros(cls, spec):
        """All generator parameters zero, parameterized qubits in |0><0|"""
        layout = parameter_layout(spec)
        theta_rho = np.tile(ZERO_STATE_THETA, (layout.n_state_qubits, 1, 1))
        return cls(theta_rho, tuple(np.zeros(s) for s in layout.ham_shapes), np.zeros(layout.diss_shape))

    def to_dict(self, spec):
        return {"packing": parameter_layout(spec).descriptor(), "values": self.flatten().tolist()}

    @classmethod
    def from_dict(cls, data, spec):
        expected = parameter_layout(spec).descriptor()
        if data.get("packing") != expected:
            raise SpecError("Parameter packing descriptor does not match the model spec")
        return cls.unflatten(np.asarray(data["values"], dtype=float), spec)

# === FACTORS ===

def lower_factor(theta):
    """tril(theta) + i * strict-upper(theta)^T: lower triangular, real diagonal"""
    theta = np.asarray(theta, dtype=float)
    return np.tril(theta) + 1j * np.triu(theta, 1).T

def split_lower_factor(matrix):
    """
    Inverse layout of lower_factor.

    Also maps a gradient with respect to a lower factor onto its real parameters.
    """
    matrix = np.asarray(matrix, dtype=complex)
    return np.tril(matrix.real) + np.triu(matrix.imag.T, 1)

def psd_cholesky(matrix, rel_tol=1e-12):
    """
    Lower Cholesky factor of a Hermitian PSD matrix, tolerating zero pivots.

    Returns:
        np.ndarray: L with L @ L^dagger == matrix and a real non-negative diagonal
    """
    matrix = np.asarray(matrix, dtype=complex)
    n = matrix.shape[0]
    L = np.zeros((n, n), dtype=complex)
    scale = float(np.max(np.abs(np.diag(matrix)))) if n else 0.0
    tol = rel_tol * scale
    if scale == 0.0:
        return L
    for j in range(n):
        pivot = matrix[j, j].real - float(np.sum(np.abs(L[j, :j]) ** 2))
        if pivot <= tol:
            continue
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = (matrix[j + 1:, j] - L[j + 1:, :j] @ L[j, :j].conj()) / L[j, j]
    return L

def _check_psd(matrix, name):
    matrix = np.asarray(matrix, dtype=complex)
    if not np.allclose(matrix, matrix.conj().T, atol=1e-12):
        raise SpecError(f"{name} is not Hermitian")
    evals = np.linalg.eigvalsh(matrix)
    if evals.size and evals.min() < -1e-10 * max(1.0, evals.max()):
        raise SpecError(f"{name} is not positive semidefinite (min eigenvalue {evals.min():.3e})")

def dissipation_to_theta(D):
    """
    Real block parameters whose lower factor M realizes D = M^T conj(M).

    Reverses index order, takes a semidefinite Cholesky factor and reverses back.
    """
    _check_psd(D, "Dissipation matrix")
    D = np.asarray(D, dtype=complex)
    reversed_conj = D[::-1, ::-1].conj()
    upper = psd_cholesky(reversed_conj).conj().T
    return split_lower_factor(upper[::-1, ::-1])

def state_to_theta(rho):
    """Real 2x2 state parameters reproducing a single-qubit density matrix"""
    _check_psd(rho, "Density matrix")
    rho = np.asarray(rho, dtype=complex)
    return split_lower_factor(psd_cholesky(rho / np.trace(rho).real))

# === INITIAL STATE ===

def single_qubit_states(theta_rho, spec):
    """Per-qubit density matrices in qubit order (fixed qubits are |0><0|)"""
    theta_rho = np.asarray(theta_rho, dtype=float)
    if theta_rho.shape != (len(spec.parameterized_qubits), 2, 2):
        raise SpecError(f"theta_rho shape {theta_rho.shape} does not match spec")
    states = []
    slot = 0
    for q in range(spec.n_total):
        if not spec.state_param[q]:
            states.append(ZERO_STATE)
            continue
        B = lower_factor(theta_rho[slot])
        A = B @ B.conj().T
        tau = float(np.trace(A).real)
        if not tau > 0.0:
            raise DegenerateParameterError(f"State parameters of qubit {q} are all zero")
        states.append(A / tau)
        slot += 1
    return states

def build_initial_state(theta_rho, spec):
    """
    Tensor-product initial state.

    Args:
        theta_rho: Array (n_parameterized, 2, 2)
        spec: ModelSpec

    Returns:
        np.ndarray: 2^n x 2^n density matrix
    """
    return reduce(np.kron, single_qubit_states(theta_rho, spec))

def initial_state_gradient(theta_rho, spec, grad_rho):
    """
    Chain rule from dF/drho0 (df = Re tr(g^dagger drho)) to theta_rho.

    Args:
        theta_rho: State parameters
        spec: ModelSpec
        grad_rho: Gradient matrix g with respect to the full initial state

    Returns:
        np.ndarray: Gradient with the shape of theta_rho
    """
    theta_rho = np.asarray(theta_rho, dtype=float)
    factors = single_qubit_states(theta_rho, spec)
    n = spec.n_total
    linear = np.asarray(grad_rho).conj().reshape((2,) * (2 * n))
    out = np.zeros_like(theta_rho)
    for slot, q in enumerate(spec.parameterized_qubits):
        operands = [linear, list(range(2 * n))]
        for r in range(n):
            if r != q:
                operands += [factors[r], [r, n + r]]
        g = np.einsum(*operands, [q, n + q]).conj()
        B = lower_factor(theta_rho[slot])
        tau = float(np.trace(B @ B.conj().T).real)
        c = float(np.real(np.trace(g.conj().T @ factors[q])))
        gB = ((g + g.conj().T) @ B - 2.0 * c * B) / tau
        out[slot] = split_lower_factor(gB)
    return out

# === HAMILTONIAN ===

@lru_cache(maxsize=64)
def hamiltonian_terms(spec):
    """
    Embedded Pauli operators of every Hamiltonian term in packing order.

    Returns:
        tuple: (labels, ops) with labels [(k, connection, letters)] and ops (n_terms, d, d)
    """
    labels = []
    ops = []
    for k in range(1, spec.ham.k_max + 1):
        for connection in spec.ham.connections(k):
            for index in itertools.product(range(3), repeat=k):
                letters = "".join(HAMILTONIAN_LETTERS[i] for i in index)
                labels.append((k, connection, letters))
                ops.append(embed_string(PauliString(letters), connection, spec.n_total))
    stack = np.stack(ops) if ops else np.zeros((0, spec.dim, spec.dim), dtype=complex)
    stack.setflags(write=False)
    return tuple(labels), stack

def hamiltonian_coefficients(theta_H, spec):
    """Coefficients in term order: (n_terms,) or (n_terms, n_anchors) when time-dependent"""
    layout = parameter_layout(spec)
    if tuple(np.shape(a) for a in theta_H) != layout.ham_shapes:
        raise SpecError(f"theta_H shapes {[np.shape(a) for a in theta_H]} do not match spec")
    if spec.is_time_dependent:
        parts = [np.asarray(a, dtype=float).reshape(-1, spec.n_anchors) for a in theta_H]
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, spec.n_anchors))
    parts = [np.asarray(a, dtype=float).ravel() for a in theta_H]
    return np.concatenate(parts) if parts else np.zeros(0)

def build_hamiltonian(theta_H, spec, t=None):
    """
    Hamiltonian at time t in rad/µs.

    Args:
        theta_H: Coefficient arrays per locality
        spec: ModelSpec
        t: Time in µs (required when the spec is time-dependent)

    Returns:
        np.ndarray: Hermitian d x d matrix
    """
    coefficients = hamiltonian_coefficients(theta_H, spec)
    _, ops = hamiltonian_terms(spec)
    if spec.is_time_dependent:
        if t is None:
            raise SpecError("A time is required for a time-dependent Hamiltonian")
        coefficients = coefficients @ spec.time_dependence.weights(t)
    if ops.shape[0] == 0:
        return np.zeros((spec.dim, spec.dim), dtype=complex)
    return np.einsum('j,jab->ab', coefficients, ops)

# === DISSIPATOR ===

@dataclass(frozen=True)
class DiagonalJumpForm:
    """Rates (1/µs) and jump operators diagonalizing a dissipation matrix"""
    rates: np.ndarray
    operators: np.ndarray


@dataclass(frozen=True, eq=False)
class DissipatorBlock:
    connection: tuple
    M: np.ndarray
    D: np.ndarray
    n_total: int

    @property
    def basis(self):
        return embedded_block_basis(self.connection, self.n_total)

    def jump_operators(self):
        """L_a = sum_b M_ab P_b for every row a of M"""
        return np.einsum('ab,bij->aij', self.M, self.basis)

    def jump_form(self):
        return jump_form(self)

def dissipation_matrix(M):
    """D_mn = sum_a M_am conj(M_an): coefficient of P_m rho P_n"""
    return np.einsum('am,an->mn', M, M.conj())

def build_dissipator(theta_L, spec):
    """
    Dissipator blocks on the connections of the top dissipator locality.

    Args:
        theta_L: Array (n_blocks, m, m) with m = 4^k - 1
        spec: ModelSpec

    Returns:
        list: DissipatorBlock per connection
    """
    theta_L = np.asarray(theta_L, dtype=float)
    expected = parameter_layout(spec).diss_shape
    if theta_L.shape != expected:
        raise SpecError(f"theta_L shape {theta_L.shape} does not match spec {expected}")
    blocks = []
    for connection, theta in zip(spec.diss.connections, theta_L):
        M = lower_factor(theta)
        blocks.append(DissipatorBlock(connection=connection, M=M, D=dissipation_matrix(M), n_total=spec.n_total))
    return blocks

def jump_form(block):
    """Diagonal jump-operator form of a block: D = sum_i rate_i v_i v_i^dagger"""
    rates, vectors = np.linalg.eigh(block.D)
    order = np.argsort(rates)[::-1]
    rates, vectors = rates[order], vectors[:, order]
    operators = np.einsum('mi,mab->iab', vectors, block.basis)
    return DiagonalJumpForm(rates=rates, operators=operators)

def apply_pauli_form(D, basis, rho):
    """sum_mn D_mn (P_m rho P_n - 1/2 {P_n P_m, rho})"""
    out = np.zeros_like(rho, dtype=complex)
    for m in range(D.shape[0]):
        for n in range(D.shape[1]):
            if D[m, n] == 0:
                continue
            product = basis[n] @ basis[m]
            out += D[m, n] * (basis[m] @ rho @ basis[n] - 0.5 * (product @ rho + rho @ product))
    return out

def apply_jump_form(operators, rho, rates=None):
    """sum_i rate_i (L_i rho L_i^dagger - 1/2 {L_i^dagger L_i, rho})"""
    rates = np.ones(len(operators)) if rates is None else rates
    out = np.zeros_like(rho, dtype=complex)
    for rate, L in zip(rates, operators):
        LdL = L.conj().T @ L
        out += rate * (L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL))
    return out

# === DEGREES OF FREEDOM ===

@dataclass(frozen=True)
class DofCount:
    h_dof: int
    d_dof: int
    state_dof: int
    gauge_adjustment: int

    @property
    def generator_dof(self):
        return self.h_dof + self.d_dof + self.gauge_adjustment

    def to_dict(self):
        return {"h_dof": self.h_dof, "d_dof": self.d_dof, "state_dof": self.state_dof,
                "gauge_adjustment": self.gauge_adjustment, "generator_dof": self.generator_dof}

def dof_count(spec):
    """
    Independent real degrees of freedom of a spec.

    Dissipator parameters are counted once per unique embedded Pauli string
    (diagonal) and twice per unique co-occurring pair (complex off-diagonal).
    """
    h_dof = sum(len(spec.ham.connections(k)) * 3 ** k for k in range(1, spec.ham.k_max + 1))
    h_dof *= spec.n_anchors

    strings = set()
    pairs = set()
    if spec.diss.k > 0:
        basis = enumerate_block_basis(spec.diss.k)
        for connection in spec.diss.connections:
            embedded = sorted(embed_letters(s, connection, spec.n_total) for s in basis.strings)
            strings.update(embedded)
            pairs.update(itertools.combinations(embedded, 2))
    d_dof = len(strings) + 2 * len(pairs)

    return DofCount(
        h_dof=h_dof,
        d_dof=d_dof,
        state_dof=3 * len(spec.parameterized_qubits),
        gauge_adjustment=-3 * len(spec.hidden),
    )

# === WARM STARTS ===

def check_nested(spec_small, spec_large):
    """Raise NotNestedError unless spec_small is structurally contained in spec_large"""
    if spec_small.n_total > spec_large.n_total:
        raise NotNestedError("The larger model has fewer qubits")
    if spec_small.observed != spec_large.observed:
        raise NotNestedError(f"Observed registers differ: {spec_small.observed} vs {spec_large.observed}")
    for q in range(spec_small.n_total):
        if spec_small.state_param[q] and not spec_large.state_param[q]:
            raise NotNestedError(f"Qubit {q} has a parameterized state only in the smaller model")
    if spec_small.is_time_dependent and spec_small.time_dependence != spec_large.time_dependence:
        raise NotNestedError("Anchor schedules differ")
    if spec_small.ham.k_max > spec_large.ham.k_max:
        raise NotNestedError("Hamiltonian locality decreases")
    for k in range(1, spec_small.ham.k_max + 1):
        missing = set(spec_small.ham.connections(k)) - set(spec_large.ham.connections(k))
        if missing:
            raise NotNestedError(f"Hamiltonian connections {sorted(missing)} missing from the larger model")
    if spec_small.diss.k > 0:
        if spec_large.diss.k < spec_small.diss.k:
            raise NotNestedError("Dissipator locality decreases")
        for c in spec_small.diss.connections:
            if not any(set(c) <= set(cl) for cl in spec_large.diss.connections):
                raise NotNestedError(f"Dissipator block {c} is not contained in any larger block")

def _block_index_map(small_connection, large_connection):
    """Positions of the small block's basis strings inside the large block's basis"""
    basis_small = enumerate_block_basis(len(small_connection))
    basis_large = enumerate_block_basis(len(large_connection))
    positions = [large_connection.index(q) for q in small_connection]
    index = []
    for s in basis_small.strings:
        letters = ["I"] * len(large_connection)
        for letter, pos in zip(s.letters, positions):
            letters[pos] = letter
        index.append(basis_large.index(PauliString("".join(letters))))
    return np.array(index)

def embed_warm_start(params_small, spec_small, spec_large, jitter=0.0, seed=None):
    """
    Embed fitted parameters of a nested smaller model into a larger one.

    Args:
        params_small: ParameterSet of spec_small
        spec_small: Smaller spec (may have fewer, trailing hidden qubits)
        spec_large: Larger spec
        jitter: Std-dev of Gaussian noise added to newly introduced generator parameters
        seed: Seed for the jitter stream

    Returns:
        ParameterSet: Same generator action as the small model when jitter == 0
    """
    check_nested(spec_small, spec_large)
    params_small.check(spec_small)
    layout = parameter_layout(spec_large)

    # state
    theta_rho = np.tile(ZERO_STATE_THETA, (layout.n_state_qubits, 1, 1))
    small_slots = {q: i for i, q in enumerate(spec_small.parameterized_qubits)}
    for slot, q in enumerate(spec_large.parameterized_qubits):
        if q in small_slots:
            theta_rho[slot] = params_small.theta_rho[small_slots[q]]

    # hamiltonian
    theta_H, fresh_H = [], []
    for k, shape in enumerate(layout.ham_shapes, start=1):
        values = np.zeros(shape)
        fresh = np.ones(shape, dtype=bool)
        small_index = {c: i for i, c in enumerate(spec_small.ham.connections(k))}
        for i, c in enumerate(spec_large.ham.connections(k)):
            if c not in small_index:
                continue
            source = params_small.theta_H[k - 1][small_index[c]]
            if spec_large.is_time_dependent and not spec_small.is_time_dependent:
                source = np.repeat(source[..., None], spec_large.n_anchors, axis=-1)
            values[i] = source
            fresh[i] = False
        theta_H.append(values)
        fresh_H.append(fresh)

    # dissipator
    m = spec_large.diss.block_size
    n_blocks = len(spec_large.diss.connections)
    theta_L = np.zeros((n_blocks, m, m))
    fresh_L = np.ones((n_blocks, m, m), dtype=bool)
    contributions = {j: [] for j in range(n_blocks)}
    for s, cs in enumerate(spec_small.diss.connections):
        containing = [j for j, cl in enumerate(spec_large.diss.connections) if set(cs) <= set(cl)]
        Ms = lower_factor(params_small.theta_L[s])
        scale = 1.0 / np.sqrt(len(containing))
        for j in containing:
            index = _block_index_map(cs, spec_large.diss.connections[j])
            contributions[j].append((index, scale * Ms))

    for j, items in contributions.items():
        if not items:
            continue
        used = np.concatenate([index for index, _ in items])
        if len(np.unique(used)) == len(used):
            M = np.zeros((m, m), dtype=complex)
            for index, Ms in items:
                M[np.ix_(index, index)] = Ms
            theta_L[j] = split_lower_factor(M)
        else:
            # overlapping sub-blocks share strings; combine at the D level and refactor
            D = np.zeros((m, m), dtype=complex)
            for index, Ms in items:
                D[np.ix_(index, index)] += dissipation_matrix(Ms)
            theta_L[j] = dissipation_to_theta(D)
            logger.debug(f"Refactored overlapping warm-start block {spec_large.diss.connections[j]}")
        for index, _ in items:
            fresh_L[j][np.ix_(index, index)] = False

    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        for values, fresh in zip(theta_H, fresh_H):
            values[fresh] += rng.normal(0.0, jitter, size=int(fresh.sum()))
        theta_L[fresh_L] += rng.normal(0.0, jitter, size=int(fresh_L.sum()))

    logger.info(f"Warm start: {parameter_layout(spec_small).size} -> {layout.size} parameters")
    return ParameterSet(theta_rho, tuple(theta_H), theta_L)
