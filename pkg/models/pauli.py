"""
Pauli-string algebra for locality-structured Lindblad models.

Qubit 0 is the leftmost tensor factor (most significant bit) everywhere.
"""
import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache, reduce

import numpy as np

from config.settings import MAX_BLOCK_LOCALITY
from core.errors import SpecError

LETTERS = "IXYZ"
LETTER_RANK = {letter: rank for rank, letter in enumerate(LETTERS)}

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

CONNECTION_KINDS = ("local", "nearest_chain", "all_pairs", "k_local_complete")

# === DOMAIN TYPES ===

@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-qubit Paulis, one letter per qubit"""
    letters: str

    def __post_init__(self):
        if not self.letters:
            raise SpecError("PauliString needs at least one letter")
        bad = set(self.letters) - set(LETTERS)
        if bad:
            raise SpecError(f"Invalid Pauli letters {sorted(bad)} in '{self.letters}'")

    @property
    def n_qubits(self):
        return len(self.letters)

    @cached_property
    def weight(self):
        return sum(1 for letter in self.letters if letter != "I")

    @property
    def support(self):
        """Positions carrying a non-identity letter"""
        return tuple(i for i, letter in enumerate(self.letters) if letter != "I")

    def sort_key(self):
        """Weight first, then (position, letter) pairs with X < Y < Z"""
        return (self.weight, tuple((i, LETTER_RANK[self.letters[i]]) for i in self.support))

    def matrix(self):
        return pauli_matrix(self.letters)

    def __str__(self):
        return self.letters


@dataclass(frozen=True)
class BlockBasis:
    """Canonically ordered non-identity Pauli strings on k qubits"""
    k: int
    strings: tuple

    def __len__(self):
        return len(self.strings)

    def index(self, string):
        return self.strings.index(string)


@dataclass(frozen=True)
class ConnectionGraph:
    """
    Allowed k-qubit connections C_1..C_kmax.

    components[k - 1] holds C_k as a tuple of strictly increasing index tuples.
    """
    n_qubits: int
    components: tuple = ()

    def __post_init__(self):
        if self.n_qubits < 1:
            raise SpecError("ConnectionGraph needs at least one qubit")
        if len(self.components) > self.n_qubits:
            raise SpecError(f"k_max {len(self.components)} exceeds {self.n_qubits} qubits")
        for k, component in enumerate(self.components, start=1):
            seen = set()
            for connection in component:
                _validate_connection(connection, k, self.n_qubits)
                if connection in seen:
                    raise SpecError(f"Duplicate connection {connection}")
                seen.add(connection)

    @property
    def k_max(self):
        return len(self.components)

    def connections(self, k):
        """C_k (empty beyond k_max)"""
        if 1 <= k <= self.k_max:
            return self.components[k - 1]
        return ()

    def to_dict(self):
        return {str(k): [list(c) for c in comp] for k, comp in enumerate(self.components, start=1)}

    @classmethod
    def from_dict(cls, n_qubits, data):
        if not data:
            return cls(n_qubits, ())
        k_max = max(int(k) for k in data)
        components = tuple(
            tuple(tuple(int(i) for i in c) for c in data.get(str(k), []))
            for k in range(1, k_max + 1)
        )
        return cls(n_qubits, components)


def _validate_connection(connection, k, n_total):
    if len(connection) != k:
        raise SpecError(f"Connection {connection} should have length {k}")
    if any(i < 0 or i >= n_total for i in connection):
        raise SpecError(f"Connection {connection} out of range for {n_total} qubits")
    if any(a >= b for a, b in zip(connection, connection[1:])):
        raise SpecError(f"Connection {connection} must be strictly increasing")

# === OPERATIONS ===

@lru_cache(maxsize=4096)
def _pauli_matrix_cached(letters):
    matrix = reduce(np.kron, (PAULI_MATRICES[letter] for letter in letters))
    matrix.setflags(write=False)
    return matrix

def pauli_matrix(letters):
    """Dense matrix of a Pauli string given as letters (read-only, cached)"""
    return _pauli_matrix_cached(str(letters))

def embed_letters(local, target_qubits, n_total):
    """Full-register letters for a local string placed on target_qubits"""
    local = local if isinstance(local, PauliString) else PauliString(local)
    target_qubits = tuple(int(q) for q in target_qubits)
    if local.n_qubits != len(target_qubits):
        raise SpecError(f"String '{local}' has {local.n_qubits} sites but {len(target_qubits)} targets were given")
    _validate_connection(target_qubits, len(target_qubits), n_total)
    letters = ["I"] * n_total
    for letter, qubit in zip(local.letters, target_qubits):
        letters[qubit] = letter
    return "".join(letters)

def embed_string(local, target_qubits, n_total):
    """
    Embed a k-site Pauli string into an n_total-qubit register.

    Args:
        local: PauliString (or letters) on k sites
        target_qubits: Strictly increasing qubit indices, length k
        n_total: Register size

    Returns:
        np.ndarray: 2^n_total x 2^n_total matrix with identity on untouched qubits
    """
    return pauli_matrix(embed_letters(local, target_qubits, n_total))

def embed_operator(operator, target_qubits, n_total):
    """
    Embed an arbitrary operator acting on target_qubits (in the given order).

    Used for gates and hidden-qubit unitaries; Pauli strings go through embed_string.
    """
    operator = np.asarray(operator, dtype=complex)
    target_qubits = [int(q) for q in target_qubits]
    k = len(target_qubits)
    if operator.shape != (2 ** k, 2 ** k):
        raise SpecError(f"Operator shape {operator.shape} does not match {k} target qubits")
    if len(set(target_qubits)) != k or any(q < 0 or q >= n_total for q in target_qubits):
        raise SpecError(f"Invalid target qubits {target_qubits} for {n_total} qubits")
    rest = [q for q in range(n_total) if q not in target_qubits]
    full = np.kron(operator, np.eye(2 ** len(rest), dtype=complex))
    order = target_qubits + rest
    position = [order.index(q) for q in range(n_total)]
    tensor = full.reshape((2,) * (2 * n_total))
    tensor = tensor.transpose(position + [p + n_total for p in position])
    return tensor.reshape(2 ** n_total, 2 ** n_total)

@lru_cache(maxsize=None)
def enumerate_block_basis(k, max_locality=MAX_BLOCK_LOCALITY):
    """
    Non-identity Pauli strings on k qubits in canonical order.

    Args:
        k: Block locality
        max_locality: Upper bound on k

    Returns:
        BlockBasis: 4^k - 1 strings, weight-ascending then lexicographic
    """
    if k < 1:
        raise SpecError(f"Block locality must be >= 1, got {k}")
    if k > max_locality:
        raise SpecError(f"Block locality {k} exceeds the configured cap {max_locality}")
    strings = [PauliString("".join(p)) for p in itertools.product(LETTERS, repeat=k)]
    strings = sorted((s for s in strings if s.weight > 0), key=PauliString.sort_key)
    return BlockBasis(k=k, strings=tuple(strings))

@lru_cache(maxsize=256)
def embedded_block_basis(connection, n_total):
    """Stack of the embedded block-basis matrices for one connection, shape (4^k - 1, d, d)"""
    basis = enumerate_block_basis(len(connection))
    stack = np.stack([embed_string(s, connection, n_total) for s in basis.strings])
    stack.setflags(write=False)
    return stack

def build_connections(kind, n_qubits, k=None):
    """
    Build one component C_k of a connection graph.

    Args:
        kind: local, nearest_chain, all_pairs or k_local_complete
        n_qubits: Register size
        k: Locality (only used by k_local_complete)

    Returns:
        tuple: Strictly increasing index tuples in lexicographic order
    """
    if kind == "local":
        size = 1
    elif kind in ("nearest_chain", "all_pairs"):
        size = 2
    elif kind == "k_local_complete":
        if k is None or k < 1:
            raise SpecError("k_local_complete needs k >= 1")
        size = k
    else:
        raise SpecError(f"Unsupported connection kind '{kind}' (expected one of {CONNECTION_KINDS})")

    if n_qubits < size:
        raise SpecError(f"{kind} needs at least {size} qubits, got {n_qubits}")

    if kind == "nearest_chain":
        return tuple((i, i + 1) for i in range(n_qubits - 1))
    return tuple(itertools.combinations(range(n_qubits), size))
