"""
Single-qubit gate library, preparation sets and measurement-basis rotations.

Rotations follow R_a(phi) = exp(-i phi sigma_a / 2). A gate sequence is a list
applied left to right, so its unitary is G_last ... G_first.
"""
import numpy as np

from core.errors import DatasetError, SpecError
from models.pauli import PAULI_MATRICES

SIC_ANGLE = 2.0 * np.arctan(np.sqrt(2.0))
BASIS_LETTERS = "xyz"

def rotation(axis, angle):
    """exp(-i angle sigma_axis / 2)"""
    sigma = PAULI_MATRICES[axis.upper()]
    return np.cos(angle / 2.0) * np.eye(2, dtype=complex) - 1j * np.sin(angle / 2.0) * sigma

def virtual_z(phi):
    """Ideal frame update diag(e^{-i phi/2}, e^{i phi/2})"""
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])

_FIXED_GATES = {
    "I": lambda: np.eye(2, dtype=complex),
    "X180": lambda: rotation("X", np.pi),
    "X90": lambda: rotation("X", np.pi / 2),
    "Xm90": lambda: rotation("X", -np.pi / 2),
    "Y90": lambda: rotation("Y", np.pi / 2),
    "Ym90": lambda: rotation("Y", -np.pi / 2),
    "XSIC": lambda: rotation("X", SIC_ANGLE),
}

_PARAMETRIC_GATES = {
    "VZ": virtual_z,
    "RX": lambda phi: rotation("X", phi),
    "RY": lambda phi: rotation("Y", phi),
}

GATE_NAMES = tuple(_FIXED_GATES) + tuple(_PARAMETRIC_GATES)

def gate(name, *args):
    """
    Exact 2x2 unitary of a named gate.

    Args:
        name: I, X180, X90, Xm90, Y90, Ym90, XSIC, or VZ/RX/RY with an angle
        args: Angle in radians for parametric gates

    Returns:
        np.ndarray: 2x2 unitary
    """
    if name in _FIXED_GATES:
        if args:
            raise SpecError(f"Gate {name} takes no arguments")
        return _FIXED_GATES[name]()
    if name in _PARAMETRIC_GATES:
        if len(args) != 1:
            raise SpecError(f"Gate {name} needs exactly one angle")
        return _PARAMETRIC_GATES[name](float(args[0]))
    raise SpecError(f"Unknown gate '{name}' (known: {', '.join(GATE_NAMES)})")

def sequence_unitary(sequence):
    """
    Unitary of a gate sequence; entries are names or [name, angle].
    """
    unitary = np.eye(2, dtype=complex)
    for step in sequence:
        if isinstance(step, str):
            g = gate(step)
        else:
            g = gate(step[0], *step[1:])
        unitary = g @ unitary
    return unitary

# |0>, |1>, |+>, |->, |+i>, |-i>
PAULI6 = (("I",), ("X180",), ("Y90",), ("Ym90",), ("Xm90",), ("X90",))

# tetrahedron: |0> and XSIC|0> = sqrt(1/3)|0> - i sqrt(2/3)|1> (Bloch azimuth -90 degrees);
# each VZ multiplies the |1> amplitude by e^{i phi}, giving azimuths 30 and 150 degrees
SIC4 = (
    ("I",),
    ("XSIC",),
    ("XSIC", ("VZ", 2.0 * np.pi / 3.0)),
    ("XSIC", ("VZ", 4.0 * np.pi / 3.0)),
)

PREPARATION_SETS = {"pauli6": PAULI6, "sic4": SIC4}

def preparation_sequences(prep_set, custom=None):
    """Gate sequences of a named preparation set (or the custom list)"""
    if prep_set == "custom":
        if not custom:
            raise DatasetError("A custom preparation set needs its gate sequences")
        return tuple(tuple(s if isinstance(s, str) else tuple(s) for s in seq) for seq in custom)
    if prep_set not in PREPARATION_SETS:
        raise DatasetError(f"Unknown preparation set '{prep_set}'")
    return PREPARATION_SETS[prep_set]

def preparation_unitaries(prep_set, custom=None):
    return [sequence_unitary(seq) for seq in preparation_sequences(prep_set, custom)]

def basis_unitary(letter):
    """Rotation mapping the measured axis onto z before readout"""
    if letter == "x":
        return rotation("Y", -np.pi / 2)
    if letter == "y":
        return rotation("X", np.pi / 2)
    if letter == "z":
        return np.eye(2, dtype=complex)
    raise DatasetError(f"Unknown measurement basis '{letter}'")

def basis_unitaries(basis_set="xyz"):
    return [basis_unitary(letter) for letter in basis_set]
