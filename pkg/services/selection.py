"""
Nested-model comparison over the (Hamiltonian level x dissipator level) lattice.

Likelihood-ratio statistics, Wilks p-values, explanatory power, information
criteria and greedy forward/backward traversal. Everything here works on
(LL, dof) values only.
"""
import math
import logging
from dataclasses import dataclass, field

from scipy.special import gammaincc

from config.settings import LEVELS, XI_THRESHOLD
from core.errors import SelectionError
from core.utils import read_csv
from models.model_space import infer_levels

logger = logging.getLogger('selection')

LATTICE_COLUMNS = ("ham_level", "diss_level", "nll", "dof")
AXES = ("H", "D")

# === STATISTICS ===

def explanatory_power(ll_small, ll_large, d_small, d_large):
    """
    Xi = (2 (ll_large - ll_small) - dd) / sqrt(2 dd), dd = d_large - d_small.

    Positive when the extension explains more than its parameter count alone
    would under the smaller model.
    """
    delta_d = d_large - d_small
    if delta_d <= 0:
        raise SelectionError(f"Extension must add degrees of freedom (got delta_d = {delta_d})")
    return (2.0 * (ll_large - ll_small) - delta_d) / math.sqrt(2.0 * delta_d)

def wilks_pvalue(stat, delta_d):
    """Chi-square survival function with delta_d degrees of freedom"""
    if delta_d < 1:
        raise SelectionError(f"Invalid degrees of freedom {delta_d}")
    if stat < 0:
        raise SelectionError(f"Likelihood-ratio statistic must be non-negative, got {stat}")
    return float(gammaincc(0.5 * delta_d, 0.5 * stat))

def aic_bic(nll, d, n_obs):
    """
    Information criteria from a negative log-likelihood.

    Returns:
        tuple: (2 nll + 2 d, 2 nll + d ln n_obs)
    """
    if n_obs < 1:
        raise SelectionError("n_obs must be >= 1")
    return 2.0 * nll + 2.0 * d, 2.0 * nll + d * math.log(n_obs)

# === LATTICE ===

@dataclass(frozen=True)
class LatticeNode:
    ham_level: str
    diss_level: str
    ll: float
    dof: int

    def __post_init__(self):
        for level in (self.ham_level, self.diss_level):
            if level not in LEVELS:
                raise SelectionError(f"Unknown level '{level}' (expected one of {LEVELS})")
        if self.dof < 0:
            raise SelectionError(f"Negative dof at {self.key}")

    @property
    def key(self):
        return (self.ham_level, self.diss_level)

    @property
    def nll(self):
        return -self.ll

    @property
    def name(self):
        return f"H={self.ham_level}, D={self.diss_level}"

    def to_dict(self):
        return {"ham_level": self.ham_level, "diss_level": self.diss_level, "ll": self.ll, "dof": self.dof}


def build_lattice(nodes):
    """Map (ham_level, diss_level) -> LatticeNode, rejecting duplicates"""
    lattice = {}
    for node in nodes:
        if node.key in lattice:
            raise SelectionError(f"Duplicate lattice node {node.name}")
        lattice[node.key] = node
    return lattice

def load_lattice_csv(path):
    """Lattice from a CSV with columns ham_level, diss_level, nll, dof"""
    rows = read_csv(path)
    if rows and any(column not in rows[0] for column in LATTICE_COLUMNS):
        raise SelectionError(f"Lattice CSV needs columns {', '.join(LATTICE_COLUMNS)}")
    try:
        nodes = [LatticeNode(r["ham_level"].strip(), r["diss_level"].strip(), -float(r["nll"]), int(r["dof"]))
                 for r in rows]
    except ValueError as e:
        raise SelectionError(f"Malformed lattice row: {e}") from e
    return build_lattice(nodes)

def lattice_from_fits(fits):
    """Lattice nodes from FitResults of lattice specs"""
    nodes = []
    for result in fits:
        ham_level, diss_level = infer_levels(result.spec)
        nodes.append(LatticeNode(ham_level, diss_level, float(result.ll_full), int(result.generator_dof)))
    return build_lattice(nodes)

def check_coverage(lattice):
    """Raise SelectionError listing nodes missing from the covered level rectangle"""
    if not lattice:
        raise SelectionError("Empty lattice")
    h_ranks = [LEVELS.index(h) for h, _ in lattice]
    d_ranks = [LEVELS.index(d) for _, d in lattice]
    missing = [
        f"H={LEVELS[h]}, D={LEVELS[d]}"
        for h in range(min(h_ranks), max(h_ranks) + 1)
        for d in range(min(d_ranks), max(d_ranks) + 1)
        if (LEVELS[h], LEVELS[d]) not in lattice
    ]
    if missing:
        raise SelectionError(f"Missing lattice nodes: {'; '.join(missing)}")
    return (LEVELS[min(h_ranks)], LEVELS[min(d_ranks)]), (LEVELS[max(h_ranks)], LEVELS[max(d_ranks)])

def _shift(key, axis, step):
    h, d = LEVELS.index(key[0]), LEVELS.index(key[1])
    if axis == "H":
        h += step
    else:
        d += step
    if not (0 <= h < len(LEVELS) and 0 <= d < len(LEVELS)):
        return None
    return (LEVELS[h], LEVELS[d])

# === PATHS ===

@dataclass
class Move:
    source: tuple
    target: tuple
    axis: str
    two_delta_ll: float
    delta_d: int
    xi: float
    p_value: float = None

    def to_dict(self):
        return {
            "from": list(self.source), "to": list(self.target), "axis": self.axis,
            "two_delta_ll": self.two_delta_ll, "delta_d": self.delta_d,
            "xi": self.xi, "p_value": self.p_value,
        }


@dataclass
class SelectionPath:
    direction: str
    threshold: float
    start: tuple
    moves: list = field(default_factory=list)
    stop: tuple = None
    frontier: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    ties: list = field(default_factory=list)

    @property
    def accepted(self):
        return [f"{m.axis}->{m.target[0] if m.axis == 'H' else m.target[1]}" for m in self.moves]

    def to_dict(self):
        return {
            "direction": self.direction,
            "threshold": self.threshold if math.isfinite(self.threshold) else str(self.threshold),
            "start": list(self.start),
            "moves": [m.to_dict() for m in self.moves],
            "stop": list(self.stop),
            "frontier": [m.to_dict() for m in self.frontier],
            "candidates": [[m.to_dict() for m in step] for step in self.candidates],
            "ties": self.ties,
        }

def _extension(lattice, small_key, large_key, axis, source, target):
    """Move scored as the extension small -> large; None when it adds no dof"""
    small, large = lattice[small_key], lattice[large_key]
    delta_d = large.dof - small.dof
    if delta_d <= 0:
        logger.warning(f"Skipping {small.name} -> {large.name}: delta_d = {delta_d}")
        return None
    stat = 2.0 * (large.ll - small.ll)
    return Move(
        source=source, target=target, axis=axis,
        two_delta_ll=stat, delta_d=delta_d,
        xi=explanatory_power(small.ll, large.ll, small.dof, large.dof),
        p_value=wilks_pvalue(max(stat, 0.0), delta_d),
    )

def greedy_path(lattice, threshold=XI_THRESHOLD):
    """
    Forward selection from the simplest node.

    At each node both single-axis increments are scored and the larger Xi is
    taken while it exceeds the threshold; exact ties go to the Hamiltonian axis.

    Args:
        lattice: {(ham_level, diss_level): LatticeNode}
        threshold: Acceptance threshold on Xi

    Returns:
        SelectionPath
    """
    start, _ = check_coverage(lattice)
    path = SelectionPath("forward", threshold, start)
    current = start
    while True:
        moves = []
        for axis in AXES:
            target = _shift(current, axis, +1)
            if target is None or target not in lattice:
                continue
            move = _extension(lattice, current, target, axis, current, target)
            if move is not None:
                moves.append(move)
        if not moves:
            break
        path.candidates.append(moves)
        best = max(moves, key=lambda m: m.xi)
        if len(moves) == 2 and moves[0].xi == moves[1].xi:
            best = moves[0]
            path.ties.append(list(current))
            logger.warning(f"Tie at {current}: Xi = {best.xi:.6g} on both axes, taking H")
        if not best.xi > threshold:
            path.frontier = moves
            break
        path.moves.append(best)
        logger.info(f"Accepted {best.axis} move {best.source} -> {best.target} (Xi = {best.xi:.6g})")
        current = best.target
    path.stop = current
    return path

def backward_path(lattice, threshold=XI_THRESHOLD):
    """
    Top-down elimination from the most complex node.

    Removes the single-axis extension with the lowest Xi while that Xi does not
    exceed the threshold.

    Returns:
        SelectionPath: moves point from the larger node to the smaller one
    """
    _, start = check_coverage(lattice)
    path = SelectionPath("backward", threshold, start)
    current = start
    while True:
        moves = []
        for axis in AXES:
            smaller = _shift(current, axis, -1)
            if smaller is None or smaller not in lattice:
                continue
            move = _extension(lattice, smaller, current, axis, current, smaller)
            if move is not None:
                moves.append(move)
        if not moves:
            break
        path.candidates.append(moves)
        worst = min(moves, key=lambda m: m.xi)
        if worst.xi > threshold:
            path.frontier = moves
            break
        path.moves.append(worst)
        logger.info(f"Removed {worst.axis} extension {worst.source} -> {worst.target} (Xi = {worst.xi:.6g})")
        current = worst.target
    path.stop = current
    return path

def rank_information_criteria(lattice, n_obs):
    """Rows of every node with AIC and BIC, sorted by AIC then BIC"""
    rows = []
    for node in lattice.values():
        aic, bic = aic_bic(node.nll, node.dof, n_obs)
        rows.append({"ham_level": node.ham_level, "diss_level": node.diss_level,
                     "nll": node.nll, "dof": node.dof, "aic": aic, "bic": bic})
    rows.sort(key=lambda r: (r["aic"], r["bic"]))
    return rows
