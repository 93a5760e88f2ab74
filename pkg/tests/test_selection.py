import math
import os

import pytest

from core.errors import SelectionError
from models.model_space import ParameterSet, level_spec
from services.estimator import FitResult
from services.selection import (
    LatticeNode, aic_bic, backward_path, build_lattice, check_coverage, explanatory_power,
    greedy_path, lattice_from_fits, load_lattice_csv, rank_information_criteria, wilks_pvalue
)


@pytest.fixture
def five_qubit_lattice(fixtures_dir):
    return load_lattice_csv(os.path.join(fixtures_dir, "five_qubit_models.csv"))


def _square(ll_h, ll_d, ll_both, d_h=4, d_d=4, d_both=8):
    return build_lattice([
        LatticeNode("none", "none", 0.0, 0),
        LatticeNode("local", "none", ll_h, d_h),
        LatticeNode("none", "local", ll_d, d_d),
        LatticeNode("local", "local", ll_both, d_both),
    ])

# === STATISTICS ===

def test_explanatory_power_values():
    assert explanatory_power(-512.49e6, -426.67e6, 0, 45) == pytest.approx(1.80926e7, rel=1e-4)
    assert explanatory_power(-407.91e6, -407.90e6, 2490, 35430) == pytest.approx(-50.4, abs=0.05)
    assert explanatory_power(-10.0, -5.0, 3, 13) == 0.0


def test_explanatory_power_requires_added_dof():
    with pytest.raises(SelectionError):
        explanatory_power(-10.0, -5.0, 4, 4)
    with pytest.raises(SelectionError):
        explanatory_power(-10.0, -5.0, 6, 4)


def test_wilks_pvalue():
    assert wilks_pvalue(3.841458820694124, 1) == pytest.approx(0.05, rel=1e-9)
    assert wilks_pvalue(2.0, 2) == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert wilks_pvalue(0.0, 2) == 1.0
    with pytest.raises(SelectionError):
        wilks_pvalue(1.0, 0)
    with pytest.raises(SelectionError):
        wilks_pvalue(-1.0, 3)


def test_aic_bic():
    n_obs = 5 * 10 ** 7
    aic, bic = aic_bic(407.9e6, 2220, n_obs)
    assert aic == pytest.approx(815.80e6, abs=0.01e6)
    assert bic == pytest.approx(815.8e6 + 2220 * math.log(n_obs))
    assert aic_bic(512.49e6, 0, n_obs) == (1024.98e6, 1024.98e6)
    with pytest.raises(SelectionError):
        aic_bic(1.0, 1, 0)

# === LATTICE ===

def test_load_lattice_csv(five_qubit_lattice):
    assert len(five_qubit_lattice) == 25
    node = five_qubit_lattice[("a2a", "a2a")]
    assert node.ll == -407.9e6
    assert node.dof == 2220
    assert check_coverage(five_qubit_lattice) == (("none", "none"), ("3local", "3local"))


def test_lattice_rejects_bad_rows(tmp_path):
    path = tmp_path / "lattice.csv"
    path.write_text("ham_level,diss_level,nll\nnone,none,1.0\n")
    with pytest.raises(SelectionError):
        load_lattice_csv(str(path))
    path.write_text("ham_level,diss_level,nll,dof\nnone,none,abc,0\n")
    with pytest.raises(SelectionError):
        load_lattice_csv(str(path))
    with pytest.raises(SelectionError):
        LatticeNode("quadratic", "none", 0.0, 0)
    with pytest.raises(SelectionError):
        build_lattice([LatticeNode("none", "none", 0.0, 0)] * 2)


def test_coverage_reports_missing_nodes(five_qubit_lattice):
    del five_qubit_lattice[("nn", "local")]
    with pytest.raises(SelectionError, match="H=nn, D=local"):
        check_coverage(five_qubit_lattice)
    with pytest.raises(SelectionError):
        greedy_path(five_qubit_lattice)


def test_lattice_from_fits():
    fits = []
    for ham_level, ll in (("none", -20.0), ("local", -12.0)):
        spec = level_spec(2, ham_level, "none")
        fits.append(FitResult(spec=spec, params=ParameterSet.zeros(spec), ll_full=ll))
    lattice = lattice_from_fits(fits)
    assert lattice[("local", "none")].dof == 6
    assert lattice[("none", "none")].ll == -20.0

# === PATHS ===

def test_greedy_path_on_five_qubit_lattice(five_qubit_lattice):
    path = greedy_path(five_qubit_lattice)
    assert path.accepted == ["D->local", "H->local", "H->nn", "H->a2a", "H->3local", "D->nn", "D->a2a"]
    assert path.stop == ("3local", "a2a")
    assert [m.target for m in path.frontier] == [("3local", "3local")]
    assert path.frontier[0].xi == pytest.approx(-50.4, abs=0.05)
    assert path.moves[0].xi == pytest.approx(1.80926e7, rel=1e-4)
    assert not path.ties


def test_first_greedy_step_scores_both_axes(five_qubit_lattice):
    path = greedy_path(five_qubit_lattice)
    first = {m.axis: m for m in path.candidates[0]}
    assert first["H"].delta_d == 15
    assert first["D"].delta_d == 45
    assert first["D"].two_delta_ll == pytest.approx(171.64e6)


def test_backward_path_on_five_qubit_lattice(five_qubit_lattice):
    path = backward_path(five_qubit_lattice)
    assert [m.target for m in path.moves] == [("3local", "a2a"), ("a2a", "a2a")]
    assert path.stop == ("a2a", "a2a")
    assert all(m.xi > 1.65 for m in path.frontier)


def test_threshold_controls_acceptance(five_qubit_lattice):
    path = greedy_path(five_qubit_lattice, threshold=1e5)
    assert path.stop == ("a2a", "local")
    assert path.to_dict()["stop"] == ["a2a", "local"]


def test_tie_goes_to_hamiltonian_axis():
    path = greedy_path(_square(10.0, 10.0, 11.0))
    assert path.accepted == ["H->local"]
    assert path.ties == [["none", "none"]]
    assert path.stop == ("local", "none")


def test_extension_without_added_dof_is_skipped():
    path = greedy_path(_square(10.0, 5.0, 30.0, d_h=0))
    assert [m.axis for m in path.candidates[0]] == ["D"]
    assert path.accepted[0] == "D->local"


def test_rank_information_criteria(five_qubit_lattice):
    rows = rank_information_criteria(five_qubit_lattice, 5 * 10 ** 7)
    assert (rows[0]["ham_level"], rows[0]["diss_level"]) == ("a2a", "a2a")
    assert (rows[-1]["ham_level"], rows[-1]["diss_level"]) == ("none", "none")
    assert rows[-1]["aic"] == pytest.approx(1024.98e6)
    assert [r["aic"] for r in rows] == sorted(r["aic"] for r in rows)
