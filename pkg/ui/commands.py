"""
Command implementations for the Lindblad Learner CLI.
Each cmd_* takes the parsed argparse namespace and returns an exit code.
"""
import os
import glob
import logging

import numpy as np

from config.settings import BASIS_CONVENTION
from core import print_status
from core.errors import SpecError
from core.utils import (
    MANIFEST_SUFFIX, RunManifest, load_json, save_json, write_csv, write_manifest
)
from models.dataset import ExperimentPlan, TomographyDataset
from models.gates import BASIS_LETTERS
from models.model_space import (
    Anchors, ModelSpec, ParameterSet, build_dissipator, dof_count, embed_warm_start, hamiltonian_terms,
    level_spec, parameter_layout
)
from services.estimator import FitResult, OptimizerConfig, fit, hessian_uncertainty, init_params
from services.experiment import sample_synthetic
from services.likelihood import evaluate, finite_difference_gradient, predict_counts
from services.propagator import SolverConfig
from services.selection import (
    backward_path, greedy_path, lattice_from_fits, load_lattice_csv, rank_information_criteria
)
from ui.except_handler import EXIT_FAILURE, handle_command_exception
from ui.views import (
    display_dissipator_rates, display_dof, display_fit_summary, display_gradcheck, display_ranking,
    display_report_summary, display_selection_path, display_uncertainty
)

logger = logging.getLogger('cli')

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_MIN_COMPONENT = 1e-8
REPORT_COLUMNS = ["config_id", "prep", "basis", "t_us", "bitstring", "observed", "predicted"]

# === LOADERS ===

def load_spec(path):
    """ModelSpec from a spec file, or the spec embedded in a fit/model file"""
    data = load_json(path)
    if "n_total" not in data and "spec" in data:
        data = data["spec"]
    return ModelSpec.from_dict(data)

def load_model(path):
    """(spec, params) from a ground-truth bundle or a fit result"""
    data = load_json(path)
    if "spec" not in data or "params" not in data:
        raise SpecError(f"{path} holds no spec/params bundle")
    spec = ModelSpec.from_dict(data["spec"])
    return spec, ParameterSet.from_dict(data["params"], spec)

def load_dataset(path):
    return TomographyDataset.from_dict(load_json(path))

def _solver(args):
    return SolverConfig(rtol=args.rtol, atol=args.atol)

def _echo(args):
    """Flag values for the run manifest (non-finite floats as strings)"""
    echo = {}
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        if isinstance(value, float) and not np.isfinite(value):
            value = str(value)
        echo[key] = value
    return echo

# === PIPELINE COMMANDS ===

@handle_command_exception
def cmd_make_spec(args):
    """Write the ModelSpec of a lattice node"""
    manifest = RunManifest.start("make-spec", config=_echo(args))
    anchors = None
    if args.anchors:
        count, t_start, t_end = args.anchors
        anchors = Anchors(int(count), float(t_start), float(t_end))
    spec = level_spec(args.n_total, args.ham, args.diss, observed=args.observed, anchors=anchors)
    data = spec.to_dict()
    data["manifest"] = write_manifest(args.out, manifest)
    save_json(args.out, data)
    print_status(f"Spec H={args.ham}, D={args.diss} on {args.n_total} qubits written to {args.out}", "success")

@handle_command_exception
def cmd_simulate(args):
    """Sample a synthetic dataset from a ground-truth model"""
    manifest = RunManifest.start("simulate", {"model": args.model, "plan": args.plan},
                                 seed=args.seed, config=_echo(args))
    spec, params = load_model(args.model)
    plan = ExperimentPlan.from_dict(load_json(args.plan))
    dataset = sample_synthetic((spec, params), plan, args.seed, solver=_solver(args))
    data = dataset.to_dict()
    data["manifest"] = write_manifest(args.out, manifest)
    save_json(args.out, data)
    print_status(f"{len(dataset)} records written to {args.out}", "success")

@handle_command_exception
def cmd_fit(args):
    """Maximum-likelihood fit from a random or warm start"""
    warm_path = args.init[len("warm:"):] if args.init.startswith("warm:") else None
    manifest = RunManifest.start("fit", {"data": args.data, "spec": args.spec, "warm": warm_path},
                                 seed=args.seed, config=_echo(args))
    dataset = load_dataset(args.data)
    spec = load_spec(args.spec)

    baseline = None
    if args.init == "random":
        init = init_params(spec, args.seed, args.sigma0)
    else:
        previous = FitResult.from_dict(load_json(warm_path))
        init = embed_warm_start(previous.params, previous.spec, spec, jitter=args.jitter, seed=args.seed)
        baseline = previous.ll_full

    config = OptimizerConfig(
        learning_rate=args.lr,
        max_steps=args.max_steps,
        minibatch_fraction=args.minibatch,
        seed=args.seed,
        threads=args.threads,
        progress=args.progress,
    )
    result = fit(dataset, spec, init, config, solver=_solver(args), baseline_ll=baseline)
    result.manifest = write_manifest(args.out, manifest)
    save_json(args.out, result.to_dict())
    display_fit_summary(result, args.out)

def _load_fit_directory(directory):
    fits = []
    for path in sorted(glob.glob(os.path.join(directory, "*.json"))):
        if path.endswith(MANIFEST_SUFFIX):
            continue
        data = load_json(path)
        if "ll_full" not in data:
            logger.info(f"Skipping {path}: not a fit result")
            continue
        fits.append(FitResult.from_dict(data))
    return fits

@handle_command_exception
def cmd_select(args):
    """Greedy (or backward) selection over a lattice of fits or a table"""
    inputs = {"table": args.table} if args.table else {}
    manifest = RunManifest.start("select", inputs, config=_echo(args))
    if args.table:
        lattice = load_lattice_csv(args.table)
    else:
        lattice = lattice_from_fits(_load_fit_directory(args.fits))

    traverse = backward_path if args.backward else greedy_path
    path = traverse(lattice, args.threshold)
    display_selection_path(path)

    output = {
        "path": path.to_dict(),
        "lattice": [lattice[key].to_dict() for key in sorted(lattice)],
    }
    if args.n_obs:
        ranking = rank_information_criteria(lattice, args.n_obs)
        display_ranking(ranking)
        output["information_criteria"] = ranking
    if args.out:
        output["manifest"] = write_manifest(args.out, manifest)
        save_json(args.out, output)

# === VERIFICATION COMMANDS ===

@handle_command_exception
def cmd_dof(args):
    """Print the degree-of-freedom breakdown of a spec"""
    display_dof(dof_count(load_spec(args.spec)))

@handle_command_exception
def cmd_gradcheck(args):
    """Compare the adjoint gradient with central finite differences"""
    dataset = load_dataset(args.data)
    spec = load_spec(args.spec)
    if args.params:
        _, params = load_model(args.params)
    else:
        params = init_params(spec, args.seed, args.sigma0)

    solver = _solver(args)
    result = evaluate(params, spec, dataset, gradient=True, solver=solver, threads=args.threads)
    fd = finite_difference_gradient(params, spec, dataset, args.rel_step, result.schedule,
                                    solver=solver, threads=args.threads)
    gradient = result.gradient
    mask = np.abs(gradient) > GRADCHECK_MIN_COMPONENT
    errors = np.abs(fd[mask] - gradient[mask]) / np.maximum(np.abs(gradient[mask]), np.abs(fd[mask]))
    max_error = float(errors.max()) if errors.size else 0.0
    logger.info(f"Gradient check: {int(mask.sum())} components, max relative error {max_error:.3e}")
    display_gradcheck(max_error, int(mask.sum()), GRADCHECK_TOLERANCE)
    return 0 if max_error <= GRADCHECK_TOLERANCE else EXIT_FAILURE

@handle_command_exception
def cmd_report(args):
    """Observed against predicted counts per record and bit string"""
    manifest = RunManifest.start("report", {"fit": args.fit, "data": args.data}, config=_echo(args))
    result = FitResult.from_dict(load_json(args.fit))
    dataset = load_dataset(args.data)
    plan = dataset.plan
    predicted = predict_counts(result.params, result.spec, dataset, solver=_solver(args), threads=args.threads)

    rows = []
    width = plan.n_observed
    for record, expected in zip(dataset.records, predicted):
        config_id = plan.config_id(record.config)
        prep = "-".join(str(i) for i in record.config.prep)
        basis = "".join(BASIS_LETTERS[i] for i in record.config.basis)
        t_us = plan.times_us[record.t_index]
        for b in range(plan.n_outcomes):
            rows.append([config_id, prep, basis, repr(t_us), format(b, f"0{width}b"),
                         int(record.counts[b]), f"{expected[b]:.6f}"])
    write_csv(args.out, REPORT_COLUMNS, rows)
    write_manifest(args.out, manifest)

    observed = dataset.index.counts.astype(float)
    z = np.abs(observed - predicted) / np.sqrt(np.maximum(predicted, 1.0))
    display_report_summary({
        "records": len(dataset),
        "rows": len(rows),
        "ll_full": f"{result.ll_full:.6f}",
        "max |obs - pred| / sqrt(pred)": f"{float(z.max()) if z.size else 0.0:.3f}",
        "basis convention": BASIS_CONVENTION,
    })
    display_dissipator_rates(build_dissipator(result.params.theta_L, result.spec))

    if args.uncertainty:
        spec = result.spec
        uncertainty = hessian_uncertainty(result, dataset, method=args.uncertainty, solver=_solver(args),
                                          threads=args.threads)
        ham = parameter_layout(spec).ham_slice
        display_uncertainty(_term_labels(spec), result.params.flatten()[ham],
                            uncertainty.standard_errors[ham], uncertainty)

def _term_labels(spec):
    """'XZ(0,1)' per Hamiltonian term, with an anchor suffix when time-dependent"""
    labels, _ = hamiltonian_terms(spec)
    names = [f"{letters}({','.join(str(q) for q in connection)})" for _, connection, letters in labels]
    if not spec.is_time_dependent:
        return names
    return [f"{name}[{j}]" for name in names for j in range(spec.n_anchors)]
