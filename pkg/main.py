#!/usr/bin/env python3
"""
Lindblad Learner - Main Entry Point
"""
import sys
import argparse

from config.settings import (
    APP_NAME, APP_VERSION, DEFAULT_ATOL, DEFAULT_LEARNING_RATE, DEFAULT_MAX_STEPS,
    DEFAULT_RTOL, DEFAULT_SIGMA0, LEVELS, XI_THRESHOLD
)
from core.utils import setup_logging
from ui import (
    cmd_dof, cmd_fit, cmd_gradcheck, cmd_make_spec, cmd_report, cmd_select, cmd_simulate
)

def init_choice(value):
    """Validate --init: random or warm:FILE"""
    if value == "random" or (value.startswith("warm:") and len(value) > len("warm:")):
        return value
    raise argparse.ArgumentTypeError("expected 'random' or 'warm:FILE'")

def _add_solver_flags(parser):
    parser.add_argument('--rtol', type=float, default=DEFAULT_RTOL, help='Solver relative tolerance')
    parser.add_argument('--atol', type=float, default=DEFAULT_ATOL, help='Solver absolute tolerance')

def _add_threads_flag(parser):
    parser.add_argument('--threads', type=int, default=None, help='Worker threads (0 = machine parallelism)')

def build_parser():
    """Argument parser with one sub-command per pipeline step"""
    parser = argparse.ArgumentParser(prog="lindblad", description=f"{APP_NAME}: learn Lindblad models from tomography counts")
    parser.add_argument('--version', '-v', action='store_true', help='Display version information')
    parser.add_argument('--log-level', default=None, help='Log level (default from LINDBLAD_LOG_LEVEL)')
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("make-spec", help="Write a lattice ModelSpec")
    p.add_argument('--n-total', type=int, required=True)
    p.add_argument('--observed', type=int, nargs='+', default=None, help='Observed qubits (default: all)')
    p.add_argument('--ham', choices=LEVELS, required=True)
    p.add_argument('--diss', choices=LEVELS, required=True)
    p.add_argument('--anchors', nargs=3, metavar=('COUNT', 'T0', 'T1'), default=None)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_make_spec)

    p = sub.add_parser("simulate", help="Sample a synthetic dataset")
    p.add_argument('--model', required=True, help='Ground-truth bundle or fit JSON')
    p.add_argument('--plan', required=True, help='Experiment plan JSON')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="Maximum-likelihood fit")
    p.add_argument('--data', required=True)
    p.add_argument('--spec', required=True)
    p.add_argument('--init', type=init_choice, default="random", help="random or warm:FILE")
    p.add_argument('--lr', type=float, default=DEFAULT_LEARNING_RATE)
    p.add_argument('--max-steps', type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument('--minibatch', type=float, default=1.0, help='Minibatch fraction of configurations')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--sigma0', type=float, default=DEFAULT_SIGMA0, help='Random-init scale')
    p.add_argument('--jitter', type=float, default=0.0, help='Noise on new parameters of a warm start')
    p.add_argument('--progress', action='store_true', help='Show a progress bar')
    p.add_argument('--out', required=True)
    _add_threads_flag(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="Model selection over the lattice")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument('--fits', help='Directory of fit JSON files')
    source.add_argument('--table', help='CSV with ham_level, diss_level, nll, dof')
    p.add_argument('--threshold', type=float, default=XI_THRESHOLD)
    p.add_argument('--backward', action='store_true', help='Top-down elimination instead of greedy growth')
    p.add_argument('--n-obs', type=int, default=None, help='Observation count for AIC/BIC ranking')
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("dof", help="Degree-of-freedom breakdown of a spec")
    p.add_argument('--spec', required=True)
    p.set_defaults(func=cmd_dof)

    p = sub.add_parser("gradcheck", help="Adjoint gradient against finite differences")
    p.add_argument('--data', required=True)
    p.add_argument('--spec', required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--params', default=None, help='Evaluate at a model/fit file instead of a random point')
    p.add_argument('--sigma0', type=float, default=DEFAULT_SIGMA0)
    p.add_argument('--rel-step', type=float, default=1e-5)
    _add_threads_flag(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="Observed and predicted counts as CSV")
    p.add_argument('--fit', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--uncertainty', choices=('observed', 'expected'), default=None,
                   help='Also print Hamiltonian standard errors from the information matrix')
    _add_threads_flag(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_report)

    return parser

def main(argv=None):
    """Main entry point for the application"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.version:
        print(f"{APP_NAME} v{APP_VERSION}")
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2

    setup_logging(args.log_level)
    return args.func(args)

if __name__ == "__main__":
    sys.exit(main())
