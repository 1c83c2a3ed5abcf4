#!/usr/bin/env python3
"""
Model Aggregation Experiments - Command Line Runner

This script is the main entry point for the aggregation experiments.
It parses command line arguments and routes them to the experiment runner
or the plotter.
"""

import sys
import argparse

from app.config.config import EXPERIMENTS, RunConfig, apply_overrides, load_config
from app.main import plot, run
from app.plots.plotter import PLOT_KINDS
from app.utils.cli import CLI
from app.utils.exceptions import InvalidConfig


def int_list(text):
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def float_list(text):
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def build_parser():
    parser = argparse.ArgumentParser(description='Model aggregation experiments')
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    subparsers = parser.add_subparsers(dest='command', required=True)

    run_parser = subparsers.add_parser('run', help='Run an experiment')
    run_parser.add_argument('experiment', choices=EXPERIMENTS)
    run_parser.add_argument('--config', type=str, help='JSON configuration file')
    run_parser.add_argument('--seed', type=int, help='Master seed (default: MEVA_SEED or 0)')
    run_parser.add_argument('--output-dir', dest='output_dir', type=str, help='Directory for CSVs and plots')
    run_parser.add_argument('--dump-fields', dest='dump_fields', action='store_true', default=None,
                            help='Save aggregate and weight fields of PDE test functions')
    run_parser.add_argument('--plots', action='store_true', default=None, help='Render SVG plots of the results')
    run_parser.add_argument('--n-train', dest='n_train', type=int, help='Training functions (PDE experiments)')
    run_parser.add_argument('--n-test', dest='n_test', type=int, help='Test functions (PDE experiments)')
    run_parser.add_argument('--grid', type=int, help='Grid nodes per side (PDE experiments)')
    run_parser.add_argument('--nt', type=int, help='Output times (Burgers)')
    run_parser.add_argument('--subsample', type=int, help='Grid points per training function')
    run_parser.add_argument('--n-colloc', dest='n_colloc', type=int, help='GP collocation points (Laplace)')
    run_parser.add_argument('--reg', type=float, help='Ridge strength of the aggregator')
    run_parser.add_argument('--Ns', type=int_list, help='Sample sizes, e.g. 50,100,200 (theorem)')
    run_parser.add_argument('--trials', type=int, help='Trials per sample size (theorem)')
    run_parser.add_argument('--n-models', dest='n_models', type=int, help='Number of models (theorem)')
    run_parser.add_argument('--eps', type=float, help='Error scale (theorem)')
    run_parser.add_argument('--rho', type=float, help='Shift strength (theorem)')
    run_parser.add_argument('--nk-models', dest='nk_models', type=int, help='GP models (nested kriging)')
    run_parser.add_argument('--data', type=str, help='Regression CSV (tabular)')
    run_parser.add_argument('--target', type=str, help='Target column of --data')
    run_parser.add_argument('--n-splits', dest='n_splits', type=int, help='Seeded splits (tabular)')
    run_parser.add_argument('--learners', type=lambda text: text.split(','), help='e.g. ridge,knn,gbt,krr')
    run_parser.add_argument('--ratios', type=float_list, help='Train,val,test fractions (tabular)')

    plot_parser = subparsers.add_parser('plot', help='Render a results CSV as SVG')
    plot_parser.add_argument('csv', type=str)
    plot_parser.add_argument('--kind', choices=PLOT_KINDS, required=True)
    return parser


def config_from_args(args):
    """Merge the JSON/env configuration with the command-line flags."""
    values = load_config(args.config)
    config = RunConfig.from_dict(args.experiment, values)
    overrides = {key: value for key, value in vars(args).items()
                 if key not in ('command', 'experiment', 'config', 'debug')}
    return apply_overrides(config, overrides)


if __name__ == "__main__":
    args = build_parser().parse_args()
    cli = CLI(debug=args.debug)

    if args.command == 'plot':
        sys.exit(plot(args.csv, args.kind, cli))

    # Load configuration first
    try:
        config = config_from_args(args)
    except InvalidConfig as e:
        cli.print_error(f"Failed to load configuration: {e}")
        sys.exit(2)

    sys.exit(run(config, cli))
