import argparse
import os
import sys

from tensorcf.config import config, get_config, load_experiment_config
from tensorcf.core.data_movielens import load_dataset, write_snapshot
from tensorcf.core.diagnostics import run_diagnostics
from tensorcf.core.experiment import (
    RunSettings, Solver, evaluate_model, fit_single, load_experiment_data, load_model, run_table, save_model,
    surface, write_manifest,
)
from tensorcf.core.grid import CVConfig, GridSpec
from tensorcf.utils import Log

logger = Log(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIAGNOSTICS = 2


def _add_data_args(parser, sampling=True):
    parser.add_argument('--ratings', type=str, default=None, help='ratings file (user \\t item \\t rating \\t time)')
    parser.add_argument('--users', type=str, default=None, help='user attribute file')
    parser.add_argument('--items', type=str, default=None, help='movie attribute file')
    parser.add_argument('--occupations', type=str, default=None, help='occupation vocabulary file')
    if sampling:
        parser.add_argument('--subsample-users', type=int, default=None)
        parser.add_argument('--subsample-movies', type=int, default=None)
        parser.add_argument('--test-fraction', type=float, default=None)
        parser.add_argument('--seed', type=int, default=None, help='subsample, split, fold and init seed')


def _add_run_args(parser):
    parser.add_argument('--strategy', choices=['joint', 'alternating'], default=None)
    parser.add_argument('--max-iter', type=int, default=None)
    parser.add_argument('--grad-tol', type=float, default=None)
    parser.add_argument('--workers', type=int, default=None, help='parallel grid cells')
    parser.add_argument('--center', action='store_true', help='subtract the training mean rating before fitting')
    parser.add_argument('--no-timing', action='store_true', help='write wall_time_s = 0')
    parser.add_argument('--output', '-o', type=str, default='results', help='output directory')


def build_parser():
    parser = argparse.ArgumentParser(prog='tensorcf', description='Kernel matrix completion experiments')
    parser.add_argument('--config', '-c', type=str, default=None, help='experiment JSON config')
    parser.add_argument('--profile', choices=['prod', 'dev'], default='prod')
    parser.add_argument('--log-dir', type=str, default=None)
    commands = parser.add_subparsers(dest='command', required=True)

    fit = commands.add_parser('fit', help='fit one (eta, zeta, rank, lambda) cell and score the test split')
    _add_data_args(fit)
    _add_run_args(fit)
    fit.add_argument('--eta', type=float, required=True)
    fit.add_argument('--zeta', type=float, required=True)
    fit.add_argument('--rank', type=int, default=1)
    fit.add_argument('--lambda', dest='lam', type=float, required=True)
    fit.add_argument('--solver', choices=Solver.ALL, default=Solver.FIXED_RANK)
    fit.add_argument('--mu', type=float, default=0.0, help='trace-norm weight (trace_norm solver)')
    fit.add_argument('--allow-large', action='store_true', help='lift the trace-norm size guard (trace_norm solver)')
    fit.add_argument('--save-model', type=str, default=None, help='.npz path for the fitted fixed-rank model')

    grid = commands.add_parser('grid', help='cross-validated sweep with the report files')
    _add_data_args(grid)
    _add_run_args(grid)
    grid.add_argument('--etas', type=float, nargs='+', default=None)
    grid.add_argument('--zetas', type=float, nargs='+', default=None)
    grid.add_argument('--ranks', type=int, nargs='+', default=None)
    grid.add_argument('--lambdas', type=float, nargs='+', default=None)
    grid.add_argument('--folds', type=int, default=None)

    surf = commands.add_parser('surface', help='test MSE over eta x zeta at a fixed rank and lambda')
    _add_data_args(surf)
    _add_run_args(surf)
    surf.add_argument('--rank', type=int, required=True)
    surf.add_argument('--lambda', dest='lam', type=float, required=True)
    surf.add_argument('--etas', type=float, nargs='+', default=None)
    surf.add_argument('--zetas', type=float, nargs='+', default=None)

    evaluate = commands.add_parser('evaluate', help='MSE of a saved model on a ratings file')
    _add_data_args(evaluate, sampling=False)
    evaluate.add_argument('--model', type=str, required=True)

    diagnostics = commands.add_parser('diagnostics', help='run the numerical self-checks')
    diagnostics.add_argument('--seed', type=int, default=0)

    parse = commands.add_parser('parse', help='validate dataset files and write a snapshot')
    _add_data_args(parse, sampling=False)
    parse.add_argument('--snapshot', type=str, default=None)
    return parser


def _merge(experiment, args, keys):
    """Explicit flags win over the JSON config, which wins over built-in defaults."""
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            experiment[key] = value
    return experiment


def _paths(experiment):
    return {key: experiment[key] for key in ('ratings', 'users', 'items', 'occupations')}


def _settings(experiment, args):
    return RunSettings(strategy=experiment['strategy'], max_iter=experiment['max_iter'],
                       grad_tol=experiment['grad_tol'], seed=experiment['seed'],
                       center=args.center, timing=not args.no_timing,
                       allow_large=getattr(args, 'allow_large', False))


def _load_data(experiment):
    return load_experiment_data(_paths(experiment), experiment['subsample_users'], experiment['subsample_movies'],
                                experiment['test_fraction'], experiment['seed'])


def _cmd_fit(experiment, args):
    data, counts = _load_data(experiment)
    saved, test_mse = fit_single(data, args.eta, args.zeta, args.rank, args.lam, _settings(experiment, args),
                                 args.solver, args.mu)
    print(f"solver={args.solver} eta={args.eta:g} zeta={args.zeta:g} rank={args.rank} "
          f"lambda={args.lam:g} test_mse={test_mse:.6f} unseen_pairs={data.unseen_pairs()}")
    if args.save_model:
        if saved is None:
            raise ValueError(f"--save-model is only supported for the {Solver.FIXED_RANK} solver")
        save_model(saved, args.save_model)
    os.makedirs(args.output, exist_ok=True)
    write_manifest(os.path.join(args.output, 'fit_manifest.txt'), {
        **counts, 'solver': args.solver, 'eta': args.eta, 'zeta': args.zeta, 'rank': args.rank,
        'lambda': args.lam, 'mu': args.mu, 'seed': experiment['seed'], 'test_mse': test_mse,
    })
    return EXIT_OK


def _cmd_grid(experiment, args):
    data, counts = _load_data(experiment)
    grid = GridSpec(etas=experiment['etas'], zetas=experiment['zetas'], ranks=experiment['ranks'],
                    lambdas=experiment['lambdas'])
    cv = CVConfig(folds=experiment['folds'], seed=experiment['seed'])
    manifest = {**counts, **{f"input_{key}": value for key, value in _paths(experiment).items()},
                'subsample_seed': experiment['seed'], 'test_fraction': experiment['test_fraction']}
    report = run_table(data, grid, cv, _settings(experiment, args), experiment['workers'], args.output, manifest)
    best = report.best
    print("-" * 80)
    print(f"{'eta':<8} {'zeta':<8} {'rank':<6} {'lambda':<10} {'cv_mse':<12} {'test_mse':<12}")
    print("-" * 80)
    print(f"{best['eta']:<8g} {best['zeta']:<8g} {int(best['rank']):<6} {best['lambda']:<10g} "
          f"{best['cv_mse']:<12.6f} {best['test_mse']:<12.6f}")
    print("-" * 80)
    print(f"{len(report.table)} cells, {report.manifest['failed_cells']} failed, "
          f"{report.unseen_pairs} unseen test pairs; reports in {args.output}")
    return EXIT_OK


def _cmd_surface(experiment, args):
    data, _ = _load_data(experiment)
    os.makedirs(args.output, exist_ok=True)
    path = os.path.join(args.output, f'surface_rank{args.rank}_lambda{args.lam:g}.csv')
    frame, _ = surface(data, args.rank, args.lam, experiment['etas'], experiment['zetas'],
                       _settings(experiment, args), experiment['workers'], path)
    print(frame.to_string(float_format=lambda value: f"{value:.4f}"))
    return EXIT_OK


def _cmd_evaluate(experiment, args):
    dataset = load_dataset(*_paths(experiment).values())
    mse, unseen = evaluate_model(load_model(args.model), dataset)
    print(f"ratings={len(dataset.ratings)} mse={mse:.6f} unseen_pairs={unseen}")
    return EXIT_OK


def _cmd_diagnostics(experiment, args):
    report = run_diagnostics(seed=args.seed)
    print(report)
    if not report.passed:
        print(f"failed: {', '.join(report.failed())}")
        return EXIT_DIAGNOSTICS
    return EXIT_OK


def _cmd_parse(experiment, args):
    dataset = load_dataset(*_paths(experiment).values())
    print(" ".join(f"{key}={value}" for key, value in dataset.counts.items()))
    if args.snapshot:
        write_snapshot(dataset, args.snapshot)
    return EXIT_OK


COMMANDS = {
    'fit': _cmd_fit,
    'grid': _cmd_grid,
    'surface': _cmd_surface,
    'evaluate': _cmd_evaluate,
    'diagnostics': _cmd_diagnostics,
    'parse': _cmd_parse,
}

MERGED_KEYS = [
    'ratings', 'users', 'items', 'occupations', 'subsample_users', 'subsample_movies', 'test_fraction', 'seed',
    'strategy', 'max_iter', 'grad_tol', 'workers', 'etas', 'zetas', 'ranks', 'lambdas', 'folds',
]


def run_cli(argv=None):
    """Parse `argv` and run one subcommand; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        get_config(args.profile)
        if args.log_dir:
            config.LOG_DIR = args.log_dir
        experiment = _merge(load_experiment_config(args.config), args, MERGED_KEYS)
        return COMMANDS[args.command](experiment, args)
    except KeyboardInterrupt:
        print("\nreceived interrupt signal, exiting...")
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""
    python -m tensorcf.api.interface grid --config config/smoke.json
"""
