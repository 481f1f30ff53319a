import json
import os


class BaseConfig:
    DEBUG = False
    LOG_DIR = "log"

    # fixed-rank solver
    DEFAULT_GRAD_TOL = 1e-6
    DEFAULT_MAX_ITER = 500
    DEFAULT_INIT_SCALE = 0.1
    DEFAULT_STRATEGY = "joint"
    LBFGS_MEMORY = 20
    LBFGS_MAX_LINESEARCH = 50
    LBFGS_FTOL = 1e-15
    DENSE_BLOCK_LIMIT = 2000 # unknowns per alternating block solved in closed form

    # convex solvers
    DEFAULT_TRACE_EPS = 1e-3 # relative to max|z|
    TRACE_SIZE_LIMIT = 250_000 # n_X * n_Y

    # experiment harness
    DEFAULT_FOLDS = 5
    DEFAULT_MAX_WORKERS = 4
    DEFAULT_SUBSAMPLE_USERS = 400
    DEFAULT_SUBSAMPLE_MOVIES = 800
    DEFAULT_TEST_FRACTION = 1935 / 20541
    DEFAULT_SEED = 0


class DevConfig(BaseConfig):
    DEBUG = True


class ProdConfig(BaseConfig):
    DEBUG = False


PROFILES = {"dev": DevConfig, "prod": ProdConfig}

config = ProdConfig()


def get_config(profile="prod"):
    """Switch the active profile in place so `from tensorcf.config import config` sees it."""
    if profile not in PROFILES:
        raise ValueError(f"Unknown config profile '{profile}', expected one of {sorted(PROFILES)}")
    config.__class__ = PROFILES[profile]
    return config


DEFAULT_EXPERIMENT = {
    "ratings": "data/ml-100k/u.data",
    "users": "data/ml-100k/u.user",
    "items": "data/ml-100k/u.item",
    "occupations": "data/ml-100k/u.occupation",
    "subsample_users": BaseConfig.DEFAULT_SUBSAMPLE_USERS,
    "subsample_movies": BaseConfig.DEFAULT_SUBSAMPLE_MOVIES,
    "test_fraction": BaseConfig.DEFAULT_TEST_FRACTION,
    "seed": BaseConfig.DEFAULT_SEED,
    "folds": BaseConfig.DEFAULT_FOLDS,
    "etas": [0.0, 0.15, 0.5, 0.85, 1.0],
    "zetas": [0.0, 0.15, 0.5, 0.85, 1.0],
    "ranks": [50, 80, 130, 200],
    "lambdas": [25e-6, 5e-6, 1e-6, 0.2e-6, 0.04e-6],
    "strategy": BaseConfig.DEFAULT_STRATEGY,
    "max_iter": BaseConfig.DEFAULT_MAX_ITER,
    "grad_tol": BaseConfig.DEFAULT_GRAD_TOL,
    "workers": BaseConfig.DEFAULT_MAX_WORKERS,
}


def load_experiment_config(config_path=None):
    """Built-in experiment defaults, updated with the keys of a JSON file if given."""
    experiment = dict(DEFAULT_EXPERIMENT)
    if config_path is None:
        return experiment
    if not os.path.exists(config_path):
        raise ValueError(f"Experiment config not found: {config_path}")
    with open(config_path, "r", encoding="utf-8") as f:
        user_config = json.load(f)
    unknown = set(user_config) - set(experiment)
    if unknown:
        raise ValueError(f"Unknown experiment config keys in {config_path}: {sorted(unknown)}")
    experiment.update(user_config)
    return experiment
