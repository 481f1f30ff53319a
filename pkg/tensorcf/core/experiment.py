"""
Experiment harness: cross-validated grid sweeps over (eta, zeta, rank, lambda),
refits on the full training part, held-out evaluation and report files.

Every fit sees only the entities present in its training observations; held-out
pairs are scored through cross kernels, so a pure-Dirac model predicts 0 for an
entity it never saw.
"""

import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from tensorcf.config import config
from tensorcf.core import convex_solvers, solver_fixed_rank
from tensorcf.core.data_movielens import load_dataset, movie_entities, split, subsample, user_entities
from tensorcf.core.grid import CORNER_PAIRS, TABLE_PAIRS, GridCell, GridSpec, ResultTable
from tensorcf.core.kernels import KernelSpec, build_cross_kernel, build_kernel_matrix
from tensorcf.core.pool import WorkerPool
from tensorcf.core.solver_fixed_rank import FactorModel, FitConfig, ObservationSet
from tensorcf.utils import Log

logger = Log(__name__)


class Solver:
    FIXED_RANK = "fixed_rank"
    TRACE_NORM = "trace_norm"
    PRODUCT_RIDGE = "product_ridge"

    ALL = (FIXED_RANK, TRACE_NORM, PRODUCT_RIDGE)


@dataclass(frozen=True)
class RunSettings:
    strategy: str = config.DEFAULT_STRATEGY
    max_iter: int = config.DEFAULT_MAX_ITER
    grad_tol: float = config.DEFAULT_GRAD_TOL
    seed: int = config.DEFAULT_SEED
    center: bool = False
    timing: bool = True
    allow_large: bool = False # lift the trace-norm size guard

    def fit_config(self, rank, lam):
        return FitConfig(p=int(rank), lam=float(lam), strategy=self.strategy,
                         max_iter=self.max_iter, grad_tol=self.grad_tol, seed=self.seed)


@dataclass(frozen=True)
class ExperimentData:
    """Entities and the fixed train/test split shared read-only by every cell."""
    row_entities: list
    col_entities: list
    train: ObservationSet
    test: ObservationSet = None

    def __post_init__(self):
        row_ids = tuple(entity_id for entity_id, _ in self.row_entities)
        col_ids = tuple(entity_id for entity_id, _ in self.col_entities)
        for name, obs in (("train", self.train), ("test", self.test)):
            if obs is not None and (obs.rows != row_ids or obs.cols != col_ids):
                raise ValueError(f"The {name} observations are not indexed over the experiment entities")

    @classmethod
    def from_split(cls, dataset, data_split):
        return cls(user_entities(dataset), movie_entities(dataset), data_split.train, data_split.test)

    def kernels(self, eta, zeta):
        """Full Gram matrices over all row and all column entities."""
        K = build_kernel_matrix(KernelSpec.interpolated(eta), self.row_entities)
        G = build_kernel_matrix(KernelSpec.interpolated(zeta), self.col_entities)
        return K.entries, G.entries

    def unseen_pairs(self):
        """Test pairs whose user or movie has no training rating."""
        if self.test is None:
            return 0
        seen_rows = np.zeros(self.train.shape[0], dtype=bool)
        seen_cols = np.zeros(self.train.shape[1], dtype=bool)
        seen_rows[self.train.i] = True
        seen_cols[self.train.j] = True
        return int(np.sum(~seen_rows[self.test.i] | ~seen_cols[self.test.j]))


@dataclass
class RunReport:
    table: ResultTable
    selected: int
    unseen_pairs: int
    manifest: dict
    files: dict = field(default_factory=dict)

    @property
    def best(self):
        return self.table.rows.iloc[self.selected]


# ------------------------------------------------------------------ scoring

def evaluate_mse(predictions, targets):
    predictions = np.asarray(predictions, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    if len(predictions) != len(targets):
        raise ValueError(f"{len(predictions)} predictions for {len(targets)} targets")
    if len(targets) < 1:
        raise ValueError("evaluate_mse needs at least one target")
    return float(np.mean((predictions - targets) ** 2))


def fit_and_predict(K_full, G_full, train, query_i, query_j, rank, lam, settings,
                    solver=Solver.FIXED_RANK, mu=0.0):
    """Fit on the entities that carry training ratings and score the query pairs.

    Returns the predictions and the fitted model over the compacted grid.
    """
    compacted, row_index, col_index = train.compact()
    K = K_full[np.ix_(row_index, row_index)]
    G = G_full[np.ix_(col_index, col_index)]
    K_cross = K_full[row_index]
    G_cross = G_full[col_index]
    offset = float(np.mean(compacted.z)) if settings.center else 0.0
    targets = compacted.with_targets(compacted.z - offset)
    if solver == Solver.FIXED_RANK:
        model = solver_fixed_rank.fit(K, G, targets, settings.fit_config(rank, lam))
        predictions = solver_fixed_rank.predict_pairs(model, K_cross, G_cross, query_i, query_j)
    elif solver == Solver.TRACE_NORM:
        trace_config = convex_solvers.TraceFitConfig(mu=mu, lam=lam, max_iter=settings.max_iter,
                                                     grad_tol=settings.grad_tol)
        model = convex_solvers.fit_trace_norm(K, G, targets, trace_config, allow_large=settings.allow_large)
        predictions = convex_solvers.predict_gamma_new(model, K_cross, G_cross)[query_i, query_j]
    elif solver == Solver.PRODUCT_RIDGE:
        model = convex_solvers.fit_product_ridge(K, G, targets, lam)
        predictions = convex_solvers.product_ridge_predict_pairs(model, targets, K_cross, G_cross, query_i, query_j)
    else:
        raise ValueError(f"Unknown solver '{solver}', expected one of {Solver.ALL}")
    return predictions + offset, model, (row_index, col_index, offset)


# ------------------------------------------------------------------ grid jobs

@dataclass(frozen=True)
class CellJob:
    cell: GridCell
    settings: RunSettings
    folds: np.ndarray = None
    evaluate_test: bool = False

    def __str__(self):
        return str(self.cell)


def run_cell(data, job):
    """Worker entry point: CV MSE over the folds and/or test MSE after a full refit."""
    start = time.time()
    cell = job.cell
    K_full, G_full = data.kernels(cell.eta, cell.zeta)
    cv_mse = float("nan")
    if job.folds is not None:
        fold_mse = []
        for k in range(int(job.folds.max()) + 1):
            held = np.flatnonzero(job.folds == k)
            kept = np.flatnonzero(job.folds != k)
            validation = data.train.subset(held)
            predictions, _, _ = fit_and_predict(K_full, G_full, data.train.subset(kept), validation.i,
                                                validation.j, cell.rank, cell.lam, job.settings)
            fold_mse.append(evaluate_mse(predictions, validation.z))
        cv_mse = float(np.mean(fold_mse))
    test_mse = float("nan")
    if job.evaluate_test:
        predictions, _, _ = fit_and_predict(K_full, G_full, data.train, data.test.i, data.test.j,
                                            cell.rank, cell.lam, job.settings)
        test_mse = evaluate_mse(predictions, data.test.z)
    return {"cv_mse": cv_mse, "test_mse": test_mse, "wall_time_s": time.time() - start}


def _sweep(data, cells, settings, folds, evaluate_test, workers, progress=True):
    jobs = [CellJob(cell, settings, folds, evaluate_test) for cell in cells]
    pool = WorkerPool(max_workers=workers, progress=progress)
    outcomes = pool.run(run_cell, jobs, shared=data)
    records = []
    for cell, (success, result) in zip(cells, outcomes):
        if success:
            logger.info(f"{cell} completed: cv_mse={result['cv_mse']:.6g} test_mse={result['test_mse']:.6g}")
        else:
            result = {"cv_mse": float("inf"), "test_mse": float("inf") if evaluate_test else float("nan"),
                      "wall_time_s": 0.0}
        record = cell.get_dict()
        record.update(result)
        if not settings.timing:
            record["wall_time_s"] = 0.0
        records.append(record)
    return ResultTable.from_records(records)


def cross_validate(train, row_entities, col_entities, grid, cv, settings=None, workers=1, progress=True):
    """CV MSE for every cell of the grid; failed cells get +inf."""
    settings = settings or RunSettings()
    data = ExperimentData(list(row_entities), list(col_entities), train)
    folds = cv.fold_assignment(train.n)
    table = _sweep(data, grid.cells(), settings, folds, False, workers, progress)
    logger.info(f"cross validation over {len(table)} cells selected row {table.selected}")
    return table


# ------------------------------------------------------------------ reports

def table1_frame(table, pairs=TABLE_PAIRS):
    """Test MSE per rank (rows) and (eta, zeta) pair (columns), lambda chosen by CV per cell."""
    ranks = sorted(set(table.rows["rank"].astype(int)))
    data = {}
    for eta, zeta in pairs:
        column = []
        for rank in ranks:
            row = table.best_for(eta=eta, zeta=zeta, rank=rank)
            column.append(np.nan if row is None else float(table.rows["test_mse"].iat[row]))
        data[f"eta={eta:g},zeta={zeta:g}"] = column
    return pd.DataFrame(data, index=pd.Index(ranks, name="rank"))


def surface_frame(table, select=True):
    """Test MSE over the eta x zeta grid; (rank, lambda) chosen by CV per (eta, zeta) when `select`."""
    etas = sorted(set(table.rows["eta"]))
    zetas = sorted(set(table.rows["zeta"]))
    frame = pd.DataFrame(np.nan, index=pd.Index(etas, name="eta"), columns=zetas)
    for eta in etas:
        for zeta in zetas:
            row = table.best_for(eta=eta, zeta=zeta) if select else _first_row(table, eta, zeta)
            if row is not None:
                frame.loc[eta, zeta] = float(table.rows["test_mse"].iat[row])
    frame.columns = [f"zeta={zeta:g}" for zeta in zetas]
    return frame


def _first_row(table, eta, zeta):
    mask = np.isclose(table.rows["eta"], eta) & np.isclose(table.rows["zeta"], zeta)
    matches = np.flatnonzero(np.asarray(mask))
    return int(matches[0]) if len(matches) else None


def lambda_sweep_frame(table):
    """All lambdas at the CV-selected (rank, eta, zeta)."""
    best = table.best_row()
    mask = (
        np.isclose(table.rows["eta"], best["eta"]) & np.isclose(table.rows["zeta"], best["zeta"])
        & (table.rows["rank"] == best["rank"])
    )
    return table.rows.loc[mask, ["eta", "zeta", "rank", "lambda", "cv_mse", "test_mse"]].reset_index(drop=True)


def corner_check(table):
    """Test MSE at (0.15, 0.15) against the four corners, each at its CV-chosen (rank, lambda)."""
    interior = table.best_for(eta=0.15, zeta=0.15)
    if interior is None:
        return None
    interior_mse = float(table.rows["test_mse"].iat[interior])
    result = {"interior": interior_mse}
    for eta, zeta in CORNER_PAIRS:
        row = table.best_for(eta=eta, zeta=zeta)
        if row is not None:
            result[f"corner({eta:g},{zeta:g})"] = float(table.rows["test_mse"].iat[row])
    return result


def write_manifest(path, manifest):
    with open(path, "w", encoding="utf-8") as f:
        for key, value in manifest.items():
            f.write(f"{key} = {value}\n")
    logger.info(f"wrote run manifest to {path}")


def read_manifest(path):
    manifest = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if " = " in line:
                key, value = line.rstrip("\n").split(" = ", 1)
                manifest[key] = value
    return manifest


def _frame_to_csv(frame, path, index=True):
    frame.to_csv(path, index=index, float_format="%.10g")
    logger.info(f"wrote {path}")


# ------------------------------------------------------------------ protocols

def load_experiment_data(paths, n_users, n_movies, test_fraction, seed):
    """Parse the four files, subsample, split; returns (data, manifest entries)."""
    dataset = load_dataset(paths["ratings"], paths["users"], paths["items"], paths["occupations"])
    sampled = subsample(dataset, n_users, n_movies, seed)
    data_split = split(sampled, test_fraction, seed)
    counts = {f"dataset_{key}": value for key, value in dataset.counts.items()}
    counts.update({f"subsample_{key}": value for key, value in sampled.counts.items()})
    counts.update({"train_ratings": data_split.train.n, "test_ratings": data_split.test.n})
    return ExperimentData.from_split(sampled, data_split), counts


def run_table(data, grid, cv, settings=None, workers=1, output_dir=None, manifest=None, progress=True):
    """Cross-validate every cell, refit on the full training part and score the test pairs.

    Every cell is refit, so the rank x pair table, the eta x zeta surface and the lambda
    sweep are all read off the same ResultTable.
    """
    settings = settings or RunSettings()
    if data.test is None:
        raise ValueError("run_table needs a test part")
    folds = cv.fold_assignment(data.train.n)
    table = _sweep(data, grid.cells(), settings, folds, True, workers, progress)
    selected = table.selected
    unseen = data.unseen_pairs()
    if unseen:
        logger.warning(f"{unseen} of {data.test.n} test pairs involve an entity without training ratings")
    best = table.rows.iloc[selected]
    logger.info(
        f"selected eta={best['eta']:g} zeta={best['zeta']:g} rank={int(best['rank'])} "
        f"lambda={best['lambda']:g}: cv_mse={best['cv_mse']:.6g} test_mse={best['test_mse']:.6g}"
    )
    report_manifest = dict(manifest or {})
    report_manifest.update({
        "grid_etas": list(grid.etas), "grid_zetas": list(grid.zetas),
        "grid_ranks": list(grid.ranks), "grid_lambdas": list(grid.lambdas),
        "folds": cv.folds, "cv_seed": cv.seed,
        **{f"settings_{key}": value for key, value in asdict(settings).items()},
        "train_ratings": data.train.n, "test_ratings": data.test.n,
        "unseen_test_pairs": unseen,
        "selected_row": selected,
        "selected_eta": float(best["eta"]), "selected_zeta": float(best["zeta"]),
        "selected_rank": int(best["rank"]), "selected_lambda": float(best["lambda"]),
        "selected_cv_mse": float(best["cv_mse"]), "selected_test_mse": float(best["test_mse"]),
        "failed_cells": int(np.sum(np.isinf(table.rows["cv_mse"]))),
    })
    report = RunReport(table, selected, unseen, report_manifest)
    if output_dir is not None:
        write_report(report, output_dir)
    return report


def write_report(report, output_dir):
    os.makedirs(output_dir, exist_ok=True)
    files = {
        "results": os.path.join(output_dir, "results.csv"),
        "table1": os.path.join(output_dir, "table1.csv"),
        "surface": os.path.join(output_dir, "surface.csv"),
        "lambda_sweep": os.path.join(output_dir, "lambda_sweep.csv"),
        "manifest": os.path.join(output_dir, "manifest.txt"),
    }
    report.table.save(files["results"])
    _frame_to_csv(table1_frame(report.table), files["table1"])
    _frame_to_csv(surface_frame(report.table), files["surface"])
    _frame_to_csv(lambda_sweep_frame(report.table), files["lambda_sweep"], index=False)
    write_manifest(files["manifest"], report.manifest)
    report.files = files
    return files


def surface(data, rank, lam, etas, zetas, settings=None, workers=1, output_path=None, progress=True):
    """Test MSE over eta x zeta at a fixed (rank, lambda), without cross validation."""
    settings = settings or RunSettings()
    if data.test is None:
        raise ValueError("surface needs a test part")
    grid = GridSpec(etas=tuple(etas), zetas=tuple(zetas), ranks=(int(rank),), lambdas=(float(lam),))
    table = _sweep(data, grid.cells(), settings, None, True, workers, progress)
    frame = surface_frame(table, select=False)
    if output_path is not None:
        _frame_to_csv(frame, output_path)
    return frame, table


def fit_single(data, eta, zeta, rank, lam, settings=None, solver=Solver.FIXED_RANK, mu=0.0):
    """One cell on the full training part; returns (model record, test MSE or None)."""
    settings = settings or RunSettings()
    K_full, G_full = data.kernels(eta, zeta)
    query = data.test if data.test is not None else data.train
    predictions, model, (row_index, col_index, offset) = fit_and_predict(
        K_full, G_full, data.train, query.i, query.j, rank, lam, settings, solver, mu
    )
    test_mse = evaluate_mse(predictions, query.z) if data.test is not None else None
    logger.info(f"{solver} fit eta={eta:g} zeta={zeta:g} rank={rank} lambda={lam:g}: test_mse={test_mse}")
    saved = None
    if solver == Solver.FIXED_RANK:
        saved = SavedModel(
            model=model, eta=float(eta), zeta=float(zeta), lam=float(lam), offset=offset,
            row_entities=[data.row_entities[k] for k in row_index],
            col_entities=[data.col_entities[k] for k in col_index],
        )
    return saved, test_mse


# ------------------------------------------------------------------ persistence

@dataclass
class SavedModel:
    model: FactorModel
    eta: float
    zeta: float
    lam: float
    offset: float
    row_entities: list
    col_entities: list

    def predict(self, query_rows, query_cols, query_i, query_j):
        """Predictions at pairs over new entity lists, through cross kernels."""
        K_cross = build_cross_kernel(KernelSpec.interpolated(self.eta), self.row_entities, query_rows)
        G_cross = build_cross_kernel(KernelSpec.interpolated(self.zeta), self.col_entities, query_cols)
        return solver_fixed_rank.predict_pairs(self.model, K_cross, G_cross, query_i, query_j) + self.offset


def save_model(saved, path):
    np.savez(
        path,
        alpha=saved.model.alpha, beta=saved.model.beta,
        hyper=np.array([saved.eta, saved.zeta, saved.lam, saved.offset]),
        row_ids=np.array([entity_id for entity_id, _ in saved.row_entities]),
        row_features=np.vstack([features for _, features in saved.row_entities]),
        col_ids=np.array([entity_id for entity_id, _ in saved.col_entities]),
        col_features=np.vstack([features for _, features in saved.col_entities]),
    )
    logger.info(f"saved rank-{saved.model.p} model to {path}")


def load_model(path):
    with np.load(path, allow_pickle=False) as archive:
        eta, zeta, lam, offset = (float(value) for value in archive["hyper"])
        return SavedModel(
            model=FactorModel(archive["alpha"], archive["beta"]),
            eta=eta, zeta=zeta, lam=lam, offset=offset,
            row_entities=list(zip(archive["row_ids"].tolist(), archive["row_features"])),
            col_entities=list(zip(archive["col_ids"].tolist(), archive["col_features"])),
        )


def evaluate_model(saved, dataset):
    """MSE of a saved model on every rating of `dataset`; also returns the unseen-pair count."""
    if not dataset.ratings:
        raise ValueError("evaluate_model needs at least one rating")
    rows = user_entities(dataset)
    cols = movie_entities(dataset)
    row_index = {entity_id: k for k, (entity_id, _) in enumerate(rows)}
    col_index = {entity_id: k for k, (entity_id, _) in enumerate(cols)}
    query_i = np.array([row_index[r.user_id] for r in dataset.ratings], dtype=int)
    query_j = np.array([col_index[r.item_id] for r in dataset.ratings], dtype=int)
    targets = np.array([r.rating for r in dataset.ratings], dtype=float)
    predictions = saved.predict(rows, cols, query_i, query_j)
    known_rows = {entity_id for entity_id, _ in saved.row_entities}
    known_cols = {entity_id for entity_id, _ in saved.col_entities}
    unseen = sum(1 for r in dataset.ratings if r.user_id not in known_rows or r.item_id not in known_cols)
    mse = evaluate_mse(predictions, targets)
    logger.info(f"evaluated saved model on {len(targets)} ratings: mse={mse:.6g}, unseen pairs={unseen}")
    return mse, unseen
