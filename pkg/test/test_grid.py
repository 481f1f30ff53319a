import numpy as np
import pytest

from tensorcf.core.grid import CVConfig, GridCell, GridSpec, ResultTable


def record(eta, zeta, rank, lam, cv_mse, test_mse=1.0):
    return {"eta": eta, "zeta": zeta, "rank": rank, "lambda": lam, "cv_mse": cv_mse, "test_mse": test_mse,
            "wall_time_s": 0.0}


def test_grid_cells_cover_product():
    grid = GridSpec(etas=(0.0, 1.0), zetas=(0.5,), ranks=(1, 2, 3), lambdas=(1e-3, 1e-2))
    cells = grid.cells()
    assert len(cells) == len(grid) == 12
    assert [cell.index for cell in cells] == list(range(12))
    assert len({(c.eta, c.zeta, c.rank, c.lam) for c in cells}) == 12
    assert cells[0] == GridCell(0, 0.0, 0.5, 1, 1e-3)
    assert cells[0].get_dict() == {"eta": 0.0, "zeta": 0.5, "rank": 1, "lambda": 1e-3}


@pytest.mark.parametrize("kwargs", [
    {"etas": ()},
    {"zetas": (1.2,)},
    {"ranks": (0,)},
    {"lambdas": (0.0,)},
    {"lambdas": (-1e-3,)},
])
def test_grid_validation(kwargs):
    with pytest.raises(ValueError):
        GridSpec(**kwargs)


def test_default_grid_is_the_full_experiment():
    grid = GridSpec()
    assert 0.15 in grid.etas and 0.15 in grid.zetas
    assert len(grid) == len(grid.etas) * len(grid.zetas) * len(grid.ranks) * len(grid.lambdas)


def test_fold_assignment_is_balanced_and_seeded():
    cv = CVConfig(folds=5, seed=3)
    folds = cv.fold_assignment(23)
    counts = np.bincount(folds, minlength=5)
    assert counts.sum() == 23
    assert counts.max() - counts.min() <= 1
    np.testing.assert_array_equal(folds, CVConfig(folds=5, seed=3).fold_assignment(23))
    assert not np.array_equal(folds, CVConfig(folds=5, seed=4).fold_assignment(23))


def test_fold_assignment_errors():
    with pytest.raises(ValueError):
        CVConfig(folds=1)
    with pytest.raises(ValueError):
        CVConfig(folds=5).fold_assignment(3)


def test_selected_prefers_lowest_cv():
    table = ResultTable.from_records([record(0, 0, 10, 1e-3, 0.9), record(0, 0, 20, 1e-3, 0.8),
                                      record(0, 0, 30, 1e-3, 0.85)])
    assert table.selected == 1
    assert table.best_row()["rank"] == 20


def test_tie_break_smaller_rank_then_larger_lambda():
    table = ResultTable.from_records([record(0, 0, 20, 1e-3, 0.8), record(0, 0, 10, 1e-3, 0.8),
                                      record(0, 0, 10, 1e-2, 0.8)])
    assert table.selected == 2
    same = ResultTable.from_records([record(0, 0, 10, 1e-2, 0.8), record(1, 1, 10, 1e-2, 0.8)])
    assert same.selected == 0


def test_single_cell_and_failed_cells():
    assert ResultTable.from_records([record(0, 0, 1, 1e-3, 2.0)]).selected == 0
    table = ResultTable.from_records([record(0, 0, 1, 1e-3, np.inf), record(0, 0, 2, 1e-3, 5.0)])
    assert table.selected == 1
    with pytest.raises(ValueError):
        ResultTable().selected


def test_best_for_filters_rows():
    table = ResultTable.from_records([
        record(0.15, 0.15, 10, 1e-3, 0.9), record(0.15, 0.15, 10, 1e-2, 0.7),
        record(1.0, 1.0, 10, 1e-3, 0.5), record(0.15, 0.15, 20, 1e-3, 0.6),
    ])
    assert table.best_for(eta=0.15, zeta=0.15) == 3
    assert table.best_for(eta=0.15, zeta=0.15, rank=10) == 1
    assert table.best_for(lam=1e-3) == 2
    assert table.best_for(eta=0.5) is None


@pytest.mark.parametrize("suffix", [".csv", ".json", ".xlsx"])
def test_save_and_load(tmp_path, suffix):
    table = ResultTable.from_records([record(0.15, 0.85, 30, 1e-4, 0.91, 0.95), record(1.0, 0.0, 10, 1e-2, 1.2)])
    table.set_test_mse(1, 1.25)
    path = str(tmp_path / f"results{suffix}")
    table.save(path)
    loaded = ResultTable.load(path)
    assert len(loaded) == 2
    assert loaded.rows["rank"].tolist() == [30, 10]
    np.testing.assert_allclose(loaded.rows["test_mse"], [0.95, 1.25])
    np.testing.assert_allclose(loaded.rows["lambda"], [1e-4, 1e-2])


def test_save_rejects_unknown_extension(tmp_path):
    with pytest.raises(ValueError):
        ResultTable.from_records([record(0, 0, 1, 1e-3, 1.0)]).save(str(tmp_path / "results.txt"))
