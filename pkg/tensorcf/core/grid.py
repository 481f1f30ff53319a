import itertools
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from tensorcf.config import DEFAULT_EXPERIMENT
from tensorcf.utils import Log

logger = Log(__name__)

RESULT_COLUMNS = ["eta", "zeta", "rank", "lambda", "cv_mse", "test_mse", "wall_time_s"]

# (eta, zeta) columns of the rank x pair comparison table
TABLE_PAIRS = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (0.5, 0.5), (0.15, 0.15)]
CORNER_PAIRS = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]


class CellStatus:
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


@dataclass(frozen=True)
class GridCell:
    index: int
    eta: float
    zeta: float
    rank: int
    lam: float

    def __str__(self) -> str:
        return f"Cell:{self.index}(eta={self.eta:g}, zeta={self.zeta:g}, d={self.rank}, lambda={self.lam:g})"

    def get_dict(self) -> dict:
        return {"eta": self.eta, "zeta": self.zeta, "rank": self.rank, "lambda": self.lam}


@dataclass(frozen=True)
class GridSpec:
    etas: tuple = tuple(DEFAULT_EXPERIMENT["etas"])
    zetas: tuple = tuple(DEFAULT_EXPERIMENT["zetas"])
    ranks: tuple = tuple(DEFAULT_EXPERIMENT["ranks"])
    lambdas: tuple = tuple(DEFAULT_EXPERIMENT["lambdas"])

    def __post_init__(self):
        for name in ("etas", "zetas", "ranks", "lambdas"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"Grid list '{name}' is empty")
            object.__setattr__(self, name, values)
        for name in ("etas", "zetas"):
            if any(not 0.0 <= w <= 1.0 for w in getattr(self, name)):
                raise ValueError(f"Grid list '{name}' must lie in [0, 1]: {getattr(self, name)}")
        if any(int(d) < 1 for d in self.ranks):
            raise ValueError(f"Ranks must be positive integers: {self.ranks}")
        if any(not lam > 0 for lam in self.lambdas):
            raise ValueError(f"Lambdas must be positive: {self.lambdas}")

    def cells(self):
        product = itertools.product(self.etas, self.zetas, self.ranks, self.lambdas)
        return [GridCell(k, float(eta), float(zeta), int(d), float(lam))
                for k, (eta, zeta, d, lam) in enumerate(product)]

    def __len__(self):
        return len(self.etas) * len(self.zetas) * len(self.ranks) * len(self.lambdas)


@dataclass(frozen=True)
class CVConfig:
    folds: int = DEFAULT_EXPERIMENT["folds"]
    seed: int = DEFAULT_EXPERIMENT["seed"]

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"Cross validation needs at least 2 folds, got {self.folds}")

    def fold_assignment(self, n):
        """Fold id per observation: a seeded permutation dealt round-robin."""
        if self.folds > n:
            raise ValueError(f"{self.folds} folds for only {n} training observations")
        assignment = np.empty(n, dtype=int)
        assignment[np.random.default_rng(self.seed).permutation(n)] = np.arange(n) % self.folds
        return assignment


@dataclass
class ResultTable:
    rows: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=RESULT_COLUMNS))

    @classmethod
    def from_records(cls, records):
        frame = pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)
        frame = frame.astype({"eta": float, "zeta": float, "rank": int, "lambda": float,
                              "cv_mse": float, "test_mse": float, "wall_time_s": float})
        return cls(frame.reset_index(drop=True))

    def __len__(self):
        return len(self.rows)

    @property
    def selected(self):
        """Index of the CV-best row: smallest cv_mse, then smaller rank, then larger lambda, then row order."""
        if len(self.rows) == 0:
            raise ValueError("Empty result table has no selected row")
        cv = self.rows["cv_mse"].fillna(np.inf).to_numpy()
        keys = sorted(range(len(self.rows)),
                      key=lambda k: (cv[k], int(self.rows["rank"].iat[k]), -float(self.rows["lambda"].iat[k]), k))
        return keys[0]

    def best_row(self):
        return self.rows.iloc[self.selected]

    def best_for(self, **fixed):
        """Selected row among rows matching the given column values (e.g. eta=0.15, rank=130)."""
        mask = np.ones(len(self.rows), dtype=bool)
        for column, value in fixed.items():
            column = "lambda" if column == "lam" else column
            mask &= np.isclose(self.rows[column].to_numpy(dtype=float), value)
        if not mask.any():
            return None
        sub = ResultTable(self.rows[mask].reset_index(drop=False).rename(columns={"index": "row"}))
        return int(sub.rows["row"].iat[sub.selected])

    def set_test_mse(self, row, value):
        self.rows.loc[row, "test_mse"] = value

    def save(self, path):
        frame = self.rows[RESULT_COLUMNS]
        if path.endswith(".xlsx"):
            frame.to_excel(path, index=False)
        elif path.endswith(".csv"):
            frame.to_csv(path, index=False, float_format="%.10g")
        elif path.endswith(".json"):
            frame.to_json(path, orient="records", force_ascii=False, indent=4)
        else:
            raise ValueError("Invalid file extension. Please use .xlsx, .csv, or .json.")
        logger.info(f"saved result table with {len(frame)} rows to {path}")

    @classmethod
    def load(cls, path):
        if path.endswith(".xlsx"):
            frame = pd.read_excel(path)
        elif path.endswith(".csv"):
            frame = pd.read_csv(path)
        elif path.endswith(".json"):
            frame = pd.read_json(path)
        else:
            raise ValueError("Invalid file extension. Please use .xlsx, .csv, or .json.")
        return cls.from_records(frame[RESULT_COLUMNS].to_dict("records"))
