import os

import numpy as np
import pytest
from hypothesis import settings

from tensorcf.config import config

np.seterr(all="warn")

settings.register_profile("tensorcf", database=None, max_examples=25, deadline=None, derandomize=True)
settings.load_profile("tensorcf")

MOVIELENS_FILES = {"ratings": "u.data", "users": "u.user", "items": "u.item", "occupations": "u.occupation"}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the MovieLens reproduction tests")
    parser.addoption("--movielens", action="store", default="data/ml-100k", help="directory of the MovieLens-100k files")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def log_dir(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "LOG_DIR", str(tmp_path / "log"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def movielens_paths(pytestconfig):
    directory = pytestconfig.getoption("--movielens")
    paths = {key: os.path.join(directory, name) for key, name in MOVIELENS_FILES.items()}
    missing = [path for path in paths.values() if not os.path.exists(path)]
    if missing:
        pytest.skip(f"MovieLens-100k files not found: {missing}")
    return paths


OCCUPATIONS = ["administrator", "artist", "doctor", "educator", "engineer", "entertainment", "executive",
               "healthcare", "homemaker", "lawyer", "librarian", "marketing", "none", "other", "programmer",
               "retired", "salesman", "scientist", "student", "technician", "writer"]


def genre_flags(*on):
    return "|".join("1" if k in on else "0" for k in range(19))


def write_movielens(directory, ratings=None, users=None, items=None):
    """Tiny MovieLens-format files under `directory`; returns the four paths."""
    users = users if users is not None else [
        "1|24|M|technician|85711", "2|53|F|other|94043", "3|23|M|writer|32067", "4|24|M|technician|43537",
    ]
    items = items if items is not None else [
        f"1|Toy Story (1995)|01-Jan-1995||http://x|{genre_flags(3, 4, 5)}",
        f"2|GoldenEye (1995)|01-Jan-1995||http://x|{genre_flags(1, 2, 16)}",
        f"3|Four Rooms (1995)|01-Jan-1995||http://x|{genre_flags(16)}",
        f"4|Get Shorty (1995)|01-Jan-1995||http://x|{genre_flags(1, 5, 8)}",
        f"5|Copycat (1995)|01-Jan-1995||http://x|{genre_flags(6, 8, 16)}",
    ]
    ratings = ratings if ratings is not None else [
        "1\t1\t5\t874965758", "1\t2\t3\t876893171", "2\t1\t4\t878542960", "2\t3\t2\t876893119",
        "3\t4\t1\t889751712", "3\t5\t5\t875071561", "4\t2\t4\t875072484", "4\t3\t3\t878543541",
        "1\t4\t2\t888550871", "2\t5\t1\t879138235",
    ]
    paths = {key: directory / name for key, name in MOVIELENS_FILES.items()}
    for key, lines in (("ratings", ratings), ("users", users), ("items", items), ("occupations", OCCUPATIONS)):
        paths[key].write_text("\n".join(lines) + "\n", encoding="latin-1")
    return {key: str(path) for key, path in paths.items()}


@pytest.fixture
def movielens_files(tmp_path):
    """Factory for tiny MovieLens-format inputs in a fresh directory."""
    def make(name="data", **overrides):
        directory = tmp_path / name
        directory.mkdir(exist_ok=True)
        return write_movielens(directory, **overrides)
    return make
