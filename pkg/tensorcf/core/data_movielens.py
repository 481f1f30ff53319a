"""
MovieLens-100k style inputs: parsing, attribute features, subsampling and splits.

File formats (Latin-1 tolerated):
    ratings      user \t item \t rating \t timestamp
    users        id|age|gender|occupation|zip
    items        id|title|release date|video date|URL|19 genre flags
    occupations  one token per line
"""

from dataclasses import dataclass

import numpy as np

from tensorcf.core.solver_fixed_rank import ObservationSet
from tensorcf.utils import Log, ParseError

logger = Log(__name__)

N_GENRES = 19
GENDERS = ("M", "F")
AGE_SCALE = 50.0
ENCODING = "latin-1"
SNAPSHOT_MAGIC = "# tensorcf dataset snapshot v1"


@dataclass(frozen=True)
class RatingRecord:
    user_id: int
    item_id: int
    rating: int
    timestamp: int


@dataclass(frozen=True)
class UserAttributes:
    user_id: int
    age: int
    gender: str
    occupation: str
    zip: str


@dataclass(frozen=True)
class MovieAttributes:
    item_id: int
    title: str
    genres: tuple


@dataclass(frozen=True)
class Dataset:
    users: tuple
    movies: tuple
    ratings: tuple
    occupations: tuple

    @property
    def counts(self):
        return {"users": len(self.users), "movies": len(self.movies),
                "ratings": len(self.ratings), "occupations": len(self.occupations)}


@dataclass(frozen=True)
class Split:
    train: ObservationSet
    test: ObservationSet
    seed: int

    @property
    def row_ids(self):
        return self.train.rows

    @property
    def col_ids(self):
        return self.train.cols


# ------------------------------------------------------------------ parsing

def _read_lines(path):
    with open(path, "r", encoding=ENCODING) as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield line_number, line


def _unsigned(path, line_number, token, what):
    token = token.strip()
    if not token.isdigit():
        raise ParseError(path, line_number, f"{what} '{token}' is not an unsigned integer")
    return int(token)


def parse_ratings(path):
    records = []
    for line_number, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(path, line_number, f"expected 4 tab-separated fields, got {len(fields)}")
        user_id, item_id, rating, timestamp = (
            _unsigned(path, line_number, token, what)
            for token, what in zip(fields, ("user id", "item id", "rating", "timestamp"))
        )
        if not 1 <= rating <= 5:
            raise ParseError(path, line_number, f"rating {rating} outside [1, 5]")
        records.append(RatingRecord(user_id, item_id, rating, timestamp))
    logger.info(f"parsed {len(records)} ratings from {path}")
    return records


def parse_occupations(path):
    occupations = [line.strip() for _, line in _read_lines(path)]
    if len(set(occupations)) != len(occupations):
        raise ValueError(f"Duplicate occupation tokens in {path}")
    return occupations


def parse_users(path, occupations):
    vocabulary = set(occupations)
    records = []
    for line_number, line in _read_lines(path):
        fields = line.split("|")
        if len(fields) != 5:
            raise ParseError(path, line_number, f"expected 5 pipe-separated fields, got {len(fields)}")
        user_id = _unsigned(path, line_number, fields[0], "user id")
        age = _unsigned(path, line_number, fields[1], "age")
        if age <= 0:
            raise ParseError(path, line_number, f"age must be positive, got {age}")
        gender = fields[2].strip()
        if gender not in GENDERS:
            raise ParseError(path, line_number, f"unknown gender '{gender}'")
        occupation = fields[3].strip()
        if occupation not in vocabulary:
            raise ParseError(path, line_number, f"unknown occupation token '{occupation}'")
        records.append(UserAttributes(user_id, age, gender, occupation, fields[4].strip()))
    logger.info(f"parsed {len(records)} users from {path}")
    return records


def parse_items(path):
    records = []
    for line_number, line in _read_lines(path):
        fields = line.split("|")
        if len(fields) < 5 + N_GENRES:
            raise ParseError(path, line_number, f"expected at least {5 + N_GENRES} pipe-separated fields, got {len(fields)}")
        item_id = _unsigned(path, line_number, fields[0], "item id")
        flags = fields[-N_GENRES:]
        if any(flag.strip() not in ("0", "1") for flag in flags):
            raise ParseError(path, line_number, f"genre flags must be 0 or 1, got {flags}")
        genres = tuple(int(flag) for flag in flags)
        title = "|".join(fields[1:len(fields) - N_GENRES - 3])
        if not any(genres):
            logger.warning(f"{path}:{line_number}: movie {item_id} has no genre flag set")
        records.append(MovieAttributes(item_id, title, genres))
    logger.info(f"parsed {len(records)} movies from {path}")
    return records


def make_dataset(users, movies, ratings, occupations):
    """Validate references and keep the last occurrence of duplicate (user, movie) ratings."""
    user_ids = {u.user_id for u in users}
    movie_ids = {m.item_id for m in movies}
    if len(user_ids) != len(users):
        raise ValueError("Duplicate user ids")
    if len(movie_ids) != len(movies):
        raise ValueError("Duplicate movie ids")
    latest = {}
    for record in ratings:
        if record.user_id not in user_ids:
            raise ValueError(f"Rating references unknown user {record.user_id}")
        if record.item_id not in movie_ids:
            raise ValueError(f"Rating references unknown movie {record.item_id}")
        key = (record.user_id, record.item_id)
        if key in latest:
            logger.warning(f"duplicate rating for user {key[0]}, movie {key[1]}; keeping the last one")
            del latest[key]
        latest[key] = record
    return Dataset(tuple(users), tuple(movies), tuple(latest.values()), tuple(occupations))


def load_dataset(ratings_path, users_path, items_path, occupations_path):
    occupations = parse_occupations(occupations_path)
    return make_dataset(
        parse_users(users_path, occupations), parse_items(items_path), parse_ratings(ratings_path), occupations
    )


# ------------------------------------------------------------------ features

def featurize_user(user, occupations):
    """[age / 50, one-hot gender (M, F), one-hot occupation]."""
    vector = np.zeros(1 + len(GENDERS) + len(occupations))
    vector[0] = user.age / AGE_SCALE
    vector[1 + GENDERS.index(user.gender)] = 1.0
    vector[1 + len(GENDERS) + list(occupations).index(user.occupation)] = 1.0
    return vector


def featurize_movie(movie):
    vector = np.asarray(movie.genres, dtype=float)
    if not vector.any():
        return np.full(N_GENRES, 1.0 / N_GENRES)
    return vector


def user_entities(dataset):
    return [(u.user_id, featurize_user(u, dataset.occupations)) for u in dataset.users]


def movie_entities(dataset):
    return [(m.item_id, featurize_movie(m)) for m in dataset.movies]


# ------------------------------------------------------------------ sampling

def subsample(dataset, n_users, n_movies, seed):
    if n_users > len(dataset.users) or n_movies > len(dataset.movies):
        raise ValueError(
            f"Cannot subsample {n_users} users / {n_movies} movies from "
            f"{len(dataset.users)} / {len(dataset.movies)}"
        )
    if n_users < 1 or n_movies < 1:
        raise ValueError("Subsample sizes must be positive")
    rng = np.random.default_rng(seed)
    user_keep = np.sort(rng.choice(len(dataset.users), size=n_users, replace=False))
    movie_keep = np.sort(rng.choice(len(dataset.movies), size=n_movies, replace=False))
    users = tuple(dataset.users[k] for k in user_keep)
    movies = tuple(dataset.movies[k] for k in movie_keep)
    user_ids = {u.user_id for u in users}
    movie_ids = {m.item_id for m in movies}
    ratings = tuple(r for r in dataset.ratings if r.user_id in user_ids and r.item_id in movie_ids)
    logger.info(f"subsample seed={seed}: {n_users} users, {n_movies} movies, {len(ratings)} ratings")
    return Dataset(users, movies, ratings, dataset.occupations)


def split(dataset, test_fraction, seed):
    """Uniform random train/test partition of the ratings, indexed over the dataset's entities."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset.ratings)
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"test_fraction {test_fraction} leaves an empty part of {n} ratings")
    rows = tuple(u.user_id for u in dataset.users)
    cols = tuple(m.item_id for m in dataset.movies)
    row_index = {user_id: k for k, user_id in enumerate(rows)}
    col_index = {item_id: k for k, item_id in enumerate(cols)}
    i = np.array([row_index[r.user_id] for r in dataset.ratings], dtype=int)
    j = np.array([col_index[r.item_id] for r in dataset.ratings], dtype=int)
    z = np.array([r.rating for r in dataset.ratings], dtype=float)
    order = np.random.default_rng(seed).permutation(n)
    test_part, train_part = np.sort(order[:n_test]), np.sort(order[n_test:])
    train = ObservationSet(rows, cols, i[train_part], j[train_part], z[train_part])
    test = ObservationSet(rows, cols, i[test_part], j[test_part], z[test_part])
    logger.info(f"split seed={seed}: {train.n} training and {test.n} test ratings")
    return Split(train, test, seed)


# ------------------------------------------------------------------ snapshots

def write_snapshot(dataset, path):
    """Single text file: a header with counts, then one section per record type."""
    lines = [SNAPSHOT_MAGIC]
    lines.append(" ".join(f"{key}={value}" for key, value in dataset.counts.items()))
    lines.append("[occupations]")
    lines.extend(dataset.occupations)
    lines.append("[users]")
    lines.extend(f"{u.user_id}|{u.age}|{u.gender}|{u.occupation}|{u.zip}" for u in dataset.users)
    lines.append("[movies]")
    lines.extend(f"{m.item_id}|{''.join(str(g) for g in m.genres)}|{m.title}" for m in dataset.movies)
    lines.append("[ratings]")
    lines.extend(f"{r.user_id}\t{r.item_id}\t{r.rating}\t{r.timestamp}" for r in dataset.ratings)
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"wrote dataset snapshot to {path}")


def read_snapshot(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    if not lines or lines[0] != SNAPSHOT_MAGIC:
        raise ParseError(path, 1, "not a tensorcf dataset snapshot")
    try:
        counts = {key: int(value) for key, value in (item.split("=") for item in lines[1].split())}
    except ValueError as e:
        raise ParseError(path, 2, f"malformed header: {lines[1]!r}") from e
    sections = {}
    current = None
    for line_number, line in enumerate(lines[2:], start=3):
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif line and current is not None:
            sections[current].append((line_number, line))
    for name in ("occupations", "users", "movies", "ratings"):
        found = len(sections.get(name, []))
        if found != counts.get(name):
            raise ParseError(path, 2, f"header announces {counts.get(name)} {name}, found {found}")

    occupations = [line for _, line in sections["occupations"]]
    users = []
    for line_number, line in sections["users"]:
        user_id, age, gender, occupation, zip_code = line.split("|")
        users.append(UserAttributes(int(user_id), int(age), gender, occupation, zip_code))
    movies = []
    for line_number, line in sections["movies"]:
        item_id, flags, title = line.split("|", 2)
        if len(flags) != N_GENRES:
            raise ParseError(path, line_number, f"expected {N_GENRES} genre flags, got {flags!r}")
        movies.append(MovieAttributes(int(item_id), title, tuple(int(flag) for flag in flags)))
    ratings = []
    for line_number, line in sections["ratings"]:
        user_id, item_id, rating, timestamp = (int(token) for token in line.split("\t"))
        ratings.append(RatingRecord(user_id, item_id, rating, timestamp))
    return Dataset(tuple(users), tuple(movies), tuple(ratings), tuple(occupations))
