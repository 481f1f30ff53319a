"""
Kernels over users and items, and the Kronecker/vec algebra of product kernels.

Three kernel kinds are supported: the Dirac kernel on entity ids, the
cosine-normalized linear attribute kernel, and their convex combination
``eta * attribute + (1 - eta) * dirac``. All three have unit diagonal, so the
interpolation weight only trades identity against attribute information.

Pair ordering follows column stacking: for an ``n_x x n_y`` grid the pair
``(i, j)`` has index ``j * n_x + i`` and ``vec(K @ gamma @ G) = kron(G, K) @ vec(gamma)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from tensorcf.utils import KernelError, Log

logger = Log(__name__)

SYMMETRY_TOL = 1e-12
DIAGONAL_TOL = 1e-12
PSD_RTOL = 1e-8


class KernelKind:
    DIRAC = "dirac"
    ATTRIBUTE = "attribute"
    INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    weight: float = None

    def __post_init__(self):
        if self.kind not in (KernelKind.DIRAC, KernelKind.ATTRIBUTE, KernelKind.INTERPOLATED):
            raise ValueError(f"Unknown kernel kind: {self.kind}")
        if self.kind == KernelKind.INTERPOLATED:
            if self.weight is None or not 0.0 <= self.weight <= 1.0:
                raise ValueError(f"Interpolation weight must lie in [0, 1], got {self.weight}")
        elif self.weight is not None:
            raise ValueError(f"Kernel kind '{self.kind}' takes no weight")

    @classmethod
    def dirac(cls):
        return cls(KernelKind.DIRAC)

    @classmethod
    def attribute(cls):
        return cls(KernelKind.ATTRIBUTE)

    @classmethod
    def interpolated(cls, weight):
        return cls(KernelKind.INTERPOLATED, float(weight))

    @property
    def attribute_weight(self):
        if self.kind == KernelKind.DIRAC:
            return 0.0
        if self.kind == KernelKind.ATTRIBUTE:
            return 1.0
        return self.weight

    def __str__(self):
        if self.kind == KernelKind.INTERPOLATED:
            return f"interpolated({self.weight:g})"
        return self.kind


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric PSD Gram matrix over an ordered set of distinct entities."""
    entries: np.ndarray
    entity_ids: tuple = field(default=None)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise KernelError(f"Kernel matrix must be square, got shape {entries.shape}")
        ids = tuple(range(entries.shape[0])) if self.entity_ids is None else tuple(self.entity_ids)
        if len(ids) != entries.shape[0]:
            raise KernelError(f"{len(ids)} entity ids for a {entries.shape[0]}x{entries.shape[0]} kernel matrix")
        _check_distinct(ids)
        object.__setattr__(self, "entity_ids", ids)
        check_kernel_matrix(entries)

    @property
    def size(self):
        return self.entries.shape[0]

    def restrict(self, indices):
        """Gram matrix over the entities at `indices`, in that order."""
        indices = np.asarray(indices, dtype=int)
        return KernelMatrix(self.entries[np.ix_(indices, indices)], [self.entity_ids[i] for i in indices])

    def cross(self, train_indices, query_indices=None):
        """Rectangular block k(train_l, query_q) of this Gram matrix."""
        train_indices = np.asarray(train_indices, dtype=int)
        if query_indices is None:
            return self.entries[train_indices, :]
        return self.entries[np.ix_(train_indices, np.asarray(query_indices, dtype=int))]


def as_matrix(kernel):
    """Accept a KernelMatrix or a plain array."""
    if isinstance(kernel, KernelMatrix):
        return kernel.entries
    return np.asarray(kernel, dtype=float)


def check_kernel_matrix(entries, unit_diagonal=False):
    entries = np.asarray(entries, dtype=float)
    if not np.all(np.isfinite(entries)):
        raise KernelError("Kernel matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(entries)))) if entries.size else 1.0
    asymmetry = float(np.max(np.abs(entries - entries.T))) if entries.size else 0.0
    if asymmetry > SYMMETRY_TOL * scale:
        raise KernelError(f"Kernel matrix is not symmetric (max asymmetry {asymmetry:.3e})")
    if unit_diagonal:
        check_unit_diagonal(entries)
    if entries.size:
        eigenvalues = linalg.eigvalsh(entries)
        if eigenvalues[0] < -PSD_RTOL * max(eigenvalues[-1], 0.0) - 1e-300:
            raise KernelError(
                f"Kernel matrix is not positive semidefinite "
                f"(min eigenvalue {eigenvalues[0]:.3e}, max {eigenvalues[-1]:.3e})"
            )
    return entries


def check_unit_diagonal(entries):
    if entries.size:
        deviation = float(np.max(np.abs(np.diag(entries) - 1.0)))
        if deviation > DIAGONAL_TOL:
            raise KernelError(f"Kernel matrix diagonal deviates from 1 by {deviation:.3e}")


def _check_distinct(ids):
    if len(set(ids)) != len(ids):
        seen, duplicates = set(), []
        for entity_id in ids:
            if entity_id in seen:
                duplicates.append(entity_id)
            seen.add(entity_id)
        raise KernelError(f"Duplicate entity ids: {duplicates[:10]}")


def _feature_array(features):
    vector = np.asarray(features, dtype=float)
    if vector.ndim != 1:
        raise ValueError(f"Feature vector must be one-dimensional, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise ValueError("Feature vector has non-finite entries")
    return vector


# ----------------------------------------------------------- pointwise kernels

def dirac_kernel(id_a, id_b):
    return 1.0 if id_a == id_b else 0.0


def attribute_kernel(a, b):
    a = _feature_array(a)
    b = _feature_array(b)
    if a.shape != b.shape:
        raise ValueError(f"Feature dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("Attribute kernel is undefined for a zero-norm feature vector")
    value = float(np.dot(a, b) / (norm_a * norm_b))
    return min(1.0, max(-1.0, value))


def interpolated_kernel(spec, id_a, a, id_b, b):
    if spec.kind != KernelKind.INTERPOLATED:
        raise ValueError(f"interpolated_kernel needs an interpolated spec, got {spec}")
    eta = spec.weight
    if eta == 0.0:
        return dirac_kernel(id_a, id_b)
    return eta * attribute_kernel(a, b) + (1.0 - eta) * dirac_kernel(id_a, id_b)


def kernel_value(spec, id_a, a, id_b, b):
    if spec.kind == KernelKind.DIRAC:
        return dirac_kernel(id_a, id_b)
    if spec.kind == KernelKind.ATTRIBUTE:
        return attribute_kernel(a, b)
    return interpolated_kernel(spec, id_a, a, id_b, b)


# ------------------------------------------------------------ Gram matrices

def _normalized_rows(entities):
    features = np.vstack([_feature_array(vector) for _, vector in entities])
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0.0):
        zero_ids = [entity_id for (entity_id, _), norm in zip(entities, norms) if norm == 0.0]
        raise ValueError(f"Zero-norm feature vectors for entities {zero_ids[:10]}")
    return features / norms[:, None]


def attribute_matrix(entities):
    """Cosine Gram matrix of the entity features, exactly symmetric with unit diagonal."""
    rows = _normalized_rows(entities)
    gram = rows @ rows.T
    gram = 0.5 * (gram + gram.T)
    np.fill_diagonal(gram, 1.0)
    return np.clip(gram, -1.0, 1.0)


def interpolate(weight, attribute, identity):
    return weight * attribute + (1.0 - weight) * identity


def build_kernel_matrix(spec, entities):
    """Gram matrix of `spec` over `entities`, a list of (id, feature vector)."""
    entities = list(entities)
    ids = [entity_id for entity_id, _ in entities]
    _check_distinct(ids)
    n = len(ids)
    identity = np.eye(n)
    # a zero attribute weight never touches the features
    if spec.attribute_weight == 0.0:
        entries = identity
    elif spec.kind == KernelKind.ATTRIBUTE:
        entries = attribute_matrix(entities)
    else:
        entries = interpolate(spec.weight, attribute_matrix(entities), identity)
    check_unit_diagonal(entries)
    logger.debug(f"built {spec} kernel matrix over {n} entities")
    return KernelMatrix(entries, ids)


def build_cross_kernel(spec, train_entities, query_entities):
    """Matrix with entry [l, q] = k(train_l, query_q)."""
    train_entities = list(train_entities)
    query_entities = list(query_entities)
    train_ids = [entity_id for entity_id, _ in train_entities]
    _check_distinct(train_ids)
    query_ids = [entity_id for entity_id, _ in query_entities]
    dirac = np.equal.outer(np.asarray(train_ids, dtype=object), np.asarray(query_ids, dtype=object)).astype(float)
    if spec.attribute_weight == 0.0:
        return dirac
    train_rows = _normalized_rows(train_entities)
    query_rows = _normalized_rows(query_entities)
    if train_rows.shape[1] != query_rows.shape[1]:
        raise ValueError(f"Feature dimension mismatch: {train_rows.shape[1]} vs {query_rows.shape[1]}")
    attribute = np.clip(train_rows @ query_rows.T, -1.0, 1.0)
    if spec.kind == KernelKind.ATTRIBUTE:
        return attribute
    return interpolate(spec.weight, attribute, dirac)


# ------------------------------------------------------------ Kronecker / vec

def kron(A, B):
    """Block (i, j) of the result is A[i, j] * B."""
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def vec(X):
    """Stack the columns of X."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v, shape):
    return np.asarray(v).reshape(shape, order="F")


def product_gram(K, G):
    """Product-kernel Gram over all (x, y) pairs in column-major pair order."""
    return kron(as_matrix(G), as_matrix(K))
