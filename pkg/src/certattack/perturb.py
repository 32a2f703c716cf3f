"""Edge-flip perturbation algebra on the strict upper triangle.

Undirected perturbations are stored as length-m vectors over the strict
upper triangle of the adjacency matrix (m = n(n-1)/2), so each node pair
is counted once against the budget and the diagonal is never touched.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, DomainError, ParameterError

SUM_TOLERANCE = 1e-6


def num_pairs(n: int) -> int:
    """Number of unordered node pairs, i.e. the perturbation vector length."""
    return n * (n - 1) // 2


@lru_cache(maxsize=64)
def triu_pairs(n: int):
    """Row/column indices of the strict upper triangle, row-major order."""
    rows, cols = np.triu_indices(n, k=1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def infer_n(m: int) -> int:
    """Node count whose strict upper triangle has m entries."""
    n = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if num_pairs(n) != m:
        raise DimensionError(f"{m} is not a valid pair count n(n-1)/2")
    return n


def vector_to_matrix(vec: np.ndarray, n: int) -> np.ndarray:
    """Mirror an upper-triangle vector into a symmetric n-by-n matrix."""
    vec = np.asarray(vec)
    if vec.shape != (num_pairs(n),):
        raise DimensionError(
            f"expected vector of length {num_pairs(n)} for n={n}, got {vec.shape}")
    out = np.zeros((n, n), dtype=vec.dtype)
    rows, cols = triu_pairs(n)
    out[rows, cols] = vec
    out[cols, rows] = vec
    return out


def matrix_to_vector(mat: np.ndarray) -> np.ndarray:
    """Read the strict upper triangle of a square matrix as a vector."""
    mat = np.asarray(mat)
    n = mat.shape[0]
    rows, cols = triu_pairs(n)
    return mat[rows, cols].copy()


def apply_perturbation(adjacency: np.ndarray, delta_binary: np.ndarray) -> np.ndarray:
    """XOR a binary upper-triangle flip vector into a binary adjacency.

    Mirrors the flips to keep symmetry and leaves the diagonal untouched.
    Self-inverse: applying the same vector twice restores the input.
    """
    adjacency = np.asarray(adjacency)
    n = adjacency.shape[0]
    delta_binary = np.asarray(delta_binary)
    if delta_binary.shape != (num_pairs(n),):
        raise DimensionError(
            f"flip vector length {delta_binary.shape} does not match n={n} "
            f"(expected {num_pairs(n)})")
    if not np.isin(delta_binary, (0, 1)).all():
        raise DomainError("binary flip vector must contain only 0/1 entries")
    rows, cols = triu_pairs(n)
    out = adjacency.copy()
    flipped = np.bitwise_xor(out[rows, cols].astype(np.int8),
                             delta_binary.astype(np.int8))
    out[rows, cols] = flipped
    out[cols, rows] = flipped
    return out


def relax_perturbation(adjacency: np.ndarray, delta_relaxed: np.ndarray) -> np.ndarray:
    """Continuous surrogate of the XOR flip: A' = A + (1 - 2A) * delta.

    Coincides exactly with :func:`apply_perturbation` on binary input and is
    differentiable in delta, which is what the attack gradients need.
    """
    adjacency = np.asarray(adjacency, dtype=float)
    n = adjacency.shape[0]
    delta_relaxed = np.asarray(delta_relaxed, dtype=float)
    if delta_relaxed.shape != (num_pairs(n),):
        raise DimensionError(
            f"relaxed vector length {delta_relaxed.shape} does not match n={n}")
    if delta_relaxed.min(initial=0.0) < 0.0 or delta_relaxed.max(initial=0.0) > 1.0:
        raise DomainError("relaxed perturbation entries must lie in [0, 1]")
    mirrored = vector_to_matrix(delta_relaxed, n)
    return adjacency + (1.0 - 2.0 * adjacency) * mirrored


@dataclass
class Perturbation:
    """Budgeted edge-flip variable over the upper-triangle index space.

    `relaxed` is the continuous PGD iterate; `binary` is the discretized
    attack actually applied to the graph (may be absent mid-attack).
    """
    relaxed: np.ndarray
    budget: int
    binary: np.ndarray | None = None

    def __post_init__(self):
        self.relaxed = np.asarray(self.relaxed, dtype=float)
        if self.budget < 0:
            raise ParameterError("budget must be nonnegative")
        if self.relaxed.min(initial=0.0) < 0.0 or self.relaxed.max(initial=0.0) > 1.0:
            raise DomainError("relaxed entries must lie in [0, 1]")
        if self.relaxed.sum() > self.budget + SUM_TOLERANCE:
            raise DomainError(
                f"relaxed mass {self.relaxed.sum():.6f} exceeds budget {self.budget}")
        if self.binary is not None:
            self.binary = np.asarray(self.binary)
            if self.binary.shape != self.relaxed.shape:
                raise DimensionError("binary and relaxed vectors differ in length")
            if not np.isin(self.binary, (0, 1)).all():
                raise DomainError("binary entries must be 0/1")
            if int(self.binary.sum()) > self.budget:
                raise DomainError("binary flip count exceeds budget")

    @property
    def num_flips(self) -> int:
        return 0 if self.binary is None else int(self.binary.sum())
