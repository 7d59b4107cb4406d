"""Dense tensor arithmetic and the sampling operator.

Dense tensors are plain ``numpy.ndarray`` objects of dtype float64 whose
shape is the dimension tuple.  Modes are 0-based axes.

Matricization convention
------------------------
``matricize(A, i)`` puts mode ``i`` on the rows.  The column index runs over
the remaining modes in increasing mode order with the *earliest* remaining
mode varying fastest, i.e. for a 3-tensor::

    A_(0)[i0, i1 + n1 * i2] = A[i0, i1, i2]
    A_(2)[i2, i0 + n0 * i1] = A[i0, i1, i2]

This is the only ordering under which the 2x2x2 example with
``A_(1) = [[1,0,0,0],[0,1,0,0]]`` has ``A_(2) = A_(1)`` and
``A_(3) = [[1,0,0,1],[0,0,0,0]]`` (1-based modes), so every other module
inherits it.  The in-memory layout of the ndarray itself is irrelevant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RankDeficiencyError",
    "SampledTensor",
    "as_dense",
    "inner",
    "matricize",
    "mode_product",
    "multi_mode_product",
    "multilinear_rank",
    "norm",
    "sample_project",
    "tensorize",
]


class RankDeficiencyError(np.linalg.LinAlgError):
    """A matrix that must have full rank is numerically rank deficient."""


def as_dense(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2:
        raise ValueError(f"tensors must have order >= 2, got order {A.ndim}")
    return A


def _check_mode(mode: int, order: int) -> None:
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for a tensor of order {order}")


def matricize(A: np.ndarray, mode: int) -> np.ndarray:
    """Mode-`mode` matricization, shape ``(n_mode, prod of the other n_j)``."""
    A = np.asarray(A)
    _check_mode(mode, A.ndim)
    return np.moveaxis(A, mode, 0).reshape(A.shape[mode], -1, order="F")


def tensorize(M: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for the same `mode` and `dims`."""
    dims = tuple(int(n) for n in dims)
    _check_mode(mode, len(dims))
    M = np.asarray(M)
    rest = [n for j, n in enumerate(dims) if j != mode]
    if M.shape != (dims[mode], int(np.prod(rest))):
        raise ValueError(
            f"matrix of shape {M.shape} cannot be tensorized along mode {mode} into {dims}"
        )
    T = M.reshape([dims[mode]] + rest, order="F")
    return np.moveaxis(T, 0, mode)


def mode_product(A: np.ndarray, M: np.ndarray, mode: int) -> np.ndarray:
    """The product ``A x_mode M``, i.e. ``matricize(B, mode) = M @ matricize(A, mode)``."""
    A = np.asarray(A)
    M = np.asarray(M)
    _check_mode(mode, A.ndim)
    if M.ndim != 2 or M.shape[1] != A.shape[mode]:
        raise ValueError(
            f"matrix of shape {M.shape} does not act on mode {mode} of size {A.shape[mode]}"
        )
    return np.moveaxis(np.tensordot(M, A, axes=(1, mode)), 0, mode)


def multi_mode_product(A: np.ndarray, matrices: Sequence, skip: Iterable[int] = (),
                       transpose: bool = False) -> np.ndarray:
    """Apply ``matrices[j]`` (or its transpose) along every mode j not in `skip`.

    Entries of `matrices` that are ``None`` are skipped as well.
    """
    skip = set(skip)
    for j, M in enumerate(matrices):
        if j in skip or M is None:
            continue
        A = mode_product(A, M.T if transpose else M, j)
    return A


def inner(A: np.ndarray, B: np.ndarray) -> float:
    """Frobenius inner product."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.vdot(A, B))


def norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(A)))


def multilinear_rank(A: np.ndarray, rel_tol: float = 1e-10) -> tuple:
    """Numerical multilinear rank.

    Entry i counts the singular values of ``matricize(A, i)`` above
    ``rel_tol`` times the largest one.
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    A = as_dense(A)
    ranks = []
    for i in range(A.ndim):
        s = np.linalg.svd(matricize(A, i), compute_uv=False)
        smax = s[0] if s.size else 0.0
        ranks.append(int(np.count_nonzero(s > rel_tol * smax)) if smax > 0 else 0)
    return tuple(ranks)


@dataclass(frozen=True, eq=False)
class SampledTensor:
    """Known entries ``P_Omega A`` of a tensor.

    ``indices`` is an ``(m, d)`` integer array of 0-based multi-indices in
    strictly increasing lexicographic order; ``values`` holds the matching
    entries.  Use :meth:`from_entries` for unsorted input.
    """

    dims: tuple
    indices: np.ndarray
    values: np.ndarray
    _linear: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid dims {self.dims}")
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if idx.ndim != 2 or idx.shape[1] != len(dims):
            raise ValueError(f"indices must have shape (m, {len(dims)})")
        if vals.shape != (idx.shape[0],):
            raise ValueError("one value per index is required")
        if idx.shape[0] == 0:
            raise ValueError("a sampled tensor needs at least one entry")
        if np.any(idx < 0) or np.any(idx >= np.asarray(dims)):
            raise IndexError("sample index out of bounds")
        linear = np.ravel_multi_index(tuple(idx.T), dims)
        if np.any(np.diff(linear) <= 0):
            raise ValueError("indices must be unique and sorted lexicographically")
        idx.setflags(write=False)
        vals.setflags(write=False)
        linear.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_linear", linear)

    @classmethod
    def from_entries(cls, dims, indices, values) -> "SampledTensor":
        """Sort the entries; duplicate indices raise ``ValueError``."""
        dims = tuple(int(n) for n in dims)
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, len(dims))
        vals = np.asarray(values, dtype=np.float64).reshape(-1)
        if idx.shape[0] and (np.any(idx < 0) or np.any(idx >= np.asarray(dims))):
            raise IndexError("sample index out of bounds")
        order = np.argsort(np.ravel_multi_index(tuple(idx.T), dims), kind="stable")
        idx, vals = idx[order], vals[order]
        lin = np.ravel_multi_index(tuple(idx.T), dims)
        dup = np.flatnonzero(np.diff(lin) == 0)
        if dup.size:
            raise ValueError(f"duplicate index {tuple(int(k) for k in idx[dup[0]])}")
        return cls(dims, idx, vals)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def linear_indices(self) -> np.ndarray:
        """Row-major linear indices; increasing because ``indices`` is sorted."""
        return self._linear

    def __len__(self) -> int:
        return self.indices.shape[0]

    def is_full(self) -> bool:
        return len(self) == int(np.prod(self.dims))

    def with_values(self, values) -> "SampledTensor":
        return SampledTensor(self.dims, self.indices, values)

    def subset(self, mask_or_index) -> "SampledTensor":
        sel = np.sort(np.arange(len(self))[mask_or_index])
        return SampledTensor(self.dims, self.indices[sel], self.values[sel])

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        """``P_Omega A`` as a dense array (unknown entries set to `fill`)."""
        out = np.full(self.dims, fill, dtype=np.float64)
        out[tuple(self.indices.T)] = self.values
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampledTensor):
            return NotImplemented
        return (self.dims == other.dims
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    __hash__ = None


def sample_project(A: np.ndarray, indices) -> SampledTensor:
    """Restrict the dense tensor `A` to the index set `indices` (0-based)."""
    A = as_dense(A)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, A.ndim)
    if idx.shape[0] and (np.any(idx < 0) or np.any(idx >= np.asarray(A.shape))):
        raise IndexError("sample index out of bounds")
    vals = A[tuple(idx.T)] if idx.shape[0] else np.empty(0)
    return SampledTensor.from_entries(A.shape, idx, vals)
