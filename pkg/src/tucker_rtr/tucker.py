"""Tucker tensors, truncated HOSVD and evaluation at sampled entries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels
from .tensor import (RankDeficiencyError, as_dense, matricize, mode_product,
                     multi_mode_product)

__all__ = [
    "ORTHONORMALITY_TOL",
    "RANK_CUTOFF",
    "TuckerTensor",
    "fix_signs",
    "hosvd",
    "manifold_dimension",
    "orthonormalize",
    "random_tucker",
    "sampled_entries",
    "singular_spectrum",
    "to_full",
]

ORTHONORMALITY_TOL = 1e-10
# relative singular value cutoff for pseudoinverses and truncation
RANK_CUTOFF = 1e-12


@dataclass(frozen=True, eq=False)
class TuckerTensor:
    """``core x_1 U_1 ... x_d U_d`` with orthonormal factor columns."""

    core: np.ndarray
    factors: tuple

    def __post_init__(self):
        core = np.array(self.core, dtype=np.float64)
        factors = tuple(np.array(U, dtype=np.float64) for U in self.factors)
        if core.ndim < 2 or core.ndim != len(factors):
            raise ValueError("need one factor per core mode and order >= 2")
        for j, U in enumerate(factors):
            if U.ndim != 2 or U.shape[1] != core.shape[j]:
                raise ValueError(f"factor {j} has shape {U.shape}, core has rank {core.shape[j]}")
            if U.shape[1] > U.shape[0]:
                raise ValueError(f"rank {U.shape[1]} exceeds dimension {U.shape[0]} in mode {j}")
            err = np.abs(U.T @ U - np.eye(U.shape[1])).max(initial=0.0)
            if err > ORTHONORMALITY_TOL:
                raise ValueError(f"factor {j} is not orthonormal (error {err:.2e}); "
                                 "use orthonormalize()")
        core.setflags(write=False)
        for U in factors:
            U.setflags(write=False)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", factors)

    @property
    def order(self) -> int:
        return self.core.ndim

    @property
    def dims(self) -> tuple:
        return tuple(U.shape[0] for U in self.factors)

    @property
    def ranks(self) -> tuple:
        return self.core.shape

    def full(self) -> np.ndarray:
        return to_full(self)

    def norm(self) -> float:
        return float(np.linalg.norm(self.core))

    @cached_property
    def core_unfoldings(self) -> tuple:
        return tuple(matricize(self.core, i) for i in range(self.order))

    @cached_property
    def core_grams(self) -> tuple:
        """``C_(i) C_(i)^T`` per mode; the metric weights for factor variations."""
        return tuple(M @ M.T for M in self.core_unfoldings)

    @cached_property
    def core_pinvs(self) -> tuple:
        """Pseudoinverses of the core matricizations.

        Raises :class:`RankDeficiencyError` if some ``C_(i)`` lacks full row
        rank, which means the point is not on the fixed-rank manifold.
        """
        out = []
        for i, M in enumerate(self.core_unfoldings):
            W, s, Vt = np.linalg.svd(M, full_matrices=False)
            if s.size == 0 or s[-1] <= RANK_CUTOFF * s[0]:
                raise RankDeficiencyError(
                    f"core matricization {i} is rank deficient (singular values {s})")
            out.append((Vt.T / s) @ W.T)
        return tuple(out)

    def check_manifold_point(self) -> None:
        for i, r in enumerate(self.ranks):
            others = int(np.prod(self.ranks)) // r
            if r > others:
                raise ValueError(f"rank {r} in mode {i} exceeds product {others} of other ranks")
        self.core_pinvs


def manifold_dimension(dims: Sequence[int], ranks: Sequence[int]) -> int:
    return int(np.prod(ranks)) + sum(r * n - r * r for n, r in zip(dims, ranks))


def to_full(X: TuckerTensor) -> np.ndarray:
    return multi_mode_product(X.core, X.factors)


def orthonormalize(core, raw_factors) -> TuckerTensor:
    """QR-orthonormalize the factors and absorb the triangular parts in the core."""
    core = np.asarray(core, dtype=np.float64)
    factors = []
    for i, U in enumerate(raw_factors):
        U = np.asarray(U, dtype=np.float64)
        Q, R = np.linalg.qr(U)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag.min() <= RANK_CUTOFF * max(diag.max(), np.linalg.norm(U)):
            raise RankDeficiencyError(f"factor {i} does not have full column rank")
        sign = np.where(np.diag(R) < 0, -1.0, 1.0)
        factors.append(Q * sign)
        core = mode_product(core, sign[:, None] * R, i)
    return TuckerTensor(core, factors)


def fix_signs(U: np.ndarray) -> np.ndarray:
    """Flip columns so that each has its largest-magnitude entry positive."""
    if U.size == 0:
        return U
    pick = np.abs(U).argmax(axis=0)
    sign = np.where(U[pick, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    return U * sign


def _dominant_left(M: np.ndarray, r: int, mode: int, strict: bool) -> np.ndarray:
    W, s, _ = np.linalg.svd(M, full_matrices=False)
    if strict and (s.size < r or s[r - 1] <= RANK_CUTOFF * s[0]):
        raise RankDeficiencyError(f"truncation in mode {mode} drops the rank below {r}")
    return fix_signs(W[:, :r])


def hosvd(A: np.ndarray, ranks: Sequence[int], strict: bool = False) -> TuckerTensor:
    """Truncated higher-order SVD.

    ``U_i`` holds the ``r_i`` dominant left singular vectors of ``A_(i)``
    with the sign convention of :func:`fix_signs`; the core is
    ``A x_i U_i^T`` over all modes.  With ``strict=True`` a vanishing
    ``r_i``-th singular value raises :class:`RankDeficiencyError`.
    """
    A = as_dense(A)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != A.ndim:
        raise ValueError("one rank per mode is required")
    for i, (n, r) in enumerate(zip(A.shape, ranks)):
        if not 1 <= r <= n:
            raise ValueError(f"rank {r} is invalid for mode {i} of size {n}")
    factors = [_dominant_left(matricize(A, i), r, i, strict) for i, r in enumerate(ranks)]
    core = multi_mode_product(A, factors, transpose=True)
    return TuckerTensor(core, factors)


def sampled_entries(X: TuckerTensor, indices) -> np.ndarray:
    """Entries of `X` at the 0-based multi-indices `indices`, without forming X."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, X.order)
    if idx.shape[0] and (np.any(idx < 0) or np.any(idx >= np.asarray(X.dims))):
        raise IndexError("sample index out of bounds")
    rows = _kernels.gather_rows(X.factors, idx)
    return _kernels.sampled_values(rows, X.ranks, X.core)


def singular_spectrum(A: np.ndarray) -> list:
    """Singular values of every matricization, in descending order."""
    A = as_dense(A)
    return [np.linalg.svd(matricize(A, i), compute_uv=False) for i in range(A.ndim)]


def random_tucker(dims, ranks, rng: np.random.Generator, distribution: str = "uniform") -> TuckerTensor:
    """Random point with factor and core entries from U(0,1) or N(0,1), then orthonormalized."""
    if distribution not in ("uniform", "normal"):
        raise ValueError(f"unknown distribution {distribution!r}")
    draw = rng.random if distribution == "uniform" else rng.standard_normal
    factors = [draw((n, r)) for n, r in zip(dims, ranks)]
    core = draw(tuple(ranks))
    X = orthonormalize(core, factors)
    if any(r > int(np.prod(ranks)) // r for r in ranks):
        warnings.warn("rank tuple is not attainable; the point is off the manifold")
    return X
