"""Riemannian geometry of the manifold of fixed multilinear rank tensors.

A tangent vector at ``X = C x_1 U_1 ... x_d U_d`` is stored through its
variations ``(Cdot, Udot_1, ..., Udot_d)`` with the gauge ``U_i^T Udot_i = 0``;
it represents the ambient tensor

    Cdot x_1 U_1 ... x_d U_d + sum_i C x_i Udot_i x_{j != i} U_j.

Ambient inputs to the projection can be dense arrays, sampled tensors or
low-rank Tucker-format tensors.  For sparse input every contraction goes
through the sampled-entry kernels in :mod:`tucker_rtr._kernels`, so the
cost of a gradient or Hessian application is linear in the number of
samples and never touches the full grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .tensor import (RankDeficiencyError, SampledTensor, as_dense, matricize,
                     mode_product, multi_mode_product)
from .tucker import RANK_CUTOFF, TuckerTensor, fix_signs

__all__ = [
    "SampledPoint",
    "TangentVector",
    "curvature_term",
    "hessian_exact",
    "hessian_fd",
    "hessian_gauss_newton",
    "project_to_tangent",
    "retract",
    "riemannian_gradient",
    "tangent_basis",
    "tangent_to_ambient",
    "vector_transport",
    "weingarten_dproj",
]


# relative tolerance for the gauge condition U_i^T Udot_i = 0
GAUGE_TOL = 1e-10


def _perp(U: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``(I - U U^T) M``."""
    return M - U @ (U.T @ M)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """``Cdot x_j U_j + sum_i C x_i Udot_i x_{j!=i} U_j`` at `point`, with ``U_i^T Udot_i = 0``."""

    point: TuckerTensor
    core_dot: np.ndarray
    factor_dots: tuple

    def __post_init__(self):
        core_dot = np.asarray(self.core_dot, dtype=np.float64)
        factor_dots = tuple(np.asarray(V, dtype=np.float64) for V in self.factor_dots)
        if core_dot.shape != self.point.ranks:
            raise ValueError("core variation has the wrong shape")
        if len(factor_dots) != self.point.order or any(
                V.shape != U.shape for V, U in zip(factor_dots, self.point.factors)):
            raise ValueError("factor variations must match the factor shapes")
        for i, (U, V) in enumerate(zip(self.point.factors, factor_dots)):
            if V.size and np.abs(U.T @ V).max() > GAUGE_TOL * max(1.0, np.abs(V).max()):
                raise ValueError(f"factor variation {i} violates U^T Udot = 0; "
                                 "use TangentVector.from_parameters")
        object.__setattr__(self, "core_dot", core_dot)
        object.__setattr__(self, "factor_dots", factor_dots)

    @classmethod
    def zeros(cls, point: TuckerTensor) -> "TangentVector":
        return cls(point, np.zeros(point.ranks), [np.zeros_like(U) for U in point.factors])

    @classmethod
    def from_parameters(cls, point: TuckerTensor, core_dot, factor_dots) -> "TangentVector":
        """Build a tangent vector, projecting each factor variation onto the gauge."""
        return cls(point, core_dot, [_perp(U, V) for U, V in zip(point.factors, factor_dots)])

    @classmethod
    def _combine(cls, point: TuckerTensor, core_dot, factor_dots) -> "TangentVector":
        # linear combinations of gauged vectors keep the gauge up to operand-sized
        # round-off, which a check relative to the result would misreport
        obj = object.__new__(cls)
        object.__setattr__(obj, "point", point)
        object.__setattr__(obj, "core_dot", core_dot)
        object.__setattr__(obj, "factor_dots", tuple(factor_dots))
        return obj

    def _check(self, other: "TangentVector") -> None:
        if other.point is not self.point:
            raise ValueError("tangent vectors are anchored at different points")

    def __add__(self, other):
        self._check(other)
        return TangentVector._combine(self.point, self.core_dot + other.core_dot,
                             [a + b for a, b in zip(self.factor_dots, other.factor_dots)])

    def __sub__(self, other):
        self._check(other)
        return TangentVector._combine(self.point, self.core_dot - other.core_dot,
                             [a - b for a, b in zip(self.factor_dots, other.factor_dots)])

    def __neg__(self):
        return self * -1.0

    def __mul__(self, alpha):
        alpha = float(alpha)
        return TangentVector._combine(self.point, alpha * self.core_dot,
                                      [alpha * V for V in self.factor_dots])

    __rmul__ = __mul__

    def __truediv__(self, alpha):
        return self * (1.0 / float(alpha))

    def axpy(self, alpha, other) -> "TangentVector":
        """``self + alpha * other``."""
        self._check(other)
        return TangentVector._combine(self.point, self.core_dot + alpha * other.core_dot,
                             [a + alpha * b for a, b in zip(self.factor_dots, other.factor_dots)])

    def inner(self, other: "TangentVector") -> float:
        """Frobenius inner product of the represented ambient tensors.

        The d+1 summands of the parametrization are mutually orthogonal, so
        only same-term products survive.
        """
        self._check(other)
        total = float(np.vdot(self.core_dot, other.core_dot))
        for A, B, G in zip(self.factor_dots, other.factor_dots, self.point.core_grams):
            total += float(np.vdot(A.T @ B, G))
        return total

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def gauge_error(self) -> float:
        return max(float(np.abs(U.T @ V).max(initial=0.0))
                   for U, V in zip(self.point.factors, self.factor_dots))

    def as_tucker(self):
        """Tucker form ``(S, [U_i, Udot_i])`` with a block core of size ``2r``."""
        X = self.point
        r = X.ranks
        S = np.zeros(tuple(2 * k for k in r))
        S[tuple(slice(0, k) for k in r)] = self.core_dot
        for i in range(X.order):
            block = tuple(slice(k, 2 * k) if j == i else slice(0, k) for j, k in enumerate(r))
            S[block] = X.core
        factors = [np.hstack([U, V]) for U, V in zip(X.factors, self.factor_dots)]
        return S, factors

    def to_ambient(self) -> np.ndarray:
        return tangent_to_ambient(self)


def tangent_to_ambient(xi: TangentVector) -> np.ndarray:
    """Dense tensor represented by `xi`."""
    X = xi.point
    out = multi_mode_product(xi.core_dot, X.factors)
    for i, V in enumerate(xi.factor_dots):
        mats = list(X.factors)
        mats[i] = V
        out = out + multi_mode_product(X.core, mats)
    return out


class SampledPoint:
    """A point together with its factor rows gathered at a fixed sample set."""

    def __init__(self, point: TuckerTensor, indices: np.ndarray):
        self.point = point
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        if self.indices.ndim != 2 or self.indices.shape[1] != point.order:
            raise ValueError("indices must have shape (m, d)")
        self.rows = _kernels.gather_rows(point.factors, self.indices)

    def values(self) -> np.ndarray:
        return _kernels.sampled_values(self.rows, self.point.ranks, self.point.core)

    def tangent_values(self, xi: TangentVector) -> np.ndarray:
        drows = _kernels.gather_rows(xi.factor_dots, self.indices)
        X = self.point
        return _kernels.sampled_tangent_values(self.rows, drows, X.ranks, X.core, xi.core_dot)

    def _scatter(self, vals, drows=None) -> list:
        X = self.point
        out = []
        for i in range(X.order):
            rest = [j for j in range(X.order) if j != i]
            M = _kernels.scatter(self.rows, X.ranks, rest, self.indices[:, i], vals,
                                 X.dims[i], drows)
            shape = (X.dims[i],) + tuple(X.ranks[j] for j in rest)
            out.append(np.moveaxis(M.reshape(shape), 0, i))
        return out

    def partials(self, vals) -> list:
        """``E x_{j != i} U_j^T`` for the sparse tensor with entries `vals`, per mode i."""
        return self._scatter(vals)

    def tangent_partials(self, vals, xi: TangentVector) -> list:
        """``sum_{k != i} E x_k Udot_k^T x_{j != i,k} U_j^T`` per mode i."""
        return self._scatter(vals, _kernels.gather_rows(xi.factor_dots, self.indices))

    def project(self, vals) -> TangentVector:
        return _tangent_from_partials(self.point, self.partials(vals))


def _dense_partials(X: TuckerTensor, Z: np.ndarray) -> list:
    return [multi_mode_product(Z, X.factors, skip=(i,), transpose=True) for i in range(X.order)]


def _dense_tangent_partials(X: TuckerTensor, Z: np.ndarray, xi: TangentVector) -> list:
    out = []
    for i in range(X.order):
        acc = 0.0
        for k in range(X.order):
            if k == i:
                continue
            mats = [U.T for U in X.factors]
            mats[i] = None
            mats[k] = xi.factor_dots[k].T
            acc = acc + multi_mode_product(Z, mats)
        out.append(acc)
    return out


def _tucker_partials(X: TuckerTensor, S: np.ndarray, B: Sequence[np.ndarray]) -> list:
    small = [U.T @ Bj for U, Bj in zip(X.factors, B)]
    out = []
    for i in range(X.order):
        mats = list(small)
        mats[i] = B[i]
        out.append(multi_mode_product(S, mats))
    return out


def _tangent_from_partials(X: TuckerTensor, partials) -> TangentVector:
    core_dot = mode_product(partials[0], X.factors[0].T, 0)
    pinvs = X.core_pinvs
    factor_dots = [_perp(U, matricize(Y, i) @ pinvs[i])
                   for i, (U, Y) in enumerate(zip(X.factors, partials))]
    return TangentVector(X, core_dot, factor_dots)


def _partials_of(X: TuckerTensor, Z) -> list:
    if isinstance(Z, TangentVector):
        S, B = Z.as_tucker()
        return _tucker_partials(X, S, B)
    if isinstance(Z, TuckerTensor):
        return _tucker_partials(X, Z.core, Z.factors)
    if isinstance(Z, SampledTensor):
        if Z.dims != X.dims:
            raise ValueError(f"dims mismatch: {Z.dims} vs {X.dims}")
        return SampledPoint(X, Z.indices).partials(Z.values)
    Z = as_dense(Z)
    if Z.shape != X.dims:
        raise ValueError(f"dims mismatch: {Z.shape} vs {X.dims}")
    return _dense_partials(X, Z)


def project_to_tangent(X: TuckerTensor, Z) -> TangentVector:
    """Orthogonal projection of an ambient tensor onto the tangent space at `X`.

    `Z` may be a dense array, a :class:`SampledTensor` (read as ``P_Omega Z``),
    a :class:`TuckerTensor` or a :class:`TangentVector` anchored elsewhere.
    """
    return _tangent_from_partials(X, _partials_of(X, Z))


def tangent_basis(X: TuckerTensor) -> np.ndarray:
    """Orthonormal basis of the tangent space as columns of a dense matrix.

    Built from the canonical parameter directions; for small problems only.
    """
    cols = []
    for q in range(int(np.prod(X.ranks))):
        e = np.zeros(int(np.prod(X.ranks)))
        e[q] = 1.0
        cols.append(tangent_to_ambient(TangentVector(
            X, e.reshape(X.ranks), [np.zeros_like(U) for U in X.factors])).ravel())
    for i, U in enumerate(X.factors):
        Q, _ = np.linalg.qr(U, mode="complete")
        comp = Q[:, U.shape[1]:]
        for a in range(comp.shape[1]):
            for b in range(U.shape[1]):
                V = np.zeros_like(U)
                V[:, b] = comp[:, a]
                dots = [np.zeros_like(W) for W in X.factors]
                dots[i] = V
                cols.append(tangent_to_ambient(TangentVector(X, np.zeros(X.ranks), dots)).ravel())
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


def riemannian_gradient(X: TuckerTensor, data: SampledTensor, mu: float = 0.0) -> TangentVector:
    """``P_X(P_Omega X - P_Omega A) + mu X``."""
    sp = SampledPoint(X, data.indices)
    grad = sp.project(sp.values() - data.values)
    if mu:
        grad = grad + TangentVector(X, mu * X.core, [np.zeros_like(U) for U in X.factors])
    return grad


def retract(X: TuckerTensor, xi: TangentVector) -> TuckerTensor:
    """Truncated HOSVD of ``X + xi``, computed on a ``(2r)^d`` core.

    ``X + xi`` is exactly ``S x_i Q_i`` with ``Q_i R_i = [U_i, Udot_i]``;
    the truncation only needs SVDs of the small core ``S``.  Factor signs
    follow :func:`tucker_rtr.tucker.fix_signs`, so the result equals
    ``hosvd(X.full() + xi.to_ambient(), X.ranks)``.
    """
    if xi.point is not X:
        raise ValueError("tangent vector is not anchored at X")
    d, r = X.order, X.ranks
    Qs, keep, move = [], [], []
    for U, V in zip(X.factors, xi.factor_dots):
        Q, R = np.linalg.qr(np.hstack([U, V]))
        Qs.append(Q)
        keep.append(R[:, :U.shape[1]])
        move.append(R[:, U.shape[1]:])
    S = multi_mode_product(X.core + xi.core_dot, keep)
    for i in range(d):
        mats = list(keep)
        mats[i] = move[i]
        S = S + multi_mode_product(X.core, mats)
    factors = []
    for i in range(d):
        W, s, _ = np.linalg.svd(matricize(S, i), full_matrices=False)
        if s.size < r[i] or s[r[i] - 1] <= RANK_CUTOFF * s[0]:
            raise RankDeficiencyError(f"retraction drops the rank in mode {i}")
        factors.append(fix_signs(Qs[i] @ W[:, :r[i]]))
    core = multi_mode_product(S, [F.T @ Q for F, Q in zip(factors, Qs)])
    return TuckerTensor(core, factors)


def vector_transport(xi: TangentVector, Y: TuckerTensor) -> TangentVector:
    """Move `xi` to the tangent space at `Y` by orthogonal projection."""
    if xi.point.dims != Y.dims:
        raise ValueError("dims mismatch")
    return project_to_tangent(Y, xi)


def weingarten_dproj(X: TuckerTensor, xi: TangentVector, E: np.ndarray) -> np.ndarray:
    """Directional derivative ``(D_xi P_X) E`` of the tangent projector, dense.

    Sum over modes i of six groups: the factor-projector derivative, the
    core variation, the derivative of ``P_{U_i}^perp``, the derivative of
    the partial contraction, the derivative of ``C_(i)^+`` (full row rank
    form) and the factor variations in the other modes.
    """
    E = as_dense(E)
    d = X.order
    C, Us = X.core, X.factors
    Cd, Uds = xi.core_dot, xi.factor_dots
    pinvs = X.core_pinvs
    projs = [U @ U.T for U in Us]
    pdots = [V @ U.T + U @ V.T for U, V in zip(Us, Uds)]
    out = np.zeros(X.dims)
    for i in range(d):
        U, V, P = Us[i], Uds[i], pinvs[i]
        Ci, Cdi = matricize(C, i), matricize(Cd, i)
        mats = list(projs)
        mats[i] = pdots[i]
        out += multi_mode_product(E, mats)

        Mi = matricize(multi_mode_product(E, Us, skip=(i,), transpose=True), i)
        Mdot = 0.0
        for l in range(d):
            if l == i:
                continue
            mats = [W.T for W in Us]
            mats[i] = None
            mats[l] = Uds[l].T
            Mdot = Mdot + matricize(multi_mode_product(E, mats), i)
        base = _perp(U, Mi @ P)
        dpinv = (np.eye(P.shape[0]) - P @ Ci) @ Cdi.T @ P.T @ P - P @ Cdi @ P
        dfactor = (-pdots[i] @ Mi @ P + _perp(U, Mdot @ P) + _perp(U, Mi @ dpinv))

        mats = list(Us)
        mats[i] = base
        out += multi_mode_product(Cd, mats)
        mats[i] = dfactor
        out += multi_mode_product(C, mats)
        for l in range(d):
            if l == i:
                continue
            mats = list(Us)
            mats[i] = base
            mats[l] = Uds[l]
            out += multi_mode_product(C, mats)
    return out


def _curvature_from_partials(X: TuckerTensor, xi: TangentVector, partials, dpartials) -> TangentVector:
    C = X.core
    pinvs = X.core_pinvs
    core_t = np.zeros(X.ranks)
    factors_t = []
    for i in range(X.order):
        U, V, P = X.factors[i], xi.factor_dots[i], pinvs[i]
        Mi = matricize(partials[i], i)
        core_t += mode_product(partials[i], V.T, i)
        core_t -= mode_product(C, V.T @ Mi @ P, i)
        Ci, Cdi = X.core_unfoldings[i], matricize(xi.core_dot, i)
        # (I - P C) expanded to keep the cost at O(n r^d)
        inner = Mi @ (Cdi.T @ P.T) - (Mi @ P) @ (Ci @ Cdi.T @ P.T) + matricize(dpartials[i], i)
        factors_t.append(_perp(U, inner @ P))
    return TangentVector(X, core_t, factors_t)


def curvature_term(X: TuckerTensor, xi: TangentVector, E) -> TangentVector:
    """``P_X (D_xi P_X) P_X^perp E`` as a tangent vector at `X`.

    The closed form is linear in `E` and vanishes on tangent inputs, so it
    is evaluated on `E` directly; the normal component is never formed.
    `E` may be dense or a :class:`SampledTensor`.
    """
    if isinstance(E, SampledTensor):
        sp = SampledPoint(X, E.indices)
        return _curvature_from_partials(X, xi, sp.partials(E.values),
                                        sp.tangent_partials(E.values, xi))
    E = as_dense(E)
    return _curvature_from_partials(X, xi, _dense_partials(X, E), _dense_tangent_partials(X, E, xi))


def hessian_gauss_newton(X: TuckerTensor, data: SampledTensor, xi: TangentVector,
                         mu: float = 0.0) -> TangentVector:
    """``P_X P_Omega xi (+ mu xi)``: the Hessian without the curvature term."""
    sp = SampledPoint(X, data.indices)
    out = sp.project(sp.tangent_values(xi))
    return out.axpy(mu, xi) if mu else out


def hessian_exact(X: TuckerTensor, data: SampledTensor, xi: TangentVector,
                  mu: float = 0.0) -> TangentVector:
    """Riemannian Hessian of ``1/2 ||P_Omega(X - A)||^2 + mu/2 ||X||^2`` applied to `xi`.

    The regularization adds ``mu xi``: its Euclidean gradient ``mu X`` is
    tangent, so it contributes no curvature.
    """
    sp = SampledPoint(X, data.indices)
    residual = sp.values() - data.values
    gn = sp.project(sp.tangent_values(xi))
    curv = _curvature_from_partials(X, xi, sp.partials(residual), sp.tangent_partials(residual, xi))
    out = gn + curv
    return out.axpy(mu, xi) if mu else out


def hessian_fd(X: TuckerTensor, data: SampledTensor, xi: TangentVector, h: float | None = None,
               mu: float = 0.0, grad: TangentVector | None = None) -> TangentVector:
    """Finite-difference Hessian along the retraction curve.

    Evaluates ``(T grad f(R_X(h u)) - grad f(X)) / h`` for the unit vector
    ``u = xi / ||xi||`` and rescales by ``||xi||``; ``T`` moves the gradient
    back to ``T_X`` by orthogonal projection.  This map is not linear in
    `xi` in general.
    """
    if h is None:
        h = float(np.sqrt(np.finfo(np.float64).eps))
    if h <= 0:
        raise ValueError("step h must be positive")
    scale = xi.norm()
    if scale == 0.0:
        return TangentVector.zeros(X)
    if grad is None:
        grad = riemannian_gradient(X, data, mu)
    Y = retract(X, xi * (h / scale))
    moved = project_to_tangent(X, riemannian_gradient(Y, data, mu))
    return (moved - grad) * (scale / h)
