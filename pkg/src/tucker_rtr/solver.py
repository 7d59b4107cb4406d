"""Cost, quadratic models, truncated CG and the Riemannian solvers.

All solvers minimize

    f(X) = 1/2 ||P_Omega X - P_Omega A||^2 + mu/2 ||X||^2

over tensors of fixed multilinear rank and return the final point together
with a :class:`SolverTrace`.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .manifold import (SampledPoint, TangentVector, _curvature_from_partials,
                       _tangent_from_partials, hessian_fd, project_to_tangent, retract)
from .tensor import SampledTensor
from .tucker import TuckerTensor, manifold_dimension, random_tucker

__all__ = [
    "HESSIAN_MODELS",
    "IterationRecord",
    "LineSearchError",
    "Linearization",
    "Objective",
    "SolverConfig",
    "SolverTrace",
    "TCGResult",
    "cost",
    "model_error",
    "model_eval",
    "nonlinear_cg_solve",
    "steepest_descent_solve",
    "tcg_solve",
    "trust_region_solve",
]

log = logging.getLogger(__name__)

HESSIAN_MODELS = ("exact", "gauss_newton", "fd")
_MODEL_ALIASES = {"gn": "gauss_newton", "N": "exact", "GN": "gauss_newton"}


class LineSearchError(RuntimeError):
    """Backtracking failed to find an acceptable step; carries the partial trace."""

    def __init__(self, message, point=None, trace=None):
        super().__init__(message)
        self.point = point
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    """Parameters shared by all solvers.

    ``delta_bar`` and ``delta0`` default to ``dim(M_r)`` and ``delta_bar / 8``;
    ``tcg_max_iters`` defaults to ``min(100, dim(M_r))``.
    """

    hessian_model: str = "exact"
    delta_bar: Optional[float] = None
    delta0: Optional[float] = None
    rho_prime: float = 0.1
    tcg_kappa: float = 0.1
    tcg_theta: float = 1.0
    tcg_max_iters: Optional[int] = None
    grad_rel_tol: float = 1e-12
    grad_abs_tol: float = 0.0
    max_outer_iters: int = 500
    delta_min_factor: float = 1e-14
    mu: float = 0.0
    fd_step: Optional[float] = None
    rng_seed: int = 0

    def __post_init__(self):
        model = _MODEL_ALIASES.get(self.hessian_model, self.hessian_model)
        if model not in HESSIAN_MODELS:
            raise ValueError(f"hessian_model must be one of {HESSIAN_MODELS}")
        object.__setattr__(self, "hessian_model", model)
        if self.delta_bar is not None and self.delta_bar <= 0:
            raise ValueError("delta_bar must be positive")
        if self.delta0 is not None and not (
                0 < self.delta0 and (self.delta_bar is None or self.delta0 < self.delta_bar)):
            raise ValueError("delta0 must lie in (0, delta_bar)")
        if not 0 < self.rho_prime < 0.25:
            raise ValueError("rho_prime must lie in (0, 1/4)")
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be nonnegative")

    def radii(self, dim: int):
        delta_bar = float(self.delta_bar if self.delta_bar is not None else dim)
        delta0 = float(self.delta0 if self.delta0 is not None else delta_bar / 8)
        if not 0 < delta0 < delta_bar:
            raise ValueError("delta0 must lie in (0, delta_bar)")
        return delta_bar, delta0

    def tcg_iters(self, dim: int) -> int:
        return int(self.tcg_max_iters if self.tcg_max_iters is not None else min(100, dim))


@dataclass
class IterationRecord:
    """State at iterate k and the step tried from it (NaN when none was tried)."""

    iteration: int
    f: float
    grad_norm: float
    delta: float = math.nan
    rho: float = math.nan
    step_norm: float = math.nan
    accepted: bool = False
    inner_iters: int = 0
    stop_reason: str = ""
    wall_ms: float = 0.0


@dataclass
class SolverTrace:
    solver: str
    records: list = field(default_factory=list)
    status: str = ""

    @property
    def grad0(self) -> float:
        return self.records[0].grad_norm if self.records else math.nan

    def grad_rel(self) -> np.ndarray:
        g0 = self.grad0
        return np.array([r.grad_norm / g0 if g0 > 0 else 0.0 for r in self.records])

    def f_values(self) -> np.ndarray:
        return np.array([r.f for r in self.records])

    def accepted_f(self) -> np.ndarray:
        """f at every iterate that was actually visited."""
        out = [self.records[0].f] if self.records else []
        for prev, rec in zip(self.records, self.records[1:]):
            if prev.accepted:
                out.append(rec.f)
        return np.array(out)

    def iterations_to(self, rel_tol: float) -> Optional[int]:
        """First iteration index with relative gradient norm at most `rel_tol`."""
        hits = np.flatnonzero(self.grad_rel() <= rel_tol)
        return int(self.records[hits[0]].iteration) if hits.size else None

    def __len__(self):
        return len(self.records)


# -- objective ------------------------------------------------------------

def cost(X: TuckerTensor, data: SampledTensor, mu: float = 0.0) -> float:
    """``1/2 sum_Omega (x - a)^2 + mu/2 ||X||^2``; ``||X|| = ||core||`` for orthonormal factors."""
    res = SampledPoint(X, data.indices).values() - data.values
    out = 0.5 * float(res @ res)
    if mu:
        out += 0.5 * mu * X.norm() ** 2
    return out


class Linearization:
    """Residual, gradient and Hessian operators at one point."""

    def __init__(self, objective: "Objective", X: TuckerTensor):
        self.objective = objective
        self.point = X
        self.sampled = SampledPoint(X, objective.data.indices)
        self.residual = self.sampled.values() - objective.data.values
        mu = objective.mu
        self.f = 0.5 * float(self.residual @ self.residual) + 0.5 * mu * X.norm() ** 2
        self._partials = self.sampled.partials(self.residual)
        grad = _tangent_from_partials(X, self._partials)
        if mu:
            grad = grad + TangentVector(X, mu * X.core, [np.zeros_like(U) for U in X.factors])
        self.grad = grad
        self.grad_norm = grad.norm()

    def gauss_newton(self, xi: TangentVector) -> TangentVector:
        out = self.sampled.project(self.sampled.tangent_values(xi))
        mu = self.objective.mu
        return out.axpy(mu, xi) if mu else out

    def curvature(self, xi: TangentVector) -> TangentVector:
        dpart = self.sampled.tangent_partials(self.residual, xi)
        return _curvature_from_partials(self.point, xi, self._partials, dpart)

    def exact(self, xi: TangentVector) -> TangentVector:
        return self.gauss_newton(xi) + self.curvature(xi)

    def fd(self, xi: TangentVector, h: Optional[float] = None) -> TangentVector:
        o = self.objective
        return hessian_fd(self.point, o.data, xi, h=h, mu=o.mu, grad=self.grad)

    def hessian(self, model: str, fd_step: Optional[float] = None
                ) -> Callable[[TangentVector], TangentVector]:
        model = _MODEL_ALIASES.get(model, model)
        if model == "exact":
            return self.exact
        if model == "gauss_newton":
            return self.gauss_newton
        if model == "fd":
            return lambda xi: self.fd(xi, fd_step)
        raise ValueError(f"unknown Hessian model {model!r}")


@dataclass(frozen=True)
class Objective:
    data: SampledTensor
    mu: float = 0.0

    def cost(self, X: TuckerTensor) -> float:
        return cost(X, self.data, self.mu)

    def linearize(self, X: TuckerTensor) -> Linearization:
        return Linearization(self, X)


# -- models ---------------------------------------------------------------

def model_eval(kind: str, X: TuckerTensor, data: SampledTensor, xi: TangentVector,
               mu: float = 0.0, lin: Linearization | None = None) -> float:
    """Value at `xi` of the first-order (SD), Newton (N) or Gauss-Newton (GN) model."""
    lin = lin or Linearization(Objective(data, mu), X)
    value = lin.f + lin.grad.inner(xi)
    if kind == "SD":
        return value
    if kind == "N":
        return value + 0.5 * lin.exact(xi).inner(xi)
    if kind == "GN":
        return value + 0.5 * lin.gauss_newton(xi).inner(xi)
    raise ValueError(f"unknown model kind {kind!r}")


def model_error(kind: str, X: TuckerTensor, data: SampledTensor, xi: TangentVector, h: float,
                mu: float = 0.0) -> float:
    """``|f(R_X(h xi)) - m_X(h xi)|``."""
    if h < 0:
        raise ValueError("h must be nonnegative")
    if h == 0:
        return 0.0
    step = xi * h
    return abs(cost(retract(X, step), data, mu) - model_eval(kind, X, data, step, mu))


# -- truncated CG ---------------------------------------------------------

@dataclass
class TCGResult:
    eta: TangentVector
    H_eta: TangentVector
    iterations: int
    stop_reason: str

    def model_decrease(self, grad: TangentVector) -> float:
        """``m(0) - m(eta)``."""
        return -(grad.inner(self.eta) + 0.5 * self.H_eta.inner(self.eta))


def _to_boundary(eta: TangentVector, delta_dir: TangentVector, radius: float) -> float:
    """Positive tau with ``||eta + tau delta_dir|| = radius``."""
    a = delta_dir.inner(delta_dir)
    b = 2.0 * eta.inner(delta_dir)
    c = eta.inner(eta) - radius * radius
    disc = math.sqrt(max(b * b - 4 * a * c, 0.0))
    # stable root of a tau^2 + b tau + c = 0 with c <= 0
    return (2 * -c) / (b + disc) if b > 0 else (-b + disc) / (2 * a)


def tcg_solve(grad: TangentVector, hess: Callable[[TangentVector], TangentVector], delta: float,
              kappa: float = 0.1, theta: float = 1.0, max_iters: int = 100) -> TCGResult:
    """Steihaug-Toint truncated CG for ``min <g, eta> + 1/2 <H eta, eta>``, ``||eta|| <= delta``.

    Stops on negative curvature or the boundary (the step then has norm
    exactly `delta`), on ``||r_j|| <= ||r_0|| min(kappa, ||r_0||^theta)``, or
    after `max_iters` Hessian applications.
    """
    if not delta > 0:
        raise ValueError("trust-region radius must be positive")
    eta = TangentVector.zeros(grad.point)
    H_eta = TangentVector.zeros(grad.point)
    r = grad
    rr = r.inner(r)
    r0 = math.sqrt(rr)
    if r0 == 0.0:
        return TCGResult(eta, H_eta, 0, "residual_tol")
    target = r0 * min(kappa, r0 ** theta)
    p = -r
    for j in range(max_iters):
        Hp = hess(p)
        curv = Hp.inner(p)
        if not (math.isfinite(curv) and math.isfinite(rr)):
            raise FloatingPointError("non-finite value in truncated CG")
        if curv <= 0:
            tau = _to_boundary(eta, p, delta)
            return TCGResult(eta.axpy(tau, p), H_eta.axpy(tau, Hp), j + 1, "negative_curvature")
        alpha = rr / curv
        trial = eta.axpy(alpha, p)
        if trial.norm() >= delta:
            tau = _to_boundary(eta, p, delta)
            return TCGResult(eta.axpy(tau, p), H_eta.axpy(tau, Hp), j + 1, "boundary")
        eta = trial
        H_eta = H_eta.axpy(alpha, Hp)
        r = r.axpy(alpha, Hp)
        rr_new = r.inner(r)
        if math.sqrt(rr_new) <= target:
            return TCGResult(eta, H_eta, j + 1, "residual_tol")
        p = (-r).axpy(rr_new / rr, p)
        rr = rr_new
    return TCGResult(eta, H_eta, max_iters, "max_iters")


# -- trust region ---------------------------------------------------------

_START_STREAM = 1

def _start(data: SampledTensor, ranks, config: SolverConfig, x0: Optional[TuckerTensor]):
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != data.order:
        raise ValueError("one rank per mode is required")
    if x0 is None:
        # separate stream: a problem drawn from the same seed must not double as the start
        seq = np.random.SeedSequence(config.rng_seed, spawn_key=(_START_STREAM,))
        x0 = random_tucker(data.dims, ranks, np.random.default_rng(seq))
    elif x0.dims != data.dims or x0.ranks != ranks:
        raise ValueError("initial point does not match the data dims or ranks")
    x0.check_manifold_point()
    dim = manifold_dimension(data.dims, ranks)
    if len(data) < dim:
        warnings.warn(f"|Omega| = {len(data)} < dim(M_r) = {dim}: minimizers may be nonregular",
                      stacklevel=3)
    return x0, dim


def _converged(lin: Linearization, g0: float, config: SolverConfig) -> bool:
    return lin.grad_norm <= max(config.grad_abs_tol, config.grad_rel_tol * g0)


def trust_region_solve(data: SampledTensor, ranks, config: SolverConfig | None = None,
                       x0: TuckerTensor | None = None):
    """Riemannian trust-region method with truncated-CG inner solves.

    Returns ``(X, trace)``.  Each trace record describes the iterate
    ``X_k`` and the step tried from it.
    """
    config = config or SolverConfig()
    X, dim = _start(data, ranks, config, x0)
    delta_bar, delta = config.radii(dim)
    delta_min = config.delta_min_factor * delta_bar
    kmax = config.tcg_iters(dim)
    objective = Objective(data, config.mu)
    trace = SolverTrace(f"rtr-{config.hessian_model}")

    clock = time.perf_counter()
    lin = objective.linearize(X)
    g0 = lin.grad_norm
    for k in range(config.max_outer_iters + 1):
        rec = IterationRecord(k, lin.f, lin.grad_norm)
        trace.records.append(rec)
        if _converged(lin, g0, config):
            trace.status = "converged"
            break
        if delta < delta_min:
            trace.status = "radius_underflow"
            break
        if k == config.max_outer_iters:
            trace.status = "max_iters"
            break
        tcg = tcg_solve(lin.grad, lin.hessian(config.hessian_model, config.fd_step), delta,
                        config.tcg_kappa, config.tcg_theta, kmax)
        step_norm = tcg.eta.norm()
        predicted = tcg.model_decrease(lin.grad)
        rec.delta, rec.step_norm = delta, step_norm
        rec.inner_iters, rec.stop_reason = tcg.iterations, tcg.stop_reason
        candidate = None
        if predicted <= 1e-15 * abs(lin.f) or not math.isfinite(predicted):
            rho = -math.inf
        else:
            candidate = retract(X, tcg.eta)
            rho = (lin.f - objective.cost(candidate)) / predicted
        rec.rho = rho
        if rho < 0.25:
            delta = delta / 4
        elif rho > 0.75 and tcg.stop_reason in ("boundary", "negative_curvature"):
            delta = min(2 * delta, delta_bar)
        if rho > config.rho_prime:
            rec.accepted = True
            X = candidate
            lin = objective.linearize(X)
        rec.wall_ms = (time.perf_counter() - clock) * 1e3
        log.debug("rtr k=%d f=%.3e |g|=%.3e rho=%.3f delta=%.3e %s", k, rec.f, rec.grad_norm,
                  rho, rec.delta, tcg.stop_reason)
    trace.records[-1].wall_ms = (time.perf_counter() - clock) * 1e3
    return X, trace


# -- first-order baselines -------------------------------------------------

def _exact_step(lin: Linearization, direction: TangentVector) -> float:
    """Minimizer along the straight line ``X + t direction`` of the quadratic cost."""
    pd = lin.sampled.tangent_values(direction)
    mu = lin.objective.mu
    num = float(pd @ lin.residual)
    den = float(pd @ pd)
    if mu:
        num += mu * float(np.vdot(lin.point.core, direction.core_dot))
        den += mu * direction.inner(direction)
    return -num / den if den > 0 else 0.0


def _first_order(data, ranks, config, x0, name, conjugate):
    config = config or SolverConfig()
    X, _ = _start(data, ranks, config, x0)
    objective = Objective(data, config.mu)
    trace = SolverTrace(name)
    clock = time.perf_counter()
    lin = objective.linearize(X)
    g0 = lin.grad_norm
    direction = None
    prev_grad = None
    for k in range(config.max_outer_iters + 1):
        rec = IterationRecord(k, lin.f, lin.grad_norm)
        trace.records.append(rec)
        if _converged(lin, g0, config):
            trace.status = "converged"
            break
        if k == config.max_outer_iters:
            trace.status = "max_iters"
            break
        d = -lin.grad
        if conjugate and direction is not None:
            old_grad = project_to_tangent(X, prev_grad)
            old_dir = project_to_tangent(X, direction)
            beta = max(0.0, lin.grad.inner(lin.grad - old_grad) / prev_grad.inner(prev_grad))
            d = d.axpy(beta, old_dir)
            if d.inner(lin.grad) >= 0:
                d = -lin.grad
        slope = d.inner(lin.grad)
        t = _exact_step(lin, d)
        if not t > 0:
            t = 1.0 / max(d.norm(), 1e-300)
        for _ in range(60):
            candidate = retract(X, d * t)
            f_new = objective.cost(candidate)
            if f_new <= lin.f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            trace.status = "line_search_failed"
            raise LineSearchError(f"{name}: no sufficient decrease at iteration {k}", X, trace)
        rec.step_norm = t * d.norm()
        rec.accepted = True
        prev_grad, direction = lin.grad, d
        X = candidate
        lin = objective.linearize(X)
        rec.wall_ms = (time.perf_counter() - clock) * 1e3
    trace.records[-1].wall_ms = (time.perf_counter() - clock) * 1e3
    return X, trace


def steepest_descent_solve(data: SampledTensor, ranks, config: SolverConfig | None = None,
                           x0: TuckerTensor | None = None):
    """Riemannian steepest descent with exact quadratic initial step and Armijo backtracking."""
    return _first_order(data, ranks, config, x0, "sd", conjugate=False)


def nonlinear_cg_solve(data: SampledTensor, ranks, config: SolverConfig | None = None,
                       x0: TuckerTensor | None = None):
    """Riemannian nonlinear CG (Polak-Ribiere+, restart on non-descent directions).

    Previous gradient and direction are moved by orthogonal projection onto
    the new tangent space.
    """
    return _first_order(data, ranks, config, x0, "rcg", conjugate=True)
