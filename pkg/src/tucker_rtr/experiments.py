"""Synthetic problems and the numerical experiments driven by the CLI.

Every routine takes a seed and draws all of its randomness from one
``numpy.random.Generator`` built from it, so repeated calls give identical
results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .manifold import TangentVector, project_to_tangent, retract, tangent_basis
from .solver import (LineSearchError, Linearization, Objective, SolverConfig, SolverTrace, cost,
                     nonlinear_cg_solve, steepest_descent_solve, trust_region_solve)
from .tensor import RankDeficiencyError, SampledTensor, sample_project
from .tucker import TuckerTensor, random_tucker, sampled_entries, singular_spectrum, to_full

__all__ = [
    "CompletionReport",
    "ModelOrderTable",
    "ProblemSpec",
    "SOLVERS",
    "TRUTH_KINDS",
    "generate_problem",
    "ingest_and_report",
    "make_instance",
    "run_convergence",
    "run_model_order",
    "run_solver",
]

TRUTH_KINDS = ("low_rank", "full_rank", "low_rank_plus_noise")
SOLVERS = ("rtr-exact", "rtr-gn", "rtr-fd", "rcg", "sd")
ZERO_LEVEL = 1e-16


@dataclass(frozen=True)
class ProblemSpec:
    dims: tuple
    rank: tuple
    fraction: float = 0.5
    truth: str = "low_rank"
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "rank", tuple(int(r) for r in self.rank))
        if len(self.dims) < 2 or len(self.rank) != len(self.dims):
            raise ValueError("need d >= 2 dimensions and one rank per mode")
        if any(n < 1 for n in self.dims) or any(not 1 <= r <= n for r, n in zip(self.rank, self.dims)):
            raise ValueError("ranks must satisfy 1 <= r_i <= n_i")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        if self.truth not in TRUTH_KINDS:
            raise ValueError(f"truth must be one of {TRUTH_KINDS}")
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")
        if self.truth == "low_rank_plus_noise" and self.noise == 0:
            object.__setattr__(self, "truth", "low_rank")

    @property
    def sample_count(self) -> int:
        return int(round(self.fraction * math.prod(self.dims)))


def _draw_problem(spec: ProblemSpec, rng: np.random.Generator):
    total = math.prod(spec.dims)
    m = spec.sample_count
    if m < 1:
        raise ValueError(f"fraction {spec.fraction} of {total} entries selects no sample")
    if spec.truth == "full_rank":
        truth = rng.random(spec.dims)
    else:
        truth = to_full(random_tucker(spec.dims, spec.rank, rng))
        if spec.noise > 0:
            truth = truth + spec.noise * rng.standard_normal(spec.dims)
    linear = np.sort(rng.choice(total, size=m, replace=False))
    indices = np.stack(np.unravel_index(linear, spec.dims), axis=1)
    return sample_project(truth, indices), truth


def generate_problem(spec: ProblemSpec):
    """Return ``(data, truth)``: samples of a random ground truth on a uniform random set."""
    return _draw_problem(spec, np.random.default_rng(spec.seed))


def make_instance(spec: ProblemSpec):
    """``(data, truth, x0)``; the start point is drawn from U(0,1) factors after the problem."""
    rng = np.random.default_rng(spec.seed)
    data, truth = _draw_problem(spec, rng)
    return data, truth, random_tucker(spec.dims, spec.rank, rng)


# -- convergence study ----------------------------------------------------

def run_solver(name: str, data: SampledTensor, rank, config: SolverConfig,
               x0: Optional[TuckerTensor] = None):
    """Run one of :data:`SOLVERS`; returns ``(X, trace)``."""
    if name.startswith("rtr-"):
        cfg = SolverConfig(**{**config.__dict__, "hessian_model": name[4:]})
        return trust_region_solve(data, rank, cfg, x0)
    if name == "rcg":
        return nonlinear_cg_solve(data, rank, config, x0)
    if name == "sd":
        return steepest_descent_solve(data, rank, config, x0)
    raise ValueError(f"unknown solver {name!r}; choose from {SOLVERS}")


@dataclass
class SolverRun:
    solver: str
    trace: Optional[SolverTrace]
    point: Optional[TuckerTensor] = None
    error: Optional[str] = None


def run_convergence(spec: ProblemSpec, solvers: Sequence[str] = SOLVERS,
                    config: SolverConfig | None = None) -> list:
    """Run each solver on the same instance from the same start point.

    Solver failures do not stop the study: the partial trace (if any) and
    the error message are kept in the returned :class:`SolverRun`.
    """
    config = config or SolverConfig()
    data, _, x0 = make_instance(spec)
    runs = []
    for name in solvers:
        try:
            X, trace = run_solver(name, data, spec.rank, config, x0)
            runs.append(SolverRun(name, trace, X))
        except LineSearchError as exc:
            runs.append(SolverRun(name, exc.trace, exc.point, str(exc)))
        except (RankDeficiencyError, FloatingPointError) as exc:
            runs.append(SolverRun(name, None, None, str(exc)))
    return runs


# -- model order ----------------------------------------------------------

MODEL_KINDS = ("SD", "N", "GN")
POINT_KINDS = ("stationary", "generic")


@dataclass
class ModelOrderTable:
    """Geometric means of ``e(xi, 2^-(j+1)) / e(xi, 2^-j)``.

    ``ratios[(truth, point, m, kind)]`` is an array over ``j = 0..j_max-1``;
    entries are NaN where every trial hit the numerical zero level.
    ``zero_counts`` has the same keys and counts the excluded trials per j.
    """

    j_max: int
    ratios: dict = field(default_factory=dict)
    zero_counts: dict = field(default_factory=dict)

    def rows(self):
        for key in sorted(self.ratios):
            for j, value in enumerate(self.ratios[key]):
                yield key + (j, value, int(self.zero_counts[key][j]))


def _stationary_residual(X: TuckerTensor, indices: np.ndarray, rng) -> np.ndarray:
    """Random residual on Omega orthogonal to the tangent space restricted to Omega."""
    B = tangent_basis(X)
    lin = np.ravel_multi_index(tuple(indices.T), X.dims)
    B_omega = B[lin]
    z = rng.standard_normal(len(lin))
    Q, s, _ = np.linalg.svd(B_omega, full_matrices=False)
    Q = Q[:, s > 1e-10 * s[0]]
    return z - Q @ (Q.T @ z)


def _unit_tucker(dims, rank, rng) -> TuckerTensor:
    X = random_tucker(dims, rank, rng, distribution="normal")
    return TuckerTensor(X.core / X.norm(), X.factors)


def _model_order_instance(truth: str, point: str, dims, rank, m: int, rng):
    """Point X and data with ``||X|| = 1`` and a residual (or truth) of unit norm."""
    X = _unit_tucker(dims, rank, rng)
    total = math.prod(dims)
    indices = np.stack(np.unravel_index(np.sort(rng.choice(total, m, replace=False)), dims), axis=1)
    x_omega = sampled_entries(X, indices)
    if point == "stationary":
        if truth == "low_rank":
            values = x_omega
        else:
            e = _stationary_residual(X, indices, rng)
            values = x_omega - e / max(np.linalg.norm(e), 1e-300)
    elif truth == "low_rank":
        values = sampled_entries(_unit_tucker(dims, rank, rng), indices)
    else:
        values = rng.standard_normal(dims)[tuple(indices.T)] / math.sqrt(total)
    return X, SampledTensor(tuple(dims), indices, values)


def _cost_increment(lin: Linearization, Y: TuckerTensor) -> float:
    """``f(Y) - f(X)`` without cancelling two large cost values against each other."""
    delta = sampled_entries(Y, lin.objective.data.indices) - lin.sampled.values()
    return float(delta @ (lin.residual + 0.5 * delta))


def run_model_order(dims=(10, 10, 10), rank=(3, 3, 3), sample_sizes=(10, 100, 1000),
                    trials: int = 1000, j_max: int = 10, seed: int = 0,
                    truths=("low_rank", "full_rank"), points=POINT_KINDS) -> ModelOrderTable:
    """Empirical order of the SD, Newton and Gauss-Newton models along the retraction.

    For every (ground truth, point type, |Omega|) a fresh instance is drawn
    per trial together with a unit tangent direction ``xi = P_X(B)``, B
    standard normal.  Model errors ``e(xi, h) = |f(R_X(h xi)) - m(h xi)|``
    are evaluated for ``h = 2^-j``, ``j = 0..j_max``.  Errors below 1e-16
    are treated as numerically zero and left out of the geometric means.
    """
    if trials < 1 or j_max < 2:
        raise ValueError("need trials >= 1 and j_max >= 2")
    rng = np.random.default_rng(seed)
    table = ModelOrderTable(j_max)
    hs = 2.0 ** -np.arange(j_max + 1)
    for truth in truths:
        for point in points:
            for m in sample_sizes:
                logs = {k: np.zeros(j_max) for k in MODEL_KINDS}
                counts = {k: np.zeros(j_max, dtype=int) for k in MODEL_KINDS}
                zeros = {k: np.zeros(j_max, dtype=int) for k in MODEL_KINDS}
                for _ in range(trials):
                    X, data = _model_order_instance(truth, point, dims, rank, m, rng)
                    lin = Linearization(Objective(data), X)
                    xi = project_to_tangent(X, rng.standard_normal(tuple(dims)))
                    xi = xi / xi.norm()
                    slope = lin.grad.inner(xi)
                    quad = {"SD": 0.0, "N": lin.exact(xi).inner(xi),
                            "GN": lin.gauss_newton(xi).inner(xi)}
                    df = np.array([_cost_increment(lin, retract(X, xi * h)) for h in hs])
                    for kind in MODEL_KINDS:
                        e = np.abs(df - (hs * slope + 0.5 * hs ** 2 * quad[kind]))
                        ok = (e[:-1] >= ZERO_LEVEL) & (e[1:] >= ZERO_LEVEL)
                        logs[kind][ok] += np.log(e[1:][ok] / e[:-1][ok])
                        counts[kind] += ok
                        zeros[kind] += ~ok
                for kind in MODEL_KINDS:
                    with np.errstate(invalid="ignore", divide="ignore"):
                        mean = np.where(counts[kind] > 0, np.exp(logs[kind] / counts[kind]), np.nan)
                    table.ratios[(truth, point, m, kind)] = mean
                    table.zero_counts[(truth, point, m, kind)] = zeros[kind]
    return table


# -- file ingestion -------------------------------------------------------

@dataclass
class CompletionReport:
    spectra: Optional[list]
    trace: Optional[SolverTrace]
    point: Optional[TuckerTensor]
    train_size: int
    test_size: int
    test_rel_error: float
    error: Optional[str] = None


def holdout_split(data: SampledTensor, holdout: float, rng: np.random.Generator):
    if not 0 <= holdout < 1:
        raise ValueError("holdout fraction must lie in [0, 1)")
    n_test = int(round(holdout * len(data)))
    if len(data) - n_test < 1:
        raise ValueError("no samples left for training")
    mask = np.zeros(len(data), dtype=bool)
    mask[rng.choice(len(data), n_test, replace=False)] = True
    return data.subset(~mask), (data.subset(mask) if n_test else None)


def ingest_and_report(data: SampledTensor, rank, holdout: float = 0.5, seed: int = 0,
                      solver: str = "rtr-exact", config: SolverConfig | None = None
                      ) -> CompletionReport:
    """Singular spectra (for fully sampled data) and a completion run on a random split.

    A fraction `holdout` of the known entries is hidden from the solver and
    used to measure the relative error ``||x - a||/||a||`` on those entries.
    """
    spectra = singular_spectrum(data.to_dense()) if data.is_full() else None
    rng = np.random.default_rng(seed)
    train, test = holdout_split(data, holdout, rng)
    config = config or SolverConfig(rng_seed=seed)
    x0 = random_tucker(data.dims, rank, rng)
    try:
        X, trace = run_solver(solver, train, rank, config, x0)
        err = None
    except LineSearchError as exc:
        X, trace, err = exc.point, exc.trace, str(exc)
    rel = math.nan
    if test is not None and X is not None:
        diff = sampled_entries(X, test.indices) - test.values
        rel = float(np.linalg.norm(diff) / max(np.linalg.norm(test.values), 1e-300))
    return CompletionReport(spectra, trace, X, len(train), 0 if test is None else len(test), rel, err)
