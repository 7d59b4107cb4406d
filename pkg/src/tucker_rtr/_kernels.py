"""Sampled-entry kernels for Tucker tensors.

Every kernel works on factor rows gathered at the sample set: ``rows`` has
shape ``(m, d, r_max)`` with ``rows[w, j, :r_j] = U_j[omega_w[j], :]``.
Core multi-indices are enumerated by ``table`` (shape ``(p, len(modes))``,
row-major order, last listed mode fastest).

Two implementations exist with identical results up to rounding: numba
``@njit`` loops and a numpy path that materializes row-wise Khatri-Rao
products.  The backend is taken from the ``TUCKER_RTR_BACKEND`` environment
variable (``numba`` or ``numpy``) and falls back to numpy when numba cannot
be imported.  :func:`use_backend` switches it at runtime.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

ENV_VAR = "TUCKER_RTR_BACKEND"
BACKENDS = ("numba", "numpy")


def _initial_backend() -> str:
    name = os.environ.get(ENV_VAR, "numba").strip().lower()
    if name not in BACKENDS:
        raise ValueError(f"{ENV_VAR} must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and numba is None:
        return "numpy"
    return name


_backend = _initial_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("numba is not installed")
    _backend = name


@contextlib.contextmanager
def use_backend(name: str):
    old = get_backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(old)


def index_table(ranks) -> np.ndarray:
    ranks = tuple(int(r) for r in ranks)
    return np.ascontiguousarray(np.indices(ranks).reshape(len(ranks), -1).T, dtype=np.int64)


def gather_rows(factors, indices) -> np.ndarray:
    m, d = indices.shape
    rmax = max(U.shape[1] for U in factors)
    rows = np.zeros((m, d, rmax))
    for j, U in enumerate(factors):
        rows[:, j, :U.shape[1]] = U[indices[:, j]]
    return rows


# -- numpy path -----------------------------------------------------------

def _kr_rows(mats):
    W = mats[0]
    m = W.shape[0]
    for B in mats[1:]:
        W = (W[:, :, None] * B[:, None, :]).reshape(m, -1)
    return W


def _slices(rows, ranks, modes):
    return [rows[:, j, :ranks[j]] for j in modes]


def _np_values(rows, ranks, core, core_dot, drows):
    d = len(ranks)
    out = _kr_rows(_slices(rows, ranks, range(d))) @ (core if core_dot is None else core_dot)
    if drows is not None:
        for i in range(d):
            mats = _slices(rows, ranks, range(d))
            mats[i] = drows[:, i, :ranks[i]]
            out += _kr_rows(mats) @ core
    return out


def _np_scatter(rows, ranks, modes, target, vals, nrows, drows):
    mats = _slices(rows, ranks, modes)
    if drows is None:
        W = _kr_rows(mats)
    else:
        W = 0.0
        for s, j in enumerate(modes):
            alt = list(mats)
            alt[s] = drows[:, j, :ranks[j]]
            W = W + _kr_rows(alt)
    out = np.zeros((nrows, W.shape[1]))
    np.add.at(out, target, vals[:, None] * W)
    return out


# -- numba path -----------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True)
    def _nb_contract(core, rows, drows, w, ranks, swap, buf):
        # core (C order) against row w of every factor, last mode first;
        # mode `swap` uses drows instead (-1: none)
        size = core.shape[0]
        for q in range(size):
            buf[q] = core[q]
        for j in range(ranks.shape[0] - 1, -1, -1):
            r = ranks[j]
            size //= r
            src = drows if j == swap else rows
            for a in range(size):
                acc = 0.0
                for b in range(r):
                    acc += buf[a * r + b] * src[w, j, b]
                buf[a] = acc
        return buf[0]

    @numba.njit(cache=True)
    def _nb_values(rows, ranks, core):
        m = rows.shape[0]
        out = np.empty(m)
        buf = np.empty(core.shape[0])
        for w in range(m):
            out[w] = _nb_contract(core, rows, rows, w, ranks, -1, buf)
        return out

    @numba.njit(cache=True)
    def _nb_tangent_values(rows, drows, ranks, core, core_dot):
        m = rows.shape[0]
        d = ranks.shape[0]
        out = np.empty(m)
        buf = np.empty(core.shape[0])
        for w in range(m):
            acc = _nb_contract(core_dot, rows, rows, w, ranks, -1, buf)
            for i in range(d):
                acc += _nb_contract(core, rows, drows, w, ranks, i, buf)
            out[w] = acc
        return out

    @numba.njit(cache=True)
    def _nb_scatter(rows, table, modes, target, vals, nrows):
        m = rows.shape[0]
        p, k = table.shape
        out = np.zeros((nrows, p))
        for w in range(m):
            v = vals[w]
            row = target[w]
            for q in range(p):
                t = v
                for s in range(k):
                    t *= rows[w, modes[s], table[q, s]]
                out[row, q] += t
        return out

    @numba.njit(cache=True)
    def _nb_scatter_tangent(rows, drows, table, modes, target, vals, nrows):
        m = rows.shape[0]
        p, k = table.shape
        out = np.zeros((nrows, p))
        for w in range(m):
            v = vals[w]
            row = target[w]
            for q in range(p):
                acc = 0.0
                for s in range(k):
                    t = drows[w, modes[s], table[q, s]]
                    for u in range(k):
                        if u != s:
                            t *= rows[w, modes[u], table[q, u]]
                    acc += t
                out[row, q] += v * acc
        return out


# -- dispatch -------------------------------------------------------------

def sampled_values(rows, ranks, core):
    """Entries of ``core x_j U_j`` at the gathered samples."""
    core = np.ascontiguousarray(core, dtype=np.float64).reshape(-1)
    if _backend == "numba":
        return _nb_values(rows, np.asarray(ranks, dtype=np.int64), core)
    return _np_values(rows, ranks, core, None, None)


def sampled_tangent_values(rows, drows, ranks, core, core_dot):
    """Entries of ``Cdot x U + sum_i C x_i Udot_i x_{j!=i} U_j`` at the samples."""
    core = np.ascontiguousarray(core, dtype=np.float64).reshape(-1)
    core_dot = np.ascontiguousarray(core_dot, dtype=np.float64).reshape(-1)
    if _backend == "numba":
        return _nb_tangent_values(rows, drows, np.asarray(ranks, dtype=np.int64), core, core_dot)
    return _np_values(rows, ranks, core, core_dot, drows)


def scatter(rows, ranks, modes, target, vals, nrows, drows=None):
    """Contract sampled values against the factor rows of `modes`.

    Returns an ``(nrows, prod r_modes)`` array whose row ``target[w]``
    accumulates ``vals[w]`` times the outer product of the gathered rows.
    With `drows` the product rule is applied: the sum over s of the outer
    products where mode ``modes[s]`` uses `drows` instead of `rows`.
    """
    modes = np.asarray(modes, dtype=np.int64)
    target = np.ascontiguousarray(target, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    sub = tuple(int(ranks[j]) for j in modes)
    if _backend == "numba":
        table = index_table(sub)
        if drows is None:
            return _nb_scatter(rows, table, modes, target, vals, nrows)
        return _nb_scatter_tangent(rows, drows, table, modes, target, vals, nrows)
    return _np_scatter(rows, ranks, list(modes), target, vals, nrows, drows)
