"""TensorFile reading/writing and CSV solver traces.

TensorFile grammar (line oriented, whitespace separated)::

    file    := { comment | blank } header { comment | blank | record }
    header  := d n_1 ... n_d
    record  := i_1 ... i_d value          (1-based indices)
    comment := '#' anything

Values are written with ``repr`` so that a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import io
import math
import os
from typing import Iterable, TextIO, Union

import numpy as np

from .solver import IterationRecord, SolverTrace
from .tensor import SampledTensor

__all__ = [
    "TRACE_COLUMNS",
    "TRACE_SCHEMA_VERSION",
    "TensorFileError",
    "format_trace",
    "read_tensor_file",
    "read_trace",
    "write_tensor_file",
    "write_trace",
]

PathLike = Union[str, os.PathLike]

TRACE_SCHEMA_VERSION = 1
TRACE_COLUMNS = ("iter", "f", "grad_rel", "delta", "rho", "accepted", "inner_iters", "wall_ms")


class TensorFileError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _content_lines(lines: Iterable[str]):
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            yield lineno, text.split()


def parse_tensor_file(stream: TextIO) -> SampledTensor:
    lines = _content_lines(stream)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise TensorFileError("missing header") from None
    try:
        numbers = [int(tok) for tok in head]
    except ValueError:
        raise TensorFileError("header must contain integers", lineno) from None
    d = numbers[0]
    if d < 2 or len(numbers) != d + 1 or min(numbers[1:]) < 1:
        raise TensorFileError("header must read 'd n_1 ... n_d' with d >= 2", lineno)
    dims = tuple(numbers[1:])
    indices, values, seen = [], [], {}
    for lineno, tokens in lines:
        if len(tokens) != d + 1:
            raise TensorFileError(f"expected {d} indices and a value, got {len(tokens)} fields", lineno)
        try:
            idx = tuple(int(tok) - 1 for tok in tokens[:d])
            value = float(tokens[d])
        except ValueError:
            raise TensorFileError("malformed record", lineno) from None
        if any(not 0 <= k < n for k, n in zip(idx, dims)):
            raise TensorFileError(f"index {tuple(k + 1 for k in idx)} out of bounds", lineno)
        if not math.isfinite(value):
            raise TensorFileError("value is not finite", lineno)
        if idx in seen:
            raise TensorFileError(f"duplicate index (first given on line {seen[idx]})", lineno)
        seen[idx] = lineno
        indices.append(idx)
        values.append(value)
    if not indices:
        raise TensorFileError("no entries")
    return SampledTensor.from_entries(dims, np.array(indices), np.array(values))


def read_tensor_file(path: PathLike) -> SampledTensor:
    with open(path, encoding="utf-8") as fh:
        return parse_tensor_file(fh)


def format_tensor_file(data: SampledTensor, comment: str | None = None) -> str:
    out = io.StringIO()
    if comment:
        for line in comment.splitlines():
            out.write(f"# {line}\n")
    out.write(" ".join(str(k) for k in (data.order,) + data.dims) + "\n")
    for idx, value in zip(data.indices.tolist(), data.values.tolist()):
        out.write(" ".join(str(k + 1) for k in idx) + f" {value!r}\n")
    return out.getvalue()


def write_tensor_file(path: PathLike, data: SampledTensor, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_tensor_file(data, comment))


def _num(x: float) -> str:
    return repr(float(x))


def format_trace(trace: SolverTrace, timing: bool = False) -> str:
    """CSV text of a trace.

    The first line is a ``#`` comment carrying the schema version and the
    solver name.  ``wall_ms`` is left empty unless `timing` is set, so that
    identical runs produce identical files.
    """
    out = io.StringIO()
    out.write(f"# schema={TRACE_SCHEMA_VERSION} solver={trace.solver} status={trace.status}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    g0 = trace.grad0
    for rec in trace.records:
        writer.writerow([
            rec.iteration,
            _num(rec.f),
            _num(rec.grad_norm / g0 if g0 > 0 else 0.0),
            _num(rec.delta),
            _num(rec.rho),
            int(rec.accepted),
            rec.inner_iters,
            _num(rec.wall_ms) if timing else "",
        ])
    return out.getvalue()


def write_trace(path: PathLike, trace: SolverTrace, timing: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_trace(trace, timing))


def read_trace(path: PathLike) -> SolverTrace:
    """Parse a CSV trace.  ``grad_norm`` is restored relative to the first row (so ``grad0 = 1``)."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        meta = dict(item.split("=", 1) for item in first.lstrip("#").split())
        if int(meta.get("schema", -1)) != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema in {path}")
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace columns {reader.fieldnames}")
        trace = SolverTrace(meta.get("solver", ""), status=meta.get("status", ""))
        for row in reader:
            trace.records.append(IterationRecord(
                iteration=int(row["iter"]),
                f=float(row["f"]),
                grad_norm=float(row["grad_rel"]),
                delta=float(row["delta"]),
                rho=float(row["rho"]),
                accepted=bool(int(row["accepted"])),
                inner_iters=int(row["inner_iters"]),
                wall_ms=float(row["wall_ms"]) if row["wall_ms"] else math.nan,
            ))
    return trace
