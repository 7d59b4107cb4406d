"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings

import numpy as np

from .experiments import (SOLVERS, ProblemSpec, generate_problem, ingest_and_report,
                          make_instance, run_convergence, run_model_order, run_solver)
from .io import TensorFileError, read_tensor_file, write_trace, format_tensor_file
from .solver import LineSearchError, SolverConfig
from .tensor import RankDeficiencyError, SampledTensor
from .tucker import singular_spectrum

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

_HESSIANS = {"exact": "exact", "gn": "gauss_newton", "fd": "fd"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_tuple(text: str) -> tuple:
    try:
        out = tuple(int(tok) for tok in text.replace("x", ",").split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return out


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("problem")
    g.add_argument("--dims", type=_int_tuple, default=(20, 20, 20), help="e.g. 20,20,20")
    g.add_argument("--rank", type=_int_tuple, default=(2, 2, 2), help="e.g. 2,2,2")
    g.add_argument("--fraction", type=float, default=0.5, help="sampled fraction of entries")
    g.add_argument("--noise", type=float, default=0.0, help="std of additive Gaussian noise")
    g.add_argument("--truth", choices=("low_rank", "full_rank"), default="low_rank")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--input", metavar="PATH", help="TensorFile with known entries")
    s = p.add_argument_group("solver")
    s.add_argument("--solver", choices=("rtr", "rcg", "sd"), default="rtr")
    s.add_argument("--hessian", choices=tuple(_HESSIANS), default="exact")
    s.add_argument("--tol", type=float, default=1e-12, help="relative gradient tolerance")
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--trace", metavar="PATH", help="write the CSV iteration trace here")
    s.add_argument("--timing", action="store_true", help="fill the wall_ms column (not reproducible)")
    s.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="tucker-rtr",
                     description="Low-rank Tucker tensor completion by Riemannian optimization.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic sampled tensor")
    p.add_argument("--output", "-o", metavar="PATH", help="TensorFile to write (default stdout)")

    p = sub.add_parser("complete", parents=[common], help="complete a sampled tensor")
    p.add_argument("--holdout", type=float, default=0.0,
                   help="fraction of known entries hidden from the solver for validation")

    p = sub.add_parser("model-order", parents=[common], help="empirical order of the quadratic models")
    p.add_argument("--samples", type=_int_tuple, default=(10, 100, 1000), help="|Omega| values")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--j-max", type=int, default=10)
    p.add_argument("--output", "-o", metavar="PATH", help="CSV table (default stdout)")

    p = sub.add_parser("convergence", parents=[common], help="compare solvers on one instance")
    p.add_argument("--solvers", default=",".join(SOLVERS),
                   help=f"comma separated subset of {','.join(SOLVERS)}")

    p = sub.add_parser("spectrum", parents=[common], help="singular values of all matricizations")
    p.add_argument("--output", "-o", metavar="PATH", help="CSV (default stdout)")
    return parser


# -- helpers --------------------------------------------------------------

def _spec(args) -> ProblemSpec:
    truth = args.truth
    if args.noise > 0 and truth == "low_rank":
        truth = "low_rank_plus_noise"
    try:
        return ProblemSpec(args.dims, args.rank, args.fraction, truth, args.noise, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config(args, hessian=None) -> SolverConfig:
    if args.max_iter < 0 or not args.tol >= 0:
        raise UsageError("--tol and --max-iter must be nonnegative")
    return SolverConfig(hessian_model=hessian or _HESSIANS[args.hessian], grad_rel_tol=args.tol,
                        max_outer_iters=args.max_iter, rng_seed=args.seed)


def _solver_name(args) -> str:
    return f"rtr-{args.hessian}" if args.solver == "rtr" else args.solver


def _load(args) -> SampledTensor:
    try:
        return read_tensor_file(args.input)
    except OSError as exc:
        raise DataError(f"cannot read {args.input}: {exc.strerror or exc}") from None
    except TensorFileError as exc:
        raise DataError(f"{args.input}: {exc}") from None


def _data(args):
    """``(data, x0)``; synthetic problems come with the start point that `convergence` uses."""
    if args.input:
        data = _load(args)
        if len(args.rank) != data.order:
            raise UsageError(f"--rank needs {data.order} entries for this input")
        if any(r > n for r, n in zip(args.rank, data.dims)):
            raise UsageError(f"--rank {args.rank} exceeds dims {data.dims}")
        return data, None
    data, _, x0 = make_instance(_spec(args))
    return data, x0


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _trace_path(base: str, solver: str) -> str:
    root, ext = os.path.splitext(base)
    return f"{root}-{solver}{ext or '.csv'}"


def _summary(name: str, trace, error=None) -> str:
    if trace is None or not trace.records:
        return f"{name}: failed ({error})"
    last = trace.records[-1]
    g = trace.grad_rel()[-1]
    text = (f"{name}: status={trace.status or 'failed'} iterations={last.iteration} "
            f"f={last.f:.6e} grad_rel={g:.3e}")
    return text + (f" error={error}" if error else "")


# -- commands -------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = _spec(args)
    data, _ = generate_problem(spec)
    comment = (f"synthetic {spec.truth} dims={','.join(map(str, spec.dims))} "
               f"rank={','.join(map(str, spec.rank))} fraction={spec.fraction!r} "
               f"noise={spec.noise!r} seed={spec.seed}")
    out, close = _open_out(args.output)
    try:
        out.write(format_tensor_file(data, comment))
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_complete(args) -> int:
    if not 0 <= args.holdout < 1:
        raise UsageError("--holdout must lie in [0, 1)")
    data, x0 = _data(args)
    config = _config(args)
    name = _solver_name(args)
    if args.holdout > 0:
        report = ingest_and_report(data, args.rank, args.holdout, args.seed, name, config)
        trace, error = report.trace, report.error
        extra = f"holdout_rel_error={report.test_rel_error:.3e} train={report.train_size} test={report.test_size}"
    else:
        try:
            _, trace = run_solver(name, data, args.rank, config, x0)
            error = None
        except LineSearchError as exc:
            trace, error = exc.trace, str(exc)
        extra = None
    if args.trace and trace is not None:
        write_trace(args.trace, trace, args.timing)
    print(_summary(name, trace, error))
    if extra:
        print(extra)
    return EXIT_SOLVER if error else EXIT_OK


def cmd_model_order(args) -> int:
    if args.input:
        raise UsageError("model-order draws its own instances; --input is not accepted")
    if args.trials < 1 or args.j_max < 2:
        raise UsageError("need --trials >= 1 and --j-max >= 2")
    if any(m > np.prod(args.dims) for m in args.samples):
        raise UsageError("--samples exceeds the number of entries")
    table = run_model_order(args.dims, args.rank, args.samples, args.trials, args.j_max, args.seed)
    out, close = _open_out(args.output)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["truth", "point", "samples", "model", "j", "ratio", "zero_trials"])
        for truth, point, m, kind, j, value, zeros in table.rows():
            writer.writerow([truth, point, m, kind, j, repr(float(value)), zeros])
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_convergence(args) -> int:
    if args.input:
        raise UsageError("convergence draws its own instance; use 'complete' for files")
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    unknown = [s for s in solvers if s not in SOLVERS]
    if unknown or not solvers:
        raise UsageError(f"unknown solver(s) {unknown}; choose from {','.join(SOLVERS)}")
    runs = run_convergence(_spec(args), solvers, _config(args))
    failed = False
    for run in runs:
        if args.trace and run.trace is not None:
            write_trace(_trace_path(args.trace, run.solver), run.trace, args.timing)
        print(_summary(run.solver, run.trace, run.error))
        failed |= run.error is not None
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_spectrum(args) -> int:
    if args.input:
        data = _load(args)
        if not data.is_full():
            raise DataError(f"{args.input}: spectrum needs a fully sampled tensor "
                            f"({len(data)} of {int(np.prod(data.dims))} entries known)")
        dense = data.to_dense()
    else:
        spec = _spec(args)
        _, dense = generate_problem(spec)
    out, close = _open_out(args.output)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["mode", "index", "sigma", "relative"])
        for mode, s in enumerate(singular_spectrum(dense), start=1):
            top = s[0] if s.size and s[0] > 0 else 1.0
            for k, value in enumerate(s, start=1):
                writer.writerow([mode, k, repr(float(value)), repr(float(value / top))])
    finally:
        if close:
            out.close()
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "complete": cmd_complete,
    "model-order": cmd_model_order,
    "convergence": cmd_convergence,
    "spectrum": cmd_spectrum,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tucker-rtr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"tucker-rtr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (LineSearchError, RankDeficiencyError, FloatingPointError) as exc:
        print(f"tucker-rtr: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"tucker-rtr: {exc}", file=sys.stderr)
        return EXIT_DATA
