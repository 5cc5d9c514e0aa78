"""Command-line interface: ``precis {estimate,debias,ci,dag,simulate}``.

Exit status 0 on success, 1 on invalid input, 2 on numerical failure. The
output file is only created once the whole computation has succeeded.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

from .core import DataMatrix, Provenance, sample_covariance
from .dag import fit_dag
from .errors import NumericalError, ValidationError
from .glasso import GlassoConfig, solve_graphical_lasso
from .inference import confidence_intervals, debiased_estimate, plain_estimate
from .io import matrix_to_csv, read_config, read_matrix_csv, rows_to_csv
from .nodewise import PRESETS, nodewise_preset, universal_lambda
from .simbench import ExperimentConfig, mle_estimator, run_coverage_experiment, select_lambda_validation, validation_grid

GLASSO_METHODS = {"glasso": "plain", "glasso-weigh": "weighted", "glasso-norm": "normalized"}
METHODS = tuple(GLASSO_METHODS) + tuple(PRESETS) + ("mle",)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _data(args) -> DataMatrix:
    m, _ = read_matrix_csv(args.input)
    if m.ndim != 2:
        raise ValidationError("input must be a matrix")
    return DataMatrix(m)


def _estimate(args, data):
    """(PrecisionEstimate, CovarianceEstimate) for the requested method."""
    cov = sample_covariance(data, center=args.center)
    method = args.method
    if method == "mle":
        return mle_estimator(cov), cov
    lam = args.lam
    if method in PRESETS:
        est = nodewise_preset(cov, method, lam, threads=args.threads)
        return est.as_precision(), cov
    variant = GLASSO_METHODS[method]
    if args.validation is not None:
        val = DataMatrix(read_matrix_csv(args.validation)[0])
        if val.p != data.p:
            raise ValidationError("validation data has a different number of columns")
        grid = [lam] if lam is not None else validation_grid(data.n, data.p, args.grid_points)
        _, _, est = select_lambda_validation(cov, sample_covariance(val, center=args.center), grid, variant)
        return est, cov
    lam = universal_lambda(data.n, data.p) if lam is None else lam
    return solve_graphical_lasso(cov, GlassoConfig(lam, variant)), cov


def _debiased(args, data):
    est, cov = _estimate(args, data)
    if est.provenance in (Provenance.MLE, Provenance.ORACLE):
        return plain_estimate(est, cov.n)
    return debiased_estimate(est, cov, use_correlation=est.provenance is Provenance.GLASSO_NORMALIZED)


def cmd_estimate(args):
    est, _ = _estimate(args, _data(args))
    return matrix_to_csv(est.theta, args.digits)


def cmd_debias(args):
    return matrix_to_csv(_debiased(args, _data(args)).t_hat, args.digits)


def cmd_ci(args):
    deb = _debiased(args, _data(args))
    grid = confidence_intervals(deb, args.alpha)
    p = deb.p
    rows = [(i + 1, j + 1, deb.t_hat[i, j], grid.lower[i, j], grid.upper[i, j], deb.sigma_hat[i, j])
            for i in range(p) for j in range(p)]
    return rows_to_csv(["i", "j", "estimate", "lower", "upper", "sigma_hat"], rows, args.digits)


def _parse_ordering(s, p):
    try:
        order = tuple(int(t) - 1 for t in s.split(","))
    except ValueError:
        raise ValidationError("--known-ordering must be comma-separated node numbers") from None
    if sorted(order) != list(range(p)):
        raise ValidationError(f"--known-ordering must be a permutation of 1..{p}")
    return order


def cmd_dag(args):
    data = _data(args)
    known = _parse_ordering(args.known_ordering, data.p) if args.known_ordering else None
    fit = fit_dag(data, args.lam, args.mode, known_ordering=known, seed=args.seed, threads=args.threads)
    rows = [(k + 1, j + 1, bh, bd, lo, hi) for k, j, bh, bd, lo, hi in fit.intervals(args.alpha)]
    return rows_to_csv(["k", "j", "beta_hat", "b_debiased", "lower", "upper"], rows, args.digits)


def cmd_simulate(args):
    d = read_config(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.threads is not None:
        d["threads"] = args.threads
    table = run_coverage_experiment(ExperimentConfig.from_mapping(d))
    return table.to_csv(args.digits)


def build_parser():
    ap = _Parser(prog="precis", description="Sparse precision matrices, de-biased intervals and DAG edge weights.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=True, help="data CSV, rows are observations")
        p.add_argument("--output", help="output CSV (default: stdout)")
        p.add_argument("--digits", type=int, default=None, help="fixed decimals instead of 17 significant digits")
        p.add_argument("--threads", type=int, default=None)

    for name, fn in (("estimate", cmd_estimate), ("debias", cmd_debias), ("ci", cmd_ci)):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--method", choices=METHODS, default="node-sqrt")
        p.add_argument("--lambda", dest="lam", type=float, default=None, help="default sqrt(log p / n)")
        p.add_argument("--validation", help="validation data CSV; tunes glasso penalties on a grid")
        p.add_argument("--grid-points", type=int, default=20)
        p.add_argument("--center", action="store_true", help="subtract column means first")
        if name == "ci":
            p.add_argument("--alpha", type=float, default=0.05)
        p.set_defaults(func=fn)

    p = sub.add_parser("dag")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--mode", choices=("exhaustive", "greedy"), default="exhaustive")
    p.add_argument("--known-ordering", default=None, help='e.g. "1,3,2"; skips the ordering search')
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dag)

    p = sub.add_parser("simulate")
    common(p, needs_input=False)
    p.add_argument("--config", required=True, help="JSON or key=value experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)
    return ap


def _write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".precis-")
    umask = os.umask(0)
    os.umask(umask)
    try:
        os.fchmod(fd, 0o666 & ~umask)
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", None) is not None:
            os.environ["PRECIS_THREADS"] = str(args.threads)
        text = args.func(args)
        if args.output:
            _write_atomic(args.output, text)
        else:
            sys.stdout.write(text)
    except ValidationError as exc:
        print(f"precis: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"precis: numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"precis: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
