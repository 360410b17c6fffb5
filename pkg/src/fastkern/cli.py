"""``fastkern`` command-line interface.

Exit codes: 0 success, 1 parse error (flags or input files), 2 invalid
hyperparameters, dimension mismatch or out-of-range coordinates, 3 solver
non-convergence (the model is still written and flagged).
"""
from __future__ import annotations

import argparse
import csv
import math
import statistics
import sys
import time
import tracemalloc

import numpy as np

from . import experiments as ex
from .fitting import DEFAULT_EPS, assemble, fit, grid_search_lambda, predict
from .fourier_grid import BoxDomain, DiffOperatorSpec, default_half_period, schedule_hyperparams
from .model import FittedModel, SampleSet, atomic_write_text
from .plot import loglog_svg
from .solvers import CgConfig
from .validation import OutOfDomainError

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_NOCONV = 0, 1, 2, 3

PDE_HELP = (
    'differential operator as comma-separated "coef:alpha" terms, alpha being one '
    'derivative order per dimension without separators; "1:1,-1:0" is f\' - f in 1-D, '
    '"1:20,1:02" the 2-D Laplacian'
)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_PARSE, f"{self.prog}: error: {message}\n")


# -- small parsers --------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    vals = _float_list(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _auto_or_float(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None


def _auto_or_int(text: str):
    v = _auto_or_float(text)
    if v != "auto" and v != int(v):
        raise argparse.ArgumentTypeError(f"expected 'auto' or an integer, got {text!r}")
    return v if v == "auto" else int(v)


def parse_lambda_grid(text: str) -> np.ndarray:
    """``"start:stop:count,log"`` or ``"start:stop:count,lin"`` (``log`` is the default)."""
    spec, _, scale = text.partition(",")
    scale = scale.strip() or "log"
    try:
        start, stop, count = spec.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'start:stop:count[,log|lin]', got {text!r}") from None
    if count < 1:
        raise argparse.ArgumentTypeError(f"grid count must be >= 1, got {count}")
    if scale == "log":
        if start <= 0 or stop <= 0:
            raise argparse.ArgumentTypeError("log grids need positive endpoints")
        return np.geomspace(start, stop, count)
    if scale == "lin":
        return np.linspace(start, stop, count)
    raise argparse.ArgumentTypeError(f"grid scale must be 'log' or 'lin', got {scale!r}")


def read_dataset(path, require_y: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a CSV with header ``x1,...,xd[,y]``."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc.strerror}", EXIT_PARSE) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CliError(f"{path}: empty file", EXIT_PARSE)
        header = [h.strip() for h in header]
        has_y = bool(header) and header[-1] == "y"
        xcols = header[:-1] if has_y else header
        if require_y and not has_y:
            raise CliError(f"{path}: last column must be 'y'", EXIT_PARSE)
        if not xcols or xcols != [f"x{i + 1}" for i in range(len(xcols))]:
            raise CliError(f"{path}: feature columns must be named x1..xd, got {','.join(xcols)}", EXIT_PARSE)
        rows = []
        for lineno, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise CliError(f"{path}: row {lineno} has {len(rec)} columns, expected {len(header)}", EXIT_PARSE)
            vals = []
            for col, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise CliError(f"{path}: row {lineno} column {col}: cannot parse {cell!r}", EXIT_PARSE) from None
                if not math.isfinite(v):
                    raise CliError(f"{path}: row {lineno} column {col}: non-finite value {cell!r}", EXIT_PARSE)
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise CliError(f"{path}: no data rows", EXIT_PARSE)
    data = np.asarray(rows, dtype=float)
    d = len(xcols)
    return data[:, :d], (data[:, d] if has_y else None)


def write_dataset(path, X, y=None) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    header = [f"x{i + 1}" for i in range(X.shape[1])] + (["y"] if y is not None else [])
    lines = [",".join(header)]
    for j in range(X.shape[0]):
        vals = list(X[j]) + ([y[j]] if y is not None else [])
        lines.append(",".join(repr(float(v)) for v in vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _emit(args, **kv) -> None:
    if args.quiet:
        return
    for k, v in kv.items():
        if isinstance(v, float):
            v = f"{v:.10g}"
        elif isinstance(v, bool):
            v = str(v).lower()
        print(f"{k}={v}")


def _threads(args) -> int:
    import numba

    avail = numba.config.NUMBA_NUM_THREADS
    k = avail if args.threads == 0 else min(args.threads, avail)
    numba.set_num_threads(k)
    return k


# -- estimator setup shared by fit and gridsearch --------------------------------

def _resolve(args, X, y):
    kind = ex.ESTIMATOR_NAMES[args.estimator]
    L = default_half_period(X) if args.L == "auto" else float(args.L)
    try:
        samples = SampleSet(X, y, L)
    except OutOfDomainError as exc:
        raise CliError(_domain_message(exc), EXIT_INVALID) from None
    extra = {}
    if kind in ("pik_box", "pik_collocation"):
        if not args.pde:
            raise CliError(f"--estimator {args.estimator} requires --pde", EXIT_INVALID)
        try:
            extra["op"] = DiffOperatorSpec.parse(args.pde, samples.d)
        except ValueError as exc:
            raise CliError(f"--pde: {exc}", EXIT_INVALID) from None
        extra["mu"] = args.mu
        if kind == "pik_box":
            if not args.box:
                raise CliError("--estimator pik-box requires --box", EXIT_INVALID)
            try:
                extra["box"] = BoxDomain.parse(args.box, L)
            except ValueError as exc:
                raise CliError(f"--box: {exc}", EXIT_INVALID) from None
        else:
            if not args.colloc_file:
                raise CliError("--estimator pik-colloc requires --colloc-file", EXIT_INVALID)
            C, _ = read_dataset(args.colloc_file, require_y=False)
            extra["collocation"] = C
    return kind, samples, extra


def _domain_message(exc: OutOfDomainError) -> str:
    rows = ", ".join(str(r + 1) for r in exc.rows[:20])
    more = "" if exc.rows.size <= 20 else f" (+{exc.rows.size - 20} more)"
    return f"{exc.rows.size} data row(s) outside [-{exc.L}, {exc.L}]^d (1-based): {rows}{more}"


def _schedule(args, kind, samples):
    try:
        m_auto, lam_auto = schedule_hyperparams(samples.n, args.s, samples.d, kind)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    m = m_auto if args.m == "auto" else args.m
    lam = lam_auto if getattr(args, "lam", "auto") == "auto" else args.lam
    return m, lam


def cmd_fit(args) -> int:
    X, y = read_dataset(args.input)
    kind, samples, extra = _resolve(args, X, y)
    m, lam = _schedule(args, kind, samples)
    threads = _threads(args)
    t0 = time.perf_counter()
    try:
        model = fit(samples, kind, args.s, lam, m, cg=CgConfig(tol=args.cg_tol), eps=args.tol, **extra)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    wall = time.perf_counter() - t0
    model.info["converged"] = model.report.converged
    model.save(args.output)
    _emit(args, n=samples.n, d=samples.d, m=model.m, L=model.L, s=float(model.s), **{"lambda": model.lam},
          cg_iters=model.report.iterations, residual=model.report.residual, converged=model.report.converged,
          wall_seconds=wall, threads=threads, output=args.output)
    if not model.report.converged:
        print(f"fastkern: CG did not reach tolerance {args.cg_tol:g}; model written and flagged", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model = FittedModel.load(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read model {args.model}: {exc}", EXIT_PARSE) from None
    X, _ = read_dataset(args.input, require_y=False)
    if X.shape[1] != model.d:
        raise CliError(f"input has {X.shape[1]} feature columns, model expects {model.d}", EXIT_INVALID)
    _threads(args)
    try:
        yhat = predict(model, X, eps=min(args.tol, 1e-12))
    except OutOfDomainError as exc:
        raise CliError(_domain_message(exc), EXIT_INVALID) from None
    atomic_write_text(args.output, "yhat\n" + "".join(f"{v!r}\n" for v in map(float, yhat)))
    _emit(args, n=X.shape[0], d=model.d, output=args.output)
    return EXIT_OK


def cmd_experiment(args) -> int:
    threads = _threads(args)
    try:
        cfg = ex.ExperimentConfig(
            scenario=args.scenario, n_grid=args.n_grid, s_grid=args.s_grid, estimators=args.estimators,
            resamples=args.resamples, seed=args.seed, n_test=args.n_test, lam=args.lam, m=args.m, mu=args.mu,
            eps=args.tol, cg_tol=args.cg_tol, output=args.out_csv,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    sink = None
    try:
        if args.out_csv:
            sink = ex.IncrementalCsv(args.out_csv)
        rows = ex.run_rate_experiment(cfg, on_row=sink)
        if sink is not None:
            sink.finish(rows)
    except OSError as exc:
        print(f"fastkern: I/O failure: {exc}", file=sys.stderr)
        return EXIT_PARSE
    sc = ex.SCENARIOS[args.scenario]
    stats = ex.summarize(rows)
    series = {}
    for (est, s, n), (mean, se, count) in stats.items():
        series.setdefault((est, s), []).append((n, mean))
    _emit(args, scenario=args.scenario, rows=len(rows), failed=sum(not r.converged for r in rows), threads=threads)
    for (est, s), line in series.items():
        slope = ex.fit_log_slope(line) if len(line) >= 2 else float("nan")
        _emit(args, **{f"slope[{est},s={s:g}]": slope})
    if args.plot:
        first_est, first_s = next(iter(series))
        ref = ex.theoretical_slope(first_s, sc.d, first_est)
        svg = loglog_svg({f"{e} s={s:g}": line for (e, s), line in series.items()},
                         reference=(ref, f"slope {ref:.3g}"), title=args.scenario)
        try:
            atomic_write_text(args.plot, svg)
        except OSError as exc:
            print(f"fastkern: I/O failure: {exc}", file=sys.stderr)
            return EXIT_PARSE
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    X, y = read_dataset(args.input)
    kind, samples, extra = _resolve(args, X, y)
    m, _ = _schedule(args, kind, samples)
    threads = _threads(args)
    if not 0 < args.val_frac < 1:
        raise CliError(f"--val-frac must lie in (0, 1), got {args.val_frac}", EXIT_INVALID)
    try:
        res = grid_search_lambda(samples, args.lambda_grid, kind, args.s, m, val_frac=args.val_frac, seed=args.seed,
                                 cg=CgConfig(tol=args.cg_tol), eps=args.tol, **extra)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    if not args.quiet:
        print("lambda,val_mse")
        for lam, mse in res.table:
            print(f"{lam:.10g},{mse:.10g}")
    res.model.info["converged"] = res.model.report.converged
    res.model.save(args.output)
    best_mse = dict(res.table)[res.best_lambda]
    _emit(args, best_lambda=res.best_lambda, best_val_mse=best_mse, m=m, n_train=res.train_index.size,
          n_val=res.val_index.size, total_seconds=res.timings["total_seconds"],
          per_lambda_seconds=res.timings["per_lambda_seconds"], threads=threads, output=args.output)
    if not res.model.report.converged:
        print("fastkern: CG did not converge for the selected lambda; model written and flagged", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


# -- bench ------------------------------------------------------------------------

def _median_time(fn, repeats: int) -> list[float]:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return times


def _peak_bytes(fn) -> int:
    tracemalloc.start()
    try:
        fn()
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def _bench_case(component: str, size: int, rng, args):
    """Return ``(callable, extra info dict)`` for one benchmark size."""
    from .nufft import NufftPlan
    from .toeplitz import ToeplitzOperator

    if component == "nufft":
        t = rng.uniform(-np.pi, np.pi, size)
        c = rng.standard_normal(size) + 0j
        plan = NufftPlan(2 * 32 + 1, args.tol)
        return (lambda: plan.type1(t, c)), {}
    if component == "toeplitz":
        m = size
        g = rng.standard_normal(4 * m + 1) + 1j * rng.standard_normal(4 * m + 1)
        g = 0.5 * (g + np.conj(g[::-1]))
        op = ToeplitzOperator(g, hermitian=True)
        v = rng.standard_normal(op.dim) + 0j
        fast = lambda: op.apply(v)  # noqa: E731
        extra = {}
        if op.dim <= 4096:
            dense = op.to_dense()
            t_fast = statistics.median(_median_time(fast, 50))
            t_dense = statistics.median(_median_time(lambda: dense @ v, 50))
            extra["dense_speedup"] = t_dense / t_fast
        return fast, extra
    if component == "cg":
        m = size
        samples, _ = ex.generate("sobolev1d", 10_000, rng)
        eq = assemble(samples, "sobolev", 1.0, m, eps=args.tol)
        return (lambda: eq.solve(1e-4, CgConfig(tol=args.cg_tol))), {}
    if component == "fit":
        samples, _ = ex.generate("sobolev1d", size, rng)
        m, lam = schedule_hyperparams(size, 1.0, 1, "sobolev")
        return (lambda: fit(samples, "sobolev", 1.0, lam, m, cg=CgConfig(tol=args.cg_tol), eps=args.tol)), {"m": m}
    raise CliError(f"unknown component {component!r}", EXIT_INVALID)


def cmd_bench(args) -> int:
    threads = _threads(args)
    rng = np.random.default_rng(args.seed)
    results = []
    for size in args.sizes:
        fn, extra = _bench_case(args.component, size, rng, args)
        fn()  # warm-up, includes JIT compilation
        times = _median_time(fn, args.repeats)
        peak = _peak_bytes(fn)
        med = statistics.median(times)
        results.append((size, med, min(times), peak, extra))
        _emit(args, **{f"size[{size}]": f"median_seconds={med:.6g} peak_bytes={peak}"
                       + "".join(f" {k}={v:.6g}" for k, v in extra.items())})
    lines = ["component,size,median_seconds,min_seconds,peak_bytes,threads,time_ratio,memory_ratio,dense_speedup"]
    ok = True
    for i, (size, med, mn, peak, extra) in enumerate(results):
        if i:
            psize, pmed, _, ppeak, _ = results[i - 1]
            tr, mr = med / pmed, peak / max(ppeak, 1)
            if args.component == "fit" and size == 10 * psize:
                ok &= tr <= 13.0 and mr <= 12.0
        else:
            tr = mr = float("nan")
        speedup = extra.get("dense_speedup", float("nan"))
        lines.append(f"{args.component},{size},{med:.10g},{mn:.10g},{peak},{threads},{tr:.10g},{mr:.10g},{speedup:.10g}")
    if args.out_csv:
        atomic_write_text(args.out_csv, "\n".join(lines) + "\n")
    if not args.quiet:
        print("\n".join(lines))
    if args.component == "fit":
        _emit(args, scaling_ok=ok)
        if not ok:
            print("fastkern: per-decade time ratio above 13 or memory ratio above 12", file=sys.stderr)
    _emit(args, threads=threads)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands accept the same flags; SUPPRESS keeps them from overriding the top-level values
    def add(flag, default, help, **kw):
        if suppress:
            p.add_argument(flag, default=argparse.SUPPRESS, help=f"{help} (default: {default})", **kw)
        else:
            p.add_argument(flag, default=default, help=help, **kw)

    add("--seed", 0, "random seed for splits, experiments and benchmarks", type=int)
    add("--threads", 0, "worker threads; 0 uses all cores", type=int)
    add("--tol", DEFAULT_EPS, "NUFFT tolerance", type=float)
    add("--cg-tol", 1e-8, "relative residual tolerance for CG", type=float)
    add("--quiet", False, "suppress key=value output", action="store_true")


def _estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="CSV with columns x1..xd,y")
    p.add_argument("--estimator", choices=list(ex.ESTIMATOR_NAMES), default="sobolev", help="estimator kind")
    p.add_argument("--s", type=float, default=2.0, help="smoothness parameter")
    p.add_argument("--m", type=_auto_or_int, default="auto", help="truncation level, or auto")
    p.add_argument("--L", type=_auto_or_float, default="auto", help="half-period, or auto for max(1, max|x|)")
    p.add_argument("--mu", type=float, default=1.0, help="weight of the physics penalty")
    p.add_argument("--pde", default=None, help=PDE_HELP)
    p.add_argument("--box", default=None, help='penalty box "a1,b1;a2,b2;..." (pik-box)')
    p.add_argument("--colloc-file", default=None, help="CSV with columns x1..xd of collocation points (pik-colloc)")
    p.add_argument("--output", required=True, help="model JSON to write")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="fastkern", description="Fourier-feature kernel regression with NUFFT-assembled normal equations.",
                     formatter_class=fmt, epilog="exit codes: 0 ok, 1 parse error, 2 invalid input, 3 no convergence")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", parents=[common], formatter_class=fmt, help="fit a model to a CSV dataset")
    _estimator_flags(p)
    p.add_argument("--lambda", dest="lam", type=_auto_or_float, default="auto", help="ridge parameter, or auto")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], formatter_class=fmt, help="predict with a saved model")
    p.add_argument("--model", required=True, help="model JSON")
    p.add_argument("--input", required=True, help="CSV with columns x1..xd (a trailing y column is ignored)")
    p.add_argument("--output", required=True, help="CSV with one yhat column")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", parents=[common], formatter_class=fmt, help="run a synthetic rate experiment")
    p.add_argument("--scenario", choices=list(ex.SCENARIOS), required=True)
    p.add_argument("--n-grid", type=_int_list, default=[1000, 10000], help="comma-separated sample sizes")
    p.add_argument("--s-grid", type=_float_list, default=[1.0], help="comma-separated smoothness values")
    p.add_argument("--estimators", type=lambda t: [e.strip() for e in t.split(",") if e.strip()], default=["sobolev"],
                   help=f"comma-separated subset of {','.join(ex.ESTIMATOR_NAMES)}")
    p.add_argument("--resamples", type=int, default=1)
    p.add_argument("--n-test", type=int, default=10_000, help="test-set size")
    p.add_argument("--lambda", dest="lam", type=_auto_or_float, default="auto")
    p.add_argument("--m", type=_auto_or_int, default="auto")
    p.add_argument("--mu", type=float, default=1.0, help="physics weight for pik estimators")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--plot", default=None, help="SVG file for a log-log plot of mean MSE against n")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gridsearch", parents=[common], formatter_class=fmt, help="holdout search over lambda")
    _estimator_flags(p)
    p.add_argument("--lambda-grid", type=parse_lambda_grid, default=parse_lambda_grid("1e-8:1:300,log"),
                   help='"start:stop:count,log" or ",lin"')
    p.add_argument("--val-frac", type=float, default=0.2, help="validation fraction")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("bench", parents=[common], formatter_class=fmt, help="timing and memory micro-benchmarks")
    p.add_argument("--component", choices=["nufft", "toeplitz", "cg", "fit"], required=True)
    p.add_argument("--sizes", type=_int_list, default=[100_000, 1_000_000],
                   help="point counts (nufft, fit) or truncation levels m (toeplitz, cg)")
    p.add_argument("--repeats", type=int, default=5, help="timed runs per size; the median is reported")
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_PARSE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"fastkern: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
