"""Command-line interface: ``samplecraft {train,generate,analyze,baseline,gradcheck,target}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .analysis import PointSource, analyze, export_spectrum_image
from .autodiff import finite_difference_check
from .errors import SamplecraftError, UsageError
from .filters import FilterStack, apply_stack, init_kernel_basis
from .io import format_points_csv, read_points_csv, write_pcf_json, write_radial_csv, write_radial_target_csv
from .program import LossContext, fixed_dims, parse
from .samplers import SAMPLERS, sample
from .training import TrainConfig, TrainingDiverged, save_checkpoint, load_checkpoint, train, write_history_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _write_text(path, text: str):
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _trial_path(out: str, trial: int, trials: int) -> str:
    if trials == 1 or out == "-":
        return out
    p = Path(out)
    return str(p.with_name(f"{p.stem}_{trial}{p.suffix}"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args) -> int:
    if args.program_file:
        program = Path(args.program_file).read_text(encoding="utf-8")
    elif args.program:
        program = args.program
    else:
        raise UsageError("train needs --program or --program-file")
    cfg = TrainConfig(program, args.dims, args.points, args.iterations, args.rbf_count, args.receptive,
                      args.kernel_sigma, args.batch, args.batches, args.init, args.lr, args.decay, args.seed,
                      args.shrink, args.K)
    meta = {"training_N": cfg.points, "program": program, "seed": cfg.seed, "batch_index": cfg.batches}
    progress = None
    if args.verbose:
        progress = lambda step, loss: print(f"step {step} loss {loss:.6g}", file=sys.stderr)
    try:
        stack, history = train(cfg, progress)
    except TrainingDiverged as exc:
        meta["batch_index"] = len(exc.history)
        save_checkpoint(args.out, exc.stack, meta)
        if args.loss_csv:
            write_history_csv(args.loss_csv, exc.history)
        raise
    save_checkpoint(args.out, stack, meta)
    if args.loss_csv:
        write_history_csv(args.loss_csv, history)
    return 0


def cmd_generate(args) -> int:
    stack, _ = load_checkpoint(args.filter, args.dims)
    for t in range(args.trials):
        X = sample(args.init, args.points, stack.dim, args.seed + t).coords
        _write_text(_trial_path(args.out, t, args.trials), format_points_csv(apply_stack(X, stack)))
    return 0


def _analysis_sets(args):
    given = [args.points, args.filter, args.sampler]
    if sum(g is not None for g in given) != 1:
        raise UsageError("analyze needs exactly one of --points, --filter, --sampler")
    if args.points is not None:
        return [read_points_csv(p) for p in args.points]
    stack = None
    if args.filter is not None:
        stack, _ = load_checkpoint(args.filter, args.dims)
    source = PointSource(args.sampler or args.init, stack)
    n = stack.dim if stack is not None else args.dims
    return [source.realize(args.count, n, args.seed + t) for t in range(args.trials)]


def cmd_analyze(args) -> int:
    sets = _analysis_sets(args)
    report = analyze(sets, args.K, args.bins, args.seed, args.probes)
    if args.spectrum_out:
        export_spectrum_image(report.spectrum, args.spectrum_out)
    if args.radial_out:
        write_radial_csv(args.radial_out, report.radial)
    if args.pcf_out:
        write_pcf_json(args.pcf_out, report.pcf, {"realizations": report.realizations})
    lines = [f"realizations {report.realizations}", f"points {sets[0].shape[0]}", f"dims {sets[0].shape[1]}",
             f"star_discrepancy {report.star_discrepancy:.17g}"]
    if args.disc:
        lines.append(f"generalized_discrepancy {report.discrepancy:.17g}")
    print("\n".join(lines))
    return 0


def cmd_baseline(args) -> int:
    _write_text(args.out, format_points_csv(sample(args.sampler, args.points, args.dims, args.seed).coords))
    return 0


def cmd_gradcheck(args) -> int:
    program = parse(args.program, args.dims)
    free = np.ones(args.dims, bool)
    free[list(fixed_dims(program))] = False
    basis = init_kernel_basis(args.rbf_count, args.dims, args.receptive, args.kernel_sigma)
    rng = np.random.default_rng(args.seed)
    stack = FilterStack(basis, args.weight_scale * rng.standard_normal((args.iterations, args.rbf_count)), free)
    batch = [sample("random", args.points, args.dims, args.seed + 1 + b).coords for b in range(args.batch)]
    report = finite_difference_check(batch, stack, program, LossContext(seed=(args.seed,)), args.h)
    ok = report.max_rel_error < args.tol
    print(f"max_rel_error {report.max_rel_error:.3e} max_abs_error {report.max_abs_error:.3e} "
          f"tol {args.tol:g} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def cmd_target(args) -> int:
    if args.kind == "spectrum":
        from .targets import measure_target_spectrum
        target = measure_target_spectrum(args.sampler, args.points, args.trials, args.K, args.seed, args.dims)
        write_radial_target_csv(args.out, target)
    else:
        from .targets import measure_target_pcf
        source = args.points_file if args.points_file else args.sampler
        hist = measure_target_pcf(source, args.points, args.trials, seed=args.seed, n=args.dims)
        write_pcf_json(args.out, hist, {"sampler": args.sampler, "trials": args.trials, "seed": args.seed,
                                        "points": args.points})
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="samplecraft", description="Train and apply learnable point-pattern filters.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def filter_flags(sp, iterations=30, rbf_count=20, points=256):
        sp.add_argument("--dims", type=int, default=2)
        sp.add_argument("--points", type=int, default=points)
        sp.add_argument("--iterations", type=int, default=iterations)
        sp.add_argument("--rbf-count", type=int, default=rbf_count)
        sp.add_argument("--receptive", type=float, default=0.4)
        sp.add_argument("--kernel-sigma", type=float, default=0.04)
        sp.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="optimize filter weights for a sample program")
    t.add_argument("--program")
    t.add_argument("--program-file")
    filter_flags(t)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--batches", type=int, default=10000)
    t.add_argument("--init", choices=sorted(SAMPLERS), default="random")
    t.add_argument("--lr", type=float, default=1e-6)
    t.add_argument("--decay", type=float, default=0.95)
    t.add_argument("--shrink", type=float, default=1.0)
    t.add_argument("--K", type=int, default=None)
    t.add_argument("--loss-csv")
    t.add_argument("--verbose", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="filter fresh initial points with a trained checkpoint")
    g.add_argument("--filter", required=True)
    g.add_argument("--points", type=int, default=1024)
    g.add_argument("--dims", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--init", choices=sorted(SAMPLERS), default="random")
    g.add_argument("--trials", type=int, default=1)
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("analyze", help="spectrum, radial profile, PCF and discrepancy of point sets")
    a.add_argument("--points", nargs="+", help="point CSV files")
    a.add_argument("--filter")
    a.add_argument("--sampler", choices=sorted(SAMPLERS))
    a.add_argument("--init", choices=sorted(SAMPLERS), default="random")
    a.add_argument("--count", type=int, default=256, help="points per realization")
    a.add_argument("--dims", type=int, default=2)
    a.add_argument("--trials", type=int, default=16)
    a.add_argument("--K", type=int, default=None)
    a.add_argument("--bins", type=int, default=None)
    a.add_argument("--probes", type=int, default=1024)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--spectrum-out")
    a.add_argument("--radial-out")
    a.add_argument("--pcf-out")
    a.add_argument("--disc", action="store_true")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("baseline", help="write a reference sampler's points")
    b.add_argument("--sampler", choices=sorted(SAMPLERS), required=True)
    b.add_argument("--points", type=int, required=True)
    b.add_argument("--dims", type=int, default=2)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    c.add_argument("--program", default="bn(s) + aniso(s) + disc(s)")
    filter_flags(c, iterations=2, rbf_count=4, points=16)
    c.add_argument("--batch", type=int, default=2)
    c.add_argument("--weight-scale", type=float, default=0.3)
    c.add_argument("--h", type=float, default=1e-5)
    c.add_argument("--tol", type=float, default=1e-3)
    c.set_defaults(func=cmd_gradcheck)

    tg = sub.add_parser("target", help="measure a target spectrum or PCF from a reference sampler")
    tg.add_argument("--kind", choices=("spectrum", "pcf"), required=True)
    tg.add_argument("--sampler", choices=sorted(SAMPLERS), default="poisson")
    tg.add_argument("--points-file", nargs="+")
    tg.add_argument("--points", type=int, default=256)
    tg.add_argument("--dims", type=int, default=2)
    tg.add_argument("--trials", type=int, default=64)
    tg.add_argument("--K", type=int, default=None)
    tg.add_argument("--seed", type=int, default=0)
    tg.add_argument("--out", required=True)
    tg.set_defaults(func=cmd_target)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SamplecraftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
