"""Command-line entry point for the full pipeline.

Exit codes: 0 success, 1 usage error (usage text on stderr), 2 runtime error
(diagnostic on stderr).  Every run prints its resolved configuration first.
"""

from __future__ import annotations

import argparse
import csv
import os
import statistics
import sys

import numpy as np

from . import __version__, align, divergence, repsim
from .data import MixtureSpec, gen_mixture, write_idx
from .experiment import (
    Cell,
    ExperimentPlan,
    capture_series,
    read_checkpoint,
    read_csv,
    run_cell,
    run_sweep,
    write_checkpoint,
    write_csv,
)
from .nets import NetSpec, ParamSet, accuracy, forward, init, loss_ce
from .planio import load_plan, parse_plan, plan_to_text
from .rng import SeedPlan
from .training import OptState, TrainConfig, train_range

__all__ = ["dispatch", "main"]


class UsageError(Exception):
    def __init__(self, message, parser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


def _add_data_flags(p):
    g = p.add_argument_group("data")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--n-train", type=int, default=4096)
    g.add_argument("--n-test", type=int, default=2048)
    g.add_argument("--separation", type=float, default=4.0)
    g.add_argument("--noise-std", type=float, default=1.0)
    g.add_argument("--data-seed", type=int, default=0)
    g.add_argument("--train-images")
    g.add_argument("--train-labels")
    g.add_argument("--test-images")
    g.add_argument("--test-labels")
    g.add_argument("--in-dim", type=int, help="input dim (required with IDX data)")


def _add_net_flags(p):
    g = p.add_argument_group("network")
    g.add_argument("--widths", default="128,128,128")
    g.add_argument("--no-layer-norm", action="store_true")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--optimizer", choices=["sgd", "adamw"], default="sgd")
    g.add_argument("--peak-lr", type=float, default=0.1)
    g.add_argument("--warmup-frac", type=float, default=0.02)
    g.add_argument("--decay", choices=["linear", "cosine", "none"], default="linear")
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--beta1", type=float, default=0.9)
    g.add_argument("--beta2", type=float, default=0.999)
    g.add_argument("--eps", type=float, default=1e-8)
    g.add_argument("--weight-decay", type=float, default=0.0)
    g.add_argument("--batch-size", type=int, default=128)
    g.add_argument("--total-steps", type=int, default=5000)
    g.add_argument("--jitter-std", type=float, default=0.0)


def _mixture_from_args(args) -> MixtureSpec | None:
    if args.train_images:
        return None
    return MixtureSpec(
        args.classes, args.dim, args.n_train, args.n_test,
        args.separation, args.noise_std, args.data_seed,
    )


def _plan_from_args(args, cell_flags=False) -> ExperimentPlan:
    mixture = _mixture_from_args(args)
    if mixture is not None:
        in_dim, idx_paths = mixture.dim, None
    else:
        if args.in_dim is None:
            raise ValueError("--in-dim is required with IDX data")
        in_dim = args.in_dim
        idx_paths = (args.train_images, args.train_labels,
                     args.test_images, args.test_labels)
    widths = tuple(int(w) for w in args.widths.split(","))
    net = NetSpec.make(in_dim, widths, args.classes, not args.no_layer_norm)
    train = TrainConfig(
        optimizer=args.optimizer, peak_lr=args.peak_lr,
        warmup_frac=args.warmup_frac, decay=args.decay, momentum=args.momentum,
        beta1=args.beta1, beta2=args.beta2, eps=args.eps,
        weight_decay=args.weight_decay, batch_size=args.batch_size,
        total_steps=args.total_steps, jitter_std=args.jitter_std,
    )
    kwargs = dict(net=net, train=train, mixture=mixture, idx_paths=idx_paths)
    if cell_flags:
        kwargs.update(
            t_fracs=tuple(args.perturb_step or [0.0]),
            sigmas=tuple(args.sigma or [1e-4]),
            kinds=tuple(args.kind or ["batch"]),
            masks=tuple(args.mask or ["all-weights"]),
            fraction=args.fraction,
            seeds=tuple(args.seed or [0]),
            modes=tuple(args.mode or ["perturb"]),
            metrics=frozenset(args.metric or ["barrier", "barrier_wm", "cka", "ensemble"]),
            series_points=args.series_points,
            n_alphas=args.alphas,
            barrier_subsample=args.barrier_subsample,
            probe_m=args.probe_m,
            match_sgd_noise=args.match_sgd_noise,
        )
    return ExperimentPlan(**kwargs)


def _add_cell_flags(p):
    g = p.add_argument_group("perturbation grid")
    g.add_argument("--perturb-step", type=float, action="append",
                   help="perturbation time as fraction of T (repeatable)")
    g.add_argument("--sigma", type=float, action="append",
                   help="relative magnitude (repeatable)")
    g.add_argument("--kind", choices=["batch", "gaussian"], action="append")
    g.add_argument("--mask",
                   choices=["all-weights", "norm-only", "fraction", "single-weight"],
                   action="append")
    g.add_argument("--fraction", type=float, default=1.0)
    g.add_argument("--seed", type=int, action="append")
    g.add_argument("--mode", choices=["perturb", "spawning"], action="append")
    g.add_argument("--metric", action="append",
                   choices=["barrier", "barrier_wm", "barrier_am", "cka",
                            "ensemble", "series"])
    g.add_argument("--series-points", type=int, default=0)
    g.add_argument("--alphas", type=int, default=11)
    g.add_argument("--barrier-subsample", type=int)
    g.add_argument("--probe-m", type=int)
    g.add_argument("--match-sgd-noise", action="store_true")


def _print_config(name, mapping):
    print(f"[{name}] resolved configuration:")
    for k, v in mapping.items():
        print(f"  {k} = {v}")


def _load_pair(path_a, path_b):
    pa, _, _ = read_checkpoint(path_a)
    pb, _, _ = read_checkpoint(path_b)
    if pa.spec != pb.spec:
        raise ValueError("checkpoints have different network specs")
    return pa, pb


def _dataset_from_args(args, split):
    mixture = _mixture_from_args(args)
    if mixture is not None:
        train, test = gen_mixture(mixture)
    else:
        from .data import load_idx

        train = load_idx(args.train_images, args.train_labels, "train")
        test = load_idx(args.test_images, args.test_labels, "test")
    return train if split == "train" else test


# ---------------------------------------------------------------------------
# Subcommand handlers


def _cmd_gen_data(args):
    spec = MixtureSpec(
        args.classes, args.dim, args.n_train, args.n_test,
        args.separation, args.noise_std, args.data_seed,
    )
    _print_config("gen-data", vars(args))
    train, test = gen_mixture(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = {}
    for name, ds in (("train", train), ("test", test)):
        ip = os.path.join(args.out_dir, f"{name}-images.idx")
        lp = os.path.join(args.out_dir, f"{name}-labels.idx")
        write_idx(ds.inputs, ip)
        write_idx(ds.labels.astype(np.float64), lp)
        paths[name] = (ip, lp)
    for name, (ip, lp) in paths.items():
        print(f"{name}: {ip} {lp}")
    return 0


def _cmd_train(args):
    plan = _plan_from_args(args)
    _print_config("train", {"plan": "\n" + plan_to_text(plan), "seed": args.seed_value})
    seed_plan = SeedPlan(args.seed_value)
    train_ds, test_ds = plan.datasets()
    params = init(plan.net, seed_plan.stream("init"))
    opt = OptState.fresh(plan.train, params.flat.size)
    params, opt = train_range(
        params, opt, train_ds, plan.train, seed_plan, 0, plan.train.total_steps
    )
    meta = {"seed": args.seed_value, "config": plan.train.asdict()}
    write_checkpoint(params, opt, meta, args.out)
    print(f"train ce = {loss_ce(params, train_ds):.6f}")
    print(f"test acc = {accuracy(params, test_ds):.4f}")
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_spawn_perturb(args):
    plan = _plan_from_args(args, cell_flags=True)
    _print_config("spawn-perturb", {"plan": "\n" + plan_to_text(plan)})
    records = run_sweep(plan, args.out, parallelism=1, cache_dir=args.cache_dir,
                        version=__version__)
    for rec in records:
        print({c: getattr(rec, c) for c in
               ("mode", "seed", "t_frac", "kind", "sigma", "l2",
                "barrier_ce_train", "cka_angle")})
    if args.series_out:
        cell = plan.cells()[0]
        t = plan.t_step(cell.t_frac)
        pts = args.series_points or 20
        steps = np.unique(
            np.round(np.linspace(t, plan.train.total_steps, pts)).astype(int)
        )
        series = capture_series(plan, cell, steps, args.cache_dir)
        with open(args.series_out, "w", newline="") as fh:
            fh.write(f"# trainstab {__version__}\n")
            w = csv.writer(fh)
            w.writerow(["step", "l2", "barrier"])
            for s, l, b in zip(series.steps, series.l2, series.barrier):
                w.writerow([s, repr(l), repr(b)])
        print(f"series written to {args.series_out}")
    return 0


def _cmd_sweep(args):
    plan = load_plan(args.plan)
    _print_config("sweep", {"plan": "\n" + plan_to_text(plan),
                            "out": args.out, "parallel": args.parallel})
    records = run_sweep(plan, args.out, parallelism=args.parallel,
                        cache_dir=args.cache_dir, version=__version__)
    errors = sum(1 for r in records if r.error)
    print(f"{len(records)} rows written to {args.out} ({errors} errors)")
    return 0


def _cmd_barrier(args):
    _print_config("barrier", vars(args))
    pa, pb = _load_pair(args.a, args.b)
    ds = _dataset_from_args(args, args.data)
    result = divergence.barrier(pa, pb, args.loss, ds, args.alphas)
    if args.curve_out:
        with open(args.curve_out, "w", newline="") as fh:
            fh.write(f"# trainstab {__version__}\n")
            w = csv.writer(fh)
            w.writerow(["alpha", "loss", "reference"])
            for a, l, r in result.curve:
                w.writerow([repr(a), repr(l), repr(r)])
    print(f"barrier = {result.value}")
    print(f"argmax alpha = {result.argmax_alpha}")
    return 0


def _cmd_align(args):
    _print_config("align", vars(args))
    pa, pb = _load_pair(args.a, args.b)
    if args.method == "weight":
        perms = align.weight_match(pa, pb, SeedPlan(args.seed))
    else:
        ds = _dataset_from_args(args, "test")
        m = min(args.probe_m or 1000, ds.n)
        gen = SeedPlan(args.seed).stream("probe-sample")
        idx = np.sort(gen.choice(ds.n, size=m, replace=False))
        _, ta = forward(pa, ds.inputs[idx])
        _, tb = forward(pb, ds.inputs[idx])
        perms = align.activation_match(ta, tb)
    aligned = align.permute(pb, perms)
    print(f"fixed fraction = {align.fixed_fraction(perms)}")
    print(f"post-align l2 = {divergence.l2(pa, aligned)}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(align.perms_to_json(perms))
        print(f"permutations written to {args.out}")
    return 0


def _cmd_cka(args):
    _print_config("cka", vars(args))
    pa, pb = _load_pair(args.a, args.b)
    ds = _dataset_from_args(args, "test")
    X, Y = repsim.probe_representations(pa, pb, ds, SeedPlan(args.seed), args.m)
    print(f"angular cka = {repsim.angular_cka(X, Y)}")
    return 0


def _cmd_fit(args):
    _print_config("fit", vars(args))
    with open(args.csv, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if "step" not in header or args.field not in header:
        raise ValueError(f"series CSV must have 'step' and {args.field!r} columns")
    si, fi = header.index("step"), header.index(args.field)
    series = divergence.DivergenceSeries(
        [int(float(r[si])) for r in body],
        [float(r[fi]) for r in body] if args.field == "l2" else [0.0] * len(body),
        [float(r[fi]) for r in body] if args.field == "barrier" else [0.0] * len(body),
    )
    lam, r2 = divergence.fit_exponential(series, args.field)
    print(f"lambda = {lam}")
    print(f"r2 = {r2}")
    return 0


def _cmd_report(args):
    _print_config("report", vars(args))
    records = read_csv(args.csv)
    groups: dict = {}
    for rec in records:
        if rec.error or rec.l2 is None:
            continue
        key = (rec.mode, rec.t_frac, rec.kind, rec.mask, rec.sigma)
        groups.setdefault(key, []).append(rec)
    cols = ["l2", "barrier_ce_train", "barrier_wm", "cka_angle", "ensemble_acc"]
    print("mode t_frac kind mask sigma n " + " ".join(f"med_{c}" for c in cols))
    for key in sorted(groups):
        recs = groups[key]
        meds = []
        for c in cols:
            vals = [getattr(r, c) for r in recs if getattr(r, c) is not None]
            meds.append(f"{statistics.median(vals):.6g}" if vals else "-")
        print(" ".join(str(k) for k in key) + f" {len(recs)} " + " ".join(meds))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="trainstab", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"trainstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a mixture task as IDX files")
    _add_data_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("train", help="train one network and checkpoint it")
    _add_data_flags(p)
    _add_net_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", dest="seed_value", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("spawn-perturb", help="run spawn-and-perturb cells")
    _add_data_flags(p)
    _add_net_flags(p)
    _add_train_flags(p)
    _add_cell_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--series-out")
    p.add_argument("--cache-dir")
    p.set_defaults(handler=_cmd_spawn_perturb)

    p = sub.add_parser("sweep", help="run a full plan-file sweep")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--cache-dir")
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("barrier", help="loss barrier between two checkpoints")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    _add_data_flags(p)
    p.add_argument("--data", choices=["train", "test"], default="train")
    p.add_argument("--loss", choices=["ce", "err"], default="ce")
    p.add_argument("--alphas", type=int, default=11)
    p.add_argument("--curve-out")
    p.set_defaults(handler=_cmd_barrier)

    p = sub.add_parser("align", help="permutation-align two checkpoints")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    _add_data_flags(p)
    p.add_argument("--method", choices=["weight", "activation"], default="weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probe-m", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_align)

    p = sub.add_parser("cka", help="angular CKA between two checkpoints")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int)
    p.set_defaults(handler=_cmd_cka)

    p = sub.add_parser("fit", help="exponential fit to a divergence series CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--field", choices=["l2", "barrier"], default="l2")
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("report", help="grouped medians from a results CSV")
    p.add_argument("--csv", required=True)
    p.set_defaults(handler=_cmd_report)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        exc.parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --version / --help
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
