"""Spawn-and-perturb orchestration: cells, sweeps, checkpoints, CSV records.

A sweep enumerates (mode, seed, time, kind, mask, sigma) cells, reuses the
shared training prefix per (seed, t) via checkpoints, trains both copies with
identical seed streams, and serializes one CSV row per cell.
"""

from __future__ import annotations

import json
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import align, divergence, perturb, repsim
from .data import Dataset, MixtureSpec, gen_mixture, load_idx
from .nets import NetSpec, ParamSet, accuracy, forward, loss_ce, n_params
from .rng import SeedPlan, derive_stream
from .training import OptState, TrainConfig, train_range

__all__ = [
    "CSV_COLUMNS",
    "Cell",
    "ExperimentPlan",
    "RunRecord",
    "CheckpointFormatError",
    "write_checkpoint",
    "read_checkpoint",
    "spawn_and_perturb",
    "spawn_independent_noise",
    "capture_series",
    "run_sweep",
    "write_csv",
    "read_csv",
]

CSV_COLUMNS = [
    "mode",
    "seed",
    "t_frac",
    "t_step",
    "kind",
    "mask",
    "sigma",
    "l2",
    "barrier_ce_train",
    "barrier_err_test",
    "barrier_wm",
    "barrier_am",
    "fixed_frac_wm",
    "cka_angle",
    "ensemble_acc",
    "acc_a",
    "acc_b",
    "ce_a",
    "ce_b",
    "lambda_l2",
    "r2_l2",
    "wall_s",
]

ALL_METRICS = frozenset(
    {"barrier", "barrier_wm", "barrier_am", "cka", "ensemble", "series"}
)

# ---------------------------------------------------------------------------
# Checkpoints

CKPT_MAGIC = b"TSTABCK1"
CKPT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def _netspec_to_dict(spec: NetSpec) -> dict:
    return {
        "in_dim": spec.in_dim,
        "widths": list(spec.widths),
        "classes": spec.classes,
        "layer_norm": list(spec.layer_norm),
    }


def _netspec_from_dict(d: dict) -> NetSpec:
    return NetSpec(d["in_dim"], tuple(d["widths"]), d["classes"], tuple(d["layer_norm"]))


def write_checkpoint(params: ParamSet, opt_state: OptState, meta: dict, path) -> None:
    """Versioned binary checkpoint; round-trips are bitwise exact."""
    buf_names = sorted(opt_state.buffers)
    header = {
        "netspec": _netspec_to_dict(params.spec),
        "param_count": params.flat.size,
        "opt_step": opt_state.step,
        "buffers": buf_names,
        "meta": meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(params.flat.astype("<f8").tobytes())
        for name in buf_names:
            fh.write(opt_state.buffers[name].astype("<f8").tobytes())


def read_checkpoint(path) -> tuple[ParamSet, OptState, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointFormatError(
            f"bad magic at offset 0: expected {CKPT_MAGIC!r}, got {raw[:8]!r}"
        )
    if len(raw) < 16:
        raise CheckpointFormatError("truncated header at offset 8")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"unsupported version {version} at offset 8")
    if len(raw) < 16 + hlen:
        raise CheckpointFormatError(f"truncated JSON header at offset 16")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"invalid JSON header at offset 16: {exc}")
    spec = _netspec_from_dict(header["netspec"])
    n = n_params(spec)
    if header["param_count"] != n:
        raise CheckpointFormatError(
            f"param_count {header['param_count']} does not match spec ({n})"
        )
    offset = 16 + hlen
    arrays = []
    for _ in range(1 + len(header["buffers"])):
        end = offset + 8 * n
        if len(raw) < end:
            raise CheckpointFormatError(f"truncated payload at offset {offset}")
        arrays.append(np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64))
        offset = end
    params = ParamSet(spec, arrays[0])
    buffers = dict(zip(header["buffers"], arrays[1:]))
    return params, OptState(header["opt_step"], buffers), header["meta"]


# ---------------------------------------------------------------------------
# Plans and cells


@dataclass(frozen=True)
class Cell:
    mode: str  # "perturb" | "spawning"
    seed: int
    t_frac: float
    kind: str  # perturbation kind, or "none" for spawning
    mask: str
    sigma: float

    def key(self) -> tuple:
        return (self.mode, self.seed, self.t_frac, self.kind, self.mask, self.sigma)


@dataclass(frozen=True)
class ExperimentPlan:
    net: NetSpec
    train: TrainConfig
    mixture: MixtureSpec | None = None
    idx_paths: tuple[str, str, str, str] | None = None  # train im/lab, test im/lab
    t_fracs: tuple[float, ...] = (0.0,)
    sigmas: tuple[float, ...] = (1e-4,)
    kinds: tuple[str, ...] = ("batch",)
    masks: tuple[str, ...] = ("all-weights",)
    fraction: float = 1.0
    seeds: tuple[int, ...] = (0,)
    modes: tuple[str, ...] = ("perturb",)
    metrics: frozenset = frozenset({"barrier", "barrier_wm", "cka", "ensemble"})
    series_points: int = 0
    n_alphas: int = 11
    barrier_subsample: int | None = None
    probe_m: int | None = None
    match_sgd_noise: bool = False
    noise_pairs: int = 32

    def __post_init__(self):
        if (self.mixture is None) == (self.idx_paths is None):
            raise ValueError("exactly one of mixture / idx_paths must be given")
        if any(not 0.0 <= f <= 1.0 for f in self.t_fracs):
            raise ValueError("time fractions must be in [0, 1]")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("sigmas must be >= 0")
        unknown = self.metrics - ALL_METRICS
        if unknown:
            raise ValueError(f"unknown metrics: {sorted(unknown)}")

    def t_step(self, t_frac: float) -> int:
        # Round half-up so fractions map to integer steps deterministically.
        return int(math.floor(t_frac * self.train.total_steps + 0.5))

    def datasets(self) -> tuple[Dataset, Dataset]:
        if self.mixture is not None:
            return gen_mixture(self.mixture)
        ti, tl, vi, vl = self.idx_paths
        return load_idx(ti, tl, "train"), load_idx(vi, vl, "test")

    def cells(self) -> list:
        out = []
        for mode in self.modes:
            if mode == "perturb":
                for t_frac in self.t_fracs:
                    for kind in self.kinds:
                        for mask in self.masks:
                            for sigma in self.sigmas:
                                for seed in self.seeds:
                                    out.append(
                                        Cell(mode, seed, t_frac, kind, mask, sigma)
                                    )
            elif mode == "spawning":
                for t_frac in self.t_fracs:
                    for seed in self.seeds:
                        out.append(Cell(mode, seed, t_frac, "none", "none", 0.0))
            else:
                raise ValueError(f"unknown mode {mode!r}")
        return out


@dataclass
class RunRecord:
    mode: str
    seed: int
    t_frac: float
    t_step: int
    kind: str
    mask: str
    sigma: float
    l2: float | None = None
    barrier_ce_train: float | None = None
    barrier_err_test: float | None = None
    barrier_wm: float | None = None
    barrier_am: float | None = None
    fixed_frac_wm: float | None = None
    cka_angle: float | None = None
    ensemble_acc: float | None = None
    acc_a: float | None = None
    acc_b: float | None = None
    ce_a: float | None = None
    ce_b: float | None = None
    lambda_l2: float | None = None
    r2_l2: float | None = None
    wall_s: float | None = None
    error: str | None = field(default=None)  # not serialized into the CSV

    def to_row(self) -> list:
        row = []
        for col in CSV_COLUMNS:
            val = getattr(self, col)
            if val is None:
                row.append("")
            elif isinstance(val, float):
                row.append(repr(val))
            else:
                row.append(str(val))
        return row

    @staticmethod
    def from_row(row: list) -> "RunRecord":
        kwargs = {}
        for col, raw in zip(CSV_COLUMNS, row):
            if col in ("mode", "kind", "mask"):
                kwargs[col] = raw
            elif col in ("seed", "t_step"):
                kwargs[col] = int(raw)
            else:
                kwargs[col] = float(raw) if raw != "" else None
        return RunRecord(**kwargs)

    def cell_key(self) -> tuple:
        return (self.mode, self.seed, self.t_frac, self.kind, self.mask, self.sigma)


# ---------------------------------------------------------------------------
# Running a cell

_SPAWN_SALT = 0x5A57  # folded into the child's seed for independent noise


def _spawn_plan(seed: int) -> SeedPlan:
    """SeedPlan for the independently-noised child of a spawning cell."""
    alt = derive_stream(seed, "spawn-child", _SPAWN_SALT).integers(0, 2**63)
    return SeedPlan(int(alt))


def _prefix_path(cache_dir, seed: int, t_step: int):
    return os.path.join(cache_dir, f"prefix_s{seed}_t{t_step}.ckpt")


def _prefix(plan: ExperimentPlan, seed: int, t_step: int, cache_dir=None):
    """Parameters and optimizer state after t_step training steps."""
    from .nets import init

    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = _prefix_path(cache_dir, seed, t_step)
        if os.path.exists(path):
            params, opt, _ = read_checkpoint(path)
            return params, opt
    seed_plan = SeedPlan(seed)
    train_ds, _ = plan.datasets()
    params = init(plan.net, seed_plan.stream("init"))
    opt = OptState.fresh(plan.train, params.flat.size)
    params, opt = train_range(params, opt, train_ds, plan.train, seed_plan, 0, t_step)
    if cache_dir is not None:
        write_checkpoint(params, opt, {"seed": seed, "t_step": t_step}, path)
    return params, opt


def ensure_prefixes(plan: ExperimentPlan, cache_dir) -> None:
    """Materialize every needed (seed, t) prefix, chaining within a seed."""
    from .nets import init

    os.makedirs(cache_dir, exist_ok=True)
    t_steps = sorted({plan.t_step(f) for c in plan.cells() for f in [c.t_frac]})
    train_ds, _ = plan.datasets()
    for seed in plan.seeds:
        seed_plan = SeedPlan(seed)
        params = init(plan.net, seed_plan.stream("init"))
        opt = OptState.fresh(plan.train, params.flat.size)
        done = 0
        for t in t_steps:
            path = _prefix_path(cache_dir, seed, t)
            if os.path.exists(path):
                params, opt, _ = read_checkpoint(path)
                done = t
                continue
            params, opt = train_range(
                params, opt, train_ds, plan.train, seed_plan, done, t
            )
            done = t
            write_checkpoint(params, opt, {"seed": seed, "t_step": t}, path)


def _series_steps(plan: ExperimentPlan, t_step: int) -> list:
    T = plan.train.total_steps
    if plan.series_points <= 0 or t_step >= T:
        return []
    pts = np.unique(np.round(np.linspace(t_step, T, plan.series_points)).astype(int))
    return [int(p) for p in pts]


def _train_pair(plan, cell, params_a, opt_a, params_b, opt_b, plan_b, capture):
    """Train both copies over [t, T]; optionally snapshot divergence.

    ``capture`` is a sorted list of steps (possibly empty); the pair is
    trained segment-wise between capture points, which is bitwise identical
    to one uninterrupted run.
    """
    train_ds, _ = plan.datasets()
    seed_plan = SeedPlan(cell.seed)
    t_step = plan.t_step(cell.t_frac)
    T = plan.train.total_steps
    series = None
    if capture:
        sub_gen = seed_plan.stream("probe-sample", 1)
        steps, l2s, bars = [], [], []
        prev = t_step
        for s in capture:
            params_a, opt_a = train_range(
                params_a, opt_a, train_ds, plan.train, seed_plan, prev, s
            )
            params_b, opt_b = train_range(
                params_b, opt_b, train_ds, plan.train, plan_b, prev, s
            )
            prev = s
            steps.append(s)
            l2s.append(divergence.l2(params_a, params_b))
            bars.append(
                divergence.barrier(
                    params_a,
                    params_b,
                    "ce",
                    train_ds,
                    plan.n_alphas,
                    plan.barrier_subsample,
                    sub_gen,
                ).value
            )
        if prev < T:
            params_a, opt_a = train_range(
                params_a, opt_a, train_ds, plan.train, seed_plan, prev, T
            )
            params_b, opt_b = train_range(
                params_b, opt_b, train_ds, plan.train, plan_b, prev, T
            )
        series = divergence.DivergenceSeries(steps, l2s, bars)
    else:
        params_a, opt_a = train_range(
            params_a, opt_a, train_ds, plan.train, seed_plan, t_step, T
        )
        params_b, opt_b = train_range(
            params_b, opt_b, train_ds, plan.train, plan_b, t_step, T
        )
    return params_a, params_b, series


def _perturbed_copy(plan: ExperimentPlan, cell: Cell, params, opt):
    """Clone at t, apply sigma * eps to the clone; returns (params_b, opt_b, sigma)."""
    seed_plan = SeedPlan(cell.seed)
    train_ds, _ = plan.datasets()
    t_step = plan.t_step(cell.t_frac)
    pspec = perturb.PerturbSpec(
        cell.kind, cell.sigma, cell.mask, plan.fraction, cell.t_frac
    )
    mask = perturb.build_mask(pspec, plan.net, seed_plan)
    if cell.kind == "gaussian":
        eps_hat = perturb.sample_gaussian(plan.net, mask, seed_plan)
    else:
        eps_hat = perturb.sample_batch(
            params, train_ds, plan.train, seed_plan, t_step, mask=mask
        )
    eps = perturb.normalize(eps_hat, mask, plan.net)
    sigma = cell.sigma
    if plan.match_sgd_noise and cell.kind == "batch":
        scale = perturb.sgd_noise_scale(
            params, train_ds, plan.train, seed_plan, t_step, plan.noise_pairs
        )
        sigma = scale / perturb.expected_init_norm(plan.net, mask)
    params_b = perturb.apply(params, eps, sigma)
    opt_b = opt.clone() if plan.train.share_opt_state else OptState.fresh(
        plan.train, params.flat.size
    )
    return params_b, opt_b, sigma


def _measure(plan: ExperimentPlan, cell: Cell, params_a, params_b, series, sigma, t0):
    train_ds, test_ds = plan.datasets()
    seed_plan = SeedPlan(cell.seed)
    rec = RunRecord(
        cell.mode, cell.seed, cell.t_frac, plan.t_step(cell.t_frac),
        cell.kind, cell.mask, sigma,
    )

    def train_barrier(a, b):
        return divergence.barrier(
            a, b, "ce", train_ds, plan.n_alphas, plan.barrier_subsample,
            seed_plan.stream("probe-sample", 1),
        ).value

    rec.l2 = divergence.l2(params_a, params_b)
    if "barrier" in plan.metrics:
        rec.barrier_ce_train = train_barrier(params_a, params_b)
        rec.barrier_err_test = divergence.barrier(
            params_a, params_b, "err", test_ds, plan.n_alphas
        ).value
    if "barrier_wm" in plan.metrics:
        perms = align.weight_match(params_a, params_b, seed_plan)
        rec.fixed_frac_wm = align.fixed_fraction(perms)
        rec.barrier_wm = train_barrier(params_a, align.permute(params_b, perms))
    if "barrier_am" in plan.metrics:
        m = plan.probe_m or min(1000, test_ds.n)
        idx = np.sort(
            seed_plan.stream("probe-sample").choice(test_ds.n, size=m, replace=False)
        )
        _, tr_a = forward(params_a, test_ds.inputs[idx])
        _, tr_b = forward(params_b, test_ds.inputs[idx])
        perms_am = align.activation_match(tr_a, tr_b)
        rec.barrier_am = train_barrier(params_a, align.permute(params_b, perms_am))
    if "cka" in plan.metrics:
        X, Y = repsim.probe_representations(
            params_a, params_b, test_ds, seed_plan, plan.probe_m
        )
        rec.cka_angle = repsim.angular_cka(X, Y)
    if "ensemble" in plan.metrics:
        rec.ensemble_acc = divergence.ensemble_eval(params_a, params_b, test_ds)
    rec.acc_a = accuracy(params_a, test_ds)
    rec.acc_b = accuracy(params_b, test_ds)
    rec.ce_a = loss_ce(params_a, train_ds)
    rec.ce_b = loss_ce(params_b, train_ds)
    if series is not None:
        try:
            rec.lambda_l2, rec.r2_l2 = divergence.fit_exponential(series, "l2")
        except ValueError:
            pass
    rec.wall_s = time.monotonic() - t0
    return rec


def spawn_and_perturb(plan: ExperimentPlan, cell: Cell, cache_dir=None) -> RunRecord:
    """Run the five-step protocol for one perturbation cell."""
    t0 = time.monotonic()
    t_step = plan.t_step(cell.t_frac)
    params, opt = _prefix(plan, cell.seed, t_step, cache_dir)
    params_b, opt_b, sigma = _perturbed_copy(plan, cell, params, opt)
    capture = _series_steps(plan, t_step) if "series" in plan.metrics else []
    params_a, params_b, series = _train_pair(
        plan, cell, params, opt, params_b, opt_b, SeedPlan(cell.seed), capture
    )
    return _measure(plan, cell, params_a, params_b, series, sigma, t0)


def spawn_independent_noise(plan: ExperimentPlan, cell: Cell, cache_dir=None) -> RunRecord:
    """Frankle-style spawning: no perturbation, independent noise after t."""
    t0 = time.monotonic()
    t_step = plan.t_step(cell.t_frac)
    params, opt = _prefix(plan, cell.seed, t_step, cache_dir)
    params_b, opt_b = params.copy(), opt.clone()
    capture = _series_steps(plan, t_step) if "series" in plan.metrics else []
    params_a, params_b, series = _train_pair(
        plan, cell, params, opt, params_b, opt_b, _spawn_plan(cell.seed), capture
    )
    return _measure(plan, cell, params_a, params_b, series, 0.0, t0)


def run_cell(plan: ExperimentPlan, cell: Cell, cache_dir=None) -> RunRecord:
    if cell.mode == "spawning":
        return spawn_independent_noise(plan, cell, cache_dir)
    return spawn_and_perturb(plan, cell, cache_dir)


def capture_series(plan: ExperimentPlan, cell: Cell, steps, cache_dir=None):
    """Divergence (step, l2, barrier) snapshots over [t, T] for one cell."""
    t_step = plan.t_step(cell.t_frac)
    steps = sorted(set(int(s) for s in steps))
    if steps and (steps[0] < t_step or steps[-1] > plan.train.total_steps):
        raise ValueError("capture steps must lie in [t, T]")
    params, opt = _prefix(plan, cell.seed, t_step, cache_dir)
    if cell.mode == "spawning":
        params_b, opt_b = params.copy(), opt.clone()
        plan_b = _spawn_plan(cell.seed)
    else:
        params_b, opt_b, _ = _perturbed_copy(plan, cell, params, opt)
        plan_b = SeedPlan(cell.seed)
    _, _, series = _train_pair(plan, cell, params, opt, params_b, opt_b, plan_b, steps)
    return series


# ---------------------------------------------------------------------------
# Sweeps and CSV persistence


def write_csv(records, path, version: str) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        fh.write(f"# trainstab {version}\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.to_row())


def read_csv(path) -> list:
    import csv

    records = []
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        return records
    if rows[0] != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected CSV header")
    for row in rows[1:]:
        records.append(RunRecord.from_row(row))
    return records


def _run_cell_star(args):
    plan, cell, cache_dir = args
    try:
        return run_cell(plan, cell, cache_dir)
    except Exception as exc:  # cell failures must not abort the sweep
        rec = RunRecord(
            cell.mode, cell.seed, cell.t_frac, plan.t_step(cell.t_frac),
            cell.kind, cell.mask, cell.sigma,
        )
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec


def run_sweep(
    plan: ExperimentPlan,
    out_path,
    parallelism: int = 1,
    cache_dir=None,
    version: str = "0",
) -> list:
    """Execute all cells x seeds; rows come back in plan order.

    Prefixes are computed once per (seed, t) and shared through the
    checkpoint cache.  Re-running with an existing output CSV skips cells
    already recorded, so interrupted sweeps resume without duplicates.
    """
    own_cache = cache_dir is None
    if own_cache:
        import tempfile

        cache_dir = tempfile.mkdtemp(prefix="trainstab-prefix-")
    cells = plan.cells()
    done: dict = {}
    if os.path.exists(out_path):
        for rec in read_csv(out_path):
            done[rec.cell_key()] = rec
    todo = [(i, c) for i, c in enumerate(cells) if c.key() not in done]
    ensure_prefixes(plan, cache_dir)
    results = dict(done)
    if parallelism > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for (_, cell), rec in zip(
                todo,
                pool.map(_run_cell_star, [(plan, c, cache_dir) for _, c in todo]),
            ):
                results[cell.key()] = rec
    else:
        for _, cell in todo:
            results[cell.key()] = _run_cell_star((plan, cell, cache_dir))
    ordered = [results[c.key()] for c in cells if c.key() in results]
    write_csv(ordered, out_path, version)
    errors = [r for r in ordered if r.error]
    if errors:
        with open(str(out_path) + ".errors.log", "w") as fh:
            for r in errors:
                fh.write(f"{r.cell_key()}: {r.error}\n")
    return ordered
