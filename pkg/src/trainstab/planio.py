"""Plan-file parsing: flat `key = value` text with repeatable keys.

Every key mirrors a CLI flag one-to-one, so any CLI invocation can be saved
as a plan and replayed.
"""

from __future__ import annotations

from .data import MixtureSpec
from .experiment import ExperimentPlan
from .nets import NetSpec
from .training import TrainConfig

__all__ = ["parse_plan", "load_plan", "plan_to_text"]

REPEATABLE = {"time", "sigma", "kind", "mask", "seed", "mode", "metric"}

_TRAIN_KEYS = {
    "optimizer": str,
    "peak_lr": float,
    "warmup_frac": float,
    "decay": str,
    "momentum": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "weight_decay": float,
    "batch_size": int,
    "total_steps": int,
    "jitter_std": float,
    "share_opt_state": None,  # bool, handled below
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _kv_lines(text: str) -> list:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_plan(text: str) -> ExperimentPlan:
    single: dict = {}
    multi: dict = {k: [] for k in REPEATABLE}
    for key, value in _kv_lines(text):
        if key in REPEATABLE:
            multi[key].append(value)
        elif key in single:
            raise ValueError(f"duplicate non-repeatable key {key!r}")
        else:
            single[key] = value

    def pop(key, convert, default=None):
        if key in single:
            return convert(single.pop(key))
        return default

    widths = tuple(int(w) for w in pop("widths", str, "128,128,128").split(","))
    layer_norm = pop("layer_norm", _parse_bool, True)
    classes = pop("classes", int, 10)

    idx_keys = ("train_images", "train_labels", "test_images", "test_labels")
    if any(k in single for k in idx_keys):
        paths = tuple(pop(k, str) for k in idx_keys)
        if any(p is None for p in paths):
            raise ValueError("all four IDX path keys are required together")
        mixture = None
        in_dim = pop("in_dim", int)
        if in_dim is None:
            raise ValueError("in_dim is required with IDX data")
    else:
        paths = None
        mixture = MixtureSpec(
            classes=classes,
            dim=pop("dim", int, 32),
            n_train=pop("n_train", int, 4096),
            n_test=pop("n_test", int, 2048),
            separation=pop("separation", float, 4.0),
            noise_std=pop("noise_std", float, 1.0),
            seed=pop("data_seed", int, 0),
        )
        in_dim = mixture.dim

    train_kwargs = {}
    for key, conv in _TRAIN_KEYS.items():
        if key in single:
            raw = single.pop(key)
            train_kwargs[key] = _parse_bool(raw) if conv is None else conv(raw)
    train = TrainConfig(**train_kwargs)

    plan_kwargs = dict(
        net=NetSpec.make(in_dim, widths, classes, layer_norm),
        train=train,
        mixture=mixture,
        idx_paths=paths,
        fraction=pop("fraction", float, 1.0),
        series_points=pop("series_points", int, 0),
        n_alphas=pop("n_alphas", int, 11),
        barrier_subsample=pop("barrier_subsample", int),
        probe_m=pop("probe_m", int),
        match_sgd_noise=pop("match_sgd_noise", _parse_bool, False),
        noise_pairs=pop("noise_pairs", int, 32),
    )
    if single:
        raise ValueError(f"unknown plan keys: {sorted(single)}")
    if multi["time"]:
        plan_kwargs["t_fracs"] = tuple(float(v) for v in multi["time"])
    if multi["sigma"]:
        plan_kwargs["sigmas"] = tuple(float(v) for v in multi["sigma"])
    if multi["kind"]:
        plan_kwargs["kinds"] = tuple(multi["kind"])
    if multi["mask"]:
        plan_kwargs["masks"] = tuple(multi["mask"])
    if multi["seed"]:
        plan_kwargs["seeds"] = tuple(int(v) for v in multi["seed"])
    if multi["mode"]:
        plan_kwargs["modes"] = tuple(multi["mode"])
    if multi["metric"]:
        plan_kwargs["metrics"] = frozenset(multi["metric"])
    return ExperimentPlan(**plan_kwargs)


def load_plan(path) -> ExperimentPlan:
    with open(path) as fh:
        return parse_plan(fh.read())


def plan_to_text(plan: ExperimentPlan) -> str:
    lines = []
    lines.append(f"widths = {','.join(str(w) for w in plan.net.widths)}")
    lines.append(f"layer_norm = {all(plan.net.layer_norm)}")
    lines.append(f"classes = {plan.net.classes}")
    if plan.mixture is not None:
        m = plan.mixture
        lines += [
            f"dim = {m.dim}",
            f"n_train = {m.n_train}",
            f"n_test = {m.n_test}",
            f"separation = {m.separation}",
            f"noise_std = {m.noise_std}",
            f"data_seed = {m.seed}",
        ]
    else:
        ti, tl, vi, vl = plan.idx_paths
        lines += [
            f"in_dim = {plan.net.in_dim}",
            f"train_images = {ti}",
            f"train_labels = {tl}",
            f"test_images = {vi}",
            f"test_labels = {vl}",
        ]
    for key, value in plan.train.asdict().items():
        lines.append(f"{key} = {value}")
    for f in plan.t_fracs:
        lines.append(f"time = {f}")
    for s in plan.sigmas:
        lines.append(f"sigma = {s}")
    for k in plan.kinds:
        lines.append(f"kind = {k}")
    for msk in plan.masks:
        lines.append(f"mask = {msk}")
    for s in plan.seeds:
        lines.append(f"seed = {s}")
    for mode in plan.modes:
        lines.append(f"mode = {mode}")
    for metric in sorted(plan.metrics):
        lines.append(f"metric = {metric}")
    lines.append(f"fraction = {plan.fraction}")
    lines.append(f"series_points = {plan.series_points}")
    lines.append(f"n_alphas = {plan.n_alphas}")
    if plan.barrier_subsample is not None:
        lines.append(f"barrier_subsample = {plan.barrier_subsample}")
    if plan.probe_m is not None:
        lines.append(f"probe_m = {plan.probe_m}")
    lines.append(f"match_sgd_noise = {plan.match_sgd_noise}")
    lines.append(f"noise_pairs = {plan.noise_pairs}")
    return "\n".join(lines) + "\n"
