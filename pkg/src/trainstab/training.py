"""The deterministic training map: optimizers, schedules, seeded loop.

Composing `train_range` over a step range is a pure function of
(params, opt_state, config, SeedPlan); identical arguments give
bitwise-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import Dataset, augment, batch_indices
from .nets import ParamSet, grad
from .rng import SeedPlan

__all__ = [
    "TrainConfig",
    "OptState",
    "TrainingDiverged",
    "lr_at",
    "step",
    "train_range",
]


class TrainingDiverged(RuntimeError):
    """Non-finite gradient encountered; training aborted."""


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"  # "sgd" (with momentum) | "adamw"
    peak_lr: float = 0.1
    warmup_frac: float = 0.02
    decay: str = "linear"  # "linear" | "cosine" | "none"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 128
    total_steps: int = 5000
    jitter_std: float = 0.0
    # Whether the perturbed copy inherits a clone of the optimizer state at
    # the perturbation time (the default) or a fresh zero state.
    share_opt_state: bool = True

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.decay not in ("linear", "cosine", "none"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.peak_lr <= 0:
            raise ValueError("peak_lr must be > 0")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError("warmup_frac must be in [0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def asdict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return replace(TrainConfig(), **d)


@dataclass
class OptState:
    step: int = 0
    buffers: dict = field(default_factory=dict)  # name -> flat float64 array

    @staticmethod
    def fresh(config: TrainConfig, n: int) -> "OptState":
        if config.optimizer == "sgd":
            bufs = {"momentum": np.zeros(n)}
        else:
            bufs = {"m": np.zeros(n), "v": np.zeros(n)}
        return OptState(0, bufs)

    def clone(self) -> "OptState":
        return OptState(self.step, {k: v.copy() for k, v in self.buffers.items()})


def lr_at(config: TrainConfig, step_idx: int) -> float:
    """Linear ramp 0 -> peak over the warmup window, then the chosen decay."""
    T = config.total_steps
    w = config.warmup_frac * T
    if w > 0 and step_idx < w:
        return config.peak_lr * step_idx / w
    if config.decay == "none":
        return config.peak_lr
    if T == w:
        return config.peak_lr
    frac = (step_idx - w) / (T - w)
    if config.decay == "linear":
        return config.peak_lr * (1.0 - frac)
    return config.peak_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def step(
    params: ParamSet, opt_state: OptState, config: TrainConfig, gradient: np.ndarray
) -> tuple[ParamSet, OptState]:
    """One optimizer update with lr_at(current step); decoupled weight decay."""
    if gradient.shape != params.flat.shape:
        raise ValueError("gradient shape mismatch")
    if not np.all(np.isfinite(gradient)):
        raise TrainingDiverged(
            f"non-finite gradient at step {opt_state.step}"
        )
    lr = lr_at(config, opt_state.step)
    theta = params.flat
    new = OptState(opt_state.step + 1, {})
    if config.optimizer == "sgd":
        buf = config.momentum * opt_state.buffers["momentum"] + gradient
        new.buffers["momentum"] = buf
        update = lr * buf
    else:
        t = opt_state.step + 1
        m = config.beta1 * opt_state.buffers["m"] + (1 - config.beta1) * gradient
        v = config.beta2 * opt_state.buffers["v"] + (1 - config.beta2) * gradient**2
        new.buffers["m"] = m
        new.buffers["v"] = v
        m_hat = m / (1 - config.beta1**t)
        v_hat = v / (1 - config.beta2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + config.eps)
    theta_new = theta - update
    if config.weight_decay > 0:
        theta_new = theta_new - lr * config.weight_decay * theta
    return ParamSet(params.spec, theta_new), new


def train_range(
    params: ParamSet,
    opt_state: OptState,
    dataset: Dataset,
    config: TrainConfig,
    plan: SeedPlan,
    from_step: int,
    to_step: int,
    hook=None,
) -> tuple[ParamSet, OptState]:
    """Iterate the training map over [from_step, to_step).

    Batches and augmentation come from the SeedPlan streams keyed by step, so
    the composition over any split of the range is bitwise identical to the
    single-range run.  ``hook(step, params)`` observes the state after each
    completed step, read-only.
    """
    if not 0 <= from_step <= to_step <= config.total_steps:
        raise ValueError("invalid step range")
    if opt_state.step != from_step:
        raise ValueError(
            f"opt_state.step={opt_state.step} does not match from_step={from_step}"
        )
    for s in range(from_step, to_step):
        idx = batch_indices(dataset.n, config.batch_size, s, plan)
        x = augment(dataset.inputs[idx], s, plan, config.jitter_std)
        g = grad(params, x, dataset.labels[idx])
        params, opt_state = step(params, opt_state, config, g)
        if hook is not None:
            hook(s + 1, params)
    return params, opt_state
