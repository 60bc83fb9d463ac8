"""Perturbation construction, normalization, and application.

Directions come from either a fresh seeded batch gradient or an
initialization-shaped Gaussian, optionally restricted by a weight mask, and
are rescaled so their L2 norm equals the expected initialization norm of the
masked coordinates.  sigma then multiplies that unit of scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nets import NetSpec, ParamSet, grad, layout, n_params
from .rng import SeedPlan, gaussians
from .training import TrainConfig, lr_at

__all__ = [
    "PerturbSpec",
    "DegenerateDirection",
    "build_mask",
    "sample_gaussian",
    "sample_batch",
    "expected_init_norm",
    "normalize",
    "apply",
    "sgd_noise_scale",
    "MASK_KINDS",
]

MASK_KINDS = ("all-weights", "norm-only", "fraction", "single-weight")
KINDS = ("batch", "gaussian")


class DegenerateDirection(ValueError):
    """Raw perturbation has zero norm inside the mask."""


@dataclass(frozen=True)
class PerturbSpec:
    kind: str = "batch"  # "batch" | "gaussian"
    sigma: float = 1e-4
    mask: str = "all-weights"
    fraction: float = 1.0  # only for mask == "fraction"
    t_frac: float = 0.0  # perturbation time as fraction of total steps

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.mask not in MASK_KINDS:
            raise ValueError(f"unknown mask {self.mask!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must be in [0, 1]")
        if not 0.0 <= self.t_frac <= 1.0:
            raise ValueError("t_frac must be in [0, 1]")


def _init_variances(spec: NetSpec) -> np.ndarray:
    """Per-coordinate initialization variance over the flat space.

    Weights get 2/fan_in.  Biases and norm parameters are constant at init;
    for norm-only masks they borrow the weight variance of the layer their
    output feeds (2/width of their own layer), so the output bias uses its own
    layer's fan-in.
    """
    var = np.zeros(n_params(spec))
    sizes = spec.sizes
    for e in layout(spec):
        if e.name == "W":
            var[e.sl] = 2.0 / e.fan_in
        elif e.layer < spec.n_hidden:
            # b/gamma/beta of hidden layer l feed weights with fan-in widths[l]
            var[e.sl] = 2.0 / sizes[e.layer + 1]
        else:
            var[e.sl] = 2.0 / e.fan_in  # output bias: no following layer
    return var


def _weight_coords(spec: NetSpec) -> np.ndarray:
    mask = np.zeros(n_params(spec), dtype=bool)
    for e in layout(spec):
        if e.name == "W":
            mask[e.sl] = True
    return mask


def build_mask(pspec: PerturbSpec, netspec: NetSpec, plan: SeedPlan) -> np.ndarray:
    """0/1 mask over the flat parameter space selecting perturbed coordinates."""
    weights = _weight_coords(netspec)
    if pspec.mask == "all-weights":
        return weights
    if pspec.mask == "norm-only":
        return ~weights
    widx = np.flatnonzero(weights)
    gen = plan.stream("perturb-mask")
    if pspec.mask == "single-weight":
        chosen = widx[gen.integers(widx.size)]
        mask = np.zeros(weights.size, dtype=bool)
        mask[chosen] = True
        return mask
    count = int(round(pspec.fraction * widx.size))
    if count == 0:
        warnings.warn("fraction mask rounded to 0 coordinates; promoting to 1")
        count = 1
    chosen = gen.choice(widx, size=count, replace=False)
    mask = np.zeros(weights.size, dtype=bool)
    mask[chosen] = True
    return mask


def sample_gaussian(netspec: NetSpec, mask: np.ndarray, plan: SeedPlan) -> np.ndarray:
    """Raw Gaussian direction shaped like the init distribution, zero off-mask."""
    gen = plan.stream("perturb-gaussian")
    draws = gaussians(gen, mask.size) * np.sqrt(_init_variances(netspec))
    eps_hat = np.zeros(mask.size)
    eps_hat[mask] = draws[mask]
    return eps_hat


def sample_batch(
    params: ParamSet,
    dataset: Dataset,
    config: TrainConfig,
    plan: SeedPlan,
    step: int,
    b: int | None = None,
    mask: np.ndarray | None = None,
    draw: int = 0,
) -> np.ndarray:
    """Mean gradient over an independently drawn seeded batch, zero off-mask.

    The batch comes from a dedicated stream, independent of the training batch
    schedule; ``draw`` addresses independent repeats at the same step.
    """
    if b is None:
        b = config.batch_size
    if b > dataset.n:
        raise ValueError("perturbation batch exceeds dataset size")
    gen = plan.stream("perturb-batch", (step << 20) + draw)
    # Sorted so the reduction order is canonical: two draws of the same set
    # of examples give bitwise-identical gradients.
    idx = np.sort(gen.choice(dataset.n, size=b, replace=False))
    eps_hat = grad(params, dataset.inputs[idx], dataset.labels[idx])
    if mask is not None:
        eps_hat = np.where(mask, eps_hat, 0.0)
    return eps_hat


def expected_init_norm(netspec: NetSpec, mask: np.ndarray) -> float:
    """sqrt of the summed initialization variance of the masked coordinates."""
    if not mask.any():
        raise ValueError("empty mask")
    return float(np.sqrt(_init_variances(netspec)[mask].sum()))


def normalize(eps_hat: np.ndarray, mask: np.ndarray, netspec: NetSpec) -> np.ndarray:
    """Rescale the masked direction so its L2 norm is expected_init_norm."""
    masked = np.where(mask, eps_hat, 0.0)
    norm = np.linalg.norm(masked)
    if norm == 0:
        raise DegenerateDirection("perturbation direction has zero norm in mask")
    return masked * (expected_init_norm(netspec, mask) / norm)


def apply(params: ParamSet, eps: np.ndarray, sigma: float) -> ParamSet:
    """theta + sigma * eps as a new ParamSet; the input is untouched."""
    return ParamSet(params.spec, params.flat + sigma * eps)


def sgd_noise_scale(
    params: ParamSet,
    dataset: Dataset,
    config: TrainConfig,
    plan: SeedPlan,
    step: int,
    n_pairs: int = 64,
) -> float:
    """Monte Carlo estimate of E || lr * (g_B - g_B') ||_2 at this step.

    Pairs of independent batches simulate two copies each taking one
    independently sampled optimization step.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    lr = lr_at(config, step)
    if lr == 0:
        return 0.0
    total = 0.0
    for k in range(n_pairs):
        g1 = sample_batch(params, dataset, config, plan, step, draw=2 * k)
        g2 = sample_batch(params, dataset, config, plan, step, draw=2 * k + 1)
        total += lr * np.linalg.norm(g1 - g2)
    return total / n_pairs
