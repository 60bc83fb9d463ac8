"""Scalar divergence measures between two trained networks.

L2 distance, interpolation loss barriers (endpoint-interpolated convention),
ensemble accuracy, and exponential fits to divergence time series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .nets import ParamSet, error01, forward, loss_ce

__all__ = [
    "BarrierResult",
    "DivergenceSeries",
    "l2",
    "barrier_curve",
    "barrier",
    "ensemble_eval",
    "fit_exponential",
]


@dataclass(frozen=True)
class BarrierResult:
    value: float
    argmax_alpha: float
    curve: list  # (alpha, loss, endpoint-interpolated reference)


@dataclass(frozen=True)
class DivergenceSeries:
    steps: list
    l2: list
    barrier: list

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.steps[1:], self.steps)):
            raise ValueError("steps must be strictly increasing")

    def field(self, name: str) -> list:
        if name not in ("l2", "barrier"):
            raise ValueError(f"unknown series field {name!r}")
        return getattr(self, name)


def l2(a: ParamSet, b: ParamSet) -> float:
    if a.spec != b.spec:
        raise ValueError("parameter sets come from different specs")
    return float(np.linalg.norm(a.flat - b.flat))


def barrier_curve(loss_fn, flat_a: np.ndarray, flat_b: np.ndarray, n_alphas: int = 11) -> BarrierResult:
    """Max excess of loss_fn along the linear path over the endpoint chord.

    The alpha grid includes both endpoints (their excess is exactly 0, so the
    barrier is never negative).  Weights are paired as (alpha_k, alpha_{n-1-k})
    so swapping the endpoints gives bitwise the same result.
    """
    if n_alphas < 2:
        raise ValueError("need at least 2 interpolation points")
    if flat_a.shape != flat_b.shape:
        raise ValueError("endpoint shape mismatch")
    alphas = np.arange(n_alphas) / (n_alphas - 1)
    if np.array_equal(flat_a, flat_b):
        # Constant path: zero excess everywhere, exactly.
        ref = loss_fn(flat_a)
        return BarrierResult(0.0, 0.0, [(float(al), ref, ref) for al in alphas])
    loss_a = loss_fn(flat_a)
    loss_b = loss_fn(flat_b)
    curve = []
    best, best_alpha = 0.0, 0.0
    for k in range(n_alphas):
        wa, wb = alphas[k], alphas[n_alphas - 1 - k]
        if k == 0:
            loss, ref = loss_b, loss_b
        elif k == n_alphas - 1:
            loss, ref = loss_a, loss_a
        else:
            loss = loss_fn(wa * flat_a + wb * flat_b)
            ref = wa * loss_a + wb * loss_b
        curve.append((float(wa), float(loss), float(ref)))
        excess = loss - ref
        if excess > best:
            best, best_alpha = excess, float(wa)
    return BarrierResult(float(best), best_alpha, curve)


def barrier(
    params_a: ParamSet,
    params_b: ParamSet,
    kind: str,
    dataset: Dataset,
    n_alphas: int = 11,
    subsample: int | None = None,
    subsample_gen=None,
) -> BarrierResult:
    """Loss barrier between two networks on a dataset.

    kind "ce" uses mean cross-entropy, "err" the 0-1 error.  ``subsample``
    evaluates on a seeded subset for speed (count recorded by the caller).
    """
    if params_a.spec != params_b.spec:
        raise ValueError("parameter sets come from different specs")
    if kind not in ("ce", "err"):
        raise ValueError(f"unknown barrier loss kind {kind!r}")
    if subsample is not None and subsample < dataset.n:
        if subsample_gen is None:
            raise ValueError("subsampling requires a generator")
        idx = np.sort(subsample_gen.choice(dataset.n, size=subsample, replace=False))
        dataset = Dataset(
            dataset.inputs[idx], dataset.labels[idx], dataset.n_classes, dataset.split
        )
    spec = params_a.spec
    fn = loss_ce if kind == "ce" else error01

    def loss_fn(flat):
        return fn(ParamSet(spec, flat), dataset)

    return barrier_curve(loss_fn, params_a.flat, params_b.flat, n_alphas)


def ensemble_eval(params_a: ParamSet, params_b: ParamSet, dataset: Dataset) -> float:
    """Accuracy of the logit-averaged two-model ensemble."""
    if params_a.spec != params_b.spec:
        raise ValueError("parameter sets come from different specs")
    logits_a, _ = forward(params_a, dataset.inputs)
    logits_b, _ = forward(params_b, dataset.inputs)
    pred = ((logits_a + logits_b) / 2.0).argmax(axis=1)
    return float((pred == dataset.labels).mean())


def fit_exponential(series: DivergenceSeries, field: str = "l2") -> tuple[float, float]:
    """Least-squares fit of ln(field) against step: returns (rate, r^2).

    Nonpositive values are excluded; fewer than 3 remaining points is an
    error.  r^2 makes non-exponential growth diagnosable.
    """
    steps = np.asarray(series.steps, dtype=np.float64)
    values = np.asarray(series.field(field), dtype=np.float64)
    keep = values > 0
    steps, values = steps[keep], values[keep]
    if steps.size < 3:
        raise ValueError("need at least 3 positive points for an exponential fit")
    logv = np.log(values)
    slope, intercept = np.polyfit(steps, logv, 1)
    fitted = slope * steps + intercept
    ss_res = float(((logv - fitted) ** 2).sum())
    ss_tot = float(((logv - logv.mean()) ** 2).sum())
    if ss_tot == 0.0:
        # A constant series is fit exactly by a flat line (residuals are
        # pure roundoff), so the fit is perfect by definition.
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(slope), r2
