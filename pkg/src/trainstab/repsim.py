"""Representational similarity: debiased linear HSIC and Angular CKA."""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .nets import ParamSet, forward
from .rng import SeedPlan

__all__ = [
    "hsic_debiased",
    "angular_cka",
    "probe_representations",
    "DegenerateRepresentation",
]


class DegenerateRepresentation(ValueError):
    """Self-HSIC is not positive; the angle is undefined."""


def _tril_vec(X: np.ndarray) -> np.ndarray:
    """Strictly-lower-triangle entries of the centered linear Gram matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("activations must be 2-D (examples x units)")
    m = X.shape[0]
    if m < 4:
        raise ValueError("need at least 4 probe examples")
    Xc = X - X.mean(axis=0)
    G = Xc @ Xc.T
    return G[np.tril_indices(m, -1)]


def hsic_debiased(X: np.ndarray, Y: np.ndarray) -> float:
    """Reduced-bias linear HSIC.

    2/(m(m-3)) times the Frobenius inner product of the strictly lower
    triangles of the centered Gram matrices (the diagonal is ignored).
    """
    a = _tril_vec(X)
    b = _tril_vec(Y)
    if a.size != b.size:
        raise ValueError("row-count mismatch between representations")
    m = np.asarray(X).shape[0]
    return float(2.0 / (m * (m - 3)) * (a @ b))


def angular_cka(X: np.ndarray, Y: np.ndarray) -> float:
    """Angle in [0, pi]: arccos of the normalized debiased HSIC.

    0 means identical up to orthogonal transform and positive scaling, pi/2
    independent.  Since the normalized HSIC is the cosine between the two
    strict-lower-triangle Gram vectors, the angle is evaluated through the
    chordal identity 2*arcsin(|a_hat - b_hat|/2), which is exact and stays
    accurate where arccos of a near-1 cosine would lose half the digits.
    """
    a = _tril_vec(X)
    b = _tril_vec(Y)
    if a.size != b.size:
        raise ValueError("row-count mismatch between representations")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateRepresentation(
            f"zero self-HSIC (|X|: {na}, |Y|: {nb})"
        )
    chord = np.linalg.norm(a / na - b / nb)
    return float(2.0 * np.arcsin(min(1.0, chord / 2.0)))


def probe_representations(
    params_a: ParamSet,
    params_b: ParamSet,
    dataset: Dataset,
    plan: SeedPlan,
    m: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Penultimate (last hidden, post-activation) outputs on a shared probe.

    The same seeded m-example probe is fed to both networks; m defaults to
    min(1000, n).
    """
    if params_a.spec != params_b.spec:
        raise ValueError("parameter sets come from different specs")
    if m is None:
        m = min(1000, dataset.n)
    if m < 4:
        raise ValueError("need at least 4 probe examples")
    if m > dataset.n:
        raise ValueError("probe larger than dataset")
    idx = np.sort(plan.stream("probe-sample").choice(dataset.n, size=m, replace=False))
    probe = dataset.inputs[idx]
    _, trace_a = forward(params_a, probe)
    _, trace_b = forward(params_b, probe)
    return trace_a.hidden[-1], trace_b.hidden[-1]
