"""Fully-connected classifiers with ReLU and layer normalization.

Parameters live in a single canonical flat float64 vector; per-layer arrays
are views into it.  Forward captures post-activation traces, backprop is
exact, and everything runs in 64-bit floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import Dataset

__all__ = [
    "LN_EPS",
    "NetSpec",
    "ParamSet",
    "ActivationTrace",
    "init",
    "forward",
    "grad",
    "loss_ce",
    "error01",
    "accuracy",
]

LN_EPS = 1e-5


@dataclass(frozen=True)
class NetSpec:
    in_dim: int
    widths: tuple[int, ...]
    classes: int
    layer_norm: tuple[bool, ...]

    def __post_init__(self):
        if self.in_dim < 1 or self.classes < 1:
            raise ValueError("in_dim and classes must be >= 1")
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ValueError("need at least one hidden layer, all widths >= 1")
        if len(self.layer_norm) != len(self.widths):
            raise ValueError("layer_norm must have one flag per hidden layer")

    @staticmethod
    def make(in_dim, widths, classes, layer_norm=True) -> "NetSpec":
        widths = tuple(int(w) for w in widths)
        if isinstance(layer_norm, bool):
            layer_norm = (layer_norm,) * len(widths)
        return NetSpec(int(in_dim), widths, int(classes), tuple(bool(f) for f in layer_norm))

    @property
    def n_hidden(self) -> int:
        return len(self.widths)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.in_dim,) + self.widths + (self.classes,)


@dataclass(frozen=True)
class _Entry:
    name: str  # "W" | "b" | "gamma" | "beta"
    layer: int  # 0..n_hidden (n_hidden = output layer)
    offset: int
    shape: tuple[int, ...]
    fan_in: int  # fan-in of the layer this parameter belongs to

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def sl(self) -> slice:
        return slice(self.offset, self.offset + self.size)


@lru_cache(maxsize=None)
def layout(spec: NetSpec) -> tuple[_Entry, ...]:
    """Canonical flat ordering: per layer W, b, then gamma/beta if normalized."""
    sizes = spec.sizes
    entries = []
    offset = 0

    def add(name, layer, shape):
        nonlocal offset
        entries.append(_Entry(name, layer, offset, shape, sizes[layer]))
        offset += int(np.prod(shape))

    for l in range(spec.n_hidden):
        add("W", l, (sizes[l + 1], sizes[l]))
        add("b", l, (sizes[l + 1],))
        if spec.layer_norm[l]:
            add("gamma", l, (sizes[l + 1],))
            add("beta", l, (sizes[l + 1],))
    out = spec.n_hidden
    add("W", out, (sizes[out + 1], sizes[out]))
    add("b", out, (sizes[out + 1],))
    return tuple(entries)


def n_params(spec: NetSpec) -> int:
    entries = layout(spec)
    return entries[-1].offset + entries[-1].size


class ParamSet:
    """Parameter collection backed by one flat float64 vector.

    Treated as an immutable value: operations return new ParamSets.  The
    per-layer accessors return views into the flat vector.
    """

    __slots__ = ("spec", "flat", "_by_key")

    def __init__(self, spec: NetSpec, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != n_params(spec):
            raise ValueError(
                f"flat vector has length {flat.size}, spec needs {n_params(spec)}"
            )
        object.__setattr__(self, "spec", spec)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(
            self, "_by_key", {(e.name, e.layer): e for e in layout(spec)}
        )

    def __setattr__(self, *_):
        raise AttributeError("ParamSet is immutable")

    def get(self, name: str, l: int) -> np.ndarray:
        e = self._by_key[(name, l)]
        return self.flat[e.sl].reshape(e.shape)

    def W(self, l: int) -> np.ndarray:
        return self.get("W", l)

    def b(self, l: int) -> np.ndarray:
        return self.get("b", l)

    def gamma(self, l: int) -> np.ndarray:
        return self.get("gamma", l)

    def beta(self, l: int) -> np.ndarray:
        return self.get("beta", l)

    def has_ln(self, l: int) -> bool:
        return l < self.spec.n_hidden and self.spec.layer_norm[l]

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    def copy(self) -> "ParamSet":
        return ParamSet(self.spec, self.flat.copy())


@dataclass(frozen=True)
class ActivationTrace:
    hidden: list  # per hidden layer, post-activation (batch, n_l)
    logits: np.ndarray  # (batch, classes)


def init(spec: NetSpec, gen) -> ParamSet:
    """He-normal weights (var 2/fan_in), zero biases, unit gains, zero shifts."""
    from .rng import gaussians

    vec = np.zeros(n_params(spec))
    for e in layout(spec):
        if e.name == "W":
            vec[e.sl] = gaussians(gen, e.size) * np.sqrt(2.0 / e.fan_in)
        elif e.name == "gamma":
            vec[e.sl] = 1.0
    return ParamSet(spec, vec)


def _layer_norm(z: np.ndarray):
    mu = z.mean(axis=1, keepdims=True)
    zc = z - mu
    var = np.mean(zc * zc, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    return zc * inv_std, inv_std


def forward(params: ParamSet, inputs: np.ndarray) -> tuple[np.ndarray, ActivationTrace]:
    """Hidden layers: ReLU(LN(W h + b) * gamma + beta); output layer affine."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.in_dim:
        raise ValueError("input shape does not match spec")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    h = x
    hidden = []
    for l in range(params.spec.n_hidden):
        z = h @ params.W(l).T + params.b(l)
        if params.has_ln(l):
            zn, _ = _layer_norm(z)
            z = zn * params.gamma(l) + params.beta(l)
        h = np.maximum(z, 0.0)
        hidden.append(h)
    logits = h @ params.W(params.spec.n_hidden).T + params.b(params.spec.n_hidden)
    return logits, ActivationTrace(hidden, logits)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def grad(params: ParamSet, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Exact flat gradient of mean cross-entropy over the batch."""
    spec = params.spec
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels)
    batch = x.shape[0]

    # Forward, keeping what backprop needs.
    h = x
    acts = [x]  # inputs to each layer
    ln_cache = []  # (zn, inv_std) per hidden layer, or None
    for l in range(spec.n_hidden):
        z = h @ params.W(l).T + params.b(l)
        if params.has_ln(l):
            zn, inv_std = _layer_norm(z)
            ln_cache.append((zn, inv_std))
            z = zn * params.gamma(l) + params.beta(l)
        else:
            ln_cache.append(None)
        h = np.maximum(z, 0.0)
        acts.append(h)
    out = spec.n_hidden
    logits = h @ params.W(out).T + params.b(out)

    p = np.exp(_log_softmax(logits))
    dlogits = p
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch

    g = np.zeros(n_params(spec))
    gview = ParamSet(spec, g)  # views for writing per-layer slices

    gview.get("W", out)[:] = dlogits.T @ acts[out]
    gview.get("b", out)[:] = dlogits.sum(axis=0)
    dh = dlogits @ params.W(out)

    for l in range(spec.n_hidden - 1, -1, -1):
        da = dh * (acts[l + 1] > 0)  # ReLU'(0) = 0
        if params.has_ln(l):
            zn, inv_std = ln_cache[l]
            gview.get("gamma", l)[:] = (da * zn).sum(axis=0)
            gview.get("beta", l)[:] = da.sum(axis=0)
            dzn = da * params.gamma(l)
            dz = inv_std * (
                dzn
                - dzn.mean(axis=1, keepdims=True)
                - zn * (dzn * zn).mean(axis=1, keepdims=True)
            )
        else:
            dz = da
        gview.get("W", l)[:] = dz.T @ acts[l]
        gview.get("b", l)[:] = dz.sum(axis=0)
        if l > 0:
            dh = dz @ params.W(l)
    return g


def loss_ce(params: ParamSet, dataset: Dataset) -> float:
    logits, _ = forward(params, dataset.inputs)
    logp = _log_softmax(logits)
    return float(-logp[np.arange(dataset.n), dataset.labels].mean())


def error01(params: ParamSet, dataset: Dataset) -> float:
    logits, _ = forward(params, dataset.inputs)
    pred = logits.argmax(axis=1)
    return float((pred != dataset.labels).mean())


def accuracy(params: ParamSet, dataset: Dataset) -> float:
    return 1.0 - error01(params, dataset)
