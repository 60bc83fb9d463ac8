"""Permutation alignment of networks.

Weight matching (coordinate ascent over per-layer assignment problems) and
activation matching, the function-preserving permutation action, and
fixed-point statistics.
"""

from __future__ import annotations

import json

import numpy as np

from .lap import lap_solve
from .nets import ActivationTrace, NetSpec, ParamSet
from .rng import SeedPlan

__all__ = [
    "PermSet",
    "identity_perms",
    "compose",
    "invert",
    "permute",
    "weight_match",
    "activation_match",
    "fixed_fraction",
    "perms_to_json",
    "perms_from_json",
]

# A PermSet is a list of int64 arrays, one permutation per hidden layer.
# perm[l][i] = j means unit j of the source network moves to position i of
# the aligned network; input and output layers stay fixed.
PermSet = list


def identity_perms(spec: NetSpec) -> PermSet:
    return [np.arange(w, dtype=np.int64) for w in spec.widths]


def _check(spec: NetSpec, perms: PermSet) -> None:
    if len(perms) != spec.n_hidden:
        raise ValueError("wrong number of layer permutations")
    for w, p in zip(spec.widths, perms):
        if sorted(p.tolist()) != list(range(w)):
            raise ValueError("layer permutation is not a bijection")


def compose(outer: PermSet, inner: PermSet) -> PermSet:
    """Permutation applying ``inner`` first, then ``outer``."""
    return [inner_l[outer_l] for outer_l, inner_l in zip(outer, inner)]


def invert(perms: PermSet) -> PermSet:
    out = []
    for p in perms:
        inv = np.empty_like(p)
        inv[p] = np.arange(p.size, dtype=np.int64)
        out.append(inv)
    return out


def permute(params: ParamSet, perms: PermSet) -> ParamSet:
    """Reorder hidden units; the network function is exactly preserved."""
    spec = params.spec
    _check(spec, perms)
    out = params.flatten()
    view = ParamSet(spec, out)
    for l in range(spec.n_hidden):
        p = perms[l]
        prev = perms[l - 1] if l > 0 else None
        W = params.W(l)[p]
        if prev is not None:
            W = W[:, prev]
        view.get("W", l)[:] = W
        view.get("b", l)[:] = params.b(l)[p]
        if params.has_ln(l):
            view.get("gamma", l)[:] = params.gamma(l)[p]
            view.get("beta", l)[:] = params.beta(l)[p]
    last = spec.n_hidden
    view.get("W", last)[:] = params.W(last)[:, perms[-1]]
    return ParamSet(spec, out)


def _match_objective(params_a: ParamSet, params_b: ParamSet, perms: PermSet) -> float:
    aligned = permute(params_b, perms)
    return float(params_a.flat @ aligned.flat)


def _layer_cost(params_a: ParamSet, params_b: ParamSet, perms: PermSet, l: int) -> np.ndarray:
    """cost[i, j]: gain from mapping unit j of b's layer l to slot i of a."""
    spec = params_a.spec
    Wb = params_b.W(l)
    if l > 0:
        Wb = Wb[:, perms[l - 1]]
    cost = params_a.W(l) @ Wb.T
    nxt = l + 1
    Wb_next = params_b.W(nxt)
    if nxt < spec.n_hidden:
        Wb_next = Wb_next[perms[nxt]]
    cost += params_a.W(nxt).T @ Wb_next
    cost += np.outer(params_a.b(l), params_b.b(l))
    if params_a.has_ln(l):
        cost += np.outer(params_a.gamma(l), params_b.gamma(l))
        cost += np.outer(params_a.beta(l), params_b.beta(l))
    return cost


def weight_match(
    params_a: ParamSet,
    params_b: ParamSet,
    plan: SeedPlan,
    max_passes: int = 100,
) -> PermSet:
    """Permutation aligning params_b to params_a by weight inner products.

    Coordinate ascent: layers are visited in a seeded random order each pass,
    each visit solving a max-assignment on that layer's cost matrix.  The
    objective never decreases; terminates when a full pass changes nothing.
    """
    if params_a.spec != params_b.spec:
        raise ValueError("parameter sets come from different specs")
    spec = params_a.spec
    perms = identity_perms(spec)
    objective = _match_objective(params_a, params_b, perms)
    for pass_idx in range(max_passes):
        order = plan.stream("match-order", pass_idx).permutation(spec.n_hidden)
        changed = False
        for l in order:
            cost = _layer_cost(params_a, params_b, perms, int(l))
            new_p = lap_solve(cost, "max")
            if not np.array_equal(new_p, perms[l]):
                perms[l] = new_p
                changed = True
        if changed:
            new_objective = _match_objective(params_a, params_b, perms)
            # Each accepted assignment maximizes the layer's contribution with
            # the rest held fixed, so ascent holds up to roundoff.
            if new_objective < objective - 1e-9 * max(1.0, abs(objective)):
                raise AssertionError("weight matching objective decreased")
            objective = new_objective
        else:
            break
    return perms


def activation_match(trace_a: ActivationTrace, trace_b: ActivationTrace) -> PermSet:
    """Per-layer max-assignment on cross-correlations of unit activations."""
    if len(trace_a.hidden) != len(trace_b.hidden):
        raise ValueError("traces have different depths")
    perms = []
    for A, B in zip(trace_a.hidden, trace_b.hidden):
        if A.shape != B.shape:
            raise ValueError("traces are not from the same probe inputs")
        Ac = A - A.mean(axis=0)
        Bc = B - B.mean(axis=0)
        na = np.linalg.norm(Ac, axis=0)
        nb = np.linalg.norm(Bc, axis=0)
        corr = Ac.T @ Bc
        denom = np.outer(na, nb)
        # Zero-variance units contribute zero correlation.
        corr = np.divide(corr, denom, out=np.zeros_like(corr), where=denom > 0)
        perms.append(lap_solve(corr, "max"))
    return perms


def fixed_fraction(perms: PermSet) -> float:
    """Share of hidden units mapped to themselves."""
    fixed = sum(int((p == np.arange(p.size)).sum()) for p in perms)
    total = sum(p.size for p in perms)
    return fixed / total


def perms_to_json(perms: PermSet) -> str:
    return json.dumps([p.tolist() for p in perms])


def perms_from_json(text: str) -> PermSet:
    return [np.asarray(p, dtype=np.int64) for p in json.loads(text)]
