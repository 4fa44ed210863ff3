"""Indicator-based group fitness for vector rewards.

The additive epsilon indicator of an ordered pair (r_j, r_i) is the smallest
shift that makes r_j weakly dominate r_i, i.e. max over components of
(r_i - r_j). Group fitness aggregates pairwise indicators with an
exponential kernel (the IBEA construction): members that other members
nearly dominate accumulate large negative fitness. Group-relative
advantages standardize fitness within the group.

Two baseline fitness schemes with the same interface: a fixed-weight scalar
sum and the exact hypervolume contribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def eps_indicator(r_j: np.ndarray, r_i: np.ndarray) -> float:
    """Additive epsilon indicator: max over components of (r_i - r_j)."""
    r_j = np.asarray(r_j, dtype=float)
    r_i = np.asarray(r_i, dtype=float)
    if r_j.shape != r_i.shape:
        raise ValueError(f"shape mismatch: {r_j.shape} vs {r_i.shape}")
    if r_j.ndim != 1 or r_j.size == 0:
        raise ValueError("reward vectors must be non-empty 1-d arrays")
    return float(np.max(r_i - r_j))


def pareto_fitness(rewards: np.ndarray, kappa: float) -> np.ndarray:
    """Exponential indicator fitness of each group member.

    rewards is (K, M). Fitness of member i is
    -sum over j != i of exp(-I(r_j, r_i) / kappa),
    so being nearly dominated (small or negative indicators against many
    members) drives fitness strongly negative.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 2 or r.shape[0] < 2:
        raise ValueError("rewards must be (K, M) with K >= 2")
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    # ind[j, i] = max_m (r[i, m] - r[j, m])
    ind = np.max(r[None, :, :] - r[:, None, :], axis=2)
    expo = np.exp(-ind / kappa)
    # drop the j == i term (always exp(0) = 1)
    return -(expo.sum(axis=0) - 1.0)


def group_advantages(fitness: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Standardize fitness within the group (population std, stabilized)."""
    f = np.asarray(fitness, dtype=float)
    if f.ndim != 1 or f.size < 1:
        raise ValueError("fitness must be a non-empty 1-d array")
    std = float(f.std())
    return (f - f.mean()) / (std + eps)


def dominates(a: np.ndarray, b: np.ndarray) -> bool:
    """True when a is at least b everywhere and strictly better somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


@dataclass(frozen=True)
class ParetoFront:
    indices: tuple[int, ...]
    vectors: np.ndarray


def pareto_front(vectors: np.ndarray) -> ParetoFront:
    """Indices and members of the non-dominated subset (pairwise scan)."""
    v = np.asarray(vectors, dtype=float)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("vectors must be a non-empty (N, M) array")
    n = v.shape[0]
    keep = []
    for i in range(n):
        dominated = False
        for j in range(n):
            if j != i and dominates(v[j], v[i]):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return ParetoFront(indices=tuple(keep), vectors=v[keep].copy())


def hypervolume(points: np.ndarray, ref: np.ndarray) -> float:
    """Exact dominated hypervolume via inclusion-exclusion.

    Intended for small groups (K <= 8 or so); the subset sum is 2^K - 1
    terms, each a box-intersection volume (componentwise min against the
    reference point). Points at or below the reference contribute nothing.
    """
    p = np.asarray(points, dtype=float)
    r = np.asarray(ref, dtype=float)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("points must be a non-empty (N, M) array")
    if r.shape != (p.shape[1],):
        raise ValueError("reference point dimension mismatch")
    n = p.shape[0]
    if n > 16:
        raise ValueError("inclusion-exclusion hypervolume limited to 16 points")
    total = 0.0
    for mask in range(1, 1 << n):
        mins = None
        bits = 0
        m = mask
        while m:
            i = (m & -m).bit_length() - 1
            mins = p[i] if mins is None else np.minimum(mins, p[i])
            bits += 1
            m &= m - 1
        edges = np.maximum(0.0, mins - r)
        vol = float(np.prod(edges))
        total += vol if bits % 2 == 1 else -vol
    return total


def hv_contribution_fitness(rewards: np.ndarray, ref: np.ndarray | None = None) -> np.ndarray:
    """Per-member exact hypervolume contribution.

    Default reference point: componentwise group minimum minus 0.1. A
    supplied reference is clipped so it never sits above any member.
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 2 or r.shape[0] < 1:
        raise ValueError("rewards must be (K, M) with K >= 1")
    lo = r.min(axis=0)
    if ref is None:
        ref_pt = lo - 0.1
    else:
        ref_pt = np.minimum(np.asarray(ref, dtype=float), lo)
    total = hypervolume(r, ref_pt)
    k = r.shape[0]
    out = np.empty(k)
    for i in range(k):
        if k == 1:
            out[i] = total
        else:
            rest = np.delete(r, i, axis=0)
            out[i] = total - hypervolume(rest, ref_pt)
    return out


def weighted_sum_fitness(rewards: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Fixed-weight scalarization baseline."""
    r = np.asarray(rewards, dtype=float)
    w = np.asarray(weights, dtype=float)
    if r.ndim != 2:
        raise ValueError("rewards must be (K, M)")
    if w.shape != (r.shape[1],):
        raise ValueError(f"weights must have {r.shape[1]} entries")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return r @ w
