"""Vector rewards for recommendation paths.

Four objectives, in fixed order:

1. learning effect   -- normalized exam-score gain from the simulator;
2. ZPD alignment     -- mean Gaussian kernel between each step's difficulty
                        and the proficiency-conditioned reference center z(a);
3. length compliance -- 1 inside a tolerance band around the target length,
                        linear penalty outside;
4. group diversity   -- one minus the mean pairwise n-gram Jaccard overlap
                        against the other paths sampled for the same prompt.

The ZPD reference is estimated from offline trajectories: per proficiency
bin, the mean difficulty of concepts appearing in high-outcome trajectories
(learning effect strictly above 0.9). Two evaluation-only diagnostics
(length score, within-path diversity) live here as well; they are reported
but never trained on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .simulator import ConceptCatalog

#: strict lower bound on learning effect for a trajectory to support z(a)
HIGH_OUTCOME_THRESHOLD = 0.9

#: component order of the reward vector
REWARD_COMPONENTS = ("e_p", "s_zpd", "r_len", "d_div")


@dataclass(frozen=True)
class RewardVector:
    e_p: float
    s_zpd: float
    r_len: float
    d_div: float

    def to_array(self) -> np.ndarray:
        return np.array([self.e_p, self.s_zpd, self.r_len, self.d_div], dtype=float)


@dataclass(frozen=True)
class LengthConstraint:
    target: int
    tolerance: int = 1
    penalty: float = 0.1

    def __post_init__(self):
        if self.target < 1:
            raise ValueError(f"target length must be >= 1, got {self.target}")
        if self.tolerance < 0:
            raise ValueError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.penalty < 0:
            raise ValueError(f"penalty must be >= 0, got {self.penalty}")


class ZpdSupportError(ValueError):
    """No trajectory clears the high-outcome threshold anywhere."""


@dataclass(frozen=True)
class ZpdReference:
    """Per-proficiency-bin difficulty centers with a shared kernel width."""

    num_bins: int
    z: tuple[float, ...]
    sigma: float
    support: tuple[int, ...]

    def __post_init__(self):
        if self.num_bins < 1 or len(self.z) != self.num_bins:
            raise ValueError("z must have one entry per bin")
        if len(self.support) != self.num_bins:
            raise ValueError("support must have one entry per bin")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def bin_index(self, a: float) -> int:
        idx = int(a * self.num_bins)
        return min(max(idx, 0), self.num_bins - 1)

    def center(self, a: float) -> float:
        return self.z[self.bin_index(a)]

    def to_dict(self) -> dict:
        return {
            "bins": self.num_bins,
            "z": [round(float(v), 12) for v in self.z],
            "sigma": self.sigma,
            "support": list(self.support),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ZpdReference":
        return cls(
            num_bins=int(d["bins"]),
            z=tuple(float(v) for v in d["z"]),
            sigma=float(d["sigma"]),
            support=tuple(int(s) for s in d["support"]),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ZpdReference":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def estimate_zpd_reference(
    trajectories,
    catalog: ConceptCatalog,
    sigma: float = 0.1,
    num_bins: int = 5,
) -> ZpdReference:
    """Estimate per-bin difficulty centers from offline trajectories.

    ``trajectories`` is an iterable of (proficiency, path, learning_effect).
    Only trajectories with learning effect strictly above the high-outcome
    threshold contribute; difficulties are aggregated per step occurrence,
    while support counts qualifying trajectories per bin. Empty bins are
    filled by linear interpolation between supported bin centers (edge bins
    extend the nearest supported value).
    """
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    sums = np.zeros(num_bins)
    counts = np.zeros(num_bins, dtype=int)
    traj_counts = np.zeros(num_bins, dtype=int)
    diffs = catalog.difficulties
    for a, path, e_p in trajectories:
        if e_p <= HIGH_OUTCOME_THRESHOLD:
            continue
        if len(path) == 0:
            continue
        idx = min(max(int(a * num_bins), 0), num_bins - 1)
        traj_counts[idx] += 1
        for c in path:
            sums[idx] += diffs[int(c)]
            counts[idx] += 1
    if counts.sum() == 0:
        raise ZpdSupportError(
            "insufficient high-outcome support: no trajectory with "
            f"learning effect above {HIGH_OUTCOME_THRESHOLD}"
        )
    centers = (np.arange(num_bins) + 0.5) / num_bins
    supported = counts > 0
    z = np.empty(num_bins)
    z[supported] = sums[supported] / counts[supported]
    if not supported.all():
        z[~supported] = np.interp(centers[~supported], centers[supported], z[supported])
    return ZpdReference(
        num_bins=num_bins,
        z=tuple(float(v) for v in z),
        sigma=sigma,
        support=tuple(int(c) for c in traj_counts),
    )


def score_zpd(path, catalog: ConceptCatalog, a: float, ref: ZpdReference) -> float:
    """Mean Gaussian kernel between step difficulties and z(a)."""
    if len(path) == 0:
        raise ValueError("path is empty")
    z = ref.center(a)
    two_s2 = 2.0 * ref.sigma * ref.sigma
    total = 0.0
    for c in path:
        d = catalog.difficulty(int(c)) - z
        total += math.exp(-(d * d) / two_s2)
    return total / len(path)


def score_length(path, lc: LengthConstraint) -> float:
    """1 inside the tolerance band, linear penalty outside."""
    delta = abs(len(path) - lc.target)
    if delta <= lc.tolerance:
        return 1.0
    return -lc.penalty * (delta - lc.tolerance)


def ngram_jaccard(path_a, path_b, n: int = 2) -> float:
    """Jaccard overlap of n-gram sets; two gram-free paths count as identical."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    grams_a = {tuple(path_a[i : i + n]) for i in range(len(path_a) - n + 1)}
    grams_b = {tuple(path_b[i : i + n]) for i in range(len(path_b) - n + 1)}
    if not grams_a and not grams_b:
        return 1.0
    union = len(grams_a | grams_b)
    if union == 0:
        return 1.0
    return len(grams_a & grams_b) / union


def score_diversity(index: int, group_paths, n: int = 2) -> float:
    """One minus mean pairwise n-gram Jaccard against the rest of the group."""
    k = len(group_paths)
    if k == 0:
        raise ValueError("group is empty")
    if not (0 <= index < k):
        raise ValueError(f"index {index} outside group of size {k}")
    if k == 1:
        return 1.0
    me = group_paths[index]
    total = 0.0
    for j, other in enumerate(group_paths):
        if j != index:
            total += ngram_jaccard(me, other, n)
    return 1.0 - total / (k - 1)


def compose_reward_vector(
    path,
    e_p: float,
    a: float,
    catalog: ConceptCatalog,
    ref: ZpdReference,
    lc: LengthConstraint,
    group_paths,
    index: int,
    n: int = 2,
) -> RewardVector:
    return RewardVector(
        e_p=float(e_p),
        s_zpd=score_zpd(path, catalog, a, ref),
        r_len=score_length(path, lc),
        d_div=score_diversity(index, group_paths, n),
    )


def compose_group_rewards(
    paths,
    e_ps,
    a: float,
    catalog: ConceptCatalog,
    ref: ZpdReference,
    lc: LengthConstraint,
    n: int = 2,
) -> list[RewardVector]:
    if len(paths) != len(e_ps):
        raise ValueError("paths and learning effects disagree in length")
    return [
        compose_reward_vector(p, e, a, catalog, ref, lc, paths, i, n)
        for i, (p, e) in enumerate(zip(paths, e_ps))
    ]


def len_score(path, l_target: int) -> float:
    """Evaluation-only length diagnostic in [0, 1]."""
    if l_target < 1:
        raise ValueError("l_target must be >= 1")
    return max(0.0, 1.0 - abs(len(path) - l_target) / l_target)


def div_path(path) -> float:
    """Evaluation-only within-path diversity: unique concepts over length."""
    if len(path) == 0:
        raise ValueError("path is empty")
    return len(set(int(c) for c in path)) / len(path)
