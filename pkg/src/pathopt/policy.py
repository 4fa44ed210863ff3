"""Stochastic path policy: a small MLP over session features.

The policy observes the session-start mastery vector, the student's
proficiency, normalized step/budget features and a one-hot of the previous
action; it never sees intermediate mastery, so path generation is free of
simulator calls. Actions are the concept ids plus a terminal stop action.
The stop action is masked at step 0 (paths are non-empty) and generation is
cut at a hard cap of twice the target length; a forced cut is a
probability-one event and contributes no log-probability.

Gradients of path log-probabilities are analytic (plain backprop through
tanh and softmax) and are checked against central finite differences in the
test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .seeding import derive_seed, make_rng

PARAMS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PromptContext:
    """Frozen per-session conditioning information."""

    mastery: np.ndarray
    proficiency: float
    l_target: int
    l_max: int

    @classmethod
    def for_student(cls, mastery: np.ndarray, proficiency: float, l_target: int) -> "PromptContext":
        return cls(
            mastery=np.asarray(mastery, dtype=float).copy(),
            proficiency=float(proficiency),
            l_target=int(l_target),
            l_max=2 * int(l_target),
        )


@dataclass
class PolicyParams:
    """Two-layer tanh MLP weights. Layout is frozen by to_vector()."""

    num_concepts: int
    hidden: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def num_actions(self) -> int:
        return self.num_concepts + 1

    @property
    def end_action(self) -> int:
        return self.num_concepts

    @property
    def input_dim(self) -> int:
        # mastery, proficiency, step fraction, previous-action one-hot
        # (with a spare slot marking "no previous action"), remaining budget
        return 2 * self.num_concepts + 4

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            num_concepts=self.num_concepts,
            hidden=self.hidden,
            w1=self.w1.copy(),
            b1=self.b1.copy(),
            w2=self.w2.copy(),
            b2=self.b2.copy(),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1.ravel(), self.w2.ravel(), self.b2.ravel()]
        )

    def from_vector(self, vec: np.ndarray) -> "PolicyParams":
        vec = np.asarray(vec, dtype=float)
        sizes = [self.w1.size, self.b1.size, self.w2.size, self.b2.size]
        if vec.shape != (sum(sizes),):
            raise ValueError(f"expected flat vector of length {sum(sizes)}, got {vec.shape}")
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return PolicyParams(
            num_concepts=self.num_concepts,
            hidden=self.hidden,
            w1=parts[0].reshape(self.w1.shape).copy(),
            b1=parts[1].reshape(self.b1.shape).copy(),
            w2=parts[2].reshape(self.w2.shape).copy(),
            b2=parts[3].reshape(self.b2.shape).copy(),
        )

    def num_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size


def init_params(num_concepts: int, hidden: int = 32, seed: int = 0, scale: float = 0.05) -> PolicyParams:
    """Uniform [-scale, scale] weights, zero biases."""
    if num_concepts < 1 or hidden < 1:
        raise ValueError("num_concepts and hidden must be >= 1")
    input_dim = 2 * num_concepts + 4
    num_actions = num_concepts + 1
    rng = make_rng(seed)
    return PolicyParams(
        num_concepts=num_concepts,
        hidden=hidden,
        w1=rng.uniform(-scale, scale, size=(hidden, input_dim)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-scale, scale, size=(num_actions, hidden)),
        b2=np.zeros(num_actions),
    )


def features(ctx: PromptContext, prefix, params: PolicyParams) -> np.ndarray:
    """Assemble one step's input vector for a given prefix."""
    t = len(prefix)
    c = params.num_concepts
    x = np.zeros(params.input_dim)
    x[:c] = ctx.mastery
    x[c] = ctx.proficiency
    x[c + 1] = t / ctx.l_max
    prev_slot = prefix[-1] if t > 0 else c  # spare slot marks "no previous action"
    x[c + 2 + prev_slot] = 1.0
    x[c + 2 + c + 1] = (ctx.l_target - t) / ctx.l_max
    return x


def _forward(params: PolicyParams, x: np.ndarray, mask_end: bool):
    u = params.w1 @ x + params.b1
    h = np.tanh(u)
    logits = params.w2 @ h + params.b2
    if mask_end:
        logits = logits.copy()
        logits[params.end_action] = -np.inf
    m = np.max(logits)
    exp = np.exp(logits - m)
    total = exp.sum()
    log_probs = logits - (m + math.log(total))
    probs = exp / total
    return h, probs, log_probs


def step_logits(params: PolicyParams, ctx: PromptContext, prefix) -> np.ndarray:
    """Masked logits for the next action given a prefix."""
    x = features(ctx, prefix, params)
    u = params.w1 @ x + params.b1
    logits = params.w2 @ np.tanh(u) + params.b2
    if len(prefix) == 0:
        logits = logits.copy()
        logits[params.end_action] = -np.inf
    return logits


def step_distribution(params: PolicyParams, ctx: PromptContext, prefix) -> np.ndarray:
    x = features(ctx, prefix, params)
    _, probs, _ = _forward(params, x, mask_end=(len(prefix) == 0))
    return probs


@dataclass(frozen=True)
class PathSample:
    path: tuple[int, ...]
    step_log_probs: tuple[float, ...]
    log_prob: float
    seed: int


def sample_path(params: PolicyParams, ctx: PromptContext, seed: int) -> PathSample:
    """Ancestral sampling until the stop action or the hard length cap."""
    rng = make_rng(seed)
    prefix: list[int] = []
    logps: list[float] = []
    while len(prefix) < ctx.l_max:
        x = features(ctx, prefix, params)
        _, probs, log_probs = _forward(params, x, mask_end=(len(prefix) == 0))
        action = int(rng.choice(params.num_actions, p=probs))
        logps.append(float(log_probs[action]))
        if action == params.end_action:
            return PathSample(
                path=tuple(prefix),
                step_log_probs=tuple(logps),
                log_prob=float(sum(logps)),
                seed=seed,
            )
        prefix.append(action)
    # hit the cap: forced stop, probability one, no log-prob term
    return PathSample(
        path=tuple(prefix),
        step_log_probs=tuple(logps),
        log_prob=float(sum(logps)),
        seed=seed,
    )


def sample_group(params: PolicyParams, ctx: PromptContext, k: int, seed: int) -> list[PathSample]:
    """K samples with distinct sub-seeds derived from one master seed."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [sample_path(params, ctx, derive_seed(seed, "sample", i)) for i in range(k)]


def _check_path(params: PolicyParams, ctx: PromptContext, path) -> None:
    if len(path) == 0:
        raise ValueError("path is empty")
    if len(path) > ctx.l_max:
        raise ValueError(f"path length {len(path)} exceeds cap {ctx.l_max}")
    for pos, c in enumerate(path):
        if not (0 <= int(c) < params.num_concepts):
            raise ValueError(f"invalid concept id {c} at position {pos}")


def path_log_prob(params: PolicyParams, ctx: PromptContext, path) -> float:
    """Log-probability of a path, including the stop step unless at the cap."""
    _check_path(params, ctx, path)
    total = 0.0
    prefix: list[int] = []
    for c in path:
        x = features(ctx, prefix, params)
        _, _, log_probs = _forward(params, x, mask_end=(len(prefix) == 0))
        total += float(log_probs[int(c)])
        prefix.append(int(c))
    if len(path) < ctx.l_max:
        x = features(ctx, prefix, params)
        _, _, log_probs = _forward(params, x, mask_end=False)
        total += float(log_probs[params.end_action])
    return total


def log_prob_and_grad(
    params: PolicyParams, ctx: PromptContext, path
) -> tuple[float, np.ndarray]:
    """Path log-probability and its gradient as one flat vector.

    Backprop per step: d logp / d logits = onehot(action) - probs, then the
    usual chain through the tanh layer. Masked logits carry zero probability
    and therefore zero gradient.
    """
    _check_path(params, ctx, path)
    gw1 = np.zeros_like(params.w1)
    gb1 = np.zeros_like(params.b1)
    gw2 = np.zeros_like(params.w2)
    gb2 = np.zeros_like(params.b2)
    total = 0.0

    def accumulate(prefix, action: int, mask_end: bool) -> float:
        nonlocal gw1, gb1, gw2, gb2
        x = features(ctx, prefix, params)
        h, probs, log_probs = _forward(params, x, mask_end)
        dz = -probs
        dz[action] += 1.0
        gw2 += np.outer(dz, h)
        gb2 += dz
        dh = params.w2.T @ dz
        du = (1.0 - h * h) * dh
        gw1 += np.outer(du, x)
        gb1 += du
        return float(log_probs[action])

    prefix: list[int] = []
    for c in path:
        total += accumulate(prefix, int(c), mask_end=(len(prefix) == 0))
        prefix.append(int(c))
    if len(path) < ctx.l_max:
        total += accumulate(prefix, params.end_action, mask_end=False)
    grad = np.concatenate([gw1.ravel(), gb1.ravel(), gw2.ravel(), gb2.ravel()])
    return total, grad


def grad_log_prob(params: PolicyParams, ctx: PromptContext, path) -> np.ndarray:
    return log_prob_and_grad(params, ctx, path)[1]


def step_grads(
    params: PolicyParams, ctx: PromptContext, path
) -> tuple[list[float], list[np.ndarray]]:
    """Per-step log-probs and per-step flat gradients.

    Step list matches sampling: one entry per path action plus the terminal
    stop unless the path sits at the length cap. Used by the per-token ratio
    variant of the group-relative update.
    """
    _check_path(params, ctx, path)
    logps: list[float] = []
    grads: list[np.ndarray] = []

    def one(prefix, action: int, mask_end: bool) -> None:
        x = features(ctx, prefix, params)
        h, probs, log_probs = _forward(params, x, mask_end)
        dz = -probs
        dz[action] += 1.0
        dh = params.w2.T @ dz
        du = (1.0 - h * h) * dh
        grads.append(
            np.concatenate(
                [np.outer(du, x).ravel(), du, np.outer(dz, h).ravel(), dz]
            )
        )
        logps.append(float(log_probs[action]))

    prefix: list[int] = []
    for c in path:
        one(prefix, int(c), mask_end=(len(prefix) == 0))
        prefix.append(int(c))
    if len(path) < ctx.l_max:
        one(prefix, params.end_action, mask_end=False)
    return logps, grads


def greedy_decode(params: PolicyParams, ctx: PromptContext) -> tuple[int, ...]:
    """Deterministic argmax decoding (ties at the lowest action id)."""
    prefix: list[int] = []
    while len(prefix) < ctx.l_max:
        logits = step_logits(params, ctx, prefix)
        action = int(np.argmax(logits))
        if action == params.end_action:
            break
        prefix.append(action)
    return tuple(prefix)


def save_params(params: PolicyParams, path: str) -> None:
    payload = {
        "version": PARAMS_FORMAT_VERSION,
        "num_concepts": params.num_concepts,
        "hidden": params.hidden,
        "params": [float(v) for v in params.to_vector()],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_params(path: str) -> PolicyParams:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported params format version {payload.get('version')}")
    num_concepts = int(payload["num_concepts"])
    hidden = int(payload["hidden"])
    template = init_params(num_concepts, hidden, seed=0)
    return template.from_vector(np.asarray(payload["params"], dtype=float))
