"""Synthetic student environment: concept catalog, mastery dynamics, exams.

The environment is deliberately transparent so that everything downstream
(reward shaping, expert search, policy training) can be checked against
closed-form expectations:

- a concept catalog is a prerequisite DAG with per-concept difficulty;
- practicing a concept raises its mastery through a Gaussian-shaped gain
  centered on the student's proficiency, gated by prerequisites;
- exams score summed mastery over a fixed target set, and the learning
  effect of a path is the normalized exam-score gain.

Mastery updates do not depend on the sampled answer correctness, so the
learning effect of (student, path) is deterministic; seeds only drive the
simulated answer bits and the initial mastery draw.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import make_rng


class CatalogError(ValueError):
    """Raised when a concept catalog violates its structural invariants."""


@dataclass(frozen=True)
class Concept:
    id: int
    difficulty: float
    prereqs: tuple[int, ...] = ()


@dataclass(frozen=True)
class ConceptCatalog:
    """Prerequisite DAG of concepts plus the exam target set."""

    concepts: tuple[Concept, ...]
    target_set: tuple[int, ...]

    def __post_init__(self):
        n = len(self.concepts)
        if n == 0:
            raise CatalogError("catalog has no concepts")
        ids = [c.id for c in self.concepts]
        if ids != list(range(n)):
            raise CatalogError(
                "concept ids must be dense and sorted: expected 0..%d, got %s" % (n - 1, ids)
            )
        for c in self.concepts:
            if not (0.0 <= c.difficulty <= 1.0):
                raise CatalogError(f"concept {c.id}: difficulty {c.difficulty} outside [0, 1]")
            for p in c.prereqs:
                if not (0 <= p < n):
                    raise CatalogError(f"concept {c.id}: unknown prerequisite id {p}")
                if p == c.id:
                    raise CatalogError(f"concept {c.id}: self-prerequisite")
        if not self.target_set:
            raise CatalogError("target_set is empty")
        if len(set(self.target_set)) != len(self.target_set):
            raise CatalogError("target_set contains duplicate ids")
        for t in self.target_set:
            if not (0 <= t < n):
                raise CatalogError(f"target_set references unknown concept id {t}")
        self._check_acyclic()

    def _check_acyclic(self):
        # Kahn's algorithm; leftover nodes mean a prerequisite cycle.
        n = len(self.concepts)
        indeg = [0] * n
        dependents: list[list[int]] = [[] for _ in range(n)]
        for c in self.concepts:
            indeg[c.id] = len(c.prereqs)
            for p in c.prereqs:
                dependents[p].append(c.id)
        queue = [i for i in range(n) if indeg[i] == 0]
        seen = 0
        while queue:
            node = queue.pop()
            seen += 1
            for d in dependents[node]:
                indeg[d] -= 1
                if indeg[d] == 0:
                    queue.append(d)
        if seen != n:
            raise CatalogError("prerequisite graph contains a cycle")

    @property
    def num_concepts(self) -> int:
        return len(self.concepts)

    @property
    def difficulties(self) -> np.ndarray:
        return np.array([c.difficulty for c in self.concepts], dtype=float)

    def difficulty(self, concept_id: int) -> float:
        return self.concepts[concept_id].difficulty

    def to_dict(self) -> dict:
        return {
            "concepts": [
                {"id": c.id, "difficulty": c.difficulty, "prereqs": list(c.prereqs)}
                for c in self.concepts
            ],
            "target_set": list(self.target_set),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConceptCatalog":
        try:
            concepts = tuple(
                Concept(
                    id=int(c["id"]),
                    difficulty=float(c["difficulty"]),
                    prereqs=tuple(int(p) for p in c.get("prereqs", ())),
                )
                for c in d["concepts"]
            )
            target = tuple(int(t) for t in d["target_set"])
        except (KeyError, TypeError) as exc:
            raise CatalogError(f"malformed catalog record: {exc}") from exc
        return cls(concepts=concepts, target_set=target)


def default_catalog(num_concepts: int = 20) -> ConceptCatalog:
    """Desk-scale catalog: difficulties evenly spaced, chain plus branch leaves.

    The first ~60% of concepts form a prerequisite chain ordered by
    difficulty; the remainder are leaves hanging off the early chain nodes.
    The exam target set is the whole catalog.
    """
    if num_concepts < 2:
        raise CatalogError("default catalog needs at least 2 concepts")
    diffs = np.linspace(0.05, 0.95, num_concepts)
    chain_len = max(2, (3 * num_concepts) // 5)
    concepts = []
    for i in range(num_concepts):
        if i == 0:
            prereqs: tuple[int, ...] = ()
        elif i < chain_len:
            prereqs = (i - 1,)
        else:
            prereqs = (i - chain_len,)
        concepts.append(Concept(id=i, difficulty=float(diffs[i]), prereqs=prereqs))
    return ConceptCatalog(concepts=tuple(concepts), target_set=tuple(range(num_concepts)))


def load_catalog(path: str) -> ConceptCatalog:
    with open(path, "r", encoding="utf-8") as fh:
        return ConceptCatalog.from_dict(json.load(fh))


def save_catalog(catalog: ConceptCatalog, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(catalog.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass
class SimConfig:
    """Student dynamics parameters.

    learn_rate may exceed 1: the mastery update is clamped to [0, 1], so a
    large rate simply means one practice of a concept near the student's
    proficiency fully masters it, while far-off concepts need repetition.

    Initial mastery is difficulty-graded: each student draws an aptitude
    and starts out knowing (roughly) the concepts easier than it, so the
    band of difficulties just above the pre-test proficiency is where
    practice pays off. Set init_aptitude_low = init_aptitude_high = -1 for
    a plain uniform init over the fresh band.
    """

    learn_rate: float = 1.4
    zpd_width: float = 0.3
    prereq_threshold: float = 0.5
    prereq_penalty: float = 0.3
    init_aptitude_low: float = 0.1
    init_aptitude_high: float = 0.9
    init_know_band: float = 0.15
    init_known_low: float = 0.72
    init_known_high: float = 0.95
    init_fresh_low: float = 0.05
    init_fresh_high: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if self.learn_rate <= 0:
            raise ValueError(f"learn_rate must be positive, got {self.learn_rate}")
        if self.zpd_width <= 0:
            raise ValueError(f"zpd_width must be positive, got {self.zpd_width}")
        if not (0.0 <= self.prereq_threshold <= 1.0):
            raise ValueError(f"prereq_threshold outside [0, 1]: {self.prereq_threshold}")
        if not (0.0 <= self.prereq_penalty <= 1.0):
            raise ValueError(f"prereq_penalty outside [0, 1]: {self.prereq_penalty}")
        if not (-1.0 <= self.init_aptitude_low <= self.init_aptitude_high <= 2.0):
            raise ValueError("aptitude bounds must satisfy -1 <= low <= high <= 2")
        if self.init_know_band < 0:
            raise ValueError(f"init_know_band must be >= 0, got {self.init_know_band}")
        for lo, hi, tag in (
            (self.init_known_low, self.init_known_high, "init_known"),
            (self.init_fresh_low, self.init_fresh_high, "init_fresh"),
        ):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"{tag} bounds must satisfy 0 <= low <= high <= 1")


@dataclass
class StudentState:
    """Mastery vector plus a frozen scalar proficiency.

    Proficiency is set once from the pre-test score and never updated; the
    mastery vector is the only evolving state.
    """

    mastery: np.ndarray
    proficiency: float
    history: list = field(default_factory=list)

    def copy(self) -> "StudentState":
        return StudentState(
            mastery=self.mastery.copy(),
            proficiency=self.proficiency,
            history=list(self.history),
        )


@dataclass(frozen=True)
class ExamResult:
    score: float
    e_sup: float


@dataclass(frozen=True)
class StepRecord:
    concept: int
    correct: int
    mastery: np.ndarray


def administer_exam(state: StudentState, catalog: ConceptCatalog) -> ExamResult:
    """Deterministic expected-score exam over the catalog's target set."""
    idx = np.asarray(catalog.target_set, dtype=int)
    score = float(state.mastery[idx].sum())
    return ExamResult(score=score, e_sup=float(len(catalog.target_set)))


def init_student(catalog: ConceptCatalog, cfg: SimConfig, seed: int | None = None) -> StudentState:
    """Draw a fresh student and fix proficiency from the pre-test score.

    A concept counts as known when its difficulty falls below the student's
    aptitude, up to per-concept noise of +/- init_know_band, so knowledge
    forms a ragged prefix of the difficulty scale rather than an i.i.d.
    sprinkle. That keeps the pre-test proficiency informative about where
    the student's learnable frontier sits.
    """
    rng = make_rng(cfg.seed if seed is None else seed)
    n = catalog.num_concepts
    aptitude = rng.uniform(cfg.init_aptitude_low, cfg.init_aptitude_high)
    margin = rng.uniform(-cfg.init_know_band, cfg.init_know_band, size=n)
    diffs = np.array([c.difficulty for c in catalog.concepts])
    known = diffs < aptitude + margin
    mastery = np.where(
        known,
        rng.uniform(cfg.init_known_low, cfg.init_known_high, size=n),
        rng.uniform(cfg.init_fresh_low, cfg.init_fresh_high, size=n),
    )
    state = StudentState(mastery=mastery, proficiency=0.0, history=[])
    pre = administer_exam(state, catalog)
    state.proficiency = pre.score / pre.e_sup if pre.e_sup > 0 else 0.0
    return state


def gain_factor(difficulty: float, proficiency: float, zpd_width: float) -> float:
    """Gaussian learning-gain factor, peaked at difficulty == proficiency."""
    d = difficulty - proficiency
    return math.exp(-(d * d) / (2.0 * zpd_width * zpd_width))


def correctness_prob(mastery: float, difficulty: float, proficiency: float) -> float:
    """Success probability for one answer.

    Error-side form: the failure probability (1 - mastery) is amplified by
    how far the difficulty sits above the student's proficiency, so full
    mastery always answers correctly and difficulty above proficiency
    depresses success odds.
    """
    p = 1.0 - (1.0 - mastery) * (1.0 + 0.5 * max(0.0, difficulty - proficiency))
    return min(1.0, max(0.0, p))


def prereq_factor(mastery: np.ndarray, concept: Concept, cfg: SimConfig) -> float:
    for p in concept.prereqs:
        if mastery[p] < cfg.prereq_threshold:
            return cfg.prereq_penalty
    return 1.0


def expected_gain(
    state: StudentState, concept_id: int, catalog: ConceptCatalog, cfg: SimConfig
) -> float:
    """One-step mastery gain of practicing a concept (deterministic)."""
    c = catalog.concepts[concept_id]
    m = float(state.mastery[concept_id])
    g = gain_factor(c.difficulty, state.proficiency, cfg.zpd_width)
    pf = prereq_factor(state.mastery, c, cfg)
    gain = cfg.learn_rate * g * (1.0 - m) * pf
    return min(gain, 1.0 - m)


def _practice_inplace(
    mastery: np.ndarray,
    proficiency: float,
    concept: Concept,
    catalog: ConceptCatalog,
    cfg: SimConfig,
    rng: np.random.Generator,
) -> int:
    """Sample one answer and apply the mastery update. Returns correctness."""
    m = float(mastery[concept.id])
    p = correctness_prob(m, concept.difficulty, proficiency)
    y = 1 if rng.random() < p else 0
    g = gain_factor(concept.difficulty, proficiency, cfg.zpd_width)
    pf = prereq_factor(mastery, concept, cfg)
    updated = m + cfg.learn_rate * g * (1.0 - m) * pf
    mastery[concept.id] = min(1.0, max(0.0, updated))
    return y


def practice_step(
    state: StudentState,
    concept_id: int,
    catalog: ConceptCatalog,
    cfg: SimConfig,
    rng: np.random.Generator,
) -> tuple[StudentState, int]:
    """Practice one concept; returns the successor state and the answer bit."""
    if not (0 <= concept_id < catalog.num_concepts):
        raise ValueError(f"invalid concept id {concept_id}")
    new_state = state.copy()
    y = _practice_inplace(
        new_state.mastery, new_state.proficiency, catalog.concepts[concept_id], catalog, cfg, rng
    )
    new_state.history.append((concept_id, y))
    return new_state, y


def learning_effect(e_start: float, e_end: float, e_sup: float) -> float:
    """Normalized exam-score gain, 0 when there is no headroom."""
    denom = e_sup - e_start
    if denom < 1e-9:
        return 0.0
    return (e_end - e_start) / denom


def run_path(
    state: StudentState,
    path,
    catalog: ConceptCatalog,
    cfg: SimConfig,
    seed: int = 0,
) -> tuple[list[StepRecord], float]:
    """Run a recommendation path on a copy of the student.

    Returns the step trajectory (concept, answer bit, mastery snapshot) and
    the learning effect. The input state is not mutated.
    """
    if len(path) == 0:
        raise ValueError("path is empty")
    for pos, c in enumerate(path):
        if not (0 <= int(c) < catalog.num_concepts):
            raise ValueError(f"invalid concept id {c} at position {pos}")
    rng = make_rng(seed)
    mastery = state.mastery.copy()
    pre = float(mastery[np.asarray(catalog.target_set, dtype=int)].sum())
    e_sup = float(len(catalog.target_set))
    trajectory: list[StepRecord] = []
    for c in path:
        concept = catalog.concepts[int(c)]
        y = _practice_inplace(mastery, state.proficiency, concept, catalog, cfg, rng)
        trajectory.append(StepRecord(concept=int(c), correct=y, mastery=mastery.copy()))
    post = float(mastery[np.asarray(catalog.target_set, dtype=int)].sum())
    return trajectory, learning_effect(pre, post, e_sup)


def estimate_empirical_difficulty(
    catalog: ConceptCatalog, cfg: SimConfig, cohort_size: int, seed: int = 0
) -> np.ndarray:
    """Per-concept error rate over a cohort of fresh students.

    Each student answers every concept once from their initial state (a
    diagnostic probe, no learning), so the estimate reflects the configured
    initial distribution and the difficulty model only.
    """
    if cohort_size < 1:
        raise ValueError("cohort_size must be >= 1")
    errors = np.zeros(catalog.num_concepts)
    for i in range(cohort_size):
        student = init_student(catalog, cfg, seed=(seed * 1000003 + i) & ((1 << 63) - 1))
        rng = make_rng((seed * 7919 + i) & ((1 << 63) - 1))
        for c in catalog.concepts:
            p = correctness_prob(float(student.mastery[c.id]), c.difficulty, student.proficiency)
            if rng.random() >= p:
                errors[c.id] += 1.0
    return errors / cohort_size


def trajectory_record(state: StudentState, path, correct, e_p: float) -> dict:
    return {
        "student": {
            "mastery": [round(float(m), 12) for m in state.mastery],
            "a": round(float(state.proficiency), 12),
        },
        "path": [int(c) for c in path],
        "correct": [int(y) for y in correct],
        "e_p": round(float(e_p), 12),
    }


def write_trajectories(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


def read_trajectories(path: str) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
