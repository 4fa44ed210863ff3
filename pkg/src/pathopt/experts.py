"""Expert path synthesis: genetic search, a tabular Q teacher, demo datasets.

Stage 1 of the pipeline builds a corpus of expert demonstrations per
student. A fixed-length genetic search optimizes the learning effect
directly; a tabular Q-learning teacher trained across random students
provides a second, generalizing route. The demo dataset keeps genetic paths
that clear a quality threshold and fills the remaining per-student quota
with teacher rollouts.

The learning effect of (student, path) is deterministic in this simulator,
so genetic fitness evaluation uses one fixed rollout seed throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed, make_rng
from .simulator import (
    ConceptCatalog,
    SimConfig,
    StudentState,
    administer_exam,
    expected_gain,
    init_student,
    practice_step,
    run_path,
)


@dataclass
class GaConfig:
    population_size: int = 10
    generations: int = 500
    crossover_prob: float = 1.0
    mutation_prob: float = 0.01
    tournament_size: int = 2
    elitism_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not (0.0 <= self.crossover_prob <= 1.0):
            raise ValueError("crossover_prob outside [0, 1]")
        if not (0.0 <= self.mutation_prob <= 1.0):
            raise ValueError("mutation_prob outside [0, 1]")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not (0 <= self.elitism_count < self.population_size):
            raise ValueError("elitism_count must be in [0, population_size)")


@dataclass(frozen=True)
class Chromosome:
    genes: tuple[int, ...]
    fitness: float


@dataclass(frozen=True)
class GaResult:
    best: Chromosome
    population: tuple[Chromosome, ...]
    best_history: tuple[float, ...]


def crossover_at(parent_a, parent_b, cut: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Single-point crossover at a fixed cut; suffixes swap."""
    length = len(parent_a)
    if len(parent_b) != length:
        raise ValueError("parents must share length")
    if not (1 <= cut <= length - 1):
        raise ValueError(f"cut {cut} outside [1, {length - 1}]")
    child_a = tuple(parent_a[:cut]) + tuple(parent_b[cut:])
    child_b = tuple(parent_b[:cut]) + tuple(parent_a[cut:])
    return child_a, child_b


def crossover(parent_a, parent_b, rng: np.random.Generator):
    """Single-point crossover at a uniform cut; length < 2 passes through."""
    length = len(parent_a)
    if len(parent_b) != length:
        raise ValueError("parents must share length")
    if length < 2:
        return tuple(parent_a), tuple(parent_b)
    cut = int(rng.integers(1, length))
    return crossover_at(parent_a, parent_b, cut)


def mutate(genes, num_concepts: int, mutation_prob: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Each gene independently resampled uniformly with the given probability."""
    out = list(genes)
    for i in range(len(out)):
        if rng.random() < mutation_prob:
            out[i] = int(rng.integers(0, num_concepts))
    return tuple(out)


def tournament_select(
    fitnesses: np.ndarray, size: int, rng: np.random.Generator
) -> int:
    """Best of `size` uniform draws with replacement (ties at first draw)."""
    idx = rng.integers(0, len(fitnesses), size=size)
    best = idx[0]
    for i in idx[1:]:
        if fitnesses[i] > fitnesses[best]:
            best = i
    return int(best)


def ga_search(
    student: StudentState,
    catalog: ConceptCatalog,
    length: int,
    cfg: GaConfig,
    sim_cfg: SimConfig,
) -> GaResult:
    """Elitist generational GA over fixed-length concept paths.

    Fitness is the learning effect of running the chromosome on a copy of
    the student, under one fixed rollout seed. Offspring slots that do not
    crossover clone the incumbent at that slot, and the best parent replaces
    the worst offspring only when strictly better than the best offspring,
    so the best fitness is non-decreasing and a variation-free run leaves
    the population multiset untouched.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = make_rng(cfg.seed)
    rollout_seed = derive_seed(cfg.seed, "ga-rollout")
    n = catalog.num_concepts

    # fitness is deterministic given genes, so repeat genomes (clones of
    # converged parents) can reuse their rollout
    cache: dict[tuple[int, ...], float] = {}

    def evaluate(genes) -> float:
        f = cache.get(genes)
        if f is None:
            _, e_p = run_path(student, genes, catalog, sim_cfg, seed=rollout_seed)
            f = e_p
            cache[genes] = f
        return f

    population = [
        tuple(int(g) for g in rng.integers(0, n, size=length))
        for _ in range(cfg.population_size)
    ]
    fitnesses = np.array([evaluate(g) for g in population])
    best_idx = int(np.argmax(fitnesses))
    best = Chromosome(genes=population[best_idx], fitness=float(fitnesses[best_idx]))
    history = [best.fitness]

    for _ in range(cfg.generations):
        offspring: list[tuple[int, ...]] = []
        while len(offspring) < cfg.population_size:
            slot = len(offspring)
            if rng.random() < cfg.crossover_prob:
                pa = population[tournament_select(fitnesses, cfg.tournament_size, rng)]
                pb = population[tournament_select(fitnesses, cfg.tournament_size, rng)]
                ca, cb = crossover(pa, pb, rng)
                offspring.append(ca)
                if len(offspring) < cfg.population_size:
                    offspring.append(cb)
            else:
                offspring.append(population[slot])
        offspring = [mutate(g, n, cfg.mutation_prob, rng) for g in offspring]
        off_fit = np.array([evaluate(g) for g in offspring])

        if cfg.elitism_count > 0:
            parent_order = np.argsort(-fitnesses, kind="stable")
            for k in range(cfg.elitism_count):
                p_idx = int(parent_order[k])
                if fitnesses[p_idx] > off_fit.max():
                    worst = int(np.argmin(off_fit))
                    offspring[worst] = population[p_idx]
                    off_fit[worst] = fitnesses[p_idx]

        population = offspring
        fitnesses = off_fit
        gen_best = int(np.argmax(fitnesses))
        if fitnesses[gen_best] > best.fitness:
            best = Chromosome(genes=population[gen_best], fitness=float(fitnesses[gen_best]))
        history.append(best.fitness)

    final = tuple(
        Chromosome(genes=g, fitness=float(f)) for g, f in zip(population, fitnesses)
    )
    return GaResult(best=best, population=final, best_history=tuple(history))


@dataclass
class TeacherConfig:
    learning_rate: float = 0.2
    discount: float = 0.95
    epsilon: float = 0.3
    episodes: int = 4000
    buckets: int = 6
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.learning_rate <= 1.0):
            raise ValueError("learning_rate outside [0, 1]")
        if not (0.0 <= self.discount <= 1.0):
            raise ValueError("discount outside [0, 1]")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError("epsilon outside [0, 1]")
        if self.buckets < 1:
            raise ValueError("buckets must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")


def _bucket(m: float, buckets: int) -> int:
    b = int(m * buckets)
    return min(max(b, 0), buckets - 1)


@dataclass
class TeacherPolicy:
    """Tabular Q over local action signatures.

    A full mastery-bucket signature over the whole target set is unlearnable
    at catalog scale (buckets^|C| states), so the state a concept is scored
    in is its own mastery bucket plus a prerequisites-met bit. The table
    stays tabular over mastery buckets and generalizes across students.
    Buckets must be fine enough that one practice of an in-range concept
    usually moves the bucket, or greedy rollouts stall on repeats.
    """

    q: dict = field(default_factory=dict)
    num_buckets: int = 6

    def key(self, mastery: np.ndarray, concept_id: int, catalog: ConceptCatalog, cfg: SimConfig):
        c = catalog.concepts[concept_id]
        gate = 1
        for p in c.prereqs:
            if mastery[p] < cfg.prereq_threshold:
                gate = 0
                break
        return (concept_id, _bucket(float(mastery[concept_id]), self.num_buckets), gate)

    def value(self, mastery: np.ndarray, concept_id: int, catalog: ConceptCatalog, cfg: SimConfig) -> float:
        return self.q.get(self.key(mastery, concept_id, catalog, cfg), 0.0)

    def greedy_action(self, mastery: np.ndarray, catalog: ConceptCatalog, cfg: SimConfig) -> int:
        best = 0
        best_v = self.value(mastery, 0, catalog, cfg)
        for c in range(1, catalog.num_concepts):
            v = self.value(mastery, c, catalog, cfg)
            if v > best_v:  # strict: ties break at the lowest id
                best, best_v = c, v
        return best


def train_teacher(
    catalog: ConceptCatalog,
    sim_cfg: SimConfig,
    cfg: TeacherConfig,
    horizon: int,
    seed: int | None = None,
) -> TeacherPolicy:
    """Q-learning against fresh random students, reward = exam-score delta."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    master = cfg.seed if seed is None else seed
    teacher = TeacherPolicy(num_buckets=cfg.buckets)
    rng = make_rng(derive_seed(master, "teacher-explore"))
    for ep in range(cfg.episodes):
        student = init_student(catalog, sim_cfg, seed=derive_seed(master, "teacher-student", ep))
        state = student
        score = administer_exam(state, catalog).score
        for t in range(horizon):
            if rng.random() < cfg.epsilon:
                action = int(rng.integers(0, catalog.num_concepts))
            else:
                action = teacher.greedy_action(state.mastery, catalog, sim_cfg)
            key = teacher.key(state.mastery, action, catalog, sim_cfg)
            state, _ = practice_step(state, action, catalog, sim_cfg, rng)
            new_score = administer_exam(state, catalog).score
            reward = new_score - score
            score = new_score
            if t + 1 < horizon:
                next_best = max(
                    teacher.value(state.mastery, c, catalog, sim_cfg)
                    for c in range(catalog.num_concepts)
                )
                target = reward + cfg.discount * next_best
            else:
                target = reward
            old = teacher.q.get(key, 0.0)
            teacher.q[key] = old + cfg.learning_rate * (target - old)
    return teacher


def teacher_rollout(
    teacher: TeacherPolicy,
    student: StudentState,
    length: int,
    catalog: ConceptCatalog,
    sim_cfg: SimConfig,
    seed: int = 0,
) -> tuple[int, ...]:
    """Greedy (no exploration) rollout of the teacher for a fixed length."""
    if length < 1:
        raise ValueError("length must be >= 1")
    state = student.copy()
    rng = make_rng(seed)
    path: list[int] = []
    for _ in range(length):
        action = teacher.greedy_action(state.mastery, catalog, sim_cfg)
        state, _ = practice_step(state, action, catalog, sim_cfg, rng)
        path.append(action)
    return tuple(path)


def greedy_gain_path(
    student: StudentState,
    catalog: ConceptCatalog,
    sim_cfg: SimConfig,
    length: int,
    seed: int = 0,
    explore: float = 0.0,
    stop_gain: float = 0.0,
) -> tuple[int, ...]:
    """Myopic oracle: each step practices the concept with the largest
    one-step mastery gain (ties at the lowest id), optionally exploring.

    stop_gain > 0 truncates the rollout once even the best concept's
    expected gain falls below it, so the path ends when practice stops
    paying instead of padding out to `length` with noise steps.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    state = student.copy()
    rng = make_rng(seed)
    path: list[int] = []
    for _ in range(length):
        gains = [
            expected_gain(state, c, catalog, sim_cfg)
            for c in range(catalog.num_concepts)
        ]
        if path and stop_gain > 0.0 and max(gains) < stop_gain:
            break
        if explore > 0.0 and rng.random() < explore:
            action = int(rng.integers(0, catalog.num_concepts))
        else:
            action = int(np.argmax(gains))
        state, _ = practice_step(state, action, catalog, sim_cfg, rng)
        path.append(action)
    return tuple(path)


@dataclass(frozen=True)
class DemoRecord:
    """One expert demonstration: session context, path, provenance, outcome."""

    mastery: tuple[float, ...]
    proficiency: float
    target_len: int
    path: tuple[int, ...]
    source: str
    e_p: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "context": {
                "mastery": [round(float(m), 12) for m in self.mastery],
                "a": round(float(self.proficiency), 12),
                "target_len": self.target_len,
            },
            "path": [int(c) for c in self.path],
            "source": self.source,
            "e_p": round(float(self.e_p), 12),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DemoRecord":
        ctx = d["context"]
        return cls(
            mastery=tuple(float(m) for m in ctx["mastery"]),
            proficiency=float(ctx["a"]),
            target_len=int(ctx["target_len"]),
            path=tuple(int(c) for c in d["path"]),
            source=str(d["source"]),
            e_p=float(d["e_p"]),
            seed=int(d.get("seed", 0)),
        )


def write_demos(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")))
            fh.write("\n")


def read_demos(path: str) -> list[DemoRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(DemoRecord.from_dict(json.loads(line)))
    return out


def build_sft_dataset(
    students,
    catalog: ConceptCatalog,
    sim_cfg: SimConfig,
    ga_cfg: GaConfig,
    teacher: TeacherPolicy,
    l_target: int,
    quality_threshold: float = 0.6,
    per_student_quota: int = 4,
    seed: int = 0,
    ga_results=None,
    fill_to_quota: bool = True,
) -> list[DemoRecord]:
    """Per student: genetic paths above the quality threshold, teacher rollouts.

    Genetic candidates are the final population, deduplicated and ranked by
    fitness; at most `per_student_quota` survive the threshold. A +inf
    threshold therefore yields a pure teacher dataset in either mode.

    fill_to_quota picks the consumer. True builds the imitation corpus:
    the teacher rollout repeats into whatever quota slots the genetic picks
    left open, upweighting the one demonstrator whose action is a learnable
    function of the visible state (genetic paths are near-arbitrary
    orderings, so cloning them alone leaves the greedy decode incoherent).
    False builds the expert pool for pool-level statistics: every student
    contributes exactly one teacher rollout and nothing repeats, since
    duplicates drag the pool mean toward the teacher's without adding
    information. Pass precomputed `ga_results` (aligned with students) to
    reuse searches.
    """
    if per_student_quota < 1:
        raise ValueError("per_student_quota must be >= 1")
    if ga_results is not None and len(ga_results) != len(students):
        raise ValueError("ga_results must align with students")
    records: list[DemoRecord] = []
    for s_idx, student in enumerate(students):
        if ga_results is not None:
            result = ga_results[s_idx]
        else:
            ga_seed = derive_seed(seed, "ga", s_idx)
            result = ga_search(
                student,
                catalog,
                l_target,
                GaConfig(
                    population_size=ga_cfg.population_size,
                    generations=ga_cfg.generations,
                    crossover_prob=ga_cfg.crossover_prob,
                    mutation_prob=ga_cfg.mutation_prob,
                    tournament_size=ga_cfg.tournament_size,
                    elitism_count=ga_cfg.elitism_count,
                    seed=ga_seed,
                ),
                sim_cfg,
            )
        rollout_seed = derive_seed(seed, "demo-rollout", s_idx)
        seen = set()
        candidates = []
        for chrom in sorted(result.population, key=lambda c: -c.fitness):
            if chrom.genes not in seen:
                seen.add(chrom.genes)
                candidates.append(chrom)
        kept = 0
        for chrom in candidates:
            if kept >= per_student_quota:
                break
            if chrom.fitness >= quality_threshold:
                records.append(
                    DemoRecord(
                        mastery=tuple(float(m) for m in student.mastery),
                        proficiency=float(student.proficiency),
                        target_len=l_target,
                        path=chrom.genes,
                        source="GA",
                        e_p=chrom.fitness,
                        seed=rollout_seed,
                    )
                )
                kept += 1
        if fill_to_quota and kept >= per_student_quota:
            continue
        path = teacher_rollout(
            teacher, student, l_target, catalog, sim_cfg, seed=rollout_seed
        )
        _, e_p = run_path(student, path, catalog, sim_cfg, seed=rollout_seed)
        teacher_record = DemoRecord(
            mastery=tuple(float(m) for m in student.mastery),
            proficiency=float(student.proficiency),
            target_len=l_target,
            path=path,
            source="RL",
            e_p=e_p,
            seed=rollout_seed,
        )
        if fill_to_quota:
            while kept < per_student_quota:
                records.append(teacher_record)
                kept += 1
        else:
            records.append(teacher_record)
    return records
