"""Two-stage policy training: behavior cloning, then group-relative RL.

Stage 2 minimizes the NLL of expert paths (plain SGD with linear warmup).
Stage 3 improves the policy with group-relative updates: for each prompt a
group of K paths is sampled from a frozen snapshot of the policy, each path
is rolled through the simulator, scored with the four-objective reward
vector, ranked by an exchangeable fitness scheme (indicator fitness by
default, weighted-sum or hypervolume-contribution as baselines), and the
standardized fitness becomes the advantage in an asymmetrically clipped
sequence-level importance-ratio objective.

Reward components can be masked out of the fitness computation (ablations);
masked components are still logged. The group diversity component makes the
reward group-coupled, which is why rewards are composed per group here
rather than per path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .indicator import (
    group_advantages,
    hv_contribution_fitness,
    pareto_fitness,
    weighted_sum_fitness,
)
from .policy import (
    PolicyParams,
    PromptContext,
    greedy_decode,
    log_prob_and_grad,
    path_log_prob,
    sample_group,
    sample_path,
    step_grads,
)
from .rewards import (
    REWARD_COMPONENTS,
    LengthConstraint,
    ZpdReference,
    compose_group_rewards,
    div_path,
    len_score,
    score_zpd,
)
from .seeding import derive_seed, make_rng
from .simulator import ConceptCatalog, SimConfig, StudentState, run_path

ADVANTAGE_MODES = ("indicator", "weighted_sum", "hv_contribution")

_MASK_ALIASES = {
    "ep": 0,
    "e_p": 0,
    "zpd": 1,
    "s_zpd": 1,
    "len": 2,
    "r_len": 2,
    "div": 3,
    "d_div": 3,
}


def mask_indices(reward_mask) -> tuple[int, ...]:
    """Resolve mask tokens to component indices; the remainder must be non-empty."""
    idx = set()
    for token in reward_mask:
        key = str(token).strip().lower()
        if key not in _MASK_ALIASES:
            raise ValueError(
                f"unknown reward component {token!r}; expected one of "
                f"{sorted(set(_MASK_ALIASES))}"
            )
        idx.add(_MASK_ALIASES[key])
    if len(idx) >= len(REWARD_COMPONENTS):
        raise ValueError("reward mask would remove every component")
    return tuple(sorted(idx))


@dataclass
class SftConfig:
    # a billion-parameter policy would take ~5e-6; this 10k-param MLP
    # needs 1e-2 to move at all
    learning_rate: float = 1e-2
    epochs: int = 10
    # small batches buy more plain-SGD steps at the fixed epoch count;
    # batch 16 leaves the cloned policy too blurry to decode greedily
    batch_size: int = 4
    warmup_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.warmup_frac <= 1.0):
            raise ValueError("warmup_frac outside [0, 1]")


@dataclass
class SftReport:
    nll_curve: list = field(default_factory=list)  # index 0 = before training
    num_records: int = 0


def dataset_nll(params: PolicyParams, contexts, paths) -> float:
    total = 0.0
    for ctx, path in zip(contexts, paths):
        total -= path_log_prob(params, ctx, path)
    return total / len(paths)


def sft_train(params: PolicyParams, records, cfg: SftConfig) -> tuple[PolicyParams, SftReport]:
    """Behavior cloning: SGD on mean path NLL, linear warmup, full-set curve."""
    if len(records) == 0:
        raise ValueError("empty demo dataset")
    contexts = [
        PromptContext.for_student(np.asarray(r.mastery), r.proficiency, r.target_len)
        for r in records
    ]
    paths = [r.path for r in records]
    params = params.copy()
    report = SftReport(num_records=len(records))
    report.nll_curve.append(dataset_nll(params, contexts, paths))

    steps_per_epoch = math.ceil(len(records) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    warmup = max(0, int(round(cfg.warmup_frac * total_steps)))
    rng = make_rng(derive_seed(cfg.seed, "sft-shuffle"))
    vec = params.to_vector()
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(records))
        for start in range(0, len(records), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad = np.zeros_like(vec)
            for i in batch:
                logp, g = log_prob_and_grad(params, contexts[i], paths[i])
                if not math.isfinite(logp):
                    raise RuntimeError(
                        f"non-finite log-probability at record {i} (step {step})"
                    )
                grad += g
            grad /= len(batch)
            lr = cfg.learning_rate * (min(1.0, (step + 1) / warmup) if warmup else 1.0)
            vec = vec + lr * grad  # ascent on log-likelihood
            params = params.from_vector(vec)
            step += 1
        nll = dataset_nll(params, contexts, paths)
        if not math.isfinite(nll):
            raise RuntimeError(f"non-finite NLL after step {step}")
        report.nll_curve.append(nll)
    return params, report


@dataclass
class GrpoConfig:
    # ~1e-6 at billion-parameter scale; rescaled so ratio updates bite
    learning_rate: float = 1e-3
    epochs: int = 5
    batch_size: int = 16
    group_size: int = 8
    warmup_steps: int = 10
    clip_low: float = 0.2
    clip_high: float = 0.28
    kappa: float = 0.05
    adv_eps: float = 1e-8
    steps_per_snapshot: int = 2
    advantage_mode: str = "indicator"
    # "sequence" ratios the whole-path probability; "per_token" clips each
    # step's ratio separately and averages the per-step terms.
    ratio_mode: str = "sequence"
    weights: tuple[float, float, float, float] | None = None
    reward_mask: tuple = ()
    kl_coeff: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if self.clip_low <= 0 or self.clip_low >= 1:
            raise ValueError("clip_low must be in (0, 1)")
        if self.clip_high <= 0 or self.clip_high >= 1:
            raise ValueError("clip_high must be in (0, 1)")
        if self.ratio_mode not in ("sequence", "per_token"):
            raise ValueError("ratio_mode must be 'sequence' or 'per_token'")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.adv_eps <= 0:
            raise ValueError("adv_eps must be positive")
        if self.steps_per_snapshot < 1:
            raise ValueError("steps_per_snapshot must be >= 1")
        if self.advantage_mode not in ADVANTAGE_MODES:
            raise ValueError(
                f"advantage_mode {self.advantage_mode!r} not in {ADVANTAGE_MODES}"
            )
        if self.kl_coeff < 0:
            raise ValueError("kl_coeff must be >= 0")
        mask_indices(self.reward_mask)  # validates tokens
        if self.weights is not None:
            if len(self.weights) != len(REWARD_COMPONENTS):
                raise ValueError(
                    f"weights must have {len(REWARD_COMPONENTS)} entries"
                )
            if any(w < 0 for w in self.weights):
                raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class TrainPrompt:
    prompt_id: int
    student: StudentState
    ctx: PromptContext


@dataclass
class RewardStack:
    """Everything needed to score a sampled group for one prompt."""

    catalog: ConceptCatalog
    sim_cfg: SimConfig
    zpd_ref: ZpdReference
    length: LengthConstraint
    ngram_n: int = 2

    def group_rewards(self, prompt: TrainPrompt, paths, rollout_seeds):
        e_ps = []
        diag = {"len_score": [], "div_path": [], "length": []}
        for path, rseed in zip(paths, rollout_seeds):
            _, e_p = run_path(prompt.student, path, self.catalog, self.sim_cfg, seed=rseed)
            e_ps.append(e_p)
            diag["len_score"].append(len_score(path, prompt.ctx.l_target))
            diag["div_path"].append(div_path(path))
            diag["length"].append(len(path))
        vectors = compose_group_rewards(
            paths,
            e_ps,
            prompt.student.proficiency,
            self.catalog,
            self.zpd_ref,
            self.length,
            self.ngram_n,
        )
        return np.stack([v.to_array() for v in vectors]), diag


def fitness_for_mode(rewards: np.ndarray, cfg: GrpoConfig) -> np.ndarray:
    """Apply the reward mask, then the configured fitness scheme."""
    masked = mask_indices(cfg.reward_mask)
    keep = [i for i in range(rewards.shape[1]) if i not in masked]
    sub = rewards[:, keep]
    if cfg.advantage_mode == "indicator":
        return pareto_fitness(sub, cfg.kappa)
    if cfg.advantage_mode == "weighted_sum":
        if cfg.weights is None:
            w = np.full(len(keep), 1.0 / len(keep))
        else:
            w = np.asarray(cfg.weights, dtype=float)[keep]
        return weighted_sum_fitness(sub, w)
    return hv_contribution_fitness(sub)


def clipped_sample_grad(
    rho: float,
    advantage: float,
    grad_logp: np.ndarray,
    clip_low: float,
    clip_high: float,
) -> tuple[np.ndarray, float, bool]:
    """Gradient of one sample's clipped surrogate term.

    Returns (gradient, term value, clipped?). The term is
    min(rho * A, clip(rho, 1-clip_low, 1+clip_high) * A); in the flat
    (clipped) region the gradient is exactly zero.
    """
    clipped_rho = min(max(rho, 1.0 - clip_low), 1.0 + clip_high)
    term = min(rho * advantage, clipped_rho * advantage)
    clipped = (advantage > 0 and rho > 1.0 + clip_high) or (
        advantage < 0 and rho < 1.0 - clip_low
    )
    if clipped:
        return np.zeros_like(grad_logp), term, True
    return (rho * advantage) * grad_logp, term, False


@dataclass
class TrainStepRecord:
    step: int
    lr: float
    surrogate: float
    clip_fraction: float
    adv_mean: float
    adv_std: float
    adv_min: float
    adv_max: float
    mean_e_p: float
    mean_s_zpd: float
    mean_r_len: float
    mean_d_div: float
    mean_len_score: float
    mean_div_path: float
    mean_length: float


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # (epoch, metrics dict)


def ib_grpo_step(
    params: PolicyParams,
    params_old: PolicyParams,
    prompts,
    cfg: GrpoConfig,
    stack: RewardStack | None,
    lr: float,
    step_index: int,
    reward_fn=None,
    ref_params: PolicyParams | None = None,
) -> tuple[PolicyParams, TrainStepRecord]:
    """One group-relative update.

    Groups are sampled from the frozen snapshot params_old; the update
    ascends the clipped ratio surrogate of the live params (whole-path
    ratios by default, per-step ratios when cfg.ratio_mode is "per_token").
    Either a RewardStack or an injectable reward_fn(prompt, paths, seeds)
    -> (K x M array, diag dict) must be supplied.
    """
    if reward_fn is None:
        if stack is None:
            raise ValueError("either stack or reward_fn is required")
        reward_fn = stack.group_rewards
    vec = params.to_vector()
    grad = np.zeros_like(vec)
    terms = []
    clipped_count = 0
    clip_units = 0
    total_samples = 0
    adv_all = []
    reward_rows = []
    diag_all = {"len_score": [], "div_path": [], "length": []}

    for prompt in prompts:
        group_seed = derive_seed(cfg.seed, "group", step_index, prompt.prompt_id)
        samples = sample_group(params_old, prompt.ctx, cfg.group_size, group_seed)
        paths = [s.path for s in samples]
        rollout_seeds = [
            derive_seed(cfg.seed, "rollout", step_index, prompt.prompt_id, k)
            for k in range(cfg.group_size)
        ]
        rewards, diag = reward_fn(prompt, paths, rollout_seeds)
        rewards = np.asarray(rewards, dtype=float)
        fitness = fitness_for_mode(rewards, cfg)
        advantages = group_advantages(fitness, cfg.adv_eps)
        adv_all.append(advantages)
        reward_rows.append(rewards)
        for key in diag_all:
            diag_all[key].extend(diag.get(key, []))

        for sample, adv in zip(samples, advantages):
            if cfg.ratio_mode == "sequence":
                logp_new, g = log_prob_and_grad(params, prompt.ctx, sample.path)
                if not math.isfinite(logp_new):
                    raise RuntimeError(
                        f"non-finite log-probability at step {step_index}, "
                        f"prompt {prompt.prompt_id}"
                    )
                rho = math.exp(logp_new - sample.log_prob)
                sample_grad, term, was_clipped = clipped_sample_grad(
                    rho, float(adv), g, cfg.clip_low, cfg.clip_high
                )
                clipped_count += int(was_clipped)
                clip_units += 1
            else:
                new_logps, step_gs = step_grads(params, prompt.ctx, sample.path)
                logp_new = float(sum(new_logps))
                if not math.isfinite(logp_new):
                    raise RuntimeError(
                        f"non-finite log-probability at step {step_index}, "
                        f"prompt {prompt.prompt_id}"
                    )
                old_logps = sample.step_log_probs
                if len(new_logps) != len(old_logps):
                    raise RuntimeError("step count mismatch against snapshot")
                g = np.sum(step_gs, axis=0)
                sample_grad = np.zeros_like(vec)
                term = 0.0
                for t, (new_t, old_t) in enumerate(zip(new_logps, old_logps)):
                    rho_t = math.exp(new_t - old_t)
                    tok_grad, tok_term, tok_clipped = clipped_sample_grad(
                        rho_t, float(adv), step_gs[t], cfg.clip_low, cfg.clip_high
                    )
                    sample_grad += tok_grad
                    term += tok_term
                    clipped_count += int(tok_clipped)
                    clip_units += 1
                sample_grad /= len(new_logps)
                term /= len(new_logps)
            if cfg.kl_coeff > 0.0 and ref_params is not None:
                logp_ref = path_log_prob(ref_params, prompt.ctx, sample.path)
                term -= cfg.kl_coeff * (logp_new - logp_ref)
                sample_grad = sample_grad - cfg.kl_coeff * g
            grad += sample_grad
            terms.append(term)
            total_samples += 1

    grad /= total_samples
    if not np.isfinite(grad).all():
        raise RuntimeError(f"non-finite gradient at step {step_index}")
    new_params = params.from_vector(vec + lr * grad)

    adv_flat = np.concatenate(adv_all)
    rewards_flat = np.vstack(reward_rows)
    record = TrainStepRecord(
        step=step_index,
        lr=lr,
        surrogate=float(np.mean(terms)),
        clip_fraction=clipped_count / clip_units,
        adv_mean=float(adv_flat.mean()),
        adv_std=float(adv_flat.std()),
        adv_min=float(adv_flat.min()),
        adv_max=float(adv_flat.max()),
        mean_e_p=float(rewards_flat[:, 0].mean()),
        mean_s_zpd=float(rewards_flat[:, 1].mean()),
        mean_r_len=float(rewards_flat[:, 2].mean()),
        mean_d_div=float(rewards_flat[:, 3].mean()),
        mean_len_score=float(np.mean(diag_all["len_score"])) if diag_all["len_score"] else 0.0,
        mean_div_path=float(np.mean(diag_all["div_path"])) if diag_all["div_path"] else 0.0,
        mean_length=float(np.mean(diag_all["length"])) if diag_all["length"] else 0.0,
    )
    return new_params, record


def train_loop(
    params: PolicyParams,
    prompts,
    cfg: GrpoConfig,
    stack: RewardStack,
    eval_students=None,
    eval_l_target: int | None = None,
    eval_seed: int = 0,
    ref_params: PolicyParams | None = None,
) -> tuple[PolicyParams, TrainReport]:
    """Epochs over the prompt set; snapshot per batch, then a few updates
    sampling from the frozen snapshot (so ratios drift and the clip is live)."""
    report = TrainReport()
    params = params.copy()
    update = 0
    for epoch in range(cfg.epochs):
        for start in range(0, len(prompts), cfg.batch_size):
            batch = prompts[start : start + cfg.batch_size]
            params_old = params.copy()
            for _ in range(cfg.steps_per_snapshot):
                lr = cfg.learning_rate * (
                    min(1.0, (update + 1) / cfg.warmup_steps) if cfg.warmup_steps else 1.0
                )
                params, record = ib_grpo_step(
                    params,
                    params_old,
                    batch,
                    cfg,
                    stack,
                    lr,
                    step_index=update,
                    ref_params=ref_params,
                )
                report.steps.append(record)
                update += 1
        if eval_students is not None and eval_l_target is not None:
            metrics = evaluate_policy(
                params,
                eval_students,
                stack.catalog,
                stack.sim_cfg,
                stack.zpd_ref,
                eval_l_target,
                seed=derive_seed(eval_seed, "epoch-eval", epoch),
            )
            report.evals.append((epoch, metrics))
    return params, report


def evaluate_fixed_paths(
    students,
    paths,
    catalog: ConceptCatalog,
    sim_cfg: SimConfig,
    zpd_ref: ZpdReference,
    l_target: int,
    seed: int = 0,
) -> dict:
    """Shared metric computation over one path per student."""
    if len(students) != len(paths):
        raise ValueError("students and paths disagree in length")
    e_ps, zpds, lens_scores, divs, lengths = [], [], [], [], []
    for i, (student, path) in enumerate(zip(students, paths)):
        _, e_p = run_path(
            student, path, catalog, sim_cfg, seed=derive_seed(seed, "roll", i)
        )
        e_ps.append(e_p)
        zpds.append(score_zpd(path, catalog, student.proficiency, zpd_ref))
        lens_scores.append(len_score(path, l_target))
        divs.append(div_path(path))
        lengths.append(len(path))
    e_arr = np.asarray(e_ps)
    return {
        "mean_e_p": float(e_arr.mean()),
        "std_e_p": float(e_arr.std()),
        "mean_s_zpd": float(np.mean(zpds)),
        "mean_len_score": float(np.mean(lens_scores)),
        "mean_div_path": float(np.mean(divs)),
        "mean_length": float(np.mean(lengths)),
        "n": len(students),
    }


def evaluate_policy(
    params: PolicyParams,
    students,
    catalog: ConceptCatalog,
    sim_cfg: SimConfig,
    zpd_ref: ZpdReference,
    l_target: int,
    seed: int = 0,
    decode: str = "greedy",
) -> dict:
    """Greedy (default) or sampled decoding, one path per held-out student."""
    paths = []
    for i, student in enumerate(students):
        ctx = PromptContext.for_student(student.mastery, student.proficiency, l_target)
        if decode == "greedy":
            path = greedy_decode(params, ctx)
        elif decode == "sample":
            path = sample_path(params, ctx, derive_seed(seed, "decode", i)).path
        else:
            raise ValueError(f"unknown decode mode {decode!r}")
        if len(path) == 0:
            path = (0,)  # degenerate guard; step-0 mask makes this unreachable
        paths.append(path)
    return evaluate_fixed_paths(
        students, paths, catalog, sim_cfg, zpd_ref, l_target, seed=seed
    )


def random_policy_eval(
    students,
    catalog: ConceptCatalog,
    sim_cfg: SimConfig,
    zpd_ref: ZpdReference,
    l_target: int,
    seed: int = 0,
) -> dict:
    """Uniform-random fixed-length reference policy, same protocol."""
    paths = []
    for i in range(len(students)):
        rng = make_rng(derive_seed(seed, "random-path", i))
        paths.append(tuple(int(c) for c in rng.integers(0, catalog.num_concepts, size=l_target)))
    return evaluate_fixed_paths(
        students, paths, catalog, sim_cfg, zpd_ref, l_target, seed=seed
    )
