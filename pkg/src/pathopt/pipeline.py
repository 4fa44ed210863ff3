"""Pipeline stages behind the CLI: synth, sft, train, eval, trace.

Each command is a single-process orchestrator: it loads the config,
regenerates the deterministic student cohort, reads its stage inputs from
the output directory, and writes its stage outputs. Reruns with the same
config and seed are byte-identical; existing outputs are never overwritten
without force. Numeric CSV cells are fixed to six decimal places.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .config import ExperimentConfig
from .experts import (
    DemoRecord,
    build_sft_dataset,
    ga_search,
    greedy_gain_path,
    read_demos,
    teacher_rollout,
    train_teacher,
    write_demos,
)
from .policy import PromptContext, greedy_decode, init_params, load_params, save_params
from .rewards import LengthConstraint, ZpdReference, div_path, estimate_zpd_reference
from .seeding import derive_seed, make_rng
from .simulator import (
    ConceptCatalog,
    default_catalog,
    init_student,
    load_catalog,
    run_path,
    save_catalog,
    trajectory_record,
    write_trajectories,
)
from .training import (
    GrpoConfig,
    RewardStack,
    SftConfig,
    TrainPrompt,
    evaluate_policy,
    random_policy_eval,
    sft_train,
    train_loop,
)

OUT_ROOT_ENV = "PATHOPT_OUT"


class PipelineError(RuntimeError):
    """Runtime failure: missing stage inputs, overwrite without force, etc."""


def resolve_out_dir(cfg: ExperimentConfig, cli_out: str | None) -> str:
    if cli_out:
        return cli_out
    if cfg.out_dir:
        return cfg.out_dir
    return os.environ.get(OUT_ROOT_ENV, "runs")


def _prepare_outputs(stage_dir: str, filenames, force: bool) -> None:
    existing = [
        f for f in filenames if os.path.exists(os.path.join(stage_dir, f))
    ]
    if existing and not force:
        raise PipelineError(
            f"outputs already exist in {stage_dir}: {', '.join(sorted(existing))} "
            "(pass --force to overwrite)"
        )
    os.makedirs(stage_dir, exist_ok=True)


def fmt6(x) -> str:
    return f"{float(x):.6f}"


def write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def build_catalog(cfg: ExperimentConfig) -> ConceptCatalog:
    if cfg.catalog.path is not None:
        return load_catalog(cfg.catalog.path)
    return default_catalog(cfg.catalog.num_concepts)


@dataclass(frozen=True)
class Cohort:
    train_ids: tuple[int, ...]
    eval_ids: tuple[int, ...]
    students: dict  # id -> StudentState


def make_cohort(cfg: ExperimentConfig, catalog: ConceptCatalog) -> Cohort:
    """Deterministic students plus a disjoint train/eval split by id."""
    total = cfg.data.num_train_students + cfg.data.num_eval_students
    students = {
        sid: init_student(catalog, cfg.sim, seed=derive_seed(cfg.seed, "student", sid))
        for sid in range(total)
    }
    rng = make_rng(derive_seed(cfg.seed, "split", cfg.data.split_seed))
    perm = rng.permutation(total)
    train_ids = tuple(sorted(int(i) for i in perm[: cfg.data.num_train_students]))
    eval_ids = tuple(sorted(int(i) for i in perm[cfg.data.num_train_students :]))
    overlap = set(train_ids) & set(eval_ids)
    if overlap:
        raise PipelineError(f"student split overlap detected: {sorted(overlap)}")
    return Cohort(train_ids=train_ids, eval_ids=eval_ids, students=students)


def _stage_seed(cfg: ExperimentConfig, tag: str) -> int:
    return derive_seed(cfg.seed, tag)


def _assemble_reward_stack(cfg: ExperimentConfig, catalog: ConceptCatalog, zpd_ref: ZpdReference) -> RewardStack:
    return RewardStack(
        catalog=catalog,
        sim_cfg=cfg.sim,
        zpd_ref=zpd_ref,
        length=LengthConstraint(
            target=cfg.l_target,
            tolerance=cfg.rewards.tolerance,
            penalty=cfg.rewards.length_penalty,
        ),
        ngram_n=cfg.rewards.ngram_n,
    )


SYNTH_FILES = (
    "catalog.json",
    "demo_rand.jsonl",
    "demo_ga.jsonl",
    "demo_rl.jsonl",
    "demo_hybrid.jsonl",
    "demo_sft.jsonl",
    "calibration.jsonl",
    "pareto_scatter.csv",
    "zpd_reference.json",
)


def cmd_synth(cfg: ExperimentConfig, out_root: str, force: bool = False) -> dict:
    """Stage 1: expert pools, diversity scatter, ZPD reference."""
    stage = os.path.join(out_root, "synth")
    _prepare_outputs(stage, SYNTH_FILES, force)
    catalog = build_catalog(cfg)
    save_catalog(catalog, os.path.join(stage, "catalog.json"))
    cohort = make_cohort(cfg, catalog)
    train_students = [(sid, cohort.students[sid]) for sid in cohort.train_ids]
    quota = cfg.data.demo_quota
    l_target = cfg.l_target

    teacher_cfg = dataclasses.replace(cfg.teacher, seed=_stage_seed(cfg, "teacher"))
    teacher = train_teacher(catalog, cfg.sim, teacher_cfg, horizon=l_target)

    pools: dict[str, list[DemoRecord]] = {"rand": [], "ga": [], "rl": [], "hybrid": []}
    ga_results = []
    for sid, student in train_students:
        base = dict(
            mastery=tuple(float(m) for m in student.mastery),
            proficiency=float(student.proficiency),
            target_len=l_target,
        )
        rand_rng = make_rng(derive_seed(cfg.seed, "rand-pool", sid))
        for k in range(quota):
            path = tuple(int(c) for c in rand_rng.integers(0, catalog.num_concepts, size=l_target))
            rseed = derive_seed(cfg.seed, "rand-roll", sid, k)
            _, e_p = run_path(student, path, catalog, cfg.sim, seed=rseed)
            pools["rand"].append(
                DemoRecord(path=path, source="Rand", e_p=e_p, seed=rseed, **base)
            )

        ga_cfg = dataclasses.replace(cfg.ga, seed=derive_seed(cfg.seed, "ga-pool", sid))
        result = ga_search(student, catalog, l_target, ga_cfg, cfg.sim)
        ga_results.append(result)
        seen = set()
        for chrom in sorted(result.population, key=lambda c: -c.fitness):
            if chrom.genes in seen or len(seen) >= quota:
                continue
            seen.add(chrom.genes)
            pools["ga"].append(
                DemoRecord(
                    path=chrom.genes,
                    source="GA",
                    e_p=chrom.fitness,
                    seed=derive_seed(cfg.seed, "ga-roll", sid),
                    **base,
                )
            )

        rl_seed = derive_seed(cfg.seed, "rl-roll", sid)
        rl_path = teacher_rollout(teacher, student, l_target, catalog, cfg.sim, seed=rl_seed)
        _, rl_ep = run_path(student, rl_path, catalog, cfg.sim, seed=rl_seed)
        pools["rl"].append(
            DemoRecord(path=rl_path, source="RL", e_p=rl_ep, seed=rl_seed, **base)
        )

    # Same GA searches, two selections: the hybrid pool holds each expert
    # once (pool statistics), the imitation corpus upweights the teacher by
    # repeating its rollout into unused quota slots (clonability).
    hybrid_kwargs = dict(
        quality_threshold=cfg.data.demo_quality_threshold,
        per_student_quota=quota,
        seed=_stage_seed(cfg, "hybrid"),
        ga_results=ga_results,
    )
    pool_students = [s for _, s in train_students]
    pools["hybrid"] = build_sft_dataset(
        pool_students, catalog, cfg.sim, cfg.ga, teacher, l_target,
        fill_to_quota=False, **hybrid_kwargs,
    )
    sft_corpus = build_sft_dataset(
        pool_students, catalog, cfg.sim, cfg.ga, teacher, l_target,
        fill_to_quota=True, **hybrid_kwargs,
    )
    write_demos(os.path.join(stage, "demo_sft.jsonl"), sft_corpus)

    for name, records in pools.items():
        write_demos(os.path.join(stage, f"demo_{name}.jsonl"), records)

    pool_tags = {"rand": "Rand", "ga": "GA", "rl": "RL", "hybrid": "GA+RL"}
    scatter_rows = []
    for name in ("rand", "ga", "rl", "hybrid"):
        for k, rec in enumerate(pools[name]):
            scatter_rows.append(
                (pool_tags[name], f"{name}-{k}", fmt6(rec.e_p), fmt6(div_path(rec.path)))
            )
    write_csv(
        os.path.join(stage, "pareto_scatter.csv"),
        ("source", "path_id", "e_p", "div_path"),
        scatter_rows,
    )

    # Short calibration probes, graded on their own coverage: each path is
    # scored against an exam over exactly the concepts it touched, the way
    # a unit quiz follows a lesson. Full-exam outcomes would only clear the
    # high-outcome filter for catalog-length grinds, whose difficulty mix
    # says nothing about a single session's sweet spot. Greedy rollouts are
    # gain-truncated so dead-end polish steps do not drag the difficulty
    # bins toward the catalog mean; random paths are kept as the filter's
    # foil. The probe length is fixed, not tied to the curriculum length:
    # the reference describes where practice pays off for a student NOW,
    # and long probes wash that frontier out by averaging over concepts
    # the student only reaches mid-curriculum.
    cal_len = cfg.data.calibration_probe_len
    cal_records = []
    cal_triples = []
    for sid, student in train_students:
        variants = [("greedy", e) for e in cfg.data.calibration_explore]
        variants += [("random", None)] * cfg.data.calibration_random_per_student
        for v_idx, (kind, explore) in enumerate(variants):
            pseed = derive_seed(cfg.seed, "calib", sid, v_idx)
            if kind == "greedy":
                path = greedy_gain_path(
                    student, catalog, cfg.sim, cal_len, seed=pseed,
                    explore=explore, stop_gain=cfg.data.calibration_stop_gain,
                )
            else:
                rng = make_rng(pseed)
                path = tuple(int(c) for c in rng.integers(0, catalog.num_concepts, size=cal_len))
            lesson_cat = ConceptCatalog(
                concepts=catalog.concepts,
                target_set=tuple(sorted(set(int(c) for c in path))),
            )
            traj, e_p = run_path(student, path, lesson_cat, cfg.sim, seed=pseed)
            cal_records.append(
                trajectory_record(student, path, [st.correct for st in traj], e_p)
            )
            cal_triples.append((student.proficiency, path, e_p))
    write_trajectories(os.path.join(stage, "calibration.jsonl"), cal_records)

    triples = list(cal_triples)
    for name in ("rand", "ga", "rl", "hybrid"):
        for rec in pools[name]:
            triples.append((rec.proficiency, rec.path, rec.e_p))
    zpd_ref = estimate_zpd_reference(
        triples, catalog, sigma=cfg.rewards.sigma, num_bins=cfg.rewards.zpd_bins
    )
    zpd_ref.save(os.path.join(stage, "zpd_reference.json"))

    return {
        "pool_sizes": {name: len(records) for name, records in pools.items()},
        "sft_corpus": len(sft_corpus),
        "calibration": len(cal_records),
        "zpd_support": list(zpd_ref.support),
    }


SFT_FILES = ("policy_sft.json", "sft_nll.csv")


def cmd_sft(cfg: ExperimentConfig, out_root: str, force: bool = False, dataset: str | None = None) -> dict:
    """Stage 2: behavior-clone the demo dataset into the policy."""
    stage = os.path.join(out_root, "sft")
    _prepare_outputs(stage, SFT_FILES, force)
    data_path = dataset or os.path.join(out_root, "synth", "demo_sft.jsonl")
    if not os.path.exists(data_path):
        raise PipelineError(f"demo dataset not found: {data_path} (run synth first)")
    records = read_demos(data_path)
    if not records:
        raise PipelineError(f"demo dataset is empty: {data_path}")
    catalog = build_catalog(cfg)
    params = init_params(
        catalog.num_concepts,
        hidden=cfg.policy.hidden,
        seed=_stage_seed(cfg, "policy-init"),
        scale=cfg.policy.init_scale,
    )
    sft_cfg = dataclasses.replace(cfg.sft, seed=_stage_seed(cfg, "sft"))
    params, report = sft_train(params, records, sft_cfg)
    save_params(params, os.path.join(stage, "policy_sft.json"))
    write_csv(
        os.path.join(stage, "sft_nll.csv"),
        ("epoch", "nll"),
        [(i, fmt6(v)) for i, v in enumerate(report.nll_curve)],
    )
    return {
        "records": report.num_records,
        "initial_nll": report.nll_curve[0],
        "final_nll": report.nll_curve[-1],
    }


TRAIN_FILES = ("policy.json", "train_report.csv", "train_summary.json")


def run_label(advantage_mode: str, reward_mask) -> str:
    label = advantage_mode
    if reward_mask:
        label += "-mask-" + "-".join(str(t) for t in reward_mask)
    return label


def cmd_train(
    cfg: ExperimentConfig,
    out_root: str,
    force: bool = False,
    advantage: str | None = None,
    weights=None,
    reward_mask=None,
    checkpoint: str | None = None,
    from_scratch: bool = False,
) -> dict:
    """Stage 3: group-relative RL from the warm-started policy."""
    grpo_cfg = dataclasses.replace(
        cfg.grpo,
        seed=_stage_seed(cfg, "grpo"),
        advantage_mode=advantage or cfg.grpo.advantage_mode,
        weights=tuple(weights) if weights is not None else cfg.grpo.weights,
        reward_mask=tuple(reward_mask) if reward_mask is not None else cfg.grpo.reward_mask,
    )
    label = run_label(grpo_cfg.advantage_mode, grpo_cfg.reward_mask)
    stage = os.path.join(out_root, "train", label)
    _prepare_outputs(stage, TRAIN_FILES, force)

    zpd_path = os.path.join(out_root, "synth", "zpd_reference.json")
    if not os.path.exists(zpd_path):
        raise PipelineError(f"ZPD reference not found: {zpd_path} (run synth first)")
    zpd_ref = ZpdReference.load(zpd_path)

    catalog = build_catalog(cfg)
    if from_scratch:
        params = init_params(
            catalog.num_concepts,
            hidden=cfg.policy.hidden,
            seed=_stage_seed(cfg, "policy-init"),
            scale=cfg.policy.init_scale,
        )
    else:
        ckpt = checkpoint or os.path.join(out_root, "sft", "policy_sft.json")
        if not os.path.exists(ckpt):
            raise PipelineError(f"checkpoint not found: {ckpt} (run sft first)")
        params = load_params(ckpt)

    cohort = make_cohort(cfg, catalog)
    prompts = [
        TrainPrompt(
            prompt_id=sid,
            student=cohort.students[sid],
            ctx=PromptContext.for_student(
                cohort.students[sid].mastery,
                cohort.students[sid].proficiency,
                cfg.l_target,
            ),
        )
        for sid in cohort.train_ids
    ]
    eval_students = [cohort.students[sid] for sid in cohort.eval_ids]
    stack = _assemble_reward_stack(cfg, catalog, zpd_ref)
    ref_params = params.copy() if grpo_cfg.kl_coeff > 0 else None
    params, report = train_loop(
        params,
        prompts,
        grpo_cfg,
        stack,
        eval_students=eval_students,
        eval_l_target=cfg.l_target,
        eval_seed=_stage_seed(cfg, "train-eval"),
        ref_params=ref_params,
    )

    save_params(params, os.path.join(stage, "policy.json"))
    header = (
        "step",
        "lr",
        "surrogate",
        "clip_fraction",
        "adv_mean",
        "adv_std",
        "adv_min",
        "adv_max",
        "mean_e_p",
        "mean_s_zpd",
        "mean_r_len",
        "mean_d_div",
        "mean_len_score",
        "mean_div_path",
        "mean_length",
    )
    rows = [
        (
            r.step,
            fmt6(r.lr),
            fmt6(r.surrogate),
            fmt6(r.clip_fraction),
            fmt6(r.adv_mean),
            fmt6(r.adv_std),
            fmt6(r.adv_min),
            fmt6(r.adv_max),
            fmt6(r.mean_e_p),
            fmt6(r.mean_s_zpd),
            fmt6(r.mean_r_len),
            fmt6(r.mean_d_div),
            fmt6(r.mean_len_score),
            fmt6(r.mean_div_path),
            fmt6(r.mean_length),
        )
        for r in report.steps
    ]
    write_csv(os.path.join(stage, "train_report.csv"), header, rows)
    summary = {
        "label": label,
        "advantage_mode": grpo_cfg.advantage_mode,
        "reward_mask": list(grpo_cfg.reward_mask),
        "updates": len(report.steps),
        "epoch_evals": [
            {"epoch": epoch, **{k: round(v, 6) for k, v in m.items()}}
            for epoch, m in report.evals
        ],
    }
    with open(os.path.join(stage, "train_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _eval_files(lengths) -> tuple[str, ...]:
    return tuple(f"eval_L{l}.csv" for l in lengths)


def cmd_eval(
    cfg: ExperimentConfig,
    out_root: str,
    force: bool = False,
    checkpoint: str | None = None,
    tag: str = "trained",
    lengths=None,
) -> dict:
    """Stage 4: held-out evaluation at each requested target length."""
    lengths = tuple(lengths) if lengths else cfg.eval.lengths
    stage = os.path.join(out_root, "eval")
    _prepare_outputs(stage, _eval_files(lengths), force)

    zpd_path = os.path.join(out_root, "synth", "zpd_reference.json")
    if not os.path.exists(zpd_path):
        raise PipelineError(f"ZPD reference not found: {zpd_path} (run synth first)")
    zpd_ref = ZpdReference.load(zpd_path)
    ckpt = checkpoint or os.path.join(
        out_root, "train", run_label(cfg.grpo.advantage_mode, cfg.grpo.reward_mask), "policy.json"
    )
    if not os.path.exists(ckpt):
        raise PipelineError(f"checkpoint not found: {ckpt} (run train first)")
    params = load_params(ckpt)

    catalog = build_catalog(cfg)
    cohort = make_cohort(cfg, catalog)
    eval_students = [cohort.students[sid] for sid in cohort.eval_ids]

    header = (
        "policy",
        "mean_e_p",
        "std_e_p",
        "mean_s_zpd",
        "mean_len_score",
        "mean_div_path",
        "mean_length",
        "n",
    )
    results = {}
    for l in lengths:
        rand = random_policy_eval(
            eval_students, catalog, cfg.sim, zpd_ref, l,
            seed=derive_seed(cfg.seed, "eval-rand", l),
        )
        trained = evaluate_policy(
            params, eval_students, catalog, cfg.sim, zpd_ref, l,
            seed=derive_seed(cfg.seed, "eval", l),
        )
        rows = []
        for name, m in (("random", rand), (tag, trained)):
            rows.append(
                (
                    name,
                    fmt6(m["mean_e_p"]),
                    fmt6(m["std_e_p"]),
                    fmt6(m["mean_s_zpd"]),
                    fmt6(m["mean_len_score"]),
                    fmt6(m["mean_div_path"]),
                    fmt6(m["mean_length"]),
                    m["n"],
                )
            )
        write_csv(os.path.join(stage, f"eval_L{l}.csv"), header, rows)
        results[l] = {"random": rand, tag: trained}
    return results


def cmd_trace(
    cfg: ExperimentConfig,
    out_root: str,
    student_id: int,
    force: bool = False,
    checkpoint: str | None = None,
    tag: str = "trained",
) -> dict:
    """Stage 5: per-step difficulty trace against the ZPD band."""
    stage = os.path.join(out_root, "trace")
    filename = f"trace_student{student_id}.csv"
    _prepare_outputs(stage, (filename,), force)

    zpd_path = os.path.join(out_root, "synth", "zpd_reference.json")
    if not os.path.exists(zpd_path):
        raise PipelineError(f"ZPD reference not found: {zpd_path} (run synth first)")
    zpd_ref = ZpdReference.load(zpd_path)
    ckpt = checkpoint or os.path.join(
        out_root, "train", run_label(cfg.grpo.advantage_mode, cfg.grpo.reward_mask), "policy.json"
    )
    if not os.path.exists(ckpt):
        raise PipelineError(f"checkpoint not found: {ckpt} (run train first)")
    params = load_params(ckpt)

    catalog = build_catalog(cfg)
    cohort = make_cohort(cfg, catalog)
    if student_id not in cohort.eval_ids:
        raise PipelineError(
            f"student {student_id} is not in the evaluation split "
            f"(eval ids: {cohort.eval_ids[0]}..{cohort.eval_ids[-1]} sample)"
        )
    student = cohort.students[student_id]
    z = zpd_ref.center(student.proficiency)

    ctx = PromptContext.for_student(student.mastery, student.proficiency, cfg.l_target)
    traced = {tag: greedy_decode(params, ctx)}
    rng = make_rng(derive_seed(cfg.seed, "trace-rand", student_id))
    traced["random"] = tuple(
        int(c) for c in rng.integers(0, catalog.num_concepts, size=cfg.l_target)
    )

    rows = []
    for name in (tag, "random"):
        for step, concept in enumerate(traced[name], start=1):
            rows.append(
                (
                    name,
                    step,
                    concept,
                    fmt6(catalog.difficulty(concept)),
                    fmt6(z),
                    fmt6(zpd_ref.sigma),
                )
            )
    write_csv(
        os.path.join(stage, filename),
        ("policy", "step", "concept", "difficulty", "z", "sigma"),
        rows,
    )
    return {name: list(path) for name, path in traced.items()}
