"""pathopt: multi-objective learning-path recommendation at desk scale.

A transparent student simulator, four-objective vector rewards (learning
effect, ZPD alignment, length compliance, group diversity), hybrid expert
synthesis (genetic search + tabular Q teacher), a small softmax path policy
with behavior-cloning warm start, and indicator-based group-relative policy
optimization, all behind one seeded, file-based experiment pipeline.
"""

from .config import ConfigError, ExperimentConfig, config_from_dict, config_to_dict, load_config
from .indicator import (
    eps_indicator,
    group_advantages,
    hv_contribution_fitness,
    hypervolume,
    pareto_fitness,
    pareto_front,
    weighted_sum_fitness,
)
from .pipeline import PipelineError, cmd_eval, cmd_sft, cmd_synth, cmd_trace, cmd_train
from .policy import (
    PolicyParams,
    PromptContext,
    greedy_decode,
    init_params,
    load_params,
    path_log_prob,
    sample_group,
    sample_path,
    save_params,
)
from .rewards import (
    LengthConstraint,
    RewardVector,
    ZpdReference,
    ZpdSupportError,
    compose_group_rewards,
    estimate_zpd_reference,
)
from .seeding import derive_seed, make_rng
from .simulator import (
    CatalogError,
    Concept,
    ConceptCatalog,
    SimConfig,
    StudentState,
    default_catalog,
    init_student,
    run_path,
)
from .training import GrpoConfig, SftConfig, ib_grpo_step, sft_train, train_loop

__version__ = "0.1.0"

__all__ = [
    "CatalogError",
    "Concept",
    "ConceptCatalog",
    "ConfigError",
    "ExperimentConfig",
    "GrpoConfig",
    "LengthConstraint",
    "PipelineError",
    "PolicyParams",
    "PromptContext",
    "RewardVector",
    "SftConfig",
    "SimConfig",
    "StudentState",
    "ZpdReference",
    "ZpdSupportError",
    "cmd_eval",
    "cmd_sft",
    "cmd_synth",
    "cmd_trace",
    "cmd_train",
    "compose_group_rewards",
    "config_from_dict",
    "config_to_dict",
    "default_catalog",
    "derive_seed",
    "eps_indicator",
    "estimate_zpd_reference",
    "greedy_decode",
    "group_advantages",
    "hv_contribution_fitness",
    "hypervolume",
    "ib_grpo_step",
    "init_params",
    "init_student",
    "load_config",
    "load_params",
    "make_rng",
    "pareto_fitness",
    "pareto_front",
    "path_log_prob",
    "run_path",
    "sample_group",
    "sample_path",
    "save_params",
    "sft_train",
    "train_loop",
    "weighted_sum_fitness",
]
