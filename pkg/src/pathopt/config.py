"""Experiment configuration: one JSON file drives every pipeline stage.

The file is flat-ish JSON with one section per module. Every key is
optional (an empty object runs the default desk-scale experiment), unknown
keys are rejected with the offending dotted path, and value errors carry
field-level messages. All stage seeds derive from the single master seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .experts import GaConfig, TeacherConfig
from .simulator import SimConfig
from .training import GrpoConfig, SftConfig, mask_indices

ALLOWED_L_TARGETS = (5, 10, 20)


class ConfigError(ValueError):
    """Invalid experiment config (bad JSON, unknown key, bad value)."""


@dataclass
class DataConfig:
    num_train_students: int = 512
    num_eval_students: int = 64
    demo_quota: int = 4
    demo_quality_threshold: float = 0.6
    calibration_explore: tuple = (0.0, 0.15, 0.3)
    calibration_random_per_student: int = 2
    calibration_stop_gain: float = 0.05
    # frontier probe length; deliberately not tied to l_target
    calibration_probe_len: int = 10
    split_seed: int = 17

    def __post_init__(self):
        if self.num_train_students < 1:
            raise ValueError("num_train_students must be >= 1")
        if self.num_eval_students < 1:
            raise ValueError("num_eval_students must be >= 1")
        if self.demo_quota < 1:
            raise ValueError("demo_quota must be >= 1")
        if self.calibration_random_per_student < 0:
            raise ValueError("calibration_random_per_student must be >= 0")
        if self.calibration_stop_gain < 0:
            raise ValueError("calibration_stop_gain must be >= 0")
        if self.calibration_probe_len < 1:
            raise ValueError("calibration_probe_len must be >= 1")
        for e in self.calibration_explore:
            if not (0.0 <= e <= 1.0):
                raise ValueError("calibration_explore entries must be in [0, 1]")


@dataclass
class RewardConfig:
    sigma: float = 0.1
    tolerance: int = 1
    length_penalty: float = 0.1
    ngram_n: int = 2
    zpd_bins: int = 5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.length_penalty < 0:
            raise ValueError("length_penalty must be >= 0")
        if self.ngram_n < 1:
            raise ValueError("ngram_n must be >= 1")
        if self.zpd_bins < 1:
            raise ValueError("zpd_bins must be >= 1")


@dataclass
class PolicyNetConfig:
    hidden: int = 32
    init_scale: float = 0.05

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be positive")


@dataclass
class CatalogConfig:
    path: str | None = None
    num_concepts: int = 20

    def __post_init__(self):
        if self.num_concepts < 2:
            raise ValueError("num_concepts must be >= 2")


@dataclass
class EvalConfig:
    lengths: tuple = (5, 10, 20)

    def __post_init__(self):
        if not self.lengths:
            raise ValueError("lengths must be non-empty")
        for l in self.lengths:
            if l not in ALLOWED_L_TARGETS:
                raise ValueError(f"eval length {l} not in {sorted(ALLOWED_L_TARGETS)}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    l_target: int = 10
    out_dir: str | None = None
    catalog: CatalogConfig = field(default_factory=CatalogConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    ga: GaConfig = field(default_factory=GaConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    data: DataConfig = field(default_factory=DataConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    sft: SftConfig = field(default_factory=SftConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    policy: PolicyNetConfig = field(default_factory=PolicyNetConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.l_target not in ALLOWED_L_TARGETS:
            raise ValueError(
                f"l_target must be one of {sorted(ALLOWED_L_TARGETS)}, got {self.l_target}"
            )


_INT = "int"
_FLOAT = "float"
_STR = "str"
_OPT_STR = "opt_str"
_INT_LIST = "int_list"
_FLOAT_LIST = "float_list"
_STR_LIST = "str_list"
_OPT_FLOAT_LIST = "opt_float_list"

# (json key, dataclass field, kind) per section
_SECTION_FIELDS = {
    "catalog": [
        ("path", "path", _OPT_STR),
        ("num_concepts", "num_concepts", _INT),
    ],
    "sim": [
        ("learn_rate", "learn_rate", _FLOAT),
        ("zpd_width", "zpd_width", _FLOAT),
        ("prereq_threshold", "prereq_threshold", _FLOAT),
        ("prereq_penalty", "prereq_penalty", _FLOAT),
        ("init_aptitude_low", "init_aptitude_low", _FLOAT),
        ("init_aptitude_high", "init_aptitude_high", _FLOAT),
        ("init_know_band", "init_know_band", _FLOAT),
        ("init_known_low", "init_known_low", _FLOAT),
        ("init_known_high", "init_known_high", _FLOAT),
        ("init_fresh_low", "init_fresh_low", _FLOAT),
        ("init_fresh_high", "init_fresh_high", _FLOAT),
    ],
    "ga": [
        ("population_size", "population_size", _INT),
        ("generations", "generations", _INT),
        ("crossover_prob", "crossover_prob", _FLOAT),
        ("mutation_prob", "mutation_prob", _FLOAT),
        ("tournament_size", "tournament_size", _INT),
        ("elitism_count", "elitism_count", _INT),
    ],
    "teacher": [
        ("learning_rate", "learning_rate", _FLOAT),
        ("discount", "discount", _FLOAT),
        ("epsilon", "epsilon", _FLOAT),
        ("episodes", "episodes", _INT),
        ("buckets", "buckets", _INT),
    ],
    "data": [
        ("num_train_students", "num_train_students", _INT),
        ("num_eval_students", "num_eval_students", _INT),
        ("demo_quota", "demo_quota", _INT),
        ("demo_quality_threshold", "demo_quality_threshold", _FLOAT),
        ("calibration_explore", "calibration_explore", _FLOAT_LIST),
        ("calibration_random_per_student", "calibration_random_per_student", _INT),
        ("calibration_stop_gain", "calibration_stop_gain", _FLOAT),
        ("calibration_probe_len", "calibration_probe_len", _INT),
        ("split_seed", "split_seed", _INT),
    ],
    "rewards": [
        ("sigma", "sigma", _FLOAT),
        ("tolerance", "tolerance", _INT),
        ("length_penalty", "length_penalty", _FLOAT),
        ("ngram_n", "ngram_n", _INT),
        ("zpd_bins", "zpd_bins", _INT),
    ],
    "sft": [
        ("learning_rate", "learning_rate", _FLOAT),
        ("epochs", "epochs", _INT),
        ("batch_size", "batch_size", _INT),
        ("warmup_frac", "warmup_frac", _FLOAT),
    ],
    "grpo": [
        ("learning_rate", "learning_rate", _FLOAT),
        ("epochs", "epochs", _INT),
        ("batch_size", "batch_size", _INT),
        ("group_size", "group_size", _INT),
        ("warmup_steps", "warmup_steps", _INT),
        ("clip_low", "clip_low", _FLOAT),
        ("clip_high", "clip_high", _FLOAT),
        ("kappa", "kappa", _FLOAT),
        ("adv_eps", "adv_eps", _FLOAT),
        ("steps_per_snapshot", "steps_per_snapshot", _INT),
        ("kl_coeff", "kl_coeff", _FLOAT),
        ("advantage_mode", "advantage_mode", _STR),
        ("ratio_mode", "ratio_mode", _STR),
        ("reward_mask", "reward_mask", _STR_LIST),
        ("weights", "weights", _OPT_FLOAT_LIST),
    ],
    "policy": [
        ("hidden", "hidden", _INT),
        ("init_scale", "init_scale", _FLOAT),
    ],
    "eval": [
        ("lengths", "lengths", _INT_LIST),
    ],
}

_SECTION_TYPES = {
    "catalog": CatalogConfig,
    "sim": SimConfig,
    "ga": GaConfig,
    "teacher": TeacherConfig,
    "data": DataConfig,
    "rewards": RewardConfig,
    "sft": SftConfig,
    "grpo": GrpoConfig,
    "policy": PolicyNetConfig,
    "eval": EvalConfig,
}

_TOP_KEYS = ("seed", "l_target", "out_dir") + tuple(_SECTION_FIELDS)


def _coerce(value, kind: str, path: str):
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config error at {path}: expected an integer, got {value!r}")
        return value
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config error at {path}: expected a number, got {value!r}")
        return float(value)
    if kind == _STR:
        if not isinstance(value, str):
            raise ConfigError(f"config error at {path}: expected a string, got {value!r}")
        return value
    if kind == _OPT_STR:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"config error at {path}: expected a string or null, got {value!r}")
        return value
    if kind == _OPT_FLOAT_LIST:
        if value is None:
            return None
        return _coerce(value, _FLOAT_LIST, path)
    if kind in (_INT_LIST, _FLOAT_LIST, _STR_LIST):
        if not isinstance(value, list):
            raise ConfigError(f"config error at {path}: expected a list, got {value!r}")
        inner = {_INT_LIST: _INT, _FLOAT_LIST: _FLOAT, _STR_LIST: _STR}[kind]
        return tuple(_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value))
    raise AssertionError(f"unhandled kind {kind}")


def _build_section(name: str, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"config error at {name}: expected an object")
    fields = _SECTION_FIELDS[name]
    known = {json_key for json_key, _, _ in fields}
    for key in raw:
        if key not in known:
            raise ConfigError(f"config error at {name}.{key}: unknown key")
    kwargs = {}
    for json_key, attr, kind in fields:
        if json_key in raw:
            kwargs[attr] = _coerce(raw[json_key], kind, f"{name}.{json_key}")
    try:
        return _SECTION_TYPES[name](**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config error at {name}: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"config error at {key}: unknown key")
    kwargs = {}
    if "seed" in raw:
        kwargs["seed"] = _coerce(raw["seed"], _INT, "seed")
    if "l_target" in raw:
        kwargs["l_target"] = _coerce(raw["l_target"], _INT, "l_target")
    if "out_dir" in raw:
        kwargs["out_dir"] = _coerce(raw["out_dir"], _OPT_STR, "out_dir")
    for name in _SECTION_FIELDS:
        if name in raw:
            kwargs[name] = _build_section(name, raw[name])
    try:
        cfg = ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"config error: {exc}") from exc
    try:
        mask_indices(cfg.grpo.reward_mask)
    except ValueError as exc:
        raise ConfigError(f"config error at grpo.reward_mask: {exc}") from exc
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out: dict = {"seed": cfg.seed, "l_target": cfg.l_target, "out_dir": cfg.out_dir}
    for name, fields in _SECTION_FIELDS.items():
        section = getattr(cfg, name)
        sec_dict = {}
        for json_key, attr, kind in fields:
            value = getattr(section, attr)
            if kind in (_INT_LIST, _FLOAT_LIST, _STR_LIST):
                value = list(value)
            elif kind == _OPT_FLOAT_LIST and value is not None:
                value = list(value)
            sec_dict[json_key] = value
        out[name] = sec_dict
    return out


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    cfg = config_from_dict(raw)
    if cfg.catalog.path is not None:
        try:
            with open(cfg.catalog.path, "r", encoding="utf-8"):
                pass
        except OSError as exc:
            raise ConfigError(
                f"config error at catalog.path: cannot open {cfg.catalog.path}: {exc}"
            ) from exc
    return cfg
