"""Command-line front end.

    pathopt synth|sft|train|eval|trace --config cfg.json [--seed N] [--out DIR]
                                       [--advantage MODE] [--reward-mask LIST]
                                       [--force] [...]

Exit codes: 0 success, 2 config error, 3 runtime error. The output root is
resolved as --out, then the config's out_dir, then $PATHOPT_OUT, then
./runs. The --advantage / --reward-mask pair selects the training variant;
eval and trace use the same pair to locate the matching checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import ConfigError, load_config
from .pipeline import (
    PipelineError,
    cmd_eval,
    cmd_sft,
    cmd_synth,
    cmd_trace,
    cmd_train,
    resolve_out_dir,
)
from .training import ADVANTAGE_MODES, mask_indices

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parse_mask(text: str | None) -> tuple[str, ...] | None:
    if text is None:
        return None
    tokens = tuple(t.strip() for t in text.split(",") if t.strip())
    mask_indices(tokens)  # raises ValueError on unknown tokens
    return tokens


def _parse_weights(text: str | None):
    if text is None:
        return None
    try:
        weights = tuple(float(t) for t in text.split(","))
    except ValueError as exc:
        raise ValueError(f"--weights must be comma-separated numbers: {text!r}") from exc
    return weights


def _parse_lengths(text: str | None):
    if text is None:
        return None
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError as exc:
        raise ValueError(f"--lengths must be comma-separated integers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="experiment config JSON")
    shared.add_argument("--seed", type=int, default=None, help="override the master seed")
    shared.add_argument("--out", default=None, help="output root directory")
    shared.add_argument(
        "--advantage",
        choices=ADVANTAGE_MODES,
        default=None,
        help="fitness scheme for training (also selects the eval/trace checkpoint)",
    )
    shared.add_argument(
        "--reward-mask",
        default=None,
        metavar="LIST",
        help="comma-separated reward components to drop from fitness (e.g. zpd,len)",
    )
    shared.add_argument("--force", action="store_true", help="overwrite existing outputs")

    parser = argparse.ArgumentParser(
        prog="pathopt",
        description="seeded learning-path recommendation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[shared], help="build expert pools and the ZPD reference")

    p_sft = sub.add_parser("sft", parents=[shared], help="behavior-clone the demo dataset")
    p_sft.add_argument("--dataset", default=None, help="demo JSONL (default: synth hybrid pool)")

    p_train = sub.add_parser("train", parents=[shared], help="group-relative RL from the warm start")
    p_train.add_argument("--checkpoint", default=None, help="starting policy (default: SFT output)")
    p_train.add_argument("--weights", default=None, metavar="W0,W1,W2,W3",
                         help="weighted_sum coefficients")
    p_train.add_argument("--from-scratch", action="store_true",
                         help="skip the SFT checkpoint and start from a fresh init")

    p_eval = sub.add_parser("eval", parents=[shared], help="held-out metric tables per length")
    p_eval.add_argument("--checkpoint", default=None, help="policy to evaluate (default: train output)")
    p_eval.add_argument("--tag", default="trained", help="row label for the evaluated policy")
    p_eval.add_argument("--lengths", default=None, metavar="L1,L2,...",
                        help="target lengths (default: config eval.lengths)")

    p_trace = sub.add_parser("trace", parents=[shared], help="per-step difficulty trace for one student")
    p_trace.add_argument("--student", type=int, required=True, help="held-out student id")
    p_trace.add_argument("--checkpoint", default=None, help="policy to trace (default: train output)")
    p_trace.add_argument("--tag", default="trained", help="trace label for the policy rows")

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        reward_mask = _parse_mask(args.reward_mask)
        if args.command == "train":
            weights = _parse_weights(args.weights)
        lengths = _parse_lengths(args.lengths) if args.command == "eval" else None
        # eval/trace locate the checkpoint by the same variant label as train
        if args.advantage is not None or reward_mask is not None:
            cfg = dataclasses.replace(
                cfg,
                grpo=dataclasses.replace(
                    cfg.grpo,
                    advantage_mode=args.advantage or cfg.grpo.advantage_mode,
                    reward_mask=reward_mask if reward_mask is not None else cfg.grpo.reward_mask,
                ),
            )
    except (ConfigError, ValueError) as exc:
        print(f"pathopt: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_root = resolve_out_dir(cfg, args.out)
    try:
        if args.command == "synth":
            info = cmd_synth(cfg, out_root, force=args.force)
            sizes = ", ".join(f"{k}={v}" for k, v in sorted(info["pool_sizes"].items()))
            print(f"synth: pools {sizes}; sft corpus {info['sft_corpus']}; "
                  f"calibration {info['calibration']}; zpd support {info['zpd_support']}")
        elif args.command == "sft":
            info = cmd_sft(cfg, out_root, force=args.force, dataset=args.dataset)
            print(f"sft: {info['records']} demos, nll {info['initial_nll']:.6f} -> "
                  f"{info['final_nll']:.6f}")
        elif args.command == "train":
            info = cmd_train(
                cfg,
                out_root,
                force=args.force,
                weights=weights,
                checkpoint=args.checkpoint,
                from_scratch=args.from_scratch,
            )
            print(f"train[{info['label']}]: {info['updates']} updates")
            if info["epoch_evals"]:
                last = info["epoch_evals"][-1]
                print(f"train[{info['label']}]: held-out mean_e_p {last['mean_e_p']:.6f}")
        elif args.command == "eval":
            results = cmd_eval(
                cfg,
                out_root,
                force=args.force,
                checkpoint=args.checkpoint,
                tag=args.tag,
                lengths=lengths,
            )
            for l in sorted(results):
                table = results[l]
                for name in table:
                    print(f"eval L={l} {name}: mean_e_p {table[name]['mean_e_p']:.6f}")
        elif args.command == "trace":
            paths = cmd_trace(
                cfg,
                out_root,
                student_id=args.student,
                force=args.force,
                checkpoint=args.checkpoint,
                tag=args.tag,
            )
            for name, path in paths.items():
                print(f"trace student {args.student} [{name}]: {len(path)} steps")
        else:  # unreachable: argparse enforces the choices
            raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"pathopt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, OSError, RuntimeError, ValueError) as exc:
        print(f"pathopt: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
