"""Command-line entry point: gen-data, pretrain, finetune, eval, track.

Exit codes: 0 success, 1 validation error (message names the flag or
config key), 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import META_PREFIX, CheckpointError, entry_bytes, load_checkpoint
from .config import TASKS, ConfigError, TrackerConfig, load_config
from .data import DatasetError, _write_pgm_raw, gen_config_from, generate_dataset, load_dataset, save_dataset
from .metrics import format_keyvalue, format_table
from .peft import census_formula, format_census, trainable_param_count
from .training import (TrainingError, evaluate_clips, finetune_prompt, load_foundation,
                       load_prompt_tracker, pretrain_foundation, save_delta, save_foundation)

U64_MAX = 2 ** 64 - 1


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="onetracker", description="Foundation/prompt tracker training and evaluation.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    specs = {
        "gen-data": "generate a synthetic clip dataset",
        "pretrain": "stage 1: train the RGB Foundation Tracker",
        "finetune": "stage 2: train adapters and prompters for one modality",
        "eval": "track a dataset and report metrics",
        "track": "write per-frame predictions for a dataset",
    }
    for name, help_text in specs.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", help="key=value config file (# comments)")
        s.add_argument("--preset", choices=("toy", "full"), default="toy",
                       help="base configuration before --config (default: toy)")
        s.add_argument("--seed", help="unsigned 64-bit seed")
        s.add_argument("--task", help=f"one of {', '.join(TASKS)}")
        s.add_argument("--checkpoint", help="checkpoint to read (stage-1 for finetune, any for eval/track)")
        s.add_argument("--foundation", help="foundation checkpoint a delta checkpoint is bound to")
        s.add_argument("--data", help="dataset directory")
        s.add_argument("--out", help="output path")
        s.add_argument("--steps", help="training steps")
        s.add_argument("--every-k", dest="every_k", help="run a prompter before every k-th encoder layer")
        s.add_argument("--quiet", action="store_true", help="suppress per-step logging")
    return p


def _int_flag(value: str | None, flag: str, lo: int, hi: int | None = None) -> int | None:
    if value is None:
        return None
    try:
        v = int(value)
    except ValueError:
        raise ValidationError(f"{flag}: expected an integer, got {value!r}") from None
    if v < lo or (hi is not None and v > hi):
        raise ValidationError(f"{flag}: {v} outside {lo}..{hi if hi is not None else 'inf'}")
    return v


def _config(args, base: TrackerConfig | None = None) -> TrackerConfig:
    if base is None:
        base = TrackerConfig.toy() if args.preset == "toy" else TrackerConfig()
    if args.config:
        if not Path(args.config).is_file():
            raise ValidationError(f"--config: file not found: {args.config}")
        base = load_config(args.config, base)
    changes = {}
    seed = _int_flag(args.seed, "--seed", 0, U64_MAX)
    if seed is not None:
        changes["seed"] = seed
    if args.task is not None:
        if args.task not in TASKS:
            raise ValidationError(f"--task: {args.task!r} is not one of {', '.join(TASKS)}")
        changes["task"] = args.task
    steps = _int_flag(args.steps, "--steps", 0)
    if steps is not None:
        changes["steps"] = steps
    every_k = _int_flag(args.every_k, "--every-k", 0, base.depth)
    if every_k is not None:
        changes["every_k"] = every_k
    for key in ("data", "checkpoint", "out"):
        if getattr(args, key):
            changes[key] = getattr(args, key)
    try:
        return base.replace(**changes)
    except ConfigError as exc:
        raise ValidationError(str(exc)) from None


def _require(value, flag: str, command: str):
    if not value:
        raise ValidationError(f"{command}: {flag} is required")
    return value


def _existing(path: str, flag: str) -> str:
    if not Path(path).exists():
        raise ValidationError(f"{flag}: path not found: {path}")
    return path


def _load_data(path: str, task: str):
    try:
        return load_dataset(_existing(path, "--data"), task)
    except DatasetError as exc:
        raise ValidationError(f"--data: {exc}") from None


def _log(args):
    return None if args.quiet else (lambda line: print(line, flush=True))


def _echo_config(cfg: TrackerConfig) -> None:
    for line in cfg.to_text().splitlines():
        print(f"config {line}")


def _checkpoint_kind(path: str) -> str:
    entries = load_checkpoint(path)
    key = META_PREFIX + "kind"
    if key not in entries:
        raise CheckpointError(f"{path}: missing {key}")
    return entry_bytes(entries[key]).decode("utf-8")


def _load_model(args, cfg: TrackerConfig):
    """(model, config, task) from --checkpoint, plus --foundation for delta checkpoints."""
    path = _existing(_require(args.checkpoint, "--checkpoint", args.command), "--checkpoint")
    if _checkpoint_kind(path) == "delta":
        foundation = _existing(_require(args.foundation, "--foundation", args.command + " (delta checkpoint)"),
                               "--foundation")
        model, stored, task = load_prompt_tracker(path, foundation)
        if args.task is not None and args.task != task:
            raise ValidationError(f"--task: {args.task} does not match checkpoint task {task}")
        return model, stored, task
    model, stored = load_foundation(path)
    task = args.task or "rgb"
    return model, stored.replace(task=task), task


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args, cfg: TrackerConfig) -> None:
    out = _require(args.out, "--out", "gen-data")
    clips = generate_dataset(cfg.seed, cfg.num_clips, gen_config_from(cfg))
    save_dataset(clips, out)
    print(f"wrote {len(clips)} clips to {out}")


def cmd_pretrain(args, cfg: TrackerConfig) -> None:
    data = _require(args.data, "--data", "pretrain")
    out = _require(args.out, "--out", "pretrain")
    clips = _load_data(data, "rgb")
    _echo_config(cfg)
    model, log = pretrain_foundation(cfg, clips, logger=_log(args))
    save_foundation(out, model, cfg)
    first, last = (log.losses[0], log.losses[-1]) if log.losses else (float("nan"), float("nan"))
    print(f"pretrain done: steps={len(log.losses)} first_loss={first:.6f} last_loss={last:.6f} "
          f"seconds={log.seconds:.1f} checkpoint={out}")


def cmd_finetune(args, cfg: TrackerConfig) -> None:
    ckpt = _existing(_require(args.checkpoint, "--checkpoint", "finetune"), "--checkpoint")
    data = _require(args.data, "--data", "finetune")
    out = _require(args.out, "--out", "finetune")
    if args.task is None or cfg.task == "rgb":
        raise ValidationError("--task: finetune needs one of rgb_n, rgb_m, rgb_d, rgb_t, rgb_e")
    if not args.config:
        # architecture and defaults come from the stage-1 run unless a config file is given
        _, stored = load_foundation(ckpt)
        cfg = _config(args, stored)
    clips = _load_data(data, cfg.task)
    foundation, _ = load_foundation(ckpt, cfg)
    _echo_config(cfg)
    tracker, log = finetune_prompt(cfg, foundation, clips, cfg.task, logger=_log(args))
    counts = trainable_param_count(tracker)
    formula = census_formula(cfg, tracker.modality)
    print("measured census:")
    print(format_census(counts))
    print("closed-form census:")
    print(format_census(formula))
    print(f"census formula trainable={formula['trainable']} measured trainable={counts['trainable']}")
    if formula["trainable"] != counts["trainable"]:
        raise TrainingError("trainable census disagrees with the closed-form count")
    print("freeze audit: all foundation parameters bit-identical")
    save_delta(out, tracker, cfg, ckpt)
    print(f"finetune done: steps={len(log.losses)} seconds={log.seconds:.1f} checkpoint={out}")


def cmd_eval(args, cfg: TrackerConfig) -> None:
    data = _require(args.data, "--data", "eval")
    model, mcfg, task = _load_model(args, cfg)
    clips = _load_data(data, task)
    report, _ = evaluate_clips(model, clips, task, mcfg)
    print(format_table(report))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(format_keyvalue(report))
        print(f"wrote {args.out}")


def cmd_track(args, cfg: TrackerConfig) -> None:
    data = _require(args.data, "--data", "track")
    out = Path(_require(args.out, "--out", "track"))
    model, mcfg, task = _load_model(args, cfg)
    clips = _load_data(data, task)
    _, results = evaluate_clips(model, clips, task, mcfg)
    for clip, res in zip(clips, results):
        d = out / clip.clip_id
        d.mkdir(parents=True, exist_ok=True)
        (d / "boxes.txt").write_text("".join(
            f"{t} {' '.join(repr(float(v)) for v in b)} {float(res.scores[t])!r}\n" for t, b in enumerate(res.boxes)))
        if res.masks is not None:
            (d / "masks").mkdir(exist_ok=True)
            for t, lab in enumerate(res.masks):
                _write_pgm_raw(d / "masks" / f"{t:04d}.pgm", lab)
        for flag in res.flags:
            print(f"{clip.clip_id}: {flag}")
    print(f"wrote predictions for {len(clips)} clips to {out}")


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
            "eval": cmd_eval, "track": cmd_track}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
        if args.command is None:
            raise ValidationError(f"a subcommand is required: {', '.join(COMMANDS)}")
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
        return 0
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, TrainingError, DatasetError, ValueError, RuntimeError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
