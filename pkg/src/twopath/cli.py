"""Command-line entry points.

Exit codes: 0 success, 1 configuration or input error, 2 failed self-check.
"""
from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional

from .checks import format_table, run_gradient_suite, run_inflation_suite
from .config import RunConfig, describe_keys
from .data import (
    ClipDataset,
    ClipFormatError,
    DatasetManifest,
    clip_seed,
    generate_synthetic_clip,
    load_dataset,
    synthetic_dataset,
    write_clip,
    write_manifest,
)
from .model import GROUPS, TwoPathwayNet
from .training import (
    PHASE_MODE,
    REPORT_NAME,
    CheckpointError,
    ConfigError,
    RunState,
    evaluate,
    load_checkpoint,
    run_plan,
    save_checkpoint,
)

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 1, 2


class InputError(Exception):
    pass


def _threads(cfg: RunConfig):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(1 if cfg["deterministic"] else cfg["threads"])


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.check()
    return cfg


def _datasets(cfg: RunConfig):
    frames = cfg.model_config().frames
    if cfg["data.train"]:
        train = load_dataset(cfg["data.train"], frames)
    else:
        train = synthetic_dataset(cfg.synth_spec(), cfg["synth.per_class"], cfg["synth.seed"])
    if cfg["data.test"]:
        test = load_dataset(cfg["data.test"], frames)
    else:
        test = synthetic_dataset(cfg.synth_spec(), cfg["synth.test_per_class"], cfg["synth.test_seed"])
    return train, test


def _check_data(model: TwoPathwayNet, data: ClipDataset, what: str) -> None:
    c = model.config
    expected = (c.channels, c.frames, c.height, c.width)
    if tuple(data.clips.shape[1:]) != expected:
        raise ConfigError(f"{what} clips have shape (C, T, H, W) = {tuple(data.clips.shape[1:])}, "
                          f"the configured model expects {expected}")
    if len(data.labels) and int(data.labels.max()) >= c.classes:
        raise ConfigError(f"{what} has label {int(data.labels.max())} but the model has {c.classes} classes")


# ---------------------------------------------------------------- commands

def cmd_synth_gen(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg = cfg.set("synth.seed", args.seed)
    spec = cfg.synth_spec()
    out = Path(args.out or "synth")
    splits = [("train", cfg["synth.per_class"], cfg["synth.seed"]),
              ("test", cfg["synth.test_per_class"], cfg["synth.test_seed"])]
    for split, per_class, seed in splits:
        clip_dir = out / split
        clip_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for label in range(len(spec.classes)):
            for i in range(per_class):
                name = f"{split}/{spec.class_names[label]}_{i:04d}.futh"
                write_clip(out / name, generate_synthetic_clip(spec, label, clip_seed(seed, label, i)))
                entries.append((name, label))
        write_manifest(out / f"{split}.tsv", DatasetManifest(entries, spec.class_names, split))
        counts = Counter(label for _, label in entries)
        balance = ", ".join(f"{spec.class_names[k]}={counts[k]}" for k in range(len(spec.classes)))
        print(f"{split}: {len(entries)} clips ({balance}) -> {out / (split + '.tsv')}")
    return EXIT_OK


def _phases(arg: Optional[str]) -> List[str]:
    if not arg:
        return list(GROUPS)
    names = [p.strip() for p in arg.split(",") if p.strip()]
    bad = [p for p in names if p not in GROUPS]
    if bad:
        raise ConfigError(f"--phases: unknown phase(s) {bad}; expected a subset of {list(GROUPS)}")
    return names


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.seed is not None:
        cfg = cfg.set("seed", args.seed)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    plan = cfg.plan().only(_phases(args.phases))
    plan.validate()
    with _threads(cfg):
        train, test = _datasets(cfg)
        model = TwoPathwayNet(cfg.model_config(classes=len(train.class_names) or None))
        _check_data(model, train, "training set")
        _check_data(model, test, "test set")
        state = load_checkpoint(args.resume, model) if args.resume else RunState()
        (out / "config.effective").write_text(cfg.effective())

        def on_epoch(i: int, s: RunState) -> None:
            save_checkpoint(out / "last.ckpt", model, s)

        def on_phase(i: int, s: RunState) -> None:
            name = plan.phases[i].name
            (out / f"report-{REPORT_NAME[name]}.txt").write_text(s.reports[REPORT_NAME[name]])
            save_checkpoint(out / f"phase-{name}.ckpt", model, s)
            save_checkpoint(out / "last.ckpt", model, s)
            last = s.log[-1] if s.log else None
            summary = f"loss {last.loss:.4f}, train acc {last.accuracy:.3f}, " if last and last.phase == name else ""
            oa = s.reports[REPORT_NAME[name]].split("OA,", 1)[1].split("\n", 1)[0]
            print(f"phase {name}: {summary}test OA {float(oa):.3f}", flush=True)

        model, state = run_plan(plan, model, train, test, state, on_epoch, on_phase, cfg["prefetch"])
        log = "phase,epoch,loss,accuracy\n" + "".join(e.line() + "\n" for e in state.log)
        (out / "log.csv").write_text(log)
        save_checkpoint(out / "final.ckpt", model, state)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    if not args.checkpoint:
        raise InputError("eval needs --checkpoint")
    with _threads(cfg):
        manifest = args.manifest or cfg["data.test"]
        if manifest:
            data = load_dataset(manifest, cfg.model_config().frames)
        else:
            data = synthetic_dataset(cfg.synth_spec(), cfg["synth.test_per_class"], cfg["synth.test_seed"])
        model = TwoPathwayNet(cfg.model_config(classes=len(data.class_names) or None))
        _check_data(model, data, "evaluation set")
        load_checkpoint(args.checkpoint, model)
        report = evaluate(model, data, args.mode, cfg["eval.batch"])
    text = report.to_text()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=args.seed or 0)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_inflate_check(args) -> int:
    results = run_inflation_suite(seed=args.seed or 0)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_config(args) -> int:
    if args.keys:
        print("\n".join(describe_keys()))
    else:
        sys.stdout.write(_load_config(args).effective())
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twopath", description="Two-pathway video classifier toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value run config")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.set_defaults(fn=fn)
        return p

    p = add("synth-gen", cmd_synth_gen, "write the synthetic motion dataset (clip files + manifests)")
    p.add_argument("--out", help="output directory (default: synth)")

    p = add("train", cmd_train, "run the phased training plan")
    p.add_argument("--out", help="run directory (default: run)")
    p.add_argument("--phases", help="comma-separated subset of holistic,relation,fusion")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = add("eval", cmd_eval, "evaluate a checkpoint and print its report")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    p.add_argument("--manifest", help="clips to evaluate (default: data.test)")
    p.add_argument("--mode", choices=sorted(set(PHASE_MODE.values())), default="fused")
    p.add_argument("--out", help="also write the report to this file")

    add("gradcheck", cmd_gradcheck, "finite-difference check of every differentiable op")
    add("inflate-check", cmd_inflate_check, "check the 2D-to-3D kernel inflation invariants")

    p = add("config", cmd_config, "print the effective config")
    p.add_argument("--keys", action="store_true", help="list every key with its default")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InputError, ClipFormatError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
