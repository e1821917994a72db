"""Command line entry point: ``lidtwist <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .geometry import ConfigError

# shortcut flags and the config keys they set
SHORTCUTS = {
    "reward_set": "rewards.set",
    "shape": "lid.shape",
    "seed": "run.seed",
    "num_envs": "run.num_envs",
    "total_steps": "run.total_steps",
}


def _common(p: argparse.ArgumentParser, shortcuts=True):
    p.add_argument("--config", help="INI config file (defaults apply to missing keys)")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config key; repeatable",
    )
    if shortcuts:
        p.add_argument("--reward-set", choices=("tac2motion", "cpr_rr", "crr_rr", "baseline"))
        p.add_argument("--shape", choices=("cylinder", "square", "hexagon"))
        p.add_argument("--seed", type=int)
        p.add_argument("--num-envs", type=int)
        p.add_argument("--total-steps", type=int)
    p.add_argument("--out", help="output directory (or file for pretrain-encoder)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidtwist", description="Tactile lid-twisting RL toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a PPO policy")
    _common(p)

    p = sub.add_parser("eval", help="roll out a policy and report RS/RT/SR")
    _common(p)
    p.add_argument("--policy", choices=("checkpoint", "scripted", "random"), default="checkpoint")
    p.add_argument("--checkpoint", help="policy checkpoint (for --policy checkpoint)")
    p.add_argument("--episodes", type=int, help="number of episodes (default run.eval_episodes)")
    p.add_argument("--no-traces", action="store_true", help="skip writing per-episode trace files")

    p = sub.add_parser("ablate", help="train and evaluate every reward set")
    _common(p)
    p.add_argument("--shapes", default="cylinder", help="comma separated shapes")
    p.add_argument("--seeds", help="comma separated seeds (default run.seed)")
    p.add_argument("--sets", default="tac2motion,cpr_rr,crr_rr,baseline", help="comma separated reward sets")
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("pretrain-encoder", help="pretrain and freeze the tactile encoder")
    _common(p)

    p = sub.add_parser("export", help="recompute metric CSV/table from trace files")
    p.add_argument("run_dir")
    p.add_argument("--out")
    return parser


def load(args):
    from .config import load_config

    overrides = list(args.overrides)
    for attr, key in SHORTCUTS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def _csv_list(text, kind=str):
    return [kind(x.strip()) for x in text.split(",") if x.strip()]


def log(msg):
    print(msg, file=sys.stderr, flush=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args, log)
    except ConfigError as exc:
        print(f"lidtwist: config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"lidtwist: error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, log) -> int:
    from . import runner

    if args.command == "export":
        reps = runner.export(args.run_dir, args.out)
        from .metrics import format_table

        print(format_table(reps), end="")
        return 0

    cfg = load(args)
    out = Path(args.out) if args.out else None

    if args.command == "train":
        run = out or Path(cfg.run.out_dir)
        res = runner.train(cfg, run, log=log)
        last = res.rows[-1]
        print(f"trained {last['step']} steps; final RS {last['rs']:.6f}; checkpoint {res.checkpoint}")
        return 0

    if args.command == "eval":
        run = out or Path(cfg.run.out_dir) / "eval"
        runner.prepare_run_dir(run, cfg, "eval")
        _, reps = runner.evaluate(
            cfg, args.policy, run, episodes=args.episodes, checkpoint=args.checkpoint, traces=not args.no_traces
        )
        from .metrics import format_table

        print(format_table(reps), end="")
        return 0

    if args.command == "ablate":
        run = out or Path(cfg.run.out_dir) / "ablate"
        seeds = _csv_list(args.seeds, int) if args.seeds else None
        reps = runner.ablate(
            cfg, run, shapes=_csv_list(args.shapes), seeds=seeds, sets=_csv_list(args.sets), episodes=args.episodes, log=log
        )
        from .metrics import format_table

        print(format_table(reps), end="")
        return 0

    if args.command == "pretrain-encoder":
        from . import encoder as enc
        from .scripted import friction_dataset, pretrain_encoder

        target = out or Path(cfg.run.out_dir) / runner.ENCODER_FILE
        target.parent.mkdir(parents=True, exist_ok=True)
        runner.prepare_run_dir(target.parent, cfg, "pretrain-encoder")
        log(f"generating {cfg.encoder.pretrain_episodes} scripted episodes")
        result = pretrain_encoder(cfg)
        enc.save(result.params, target)
        # held-out check at the friction extremes
        lo, hi = cfg.randomization.friction_min, cfg.randomization.friction_max
        fr = [lo] * 8 + [hi] * 8
        windows, labels = friction_dataset(cfg, len(fr), cfg.encoder.pretrain_steps, fr, seed=cfg.encoder.seed + 7919)
        pred = result.predict(windows)
        mid = 0.5 * (lo + hi)
        acc = float(((pred > mid) == (labels > mid)).mean()) if len(labels) else float("nan")
        print(f"encoder {target} checksum {result.params.checksum()[:16]} loss {result.final_loss:.4f} held-out accuracy {acc:.3f}")
        return 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
