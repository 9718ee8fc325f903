"""Command-line entry point: ``dualmind <subcommand> [flags]``.

Config precedence, lowest to highest: preset, ``--config`` file, ``--set``
assignments, dedicated flags (``--seed``, ``--planner``, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import PRESETS, RunConfig, parse_assignments, preset
from .envs import list_envs_json
from .errors import DualMindError
from .reasoning import consistency_csv

log = logging.getLogger("dualmind")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="flat 'key = value' config file")
    p.add_argument("--preset", choices=sorted(PRESETS), default="reference",
                   help="base hyperparameters before the config file is applied")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config entry (table label or field name); repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", type=Path, default=Path("runs/latest"))
    p.add_argument("--replay-dir", type=Path, help="also persist the replay buffer here")
    p.add_argument("--planner", choices=("ac", "mpc"))
    p.add_argument("--mpc-iters", type=int)
    p.add_argument("--mpc-candidates", type=int)
    p.add_argument("--logic-weight", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="dualmind", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="run the training loop")
    p.add_argument("--episodes", type=int, help="training episodes (overrides the config)")
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")
    p.add_argument("--eval-episodes", type=int, default=0,
                   help="append a final evaluation row with this many episodes")

    p = sub.add_parser("eval", parents=[common], help="average return of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--random-baseline", action="store_true",
                   help="also report the uniform-random policy on the same seeds")

    p = sub.add_parser("consistency", parents=[common], help="logical-consistency table")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--horizons", default="10,30,50,100")
    p.add_argument("--depth", type=int, default=30)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("heatmap", parents=[common], help="logic-correlation matrix as CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--alpha", type=int, default=30)
    p.add_argument("--out", type=Path)

    sub.add_parser("envs", parents=[common], help="list built-in environments as JSON")

    p = sub.add_parser("export", parents=[common], help="export the metrics stream")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--metrics", type=Path, help="existing metrics .csv or .json")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=Path, required=True)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = preset(args.preset)
    if args.config is not None:
        cfg = RunConfig.from_text(args.config.read_text(), base=cfg)
    if args.set:
        cfg = cfg.with_overrides(parse_assignments(args.set, source="--set"))
    flags = {"seed": args.seed, "planner": args.planner, "mpc_iters": args.mpc_iters,
             "mpc_candidates": args.mpc_candidates, "logic_weight": args.logic_weight}
    episodes = getattr(args, "episodes", None)
    if args.command == "train" and episodes is not None:
        flags["train_episodes"] = episodes
    changes = {k: v for k, v in flags.items() if v is not None}
    return cfg.replace(**changes) if changes else cfg


def _load(args):
    from .harness import Trainer
    overrides = {}
    for key in ("planner", "mpc_iters", "mpc_candidates"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    return Trainer.load(args.checkpoint, overrides)


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        log.info("wrote %s", out)


def cmd_train(args) -> int:
    from .harness import Trainer, export_metrics
    if args.resume is not None:
        tr = Trainer.load(args.resume)
        if args.episodes is not None:
            tr.cfg = tr.cfg.replace(train_episodes=tr.episodes_done + args.episodes)
    else:
        tr = Trainer(resolve_config(args))
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(tr.cfg.to_text())

    def on_row(row):
        log.info("episode %d  updates %d  env_steps %d  pred %.3f  s2 %.3f",
                 tr.episodes_done, row["step"], row["env_steps"],
                 row["loss_pred"] or float("nan"), row["loss_s2"] or float("nan"))
        export_metrics(tr.metrics, out / "metrics.csv", "csv")

    tr.on_row = on_row
    tr.run()
    if args.eval_episodes:
        tr.evaluation_row(args.eval_episodes)
    export_metrics(tr.metrics, out / "metrics.csv", "csv")
    tr.save(out / "checkpoint.dmw")
    if args.replay_dir is not None:
        tr.replay.persist(args.replay_dir / "replay.bin")
    print(json.dumps({"checkpoint": str(out / "checkpoint.dmw"),
                      "episodes": tr.episodes_done, "updates": tr.updates,
                      "env_steps": tr.env_steps}))
    return 0


def cmd_eval(args) -> int:
    from .harness import evaluate, evaluate_random
    tr = _load(args)
    ev = evaluate(tr, args.episodes)
    result = {"episodes": args.episodes, "return_mean": ev.mean, "return_std": ev.std}
    if args.random_baseline:
        rb = evaluate_random(tr.cfg, args.episodes)
        result.update(random_mean=rb.mean, random_std=rb.std)
    print(json.dumps(result))
    return 0


def cmd_consistency(args) -> int:
    from .harness import consistency_table
    tr = _load(args)
    horizons = [int(h) for h in str(args.horizons).split(",") if h.strip()]
    rows = consistency_table(tr, horizons, args.depth)
    _write(consistency_csv(rows, tr.cfg.env), args.out)
    return 0


def cmd_heatmap(args) -> int:
    from .harness import heatmap
    tr = _load(args)
    m = heatmap(tr, args.alpha)
    lines = [",".join(f"{x:.6f}" for x in row) for row in np.atleast_2d(m)]
    _write("\n".join(lines) + "\n", args.out)
    return 0


def cmd_envs(args) -> int:
    print(list_envs_json())
    return 0


def cmd_export(args) -> int:
    from . import checkpoint as ckpt
    from .harness import export_metrics, load_metrics
    if args.checkpoint is not None:
        manifest, _ = ckpt.read(args.checkpoint)
        rows = manifest["metrics"]
    else:
        rows = load_metrics(args.metrics)
    export_metrics(rows, args.out, args.format)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "consistency": cmd_consistency,
            "heatmap": cmd_heatmap, "envs": cmd_envs, "export": cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except DualMindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
