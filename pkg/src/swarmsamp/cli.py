"""Command-line entry point.

Subcommands: train, eval, sweep-team, sweep-comm, failure, adapt, export.
Every run is reproducible from (--config, --seed); outputs land in --out as
delimited tables, JSON summaries, PPM heatmaps, and matplotlib figures.
Log verbosity comes from the SWARMSAMP_LOG environment variable only.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import export as ex
from . import plots
from .config import AppConfig, load_config
from .env import RewardMap, field_spec_from_config, generate_gaussian_map, load_map
from .learn import train
from .metrics import compute_report
from .policy import load_checkpoint, save_checkpoint
from .runner import (BaselinePolicy, FailureSpec, evaluate, run_episode,
                     run_failure_suite, run_online_adaptation, sweep_comm_radius,
                     sweep_team_size, training_rollout)

logger = logging.getLogger(__name__)


def _setup_logging():
    level = os.environ.get("SWARMSAMP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _build_map(cfg: AppConfig, seed: int) -> RewardMap:
    consumed = cfg.train.sim.consumed_value
    if cfg.map.source == "gaussian":
        spec = field_spec_from_config(cfg.field_components, cfg.field_drift)
        return generate_gaussian_map(spec, cfg.map.height, cfg.map.width,
                                     seed=seed, consumed_value=consumed)
    if cfg.map.path is None:
        raise SystemExit(f"map source {cfg.map.source!r} needs a path")
    return load_map(cfg.map.path, cfg.map.source, consumed_value=consumed)


def _load_policy(args, cfg: AppConfig):
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    if getattr(args, "baseline", None):
        return BaselinePolicy(args.baseline)
    raise SystemExit("need --checkpoint or --baseline")


def _common(parser: argparse.ArgumentParser, checkpoint: bool = True):
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", required=True, help="output directory")
    if checkpoint:
        parser.add_argument("--checkpoint", default=None, help="policy checkpoint file")
        parser.add_argument("--baseline", choices=("random", "greedy"), default=None,
                            help="use a baseline action source instead of a checkpoint")
    parser.add_argument("--trials", type=int, default=None, help="override trial count")
    parser.add_argument("--mode", choices=("sample", "argmax"), default="argmax",
                        help="draw actions or take the most likely one")


def _prep(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.experiment.trials = args.trials
        cfg.experiment.validate(cfg.train.horizon)
    os.makedirs(args.out, exist_ok=True)
    return cfg


def cmd_train(args) -> int:
    cfg = _prep(args)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    reward_map = _build_map(cfg, cfg.train.seed)
    result = train(cfg.train, reward_map, out_dir=args.out, jobs=args.jobs)

    ckpt = os.path.join(args.out, "policy.ckpt")
    save_checkpoint(result.params, ckpt)
    ex.write_training_curve_csv(result.curve, os.path.join(args.out, "training_curve.csv"))
    ex.write_heatmap_ppm(reward_map.values, os.path.join(args.out, "training_map.ppm"))
    if len(result.curve):
        plots.training_curve_figure(result.curve, os.path.join(args.out, "training_curve.png"))
    print(f"trained {cfg.train.epochs} epochs -> {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = _prep(args)
    reward_map = _build_map(cfg, cfg.train.seed)
    policy = _load_policy(args, cfg)
    logs, reports = evaluate(cfg.train, policy, reward_map,
                             cfg.experiment.trials, cfg.train.seed, mode=args.mode)
    rows = [{"setting": {}, "trial": k, "log": log, "report": rep}
            for k, (log, rep) in enumerate(zip(logs, reports))]
    ex.export_bundle(rows, args.out, discount=cfg.train.discount)
    plots.render_report_figures(rows, args.out, "eval")

    if args.dump_features:
        data = training_rollout(cfg.train, policy, reward_map,
                                logs[0].positions[:, 0], (cfg.train.seed, 0)) \
            if not isinstance(policy, BaselinePolicy) else None
        if data is None:
            raise SystemExit("--dump-features needs a checkpoint policy")
        ex.write_features_csv(data.features, args.dump_features)
    print(f"evaluated {len(rows)} episodes -> {args.out}")
    return 0


def cmd_sweep_team(args) -> int:
    cfg = _prep(args)
    reward_map = _build_map(cfg, cfg.train.seed)
    policy = _load_policy(args, cfg)
    rows = sweep_team_size(cfg.train, policy, reward_map, cfg.experiment.trials,
                           cfg.experiment.team_sizes, cfg.train.seed, mode=args.mode)
    ex.export_bundle(rows, args.out, ("team_size", "map_side"), cfg.train.discount)
    plots.render_report_figures(rows, args.out, "sweep-team")
    print(f"swept team sizes {list(cfg.experiment.team_sizes)} -> {args.out}")
    return 0


def cmd_sweep_comm(args) -> int:
    cfg = _prep(args)
    reward_map = _build_map(cfg, cfg.train.seed)
    policy = _load_policy(args, cfg)
    rows = sweep_comm_radius(cfg.train, policy, reward_map, cfg.experiment.trials,
                             cfg.experiment.radius_percents, cfg.train.seed,
                             mode=args.mode)
    ex.export_bundle(rows, args.out, ("radius_percent", "radius_cells"),
                     cfg.train.discount)
    plots.render_report_figures(rows, args.out, "sweep-comm")
    print(f"swept radii {list(cfg.experiment.radius_percents)}%% -> {args.out}")
    return 0


def cmd_failure(args) -> int:
    cfg = _prep(args)
    reward_map = _build_map(cfg, cfg.train.seed)
    policy = _load_policy(args, cfg)
    kill = tuple(int(tok) for tok in args.kill.split(",")) if args.kill else ()
    rows = run_failure_suite(cfg.train, policy, reward_map, cfg.experiment.trials,
                             cfg.experiment.failure_step, cfg.train.seed,
                             mode=args.mode, kill=kill)
    ex.export_bundle(rows, args.out, ("scenario", "killed"), cfg.train.discount)
    plots.render_report_figures(rows, args.out, "failure")
    print(f"ran failure scenarios 1-4 at step {cfg.experiment.failure_step} -> {args.out}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _prep(args)
    policy = _load_policy(args, cfg)
    spec = field_spec_from_config(cfg.field_components, cfg.field_drift)
    if spec.drift <= 0:
        logger.warning("field drift is 0; the field will stay static")
    rows = run_online_adaptation(cfg.train, policy, spec, cfg.map.height,
                                 cfg.map.width, cfg.experiment.refresh_period,
                                 cfg.train.seed, mode=args.mode,
                                 trials=cfg.experiment.trials)
    ex.export_bundle(rows, args.out, ("refresh_period", "drift"), cfg.train.discount)
    plots.render_report_figures(rows, args.out, "adapt")
    for t, values in rows[0]["log"].field_snapshots:
        ex.write_heatmap_ppm(np.clip(values, 0.0, None),
                             os.path.join(args.out, f"field_t{t:04d}.ppm"))
    print(f"ran {len(rows)} adaptation episodes -> {args.out}")
    return 0


def cmd_export(args) -> int:
    rows = ex.load_episode_logs(args.logs)
    setting_cols = sorted({k for row in rows for k in row["setting"]})
    discount = rows[0]["log"].config.get("discount", 0.9) if rows else 0.9
    for row in rows:
        row["report"] = compute_report(row["log"], discount)
    ex.export_bundle(rows, args.out, setting_cols, discount)
    plots.render_report_figures(rows, args.out, "eval")
    print(f"re-exported {len(rows)} episodes -> {args.out}")
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="swarmsamp",
        description="Decentralized multi-robot adaptive sampling simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy on the configured map")
    _common(p, checkpoint=False)
    p.add_argument("--jobs", type=int, default=1, help="parallel rollout workers")
    p.add_argument("--epochs", type=int, default=None, help="override epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run evaluation episodes and export reports")
    _common(p)
    p.add_argument("--dump-features", default=None, metavar="PATH",
                   help="write the first episode's feature vectors as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-team", help="scale the team and map together")
    _common(p)
    p.set_defaults(func=cmd_sweep_team)

    p = sub.add_parser("sweep-comm", help="sweep the sensing/communication radius")
    _common(p)
    p.set_defaults(func=cmd_sweep_comm)

    p = sub.add_parser("failure", help="communication/robot failure scenarios")
    _common(p)
    p.add_argument("--kill", default=None, metavar="IDS",
                   help="comma-separated robot ids to kill at the failure step")
    p.set_defaults(func=cmd_failure)

    p = sub.add_parser("adapt", help="dynamic field with periodic prior refresh")
    _common(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("export", help="re-export saved episode logs")
    p.add_argument("--logs", required=True, help="episodes.json from a previous run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
