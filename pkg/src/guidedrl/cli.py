"""Command-line entry points.

Subcommands mirror the workflow: pretrain a controller's value network,
train one (config, seed) run, evaluate a saved snapshot, aggregate seeds
into a mean curve, plot the curves.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import DEFAULT_TEST_SET_SEED, load_config
from .envs import ENV_NAMES, make_env, make_guide, make_test_set
from .guidance import PretrainConfig, pretrain_guide_q, save_guide_q
from .harness import (
    AGGREGATE_FILE,
    METRICS_FILE,
    aggregate_seeds,
    discover_seed_metrics,
    read_aggregate,
    run_experiment,
    write_aggregate,
)
from .nets import load_mlp
from .plots import emit_plots


def _cmd_pretrain_guide(args) -> int:
    env = make_env(args.env)
    controller = make_guide(args.env)
    cfg = PretrainConfig(method=args.method, seed=args.seed)
    guide_q, report = pretrain_guide_q(env, controller, args.steps, cfg)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    save_guide_q(guide_q, args.out)
    last = report.residual_history[-1] if report.residual_history else float("nan")
    print(f"wrote {args.out}")
    print(
        f"env steps {report.env_steps}, controller ever succeeded: "
        f"{report.guide_ever_succeeded}, final held-out residual {last:.4f}"
    )
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    rdir = run_experiment(config, args.seed, verbose=True)
    print(f"run complete: {rdir}")
    return 0


def _cmd_evaluate(args) -> int:
    actor = load_mlp(os.path.join(args.snapshot, "actor.mlp"))
    env = make_env(args.env)
    seeds = make_test_set(args.env, args.episodes, args.test_seed)
    wins = 0
    for seed in seeds:
        obs = env.reset(seed)
        while True:
            a = actor.forward(np.concatenate([obs.state, obs.desired_goal]))
            res = env.step(a)
            obs = res.observation
            if res.done:
                wins += int(res.success)
                break
    rate = wins / len(seeds)
    print(f"success_rate = {rate:.4f} over {len(seeds)} episodes")
    return 0


def _aggregate_one(variant_dir) -> str | None:
    paths = discover_seed_metrics(variant_dir)
    if not paths:
        return None
    curve = aggregate_seeds(paths)
    out = os.path.join(variant_dir, AGGREGATE_FILE)
    write_aggregate(curve, out)
    return out


def _cmd_aggregate(args) -> int:
    out = _aggregate_one(args.runs)
    if out is not None:
        print(f"wrote {out}")
        return 0
    wrote = []
    for name in sorted(os.listdir(args.runs)):
        child = os.path.join(args.runs, name)
        if os.path.isdir(child):
            out = _aggregate_one(child)
            if out is not None:
                wrote.append(out)
    if not wrote:
        print(f"no seed_*/{METRICS_FILE} found under {args.runs}", file=sys.stderr)
        return 1
    for path in wrote:
        print(f"wrote {path}")
    return 0


def _cmd_plot(args) -> int:
    by_env: dict[str, dict] = {}
    for name in sorted(os.listdir(args.curves)):
        child = os.path.join(args.curves, name)
        if not os.path.isdir(child) or "__" not in name:
            continue
        env, variant = name.split("__", 1)
        agg = os.path.join(child, AGGREGATE_FILE)
        if os.path.exists(agg):
            curve = read_aggregate(agg)
        else:
            paths = discover_seed_metrics(child)
            if not paths:
                continue
            curve = aggregate_seeds(paths)
        by_env.setdefault(env, {})[variant] = curve
    if not by_env:
        print(f"no curves found under {args.curves}", file=sys.stderr)
        return 1
    for env, curves in sorted(by_env.items()):
        for path in emit_plots(curves, env, args.out):
            print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guidedrl",
        description="goal-reaching RL accelerated by a scripted controller",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "pretrain-guide",
        help="fit a value network to a scripted controller's behaviour",
    )
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--steps", required=True, type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="sarsa", choices=("sarsa", "mc"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_pretrain_guide)

    p = sub.add_parser("train", help="train one (config, seed) run")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", required=True, type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="success rate of a saved snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--env", required=True, choices=ENV_NAMES)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--test-seed", type=int, default=DEFAULT_TEST_SET_SEED)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("aggregate", help="combine seed metrics into a curve")
    p.add_argument("--runs", required=True)
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("plot", help="render curve figures")
    p.add_argument("--curves", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
