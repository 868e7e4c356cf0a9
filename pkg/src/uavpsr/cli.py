"""Command line entry point: train, eval, compare, oracle and curves subcommands."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .apc import run_training
from .ddpg import ActorPolicy
from .evaluation import (ActorController, brute_force_placement, passive_baseline, run_policy,
                         smooth_curve, steady_state_score, transition_gain)
from .scenario import load_scenario, scenario_snapshot


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def cmd_train(args):
    cfg = load_scenario(args.scenario)
    res = run_training(cfg, workers=args.workers, episodes=args.episodes, seed=args.seed,
                       out_dir=args.out, checkpoint_metric=args.metric)
    _emit({"scenario": cfg.name, "episodes": len(res.episode_rewards),
           "updates": res.agent.n_updates, "final_smoothed": float(res.smoothed[-1]),
           "checkpoints": res.best_checkpoints(), "worker_failures": len(res.failures)})
    return 1 if res.failures else 0


def cmd_eval(args):
    cfg = load_scenario(args.scenario)
    policy = ActorPolicy.load(args.checkpoint)
    trace = run_policy(ActorController(policy), cfg, seed=args.seed, policy_id=str(args.checkpoint))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out / "steps.csv")
    trace.recorder().write_csv(out / "trajectory.csv")
    _emit({"scenario": cfg.name, "steps": len(trace), "served": trace.served.tolist(),
           "accumulated_us": float(trace.scores.sum()),
           "steady_state_us": steady_state_score(trace)})
    return 0


def cmd_compare(args):
    cfg = load_scenario(args.scenario)
    psr = run_policy(ActorController(ActorPolicy.load(args.psr)), cfg, seed=args.seed, policy_id="psr")
    post = ActorPolicy.load(args.post) if args.post else None
    base = passive_baseline(cfg, ActorPolicy.load(args.pre), post, seed=args.seed)
    report = transition_gain(psr, base, tuple(args.window) if args.window else None)
    _emit(report.as_dict())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        sp, sb = psr.padded_scores(), base.padded_scores()
        with open(out / "compare.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "us_psr", "us_baseline", "in_window"])
            for t in range(1, cfg.horizon.n_steps + 1):
                inside = report.window[0] <= t <= report.window[1]
                w.writerow([t, sp[t - 1], sb[t - 1], int(inside)])
        with open(out / "gain.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(report.as_dict()))
            w.writeheader()
            w.writerow(report.as_dict())
    return 0


def cmd_oracle(args):
    cfg = load_scenario(args.scenario)
    users = scenario_snapshot(cfg, args.t)
    n = cfg.n_uavs if args.uavs is None else args.uavs
    res = brute_force_placement(users, n, args.grid, cfg.area.size, cfg.constants,
                                cfg.area.unit_length, refine=not args.no_refine)
    _emit({"scenario": cfg.name, "t": args.t, "n_uavs": n, "grid": args.grid,
           "positions": np.round(res.positions, 6).tolist(), "served": res.served,
           "us_score": res.score, "evaluated": res.evaluated})
    return 0


def cmd_curves(args):
    log_dir = Path(args.log)
    with open(log_dir / "episodes.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    rewards = [float(r["reward"]) for r in rows]
    smoothed = smooth_curve(rewards, args.window)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["index", "reward", "smoothed"])
        for k, (r, s) in enumerate(zip(rewards, smoothed)):
            w.writerow([k, repr(r), repr(float(s))])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uavpsr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-episode progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a DDPG agent with parallel workers")
    t.add_argument("--scenario", required=True, help="scenario JSON path or bundled name")
    t.add_argument("--workers", type=int, default=None)
    t.add_argument("--episodes", type=int, default=None, help="episodes per worker")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--metric", choices=["smoothed", "raw"], default="smoothed",
                   help="episode-reward statistic ranking checkpoints")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy rollout of a checkpointed actor")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=None, help="reset seed (placement jitter)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="PSR agent against the passive baseline")
    c.add_argument("--psr", required=True)
    c.add_argument("--pre", required=True)
    c.add_argument("--post", default=None)
    c.add_argument("--scenario", required=True)
    c.add_argument("--window", type=int, nargs=2, default=None, metavar=("START", "END"))
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", default=None)
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle", help="grid-search the best static placement")
    o.add_argument("--scenario", required=True)
    o.add_argument("--uavs", type=int, default=None)
    o.add_argument("--grid", type=float, default=0.5)
    o.add_argument("--t", type=int, default=1, help="step whose user snapshot is used")
    o.add_argument("--no-refine", action="store_true")
    o.set_defaults(func=cmd_oracle)

    v = sub.add_parser("curves", help="smoothed training curve as CSV")
    v.add_argument("--log", required=True, help="training output directory")
    v.add_argument("--window", type=int, default=100)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_curves)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
