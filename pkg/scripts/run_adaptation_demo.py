#!/usr/bin/env python3
"""Train the full pipeline and a no-adaptation baseline, then compare.

Prints a per-domain mAP table (all non-source domains) for both models
on the default synthetic world.  Takes a couple of minutes at the desk
schedule.

Usage: python scripts/run_adaptation_demo.py [--seed N] [--fast]
"""

import argparse
import dataclasses
import sys
import time

from upre.config import Stage1Config, Stage2Config, Toggles, TrainConfig
from upre.pipeline import run_full
from upre.world import WorldConfig, build_stub, generate_world


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--world-seed", type=int, default=0)
    parser.add_argument("--fast", action="store_true", help="quarter-length schedule")
    args = parser.parse_args()

    cfg = TrainConfig(seed=args.seed)
    if args.fast:
        cfg = dataclasses.replace(
            cfg,
            stage1=Stage1Config(iters=125, lr=cfg.stage1.lr, lr_drop_iter=100),
            stage2=Stage2Config(iters=500, lr=cfg.stage2.lr, lr_drop_iter=400),
        )
    world = generate_world(WorldConfig(), args.world_seed)
    stub = build_stub(world.config)
    domains = world.target_domains()

    results = {}
    for name, run_cfg in (
        ("baseline", dataclasses.replace(cfg, toggles=Toggles(False, False, False, False))),
        ("adapted", cfg),
    ):
        t0 = time.perf_counter()
        res = run_full(run_cfg, world, stub, eval_domains=domains)
        results[name] = {d: res.map_for(d) for d in domains}
        print(f"[{name}] done in {time.perf_counter() - t0:.0f}s", file=sys.stderr)

    width = max(len(d) for d in domains)
    print(f"{'domain':<{width}}  baseline  adapted")
    for d in domains:
        print(f"{d:<{width}}  {results['baseline'][d]:8.3f}  {results['adapted'][d]:7.3f}")
    mean_b = sum(results["baseline"].values()) / len(domains)
    mean_a = sum(results["adapted"].values()) / len(domains)
    print(f"{'mean':<{width}}  {mean_b:8.3f}  {mean_a:7.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
