"""Compare the five baseline eviction policies on the desk scenario.

    python demos/policy_sweep.py --seeds 3

Prints the seed-averaged final hit rate, response time and QoS for every
(policy, cache size) pair.  Ten seeds take about ten minutes.
"""
from __future__ import annotations

import argparse
import statistics

from vedge import desk_scenario, run
from vedge.scenario import DESK_CACHE_SIZES

POLICIES = ("lfu", "lru", "clock", "fifo", "random")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--horizon", type=int, default=None, help="override the tick count")
    args = ap.parse_args()

    base = desk_scenario()
    if args.horizon is not None:
        base = base.with_updates(clock={"horizon": args.horizon})
    print(f"{'size':>7}  {'policy':<7} {'hit %':>7} {'resp s':>7} {'qos':>7}")
    for cap in DESK_CACHE_SIZES:
        for pol in POLICIES:
            sc = base.with_updates(cache={"policy": pol, "rsu_capacity": cap})
            frames = [run(sc, s).final for s in range(args.seeds)]
            hit = statistics.fmean(f.hit_rate for f in frames)
            resp = statistics.fmean(f.avg_response_time or 0.0 for f in frames)
            qos = statistics.fmean(f.qos or 0.0 for f in frames)
            print(f"{cap / 1e6:5.0f}MB  {pol:<7} {100 * hit:7.2f} {resp:7.3f} {qos:7.4f}")


if __name__ == "__main__":
    main()
