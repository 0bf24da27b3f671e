"""How much does coarse stepping change the answer, and what does it save?

    python demos/stepping.py --seeds 5 --steps 1 5 10

Runs the desk scenario at each stepping value with matched seeds and
prints the final hit rate next to the wall time.
"""
from __future__ import annotations

import argparse

from vedge import desk_scenario, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--steps", type=int, nargs="+", default=[1, 10])
    args = ap.parse_args()

    base = desk_scenario()
    print("seed  " + "  ".join(f"step {d:>2}: hit%  wall" for d in args.steps))
    for seed in range(args.seeds):
        cells = []
        for d in args.steps:
            rep = run(base.with_updates(clock={"stepping": d}), seed)
            cells.append(f"{100 * rep.final.hit_rate:14.2f} {rep.wall_seconds:5.1f}s")
        print(f"{seed:>4}  " + "  ".join(cells))


if __name__ == "__main__":
    main()
