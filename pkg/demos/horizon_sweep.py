"""Horizon sweep on the reference scenario with V = sqrt(T), alpha = T.

Prints the seed-mean regret, the largest per-slot constraint total and the
scaled queue peak for each horizon, then the fitted log-log regret slope.
The default grid is small; the acceptance grid is
``--T 1000,4000,16000,64000 --seeds 10`` (a few minutes on one core).
"""

import argparse
import math

import numpy as np

from ocmdp import build_scenario, reference_config, sweep_horizons


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", default="500,1000,2000,4000")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--scenario-seed", type=int, default=7)
    args = ap.parse_args()

    scn = build_scenario(reference_config(seed=args.scenario_seed))
    Ts = [int(float(x)) for x in args.T.split(",")]
    res = sweep_horizons(scn, Ts, args.seeds)

    print("      T   regret  regret/T   max_i G/T  max|Q|/sqrt(T)")
    for r in res.rows:
        G = float(np.max(r.mean_violation))
        print(f"{r.T:7d} {r.mean_regret:8.2f} {r.mean_regret / r.T:9.5f} {G / r.T:11.5f}"
              f" {r.mean_max_q / math.sqrt(r.T):15.3f}")
    print(f"log-log slope of regret: {res.slope:.3f}")


if __name__ == "__main__":
    main()
