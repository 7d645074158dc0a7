"""Sign of the imaginary regret across scenario seeds.

The benchmark is the best stationary policy that meets every constraint on
average. The controller only has to drive its constraint totals to o(T), so
early on it can run its queues up and spend constraint slack it has not yet
paid back. Slack is priced by the benchmark multipliers, so on many
instances the regret comes out negative at moderate T while the violation
total is positive; the sign is a property of the instance, not of the
controller. This script prints, per scenario seed, the summed benchmark
multipliers next to the seed-mean regret and violation.
"""

import argparse

import numpy as np

from ocmdp import benchmark, build_scenario, compute_regret, reference_config, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=4000)
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--scenarios", default="0,1,2,3,7")
    args = ap.parse_args()

    print("scenario  sum(duals)    regret   max_i G_T")
    for s in (int(x) for x in args.scenarios.split(",")):
        scn = build_scenario(reference_config(seed=s))
        reg, viol = [], []
        for seed in range(args.runs):
            r = compute_regret(run_experiment(scn, args.T, seed), benchmark(scn, args.T, seed))
            reg.append(r.imaginary)
            viol.append(float(np.max(r.violation_imaginary)))
        duals = benchmark(scn, args.T).duals
        print(f"{s:8d} {float(np.sum(duals)):11.3f} {np.mean(reg):9.2f} {np.mean(viol):11.2f}")


if __name__ == "__main__":
    main()
