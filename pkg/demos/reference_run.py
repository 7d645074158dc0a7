"""One controller run on the reference scenario.

Prints the benchmark value, both regret forms, the per-constraint totals and
how the queue norm evolves. With ``--check`` every per-slot bound is verified
along the way.

    python3 demos/reference_run.py --T 10000 --seed 0 --check
"""

import argparse
import math

import numpy as np

from ocmdp import benchmark, build_scenario, compute_regret, reference_config, run_experiment
from ocmdp.lp import theory_constants


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()

    scn = build_scenario(reference_config())
    eta = scn.certificate.eta
    print(f"scenario {scn.digest()}: K={scn.K}, m={scn.m}, sizes={scn.sizes}, eta={eta:.3f}")

    rec = run_experiment(scn, args.T, args.seed, check=args.check, strict=False)
    base = benchmark(scn, args.T, args.seed)
    reg = compute_regret(rec, base)
    tc = theory_constants(scn.m, scn.K, scn.psi, eta, args.T, scn.sizes)

    print(f"benchmark value per slot   {base.value:.5f}  (duals {np.round(base.duals, 4)})")
    print(f"imaginary regret           {reg.imaginary:10.3f}   ceiling {tc.regret_bound:.0f}")
    print(f"realized regret            {reg.realized:10.3f}")
    print(f"G_T (imaginary)            {np.round(reg.violation_imaginary, 3)}")
    print(f"G_T (realized)             {np.round(reg.violation_realized, 3)}")

    print("\n      t   |Q(t)|   |Q(t)|/sqrt(t)")
    for t in np.unique(np.geomspace(10, args.T - 1, 8).astype(int)):
        print(f"{t:7d} {rec.q_norm[t]:8.3f} {rec.q_norm[t] / math.sqrt(t):10.3f}")
    print(f"queue constant C = {tc.C:.1f}")

    if rec.lemma is not None:
        bad = {k: v for k, v in rec.lemma.violations.items() if v}
        print(f"\nper-slot checks over {rec.lemma.slots} slots: {bad or 'no violations'}")


if __name__ == "__main__":
    main()
