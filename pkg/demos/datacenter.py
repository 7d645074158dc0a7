"""Server sleep-state scheduling as weakly coupled MDPs.

Each server is ACTIVE, IDLE or in SETUP (warm-up that completes with some
probability per slot). Keeping a server active costs the current electricity
price; the single shared constraint asks the active servers to cover the
arrival rate on average. The controller is compared with the best stationary
schedule and with keeping every server on.
"""

import argparse

import numpy as np

from ocmdp import benchmark, compute_regret, run_experiment
from ocmdp.mdp import policy_to_theta, pure_policy
from ocmdp.scenario import ACTIVE, datacenter_scenario, mean_f, with_path_seed


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--servers", type=int, default=3)
    ap.add_argument("--arrival-rate", type=float, default=1.0)
    ap.add_argument("--price-amplitude", type=float, default=0.3)
    ap.add_argument("--T", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scn = datacenter_scenario(args.servers, args.price_amplitude, args.arrival_rate,
                              np.random.default_rng(args.seed), seed=args.seed)
    rates = scn.config.datacenter["service_rate"]
    print(f"{args.servers} servers, arrival rate {args.arrival_rate}, service rates {np.round(rates, 3)}")
    print(f"Slater margin eta = {scn.certificate.eta:.3f}")

    rec = run_experiment(scn, args.T, args.seed)
    reg = compute_regret(rec, benchmark(scn, args.T, args.seed))

    # every server told to stay on (or wake up); setup has no real choice
    means, _ = mean_f(with_path_seed(scn, args.seed), args.T)
    always_on = sum(float(mu @ policy_to_theta(md, pure_policy(md, [0, 0, 0])))
                    for md, mu in zip(scn.models, means))

    active = (rec.states == ACTIVE).mean(axis=0)
    print(f"fraction of slots active per server  {np.round(active, 3)}")
    print(f"energy cost per slot (controller)    {rec.F_T / args.T:.4f}")
    print(f"best stationary cost per slot        {reg.benchmark_value:.4f}")
    print(f"always-on cost per slot              {always_on:.4f}")
    print(f"unmet demand per slot (G_T / T)      {float(rec.G_T[0]) / args.T:+.4f}")


if __name__ == "__main__":
    main()
