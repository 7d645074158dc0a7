"""Command-line entry point: ``ocmdp {gen,run,sweep,baseline,check}``."""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .controller import ControllerParams
from .errors import InvariantViolation, OcmdpError
from .harness import (
    benchmark,
    compute_regret,
    estimate_r1,
    run_experiment,
    sweep_horizons,
    verify_suite,
    write_record,
)
from .lp import theory_constants
from .scenario import (
    SCHEMA_VERSION,
    ScenarioConfig,
    build_scenario,
    load_price_trace,
    load_scenario,
    save_scenario,
)


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text)
    print(text)


def cmd_gen(args):
    cfg = ScenarioConfig.from_dict(json.loads(Path(args.config).read_text()))
    trace = load_price_trace(args.price_trace) if args.price_trace else None
    scn = build_scenario(cfg, price_trace=trace)
    out = save_scenario(scn, args.out)
    print(f"wrote scenario {scn.digest()} to {out} (eta = {scn.certificate.eta:.6g})")
    return 0


def cmd_run(args):
    scn = load_scenario(args.scenario)
    params = None
    if args.V is not None or args.alpha is not None:
        auto = ControllerParams.auto(args.T)
        params = ControllerParams(V=args.V or auto.V, alpha=args.alpha or auto.alpha, T=args.T)
    try:
        rec = run_experiment(scn, args.T, args.seed, params=params, check=args.check)
    except InvariantViolation as exc:
        print(f"invariant {exc.name} failed at slot {exc.slot}: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path(args.scenario) / "runs"
    csv_path, json_path = write_record(rec, out)
    summary = rec.summary()
    summary["regret"] = _regret_dict(compute_regret(rec, benchmark(scn, args.T, args.seed)))
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote {csv_path} and {json_path}")
    return 0


def _regret_dict(reg):
    return {
        "benchmark_value": reg.benchmark_value,
        "imaginary": reg.imaginary,
        "realized": reg.realized,
        "G_imaginary": reg.violation_imaginary.tolist(),
        "G_realized": reg.violation_realized.tolist(),
        "violation": reg.positive_violation.tolist(),
    }


def cmd_sweep(args):
    Ts = [int(float(x)) for x in args.T.split(",")]

    def progress(T, seed):
        print(f"done T={T} seed={seed}", file=sys.stderr)

    try:
        res = sweep_horizons(args.scenario, Ts, args.seeds, workers=args.workers, progress=progress)
    except OcmdpError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None and args.out:
            _dump(partial.to_dict(), args.out)
        print(f"sweep aborted: {exc}", file=sys.stderr)
        return 2
    _dump(res.to_dict(), args.out)
    return 0


def cmd_baseline(args):
    scn = load_scenario(args.scenario)
    T = args.T
    sol = benchmark(scn, T)
    eta = scn.certificate.eta if scn.certificate else math.nan
    out = {
        "schema_version": SCHEMA_VERSION,
        "scenario_hash": scn.digest(),
        "T": T,
        "mean_f_source": sol.meta["mean_f_source"],
        "value": sol.value,
        "theta": [np.asarray(t).tolist() for t in sol.meta["thetas"]],
        "duals": np.asarray(sol.duals).tolist(),
        "eta": eta if math.isfinite(eta) else "inf",
        "r1": estimate_r1(scn.models),
    }
    if scn.m and math.isfinite(eta):
        out["constants"] = theory_constants(scn.m, scn.K, scn.psi, eta, T, scn.sizes).to_dict()
    _dump(out, args.out or Path(args.scenario) / "baseline.json")
    return 0


def cmd_check(args):
    rep = verify_suite(args.scenario, T=args.T, seed=args.seed)
    for line in rep.lines():
        print(line)
    print("ALL PASS" if rep.ok else f"{len(rep.failures())} FAILED")
    return 0 if rep.ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="ocmdp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a certified scenario directory")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--price-trace", help="CSV of (slot, price) rows for the data-center scenario")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="simulate one run and write CSV + JSON")
    r.add_argument("--scenario", required=True)
    r.add_argument("--T", type=int, required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--V", type=float)
    r.add_argument("--alpha", type=float)
    r.add_argument("--check", action="store_true", help="verify per-slot bounds inline")
    r.add_argument("--out", help="output directory (default: <scenario>/runs)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="horizon sweep with V = sqrt(T), alpha = T")
    s.add_argument("--scenario", required=True)
    s.add_argument("--T", required=True, help="comma-separated horizons")
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--workers", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("baseline", help="solve the stationary benchmark LP")
    b.add_argument("--scenario", required=True)
    b.add_argument("--T", type=int, default=10000)
    b.add_argument("--out")
    b.set_defaults(func=cmd_baseline)

    c = sub.add_parser("check", help="run the verification suite")
    c.add_argument("--scenario", required=True)
    c.add_argument("--T", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OcmdpError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
