"""
Experiment orchestration: single runs, horizon sweeps, regret against the
stationary benchmark and the verification suite.

A run simulates the K systems for ``T`` slots. Per slot it records the
sampled state/action, the realized table values ``f_t(s_t, a_t)`` and
``g_{i,t}(s_t, a_t)``, the inner products of the realized tables with
``theta_t`` and the same inner products with the expected tables (the
"imaginary" series that the stationary analysis bounds).
"""

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import controller as ctl
from .errors import (
    ConfigurationError,
    InvariantViolation,
    ModelValidationError,
    NotUnichainError,
    OcmdpError,
    ScenarioError,
)
from .lp import best_stationary, perturbation_gap_check, theory_constants
from .mdp import (
    check_unichain,
    draw_from_row,
    mixing_contraction_check,
    policy_to_theta,
    pure_policies,
    pure_policy,
    stationary_distribution,
    policy_transition_matrix,
    uniform_policy,
)
from .projection import build_polyhedron, project_theta, project_theta_bruteforce
from .scenario import (
    SCHEMA_VERSION,
    Scenario,
    certify_slater,
    expected_f_path,
    expected_g,
    function_path,
    FunctionSample,
    load_scenario,
    mean_f,
    with_path_seed,
)

UNICHAIN_R_MAX = 8


@dataclass
class RunRecord:
    T: int
    seed: int
    V: float
    alpha: float
    scenario_hash: str
    states: np.ndarray
    actions: np.ndarray
    f_real: np.ndarray
    g_real: np.ndarray
    f_dot: np.ndarray
    g_dot: np.ndarray
    ef_dot: np.ndarray
    eg_dot: np.ndarray
    q_norm: np.ndarray
    step_norm: np.ndarray
    q_final: np.ndarray
    lemma: object = None

    @property
    def K(self):
        return self.states.shape[1]

    @property
    def m(self):
        return self.g_real.shape[2]

    @property
    def max_step(self):
        return self.step_norm.max(axis=1)

    @property
    def F_T(self):
        """Realized penalty over slots ``0..T-1``."""
        return float(self.f_real.sum())

    @property
    def F_T_from1(self):
        """Realized penalty over slots ``1..T-1`` (slot 0 excluded)."""
        return float(self.f_real[1:].sum())

    @property
    def G_T(self):
        return self.g_real.sum(axis=(0, 1))

    @property
    def G_T_from1(self):
        return self.g_real[1:].sum(axis=(0, 1))

    def summary(self):
        out = {
            "schema_version": SCHEMA_VERSION,
            "scenario_hash": self.scenario_hash,
            "T": self.T,
            "seed": self.seed,
            "V": self.V,
            "alpha": self.alpha,
            "slot_range": [0, self.T - 1],
            "F_T": self.F_T,
            "F_T_from_slot_1": self.F_T_from1,
            "G_T": self.G_T.tolist(),
            "G_T_from_slot_1": self.G_T_from1.tolist(),
            "imaginary_F_T": float(self.ef_dot.sum()),
            "imaginary_G_T": self.eg_dot.sum(axis=(0, 1)).tolist(),
            "max_q_norm": float(self.q_norm.max()),
            "final_queues": self.q_final.tolist(),
            "max_theta_step": float(self.max_step.max()),
        }
        if self.lemma is not None:
            out["lemma_checks"] = {
                "slots": self.lemma.slots,
                "violations": self.lemma.violations,
                "worst_slack": self.lemma.worst,
            }
        return out


def _as_scenario(scenario):
    if isinstance(scenario, Scenario):
        return scenario
    return load_scenario(scenario)


def run_experiment(scenario, T, seed, params=None, check=False, num_samples=20, strict=True):
    """Simulate the controller on ``scenario`` for ``T`` slots.

    ``scenario`` is a :class:`Scenario` or a directory written by ``gen``.
    With ``check=True`` every per-slot sample-path bound is verified and the
    first violation raises :class:`InvariantViolation` (``strict=False``
    collects counts instead).
    """
    scn = with_path_seed(_as_scenario(scenario), seed)
    if scn.certificate is None:
        raise ScenarioError("scenario has no Slater certificate")
    T = int(T)
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    params = params or ctl.ControllerParams.auto(T)
    K, m = scn.K, scn.m
    state = ctl.init_controller(scn.models, m, params)
    checker = None
    if check:
        checker = ctl.LemmaChecker(
            scn.models, m, scn.psi, params, num_samples=num_samples, seed=seed, strict=strict
        )

    rng = np.random.default_rng(np.random.SeedSequence([scn.config.seed & 0xFFFFFFFFFFFFFFFF, int(seed)]))
    s = [
        draw_from_row(stationary_distribution(policy_transition_matrix(md, uniform_policy(md))), rng.random())
        for md in scn.models
    ]
    u_act = rng.random((T, K))
    u_next = rng.random((T, K))

    f_path, g_path = function_path(scn, T)
    ef_path = expected_f_path(scn, T)
    eg = expected_g(scn)
    kernels = [md.kernel for md in scn.models]
    nA = [md.num_actions for md in scn.models]

    states = np.zeros((T, K), dtype=np.int64)
    actions = np.zeros((T, K), dtype=np.int64)
    f_real = np.zeros((T, K))
    g_real = np.zeros((T, K, m))
    f_dot = np.zeros((T, K))
    g_dot = np.zeros((T, K, m))
    ef_dot = np.zeros((T, K))
    eg_dot = np.zeros((T, K, m))
    q_norm = np.zeros(T)
    step = np.zeros((T, K))

    for t in range(T):
        q_norm[t] = math.sqrt(float(state.queues @ state.queues)) if m else 0.0
        acts = ctl.decide(state, s, u_act[t])
        fs = [f_path[k][t] for k in range(K)]
        gs = [g_path[k][t] for k in range(K)]
        for k in range(K):
            th = state.theta[k]
            idx = s[k] * nA[k] + acts[k]
            states[t, k] = s[k]
            actions[t, k] = acts[k]
            f_real[t, k] = fs[k][idx]
            f_dot[t, k] = fs[k] @ th
            ef_dot[t, k] = ef_path[k][t] @ th
            if m:
                g_real[t, k] = gs[k][:, idx]
                g_dot[t, k] = gs[k] @ th
                eg_dot[t, k] = eg[k] @ th
            step[t, k] = np.linalg.norm(th - state.theta_prev[k]) if t else 0.0
        info = ctl.observe(state, FunctionSample(t, fs, gs))
        if checker is not None and info is not None:
            checker.check(info)
        s = [draw_from_row(kernels[k][acts[k], s[k]], u_next[t, k]) for k in range(K)]

    return RunRecord(
        T=T, seed=int(seed), V=params.V, alpha=params.alpha, scenario_hash=scn.digest(),
        states=states, actions=actions, f_real=f_real, g_real=g_real, f_dot=f_dot,
        g_dot=g_dot, ef_dot=ef_dot, eg_dot=eg_dot, q_norm=q_norm, step_norm=step,
        q_final=state.queues.copy(), lemma=None if checker is None else checker.report,
    )


# ---------------------------------------------------------------- output


def record_csv(record):
    """Long-format CSV text: one row per ``(t, k)`` with running-sum columns."""
    m = record.m
    head = ["t", "k", "s", "a", "f_real"] + [f"g_real_{i + 1}" for i in range(m)]
    head += ["f_dot_theta"] + [f"g_dot_theta_{i + 1}" for i in range(m)]
    head += ["q_norm", "theta_step_norm", "cum_f_real"] + [f"cum_g_real_{i + 1}" for i in range(m)]
    head += ["cum_f_dot_theta"] + [f"cum_g_dot_theta_{i + 1}" for i in range(m)]
    T, K = record.states.shape
    f_real = record.f_real.reshape(-1)
    g_real = record.g_real.reshape(T * K, m)
    f_dot = record.f_dot.reshape(-1)
    g_dot = record.g_dot.reshape(T * K, m)
    cols = [
        np.repeat(np.arange(T), K),
        np.tile(np.arange(K), T),
        record.states.reshape(-1),
        record.actions.reshape(-1),
    ]
    floats = [f_real, *g_real.T, f_dot, *g_dot.T, np.repeat(record.q_norm, K),
              record.step_norm.reshape(-1), np.cumsum(f_real), *np.cumsum(g_real, axis=0).T,
              np.cumsum(f_dot), *np.cumsum(g_dot, axis=0).T]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    ints = np.column_stack(cols).tolist()
    fl = np.column_stack(floats).tolist()
    for a, b in zip(ints, fl):
        w.writerow(a + [repr(x) for x in b])
    return buf.getvalue()


def write_record(record, out_dir, stem=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"run_T{record.T}_seed{record.seed}"
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    csv_path.write_bytes(record_csv(record).encode("utf-8"))
    json_path.write_text(json.dumps(record.summary(), indent=2, sort_keys=True))
    return csv_path, json_path


# ---------------------------------------------------------------- regret


@dataclass
class RegretReport:
    T: int
    benchmark_value: float
    imaginary: float
    realized: float
    violation_imaginary: np.ndarray
    violation_realized: np.ndarray

    @property
    def positive_violation(self):
        return np.maximum(self.violation_realized, 0.0)

    @property
    def positive_violation_imaginary(self):
        return np.maximum(self.violation_imaginary, 0.0)


def benchmark(scenario, T, seed=None):
    """Best stationary benchmark for horizon ``T`` (tagged with the scenario hash).

    When the penalty means come from the realized path rather than the
    generator, ``seed`` selects the path and must match the run's seed.
    """
    scn = with_path_seed(_as_scenario(scenario), seed)
    means, source = mean_f(scn, T)
    sol = best_stationary(scn.models, means, expected_g(scn), scn.m)
    sol.meta.update(scenario_hash=scn.digest(), T=int(T), mean_f_source=source,
                    path_seed=None if source == "generator" else seed)
    return sol


def compute_regret(record, baseline):
    """Imaginary and realized regret of ``record`` against ``baseline``.

    Raises
    ------
    ConfigurationError
        If the baseline was computed for a different scenario or horizon.
    """
    if baseline.meta.get("scenario_hash") != record.scenario_hash:
        raise ConfigurationError("baseline and run come from different scenarios")
    if baseline.meta.get("T", record.T) != record.T:
        raise ConfigurationError("baseline horizon differs from the run horizon")
    if baseline.meta.get("mean_f_source") == "path" and baseline.meta.get("path_seed") != record.seed:
        raise ConfigurationError("baseline was averaged over a different function path")
    ref = record.T * baseline.value
    return RegretReport(
        T=record.T,
        benchmark_value=float(baseline.value),
        imaginary=float(record.ef_dot.sum() - ref),
        realized=float(record.f_real.sum() - ref),
        violation_imaginary=record.eg_dot.sum(axis=(0, 1)),
        violation_realized=record.g_real.sum(axis=(0, 1)),
    )


# ---------------------------------------------------------------- sweeps


def fit_slope(Ts, regrets):
    """Least-squares slope of ``log(max(regret, 1))`` against ``log T``."""
    x = np.log(np.asarray(Ts, float))
    y = np.log(np.maximum(np.asarray(regrets, float), 1.0))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class SweepRow:
    T: int
    seeds: list
    regret: list
    realized_regret: list
    violation: list
    violation_realized: list
    max_q: list
    constants: dict

    @property
    def mean_regret(self):
        return float(np.mean(self.regret))

    @property
    def mean_violation(self):
        return np.mean(np.array(self.violation), axis=0)

    @property
    def mean_max_q(self):
        return float(np.mean(self.max_q))

    def to_dict(self):
        return {
            "T": self.T,
            "seeds": self.seeds,
            "mean_regret": self.mean_regret,
            "mean_realized_regret": float(np.mean(self.realized_regret)),
            "mean_G": self.mean_violation.tolist(),
            "mean_G_realized": np.mean(np.array(self.violation_realized), axis=0).tolist(),
            "mean_max_q_norm": self.mean_max_q,
            "regret": self.regret,
            "G": [list(v) for v in self.violation],
            "max_q_norm": self.max_q,
            "constants": self.constants,
        }


@dataclass
class SweepResult:
    rows: list
    slope: float
    scenario_hash: str = ""
    eta: float = math.nan
    partial: bool = False

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario_hash": self.scenario_hash,
            "eta": self.eta,
            "slope": self.slope,
            "partial": self.partial,
            "rows": [r.to_dict() for r in self.rows],
        }


def _sweep_job(args):
    scn, T, seed = args
    rec = run_experiment(scn, T, seed)
    reg = compute_regret(rec, benchmark(scn, T, seed))
    return T, seed, reg, float(rec.q_norm.max())


def worker_count(jobs):
    env = os.environ.get("OCMDP_WORKERS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, jobs))


def seed_list(seeds):
    return list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]


def sweep_horizons(scenario, T_list, seeds, workers=None, min_horizons=3, min_seeds=5, progress=None):
    """Run every ``(T, seed)`` pair with ``V = sqrt(T)``, ``alpha = T``.

    ``seeds`` is a count or an explicit list. Results are folded in
    ``(T, seed)`` order regardless of completion order. If a run fails, the
    completed horizons are returned with ``partial=True`` attached to the
    raised error as ``exc.partial``.
    """
    scn = _as_scenario(scenario)
    Ts = [int(T) for T in T_list]
    seeds = seed_list(seeds)
    if len(Ts) < min_horizons or len(seeds) < min_seeds:
        raise ConfigurationError(f"need >= {min_horizons} horizons and >= {min_seeds} seeds")
    if any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ConfigurationError("horizons must be strictly increasing")
    jobs = [(T, sd) for T in Ts for sd in seeds]
    n = worker_count(len(jobs)) if workers is None else max(1, int(workers))
    light = replace(scn, _blocks={}, _regime_counts={})
    results = {}
    try:
        if n == 1:
            for T, sd in jobs:
                out = _sweep_job((scn, T, sd))
                results[(T, sd)] = out
                if progress:
                    progress(T, sd)
        else:
            with ProcessPoolExecutor(max_workers=n) as pool:
                for out in pool.map(_sweep_job, [(light, T, sd) for T, sd in jobs]):
                    results[(out[0], out[1])] = out
                    if progress:
                        progress(out[0], out[1])
    except OcmdpError as exc:
        exc.partial = _fold(scn, Ts, seeds, results, partial=True)
        raise
    return _fold(scn, Ts, seeds, results)


def _fold(scn, Ts, seeds, results, partial=False):
    eta = scn.certificate.eta
    rows = []
    for T in Ts:
        if not all((T, sd) in results for sd in seeds):
            continue
        outs = [results[(T, sd)] for sd in seeds]
        consts = {}
        if scn.m and math.isfinite(eta):
            consts = theory_constants(scn.m, scn.K, scn.psi, eta, T, scn.sizes).to_dict()
        rows.append(SweepRow(
            T=T,
            seeds=list(seeds),
            regret=[o[2].imaginary for o in outs],
            realized_regret=[o[2].realized for o in outs],
            violation=[o[2].violation_imaginary.tolist() for o in outs],
            violation_realized=[o[2].violation_realized.tolist() for o in outs],
            max_q=[o[3] for o in outs],
            constants=consts,
        ))
    slope = fit_slope([r.T for r in rows], [r.mean_regret for r in rows]) if len(rows) >= 2 else math.nan
    return SweepResult(rows=rows, slope=slope, scenario_hash=scn.digest(),
                       eta=float(eta), partial=partial)


# ---------------------------------------------------------------- verification


@dataclass
class CheckResult:
    module: str
    name: str
    ok: bool
    detail: str = ""


@dataclass
class VerifyReport:
    results: list = field(default_factory=list)

    @property
    def ok(self):
        return bool(self.results) and all(r.ok for r in self.results)

    def add(self, module, name, ok, detail=""):
        self.results.append(CheckResult(module, name, bool(ok), detail))

    def failures(self):
        return [r for r in self.results if not r.ok]

    def lines(self):
        return [f"{'PASS' if r.ok else 'FAIL'} {r.module}/{r.name}: {r.detail}" for r in self.results]


def estimate_r1(models):
    """Smallest ``r`` making every length-``r`` pure-policy product positive, maximized over systems."""
    return max(check_unichain(md, UNICHAIN_R_MAX).r for md in models)


def verify_suite(scenario_dir, T=1000, seed=0, trials=1000, projection_trials=50):
    """Run every module-level check on a scenario; ``report.ok`` iff all pass."""
    rep = VerifyReport()
    try:
        scn = _as_scenario(scenario_dir)
    except ModelValidationError as exc:
        rep.add("mdp-core", "kernel-row-sum", False, str(exc))
        return rep
    except (OSError, ValueError, KeyError) as exc:
        rep.add("scenario-env", "load", False, str(exc))
        return rep
    rng = np.random.default_rng(seed)

    try:
        cert = certify_slater(scn.config, scn.models, expected_g(scn))
        rep.add("scenario-env", "slater", True, f"eta = {cert.eta:.6g}")
    except ScenarioError as exc:
        rep.add("scenario-env", "slater", False, str(exc))
        return rep
    scn.certificate = cert

    for k, md in enumerate(scn.models):
        try:
            est = check_unichain(md, UNICHAIN_R_MAX)
        except NotUnichainError as exc:
            rep.add("mdp-core", f"unichain[{k}]", False, f"{exc}; witness {exc.witness}")
            return rep
        ratio = mixing_contraction_check(md, est, trials, rng_seed=[seed, k])
        bound = est.contraction_factor
        rep.add("mdp-core", f"mixing-contraction[{k}]", ratio <= bound + 1e-12,
                f"ratio {ratio:.6g} <= {bound:.6g}")

    worst = 0.0
    for k, md in enumerate(scn.models):
        spec = build_polyhedron(md)
        if spec.dim > 12:
            continue
        for _ in range(projection_trials):
            y = rng.normal(scale=rng.choice([0.3, 1.0, 3.0]), size=spec.dim)
            x = project_theta(spec, y).point
            worst = max(worst, float(np.linalg.norm(x - project_theta_bruteforce(spec, y))))
    rep.add("polytope-projection", "oracle", worst <= 1e-6, f"max distance {worst:.3g}")

    try:
        rec = run_experiment(scn, T, seed, check=True, strict=False)
        bad = {k: v for k, v in rec.lemma.violations.items() if v}
        rep.add("ocmdp-controller", "sample-path-bounds", not bad,
                f"{rec.lemma.slots} slots, violations {bad or 'none'}")
    except OcmdpError as exc:
        rep.add("ocmdp-controller", "run", False, str(exc))

    means, _ = mean_f(scn, T)
    eg = expected_g(scn)
    free = best_stationary(scn.models, means, eg, 0)
    enum = sum(
        min(float(means[k] @ policy_to_theta(md, pure_policy(md, acts))) for acts in pure_policies(md))
        for k, md in enumerate(scn.models)
    )
    rep.add("baseline-lp", "pure-policy-optimum", abs(free.value - enum) <= 1e-9,
            f"lp {free.value:.12g} vs enumeration {enum:.12g}")

    if scn.m:
        sol = best_stationary(scn.models, means, eg, scn.m)
        lp = sol.meta["lp"]
        sizes = [md.size for md in scn.models]
        worst_gap = math.inf
        for _ in range(100):
            pts = []
            for md in scn.models:
                pol = rng.dirichlet(np.full(md.num_actions, 0.5), size=md.num_states)
                pts.append(policy_to_theta(md, pol))
            x = np.concatenate(pts)
            lag = lp.c @ x + sol.duals @ (lp.G @ x - lp.h)
            worst_gap = min(worst_gap, lag - sol.value)
        rep.add("baseline-lp", "lagrangian-inequality", worst_gap >= -1e-6, f"min slack {worst_gap:.3g}")

        r1 = estimate_r1(scn.models)
        c1 = 2 * math.e * r1
        slack = c1 * scn.K * scn.psi / T
        try:
            gap = perturbation_gap_check(scn.models, means, eg, cert.eta, slack, psi=scn.psi)
            rep.add("baseline-lp", "perturbation-gap", True,
                    f"gap {gap.gap:.3g} <= {gap.bound:.3g} (r1 = {r1})")
        except InvariantViolation as exc:
            rep.add("baseline-lp", "perturbation-gap", False, str(exc))
    return rep
