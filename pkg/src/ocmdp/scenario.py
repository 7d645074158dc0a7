"""
Weakly coupled MDP instances and their penalty / constraint function paths.

A :class:`Scenario` bundles the per-system transition models with the tables
that drive the function processes. Every function value is a pure function
of ``(config.seed, path_seed, t)``: the path is generated in fixed-size
blocks, each from its own seeded stream, so the whole path is fixed before a
run starts and can be queried in any order. ``path_seed`` selects one
realization of the stochastic function process for a fixed instance (see
:func:`with_path_seed`); the models and base tables depend on
``config.seed`` only.

Generator families (all entries clipped to ``[-psi, psi]``):

``iid``
    ``f_t = clip(f_base + f_noise * N)``, fresh Gaussian noise each slot.
``sinusoidal``
    ``f_t = clip(f_base + f_amp * sin(2 pi t / period + f_phase + jitter[t mod period]))``;
    the phase jitter is drawn once per position in the period, so the path is
    exactly periodic.
``markov``
    two regime tables ``f_base`` / ``f_amp`` selected by a two-state Markov
    chain that flips with probability ``switch_prob`` per slot, plus i.i.d.
    noise.

Constraint tables are always i.i.d.: ``g_t = clip(g_base + g_noise * N)``.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError, ScenarioError
from .lp import LinearProgram, solve_lp, split_point
from .mdp import MdpModel, check_unichain, policy_to_theta, uniform_policy
from .projection import build_polyhedron

SCHEMA_VERSION = 1
BLOCK = 1024
PENALTY_PROCESSES = ("iid", "sinusoidal", "markov")

_F_STREAM, _G_STREAM, _JITTER_STREAM, _REGIME_STREAM = 11, 12, 13, 14

ACTIVE, IDLE, SETUP = 0, 1, 2


@dataclass
class ScenarioConfig:
    K: int = 2
    m: int = 2
    psi: float = 1.0
    num_states: list = field(default_factory=lambda: [3, 3])
    num_actions: list = field(default_factory=lambda: [2, 2])
    penalty_process: str = "iid"
    seed: int = 0
    kind: str = "random"
    delta: float = 0.2
    f_noise: float = 0.1
    g_noise: float = 0.1
    amplitude: float = 0.3
    period: int = 240
    phase_noise: float = 0.3
    switch_prob: float = 0.01
    eta_target: float = 0.2
    datacenter: dict = None

    def __post_init__(self):
        if self.K < 1 or self.m < 0 or not self.psi > 0:
            raise ConfigurationError("need K >= 1, m >= 0, psi > 0")
        if self.penalty_process not in PENALTY_PROCESSES:
            raise ConfigurationError(f"unknown penalty_process {self.penalty_process!r}")
        if self.kind not in ("random", "datacenter"):
            raise ConfigurationError(f"unknown scenario kind {self.kind!r}")
        self.num_states = [int(s) for s in self.num_states]
        self.num_actions = [int(a) for a in self.num_actions]
        if len(self.num_states) != self.K or len(self.num_actions) != self.K:
            raise ConfigurationError("need one (num_states, num_actions) entry per MDP")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("schema_version", None)
        return cls(**d)


@dataclass
class SlaterCertificate:
    eta: float
    theta_tilde: list

    def to_dict(self):
        return {
            "eta": self.eta if math.isfinite(self.eta) else "inf",
            "theta_tilde": [np.asarray(t).tolist() for t in self.theta_tilde],
        }

    @classmethod
    def from_dict(cls, d):
        eta = math.inf if d["eta"] == "inf" else float(d["eta"])
        return cls(eta=eta, theta_tilde=[np.asarray(t, float) for t in d["theta_tilde"]])


@dataclass
class FunctionSample:
    """Penalty and constraint tables for one slot.

    ``f[k]`` has length ``S_k * A_k``; ``g[k]`` has shape ``(m, S_k * A_k)``.
    """

    t: int
    f: list
    g: list


@dataclass
class Scenario:
    config: ScenarioConfig
    models: list
    f_base: list
    f_amp: list
    f_phase: list
    g_base: list
    price_trace: np.ndarray = None
    certificate: SlaterCertificate = None
    path_seed: int = None
    _blocks: dict = field(default_factory=dict, repr=False)
    _regime_counts: dict = field(default_factory=dict, repr=False)

    @property
    def K(self):
        return len(self.models)

    @property
    def m(self):
        return self.config.m

    @property
    def psi(self):
        return self.config.psi

    @property
    def sizes(self):
        return [(md.num_states, md.num_actions) for md in self.models]

    def tables_dict(self):
        return {
            "f_base": [np.asarray(x).tolist() for x in self.f_base],
            "f_amp": [np.asarray(x).tolist() for x in self.f_amp],
            "f_phase": [np.asarray(x).tolist() for x in self.f_phase],
            "g_base": [np.asarray(x).tolist() for x in self.g_base],
            "price_trace": None if self.price_trace is None else np.asarray(self.price_trace).tolist(),
        }

    def digest(self):
        payload = json.dumps(
            {
                "config": self.config.to_dict(),
                "models": [md.to_dict() for md in self.models],
                "tables": self.tables_dict(),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- models


def generate_unichain_mdp(sizes, delta, rng):
    """Random model ``P_a = delta * P_hat + (1 - delta) * Q_a``.

    ``P_hat`` is a fixed entrywise-positive stochastic matrix shared by all
    actions and ``Q_a`` are random (sparse-ish) stochastic matrices, so every
    policy product contains ``delta**r P_hat**r`` and is positive for ``r = 1``.
    """
    S, A = sizes
    if not 0 < delta <= 1:
        raise ValueError("delta must be in (0, 1]")
    p_hat = 0.5 * rng.dirichlet(np.ones(S), size=S) + 0.5 / S
    Q = rng.dirichlet(np.full(S, 0.3), size=(A, S))
    return MdpModel(delta * p_hat[None] + (1 - delta) * Q)


def datacenter_model(p_setup=0.5, leak=0.01):
    """Server MDP over (active, idle, setup) with two actions per state.

    active: 0 = stay, 1 = sleep; idle: 0 = wake, 1 = stay; setup has no real
    choice and completes with probability ``p_setup`` per slot. Every row is
    mixed with ``leak`` of the uniform row so all policy products are positive.
    """
    P = np.zeros((2, 3, 3))
    P[0, ACTIVE, ACTIVE] = 1.0
    P[1, ACTIVE, IDLE] = 1.0
    P[0, IDLE, SETUP] = 1.0
    P[1, IDLE, IDLE] = 1.0
    for a in range(2):
        P[a, SETUP, ACTIVE] = p_setup
        P[a, SETUP, SETUP] = 1.0 - p_setup
    P = (1.0 - leak) * P + leak / 3.0
    return MdpModel(P)


# ---------------------------------------------------------------- function paths


def clipped_normal_mean(mu, sigma, psi):
    """``E[clip(mu + sigma * N, -psi, psi)]`` in closed form."""
    mu = np.asarray(mu, dtype=float)
    if sigma == 0:
        return np.clip(mu, -psi, psi)
    lo = (-psi - mu) / sigma
    hi = (psi - mu) / sigma
    inside = mu * (norm.cdf(hi) - norm.cdf(lo)) + sigma * (norm.pdf(lo) - norm.pdf(hi))
    return -psi * norm.cdf(lo) + psi * norm.sf(hi) + inside


def _stream(scn, tag, *extra):
    path = 0 if scn.path_seed is None else int(scn.path_seed) + 1
    return np.random.default_rng([int(scn.config.seed) & 0xFFFFFFFFFFFFFFFF, path, tag, *extra])


def with_path_seed(scn, path_seed):
    """Same instance, different realization of the function path."""
    return replace(scn, path_seed=None if path_seed is None else int(path_seed),
                   _blocks={}, _regime_counts={})


def _jitter(scn):
    cfg = scn.config
    return cfg.phase_noise * _stream(scn, _JITTER_STREAM).standard_normal(cfg.period)


def _regime_flips(scn, b):
    u = _stream(scn, _REGIME_STREAM, b).random(BLOCK)
    return (u < scn.config.switch_prob).astype(np.int64)


def _regimes(scn, b):
    """Regime of each slot in block ``b``: parity of the flips up to and including it."""
    counts = scn._regime_counts
    counts.setdefault(0, 0)
    j = max(i for i in counts if i <= b)
    while j < b:
        counts[j + 1] = counts[j] + int(_regime_flips(scn, j).sum())
        j += 1
    return (counts[b] + np.cumsum(_regime_flips(scn, b))) % 2


def _price(scn, t):
    cfg = scn.config
    dc = cfg.datacenter or {}
    if scn.price_trace is not None:
        return scn.price_trace[t % len(scn.price_trace)]
    base = dc.get("price_base", 0.5)
    amp = dc.get("price_amplitude", 0.0)
    jit = _jitter(scn)[t % cfg.period]
    return base + amp * np.sin(2 * np.pi * t / cfg.period + jit)


def _build_block(scn, b):
    cfg = scn.config
    t = np.arange(b * BLOCK, (b + 1) * BLOCK)
    psi = cfg.psi
    f_rng = _stream(scn, _F_STREAM, b)
    g_rng = _stream(scn, _G_STREAM, b)
    fs, gs = [], []
    if cfg.kind == "datacenter":
        price = _price(scn, t)
        for k in range(scn.K):
            fs.append(np.clip(price[:, None] * scn.f_amp[k][None], -psi, psi))
        shared = g_rng.standard_normal(BLOCK) * cfg.g_noise / scn.K
        for k in range(scn.K):
            g = scn.g_base[k][None] + shared[:, None, None]
            gs.append(np.clip(g, -psi, psi))
        return fs, gs

    if cfg.penalty_process == "sinusoidal":
        jit = _jitter(scn)[t % cfg.period]
        arg = 2 * np.pi * t / cfg.period + jit
    elif cfg.penalty_process == "markov":
        reg = _regimes(scn, b)
    for k in range(scn.K):
        n = scn.f_base[k].size
        if cfg.penalty_process == "iid":
            f = scn.f_base[k][None] + cfg.f_noise * f_rng.standard_normal((BLOCK, n))
        elif cfg.penalty_process == "sinusoidal":
            f = scn.f_base[k][None] + scn.f_amp[k][None] * np.sin(arg[:, None] + scn.f_phase[k][None])
        else:
            table = np.where(reg[:, None] == 0, scn.f_base[k][None], scn.f_amp[k][None])
            f = table + cfg.f_noise * f_rng.standard_normal((BLOCK, n))
        fs.append(np.clip(f, -psi, psi))
    for k in range(scn.K):
        g = scn.g_base[k][None] + cfg.g_noise * g_rng.standard_normal((BLOCK,) + scn.g_base[k].shape)
        gs.append(np.clip(g, -psi, psi))
    return fs, gs


def _block(scn, b):
    hit = scn._blocks.get(b)
    if hit is None:
        hit = _build_block(scn, b)
        if len(scn._blocks) > 256:
            scn._blocks.clear()
        scn._blocks[b] = hit
    return hit


def sample_functions(scn, t):
    """Tables revealed at the end of slot ``t``; a pure function of the seeds and ``t``."""
    if t < 0:
        raise ValueError("slot index must be nonnegative")
    fs, gs = _block(scn, t // BLOCK)
    i = t % BLOCK
    return FunctionSample(t=t, f=[f[i].copy() for f in fs], g=[g[i].copy() for g in gs])


def function_path(scn, T):
    """Arrays ``f[k]`` of shape ``(T, n_k)`` and ``g[k]`` of shape ``(T, m, n_k)``."""
    nb = -(-T // BLOCK)
    blocks = [_block(scn, b) for b in range(nb)]
    f = [np.concatenate([bl[0][k] for bl in blocks])[:T] for k in range(scn.K)]
    g = [np.concatenate([bl[1][k] for bl in blocks])[:T] for k in range(scn.K)]
    return f, g


def expected_g(scn):
    """True per-slot means ``E[g_t]`` (after clipping), shape ``(m, n_k)`` per MDP."""
    cfg = scn.config
    sigma = cfg.g_noise / scn.K if cfg.kind == "datacenter" else cfg.g_noise
    return [clipped_normal_mean(g, sigma, cfg.psi) for g in scn.g_base]


def expected_f_available(scn):
    return scn.config.kind == "random" and scn.config.penalty_process == "iid"


def mean_f(scn, T):
    """Time-averaged ``(1/T) sum_t E[f_t]`` per MDP and the source of the numbers.

    For i.i.d. penalties the generator mean is exact (``"generator"``);
    otherwise the realized path average over ``t < T`` is used (``"path"``).
    """
    cfg = scn.config
    if expected_f_available(scn):
        return [clipped_normal_mean(f, cfg.f_noise, cfg.psi) for f in scn.f_base], "generator"
    f, _ = function_path(scn, T)
    return [fk.mean(axis=0) for fk in f], "path"


def expected_f_path(scn, T):
    """Per-slot ``E[f_t]`` given the oblivious path, shape ``(T, n_k)`` per MDP."""
    if expected_f_available(scn):
        means, _ = mean_f(scn, T)
        return [np.broadcast_to(mu, (T, mu.size)) for mu in means]
    f, _ = function_path(scn, T)
    return f


# ---------------------------------------------------------------- Slater


def certify_slater(cfg, models, mean_g):
    """Largest uniform margin ``eta`` with ``sum_k <E g_i, theta_k> <= -eta`` for all ``i``.

    Raises
    ------
    ScenarioError
        If the best margin is not positive.
    """
    m = cfg.m
    if m == 0:
        return SlaterCertificate(
            eta=math.inf,
            theta_tilde=[policy_to_theta(md, uniform_policy(md)) for md in models],
        )
    specs = [build_polyhedron(md) for md in models]
    sizes = [sp.dim for sp in specs]
    n = sum(sizes)
    # variables: theta (n), eta_plus, eta_minus; minimize -(eta_plus - eta_minus)
    c = np.zeros(n + 2)
    c[n], c[n + 1] = -1.0, 1.0
    rows = sum(sp.A.shape[0] for sp in specs)
    A = np.zeros((rows, n + 2))
    b = np.concatenate([sp.b for sp in specs])
    r0 = c0 = 0
    for sp in specs:
        A[r0:r0 + sp.A.shape[0], c0:c0 + sp.dim] = sp.A
        r0 += sp.A.shape[0]
        c0 += sp.dim
    G = np.zeros((m, n + 2))
    G[:, :n] = np.hstack([np.asarray(g, float).reshape(m, -1) for g in mean_g])
    G[:, n], G[:, n + 1] = 1.0, -1.0
    sol = solve_lp(LinearProgram(c=c, A=A, b=b, G=G, h=np.zeros(m)))
    if not sol.optimal:
        raise ScenarioError(f"Slater LP is {sol.status}")
    eta = -sol.value
    thetas = split_point(sol.point[:n], sizes)
    if eta <= 0:
        raise ScenarioError(f"no strictly feasible stationary policy (eta = {eta:.3g})")
    return SlaterCertificate(eta=float(eta), theta_tilde=thetas)


# ---------------------------------------------------------------- builders


def _random_scenario(cfg, max_tries=200):
    from .lp import best_stationary

    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 1])
    psi = cfg.psi
    for _ in range(max_tries):
        models = [
            generate_unichain_mdp((S, A), cfg.delta, rng)
            for S, A in zip(cfg.num_states, cfg.num_actions)
        ]
        f_base = [rng.uniform(0.1, 0.8, S * A) * psi for S, A in zip(cfg.num_states, cfg.num_actions)]
        f_amp = [
            (rng.uniform(0.1, 0.8, f.size) * psi if cfg.penalty_process == "markov"
             else np.full(f.size, cfg.amplitude * psi))
            for f in f_base
        ]
        f_phase = [rng.uniform(0, 2 * np.pi, f.size) for f in f_base]
        # constraints lean against cheap actions so the benchmark is constrained
        raw = [
            -0.6 * (f[None] - f.mean()) + rng.uniform(-0.25, 0.25, (cfg.m, f.size)) * psi
            for f in f_base
        ]
        scn = Scenario(cfg, models, f_base, f_amp, f_phase, raw)
        if cfg.m == 0:
            scn.certificate = certify_slater(cfg, models, [])
            return scn
        try:
            raw_eta = certify_slater(cfg, models, raw).eta
        except ScenarioError:
            continue
        shift = (raw_eta - 1.3 * cfg.eta_target) / scn.K
        scn.g_base = [g + shift for g in raw]
        if max(np.abs(g).max() for g in scn.g_base) > 0.95 * psi:
            continue
        try:
            cert = certify_slater(cfg, models, expected_g(scn))
        except ScenarioError:
            continue
        if cert.eta < cfg.eta_target:
            continue
        # require at least one coupled constraint to bind at the benchmark
        means, _ = mean_f(scn, BLOCK)
        free = best_stationary(models, means, expected_g(scn), 0)
        eg = expected_g(scn)
        load = [sum(eg[k][i] @ free.meta["thetas"][k] for k in range(scn.K)) for i in range(cfg.m)]
        if max(load) <= 0.05:
            continue
        scn.certificate = cert
        return scn
    raise ScenarioError("could not generate a Slater-feasible scenario with an active constraint")


def datacenter_scenario(num_servers, price_amplitude, arrival_rate, rng=None, *,
                        psi=1.0, seed=0, price_base=0.5, service_rate=None,
                        p_setup=0.5, leak=0.01, arrival_noise=0.1, period=288,
                        price_trace=None):
    """Server farm: one 3-state MDP per server, electricity price as penalty.

    ``f_t^(k)(s, a) = price_t * 1{s = active}``. The single constraint
    ``g_t = lambda_t - sum_k mu_k 1{s_k = active}`` asks expected arrivals to
    stay below expected service; it is split evenly as
    ``g_t^(k) = lambda_t / K - mu_k 1{s = active}``.

    ``rng`` (optional) draws per-server service rates when ``service_rate`` is
    not given.
    """
    if num_servers < 1:
        raise ConfigurationError("num_servers must be >= 1")
    K = num_servers
    if service_rate is None:
        if rng is None:
            service_rate = np.full(K, 0.8)
        else:
            service_rate = rng.uniform(0.6, 0.9, K)
    service_rate = np.broadcast_to(np.asarray(service_rate, float), (K,))
    cfg = ScenarioConfig(
        K=K, m=1, psi=psi, num_states=[3] * K, num_actions=[2] * K,
        penalty_process="sinusoidal", seed=seed, kind="datacenter", g_noise=arrival_noise,
        period=period, amplitude=price_amplitude,
        datacenter={
            "price_base": price_base,
            "price_amplitude": price_amplitude,
            "arrival_rate": arrival_rate,
            "service_rate": [float(x) for x in service_rate],
            "p_setup": p_setup,
            "leak": leak,
        },
    )
    return _datacenter_from_config(cfg, price_trace)


def _datacenter_from_config(cfg, price_trace=None):
    dc = cfg.datacenter
    K = cfg.K
    models = [datacenter_model(dc.get("p_setup", 0.5), dc.get("leak", 0.01)) for _ in range(K)]
    active = np.zeros((3, 2))
    active[ACTIVE] = 1.0
    active = active.ravel()
    f_base = [np.zeros(6) for _ in range(K)]
    f_amp = [active.copy() for _ in range(K)]
    f_phase = [np.zeros(6) for _ in range(K)]
    lam = dc["arrival_rate"]
    g_base = [(lam / K - dc["service_rate"][k] * active)[None] for k in range(K)]
    trace = None if price_trace is None else np.asarray(price_trace, float)
    scn = Scenario(cfg, models, f_base, f_amp, f_phase, g_base, price_trace=trace)
    scn.certificate = certify_slater(cfg, models, expected_g(scn))
    return scn


def build_scenario(cfg, price_trace=None):
    """Deterministically build a certified scenario from ``cfg``."""
    if cfg.kind == "datacenter":
        return _datacenter_from_config(cfg, price_trace)
    return _random_scenario(cfg)


def reference_config(seed=7, penalty_process="iid"):
    """K=2 systems, 3 states, 2 actions, m=2 constraints, psi=1, eta >= 0.2."""
    return ScenarioConfig(
        K=2, m=2, psi=1.0, num_states=[3, 3], num_actions=[2, 2],
        penalty_process=penalty_process, seed=seed, eta_target=0.2,
    )


def load_price_trace(path):
    """Read a ``slot,price`` CSV (header optional) into an array ordered by slot."""
    rows = []
    for line in Path(path).read_text().splitlines():
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2:
            continue
        try:
            rows.append((int(parts[0]), float(parts[1])))
        except ValueError:
            continue
    rows.sort()
    return np.array([p for _, p in rows])


# ---------------------------------------------------------------- persistence


def save_scenario(scn, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dict(scn.config.to_dict(), schema_version=SCHEMA_VERSION)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    (out / "models.json").write_text(
        json.dumps({"schema_version": SCHEMA_VERSION, "models": [md.to_dict() for md in scn.models]})
    )
    (out / "functions.json").write_text(
        json.dumps(dict(scn.tables_dict(), schema_version=SCHEMA_VERSION))
    )
    cert = {"schema_version": SCHEMA_VERSION, "digest": scn.digest()}
    if scn.certificate is not None:
        cert.update(scn.certificate.to_dict())
    (out / "certificate.json").write_text(json.dumps(cert, indent=2))
    return out


def load_scenario(path):
    """Load a scenario directory written by :func:`save_scenario`.

    Kernels are re-validated (row sums) on load.
    """
    p = Path(path)
    cfg = ScenarioConfig.from_dict(json.loads((p / "config.json").read_text()))
    models = [MdpModel.from_dict(d) for d in json.loads((p / "models.json").read_text())["models"]]
    tab = json.loads((p / "functions.json").read_text())
    g_base = [np.asarray(g, float).reshape(cfg.m, -1) if cfg.m else np.zeros((0, md.size))
              for g, md in zip(tab["g_base"], models)]
    scn = Scenario(
        cfg,
        models,
        [np.asarray(x, float) for x in tab["f_base"]],
        [np.asarray(x, float) for x in tab["f_amp"]],
        [np.asarray(x, float) for x in tab["f_phase"]],
        g_base,
        price_trace=None if tab.get("price_trace") is None else np.asarray(tab["price_trace"], float),
    )
    cert_path = p / "certificate.json"
    if cert_path.exists():
        cd = json.loads(cert_path.read_text())
        if "eta" in cd:
            scn.certificate = SlaterCertificate.from_dict(cd)
    return scn


def check_models_unichain(models, r_max=8):
    return [check_unichain(md, r_max) for md in models]
