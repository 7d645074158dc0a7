"""
Online controller for weakly coupled constrained MDPs.

Each slot ``t >= 1`` the controller forms, per system ``k``, the weight
``w = V f_{t-1} + sum_i Q_i(t) g_{i,t-1}`` and takes the proximal step
``theta_t = Proj_Theta(theta_{t-1} - w / (2 alpha))``. A policy is read off
``theta_t`` and an action is drawn in the current state. Only after every
action of the slot is fixed are the slot-``t`` tables revealed, at which point
the queues advance:

    Q_i(t+1) = max(Q_i(t) + sum_k <g_{i,t-1}, theta_t>, 0),  Q(0) = Q(1) = 0.

The slot API is two-phase: :func:`decide` then :func:`observe`. Calling them
out of order raises :class:`SequencingError`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvariantViolation, NotUnichainError, SequencingError
from .mdp import (
    check_unichain,
    draw_from_row,
    policy_to_theta,
    pure_policies,
    pure_policy,
    theta_to_policy,
    uniform_policy,
)
from .projection import DEFAULT_TOL, build_polyhedron, project_theta

UNICHAIN_R_MAX = 8


@dataclass(frozen=True)
class ControllerParams:
    V: float
    alpha: float
    T: int

    def __post_init__(self):
        if not (self.V > 0 and self.alpha > 0 and self.T >= 1):
            raise ConfigurationError("need V > 0, alpha > 0 and T >= 1")

    @classmethod
    def auto(cls, T):
        """``V = sqrt(T)``, ``alpha = T``."""
        return cls(V=math.sqrt(T), alpha=float(T), T=int(T))


@dataclass
class StepResult:
    theta: np.ndarray
    policy: np.ndarray
    action: int = None
    iterations: int = 0
    zero_mask: np.ndarray = None


@dataclass
class SlotInfo:
    """Quantities of slot ``t >= 1`` needed by the sample-path invariants."""

    t: int
    theta_prev: list
    theta: list
    f_prev: list
    g_prev: list
    q_now: np.ndarray
    q_next: np.ndarray
    q_before: np.ndarray


@dataclass
class ControllerState:
    models: list
    m: int
    params: ControllerParams
    specs: list
    theta: list
    theta_prev: list
    policies: list
    queues: np.ndarray
    queues_prev: np.ndarray
    t: int = 0
    phase: str = "decide"
    f_prev: list = None
    g_prev: list = None
    masks: list = field(default_factory=list)
    tol: float = DEFAULT_TOL

    @property
    def K(self):
        return len(self.models)


def init_controller(models, m, params, tol=DEFAULT_TOL):
    """Fresh controller acting with the uniform policy at slot 0.

    Raises
    ------
    ConfigurationError
        If some model fails the unichain check.
    """
    if m < 0:
        raise ConfigurationError("m must be nonnegative")
    for k, md in enumerate(models):
        try:
            check_unichain(md, UNICHAIN_R_MAX)
        except NotUnichainError as exc:
            raise ConfigurationError(f"model {k} is not unichain: {exc}") from exc
    thetas = [policy_to_theta(md, uniform_policy(md)) for md in models]
    return ControllerState(
        models=list(models),
        m=int(m),
        params=params,
        specs=[build_polyhedron(md) for md in models],
        theta=thetas,
        theta_prev=[th.copy() for th in thetas],
        policies=[uniform_policy(md) for md in models],
        queues=np.zeros(m),
        queues_prev=np.zeros(m),
        masks=[th <= 0 for th in thetas],
        tol=tol,
    )


def compute_weights(state, k):
    """``V f_{t-1} + sum_i Q_i(t) g_{i,t-1}`` for system ``k``."""
    if state.t < 1 or state.f_prev is None:
        raise SequencingError("weights need the previous slot's functions (t >= 1)")
    w = state.params.V * state.f_prev[k]
    if state.m:
        w = w + state.queues @ state.g_prev[k]
    return w


def controller_step(state, k, s=None, u=None):
    """Proximal projection step for system ``k`` (does not modify ``state``).

    ``s`` and ``u`` (current state, uniform draw) are optional; when given the
    action is drawn from the recovered policy row.
    """
    w = compute_weights(state, k)
    y = state.theta[k] - w / (2.0 * state.params.alpha)
    rep = project_theta(state.specs[k], y, tol=state.tol, warm_zero_mask=state.masks[k])
    pol = theta_to_policy(state.models[k], rep.point)
    action = None if s is None else draw_from_row(pol[s], u)
    return StepResult(rep.point, pol, action, rep.iterations, rep.zero_mask)


def decide(state, states=None, uniforms=None):
    """First phase of a slot: fix ``theta_t`` and, optionally, the actions.

    Returns the list of actions when ``states`` and ``uniforms`` are given.
    """
    if state.phase != "decide":
        raise SequencingError(f"slot {state.t}: decide called twice without observe")
    if state.t == 0:
        steps = None
    else:
        steps = [controller_step(state, k) for k in range(state.K)]
        state.theta_prev = state.theta
        state.theta = [st.theta for st in steps]
        state.policies = [st.policy for st in steps]
        state.masks = [st.zero_mask for st in steps]
    state.phase = "observe"
    if states is None:
        return None
    return [draw_from_row(state.policies[k][states[k]], uniforms[k]) for k in range(state.K)]


def queue_update(state):
    """Advance ``Q(t) -> Q(t+1)`` using ``g_{t-1}`` and ``theta_t``; returns the new queues."""
    if state.m == 0:
        return state.queues
    if state.t == 0:
        # Q(1) = Q(0) = 0
        return state.queues
    load = sum(state.g_prev[k] @ state.theta[k] for k in range(state.K))
    new = np.maximum(state.queues + load, 0.0)
    state.queues_prev = state.queues
    state.queues = new
    return new


def observe(state, sample):
    """Second phase: reveal the slot-``t`` tables and advance to ``t + 1``.

    Returns a :class:`SlotInfo` for ``t >= 1`` (``None`` at ``t = 0``).
    """
    if state.phase != "observe":
        raise SequencingError(f"slot {state.t}: functions revealed before the decision")
    if sample.t != state.t:
        raise SequencingError(f"expected functions of slot {state.t}, got slot {sample.t}")
    info = None
    if state.t >= 1:
        q_before = state.queues_prev
        q_now = state.queues
        queue_update(state)
        info = SlotInfo(
            t=state.t,
            theta_prev=state.theta_prev,
            theta=state.theta,
            f_prev=state.f_prev,
            g_prev=state.g_prev,
            q_now=q_now,
            q_next=state.queues,
            q_before=q_before,
        )
    state.f_prev = [np.asarray(f, float) for f in sample.f]
    state.g_prev = [
        np.asarray(g, float).reshape(state.m, md.size) for g, md in zip(sample.g, state.models)
    ]
    state.t += 1
    state.phase = "decide"
    return info


def run_slot(state, sample, true_states=None, uniforms=None):
    """``decide`` followed by ``observe``; returns ``(actions, info)``."""
    actions = decide(state, true_states, uniforms)
    info = observe(state, sample)
    return actions, info


# ---------------------------------------------------------------- invariants


def occupancy_vertices(m):
    """Occupancy vectors of all pure policies (the vertices of the polyhedron)."""
    return np.array([policy_to_theta(m, pure_policy(m, acts)) for acts in pure_policies(m)])


@dataclass
class LemmaReport:
    slots: int = 0
    violations: dict = field(default_factory=dict)
    worst: dict = field(default_factory=dict)
    first: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not any(self.violations.values())

    def note(self, name, slack, t, witness):
        # slack = rhs - lhs; negative beyond tolerance is a violation
        self.worst[name] = min(self.worst.get(name, math.inf), slack)
        if slack < -LemmaChecker.TOL:
            self.violations[name] = self.violations.get(name, 0) + 1
            self.first.setdefault(name, (t, witness))
        else:
            self.violations.setdefault(name, 0)


class LemmaChecker:
    """Per-slot verification of the deterministic sample-path bounds.

    Checks, for every ``t >= 1``: the cumulative queue bound, the drift bound,
    the per-system proximal optimality inequality against ``num_samples``
    random comparison points, the combined drift-plus-penalty bound, the
    slow-update bound and both queue increment bounds.

    ``strict=True`` raises :class:`InvariantViolation` on the first failure.
    """

    TOL = 1e-6

    def __init__(self, models, m, psi, params, num_samples=20, seed=0, strict=False):
        self.models = models
        self.m = m
        self.K = len(models)
        self.psi = psi
        self.params = params
        self.num_samples = num_samples
        self.rng = np.random.default_rng([seed, 0x1E44A])
        self.vertices = [occupancy_vertices(md) for md in models] if num_samples else None
        self.sizes = np.array([md.size for md in models], float)
        self.strict = strict
        self.report = LemmaReport()
        self._lhs = np.zeros(m)
        self._path = 0.0
        self._q1 = None

    def _sample_points(self):
        pts = []
        for vx in self.vertices:
            nv = vx.shape[0]
            conc = self.rng.choice([0.1, 1.0])
            w = self.rng.dirichlet(np.full(nv, conc), size=self.num_samples)
            pts.append(w @ vx)
        return pts

    def _note(self, name, slack, t, witness):
        self.report.note(name, slack, t, witness)
        if self.strict and slack < -self.TOL:
            raise InvariantViolation(
                f"{name} violated at slot {t} by {-slack:.3e}", slot=t, name=name, witness=witness
            )

    def check(self, info):
        t, K, m, psi = info.t, self.K, self.m, self.psi
        V, alpha = self.params.V, self.params.alpha
        th, thp, f, g = info.theta, info.theta_prev, info.f_prev, info.g_prev
        qn, qx, qb = info.q_now, info.q_next, info.q_before
        steps = np.array([np.linalg.norm(th[k] - thp[k]) for k in range(K)])
        self.report.slots += 1
        if self._q1 is None:
            self._q1 = qn.copy()

        if m:
            # cumulative queue bound up to this slot
            self._lhs += sum(g[k] @ thp[k] for k in range(K))
            self._path += psi * float(np.sqrt(self.sizes) @ steps)
            slack = np.min(qx - self._q1 + self._path - self._lhs)
            self._note("pre-Q-bound", float(slack), t, {"lhs": self._lhs.copy(), "q_next": qx})

            load = sum(g[k] @ th[k] for k in range(K))
            drift = 0.5 * (qx @ qx - qn @ qn)
            slack = 0.5 * m * K**2 * psi**2 + qn @ load - drift
            self._note("D-bound", float(slack), t, {"drift": drift})

            inc = np.abs(qx - qn)
            self._note("queue-increment", float(np.min(K * psi - inc)), t, {"increment": inc})
            dn = np.linalg.norm(qx) - np.linalg.norm(qn)
            self._note("queue-norm-increment", float(math.sqrt(m) * K * psi - dn), t, {"dnorm": dn})

        for k in range(K):
            gnorm = math.sqrt(float(np.sum(g[k] ** 2))) if m else 0.0
            bound = (V * np.linalg.norm(f[k]) + np.linalg.norm(qn) * gnorm) / (2 * alpha)
            self._note("slow-update", float(bound - steps[k]), t, {"k": k, "step": steps[k]})

        if not self.num_samples:
            return
        pts = self._sample_points()
        total_lhs = 0.0
        total_rhs = np.zeros(self.num_samples)
        for k in range(K):
            d = th[k] - thp[k]
            lhs = V * f[k] @ d + (qn @ (g[k] @ th[k]) if m else 0.0) + alpha * d @ d
            P = pts[k]
            D = P - thp[k]
            E = P - th[k]
            rhs = V * (D @ f[k]) + alpha * np.einsum("ij,ij->i", D, D) - alpha * np.einsum("ij,ij->i", E, E)
            rhs_prev = rhs.copy()
            if m:
                G = P @ g[k].T  # (samples, m)
                rhs = rhs + G @ qn
                rhs_prev = rhs_prev + G @ qb
            worst = int(np.argmin(rhs - lhs))
            self._note("DPP-bound", float(rhs[worst] - lhs), t, {"k": k, "lhs": lhs, "rhs": rhs[worst]})
            total_lhs += lhs - (qn @ (g[k] @ th[k]) if m else 0.0)
            total_rhs += rhs_prev
        if m:
            drift = 0.5 * (qx @ qx - qn @ qn)
            slack = 1.5 * m * K**2 * psi**2 + total_rhs - (drift + total_lhs)
            self._note("dpp-bound", float(np.min(slack)), t, {"drift": drift})
