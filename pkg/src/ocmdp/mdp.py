"""
Finite MDP data model, policy/occupancy algebra and mixing diagnostics.

Occupancy vectors are flat arrays of length ``num_states * num_actions`` laid
out state-major, i.e. ``theta[s * num_actions + a]``; ``theta.reshape(S, A)``
gives the state-by-action table. Policies are ``(S, A)`` row-stochastic arrays
and state distributions are length-``S`` probability vectors.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ChainError,
    DimensionError,
    ModelValidationError,
    NotUnichainError,
)

ROW_SUM_TOL = 1e-12
ZERO_MASS = 1e-12
STATIONARY_TOL = 1e-10
POWER_CAP = 10**6


@dataclass(frozen=True)
class MdpModel:
    """Finite MDP with one ``(S, S)`` transition matrix per action.

    ``kernel[a, s, s']`` is the probability of moving from ``s`` to ``s'``
    when action ``a`` is taken.
    """

    kernel: np.ndarray

    def __post_init__(self):
        P = np.array(self.kernel, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise DimensionError(f"kernel must have shape (A, S, S), got {P.shape}")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ModelValidationError("kernel entries must be finite and nonnegative")
        err = np.abs(P.sum(axis=2) - 1.0)
        if err.max() > ROW_SUM_TOL:
            a, s = np.unravel_index(np.argmax(err), err.shape)
            raise ModelValidationError(
                f"row {s} of action {a} sums to {P[a, s].sum()!r}, not 1"
            )
        P.setflags(write=False)
        object.__setattr__(self, "kernel", P)

    @property
    def num_actions(self):
        return self.kernel.shape[0]

    @property
    def num_states(self):
        return self.kernel.shape[1]

    @property
    def size(self):
        return self.num_states * self.num_actions

    def to_dict(self):
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "kernel": self.kernel.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        model = cls(np.asarray(d["kernel"], dtype=float))
        if model.num_states != d["num_states"] or model.num_actions != d["num_actions"]:
            raise DimensionError("declared num_states/num_actions disagree with kernel shape")
        return model

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class MixingEstimate:
    """Constructive mixing constants for length-``r`` policy products.

    Every product of ``r`` transition matrices decomposes as
    ``delta * (uniform) + (1 - delta) * (stochastic)``, so the l1 distance
    between two state distributions shrinks by at least ``1 - delta`` over
    ``r`` steps. ``tau = -1 / ln(1 - delta)``; ``tau == 0`` encodes
    ``delta == 1`` (one-shot coupling).
    """

    r: int
    tau: float
    delta: float

    @property
    def contraction_factor(self):
        if self.delta >= 1.0:
            return 0.0
        return math.exp(-1.0 / self.tau)


def _check_policy_shape(m, p):
    p = np.asarray(p, dtype=float)
    if p.shape != (m.num_states, m.num_actions):
        raise DimensionError(
            f"policy shape {p.shape} does not match model ({m.num_states}, {m.num_actions})"
        )
    return p


def validate_policy(p, tol=ROW_SUM_TOL):
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > tol:
        raise ModelValidationError("policy rows must be nonnegative and sum to 1")
    return p


def uniform_policy(m):
    return np.full((m.num_states, m.num_actions), 1.0 / m.num_actions)


def pure_policy(m, actions):
    """Deterministic policy choosing ``actions[s]`` in state ``s``."""
    p = np.zeros((m.num_states, m.num_actions))
    p[np.arange(m.num_states), np.asarray(actions)] = 1.0
    return p


def policy_transition_matrix(m, p):
    """State transition matrix under a randomized stationary policy.

    ``P_pi[s, s'] = sum_a p[s, a] * P_a[s, s']``.
    """
    p = _check_policy_shape(m, p)
    return np.einsum("sa,ast->st", p, m.kernel)


def stationary_distribution(P):
    """Unique stationary distribution ``d = d P`` of an ergodic stochastic matrix.

    A dense solve of ``d (I - P + 11^T) = 1^T`` is tried first; if that system
    is singular or the answer fails the residual test, the chain is powered by
    repeated squaring up to ``2**20 >= 10**6`` steps.

    Raises
    ------
    ChainError
        If the chain has more than one closed class (no unique stationary
        distribution), or powering does not reach the ``1e-10`` residual.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {P.shape}")
    n = P.shape[0]
    if n == 1:
        return np.ones(1)

    M = np.eye(n) - P + 1.0
    try:
        d = np.linalg.solve(M.T, np.ones(n))
        if np.linalg.cond(M) < 1e12 and _stationary_ok(d, P):
            return _clean_distribution(d)
    except np.linalg.LinAlgError:
        pass

    Pk = P.copy()
    steps = 1
    while steps < POWER_CAP:
        Pk = Pk @ Pk
        steps *= 2
        d = Pk.mean(axis=0)
        if np.abs(Pk - d).max() <= STATIONARY_TOL and _stationary_ok(d, P):
            return _clean_distribution(d)
    raise ChainError("no unique stationary distribution (chain has several closed classes)")


def _stationary_ok(d, P):
    return (
        np.all(np.isfinite(d))
        and d.min() > -1e-12
        and abs(d.sum() - 1.0) <= 1e-12
        and np.abs(d - d @ P).sum() <= STATIONARY_TOL
    )


def _clean_distribution(d):
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def policy_to_theta(m, p):
    """Stationary state-action occupancy ``theta(s, a) = p(a|s) d_p(s)``."""
    p = _check_policy_shape(m, p)
    d = stationary_distribution(policy_transition_matrix(m, p))
    return (d[:, None] * p).ravel()


def theta_to_policy(m, theta):
    """Recover ``p(a|s) = theta(s, a) / sum_a theta(s, a)``.

    States whose marginal is below ``1e-12`` get the uniform row so the policy
    can act everywhere.
    """
    th = np.asarray(theta, dtype=float).reshape(m.num_states, m.num_actions)
    th = np.clip(th, 0.0, None)
    mass = th.sum(axis=1)
    p = np.full_like(th, 1.0 / m.num_actions)
    live = mass >= ZERO_MASS
    p[live] = th[live] / mass[live, None]
    return p


def state_marginal(m, theta):
    return np.asarray(theta, dtype=float).reshape(m.num_states, m.num_actions).sum(axis=1)


def balance_residual(m, theta):
    """``max_s' |sum_{s,a} theta(s,a) P_a(s,s') - sum_a theta(s',a)|``."""
    th = np.asarray(theta, dtype=float).reshape(m.num_states, m.num_actions)
    inflow = np.einsum("sa,ast->t", th, m.kernel)
    return float(np.abs(inflow - th.sum(axis=1)).max())


def is_occupancy(m, theta, tol=1e-9):
    th = np.asarray(theta, dtype=float)
    return (
        th.shape == (m.size,)
        and th.min() >= -tol
        and abs(th.sum() - 1.0) <= tol
        and balance_residual(m, th) <= tol
    )


def pure_policies(m):
    """Iterate over all ``A**S`` pure policies as action-index tuples."""
    import itertools

    return itertools.product(range(m.num_actions), repeat=m.num_states)


def min_product_entries(m, r):
    """Smallest entry of ``P_{pi_1} ... P_{pi_r}`` over all pure-policy sequences.

    Row ``s`` of ``P_pi`` depends only on ``pi(s)``, so for a fixed column
    ``j`` the minimizing suffix is found by backward recursion
    ``v_{l+1}(s) = min_a sum_s' P_a(s, s') v_l(s')`` starting from ``e_j``.
    The minimizing action at each level is shared by all rows, which makes the
    recursion exact.

    Returns
    -------
    value : float
        Minimum entry over all ``(A**S)**r`` products.
    witness : list of tuple
        Pure-policy sequence ``(pi_1, ..., pi_r)`` attaining it.
    """
    S = m.num_states
    best = math.inf
    witness = None
    for j in range(S):
        v = np.zeros(S)
        v[j] = 1.0
        choices = []
        for _ in range(r):
            cand = m.kernel @ v  # (A, S)
            a_star = np.argmin(cand, axis=0)
            v = cand[a_star, np.arange(S)]
            choices.append(tuple(int(a) for a in a_star))
        i = int(np.argmin(v))
        if v[i] < best:
            best = float(v[i])
            witness = list(reversed(choices))
    return best, witness


def check_unichain(m, r_max):
    """Find the smallest ``r <= r_max`` making every pure-policy product positive.

    Returns a :class:`MixingEstimate` with ``delta = S * min entry`` over all
    length-``r`` products. The search is exact (see :func:`min_product_entries`).

    Raises
    ------
    NotUnichainError
        If some length-``r_max`` product still has a zero entry; ``witness``
        holds the offending pure-policy sequence.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    witness = None
    for r in range(1, r_max + 1):
        low, witness = min_product_entries(m, r)
        if low > 0.0:
            delta = min(1.0, m.num_states * low)
            tau = 0.0 if delta >= 1.0 else -1.0 / math.log1p(-delta)
            return MixingEstimate(r=r, tau=tau, delta=delta)
    raise NotUnichainError(
        f"a product of {r_max} pure-policy matrices has a zero entry", witness=witness
    )


def random_policy(m, rng, concentration=1.0):
    return rng.dirichlet(np.full(m.num_actions, concentration), size=m.num_states)


def mixing_contraction_check(m, est, trials, rng_seed):
    """Largest observed ``||(d1 - d2) P_1 ... P_r||_1 / ||d1 - d2||_1``.

    Draws random distribution pairs (a mix of interior points and point
    masses) and random policy sequences of length ``est.r`` (a mix of
    Dirichlet and pure policies).
    """
    rng = np.random.default_rng(rng_seed)
    S, A = m.num_states, m.num_actions
    worst = 0.0
    for trial in range(trials):
        if trial % 3 == 0:
            i, j = rng.choice(S, size=2, replace=S == 1)
            d1, d2 = np.eye(S)[i], np.eye(S)[j]
        else:
            d1, d2 = rng.dirichlet(np.ones(S)), rng.dirichlet(np.ones(S))
        diff = d1 - d2
        norm = np.abs(diff).sum()
        if norm == 0.0:
            continue
        x = diff
        for _ in range(est.r):
            if rng.random() < 0.5:
                p = pure_policy(m, rng.integers(A, size=S))
            else:
                p = random_policy(m, rng, concentration=rng.choice([0.2, 1.0, 5.0]))
            x = x @ policy_transition_matrix(m, p)
        worst = max(worst, float(np.abs(x).sum() / norm))
    return worst


def sample_next_state(m, s, a, rng):
    """Draw ``s'`` from row ``P_a(s, .)``."""
    if not (0 <= s < m.num_states) or not (0 <= a < m.num_actions):
        raise IndexError(f"state {s} / action {a} out of range")
    return draw_from_row(m.kernel[a, s], rng.random())


def draw_from_row(row, u):
    """Inverse-CDF draw from a probability row given a uniform ``u``."""
    cdf = np.cumsum(row)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(row) - 1)
