import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocmdp.errors import InvariantViolation, ScenarioError
from ocmdp.lp import (
    LinearProgram,
    best_stationary,
    dual_objective,
    perturbation_gap_check,
    queue_constant,
    relaxed_stationary,
    solve_lp,
    theory_constants,
)
from ocmdp.mdp import MdpModel, policy_to_theta, random_policy, theta_to_policy

from .oracles import grid_constrained_optimum, lp_vertex_enum, pure_occupancies, queue_constant_rederived


def random_model(rng, S, A, conc=1.0):
    return MdpModel(rng.dirichlet(np.full(S, conc), size=(A, S)))


def random_lp(rng, n=4, p=1, q=2):
    """Bounded random LP: a simplex-sum row keeps the feasible set compact."""
    A = np.vstack([np.ones(n), rng.normal(size=(p - 1, n))]) if p else None
    x0 = rng.dirichlet(np.ones(n))
    b = A @ x0 if p else None
    G = rng.normal(size=(q, n))
    h = G @ x0 + rng.uniform(0, 0.5, q)
    return LinearProgram(c=rng.normal(size=n), A=A, b=b, G=G, h=h)


# ---------------------------------------------------------------- solver


def test_trivial_box_lp():
    sol = solve_lp(LinearProgram(c=[1.0], G=[[1.0]], h=[1.0]))
    assert sol.optimal and sol.value == 0.0


def test_infeasible():
    sol = solve_lp(LinearProgram(c=[1.0], G=[[-1.0], [1.0]], h=[-1.0, 0.0]))
    assert sol.status == "infeasible"


def test_unbounded():
    sol = solve_lp(LinearProgram(c=[-1.0, 0.0], A=[[1.0, -1.0]], b=[0.0]))
    assert sol.status == "unbounded"


def test_inconsistent_dimensions():
    with pytest.raises(ValueError):
        LinearProgram(c=[1.0, 2.0], A=[[1.0]], b=[1.0])
    with pytest.raises(ValueError):
        LinearProgram(c=[np.nan])


@pytest.mark.parametrize("seed", range(40))
def test_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    lp = random_lp(rng, n=int(rng.integers(2, 6)), p=int(rng.integers(1, 3)), q=int(rng.integers(0, 4)))
    sol = solve_lp(lp)
    ref, _ = lp_vertex_enum(lp.c, lp.A, lp.b, lp.G, lp.h)
    assert sol.optimal
    assert sol.value == pytest.approx(ref, abs=1e-8)
    assert sol.primal_residual <= 1e-8
    assert sol.cs_residual <= 1e-6
    assert np.all(sol.duals >= 0)


@pytest.mark.parametrize("seed", range(20))
def test_strong_and_weak_duality(seed):
    rng = np.random.default_rng(1000 + seed)
    lp = random_lp(rng, n=5, p=2, q=3)
    sol = solve_lp(lp)
    d = dual_objective(lp, sol)
    assert d == pytest.approx(sol.value, abs=1e-8)
    # every primal iterate of phase 2 is feasible, so its objective bounds the dual value
    assert all(s >= d - 1e-8 for s in sol.snapshots)


def test_degenerate_lp_terminates_deterministically():
    # many redundant tight rows through the same vertex
    n = 4
    G = np.vstack([np.eye(n)] * 6 + [np.ones((3, n))])
    h = np.concatenate([np.full(6 * n, 0.25), np.ones(3)])
    lp = LinearProgram(c=-np.arange(1, n + 1.0), A=np.ones((1, n)), b=[1.0], G=G, h=h)
    a, b = solve_lp(lp), solve_lp(lp)
    assert a.optimal and a.value == pytest.approx(-2.5)
    assert a.basis == b.basis and np.array_equal(a.point, b.point)


# ---------------------------------------------------------------- benchmark


@pytest.mark.parametrize("seed", range(10))
def test_unconstrained_matches_pure_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3, 2)
    f = rng.normal(size=6)
    sol = best_stationary([m], [f], [], 0)
    assert sol.value == pytest.approx(min(pure_occupancies(m.kernel) @ f), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_unconstrained_optimum_is_pure(seed):
    rng = np.random.default_rng(50 + seed)
    m = random_model(rng, 4, 3)
    sol = best_stationary([m], [rng.normal(size=12)], [], 0)
    pol = theta_to_policy(m, sol.meta["thetas"][0])
    mass = sol.meta["thetas"][0].reshape(4, 3).sum(axis=1)
    assert np.all(np.isclose(pol[mass > 1e-9].max(axis=1), 1.0))


def test_constant_penalty():
    rng = np.random.default_rng(2)
    models = [random_model(rng, 3, 2), random_model(rng, 2, 3)]
    sol = best_stationary(models, [np.full(6, 0.7), np.full(6, 0.7)], [], 0)
    assert sol.value == pytest.approx(1.4, abs=1e-12)


def _constrained_instance(rng):
    models = [random_model(rng, 2, 2), random_model(rng, 2, 2)]
    f = [rng.uniform(0, 1, 4) for _ in models]
    g = [(-(fk - fk.mean()) + rng.uniform(-0.2, 0.2, 4))[None] for fk in f]
    return models, f, g


@pytest.mark.parametrize("seed", range(5))
def test_constrained_matches_grid(seed):
    rng = np.random.default_rng(seed)
    while True:
        models, f, g = _constrained_instance(rng)
        try:
            sol = best_stationary(models, f, g, 1)
            break
        except ScenarioError:
            continue
    ref = grid_constrained_optimum([m.kernel for m in models], f, g)
    assert sol.value <= ref + 1e-9
    assert ref - sol.value <= 1e-3


def test_infeasible_benchmark_raises():
    rng = np.random.default_rng(3)
    models = [random_model(rng, 2, 2)]
    with pytest.raises(ScenarioError):
        best_stationary(models, [np.zeros(4)], [np.ones((1, 4))], 1)


def test_lagrangian_inequality():
    rng = np.random.default_rng(4)
    models, f, g = _constrained_instance(rng)
    sol = best_stationary(models, f, g, 1)
    lp = sol.meta["lp"]
    for _ in range(100):
        x = np.concatenate([policy_to_theta(m, random_policy(m, rng, 0.5)) for m in models])
        assert lp.c @ x + sol.duals @ (lp.G @ x - lp.h) >= sol.value - 1e-6


# ---------------------------------------------------------------- relaxation


def _active_instance(seed):
    rng = np.random.default_rng(seed)
    while True:
        models, f, g = _constrained_instance(rng)
        try:
            sol = best_stationary(models, f, g, 1)
        except ScenarioError:
            continue
        if sol.duals.max() > 1e-3:
            return models, f, g, sol


def test_relaxed_zero_slack_identical():
    models, f, g, sol = _active_instance(0)
    assert relaxed_stationary(models, f, g, 1, 0.0).value == pytest.approx(sol.value, abs=1e-12)


def test_relaxed_large_slack_is_unconstrained():
    models, f, g, _ = _active_instance(1)
    free = best_stationary(models, f, g, 0)
    assert relaxed_stationary(models, f, g, 1, 1e6).value == pytest.approx(free.value, abs=1e-12)


def test_relaxed_monotone_in_slack():
    models, f, g, sol = _active_instance(2)
    vals = [relaxed_stationary(models, f, g, 1, s).value for s in (0.0, 0.01, 0.05, 0.1, 0.5)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert vals[3] <= sol.value


def test_relaxed_negative_slack_rejected():
    models, f, g, _ = _active_instance(3)
    with pytest.raises(ValueError):
        relaxed_stationary(models, f, g, 1, -0.1)


def test_gap_zero_slack_and_halving():
    models, f, g, _ = _active_instance(4)
    eta = 0.05
    assert perturbation_gap_check(models, f, g, eta, 0.0, psi=1.0).gap == pytest.approx(0.0, abs=1e-12)
    g1 = perturbation_gap_check(models, f, g, eta, 1e-3, psi=1.0).gap
    g2 = perturbation_gap_check(models, f, g, eta, 5e-4, psi=1.0).gap
    assert g2 > 0 and g1 / g2 >= 1.9


def test_gap_inactive_constraint_zero():
    rng = np.random.default_rng(5)
    models = [random_model(rng, 2, 2), random_model(rng, 2, 2)]
    f = [rng.uniform(0, 1, 4) for _ in models]
    g = [np.full((1, 4), -0.5) for _ in models]
    rep = perturbation_gap_check(models, f, g, 1.0, 0.1, psi=1.0)
    assert rep.gap == 0.0


def test_gap_violation_raises():
    models, f, g, _ = _active_instance(6)
    # an absurdly large margin makes the bound smaller than the true gap
    with pytest.raises(InvariantViolation):
        perturbation_gap_check(models, f, g, 1e9, 0.1, psi=1.0)


# ---------------------------------------------------------------- constants


def test_queue_constant_unit_case():
    expected = 8 + 3 + 5 + 2 + 1 + 4 * math.log(1 + 8 * math.exp(0.25))
    assert queue_constant(1, 1, 1.0, 1.0) == pytest.approx(expected, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 6), st.integers(1, 6), st.floats(0.01, 10), st.floats(0.01, 10))
def test_queue_constant_rederived(m, K, psi, eta):
    assert queue_constant(m, K, psi, eta) == pytest.approx(queue_constant_rederived(m, K, psi, eta), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.01, 5))
def test_queue_constant_monotone_in_psi(m, K, psi, dpsi, eta):
    assert queue_constant(m, K, psi + dpsi, eta) > queue_constant(m, K, psi, eta)


def test_theory_constants_bundle():
    tc = theory_constants(2, 2, 1.0, 0.5, 10000, [(3, 2), (3, 2)])
    C = queue_constant(2, 2, 1.0, 0.5)
    assert tc.C == C
    assert tc.regret_constant == pytest.approx(2 * 2 + 0.5 * 12 + 2.5 * 2 * 4)
    assert tc.violation_constant == pytest.approx(C + 2 * math.sqrt(12) * C + 12)
    assert tc.regret_bound == pytest.approx(tc.regret_constant * 100)
    with pytest.raises(ValueError):
        theory_constants(1, 1, 1.0, 0.0, 10, [(2, 2)])
