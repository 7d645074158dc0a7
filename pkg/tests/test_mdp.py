import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocmdp.errors import ChainError, DimensionError, ModelValidationError, NotUnichainError
from ocmdp.mdp import (
    MdpModel,
    MixingEstimate,
    balance_residual,
    check_unichain,
    is_occupancy,
    min_product_entries,
    mixing_contraction_check,
    policy_to_theta,
    policy_transition_matrix,
    pure_policies,
    pure_policy,
    random_policy,
    sample_next_state,
    stationary_distribution,
    state_marginal,
    theta_to_policy,
    uniform_policy,
)
from ocmdp.scenario import generate_unichain_mdp

from .oracles import stationary_eig


def random_model(rng, S=3, A=2, conc=1.0):
    return MdpModel(rng.dirichlet(np.full(S, conc), size=(A, S)))


def symmetric_model():
    P = np.array([[[0.7, 0.3], [0.3, 0.7]], [[0.4, 0.6], [0.6, 0.4]]])
    return MdpModel(P)


# ---------------------------------------------------------------- model


def test_model_validation_names_bad_row():
    P = np.full((2, 3, 3), 1 / 3)
    P[1, 2] = [0.5, 0.5, 0.1]
    with pytest.raises(ModelValidationError, match="row 2 of action 1"):
        MdpModel(P)


def test_model_rejects_negative_and_bad_shape():
    with pytest.raises(ModelValidationError):
        MdpModel(np.array([[[1.5, -0.5], [0.5, 0.5]]]))
    with pytest.raises(DimensionError):
        MdpModel(np.ones((2, 3, 2)) / 2)


def test_model_json_roundtrip():
    m = random_model(np.random.default_rng(0))
    d = json.loads(m.to_json())
    assert set(d) == {"num_states", "num_actions", "kernel"}
    back = MdpModel.from_json(m.to_json())
    assert np.array_equal(back.kernel, m.kernel)
    assert back.kernel.flags.writeable is False


def test_model_json_rejects_broken_row():
    d = random_model(np.random.default_rng(1)).to_dict()
    d["kernel"][0][0][0] += 0.01
    with pytest.raises(ModelValidationError):
        MdpModel.from_dict(d)


# ---------------------------------------------------------------- policy matrices


def test_pure_policy_zero_gives_first_kernel():
    m = random_model(np.random.default_rng(2))
    P = policy_transition_matrix(m, pure_policy(m, [0, 0, 0]))
    assert np.array_equal(P, m.kernel[0])


def test_uniform_policy_averages_kernels():
    m = random_model(np.random.default_rng(3))
    P = policy_transition_matrix(m, uniform_policy(m))
    assert np.allclose(P, (m.kernel[0] + m.kernel[1]) / 2, atol=1e-15)


def test_policy_shape_mismatch():
    m = random_model(np.random.default_rng(4))
    with pytest.raises(DimensionError):
        policy_transition_matrix(m, np.full((2, 2), 0.5))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 4))
def test_policy_matrix_rows_sum_to_one(seed, S, A):
    rng = np.random.default_rng(seed)
    m = random_model(rng, S, A, conc=0.5)
    P = policy_transition_matrix(m, random_policy(m, rng, 0.3))
    assert np.abs(P.sum(axis=1) - 1).max() <= 1e-12
    assert P.min() >= 0


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_l1_non_expansive(seed, n):
    rng = np.random.default_rng(seed)
    Q = rng.dirichlet(np.full(n, 0.4), size=n)
    x = rng.normal(size=n)
    assert np.abs(x @ Q).sum() <= np.abs(x).sum() + 1e-12


# ---------------------------------------------------------------- stationary


def test_stationary_symmetric():
    assert np.allclose(stationary_distribution([[0.9, 0.1], [0.1, 0.9]]), [0.5, 0.5], atol=1e-12)


def test_stationary_two_state_against_eig():
    P = np.array([[0.5, 0.5], [1.0, 0.0]])
    d = stationary_distribution(P)
    assert np.allclose(d, stationary_eig(P), atol=1e-12)
    assert np.allclose(d, [2 / 3, 1 / 3], atol=1e-12)


def test_stationary_doubly_stochastic():
    P = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
    assert np.allclose(stationary_distribution(P), np.full(3, 1 / 3), atol=1e-12)


def test_stationary_reducible_raises():
    with pytest.raises(ChainError):
        stationary_distribution(np.eye(3))
    with pytest.raises(ChainError):
        stationary_distribution([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]])


def test_stationary_periodic_irreducible_is_unique():
    # the 2-cycle never converges under powering but its fixed point is unique
    assert np.allclose(stationary_distribution([[0.0, 1.0], [1.0, 0.0]]), [0.5, 0.5], atol=1e-12)


def test_stationary_slow_mixing_chain():
    eps = 1e-7
    P = np.array([[1 - eps, eps], [2 * eps, 1 - 2 * eps]])
    d = stationary_distribution(P)
    assert np.abs(d - d @ P).sum() <= 1e-10
    assert np.allclose(d, [2 / 3, 1 / 3], atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 7))
def test_stationary_matches_eigenvector(seed, n):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n), size=n)
    d = stationary_distribution(P)
    assert abs(d.sum() - 1) <= 1e-12
    assert np.abs(d - d @ P).sum() <= 1e-10
    assert np.allclose(d, stationary_eig(P), atol=1e-9)


# ---------------------------------------------------------------- occupancy


def test_theta_to_policy_arithmetic():
    m = MdpModel(np.full((2, 2, 2), 0.5))
    p = theta_to_policy(m, np.array([0.2, 0.3, 0.1, 0.4]))
    assert np.allclose(p, [[0.4, 0.6], [0.2, 0.8]], atol=1e-15)


def test_theta_to_policy_zero_mass_uniform_row():
    m = MdpModel(np.full((2, 2, 2), 0.5))
    p = theta_to_policy(m, np.array([0.6, 0.4, 0.0, 0.0]))
    assert np.array_equal(p[1], [0.5, 0.5])


def test_uniform_policy_symmetric_model_gives_quarter():
    m = symmetric_model()
    assert np.allclose(policy_to_theta(m, uniform_policy(m)), 0.25, atol=1e-12)


def test_pure_policy_support():
    m = random_model(np.random.default_rng(5))
    th = policy_to_theta(m, pure_policy(m, [1, 0, 1])).reshape(3, 2)
    assert np.all(th[[0, 1, 2], [0, 1, 0]] == 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5), st.integers(1, 4))
def test_policy_to_theta_is_occupancy(seed, S, A):
    rng = np.random.default_rng(seed)
    m = random_model(rng, S, A)
    p = random_policy(m, rng)
    th = policy_to_theta(m, p)
    assert is_occupancy(m, th, tol=1e-9)
    assert balance_residual(m, th) <= 1e-9
    d = stationary_distribution(policy_transition_matrix(m, p))
    assert np.allclose(state_marginal(m, th), d, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_round_trip_policy_theta(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 4, 3)
    p = random_policy(m, rng)
    d = stationary_distribution(policy_transition_matrix(m, p))
    if d.min() < 1e-6:
        return
    th = policy_to_theta(m, p)
    assert np.allclose(theta_to_policy(m, th), p, atol=1e-9)
    assert np.allclose(policy_to_theta(m, theta_to_policy(m, th)), th, atol=1e-9)


# ---------------------------------------------------------------- unichain / mixing


def _brute_min_entry(m, r):
    pols = [policy_transition_matrix(m, pure_policy(m, a)) for a in pure_policies(m)]
    best = math.inf
    for seq in __import__("itertools").product(pols, repeat=r):
        M = np.eye(m.num_states)
        for P in seq:
            M = M @ P
        best = min(best, M.min())
    return best


@pytest.mark.parametrize("seed", range(6))
def test_min_product_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 3, 2, conc=0.3)
    for r in (1, 2):
        value, witness = min_product_entries(m, r)
        assert value == pytest.approx(_brute_min_entry(m, r), abs=1e-15)
        M = np.eye(3)
        for acts in witness:
            M = M @ policy_transition_matrix(m, pure_policy(m, acts))
        assert M.min() == pytest.approx(value, abs=1e-15)


def test_positive_kernel_passes_with_r1():
    est = check_unichain(random_model(np.random.default_rng(6)), 4)
    assert est.r == 1
    assert 0 < est.delta <= 1
    assert est.tau == pytest.approx(-1 / math.log(1 - est.delta))


def test_periodic_kernel_fails_with_witness():
    m = MdpModel(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    with pytest.raises(NotUnichainError) as exc:
        check_unichain(m, 6)
    assert exc.value.witness is not None and len(exc.value.witness) == 6


def test_mixture_model_passes():
    rng = np.random.default_rng(7)
    m = generate_unichain_mdp((3, 2), 0.2, rng)
    assert check_unichain(m, 3).r == 1


def test_rank_one_kernel_ratio_zero():
    row = np.array([0.2, 0.5, 0.3])
    m = MdpModel(np.broadcast_to(row, (2, 3, 3)).copy())
    est = check_unichain(m, 2)
    assert est.delta == pytest.approx(0.6)
    assert mixing_contraction_check(m, est, 200, rng_seed=0) <= 1e-12


def test_delta_one_forces_zero_ratio():
    m = MdpModel(np.full((2, 3, 3), 1 / 3))
    est = check_unichain(m, 1)
    assert est.delta == 1.0 and est.tau == 0.0 and est.contraction_factor == 0.0
    assert mixing_contraction_check(m, est, 200, rng_seed=1) <= 1e-12


def test_near_periodic_chain_ratio_close_to_bound():
    eps = 0.01
    base = np.array([[0.0, 1.0], [1.0, 0.0]])
    P = (1 - eps) * base + eps * 0.5
    m = MdpModel(P[None])
    est = check_unichain(m, 2)
    ratio = mixing_contraction_check(m, est, 500, rng_seed=2)
    assert ratio <= est.contraction_factor + 1e-12
    assert ratio > 0.9


@pytest.mark.parametrize("seed", range(5))
def test_contraction_bound_random(seed):
    rng = np.random.default_rng(seed)
    m = generate_unichain_mdp((4, 3), 0.1, rng)
    est = check_unichain(m, 3)
    assert isinstance(est, MixingEstimate)
    assert mixing_contraction_check(m, est, 1000, rng_seed=seed) <= est.contraction_factor + 1e-12


# ---------------------------------------------------------------- sampling


def test_deterministic_row():
    P = np.array([[[0.0, 1.0, 0.0], [1, 0, 0], [1, 0, 0]]])
    m = MdpModel(P)
    rng = np.random.default_rng(0)
    assert all(sample_next_state(m, 0, 0, rng) == 1 for _ in range(100))


def test_sampling_frequencies():
    m = MdpModel(np.full((1, 2, 2), 0.5))
    rng = np.random.default_rng(11)
    draws = np.array([sample_next_state(m, 0, 0, rng) for _ in range(100000)])
    assert abs(draws.mean() - 0.5) <= 0.01


def test_sampling_reproducible_and_bad_index():
    m = random_model(np.random.default_rng(8))
    a = [sample_next_state(m, 1, 1, np.random.default_rng(3)) for _ in range(5)]
    b = [sample_next_state(m, 1, 1, np.random.default_rng(3)) for _ in range(5)]
    assert a == b
    with pytest.raises(IndexError):
        sample_next_state(m, 3, 0, np.random.default_rng(0))
