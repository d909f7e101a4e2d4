"""Exact-solver and policy-algebra tests."""

import numpy as np
import pytest

from fedsam.errors import CoverageError, ErgodicityError
from fedsam.harness import GeneratorParams, generate_mdp
from fedsam.mdp import (
    FeatureMatrix,
    Mdp,
    Policy,
    bellman_optimality_operator,
    bellman_residual,
    greedy_policy,
    importance_ratio,
    importance_ratio_max,
    importance_ratio_table,
    optimality_residual,
    policy_transition_matrix,
    projected_fixed_point_oracle,
    projected_fixed_point_residual,
    q_star_oracle,
    reward_under_policy,
    stationary_distribution,
    value_function_oracle,
)


def single_state_mdp(reward: float, gamma: float, n_actions: int = 1, rewards=None) -> Mdp:
    rewards = [reward] * n_actions if rewards is None else rewards
    return Mdp(
        n_states=1,
        n_actions=n_actions,
        transition=np.ones((1, n_actions, 1)),
        reward=np.array([rewards], dtype=float),
        gamma=gamma,
    )


def random_mdp(n_states, n_actions, gamma, seed, branching=None) -> Mdp:
    params = GeneratorParams(
        n_states=n_states, n_actions=n_actions,
        branching=branching or n_states, gamma=gamma, d=1,
    )
    return generate_mdp(params, np.random.default_rng(seed))


def random_policy(n_states, n_actions, seed) -> Policy:
    return Policy(np.random.default_rng(seed).dirichlet(np.ones(n_actions), size=n_states))


class TestMdpInvariants:
    def test_rejects_non_stochastic_kernel(self):
        trans = np.ones((2, 1, 2))  # rows sum to 2
        with pytest.raises(ValueError, match="sum to 1"):
            Mdp(2, 1, trans, np.zeros((2, 1)), 0.9)

    def test_rejects_out_of_range_rewards(self):
        trans = np.full((1, 1, 1), 1.0)
        with pytest.raises(ValueError, match="rewards"):
            Mdp(1, 1, trans, np.array([[1.5]]), 0.9)

    def test_rejects_bad_gamma(self):
        trans = np.full((1, 1, 1), 1.0)
        with pytest.raises(ValueError, match="gamma"):
            Mdp(1, 1, trans, np.zeros((1, 1)), 1.0)

    def test_json_round_trip_is_exact(self):
        mdp = random_mdp(4, 3, 0.7321, seed=0)
        clone = Mdp.from_json(mdp.to_json())
        assert np.array_equal(clone.transition, mdp.transition)
        assert np.array_equal(clone.reward, mdp.reward)
        assert clone.gamma == mdp.gamma


class TestPolicyTransitionMatrix:
    def test_deterministic_cycle_gives_permutation(self):
        n = 4
        trans = np.zeros((n, 1, n))
        for s in range(n):
            trans[s, 0, (s + 1) % n] = 1.0
        mdp = Mdp(n, 1, trans, np.zeros((n, 1)), 0.9)
        p = policy_transition_matrix(mdp, Policy(np.ones((n, 1))))
        expected = np.roll(np.eye(n), 1, axis=1)
        assert np.array_equal(p, expected)

    def test_uniform_everything_gives_flat_matrix(self):
        n, a = 3, 2
        mdp = Mdp(n, a, np.full((n, a, n), 1 / n), np.zeros((n, a)), 0.9)
        p = policy_transition_matrix(mdp, Policy.uniform(n, a))
        assert np.allclose(p, 1 / n, atol=1e-15)

    def test_rows_sum_to_one_on_random_input(self):
        mdp = random_mdp(4, 3, 0.8, seed=3)
        p = policy_transition_matrix(mdp, random_policy(4, 3, 4))
        assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12

    def test_shape_mismatch_raises(self):
        mdp = random_mdp(4, 3, 0.8, seed=3)
        with pytest.raises(ValueError, match="shape"):
            policy_transition_matrix(mdp, random_policy(5, 3, 4))


class TestStationaryDistribution:
    def test_doubly_stochastic_two_state(self):
        mu = stationary_distribution(np.array([[0.5, 0.5], [0.5, 0.5]]))
        assert np.allclose(mu, [0.5, 0.5], atol=1e-12)

    def test_asymmetric_two_state(self):
        # mu (P - I) = 0 with sum 1 gives mu = [5/6, 1/6]
        mu = stationary_distribution(np.array([[0.9, 0.1], [0.5, 0.5]]))
        assert np.allclose(mu, [5 / 6, 1 / 6], atol=1e-12)

    def test_periodic_chain_rejected(self):
        perm = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ErgodicityError):
            stationary_distribution(perm)

    def test_reducible_chain_rejected(self):
        with pytest.raises(ErgodicityError):
            stationary_distribution(np.eye(3))

    def test_invariance_residual_on_random_chains(self):
        for seed in range(20):
            mdp = random_mdp(6, 2, 0.9, seed=seed, branching=3)
            p = policy_transition_matrix(mdp, random_policy(6, 2, seed + 100))
            mu = stationary_distribution(p)
            assert np.abs(mu @ p - mu).sum() <= 1e-10
            assert mu.min() > 0


class TestValueFunctionOracle:
    def test_zero_rewards_give_zero_values(self):
        mdp = random_mdp(5, 2, 0.9, seed=1)
        zero = Mdp(5, 2, mdp.transition, np.zeros((5, 2)), 0.9)
        v = value_function_oracle(zero, random_policy(5, 2, 2))
        assert np.allclose(v, 0.0, atol=1e-15)

    def test_single_state_geometric_series(self):
        v = value_function_oracle(single_state_mdp(1.0, 0.9), Policy(np.ones((1, 1))))
        assert v[0] == pytest.approx(10.0, abs=1e-10)

    def test_matches_iterative_policy_evaluation(self):
        mdp = random_mdp(6, 3, 0.85, seed=7)
        policy = random_policy(6, 3, 8)
        v = value_function_oracle(mdp, policy)
        # independent oracle: fixed-point iteration run to 1e-12
        p_pi = policy_transition_matrix(mdp, policy)
        r_pi = reward_under_policy(mdp, policy)
        v_iter = np.zeros(6)
        for _ in range(100_000):
            v_next = r_pi + mdp.gamma * p_pi @ v_iter
            if np.abs(v_next - v_iter).max() <= 1e-12:
                break
            v_iter = v_next
        assert np.abs(v - v_iter).max() <= 1e-8

    def test_bellman_residual_bound(self):
        for seed in range(10):
            mdp = random_mdp(5, 2, 0.9, seed=seed)
            policy = random_policy(5, 2, seed + 50)
            v = value_function_oracle(mdp, policy)
            assert bellman_residual(mdp, policy, v) <= 1e-10
            assert np.abs(v).max() <= 1.0 / (1.0 - mdp.gamma) + 1e-9


class TestQStarOracle:
    def test_single_state_single_action(self):
        q = q_star_oracle(single_state_mdp(1.0, 0.5))
        assert q[0, 0] == pytest.approx(2.0, abs=1e-10)

    def test_single_state_good_and_bad_action(self):
        mdp = single_state_mdp(0.0, 0.5, n_actions=2, rewards=[1.0, 0.0])
        q = q_star_oracle(mdp)
        assert q[0, 0] == pytest.approx(2.0, abs=1e-10)
        assert q[0, 1] == pytest.approx(1.0, abs=1e-10)

    def test_optimality_residual(self):
        mdp = random_mdp(5, 3, 0.9, seed=5)
        assert optimality_residual(mdp, q_star_oracle(mdp)) <= 1e-10

    def test_greedy_policy_beats_random_policies(self):
        mdp = random_mdp(5, 3, 0.85, seed=6)
        v_greedy = value_function_oracle(mdp, greedy_policy(q_star_oracle(mdp)))
        for seed in range(50):
            v_other = value_function_oracle(mdp, random_policy(5, 3, seed))
            assert np.all(v_greedy >= v_other - 1e-9)

    def test_optimality_operator_is_sup_norm_contraction(self):
        mdp = random_mdp(5, 3, 0.9, seed=9)
        rng = np.random.default_rng(10)
        for _ in range(50):
            q1 = rng.standard_normal((5, 3))
            q2 = rng.standard_normal((5, 3))
            lhs = np.abs(
                bellman_optimality_operator(mdp, q1) - bellman_optimality_operator(mdp, q2)
            ).max()
            assert lhs <= mdp.gamma * np.abs(q1 - q2).max() + 1e-12


class TestProjectedFixedPoint:
    def test_identity_features_reproduce_value_function(self):
        mdp = random_mdp(5, 2, 0.8, seed=11)
        policy = random_policy(5, 2, 12)
        v = projected_fixed_point_oracle(mdp, policy, FeatureMatrix.identity(5), n=1)
        assert np.abs(v - value_function_oracle(mdp, policy)).max() <= 1e-8

    def test_zero_rewards_give_zero_weights(self):
        mdp = random_mdp(5, 2, 0.8, seed=13)
        zero = Mdp(5, 2, mdp.transition, np.zeros((5, 2)), 0.8)
        phi = FeatureMatrix(np.linalg.qr(np.random.default_rng(14).standard_normal((5, 2)))[0])
        v = projected_fixed_point_oracle(zero, random_policy(5, 2, 15), phi, n=2)
        assert np.allclose(v, 0.0, atol=1e-12)

    def test_multistep_residual(self):
        mdp = random_mdp(6, 2, 0.85, seed=16)
        policy = random_policy(6, 2, 17)
        phi = FeatureMatrix(np.linalg.qr(np.random.default_rng(18).standard_normal((6, 2)))[0])
        v = projected_fixed_point_oracle(mdp, policy, phi, n=2)
        assert projected_fixed_point_residual(mdp, policy, phi, 2, v) <= 1e-8

    def test_rank_deficient_features_rejected(self):
        phi = np.ones((4, 2))  # duplicate columns
        with pytest.raises(ValueError, match="rank"):
            FeatureMatrix(phi)


class TestImportanceRatios:
    def test_identical_policies_give_one(self):
        pi = random_policy(3, 2, 20)
        table = importance_ratio_table(pi, pi)
        assert np.allclose(table, 1.0, atol=1e-15)

    def test_direct_ratio(self):
        target = Policy(np.array([[0.6, 0.4]]))
        behavior = Policy(np.array([[0.3, 0.7]]))
        assert importance_ratio(target, behavior, 0, 0) == pytest.approx(2.0, abs=1e-15)

    def test_coverage_violation_raises(self):
        target = Policy(np.array([[0.6, 0.4]]))
        behavior = Policy(np.array([[1.0, 0.0]]))
        with pytest.raises(CoverageError):
            importance_ratio(target, behavior, 0, 1)
        with pytest.raises(CoverageError):
            importance_ratio_table(target, behavior)

    def test_reweighting_identity_by_enumeration(self):
        # sum_a behavior(a|s) ratio(s,a) f(a) == sum_a target(a|s) f(a)
        target = random_policy(4, 3, 21)
        behavior = random_policy(4, 3, 22)
        table = importance_ratio_table(target, behavior)
        f = np.random.default_rng(23).standard_normal(3)
        for s in range(4):
            lhs = float((behavior.probs[s] * table[s] * f).sum())
            rhs = float((target.probs[s] * f).sum())
            assert abs(lhs - rhs) <= 1e-14

    def test_max_ratio_over_agents(self):
        target = Policy(np.array([[0.6, 0.4]]))
        behaviors = [Policy(np.array([[0.3, 0.7]])), Policy(np.array([[0.2, 0.8]]))]
        assert importance_ratio_max(target, behaviors) == pytest.approx(3.0, abs=1e-12)
