"""Finite MDPs, policy algebra, and exact fixed-point solvers.

Everything here is deterministic linear algebra on dense arrays; these
solvers are the ground truth that the stochastic algorithms are checked
against. Conventions: transition[s, a, s'] = P(s'|s,a), reward[s, a] in
[0, 1], policies indexed probs[s, a].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, ErgodicityError

ROW_SUM_TOL = 1e-12
RANK_TOL = 1e-10


def _check_rows_stochastic(mat: np.ndarray, what: str) -> None:
    if np.any(mat < 0):
        raise ValueError(f"{what} has negative entries")
    row_sums = mat.sum(axis=-1)
    if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
        raise ValueError(f"{what} rows must sum to 1 within {ROW_SUM_TOL}")


@dataclass(frozen=True)
class Mdp:
    """Finite MDP (states, actions, kernel, bounded reward, discount)."""

    n_states: int
    n_actions: int
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        if self.transition.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(
                f"transition shape {self.transition.shape} != "
                f"({self.n_states}, {self.n_actions}, {self.n_states})"
            )
        if self.reward.shape != (self.n_states, self.n_actions):
            raise ValueError(f"reward shape {self.reward.shape} != ({self.n_states}, {self.n_actions})")
        _check_rows_stochastic(self.transition, "transition kernel")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    def to_json(self) -> str:
        payload = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Mdp":
        data = json.loads(text)
        return cls(
            n_states=data["n_states"],
            n_actions=data["n_actions"],
            transition=np.array(data["transition"], dtype=float),
            reward=np.array(data["reward"], dtype=float),
            gamma=data["gamma"],
        )


@dataclass(frozen=True)
class Policy:
    """Stochastic action-selection table probs[s, a]."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if self.probs.ndim != 2:
            raise ValueError("policy table must be 2-dimensional")
        _check_rows_stochastic(self.probs, "policy table")

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True)
class FeatureMatrix:
    """Full-column-rank |S| x d feature table, one row per state."""

    phi: np.ndarray
    d: int = field(default=-1)

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        if self.phi.ndim != 2:
            raise ValueError("feature table must be 2-dimensional")
        d = self.phi.shape[1] if self.d == -1 else self.d
        object.__setattr__(self, "d", d)
        if d != self.phi.shape[1]:
            raise ValueError("d does not match feature table width")
        if d > self.phi.shape[0]:
            raise ValueError("feature dimension d must not exceed the number of states")
        if np.linalg.matrix_rank(self.phi, tol=RANK_TOL) < d:
            raise ValueError("feature table does not have full column rank")

    @classmethod
    def identity(cls, n_states: int) -> "FeatureMatrix":
        return cls(np.eye(n_states))


def policy_transition_matrix(mdp: Mdp, policy: Policy) -> np.ndarray:
    """State transition matrix induced by a policy: P[s, s'] = sum_a P(s'|s,a) pi(a|s)."""
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )
    return np.einsum("sap,sa->sp", mdp.transition, policy.probs)


def reward_under_policy(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Expected one-step reward per state: r[s] = sum_a pi(a|s) R(s,a)."""
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def stationary_distribution(p_pi: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    Solved directly from (P^T - I) mu = 0 with the normalization row, then
    cross-checked against power iteration started off-center so that periodic
    or reducible chains are detected instead of silently accepted.
    """
    p_pi = np.asarray(p_pi, dtype=float)
    _check_rows_stochastic(p_pi, "transition matrix")
    n = p_pi.shape[0]

    system = p_pi.T - np.eye(n)
    system[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        mu = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise ErgodicityError(f"stationary system is singular: {exc}") from exc

    # Off-center start: a uniform start is invariant for doubly stochastic
    # periodic chains and would mask the oscillation.
    probe = np.full(n, 1.0 / (2 * n))
    probe[0] += 0.5
    converged = False
    for _ in range(200_000):
        nxt = probe @ p_pi
        if np.abs(nxt - probe).sum() <= 1e-13:
            probe = nxt
            converged = True
            break
        probe = nxt
    if not converged:
        raise ErgodicityError("power iteration did not converge (chain appears periodic)")
    if np.abs(mu - probe).max() > 1e-8:
        raise ErgodicityError(
            "linear solve and power iteration disagree "
            f"(max gap {np.abs(mu - probe).max():.3e}); chain appears non-ergodic"
        )
    if np.any(mu <= 1e-12):
        raise ErgodicityError("stationary distribution has (near-)zero mass states")
    return mu


def value_function_oracle(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Exact V^pi = (I - gamma P^pi)^{-1} r^pi."""
    p_pi = policy_transition_matrix(mdp, policy)
    r_pi = reward_under_policy(mdp, policy)
    try:
        v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    except np.linalg.LinAlgError as exc:  # cannot happen for gamma < 1; guard anyway
        raise ArithmeticError(f"(I - gamma P^pi) is singular: {exc}") from exc
    return v


def bellman_residual(mdp: Mdp, policy: Policy, v: np.ndarray) -> float:
    """Sup-norm residual of the policy Bellman equation at v."""
    p_pi = policy_transition_matrix(mdp, policy)
    r_pi = reward_under_policy(mdp, policy)
    return float(np.abs(r_pi + mdp.gamma * p_pi @ v - v).max())


def bellman_optimality_operator(mdp: Mdp, q: np.ndarray) -> np.ndarray:
    """T*(Q)(s,a) = R(s,a) + gamma E_{s'}[max_a' Q(s',a')]."""
    return mdp.reward + mdp.gamma * mdp.transition @ q.max(axis=1)


def q_star_oracle(mdp: Mdp, residual_tol: float = 1e-10) -> np.ndarray:
    """Optimal Q-table by value iteration.

    Stops once successive iterates are within (1-gamma) * residual_tol / (2 gamma),
    which guarantees a Bellman-optimality residual below residual_tol.
    """
    stop = (1.0 - mdp.gamma) * residual_tol / (2.0 * mdp.gamma)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(10_000_000):
        q_next = bellman_optimality_operator(mdp, q)
        if np.abs(q_next - q).max() <= stop:
            return q_next
        q = q_next
    raise ArithmeticError("value iteration failed to reach the stopping threshold")


def optimality_residual(mdp: Mdp, q: np.ndarray) -> float:
    return float(np.abs(bellman_optimality_operator(mdp, q) - q).max())


def n_step_reward(mdp: Mdp, policy: Policy, n: int) -> np.ndarray:
    """r^(n) = sum_{l=0}^{n-1} gamma^l (P^pi)^l r^pi."""
    p_pi = policy_transition_matrix(mdp, policy)
    r_pi = reward_under_policy(mdp, policy)
    acc = np.zeros(mdp.n_states)
    term = r_pi.copy()
    for _ in range(n):
        acc += term
        term = mdp.gamma * (p_pi @ term)
    return acc


def projection_matrix(features: FeatureMatrix, mu: np.ndarray) -> np.ndarray:
    """Weighted projection onto the feature span: Phi (Phi^T M Phi)^{-1} Phi^T M."""
    phi = features.phi
    m_phi = mu[:, None] * phi
    gram = phi.T @ m_phi
    try:
        inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"projection Gram matrix Phi^T M Phi is singular: {exc}") from exc
    return phi @ inv @ m_phi.T


def projected_fixed_point_oracle(
    mdp: Mdp, policy: Policy, features: FeatureMatrix, n: int = 1
) -> np.ndarray:
    """Solution v of the projected n-step fixed-point equation.

    Derivation: eliminating the projection from Phi v = Proj((T^pi)^n Phi v)
    leaves the d x d linear system
        Phi^T M (I - gamma^n (P^pi)^n) Phi v = Phi^T M r^(n),
    with M = diag(mu^pi). The solution is verified against the projected
    operator directly before being returned.
    """
    if n < 1:
        raise ValueError("step count n must be >= 1")
    p_pi = policy_transition_matrix(mdp, policy)
    mu = stationary_distribution(p_pi)
    phi = features.phi
    p_n = np.linalg.matrix_power(p_pi, n)
    m_phi = mu[:, None] * phi
    lhs = m_phi.T @ (phi - (mdp.gamma ** n) * (p_n @ phi))
    rhs = m_phi.T @ n_step_reward(mdp, policy, n)
    try:
        v = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(
            f"projected system Phi^T M (I - gamma^n P^n) Phi is singular: {exc}"
        ) from exc
    resid = projected_fixed_point_residual(mdp, policy, features, n, v, mu=mu)
    if resid > 1e-8:
        raise ArithmeticError(f"projected fixed-point residual {resid:.3e} exceeds 1e-8")
    return v


def projected_fixed_point_residual(
    mdp: Mdp,
    policy: Policy,
    features: FeatureMatrix,
    n: int,
    v: np.ndarray,
    mu: np.ndarray | None = None,
) -> float:
    """Euclidean residual ||Phi v - Proj((T^pi)^n Phi v)||."""
    p_pi = policy_transition_matrix(mdp, policy)
    if mu is None:
        mu = stationary_distribution(p_pi)
    phi = features.phi
    bellman_n = n_step_reward(mdp, policy, n) + (mdp.gamma ** n) * (
        np.linalg.matrix_power(p_pi, n) @ (phi @ v)
    )
    proj = projection_matrix(features, mu)
    return float(np.linalg.norm(phi @ v - proj @ bellman_n))


def greedy_policy(q: np.ndarray) -> Policy:
    """Deterministic policy picking argmax_a Q(s,a), lowest index on ties."""
    q = np.asarray(q, dtype=float)
    probs = np.zeros_like(q)
    probs[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
    return Policy(probs)


def importance_ratio(target: Policy, behavior: Policy, s: int, a: int) -> float:
    """pi(a|s) / pi_b(a|s), guarding against missing coverage."""
    num = target.probs[s, a]
    den = behavior.probs[s, a]
    if den == 0.0:
        if num > 0.0:
            raise CoverageError(f"behavior policy has zero mass at (s={s}, a={a}) where target does not")
        return 0.0
    return float(num / den)


def importance_ratio_table(target: Policy, behavior: Policy) -> np.ndarray:
    """Full |S| x A table of importance ratios."""
    bad = (behavior.probs == 0.0) & (target.probs > 0.0)
    if np.any(bad):
        s, a = np.argwhere(bad)[0]
        raise CoverageError(f"behavior policy has zero mass at (s={s}, a={a}) where target does not")
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(behavior.probs > 0.0, target.probs / behavior.probs, 0.0)
    return table


def importance_ratio_max(target: Policy, behaviors: list[Policy]) -> float:
    """Largest importance ratio over all (s, a) pairs and all agents."""
    return max(float(importance_ratio_table(target, b).max()) for b in behaviors)
