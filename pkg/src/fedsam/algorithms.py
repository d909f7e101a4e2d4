"""The three federated RL algorithms as instances of the generic loop.

Each algorithm exists in two equivalent forms: the raw production update on
the estimate itself (value vector, tabular value function, or Q-table), and
the shifted form theta = estimate - fixed point that plugs into the engine,
where zero is the common fixed point. `build_problem` emits the shifted
form; the raw updates below are what a deployment would run and are kept for
cross-checking the reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import NORM_L2, NORM_SUP, FedSamProblem
from .errors import ErgodicityError
from .mdp import (
    FeatureMatrix,
    Mdp,
    Policy,
    importance_ratio,
    importance_ratio_max,
    importance_ratio_table,
    policy_transition_matrix,
    projected_fixed_point_oracle,
    q_star_oracle,
    stationary_distribution,
    value_function_oracle,
)
from .sampling import AgentChain, MixingEstimate, init_chain, mixing_diagnostics, state_action_kernel

ON_POLICY_TD_LFA = "on_policy_td_lfa"
OFF_POLICY_TD_TABULAR = "off_policy_td_tabular"
Q_LEARNING = "q_learning"
KINDS = (ON_POLICY_TD_LFA, OFF_POLICY_TD_TABULAR, Q_LEARNING)

_BETA_MARGIN = 0.01


# ---------------------------------------------------------------------------
# Raw production updates
# ---------------------------------------------------------------------------

def onpolicy_td_update(
    v: np.ndarray,
    states: np.ndarray,
    actions: np.ndarray,
    features: FeatureMatrix,
    mdp: Mdp,
    alpha: float,
) -> np.ndarray:
    """Multi-step TD update of the weight vector under linear features.

    v' = v + a * phi(S_t) * sum_l gamma^{l-t} (R_l + gamma phi(S_{l+1})'v - phi(S_l)'v).
    """
    phi = features.phi
    if v.shape != (phi.shape[1],):
        raise ValueError(f"weight vector has dim {v.shape}, features expect ({phi.shape[1]},)")
    n = len(actions)
    gamma = mdp.gamma
    acc = 0.0
    g_pow = 1.0
    for l in range(n):
        s, a, s2 = int(states[l]), int(actions[l]), int(states[l + 1])
        acc += g_pow * (mdp.reward[s, a] + gamma * (phi[s2] @ v) - (phi[s] @ v))
        g_pow *= gamma
    return v + alpha * acc * phi[int(states[0])]


def offpolicy_td_update(
    values: np.ndarray,
    states: np.ndarray,
    actions: np.ndarray,
    target: Policy,
    behavior: Policy,
    mdp: Mdp,
    alpha: float,
) -> np.ndarray:
    """Tabular n-step TD update reweighted by the running importance product.

    Only the entry at S_t changes; all other states keep their value.
    """
    out = values.copy()
    gamma = mdp.gamma
    acc = 0.0
    g_pow = 1.0
    ratio_prod = 1.0
    for l in range(len(actions)):
        s, a, s2 = int(states[l]), int(actions[l]), int(states[l + 1])
        ratio_prod *= importance_ratio(target, behavior, s, a)
        acc += g_pow * ratio_prod * (mdp.reward[s, a] + gamma * values[s2] - values[s])
        g_pow *= gamma
    out[int(states[0])] += alpha * acc
    return out


def q_learning_update(
    q: np.ndarray, s: int, a: int, s_next: int, mdp: Mdp, alpha: float
) -> np.ndarray:
    """One-transition Q-table update; only entry (s, a) changes."""
    out = q.copy()
    out[s, a] += alpha * (mdp.reward[s, a] + mdp.gamma * q[s_next].max() - q[s, a])
    return out


# ---------------------------------------------------------------------------
# Algorithm instances
# ---------------------------------------------------------------------------

@dataclass
class AlgorithmInstance:
    """A concrete problem: environment, policies, features, and its oracle.

    Derived fields (fixed point, stationary distributions, mixing, beta) are
    computed once at construction; treat instances as immutable afterwards.
    """

    kind: str
    mdp: Mdp
    target: Policy
    behaviors: list[Policy]
    n_step: int = 1
    features: FeatureMatrix | None = None
    xi: np.ndarray | None = None
    beta: float | None = None
    fixed_point: np.ndarray = field(init=False)
    stationary: list[np.ndarray] = field(init=False)
    p_target: np.ndarray = field(init=False)
    mixing: MixingEstimate = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown algorithm kind {self.kind!r}")
        if not self.behaviors:
            raise ValueError("need at least one behavior policy")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if self.kind == Q_LEARNING and self.n_step != 1:
            raise ValueError("q_learning uses single transitions (n_step must be 1)")
        if self.xi is None:
            self.xi = np.full(self.mdp.n_states, 1.0 / self.mdp.n_states)
        self.p_target = policy_transition_matrix(self.mdp, self.target)

        if self.kind == ON_POLICY_TD_LFA:
            if self.features is None:
                raise ValueError("linear function approximation needs a feature matrix")
            for b in self.behaviors:
                if not np.array_equal(b.probs, self.target.probs):
                    raise ValueError("on-policy instances must sample with the target policy")
            self.fixed_point = projected_fixed_point_oracle(
                self.mdp, self.target, self.features, self.n_step
            )
        elif self.kind == OFF_POLICY_TD_TABULAR:
            for b in self.behaviors:
                importance_ratio_table(self.target, b)  # coverage check
            self.fixed_point = value_function_oracle(self.mdp, self.target)
        else:
            # tighter than the default so the shifted noise has a vanishing
            # stationary mean well below the property tolerances
            self.fixed_point = q_star_oracle(self.mdp, residual_tol=1e-13)

        self.stationary = [
            stationary_distribution(policy_transition_matrix(self.mdp, b)) for b in self.behaviors
        ]
        if self.kind == Q_LEARNING:
            # the noise process lives on (s, a) pairs
            mixes = [mixing_diagnostics(state_action_kernel(self.mdp, b)) for b in self.behaviors]
        else:
            mixes = [mixing_diagnostics(policy_transition_matrix(self.mdp, b)) for b in self.behaviors]
        worst = max(mixes, key=lambda m: m.rho)
        self.mixing = MixingEstimate(rho=worst.rho, m_bar=max(m.m_bar for m in mixes))

        if self.kind == ON_POLICY_TD_LFA and self.beta is None:
            self.beta = select_beta(self.expected_update_matrix())

    @property
    def n_agents(self) -> int:
        return len(self.behaviors)

    @property
    def dim(self) -> int:
        if self.kind == ON_POLICY_TD_LFA:
            return self.features.d
        if self.kind == OFF_POLICY_TD_TABULAR:
            return self.mdp.n_states
        return self.mdp.n_states * self.mdp.n_actions

    @property
    def norm_kind(self) -> str:
        return NORM_L2 if self.kind == ON_POLICY_TD_LFA else NORM_SUP

    def flat_fixed_point(self) -> np.ndarray:
        return np.asarray(self.fixed_point, dtype=float).reshape(-1)

    def expected_update_matrix(self) -> np.ndarray:
        """U = Phi' M (gamma^n P^n - I) Phi, the mean drift direction for LFA."""
        if self.kind != ON_POLICY_TD_LFA:
            raise ValueError("expected_update_matrix applies to linear-FA instances only")
        phi = self.features.phi
        mu = stationary_distribution(self.p_target)
        p_n = np.linalg.matrix_power(self.p_target, self.n_step)
        return phi.T @ (mu[:, None] * ((self.mdp.gamma ** self.n_step) * (p_n @ phi) - phi))


def select_beta(u_matrix: np.ndarray, margin: float = _BETA_MARGIN) -> float:
    """Smallest power of two making rho(I + U/beta) <= 1 - margin.

    Powers of two keep the 1/beta inside the operators and the beta-scaled
    engine step exactly inverse in binary floating point.
    """
    eigs = np.linalg.eigvals(u_matrix)
    for k in range(-10, 80):
        beta = 2.0 ** k
        if np.abs(1.0 + eigs / beta).max() <= 1.0 - margin:
            return beta
    raise ArithmeticError("no power-of-two beta meets the spectral-radius margin")


def spectral_radius_at_beta(instance: AlgorithmInstance, beta: float | None = None) -> float:
    """rho(I + U/beta) for the instance's mean update matrix."""
    beta = instance.beta if beta is None else beta
    eigs = np.linalg.eigvals(instance.expected_update_matrix())
    return float(np.abs(1.0 + eigs / beta).max())


# ---------------------------------------------------------------------------
# Reduction to the generic loop (shifted coordinates)
# ---------------------------------------------------------------------------

class _WindowNoise:
    """Noise process view of an agent chain: step() yields the current window."""

    def __init__(self, chain: AgentChain):
        self.chain = chain

    def step(self) -> tuple[np.ndarray, np.ndarray]:
        y = self.chain.window()
        self.chain.advance()
        return y


def build_problem(instance: AlgorithmInstance) -> FedSamProblem:
    """Shifted-coordinate problem: theta = estimate - fixed point.

    The operators follow the algebraic reduction of each update rule; running
    the result through the engine and adding the fixed point back reproduces
    the raw update trajectory exactly (up to float reassociation).
    """
    if instance.kind == ON_POLICY_TD_LFA:
        return _build_lfa_problem(instance)
    if instance.kind == OFF_POLICY_TD_TABULAR:
        return _build_offpolicy_problem(instance)
    return _build_q_problem(instance)


def _make_noise_factory(instance: AlgorithmInstance, window_n: int):
    def make_noise(agent_id: int, rng: np.random.Generator) -> _WindowNoise:
        chain = init_chain(
            instance.mdp,
            instance.behaviors[agent_id],
            instance.xi,
            window_n,
            rng,
            agent_id=agent_id,
        )
        return _WindowNoise(chain)

    return make_noise


def _build_lfa_problem(instance: AlgorithmInstance) -> FedSamProblem:
    mdp, features, n = instance.mdp, instance.features, instance.n_step
    phi = features.phi
    gamma, beta = mdp.gamma, float(instance.beta)
    gamma_n = gamma ** n
    inv_beta = 1.0 / beta
    v_pi = instance.fixed_point

    def apply_g(_i: int, theta: np.ndarray, y) -> np.ndarray:
        states, _ = y
        s0, sn = int(states[0]), int(states[-1])
        scale = gamma_n * (phi[sn] @ theta) - (phi[s0] @ theta)
        return theta + (inv_beta * scale) * phi[s0]

    def apply_b(_i: int, y) -> np.ndarray:
        states, actions = y
        acc = 0.0
        g_pow = 1.0
        for l in range(n):
            s, a, s2 = int(states[l]), int(actions[l]), int(states[l + 1])
            acc += g_pow * (mdp.reward[s, a] + gamma * (phi[s2] @ v_pi) - (phi[s] @ v_pi))
            g_pow *= gamma
        return (inv_beta * acc) * phi[int(states[0])]

    return FedSamProblem(
        dim=instance.dim,
        n_agents=instance.n_agents,
        apply_g=apply_g,
        apply_b=apply_b,
        make_noise=_make_noise_factory(instance, n),
        norm_kind=NORM_L2,
        expected_g=lambda i, theta: expected_operator(instance, theta, agent=i),
        initial_theta=-v_pi,
        step_scale=beta,
    )


def _build_offpolicy_problem(instance: AlgorithmInstance) -> FedSamProblem:
    mdp, n = instance.mdp, instance.n_step
    gamma = mdp.gamma
    v_pi = instance.fixed_point
    ratios = [importance_ratio_table(instance.target, b) for b in instance.behaviors]

    def apply_g(i: int, theta: np.ndarray, y) -> np.ndarray:
        states, actions = y
        out = theta.copy()
        table = ratios[i]
        acc = 0.0
        g_pow = 1.0
        prod = 1.0
        for l in range(n):
            s, a, s2 = int(states[l]), int(actions[l]), int(states[l + 1])
            prod *= table[s, a]
            acc += g_pow * prod * (gamma * theta[s2] - theta[s])
            g_pow *= gamma
        out[int(states[0])] += acc
        return out

    def apply_b(i: int, y) -> np.ndarray:
        states, actions = y
        out = np.zeros(mdp.n_states)
        table = ratios[i]
        acc = 0.0
        g_pow = 1.0
        prod = 1.0
        for l in range(n):
            s, a, s2 = int(states[l]), int(actions[l]), int(states[l + 1])
            prod *= table[s, a]
            acc += g_pow * prod * (mdp.reward[s, a] + gamma * v_pi[s2] - v_pi[s])
            g_pow *= gamma
        out[int(states[0])] = acc
        return out

    return FedSamProblem(
        dim=instance.dim,
        n_agents=instance.n_agents,
        apply_g=apply_g,
        apply_b=apply_b,
        make_noise=_make_noise_factory(instance, n),
        norm_kind=NORM_SUP,
        expected_g=lambda i, theta: expected_operator(instance, theta, agent=i),
        initial_theta=-v_pi,
    )


def _build_q_problem(instance: AlgorithmInstance) -> FedSamProblem:
    mdp = instance.mdp
    gamma = mdp.gamma
    n_actions = mdp.n_actions
    q_star = instance.fixed_point
    q_star_max = q_star.max(axis=1)
    # b depends on (s, a, s') only; precompute the whole table
    b_table = mdp.reward[:, :, None] + gamma * q_star_max[None, None, :] - q_star[:, :, None]

    def apply_g(_i: int, theta: np.ndarray, y) -> np.ndarray:
        states, actions = y
        s, a, s2 = int(states[0]), int(actions[0]), int(states[1])
        out = theta.copy()
        shifted_max = (theta[s2 * n_actions:(s2 + 1) * n_actions] + q_star[s2]).max()
        out[s * n_actions + a] += gamma * shifted_max - theta[s * n_actions + a] - gamma * q_star_max[s2]
        return out

    def apply_b(_i: int, y) -> np.ndarray:
        states, actions = y
        s, a, s2 = int(states[0]), int(actions[0]), int(states[1])
        out = np.zeros(mdp.n_states * n_actions)
        out[s * n_actions + a] = b_table[s, a, s2]
        return out

    return FedSamProblem(
        dim=instance.dim,
        n_agents=instance.n_agents,
        apply_g=apply_g,
        apply_b=apply_b,
        make_noise=_make_noise_factory(instance, 1),
        norm_kind=NORM_SUP,
        expected_g=lambda i, theta: expected_operator(instance, theta, agent=i),
        initial_theta=-q_star.reshape(-1),
    )


# ---------------------------------------------------------------------------
# Expected operators (exact, no sampling)
# ---------------------------------------------------------------------------

def expected_operator(instance: AlgorithmInstance, theta: np.ndarray, agent: int = 0) -> np.ndarray:
    """Stationary expectation of the shifted noisy operator, by matrix algebra."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (instance.dim,):
        raise ValueError(f"theta must have shape ({instance.dim},)")
    mdp = instance.mdp
    gamma = mdp.gamma

    if instance.kind == ON_POLICY_TD_LFA:
        phi = instance.features.phi
        mu = instance.stationary[agent]
        p_n = np.linalg.matrix_power(instance.p_target, instance.n_step)
        drift = (gamma ** instance.n_step) * (p_n @ (phi @ theta)) - phi @ theta
        return theta + (1.0 / instance.beta) * (phi.T @ (mu * drift))

    if instance.kind == OFF_POLICY_TD_TABULAR:
        mu = instance.stationary[agent]
        p_n = np.linalg.matrix_power(instance.p_target, instance.n_step)
        return theta + (gamma ** instance.n_step) * (mu * (p_n @ theta)) - mu * theta

    # q_learning
    n_actions = mdp.n_actions
    th = theta.reshape(mdp.n_states, n_actions)
    q_star = instance.fixed_point
    mu_sa = instance.stationary[agent][:, None] * instance.behaviors[agent].probs
    shifted_max = (th + q_star).max(axis=1)  # over a', per next state
    plain_max = q_star.max(axis=1)
    exp_next = mdp.transition @ (shifted_max - plain_max)  # (S, A)
    return (th + mu_sa * (gamma * exp_next - th)).reshape(-1)


# ---------------------------------------------------------------------------
# Theory constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoryConstants:
    """Contraction, Lipschitz, and rate constants for one instance."""

    kind: str
    gamma_c: float
    a1: float
    a2: float
    b_bound: float
    mu_min: float
    phi: float
    imax: float | None = None
    beta: float | None = None
    spectral_radius: float | None = None

    def c_out(self, alpha: float) -> float:
        """Output-sampling constant 1 - alpha*phi/2 for an engine step size alpha."""
        return 1.0 - alpha * self.phi / 2.0

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "gamma_c": self.gamma_c,
            "a1": self.a1,
            "a2": self.a2,
            "b_bound": self.b_bound,
            "mu_min": self.mu_min,
            "phi": self.phi,
        }
        if self.imax is not None:
            out["imax"] = self.imax
        if self.beta is not None:
            out["beta"] = self.beta
            out["spectral_radius"] = self.spectral_radius
        return out


def rate_constant(x: float) -> float:
    """Rate constant of the output-weighting scheme, as a function of x = 1 - gamma_c.

    phi = 1 - 0.5 e^{1/4} (2-x) / sqrt(sqrt(e) - 1 + ((2-x)/(2-2x))^2); tends
    to 0 as x -> 0 and stays real for x in [0, 1).
    """
    if not 0.0 <= x < 1.0:
        raise ValueError("x must lie in [0, 1)")
    num = 0.5 * math.exp(0.25) * (2.0 - x)
    den = math.sqrt(math.sqrt(math.e) - 1.0 + ((2.0 - x) / (2.0 - 2.0 * x)) ** 2)
    return 1.0 - num / den


def _geometric_span(factor: float, n: int) -> float:
    """sum_{l=0}^{n-1} factor^l, with the exact-n branch at factor == 1."""
    if factor == 1.0:
        return float(n)
    return (1.0 - factor ** n) / (1.0 - factor)


def td_contraction_factor(mu_min: float, gamma: float, n: int) -> float:
    """Sup-norm contraction factor of multi-step tabular TD: 1 - mu_min (1 - gamma^{n+1})."""
    return 1.0 - mu_min * (1.0 - gamma ** (n + 1))


def q_contraction_factor(mu_min: float, gamma: float) -> float:
    """Sup-norm contraction factor of Q-learning: 1 - (1 - gamma) mu_min."""
    return 1.0 - (1.0 - gamma) * mu_min


def offpolicy_td_lipschitz(imax: float, gamma: float, n: int) -> float:
    """A1 = A2 for multi-step importance-weighted TD: 1 + (1+gamma) * span(gamma*imax, n)."""
    return 1.0 + (1.0 + gamma) * _geometric_span(gamma * imax, n)


def offpolicy_td_noise_bound(imax: float, gamma: float, n: int) -> float:
    """B for multi-step importance-weighted TD: (2 imax / (1-gamma)) * span(gamma*imax, n)."""
    return (2.0 * imax / (1.0 - gamma)) * _geometric_span(gamma * imax, n)


def theory_constants(instance: AlgorithmInstance) -> TheoryConstants:
    """All rate/bound constants for the instance's assumptions.

    Tabular kinds use the closed forms; for linear FA the contraction factor
    comes from the spectral condition at the selected beta, while A1/A2/B are
    measured bounds (exact per-window enumeration over state pairs plus a
    worst-case temporal-difference bound), recorded with no theoretical claim.
    """
    mdp = instance.mdp
    gamma = mdp.gamma

    if instance.kind == OFF_POLICY_TD_TABULAR:
        mu_min = min(float(mu.min()) for mu in instance.stationary)
        if mu_min <= 0:
            raise ErgodicityError("mu_min must be positive")
        imax = importance_ratio_max(instance.target, instance.behaviors)
        lip = offpolicy_td_lipschitz(imax, gamma, instance.n_step)
        return TheoryConstants(
            kind=instance.kind,
            gamma_c=td_contraction_factor(mu_min, gamma, instance.n_step),
            a1=lip,
            a2=lip,
            b_bound=offpolicy_td_noise_bound(imax, gamma, instance.n_step),
            mu_min=mu_min,
            phi=rate_constant(mu_min * (1.0 - gamma ** (instance.n_step + 1))),
            imax=imax,
        )

    if instance.kind == Q_LEARNING:
        mu_min = min(
            float((mu[:, None] * b.probs).min())
            for mu, b in zip(instance.stationary, instance.behaviors)
        )
        if mu_min <= 0:
            raise ErgodicityError("mu_min must be positive")
        return TheoryConstants(
            kind=instance.kind,
            gamma_c=q_contraction_factor(mu_min, gamma),
            a1=2.0,
            a2=2.0,
            b_bound=2.0 / (1.0 - gamma),
            mu_min=mu_min,
            phi=rate_constant(mu_min * (1.0 - gamma)),
        )

    # linear function approximation
    mu = instance.stationary[0]
    mu_min = float(mu.min())
    if mu_min <= 0:
        raise ErgodicityError("mu_min must be positive")
    eigs = np.linalg.eigvals(instance.expected_update_matrix())
    lam_max = float(np.abs(eigs).max())
    delta = float(-np.real(eigs).max())
    if delta <= 0:
        raise ArithmeticError("mean update matrix must have strictly negative real spectrum")
    gamma_c = 1.0 - delta**2 / (8.0 * lam_max**2)
    a_bound, b_bound = _lfa_sampled_bounds(instance)
    return TheoryConstants(
        kind=instance.kind,
        gamma_c=gamma_c,
        a1=a_bound,
        a2=a_bound,
        b_bound=b_bound,
        mu_min=mu_min,
        phi=1.0 - gamma_c,
        beta=float(instance.beta),
        spectral_radius=spectral_radius_at_beta(instance),
    )


def _lfa_sampled_bounds(instance: AlgorithmInstance) -> tuple[float, float]:
    """Measured Lipschitz and noise bounds for the linear-FA operators.

    G(., y) is linear with matrix I + (1/beta) phi(s0)(gamma^n phi(sn) - phi(s0))',
    so its exact Lipschitz constant per window is a 2-norm over (s0, sn) pairs.
    The noise bound multiplies the worst single-step temporal difference by
    the discount span, a valid upper bound for every window.
    """
    mdp, features, n = instance.mdp, instance.features, instance.n_step
    phi = features.phi
    gamma, beta = mdp.gamma, float(instance.beta)
    dim = features.d
    a_bound = 0.0
    for s0 in range(mdp.n_states):
        for sn in range(mdp.n_states):
            mat = np.eye(dim) + np.outer(phi[s0], (gamma**n) * phi[sn] - phi[s0]) / beta
            a_bound = max(a_bound, float(np.linalg.norm(mat, 2)))
    v_pi = instance.fixed_point
    values = phi @ v_pi
    td_max = 0.0
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            worst_next = float(np.abs(mdp.reward[s, a] + gamma * values - values[s]).max())
            td_max = max(td_max, worst_next)
    phi_norm_max = float(np.linalg.norm(phi, axis=1).max())
    b_bound = phi_norm_max * _geometric_span(gamma, n) * td_max / beta
    return a_bound, b_bound


# ---------------------------------------------------------------------------
# Raw single-node runner (production path)
# ---------------------------------------------------------------------------

def run_single_node(
    instance: AlgorithmInstance,
    alpha: float,
    horizon: int,
    rng: np.random.Generator,
    agent: int = 0,
) -> np.ndarray:
    """Run the raw update for one agent; returns the final estimate."""
    mdp = instance.mdp
    window_n = 1 if instance.kind == Q_LEARNING else instance.n_step
    chain = init_chain(mdp, instance.behaviors[agent], instance.xi, window_n, rng, agent)
    if instance.kind == ON_POLICY_TD_LFA:
        est = np.zeros(instance.features.d)
        for _ in range(horizon):
            states, actions = chain.window()
            chain.advance()
            est = onpolicy_td_update(est, states, actions, instance.features, mdp, alpha)
        return est
    if instance.kind == OFF_POLICY_TD_TABULAR:
        est = np.zeros(mdp.n_states)
        behavior = instance.behaviors[agent]
        for _ in range(horizon):
            states, actions = chain.window()
            chain.advance()
            est = offpolicy_td_update(est, states, actions, instance.target, behavior, mdp, alpha)
        return est
    est = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(horizon):
        states, actions = chain.window()
        chain.advance()
        est = q_learning_update(est, int(states[0]), int(actions[0]), int(states[1]), mdp, alpha)
    return est
