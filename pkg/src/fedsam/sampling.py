"""Markovian trajectory generation and mixing-rate diagnostics.

Each agent owns a seeded counter-based random stream (Philox), derived by
hashing (master seed, tag, agent id, ...) through numpy's SeedSequence, so
trajectories are reproducible and independent of worker scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ErgodicityError
from .mdp import Mdp, Policy

# Stream tags keep the independent random streams of one run disjoint.
TAG_NOISE = 1
TAG_OUTPUT_TIME = 2
TAG_PROBE = 3


def stream(master_seed: int, *ids: int) -> np.random.Generator:
    """Counter-based generator for the (master_seed, *ids) key."""
    seq = np.random.SeedSequence(entropy=(int(master_seed),) + tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(seq))


def _cumulative(rows: np.ndarray) -> np.ndarray:
    """Row-wise CDF with the last entry pinned to 1.0 for clean inversion."""
    cum = np.cumsum(rows, axis=-1)
    cum[..., -1] = 1.0
    return cum


def _draw(cum_row: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cum_row, u, side="right"))


@dataclass
class AgentChain:
    """Sliding window over one agent's trajectory.

    Holds the last n+1 states and n actions (S_t..S_{t+n}, A_t..A_{t+n-1});
    `advance` samples one more transition and shifts the window. Owned by a
    single worker at a time. Sampling goes through cached cumulative tables
    (inverse CDF), one uniform draw per action and per state.
    """

    agent_id: int
    mdp: Mdp
    behavior: Policy
    states: np.ndarray  # (n+1,) ints
    actions: np.ndarray  # (n,) ints
    rng: np.random.Generator
    _policy_cum: np.ndarray = field(repr=False, default=None)
    _trans_cum: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self._policy_cum is None:
            self._policy_cum = _cumulative(self.behavior.probs)
        if self._trans_cum is None:
            self._trans_cum = _cumulative(self.mdp.transition)

    @property
    def n_step(self) -> int:
        return len(self.actions)

    def window(self) -> tuple[np.ndarray, np.ndarray]:
        """Copies of (states, actions); safe to hold across advances."""
        return self.states.copy(), self.actions.copy()

    def advance(self) -> tuple[int, int]:
        """Sample A ~ behavior(.|S_newest), S' ~ P(.|S_newest, A) and shift.

        Returns the newest (action, state) pair.
        """
        s = int(self.states[-1])
        a = _draw(self._policy_cum[s], self.rng.random())
        s_next = _draw(self._trans_cum[s, a], self.rng.random())
        if self.n_step > 0:
            self.states[:-1] = self.states[1:]
            self.actions[:-1] = self.actions[1:]
            self.actions[-1] = a
        self.states[-1] = s_next
        return a, s_next


def init_chain(
    mdp: Mdp,
    behavior: Policy,
    xi: np.ndarray,
    n: int,
    rng: np.random.Generator,
    agent_id: int = 0,
) -> AgentChain:
    """Warmed chain: S_0 ~ xi followed by n sampled transitions."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (mdp.n_states,) or np.any(xi < 0) or abs(xi.sum() - 1.0) > 1e-12:
        raise ValueError("xi must be a probability distribution over states")
    if behavior.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("behavior policy shape does not match the MDP")
    policy_cum = _cumulative(behavior.probs)
    trans_cum = _cumulative(mdp.transition)
    states = np.zeros(n + 1, dtype=np.int64)
    actions = np.zeros(n, dtype=np.int64)
    states[0] = _draw(_cumulative(xi), rng.random())
    for l in range(n):
        s = int(states[l])
        a = _draw(policy_cum[s], rng.random())
        actions[l] = a
        states[l + 1] = _draw(trans_cum[s, a], rng.random())
    return AgentChain(
        agent_id=agent_id,
        mdp=mdp,
        behavior=behavior,
        states=states,
        actions=actions,
        rng=rng,
        _policy_cum=policy_cum,
        _trans_cum=trans_cum,
    )


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True)
class MixingEstimate:
    """Geometric mixing parameters of an ergodic chain.

    rho is the second-largest eigenvalue modulus; m_bar calibrates the
    total-variation prefactor at t=1 so that TV(t) <~ m_bar * rho^t.
    """

    rho: float
    m_bar: float

    def tau_alpha(self, alpha: float) -> int:
        """Steps after which the mixing residual is O(alpha): ceil(2 ln a / ln rho)."""
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.rho == 0.0:
            return 1  # chain mixes in a single step
        return int(math.ceil(2.0 * math.log(alpha) / math.log(self.rho)))


def mixing_diagnostics(p_pi: np.ndarray) -> MixingEstimate:
    """Spectral mixing estimate for a row-stochastic matrix."""
    from .mdp import stationary_distribution  # deferred to avoid import cycle

    p_pi = np.asarray(p_pi, dtype=float)
    moduli = np.sort(np.abs(np.linalg.eigvals(p_pi)))[::-1]
    rho = float(moduli[1]) if len(moduli) > 1 else 0.0
    if rho >= 1.0 - 1e-12:
        raise ErgodicityError(
            f"second eigenvalue modulus {rho:.12f} is (near-)1: chain close to periodic"
        )
    if rho < 1e-15:
        rho = 0.0
    mu = stationary_distribution(p_pi)
    tv_at_1 = max(total_variation(p_pi[s], mu) for s in range(p_pi.shape[0]))
    m_bar = tv_at_1 / rho if rho > 0.0 else 0.0
    return MixingEstimate(rho=rho, m_bar=m_bar)


def state_action_kernel(mdp: Mdp, behavior: Policy) -> np.ndarray:
    """Row-stochastic kernel of the (s,a) chain: P[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')."""
    n_sa = mdp.n_states * mdp.n_actions
    kernel = np.zeros((n_sa, n_sa))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = mdp.transition[s, a][:, None] * behavior.probs
            kernel[s * mdp.n_actions + a] = row.reshape(n_sa)
    return kernel
