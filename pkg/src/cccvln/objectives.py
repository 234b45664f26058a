"""Task losses: follower imitation and actor-critic, speaker likelihood,
creator and discriminator objectives, and the IL annealing schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .agents.creator import gate_vector
from .autodiff import Tape, Tensor
from .autodiff import tensor as T


def il_loss(follower, env, tokens, start: int, actions, tape: Tape | None = None) -> Tensor:
    """-log P(A | X; E) under teacher forcing (panoramic actions are converted for low-level followers)."""
    return T.negate(follower.logprob(env, start, tokens, follower.path_actions(actions), tape=tape).logprob)


def speaker_mle_loss(speaker, env, nodes, actions, tokens, tape: Tape | None = None) -> Tensor:
    if len(tokens) == 0:
        raise ValueError("empty instruction")
    return T.negate(speaker.logprob(env, nodes, actions, tokens, tape=tape).logprob)


@dataclass
class RLResult:
    policy: Tensor  # -sum_t log p_t(a_t) * advantage_t
    critic: Tensor  # mean squared error of the value head
    rewards: np.ndarray
    returns: np.ndarray
    values: np.ndarray
    nodes: list
    success: bool


def step_rewards(world, nodes_before, nodes_after, goal: int, radius: int = 1) -> np.ndarray:
    """Shaping (decrease in distance to goal) per step plus +1 on the last step on success."""
    dist = world.distances(goal)
    r = np.array([float(dist[a] - dist[b]) for a, b in zip(nodes_before, nodes_after)])
    if dist[nodes_after[-1]] <= radius:
        r[-1] += 1.0
    return r


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def rl_loss(follower, critic, env, tokens, start: int, goal: int, rng: np.random.Generator,
            tape: Tape, gamma: float = 0.95, radius: int = 1) -> RLResult:
    """Advantage actor-critic on a sampled rollout; the advantage is a constant in the policy term."""
    r = follower.rollout(env, start, tokens, mode="sample", rng=rng, tape=tape)
    visited = _step_nodes(r.nodes, len(r.symbols))
    before, after = visited[:-1], visited[1:]
    rewards = step_rewards(env.world, before, after, goal, radius)
    returns = discounted_returns(rewards, gamma)
    values = [critic.value(h, tape) for h in r.hiddens]
    vals = np.array([float(v.value) for v in values])
    adv = returns - vals
    logs = T.log(T.stack(r.picked))
    policy = T.negate(T.matmul(logs, T.constant(adv)))
    diffs = T.add(T.constant(returns), T.negate(T.stack(values)))
    closs = T.scalar_mul(T.matmul(diffs, diffs), 1.0 / len(values))
    success = int(env.world.distances(goal)[after[-1]]) <= radius
    return RLResult(policy, closs, rewards, returns, vals, list(visited), success)


def _step_nodes(nodes, n_steps: int) -> list:
    """Node occupied before each step plus the final node (STOP leaves it unchanged)."""
    out = list(nodes)
    while len(out) < n_steps + 1:
        out.append(out[-1])
    return out[: n_steps + 1]


def creator_loss(disc, env_bar, tokens, nodes, actions, tape: Tape) -> tuple[Tensor, float, float]:
    """||lambda||_2 + log(1 - d(V_bar, X, A)); the discriminator is held constant."""
    lam = gate_vector(env_bar)
    l2 = T.sqrt(T.sum(T.mul(lam, lam)))
    d = disc.score(env_bar, tokens, nodes, actions, tape=tape, frozen=True)
    adv = T.log(T.add_scalar(T.negate(d), 1.0))
    return T.add(l2, adv), float(l2.value), float(d.value)


def discriminator_loss(disc, env_real, env_bar, tokens, nodes, actions, tape: Tape) -> Tensor:
    """d(V_bar, X, A) - d(V, X, A); created scenes enter as constants."""
    bar = env_bar.detached() if hasattr(env_bar, "detached") else env_bar
    fake = disc.score(bar, tokens, nodes, actions, tape=tape)
    real = disc.score(env_real, tokens, nodes, actions, tape=tape)
    return T.add(fake, T.negate(real))


@dataclass(frozen=True)
class AnnealSchedule:
    beta0: float = 1.0
    decay: float = 0.995
    floor: float = 0.2

    def beta(self, iteration: int) -> float:
        return max(self.floor, self.beta0 * math.pow(self.decay, iteration))

    def combine(self, il: Tensor, rl: Tensor, iteration: int) -> Tensor:
        b = self.beta(iteration)
        return T.add(T.scalar_mul(il, b), T.scalar_mul(rl, 1.0 - b))
