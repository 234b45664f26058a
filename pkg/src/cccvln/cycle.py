"""Cycle-consistency errors and their one-sample score-function estimators.

For a path A the round trip samples an instruction X_hat from the speaker and
scores A under the follower; for an instruction X it samples a path A_hat
from the follower and scores X under the speaker.  The surrogate

    loss = -log P(A|X_hat) - sg(log P(A|X_hat) - b) * log P(X_hat|A)

differentiates to the follower gradient of the upper bound on one path and
to the baselined REINFORCE gradient on the other.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .autodiff import tensor as T
from .agents.speaker import instruction
from .world import nodes_from_actions

REWARD_FLOOR = -50.0


@dataclass
class BaselineTracker:
    """Running baselines b_f (for log P(A|X_hat)) and b_s (for log P(X|A_hat)).

    Starts undefined; the first observed value initialises it, later values
    enter an exponential moving average.  Callers read a snapshot before a
    batch and feed the batch's rewards afterwards.
    """

    momentum: float = 0.95
    b_f: float | None = None
    b_s: float | None = None

    def snapshot(self) -> tuple[float | None, float | None]:
        return self.b_f, self.b_s

    def _push(self, current: float | None, values) -> float | None:
        for v in values:
            v = max(float(v), REWARD_FLOOR)
            current = v if current is None else self.momentum * current + (1.0 - self.momentum) * v
        return current

    def update(self, f_rewards=(), s_rewards=()) -> None:
        self.b_f = self._push(self.b_f, f_rewards)
        self.b_s = self._push(self.b_s, s_rewards)

    def state(self) -> dict:
        return {"momentum": self.momentum, "b_f": self.b_f, "b_s": self.b_s}

    @classmethod
    def from_state(cls, d: dict) -> "BaselineTracker":
        return cls(d["momentum"], d["b_f"], d["b_s"])


@dataclass
class CycleEstimate:
    kind: str  # "A" or "X"
    sample: tuple  # X_hat tokens, or A_hat panoramic actions
    sample_nodes: tuple  # nodes of A_hat (or of A for kind "A")
    loss: Tensor  # full surrogate
    point: Tensor  # -log P(A|X_hat) or -log P(X|A_hat)
    score: Tensor  # log P(X_hat|A) or log P(A_hat|X)
    reward: float  # log P(A|X_hat) or log P(X|A_hat), unclipped
    coeff: float  # clipped reward minus baseline (0 when no baseline yet)
    extra: list = field(default_factory=list)


def _coefficient(reward: float, baseline: float | None, use_baseline: bool) -> float:
    r = max(reward, REWARD_FLOOR)
    if not use_baseline:
        return r
    return 0.0 if baseline is None else r - baseline


def estimate_delta_A(speaker, follower, env, nodes, actions, baseline: float | None,
                     rng: np.random.Generator, tape: Tape, use_baseline: bool = True) -> CycleEstimate:
    """One-sample surrogate for the path round trip A -> X_hat -> A."""
    rs = speaker.rollout(env, nodes, actions, mode="sample", rng=rng, tape=tape)
    x_hat = instruction(rs)
    rf = follower.logprob(env, nodes[0], x_hat, follower.path_actions(actions), tape=tape)
    reward = rf.logprob_value()
    coeff = _coefficient(reward, baseline, use_baseline)
    point = T.negate(rf.logprob)
    loss = T.add(point, T.scalar_mul(rs.logprob, -coeff)) if coeff != 0.0 else point
    return CycleEstimate("A", x_hat, tuple(nodes), loss, point, rs.logprob, reward, coeff)


def estimate_delta_X(speaker, follower, env, start: int, tokens, baseline: float | None,
                     rng: np.random.Generator, tape: Tape, use_baseline: bool = True) -> CycleEstimate:
    """One-sample surrogate for the instruction round trip X -> A_hat -> X."""
    rf = follower.rollout(env, start, tokens, mode="sample", rng=rng, tape=tape)
    a_hat = follower.panoramic_actions(env, rf)
    a_nodes = nodes_from_actions(env, start, a_hat)
    rs = speaker.logprob(env, a_nodes, a_hat, tokens, tape=tape)
    reward = rs.logprob_value()
    coeff = _coefficient(reward, baseline, use_baseline)
    point = T.negate(rs.logprob)
    loss = T.add(point, T.scalar_mul(rf.logprob, -coeff)) if coeff != 0.0 else point
    return CycleEstimate("X", tuple(a_hat), tuple(a_nodes), loss, point, rf.logprob, reward, coeff)


def episode_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


@dataclass
class BatchCycle:
    loss: Tensor
    estimates: list[CycleEstimate]
    terms: dict[str, float]


def cycle_loss_batch(speaker, follower, worlds: dict, labeled, unlabeled, baselines: BaselineTracker,
                     seed: int, tape: Tape, cf_envs: dict | None = None,
                     terms=("dA", "dX", "dAu", "cfA", "cfX")) -> BatchCycle:
    """Mean surrogate over a batch: labeled dA + dX, unlabeled dA', and the same
    labeled pair again in created environments when ``cf_envs`` (index -> env) is given.

    Episode i draws its samples from ``episode_rng(seed, i, term)`` so each
    term can be reproduced by an independent per-episode call.
    """
    if not labeled and any(t in terms for t in ("dA", "dX", "cfA", "cfX")):
        raise ValueError("cycle loss needs a non-empty labeled batch")
    b_f, b_s = baselines.snapshot()
    ests: list[CycleEstimate] = []
    parts: list[Tensor] = []
    summary: dict[str, float] = {}

    def mean(ts: list[Tensor]) -> Tensor:
        return T.scalar_mul(T.sum(T.stack(ts)), 1.0 / len(ts))

    lab: list[Tensor] = []
    for i, ep in enumerate(labeled):
        env = worlds[ep.world_id]
        pair = []
        if "dA" in terms:
            e = estimate_delta_A(speaker, follower, env, ep.nodes, ep.actions, b_f, episode_rng(seed, i, 0), tape)
            ests.append(e)
            pair.append(e.loss)
        if "dX" in terms:
            e = estimate_delta_X(speaker, follower, env, ep.start, ep.instruction, b_s, episode_rng(seed, i, 1), tape)
            ests.append(e)
            pair.append(e.loss)
        if pair:
            lab.append(T.sum(T.stack(pair)))
    if lab:
        parts.append(mean(lab))
        summary["labeled"] = float(parts[-1].value)
    if "dAu" in terms and unlabeled:
        ul = []
        for j, ep in enumerate(unlabeled):
            env = worlds[ep.world_id]
            e = estimate_delta_A(speaker, follower, env, ep.nodes, ep.actions, b_f, episode_rng(seed, j, 2), tape)
            ests.append(e)
            ul.append(e.loss)
        parts.append(mean(ul))
        summary["unlabeled"] = float(parts[-1].value)
    if cf_envs:
        cf = []
        for i, ep in enumerate(labeled):
            env = cf_envs.get(i)
            if env is None:
                continue
            pair = []
            if "cfA" in terms:
                e = estimate_delta_A(speaker, follower, env, ep.nodes, ep.actions, b_f, episode_rng(seed, i, 3), tape)
                ests.append(e)
                pair.append(e.loss)
            if "cfX" in terms:
                e = estimate_delta_X(speaker, follower, env, ep.start, ep.instruction, b_s, episode_rng(seed, i, 4), tape)
                ests.append(e)
                pair.append(e.loss)
            if pair:
                cf.append(T.sum(T.stack(pair)))
        if cf:
            parts.append(mean(cf))
            summary["counterfactual"] = float(parts[-1].value)
    if not parts:
        raise ValueError("no cycle terms selected")
    loss = parts[0] if len(parts) == 1 else T.sum(T.stack(parts))
    return BatchCycle(loss, ests, summary)
