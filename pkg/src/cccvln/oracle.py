"""Brute-force references over tiny output spaces.

Everything here enumerates the full instruction or path space instead of
sampling, so the cycle errors, their upper bounds and the bound's gradient
are exact up to float rounding.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, backward
from .autodiff import tensor as T
from .agents.common import start_heading
from .agents.follower import FORWARD, LEFT, PANORAMIC, RIGHT, TURN_LEFT, TURN_RIGHT, moves_from_nodes
from .world import BOS, EOS, nodes_from_actions

PROB_FLOOR = 1e-300
MAX_SPACE = 5000


class OracleError(ValueError):
    pass


def instruction_space(speaker) -> list[tuple[int, ...]]:
    """Every BOS ... EOS sequence the speaker can emit (EOS-terminated, at most l_max decoded tokens)."""
    vocab, l_max = speaker.cfg.vocab_size, speaker.cfg.l_max
    words = [t for t in range(vocab) if t not in (BOS, EOS)]
    size = sum(len(words) ** k for k in range(l_max))
    if size > MAX_SPACE:
        raise OracleError(f"instruction space has {size} sequences (limit {MAX_SPACE})")
    out = []
    for k in range(l_max):
        for body in itertools.product(words, repeat=k):
            out.append((BOS, *body, EOS))
    return out


def path_space(follower, env, start: int) -> list[tuple[int, ...]]:
    """Every legal action sequence (in the follower's own action space) ending in STOP."""
    out: list[tuple[int, ...]] = []
    t_max = follower.cfg.t_max
    stop = follower.n_actions - 1

    def walk(node, heading, prefix):
        if len(out) > MAX_SPACE:
            raise OracleError(f"path space exceeds {MAX_SPACE} sequences")
        t = len(prefix)
        mask = follower.legal_mask(env, node, heading, last=(t == t_max - 1))
        for a in np.flatnonzero(mask):
            a = int(a)
            if a == stop:
                out.append(prefix + (a,))
                continue
            walk(*_advance(follower, env, node, heading, a), prefix + (a,))

    walk(start, start_heading(), ())
    return out


def _advance(follower, env, node, heading, a):
    if follower.kind == PANORAMIC:
        return env.neighbor(node, a), a
    if a == LEFT:
        return node, TURN_LEFT[heading]
    if a == RIGHT:
        return node, TURN_RIGHT[heading]
    assert a == FORWARD
    return env.neighbor(node, heading), heading


def panoramic(follower, env, start, acts) -> tuple[list[int], list[int]]:
    """Panoramic actions and nodes for a path in the follower's action space."""
    if follower.kind == PANORAMIC:
        acts = list(acts)
        return acts, nodes_from_actions(env, start, acts)
    node, heading, nodes = start, start_heading(), [start]
    for a in acts[:-1]:
        node, heading = _advance(follower, env, node, heading, a)
        nodes.append(node)
    pan = moves_from_nodes(env.world, nodes)
    return pan, nodes_from_actions(env, start, pan)


def total_mass_speaker(speaker, env, nodes, actions) -> float:
    return math.fsum(math.exp(speaker.logprob(env, nodes, actions, x).logprob_value())
                     for x in instruction_space(speaker))


def total_mass_follower(follower, env, start, tokens) -> float:
    return math.fsum(math.exp(follower.logprob(env, start, tokens, a).logprob_value())
                     for a in path_space(follower, env, start))


@dataclass
class ExactDelta:
    delta: float
    delta_bar: float


def _floor_log(p: float) -> float:
    return math.log(max(p, PROB_FLOOR))


def exact_delta_A(speaker, follower, env, nodes, actions) -> ExactDelta:
    """-log sum_X P(X|A) P(A|X) and -sum_X P(X|A) log P(A|X) over the whole instruction space."""
    f_acts = follower.path_actions(actions)
    joint, bound = [], []
    for x in instruction_space(speaker):
        ps = math.exp(speaker.logprob(env, nodes, actions, x).logprob_value())
        pf = math.exp(follower.logprob(env, nodes[0], x, f_acts).logprob_value())
        joint.append(ps * pf)
        bound.append(ps * _floor_log(pf))
    return ExactDelta(-_floor_log(math.fsum(joint)), -math.fsum(bound))


def exact_delta_X(speaker, follower, env, start, tokens) -> ExactDelta:
    joint, bound = [], []
    for a in path_space(follower, env, start):
        pf = math.exp(follower.logprob(env, start, tokens, a).logprob_value())
        pan, pnodes = panoramic(follower, env, start, a)
        ps = math.exp(speaker.logprob(env, pnodes, pan, tokens).logprob_value())
        joint.append(pf * ps)
        bound.append(pf * _floor_log(ps))
    return ExactDelta(-_floor_log(math.fsum(joint)), -math.fsum(bound))


def exact_grad_delta_bar_A(speaker, follower, env, nodes, actions) -> tuple[float, dict]:
    """Value and gradient (speaker and follower parameters) of the enumerated upper bound."""
    tape = Tape()
    f_acts = follower.path_actions(actions)
    terms = []
    for x in instruction_space(speaker):
        rs = speaker.logprob(env, nodes, actions, x, tape=tape)
        lpf = follower.logprob(env, nodes[0], x, f_acts, tape=tape).logprob
        terms.append(T.mul(rs.prob(), lpf))
    loss = T.negate(T.sum(T.stack(terms)))
    return float(loss.value), backward(tape, loss)


def exact_grad_delta_bar_X(speaker, follower, env, start, tokens) -> tuple[float, dict]:
    tape = Tape()
    terms = []
    for a in path_space(follower, env, start):
        rf = follower.logprob(env, start, tokens, a, tape=tape)
        pan, pnodes = panoramic(follower, env, start, a)
        lps = speaker.logprob(env, pnodes, pan, tokens, tape=tape).logprob
        terms.append(T.mul(rf.prob(), lps))
    loss = T.negate(T.sum(T.stack(terms)))
    return float(loss.value), backward(tape, loss)


def score_identity(speaker, env, nodes, actions) -> float:
    """max_i |sum_X P(X|A) d/dtheta_i log P(X|A)| over the speaker parameters."""
    tape = Tape()
    terms = []
    for x in instruction_space(speaker):
        lp = speaker.logprob(env, nodes, actions, x, tape=tape).logprob
        terms.append(T.scalar_mul(lp, math.exp(float(lp.value))))
    grads = backward(tape, T.sum(T.stack(terms)))
    return max((float(np.max(np.abs(g))) for g in grads.values()), default=0.0)


def score_identity_follower(follower, env, start, tokens) -> float:
    """Same identity for the follower's path distribution."""
    tape = Tape()
    terms = []
    for a in path_space(follower, env, start):
        lp = follower.logprob(env, start, tokens, a, tape=tape).logprob
        terms.append(T.scalar_mul(lp, math.exp(float(lp.value))))
    grads = backward(tape, T.sum(T.stack(terms)))
    return max((float(np.max(np.abs(g))) for g in grads.values()), default=0.0)


# -- self-check suite -----------------------------------------------------------

@dataclass
class Tiny:
    world: object
    speaker: object
    follower: object
    lowlevel: object
    nodes: tuple
    actions: tuple
    tokens: tuple


def tiny_setup(seed: int, hidden: int = 4, embed: int = 3) -> Tiny:
    """2x2 open world, 6-token vocabulary, instructions of at most 3 decoded tokens, T_max 3."""
    from .agents import Follower, ModelConfig, Speaker
    from .world import generate_world, sample_path

    rng = np.random.default_rng([seed, 5])
    world = generate_world(int(rng.integers(1 << 30)), 2, 2, 0.0)
    cfg = ModelConfig(vocab_size=6, embed=embed, hidden=hidden, t_max=3, l_max=3)
    speaker = Speaker(cfg, rng)
    follower = Follower(cfg, rng)
    lowlevel = Follower(cfg, rng, kind="lowlevel")
    for store in (speaker.store, follower.store, lowlevel.store):  # widen the init so distributions are far from uniform
        for _, arr in store.items():
            arr *= 3.0
    path = sample_path(world, rng, 1, 2)
    body = tuple(int(t) for t in rng.integers(2, 6, size=int(rng.integers(1, 3))))
    return Tiny(world, speaker, follower, lowlevel, path.nodes, path.actions, (BOS, *body, EOS))


def finite_difference_check(fn, store, h: float = 1e-3, coords: int = 12,
                            rng: np.random.Generator | None = None) -> float:
    """Max relative error between ``fn``'s autodiff gradient and central differences on sampled coordinates.

    ``fn(tape)`` must build a scalar loss on ``tape`` (or on no tape when called with None).
    The five-point stencil keeps truncation and roundoff near 1e-12, so coordinates whose
    gradient is tiny are still resolved. The stencil is summed as differences so an
    untouched coordinate yields exactly zero.
    """
    tape = Tape()
    grads = backward(tape, fn(tape))
    flat_g = store.flat_grad(grads)
    theta = store.flat()
    rng = rng or np.random.default_rng(0)
    idx = rng.choice(theta.size, size=min(coords, theta.size), replace=False)
    worst = 0.0
    for i in idx:
        vals = {}
        for k in (2, 1, -1, -2):
            t2 = theta.copy()
            t2[i] += k * h
            store.set_flat(t2)
            vals[k] = float(fn(None).value)
        store.set_flat(theta)
        num = (8 * (vals[1] - vals[-1]) - (vals[2] - vals[-2])) / (12 * h)
        a = float(flat_g[i])
        worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst


def suite(seed: int, n_models: int = 10) -> list[tuple[str, bool, str]]:
    """Normalisation, Jensen, score identity and exact-gradient checks on random tiny models."""
    out = []
    worst_norm, worst_gap, worst_score, worst_fd = 0.0, math.inf, 0.0, 0.0
    for k in range(n_models):
        t = tiny_setup(seed * 1000 + k)
        w = t.world
        worst_norm = max(worst_norm,
                         abs(total_mass_speaker(t.speaker, w, t.nodes, t.actions) - 1.0),
                         abs(total_mass_follower(t.follower, w, t.nodes[0], t.tokens) - 1.0),
                         abs(total_mass_follower(t.lowlevel, w, t.nodes[0], t.tokens) - 1.0))
        da = exact_delta_A(t.speaker, t.follower, w, t.nodes, t.actions)
        dx = exact_delta_X(t.speaker, t.follower, w, t.nodes[0], t.tokens)
        worst_gap = min(worst_gap, da.delta_bar - da.delta, dx.delta_bar - dx.delta)
        worst_score = max(worst_score, score_identity(t.speaker, w, t.nodes, t.actions),
                          score_identity_follower(t.follower, w, t.nodes[0], t.tokens))
        if k < 3:
            def bar_a(tape, t=t):
                terms = []
                for x in instruction_space(t.speaker):
                    rs = t.speaker.logprob(w, t.nodes, t.actions, x, tape=tape)
                    lpf = t.follower.logprob(w, t.nodes[0], x, t.actions, tape=tape).logprob
                    terms.append(T.mul(rs.prob(), lpf))
                return T.negate(T.sum(T.stack(terms)))
            for store in (t.speaker.store, t.follower.store):
                worst_fd = max(worst_fd, finite_difference_check(bar_a, store, rng=np.random.default_rng(k)))
    out.append(("normalization (speaker, follower, low-level follower)", worst_norm <= 1e-9, f"max |mass-1| = {worst_norm:.2e}"))
    out.append(("jensen upper bound (dA, dX)", worst_gap >= -1e-9, f"min gap = {worst_gap:.3e}"))
    out.append(("score-function identity", worst_score <= 1e-9, f"max |sum P grad log P| = {worst_score:.2e}"))
    out.append(("exact bound gradient vs finite differences", worst_fd <= 1e-4, f"max rel err = {worst_fd:.2e}"))
    return out
