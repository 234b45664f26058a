"""Instruction follower: a recurrent policy over panoramic or low-level actions."""
from __future__ import annotations

import numpy as np

from ..autodiff import ParamStore, Tape, Tensor
from ..autodiff import tensor as T
from ..world import E, FEATURE_DIM, N, OPPOSITE, S, STOP, W, WorldError, path_from_nodes
from .common import (
    SUMMARY_DIM,
    ModelConfig,
    Rollout,
    action_feature,
    add_lstm,
    attend,
    choose,
    encode_tokens,
    finish,
    lstm,
    mean_rows,
    start_heading,
    subview_source,
    summary,
)

PANORAMIC = "panoramic"
LOWLEVEL = "lowlevel"

# low-level action ids
LEFT, RIGHT, FORWARD, LL_STOP = 0, 1, 2, 3
LL_START = 4
LL_NAMES = ("left", "right", "forward", "stop")
TURN_LEFT = {N: W, W: S, S: E, E: N}
TURN_RIGHT = {N: E, E: S, S: W, W: N}


class Follower:
    """f(E, X) -> A.

    Each step feeds [scene summary, instruction context, previous action] to
    an LSTM initialised from the instruction encoder.  The panoramic variant
    scores every subview by a^T W2 h (STOP is the zero vector); the low-level
    variant scores {left, right, forward, stop} with W1 h and only sees the
    subview in front of it.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, kind: str = PANORAMIC,
                 prefix: str = "follower"):
        if kind not in (PANORAMIC, LOWLEVEL):
            raise ValueError(f"unknown follower kind {kind!r}")
        self.cfg = cfg
        self.kind = kind
        H, Ed = cfg.hidden, cfg.embed
        st = self.store = ParamStore(prefix)
        self.prefix = prefix
        st.init_uniform("emb", (cfg.vocab_size, Ed), Ed, rng)
        add_lstm(st, "enc", Ed, H, rng)
        if kind == PANORAMIC:
            add_lstm(st, "dec", SUMMARY_DIM + H + FEATURE_DIM, H, rng)
            st.init_uniform("w2", (FEATURE_DIM, H), H, rng)
        else:
            st.init_uniform("act_emb", (5, Ed), Ed, rng)
            add_lstm(st, "dec", FEATURE_DIM + H + Ed, H, rng)
            st.init_uniform("w1", (4, H), H, rng)

    def _p(self, tape: Tape | None) -> dict:
        pre = self.prefix + "/"
        return {k[len(pre):]: v for k, v in self.store.bind(tape).items()}

    @property
    def n_actions(self) -> int:
        return 5 if self.kind == PANORAMIC else 4

    # -- core loop -------------------------------------------------------------

    def _run(self, env, start: int, tokens, pick, tape: Tape | None) -> Rollout:
        if len(tokens) == 0:
            raise ValueError("follower needs a non-empty instruction")
        env.world.check_node(start)
        p = self._p(tape)
        H = self.cfg.hidden
        keys, h, c = encode_tokens(p, "emb", "enc", tokens, H)
        ctx_fixed = None if self.cfg.attention else mean_rows(keys)
        node, heading = start, start_heading()
        if self.kind == PANORAMIC:
            prev = T.constant(np.zeros(FEATURE_DIM))
        else:
            prev = T.lookup(p["act_emb"], LL_START)
        r = Rollout(nodes=[start])
        t_max = self.cfg.t_max
        for t in range(t_max):
            sub = subview_source(env, node)
            ctx = ctx_fixed if ctx_fixed is not None else attend(keys, h)
            if self.kind == PANORAMIC:
                vis = summary(sub, heading)
            else:
                vis = action_feature(sub, heading)
            h, c = lstm(p, "dec", T.concat([vis, ctx, prev]), h, c)
            mask = self.legal_mask(env, node, heading, last=(t == t_max - 1))
            if self.kind == PANORAMIC:
                logits = T.matmul(candidates(sub), T.matmul(p["w2"], h))
            else:
                logits = T.matmul(p["w1"], h)
            probs = T.softmax(logits, mask)
            a = pick(t, probs.value, mask)
            r.symbols.append(a)
            r.dists.append(probs.value)
            r.picked.append(T.lookup(probs, a))
            r.hiddens.append(h)
            if self.kind == PANORAMIC:
                if a == STOP:
                    break
                prev = action_feature(sub, a)
                node = env.neighbor(node, a)
                heading = a
            else:
                if a == LL_STOP:
                    break
                prev = T.lookup(p["act_emb"], a)
                if a == LEFT:
                    heading = TURN_LEFT[heading]
                elif a == RIGHT:
                    heading = TURN_RIGHT[heading]
                else:
                    node = env.neighbor(node, heading)
            r.nodes.append(node)
        return finish(r)

    def legal_mask(self, env, node: int, heading: int, last: bool = False) -> np.ndarray:
        if self.kind == PANORAMIC:
            mask = np.zeros(5, dtype=bool)
            mask[STOP] = True
            if not last:
                for d in range(4):
                    mask[d] = env.navigable(node, d)
        else:
            mask = np.zeros(4, dtype=bool)
            mask[LL_STOP] = True
            if not last:
                mask[LEFT] = mask[RIGHT] = True
                mask[FORWARD] = env.navigable(node, heading)
        return mask

    # -- public API ------------------------------------------------------------

    def rollout(self, env, start: int, tokens, mode: str = "greedy",
                rng: np.random.Generator | None = None, tape: Tape | None = None) -> Rollout:
        """Decode a trajectory; ``r.logprob`` is the sum of per-step log p_t(a_t)."""
        return self._run(env, start, tokens, lambda t, dist, mask: choose(dist, mode, rng), tape)

    def logprob(self, env, start: int, tokens, actions, tape: Tape | None = None) -> Rollout:
        """Teacher-forced log P(A | X; E) for an action sequence in this follower's action space."""
        actions = list(actions)

        def pick(t, dist, mask):
            if t >= len(actions):
                raise WorldError("action sequence ended without STOP")
            a = int(actions[t])
            if not (0 <= a < len(mask)) or not mask[a]:
                raise WorldError(f"illegal action {a} at step {t}")
            return a

        r = self._run(env, start, tokens, pick, tape)
        if len(r.symbols) != len(actions):
            raise WorldError("action sequence continues after STOP")
        return r

    def path_actions(self, path_actions, start_heading_: int | None = None) -> list[int]:
        """Express a panoramic action sequence in this follower's action space."""
        if self.kind == PANORAMIC:
            return list(path_actions)
        return to_lowlevel(path_actions, start_heading() if start_heading_ is None else start_heading_)

    def panoramic_actions(self, env, r: Rollout) -> list[int]:
        """Recover the panoramic move sequence (ending in STOP) from a rollout."""
        if self.kind == PANORAMIC:
            acts = list(r.symbols)
            if acts[-1] != STOP:
                acts.append(STOP)
            return acts
        return moves_from_nodes(env.world, r.nodes)


def to_lowlevel(actions, heading: int) -> list[int]:
    """Canonical turn/forward decomposition; a reversal is two right turns."""
    out = []
    for a in actions:
        if a == STOP:
            out.append(LL_STOP)
            break
        if a == TURN_LEFT[heading]:
            out.append(LEFT)
        elif a == TURN_RIGHT[heading]:
            out.append(RIGHT)
        elif a == OPPOSITE[heading]:
            out += [RIGHT, RIGHT]
        heading = a
        out.append(FORWARD)
    return out


def candidates(sub) -> Tensor:
    """(5, 11) action embeddings: the four subviews then the zero STOP vector."""
    if isinstance(sub, Tensor) and sub.tape is not None:
        return T.stack([*(T.lookup(sub, k) for k in range(4)), T.constant(np.zeros(FEATURE_DIM))])
    val = sub.value if isinstance(sub, Tensor) else sub
    return Tensor(np.vstack([val, np.zeros(FEATURE_DIM)]))


def moves_from_nodes(world, nodes) -> list[int]:
    """Panoramic actions for a node list that may repeat nodes (turning in place)."""
    dedup = [nodes[0]]
    for n in nodes[1:]:
        if n != dedup[-1]:
            dedup.append(n)
    return list(path_from_nodes(world, dedup).actions)
