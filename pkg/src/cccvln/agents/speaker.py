"""Speaker: encoder over the route, attention decoder over the vocabulary."""
from __future__ import annotations

import numpy as np

from ..autodiff import ParamStore, Tape, Tensor
from ..autodiff import tensor as T
from ..world import BOS, EOS, FEATURE_DIM, STOP, WorldError
from .common import (
    SUMMARY_DIM,
    ModelConfig,
    Rollout,
    action_feature,
    add_lstm,
    attend,
    choose,
    finish,
    lstm,
    mean_rows,
    start_heading,
    subview_source,
    summary,
)


class Speaker:
    """s(E, A) -> X.

    The encoder reads [scene summary, action embedding] at every node of the
    route (the final STOP contributes the zero action).  The decoder starts
    from the last encoder state and, at each word, attends over the encoder
    states with its previous hidden state.  ``cfg.l_max`` bounds the number
    of decoded tokens (EOS included); the last allowed step can only emit EOS
    and BOS is never emitted.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "speaker"):
        self.cfg = cfg
        H, Ed, V = cfg.hidden, cfg.embed, cfg.vocab_size
        st = self.store = ParamStore(prefix)
        self.prefix = prefix
        add_lstm(st, "enc", SUMMARY_DIM + FEATURE_DIM, H, rng)
        st.init_uniform("emb", (V, Ed), Ed, rng)
        add_lstm(st, "dec", Ed + H, H, rng)
        st.init_uniform("out.w", (V, 2 * H), 2 * H, rng)
        st.init_uniform("out.b", (V,), 2 * H, rng)

    def _p(self, tape: Tape | None) -> dict:
        pre = self.prefix + "/"
        return {k[len(pre):]: v for k, v in self.store.bind(tape).items()}

    def encode(self, p: dict, env, nodes, actions) -> tuple[Tensor, Tensor, Tensor]:
        if len(actions) == 0:
            raise WorldError("speaker needs a non-empty path")
        if len(nodes) != len(actions) or actions[-1] != STOP:
            raise WorldError("path must list one action per node and end in STOP")
        H = self.cfg.hidden
        h = c = T.constant(np.zeros(H))
        heading = start_heading()
        outs = []
        for node, a in zip(nodes, actions):
            sub = subview_source(env, node)
            x = T.concat([summary(sub, heading), action_feature(sub, a)])
            h, c = lstm(p, "enc", x, h, c)
            outs.append(h)
            if a != STOP:
                heading = a
        return T.stack(outs), h, c

    def vocab_mask(self, last: bool) -> np.ndarray:
        mask = np.ones(self.cfg.vocab_size, dtype=bool)
        mask[BOS] = False
        if last:
            mask[:] = False
            mask[EOS] = True
        return mask

    def _run(self, env, nodes, actions, pick, tape: Tape | None) -> Rollout:
        p = self._p(tape)
        keys, h, c = self.encode(p, env, nodes, actions)
        ctx_fixed = None if self.cfg.attention else mean_rows(keys)
        prev = BOS
        r = Rollout()
        for l in range(self.cfg.l_max):
            ctx = ctx_fixed if ctx_fixed is not None else attend(keys, h)
            h, c = lstm(p, "dec", T.concat([T.lookup(p["emb"], prev), ctx]), h, c)
            logits = T.add(T.matmul(p["out.w"], T.concat([h, ctx])), p["out.b"])
            mask = self.vocab_mask(last=(l == self.cfg.l_max - 1))
            probs = T.softmax(logits, mask)
            tok = pick(l, probs.value, mask)
            r.symbols.append(tok)
            r.dists.append(probs.value)
            r.picked.append(T.lookup(probs, tok))
            r.hiddens.append(h)
            if tok == EOS:
                break
            prev = tok
        return finish(r)

    def rollout(self, env, nodes, actions, mode: str = "greedy",
                rng: np.random.Generator | None = None, tape: Tape | None = None) -> Rollout:
        return self._run(env, nodes, actions, lambda l, dist, mask: choose(dist, mode, rng), tape)

    def logprob(self, env, nodes, actions, tokens, tape: Tape | None = None) -> Rollout:
        """Teacher-forced log P(X | A; E); ``tokens`` is BOS ... EOS."""
        tokens = list(tokens)
        if len(tokens) < 2 or tokens[0] != BOS or tokens[-1] != EOS:
            raise WorldError("instruction must be BOS ... EOS with at least one decoded token")
        target = tokens[1:]

        def pick(l, dist, mask):
            tok = int(target[l])
            if not mask[tok]:
                raise WorldError(f"token {tok} is not allowed at position {l}")
            return tok

        if len(target) > self.cfg.l_max:
            raise WorldError(f"instruction longer than {self.cfg.l_max} decoded tokens")
        if EOS in target[:-1]:
            raise WorldError("EOS before the end of the instruction")
        return self._run(env, nodes, actions, pick, tape)


def instruction(r: Rollout) -> tuple[int, ...]:
    """BOS-prefixed token tuple from a speaker rollout."""
    return (BOS,) + tuple(r.symbols)
