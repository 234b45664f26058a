"""Counterfactual environment creator and the alignment discriminator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ParamStore, Tape, Tensor
from ..autodiff import tensor as T
from ..world import FEATURE_DIM, N_SUBVIEWS, STOP, World, WorldError
from .common import (
    SUMMARY_DIM,
    CounterfactualEnv,
    ModelConfig,
    action_feature,
    add_lstm,
    attend,
    encode_tokens,
    geometry,
    lstm,
    mean_rows,
    start_heading,
    subview_source,
    summary,
)


@dataclass
class CounterfactualScene:
    lambdas: Tensor  # (4,) gates
    q: np.ndarray  # (4, 4) attention of each subview over the reference subviews
    g: np.ndarray  # (4, 11) attention summaries
    mixed: Tensor  # (4, 11) v_bar


class Creator:
    """c(E, X, A) -> E_bar by gated mixing with a reference scene."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "creator"):
        self.cfg = cfg
        H, Ed = cfg.hidden, cfg.embed
        st = self.store = ParamStore(prefix)
        self.prefix = prefix
        st.init_uniform("emb", (cfg.vocab_size, Ed), Ed, rng)
        add_lstm(st, "enc", Ed, H, rng)
        add_lstm(st, "desc", SUMMARY_DIM + FEATURE_DIM + H, H, rng)
        st.init_uniform("w3", (H, FEATURE_DIM), FEATURE_DIM, rng)

    def _p(self, tape: Tape | None) -> dict:
        pre = self.prefix + "/"
        return {k[len(pre):]: v for k, v in self.store.bind(tape).items()}

    def descriptor(self, world: World, tokens, nodes, actions, tape: Tape | None = None) -> Tensor:
        """u = last hidden of a recurrence over [scene, action, mean instruction encoding]."""
        p = self._p(tape)
        H = self.cfg.hidden
        keys, _, _ = encode_tokens(p, "emb", "enc", tokens, H)
        xbar = mean_rows(keys)
        h = c = T.constant(np.zeros(H))
        heading = start_heading()
        for node, a in zip(nodes, actions):
            sub = world.subviews(node)
            h, c = lstm(p, "desc", T.concat([summary(sub, heading), action_feature(sub, a), xbar]), h, c)
            if a != STOP:
                heading = a
        return h

    def mix_scene(self, u: Tensor, scene, reference, tape: Tape | None = None,
                  gate_offset: float = 0.0) -> CounterfactualScene:
        """Gated attention mix of ``scene`` (4, 11) with ``reference`` (4, 11).

        ``gate_offset`` is added to every gate logit; large magnitudes push the
        gates to their 0/1 limits.
        """
        V = np.asarray(scene, dtype=np.float64)
        Vr = np.asarray(reference, dtype=np.float64)
        if V.shape != (N_SUBVIEWS, FEATURE_DIM) or Vr.shape != V.shape:
            raise WorldError(f"mix_scene expects two ({N_SUBVIEWS}, {FEATURE_DIM}) scenes, got {V.shape} and {Vr.shape}")
        p = self._p(tape)
        scores = Vr @ V.T  # column k holds the correlations of v_k with every reference subview
        q = np.exp(scores - scores.max(axis=0))
        q = (q / q.sum(axis=0)).T  # row k is q_k
        g = q @ Vr
        logits = T.matmul(T.constant(V), T.matmul(u, p["w3"]))
        if gate_offset:
            logits = T.add_scalar(logits, gate_offset)
        lam = T.sigmoid(logits)
        rows = []
        for k in range(N_SUBVIEWS):
            lk = T.lookup(lam, k)
            rows.append(T.add(T.scalar_mul(T.constant(V[k]), lk),
                              T.scalar_mul(T.constant(g[k]), T.add_scalar(T.negate(lk), 1.0))))
        return CounterfactualScene(lam, q, g, T.stack(rows))

    def make_env(self, world: World, tokens, nodes, actions, reference: World, seed,
                 tape: Tape | None = None, gate_offset: float = 0.0,
                 zero_reference: bool = False) -> CounterfactualEnv:
        """Replace the scene of every visited node with a mix against a random reference node.

        ``zero_reference`` mixes against an all-zero scene instead (an ablation).
        """
        if reference is world:
            raise WorldError("reference world must differ from the source world")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        u = self.descriptor(world, tokens, nodes, actions, tape)
        mixed, tensors, scenes = {}, {}, {}
        for node in dict.fromkeys(int(n) for n in nodes):
            ref_node = int(rng.integers(reference.n_nodes))
            ref = np.zeros((N_SUBVIEWS, FEATURE_DIM)) if zero_reference else reference.subviews(ref_node)
            sc = self.mix_scene(u, world.subviews(node), ref, tape, gate_offset)
            scenes[node] = sc
            mixed[node] = sc.mixed.value
            if sc.mixed.tape is not None:
                tensors[node] = sc.mixed
        env = CounterfactualEnv(world, mixed, tensors)
        env.scenes = scenes
        return env


def gate_vector(env: CounterfactualEnv) -> Tensor:
    """All gates of a created environment, concatenated in visit order."""
    return T.concat([sc.lambdas for sc in env.scenes.values()])


class Discriminator:
    """d(E, X, A) in (0, 1): a trajectory LSTM over [scene summary, geometric action]
    attending over an instruction LSTM, then a sigmoid on [h_T, context]."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "disc"):
        self.cfg = cfg
        H, Ed = cfg.hidden, cfg.embed
        st = self.store = ParamStore(prefix)
        self.prefix = prefix
        st.init_uniform("emb", (cfg.vocab_size, Ed), Ed, rng)
        add_lstm(st, "enc", Ed, H, rng)
        add_lstm(st, "traj", SUMMARY_DIM + 2, H, rng)
        st.init_uniform("out.w", (2 * H,), 2 * H, rng)
        st.init_zeros("out.b", ())

    def _p(self, tape: Tape | None) -> dict:
        pre = self.prefix + "/"
        return {k[len(pre):]: v for k, v in self.store.bind(tape).items()}

    def score(self, env, tokens, nodes, actions, tape: Tape | None = None,
              frozen: bool = False) -> Tensor:
        """Alignment score; ``frozen`` evaluates with constant parameters while
        still passing gradients to differentiable scenes in ``env``."""
        p = self._p(None if frozen else tape)
        H = self.cfg.hidden
        keys, _, _ = encode_tokens(p, "emb", "enc", tokens, H)
        h = c = T.constant(np.zeros(H))
        heading = start_heading()
        for node, a in zip(nodes, actions):
            sub = subview_source(env, node)
            x = T.concat([summary(sub, heading), T.constant(geometry(a))])
            h, c = lstm(p, "traj", x, h, c)
            if a != STOP:
                heading = a
        ctx = attend(keys, h)
        return T.sigmoid(T.add(T.matmul(p["out.w"], T.concat([h, ctx])), p["out.b"]))


class Critic:
    """Linear value head over a detached follower hidden state."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "critic"):
        self.cfg = cfg
        st = self.store = ParamStore(prefix)
        self.prefix = prefix
        st.init_uniform("w", (cfg.hidden,), cfg.hidden, rng)
        st.init_zeros("b", ())

    def value(self, h: Tensor, tape: Tape | None = None) -> Tensor:
        p = self.store.bind(tape)
        return T.add(T.matmul(p[f"{self.prefix}/w"], T.stop_gradient(h)), p[f"{self.prefix}/b"])
