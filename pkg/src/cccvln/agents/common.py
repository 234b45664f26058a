"""Shared model plumbing: sizes, recurrent/attention blocks, scene summaries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import ParamStore, Tensor
from ..autodiff import tensor as T
from ..world import FEATURE_DIM, HEADING_CS, N, STOP, World

SUMMARY_DIM = 2 * FEATURE_DIM


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 20
    embed: int = 16
    hidden: int = 32
    t_max: int = 12
    l_max: int = 48
    attention: bool = True  # False: mean-pooled instruction context


def add_lstm(store: ParamStore, name: str, in_dim: int, hidden: int, rng: np.random.Generator) -> None:
    fan_in = in_dim + hidden
    store.init_uniform(f"{name}.w", (4 * hidden, fan_in), fan_in, rng)
    store.init_uniform(f"{name}.b", (4 * hidden,), fan_in, rng)


def lstm(p: dict, name: str, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    hc = T.lstm_cell(p[f"{name}.w"], p[f"{name}.b"], x, h, c)
    return T.lookup(hc, 0), T.lookup(hc, 1)


def attend(keys: Tensor, query: Tensor) -> Tensor:
    """Dot-product attention summary of the rows of ``keys``."""
    weights = T.softmax(T.matmul(keys, query))
    return T.matmul(weights, keys)


def mean_rows(keys: Tensor) -> Tensor:
    n = keys.value.shape[0]
    return T.matmul(T.constant(np.full(n, 1.0 / n)), keys)


def encode_tokens(p: dict, emb: str, name: str, tokens, hidden: int) -> tuple[Tensor, Tensor, Tensor]:
    """Run an LSTM over token embeddings; returns (stacked hiddens, last h, last c)."""
    h = c = T.constant(np.zeros(hidden))
    table = p[emb]
    hs = []
    for tok in tokens:
        h, c = lstm(p, name, T.lookup(table, int(tok)), h, c)
        hs.append(h)
    return T.stack(hs), h, c


def summary(sub, heading: int) -> Tensor:
    """Scene vector fed to recurrent encoders: [max-pool over subviews, subview faced]."""
    if isinstance(sub, Tensor):
        if sub.tape is None:
            sub = sub.value
        else:
            return T.concat([T.max_pool(sub), T.lookup(sub, heading)])
    return Tensor(np.concatenate([sub.max(axis=0), sub[heading]]))


def action_feature(sub, action: int) -> Tensor:
    """Panoramic action embedding: the chosen subview, or zeros for STOP."""
    if action == STOP:
        return Tensor(np.zeros(FEATURE_DIM))
    if isinstance(sub, Tensor):
        return T.lookup(sub, action) if sub.tape is not None else Tensor(sub.value[action])
    return Tensor(sub[action])


def geometry(action: int) -> np.ndarray:
    return np.zeros(2) if action == STOP else np.array(HEADING_CS[action])


class CounterfactualEnv:
    """A world whose observations at some nodes are replaced by mixed features.

    Navigation structure (edges, masks, distances) stays that of the base world.
    ``tensors`` optionally keeps the differentiable mixed scenes by node.
    """

    def __init__(self, base: World, mixed: dict[int, np.ndarray], tensors: dict[int, Tensor] | None = None):
        self.base = base
        self.mixed = mixed
        self.tensors = tensors or {}

    @property
    def world(self) -> World:
        return self.base

    @property
    def id(self) -> str:
        return self.base.id

    def navigable(self, node: int, d: int) -> bool:
        return self.base.navigable(node, d)

    def neighbor(self, node: int, d: int):
        return self.base.neighbor(node, d)

    def subviews(self, node: int) -> np.ndarray:
        m = self.mixed.get(node)
        return self.base.features[node] if m is None else m

    def subview_tensor(self, node: int):
        t = self.tensors.get(node)
        return t if t is not None else self.subviews(node)

    def detached(self) -> "CounterfactualEnv":
        return CounterfactualEnv(self.base, self.mixed)


def subview_source(env, node: int):
    getter = getattr(env, "subview_tensor", None)
    return getter(node) if getter is not None else env.subviews(node)


@dataclass
class Rollout:
    """Per-step record of a follower or speaker pass."""

    symbols: list[int] = field(default_factory=list)  # actions or tokens emitted
    dists: list[np.ndarray] = field(default_factory=list)  # full per-step distributions
    picked: list[Tensor] = field(default_factory=list)  # p_t(a_t) as 0-d tensors
    hiddens: list[Tensor] = field(default_factory=list)
    nodes: list[int] = field(default_factory=list)  # follower only
    logprob: Tensor | None = None

    def logprob_value(self) -> float:
        return float(self.logprob.value)

    def prob(self) -> Tensor:
        out = self.picked[0]
        for p in self.picked[1:]:
            out = T.mul(out, p)
        return out


def finish(r: Rollout) -> Rollout:
    r.logprob = T.sum(T.log(T.stack(r.picked)))
    return r


def choose(dist: np.ndarray, mode: str, rng: np.random.Generator | None) -> int:
    if not np.all(np.isfinite(dist)):
        raise FloatingPointError("non-finite action distribution")
    if mode == "greedy":
        return int(np.argmax(dist))
    if mode == "sample":
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(dist), u, side="right"))
        idx = min(idx, len(dist) - 1)
        while dist[idx] == 0.0:  # guard against landing on a masked slot through rounding
            idx -= 1
        return idx
    raise ValueError(f"unknown decoding mode {mode!r}")


def start_heading() -> int:
    return N
