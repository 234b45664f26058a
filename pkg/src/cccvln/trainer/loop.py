"""The training loop: per-sample updates on temporaries, committed per batch."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..agents import Creator, Critic, Discriminator, Follower, ModelConfig, Speaker, instruction
from ..autodiff import Tape, Tensor, backward, sgd_step, split_grads
from ..autodiff import tensor as T
from ..cycle import BaselineTracker, estimate_delta_A, estimate_delta_X, episode_rng
from ..metrics import corpus_bleu, cider_lite, nav_metrics, nav_result, rouge_l
from ..objectives import AnnealSchedule, creator_loss, discriminator_loss, il_loss, rl_loss, speaker_mle_loss
from ..world import BOS, EOS, Datasets, Episode, SplitSpec, make_datasets, make_world_set
from .config import TrainConfig
from .runlog import RunLog

# episode_rng keys: which random stream an episode draws from
K_DA, K_DX, K_DAU, K_CFA, K_CFX, K_REF, K_RL, K_CFRL = range(8)


class NumericError(FloatingPointError):
    pass


@dataclass
class Models:
    follower: Follower
    speaker: Speaker
    creator: Creator
    disc: Discriminator
    critic: Critic

    def stores(self) -> list:
        return [self.follower.store, self.speaker.store, self.creator.store, self.disc.store, self.critic.store]


def model_config(cfg: TrainConfig, lowlevel: bool = False) -> ModelConfig:
    return ModelConfig(vocab_size=20, embed=cfg.embed, hidden=cfg.hidden,
                       t_max=cfg.t_max_lowlevel if lowlevel else cfg.t_max,
                       l_max=cfg.l_max, attention=cfg.attention)


def build_models(cfg: TrainConfig) -> Models:
    """Initial parameters depend only on the seed and sizes, never on the mode."""
    s = cfg.seed
    low = cfg.follower_kind == "lowlevel"
    return Models(
        Follower(model_config(cfg, low), np.random.default_rng([s, 101]), kind=cfg.follower_kind),
        Speaker(model_config(cfg), np.random.default_rng([s, 102])),
        Creator(model_config(cfg), np.random.default_rng([s, 103])),
        Discriminator(model_config(cfg), np.random.default_rng([s, 104])),
        Critic(model_config(cfg), np.random.default_rng([s, 105])),
    )


def build_data(cfg: TrainConfig) -> Datasets:
    worlds = make_world_set(cfg.dataset_seed, cfg.n_worlds, cfg.width, cfg.height, cfg.wall_density,
                            cfg.min_len, cfg.max_len)
    split = SplitSpec(cfg.n_unseen_worlds, cfg.n_val_seen, cfg.n_val_unseen, cfg.min_len, cfg.max_len)
    return make_datasets(worlds, cfg.dataset_seed, cfg.n_labeled, cfg.m_unlabeled, split)


def _finite(loss: Tensor, it: int, where: str) -> None:
    if not math.isfinite(float(loss.value)):
        raise NumericError(f"non-finite loss at iteration {it}, {where}")


def _total(parts: list[Tensor]) -> Tensor:
    return parts[0] if len(parts) == 1 else T.sum(T.stack(parts))


@dataclass
class _Acc:
    """Per-iteration sums for the log row."""
    sums: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def add(self, key: str, v: float) -> None:
        self.sums[key] = self.sums.get(key, 0.0) + float(v)
        self.counts[key] = self.counts.get(key, 0) + 1

    def means(self) -> dict:
        return {k: self.sums[k] / self.counts[k] for k in self.sums}


class Trainer:
    """Holds models, data, baselines and RNG state; ``run`` advances to ``cfg.iterations``.

    ``bt`` mode runs ``iterations`` speaker-only steps, labels U greedily, then
    ``iterations`` follower steps on D plus the pseudo-labelled U; the global
    iteration counter spans both phases.
    """

    def __init__(self, cfg: TrainConfig, data: Datasets | None = None, models: Models | None = None):
        self.cfg = cfg
        self.data = data if data is not None else build_data(cfg)
        self.models = models if models is not None else build_models(cfg)
        self.baselines = BaselineTracker(cfg.baseline_momentum)
        self.anneal = AnnealSchedule(cfg.anneal_beta0, cfg.anneal_decay, cfg.anneal_floor)
        self.rng = np.random.default_rng([cfg.seed, 11])
        self.iteration = 0
        self.log = RunLog()
        self.trace: list[str] = []
        self.terms = cfg.terms()
        self._pseudo: list[Episode] | None = None
        self._versions = {name: 0 for name in ("f", "s", "c", "d", "v")}
        self._pending: dict[str, tuple] = {}
        if not self.data.labeled:
            raise ValueError("labeled dataset is empty")

    # -- bookkeeping ------------------------------------------------------------

    def _t(self, msg: str) -> None:
        if self.cfg.trace:
            self.trace.append(msg)

    def _store(self, key: str):
        m = self.models
        return {"f": m.follower.store, "s": m.speaker.store, "c": m.creator.store,
                "d": m.disc.store, "v": m.critic.store}[key]

    def _lr(self, key: str) -> float:
        if key == "c" and self.cfg.lr_creator is not None:
            return self.cfg.lr_creator
        if key == "d" and self.cfg.lr_disc is not None:
            return self.cfg.lr_disc
        return self.cfg.lr

    def _step(self, keys: str, grads: dict) -> None:
        """Per-sample update of the temporaries, or accumulation for the batch-mean variant."""
        for key in keys:
            store = self._store(key)
            g = split_grads(grads, store)
            if not g:
                continue
            if self.cfg.batch_mean and key != "d":
                acc, n = self._pending.get(key, ({}, 0))
                for name, v in g.items():
                    acc[name] = acc[name] + v if name in acc else v.copy()
                self._pending[key] = (acc, n + 1)
                self._t(f"accumulate {key}")
            else:
                sgd_step(store, g, self._lr(key), self.cfg.clip_norm)
                self._versions[key] += 1
                self._t(f"step {key}{'' if key == 'd' else '_tmp'} v{self._versions[key]}")

    def _flush(self) -> None:
        for key in sorted(self._pending):
            acc, n = self._pending[key]
            sgd_step(self._store(key), {k: v / n for k, v in acc.items()}, self._lr(key), self.cfg.clip_norm)
            self._versions[key] += 1
            self._t(f"step {key} (batch mean) v{self._versions[key]}")
        self._pending = {}

    def _reads(self, keys: str) -> str:
        return ",".join(f"{k}@v{self._versions[k]}" for k in keys)

    # -- losses ---------------------------------------------------------------

    def _ramp(self, it: int) -> float:
        """Weight on the cycle and counterfactual terms; ramps in as the IL signal anneals."""
        return 1.0 - self.anneal.beta(it) if self.cfg.cycle_warmup else 1.0

    def _task_losses(self, env, ep: Episode, tape: Tape, it: int, i: int, rl_key: int, acc: _Acc,
                     prefix: str = "") -> list[Tensor]:
        m, cfg = self.models, self.cfg
        parts = []
        il = il_loss(m.follower, env, ep.instruction, ep.start, ep.actions, tape)
        if cfg.use_rl:
            rl = rl_loss(m.follower, m.critic, env, ep.instruction, ep.start, ep.goal,
                         episode_rng(cfg.seed, it, i, rl_key), tape, cfg.gamma, cfg.success_radius)
            parts.append(self.anneal.combine(il, rl.policy, it))
            parts.append(rl.critic)
            acc.add(prefix + "rl", rl.policy.value)
        else:
            parts.append(il)
        acc.add(prefix + "il", il.value)
        spk = speaker_mle_loss(m.speaker, env, ep.nodes, ep.actions, ep.instruction, tape)
        parts.append(spk)
        acc.add(prefix + "speaker", spk.value)
        return parts

    def _reference_world(self, ep: Episode, rng: np.random.Generator):
        pool = [w for w in self.data.train_world_ids if w != ep.world_id]
        if not pool:
            raise ValueError("the creator needs at least two training worlds")
        return self.data.worlds[pool[int(rng.integers(len(pool)))]]

    def _labeled_episode(self, ep: Episode, i: int, it: int, b_f, b_s, acc: _Acc,
                         f_rewards: list, s_rewards: list, created: list) -> None:
        cfg, m, terms = self.cfg, self.models, self.terms
        world = self.data.worlds[ep.world_id]
        w = cfg.w_cycle * self._ramp(it)
        # cycle terms and task losses on E
        tape = Tape()
        parts: list[Tensor] = []
        if "dA" in terms:
            self._t(f"ep{i} sample X_hat {self._reads('s')}")
            e = estimate_delta_A(m.speaker, m.follower, world, ep.nodes, ep.actions, b_f,
                                 episode_rng(cfg.seed, it, i, K_DA), tape)
            parts.append(T.scalar_mul(e.loss, w))
            f_rewards.append(e.reward)
            acc.add("cycle_A", e.point.value)
        if "dX" in terms:
            self._t(f"ep{i} sample A_hat {self._reads('f')}")
            e = estimate_delta_X(m.speaker, m.follower, world, ep.start, ep.instruction, b_s,
                                 episode_rng(cfg.seed, it, i, K_DX), tape)
            parts.append(T.scalar_mul(e.loss, w))
            s_rewards.append(e.reward)
            acc.add("cycle_X", e.point.value)
        parts += self._task_losses(world, ep, tape, it, i, K_RL, acc)
        loss = _total(parts)
        _finite(loss, it, f"labeled episode {i} ({ep.world_id})")
        self._t(f"ep{i} estimate cycle+task on E")
        self._step("sfv", backward(tape, loss))
        if "creator" not in terms:
            return
        # counterfactual environment and creator update
        rng = episode_rng(cfg.seed, it, i, K_REF)
        ref = self._reference_world(ep, rng)
        tape = Tape()
        self._t(f"ep{i} create E_bar {self._reads('c')}")
        env_bar = m.creator.make_env(world, ep.instruction, ep.nodes, ep.actions, ref, rng, tape,
                                     zero_reference="zero_reference" in terms)
        lc, l2, _ = creator_loss(m.disc, env_bar, ep.instruction, ep.nodes, ep.actions, tape)
        lc = T.scalar_mul(lc, cfg.w_creator)
        _finite(lc, it, f"creator loss, episode {i}")
        acc.add("creator", lc.value)
        acc.add("lambda_l2", l2)
        self._t(f"ep{i} estimate L_c")
        self._step("c", backward(tape, lc))
        bar = env_bar.detached()
        created.append((ep, world, bar))
        # cycle terms and task losses on E_bar (created scenes are inputs, not parameters)
        parts = []
        tape = Tape()
        if "cfA" in terms:
            e = estimate_delta_A(m.speaker, m.follower, bar, ep.nodes, ep.actions, b_f,
                                 episode_rng(cfg.seed, it, i, K_CFA), tape)
            parts.append(T.scalar_mul(e.loss, w))
            f_rewards.append(e.reward)
            acc.add("cf_A", e.point.value)
        if "cfX" in terms:
            e = estimate_delta_X(m.speaker, m.follower, bar, ep.start, ep.instruction, b_s,
                                 episode_rng(cfg.seed, it, i, K_CFX), tape)
            parts.append(T.scalar_mul(e.loss, w))
            s_rewards.append(e.reward)
            acc.add("cf_X", e.point.value)
        if "cf_task" in terms:
            task = self._task_losses(bar, ep, tape, it, i, K_CFRL, _Acc())
            t_loss = T.scalar_mul(_total(task), cfg.w_cf_task * self._ramp(it))
            acc.add("cf_task", t_loss.value)
            parts.append(t_loss)
        if parts:
            loss = _total(parts)
            _finite(loss, it, f"counterfactual episode {i}")
            self._t(f"ep{i} estimate cycle+task on E_bar")
            self._step("sfv", backward(tape, loss))

    def _unlabeled_episode(self, ep: Episode, j: int, it: int, b_f, acc: _Acc, f_rewards: list) -> None:
        cfg, m = self.cfg, self.models
        world = self.data.worlds[ep.world_id]
        tape = Tape()
        self._t(f"u{j} sample X_hat {self._reads('s')}")
        e = estimate_delta_A(m.speaker, m.follower, world, ep.nodes, ep.actions, b_f,
                             episode_rng(cfg.seed, it, j, K_DAU), tape)
        loss = T.scalar_mul(e.loss, cfg.w_cycle * self._ramp(it))
        _finite(loss, it, f"unlabeled episode {j} ({ep.world_id})")
        f_rewards.append(e.reward)
        acc.add("cycle_Au", e.point.value)
        self._t(f"u{j} estimate dA'")
        self._step("sf", backward(tape, loss))

    # -- iterations -------------------------------------------------------------

    def _draw(self, pool: list, size: int) -> list:
        if not pool or size == 0:
            return []
        idx = self.rng.choice(len(pool), size=min(size, len(pool)), replace=False)
        return [pool[int(k)] for k in idx]

    def _begin_batch(self):
        keys = "sfcv"
        saved = {k: self._store(k) for k in keys}
        if not self.cfg.batch_mean:
            m = self.models
            m.follower.store, m.speaker.store = saved["f"].copy(), saved["s"].copy()
            m.creator.store, m.critic.store = saved["c"].copy(), saved["v"].copy()
        self._t("copy temporaries")
        return saved

    def _commit(self, saved: dict) -> None:
        if self.cfg.batch_mean:
            self._flush()
            return
        m = self.models
        for key, attr, holder in (("s", "store", m.speaker), ("f", "store", m.follower),
                                  ("c", "store", m.creator), ("v", "store", m.critic)):
            saved[key].assign(getattr(holder, attr))
            setattr(holder, attr, saved[key])
        self._t("commit temporaries")

    def ccc_iteration(self) -> dict:
        cfg = self.cfg
        it = self.iteration
        batch = self._draw(self.data.labeled, cfg.batch_size)
        ubatch = self._draw(self.data.unlabeled, cfg.u_batch_size)
        b_f, b_s = self.baselines.snapshot()
        saved = self._begin_batch()
        acc = _Acc()
        f_rewards: list[float] = []
        s_rewards: list[float] = []
        created: list = []
        for i, ep in enumerate(batch):
            self._labeled_episode(ep, i, it, b_f, b_s, acc, f_rewards, s_rewards, created)
        if "dAu" in self.terms:
            for j, ep in enumerate(ubatch):
                self._unlabeled_episode(ep, j, it, b_f, acc, f_rewards)
        self._commit(saved)
        if "disc" in self.terms and created:
            tape = Tape()
            losses = [discriminator_loss(self.models.disc, world, bar, ep.instruction, ep.nodes, ep.actions, tape)
                      for ep, world, bar in created]
            dl = T.scalar_mul(T.sum(T.stack(losses)), 1.0 / len(losses))
            _finite(dl, it, "discriminator loss")
            acc.add("disc", dl.value)
            self._step("d", backward(tape, dl))
        self.baselines.update(f_rewards, s_rewards)
        self._t("update baselines")
        return acc.means()

    def bt_iteration(self) -> dict:
        cfg, m = self.cfg, self.models
        it = self.iteration
        acc = _Acc()
        if it < cfg.iterations:
            batch = self._draw(self.data.labeled, cfg.batch_size)
            self._draw(self.data.unlabeled, cfg.u_batch_size)
            saved = self._begin_batch()
            for i, ep in enumerate(batch):
                world = self.data.worlds[ep.world_id]
                tape = Tape()
                loss = speaker_mle_loss(m.speaker, world, ep.nodes, ep.actions, ep.instruction, tape)
                _finite(loss, it, f"speaker episode {i}")
                acc.add("speaker", loss.value)
                self._step("s", backward(tape, loss))
            self._commit(saved)
            return acc.means()
        pool = self.data.labeled + self.pseudo_labels()
        batch = self._draw(pool, cfg.batch_size)
        saved = self._begin_batch()
        for i, ep in enumerate(batch):
            world = self.data.worlds[ep.world_id]
            tape = Tape()
            parts = []
            il = il_loss(m.follower, world, ep.instruction, ep.start, ep.actions, tape)
            acc.add("il", il.value)
            if cfg.use_rl:
                rl = rl_loss(m.follower, m.critic, world, ep.instruction, ep.start, ep.goal,
                             episode_rng(cfg.seed, it, i, K_RL), tape, cfg.gamma, cfg.success_radius)
                parts += [self.anneal.combine(il, rl.policy, it - cfg.iterations), rl.critic]
                acc.add("rl", rl.policy.value)
            else:
                parts.append(il)
            loss = _total(parts)
            _finite(loss, it, f"follower episode {i}")
            self._step("fv", backward(tape, loss))
        self._commit(saved)
        return acc.means()

    def pseudo_labels(self) -> list[Episode]:
        """Greedy speaker instructions for every unlabeled path (cached)."""
        if self._pseudo is None:
            sp = self.models.speaker
            out = []
            for ep in self.data.unlabeled:
                world = self.data.worlds[ep.world_id]
                x = instruction(sp.rollout(world, ep.nodes, ep.actions, mode="greedy"))
                if x[-1] != EOS:
                    x = x + (EOS,)
                out.append(Episode(ep.world_id, ep.nodes, ep.actions, x, True))
            self._pseudo = out
        return self._pseudo

    @property
    def total_iterations(self) -> int:
        return 2 * self.cfg.iterations if self.cfg.mode == "bt" else self.cfg.iterations

    def step(self) -> dict:
        try:
            means = self.bt_iteration() if self.cfg.mode == "bt" else self.ccc_iteration()
        except NumericError:
            raise
        except FloatingPointError as exc:
            raise NumericError(f"iteration {self.iteration}: {exc}") from exc
        self.iteration += 1
        row = {"iteration": self.iteration, **means,
               "beta": self.anneal.beta(self.iteration - 1), "b_f": self.baselines.b_f, "b_s": self.baselines.b_s}
        every = self.cfg.eval_every
        if every and self.iteration % every == 0:
            row.update(evaluate(self.models, self.data, self.cfg.eval_split, self.cfg))
        self.log.append(row)
        return row

    def run(self, until: int | None = None) -> RunLog:
        stop = self.total_iterations if until is None else min(until, self.total_iterations)
        while self.iteration < stop:
            self.step()
        return self.log


def _eval_episode(models: Models, data: Datasets, ep: Episode):
    world = data.worlds[ep.world_id]
    r = models.follower.rollout(world, ep.start, ep.instruction, mode="greedy")
    x = models.speaker.rollout(world, ep.nodes, ep.actions, mode="greedy").symbols
    return (nav_result(world, r.nodes, ep.goal), [t for t in x if t not in (BOS, EOS)],
            [[t for t in ep.instruction if t not in (BOS, EOS)]])


def evaluate(models: Models, data: Datasets, split: str, cfg: TrainConfig, threads: int = 1) -> dict:
    """Greedy follower and speaker on one split; SR/OR/SPL in percent, text metrics in [0, 1] (CIDEr x10).

    Episodes may fan out over ``threads`` workers; results are gathered in split order, so the
    reduction is the same for any thread count.
    """
    eps = data.splits.get(split)
    if not eps:
        raise ValueError(f"split {split!r} is empty or unknown")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(lambda ep: _eval_episode(models, data, ep), eps))
    else:
        out = [_eval_episode(models, data, ep) for ep in eps]
    results = [o[0] for o in out]
    cands = [o[1] for o in out]
    refs = [o[2] for o in out]
    nav = nav_metrics(results, cfg.success_radius)
    return {
        "SR": 100.0 * nav["SR"], "NE": nav["NE"], "OR": 100.0 * nav["OR"], "SPL": 100.0 * nav["SPL"],
        "Bleu-1": corpus_bleu(cands, refs, 1), "Bleu-4": corpus_bleu(cands, refs, 4),
        "CIDEr": float(np.mean(cider_lite(cands, refs))),
        "Rouge": float(np.mean([rouge_l(c, r) for c, r in zip(cands, refs)])),
    }
