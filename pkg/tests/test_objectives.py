import numpy as np
import pytest

from cccvln.agents import Creator, Critic, Discriminator, Follower, ModelConfig, Speaker
from cccvln.autodiff import Tape, backward
from cccvln.autodiff import tensor as T
from cccvln.objectives import (
    AnnealSchedule,
    creator_loss,
    discounted_returns,
    discriminator_loss,
    il_loss,
    rl_loss,
    speaker_mle_loss,
    step_rewards,
)
from cccvln.world import World, generate_world, oracle_instruction, sample_path

CFG = ModelConfig(embed=4, hidden=6, t_max=6, l_max=24)


def open_world(width=3, height=2):
    n = width * height
    nav = np.zeros((n, 4), bool)
    for node in range(n):
        x, y = node % width, node // width
        nav[node] = [y > 0, x < width - 1, y < height - 1, x > 0]
    return World("hand", width, height, np.zeros((n, 4), np.int64), nav)


@pytest.fixture(scope="module")
def ep():
    world = generate_world(8, 3, 3, 0.0)
    path = sample_path(world, 2, 2, 3)
    return world, generate_world(9, 3, 3, 0.0), path, oracle_instruction(world, path)


def test_discounted_returns_by_hand():
    np.testing.assert_allclose(discounted_returns(np.array([1.0, 0.0, 2.0]), 0.5), [1.5, 1.0, 2.0])


def test_step_rewards_by_hand():
    w = open_world()
    # goal 2: 0 -> 1 -> 2 then STOP in place; distances 2, 1, 0, 0
    r = step_rewards(w, [0, 1, 2], [1, 2, 2], goal=2, radius=0)
    np.testing.assert_allclose(r, [1.0, 1.0, 1.0])
    r = step_rewards(w, [0, 3], [3, 3], goal=2, radius=0)
    np.testing.assert_allclose(r, [-1.0, 0.0])


def test_anneal_schedule():
    a = AnnealSchedule()
    assert a.beta(0) == 1.0 and a.beta(10) == pytest.approx(0.995 ** 10)
    assert a.beta(10_000) == 0.2
    il, rl = T.constant(np.array(2.0)), T.constant(np.array(4.0))
    assert a.combine(il, rl, 10_000).item() == pytest.approx(0.2 * 2 + 0.8 * 4)


def test_il_and_speaker_losses_are_negative_log_likelihoods(ep):
    world, _, path, x = ep
    rng = np.random.default_rng(0)
    f, s = Follower(CFG, rng), Speaker(CFG, rng)
    assert il_loss(f, world, x, path.nodes[0], path.actions).item() == -f.logprob(world, path.nodes[0], x, path.actions).logprob_value()
    assert speaker_mle_loss(s, world, path.nodes, path.actions, x).item() > 0
    with pytest.raises(ValueError):
        speaker_mle_loss(s, world, path.nodes, path.actions, ())


def test_lowlevel_il_converts_actions(ep):
    world, _, path, x = ep
    f = Follower(CFG, np.random.default_rng(0), kind="lowlevel")
    assert np.isfinite(il_loss(f, world, x, path.nodes[0], path.actions).item())


def test_rl_loss_shapes_and_critic_isolation(ep):
    world, _, path, x = ep
    rng = np.random.default_rng(1)
    f, v = Follower(CFG, rng), Critic(CFG, rng)
    tape = Tape()
    res = rl_loss(f, v, world, x, path.nodes[0], path.nodes[-1], np.random.default_rng(3), tape)
    assert len(res.rewards) == len(res.returns) == len(res.values) == len(res.nodes) - 1
    np.testing.assert_allclose(res.returns, discounted_returns(res.rewards, 0.95))
    g = backward(tape, res.critic)
    assert g and all(k.startswith("critic/") for k in g)
    g = backward(tape, res.policy)
    assert not any(k.startswith("critic/") for k in g)


def test_creator_loss_freezes_discriminator(ep):
    world, other, path, x = ep
    rng = np.random.default_rng(2)
    c, d = Creator(CFG, rng), Discriminator(CFG, rng)
    tape = Tape()
    env = c.make_env(world, x, path.nodes, path.actions, other, 0, tape)
    loss, l2, dval = creator_loss(d, env, x, path.nodes, path.actions, tape)
    lam = np.concatenate([sc.lambdas.value for sc in env.scenes.values()])
    assert l2 == pytest.approx(np.linalg.norm(lam), abs=1e-12)
    assert loss.item() == pytest.approx(l2 + np.log(1 - dval), abs=1e-12)
    g = backward(tape, loss)
    assert g and all(k.startswith("creator/") for k in g)


def test_discriminator_loss_treats_created_scenes_as_constants(ep):
    world, other, path, x = ep
    rng = np.random.default_rng(2)
    c, d = Creator(CFG, rng), Discriminator(CFG, rng)
    tape = Tape()
    env = c.make_env(world, x, path.nodes, path.actions, other, 0, tape)
    loss = discriminator_loss(d, world, env, x, path.nodes, path.actions, tape)
    fake = d.score(env.detached(), x, path.nodes, path.actions).item()
    real = d.score(world, x, path.nodes, path.actions).item()
    assert loss.item() == pytest.approx(fake - real, abs=1e-12)
    g = backward(tape, loss)
    assert g and all(k.startswith("disc/") for k in g)
