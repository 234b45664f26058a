import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cccvln.agents import (
    Creator,
    Critic,
    Discriminator,
    Follower,
    ModelConfig,
    Speaker,
    gate_vector,
    instruction,
)
from cccvln.agents.follower import FORWARD, LEFT, LL_STOP, RIGHT, to_lowlevel
from cccvln.autodiff import Tape, backward
from cccvln.autodiff import tensor as T
from cccvln.oracle import finite_difference_check
from cccvln.world import BOS, E, EOS, N, S, STOP, W, WorldError, generate_world, oracle_instruction, sample_path

CFG = ModelConfig(embed=4, hidden=6, t_max=6, l_max=24)


@pytest.fixture(scope="module")
def scene():
    world = generate_world(4, 3, 3, 0.1)
    other = generate_world(5, 3, 3, 0.1)
    path = sample_path(world, 1, 2, 3)
    return world, other, path, oracle_instruction(world, path)


def models(seed=0, cfg=CFG):
    rng = np.random.default_rng(seed)
    return (Follower(cfg, rng), Speaker(cfg, rng), Creator(cfg, rng), Discriminator(cfg, rng), Critic(cfg, rng),
            Follower(cfg, rng, kind="lowlevel"))


def test_follower_gradients(scene):
    world, _, path, x = scene
    f = models()[0]
    err = finite_difference_check(lambda tape: T.negate(f.logprob(world, path.nodes[0], x, path.actions, tape).logprob),
                                  f.store, coords=20)
    assert err <= 1e-4


def test_lowlevel_follower_gradients(scene):
    world, _, path, x = scene
    f = models()[5]
    acts = f.path_actions(path.actions)
    err = finite_difference_check(lambda tape: T.negate(f.logprob(world, path.nodes[0], x, acts, tape).logprob),
                                  f.store, coords=20)
    assert err <= 1e-4


def test_speaker_gradients(scene):
    world, _, path, x = scene
    s = models()[1]
    err = finite_difference_check(lambda tape: T.negate(s.logprob(world, path.nodes, path.actions, x, tape).logprob),
                                  s.store, coords=20)
    assert err <= 1e-4


def test_creator_gradients_through_follower(scene):
    world, other, path, x = scene
    f, _, c, *_ = models()

    def loss(tape):
        env = c.make_env(world, x, path.nodes, path.actions, other, 3, tape)
        lp = f.logprob(env, path.nodes[0], x, path.actions, tape).logprob
        return T.add(T.negate(lp), T.sum(T.mul(gate_vector(env), gate_vector(env))))

    assert finite_difference_check(loss, c.store, coords=20) <= 1e-4


def test_discriminator_gradients(scene):
    world, _, path, x = scene
    d = models()[3]
    err = finite_difference_check(lambda tape: d.score(world, x, path.nodes, path.actions, tape), d.store, coords=20)
    assert err <= 1e-4


def test_critic_gradients_and_stop_gradient(scene):
    world, _, path, x = scene
    f, *_, v, _ = models()
    err = finite_difference_check(lambda tape: T.mul(v.value(f.rollout(world, path.nodes[0], x, tape=tape).hiddens[-1], tape),
                                                     v.value(f.rollout(world, path.nodes[0], x, tape=tape).hiddens[-1], tape)),
                                  v.store, coords=7)
    assert err <= 1e-4
    tape = Tape()
    h = f.rollout(world, path.nodes[0], x, tape=tape).hiddens[-1]
    grads = backward(tape, v.value(h, tape))
    assert not any(k.startswith("follower/") for k in grads)


def test_zero_discriminator_is_one_half(scene):
    world, _, path, x = scene
    d = models()[3]
    for _, arr in d.store.items():
        arr[...] = 0.0
    assert d.score(world, x, path.nodes, path.actions).item() == 0.5


def test_follower_last_step_forces_stop(scene):
    world, _, path, x = scene
    cfg = ModelConfig(embed=4, hidden=6, t_max=2)
    f = Follower(cfg, np.random.default_rng(0))
    for seed in range(20):
        r = f.rollout(world, path.nodes[0], x, mode="sample", rng=np.random.default_rng(seed))
        assert len(r.symbols) <= 2 and r.symbols[-1] == STOP
        for a, node in zip(r.symbols, r.nodes):
            assert a == STOP or world.navigable(node, a)


def test_follower_rejects_illegal_and_overlong(scene):
    world, _, path, x = scene
    f = models()[0]
    blocked = next(d for d in range(4) if not world.navigable(path.nodes[0], d)) if not world.nav[path.nodes[0]].all() else None
    if blocked is not None:
        with pytest.raises(WorldError):
            f.logprob(world, path.nodes[0], x, [blocked, STOP])
    with pytest.raises(WorldError):
        f.logprob(world, path.nodes[0], x, list(path.actions) + [STOP])
    with pytest.raises(WorldError):
        f.logprob(world, path.nodes[0], x, list(path.actions[:-1]))


def test_speaker_masks_and_length(scene):
    world, _, path, _ = scene
    s = models()[1]
    for seed in range(20):
        r = s.rollout(world, path.nodes, path.actions, mode="sample", rng=np.random.default_rng(seed))
        assert BOS not in r.symbols and r.symbols[-1] == EOS and len(r.symbols) <= CFG.l_max
        assert instruction(r)[0] == BOS
    with pytest.raises(WorldError):
        s.logprob(world, path.nodes, path.actions, (BOS, EOS, 3, EOS))
    with pytest.raises(WorldError):
        s.logprob(world, path.nodes, path.actions, (BOS,) + (3,) * CFG.l_max + (EOS,))
    with pytest.raises(WorldError):
        s.encode(s._p(None), world, path.nodes, path.actions[:-1] + (N,))


def test_sampled_logprob_equals_teacher_forced(scene):
    world, _, path, x = scene
    f, s, *_ = models(2)
    r = s.rollout(world, path.nodes, path.actions, mode="sample", rng=np.random.default_rng(1))
    again = s.logprob(world, path.nodes, path.actions, instruction(r))
    assert r.logprob_value() == again.logprob_value()
    rf = f.rollout(world, path.nodes[0], x, mode="sample", rng=np.random.default_rng(1))
    assert f.logprob(world, path.nodes[0], x, rf.symbols).logprob_value() == rf.logprob_value()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([N, E, S, W]), min_size=1, max_size=6), st.sampled_from([N, E, S, W]))
def test_lowlevel_decomposition_replays_moves(moves, heading):
    ll = to_lowlevel(moves + [STOP], heading)
    assert ll[-1] == LL_STOP and ll.count(FORWARD) == len(moves)
    h, got = heading, []
    turn_l = {N: W, W: S, S: E, E: N}
    turn_r = {N: E, E: S, S: W, W: N}
    for a in ll[:-1]:
        if a == LEFT:
            h = turn_l[h]
        elif a == RIGHT:
            h = turn_r[h]
        else:
            got.append(h)
    assert got == moves


def test_reversal_is_two_right_turns():
    assert to_lowlevel([S, STOP], N) == [RIGHT, RIGHT, FORWARD, LL_STOP]


def test_make_env_rejects_same_world(scene):
    world, _, path, x = scene
    c = models()[2]
    with pytest.raises(WorldError):
        c.make_env(world, x, path.nodes, path.actions, world, 0)


def test_mix_scene_shape_check():
    c = models()[2]
    u = T.constant(np.zeros(CFG.hidden))
    with pytest.raises(WorldError):
        c.mix_scene(u, np.zeros((4, 11)), np.zeros((3, 11)))


def test_counterfactual_env_keeps_topology(scene):
    world, other, path, x = scene
    c = models()[2]
    env = c.make_env(world, x, path.nodes, path.actions, other, 0)
    for node in range(world.n_nodes):
        for d in range(4):
            assert env.neighbor(node, d) == world.neighbor(node, d)
    visited = set(path.nodes)
    for node in range(world.n_nodes):
        if node not in visited:
            np.testing.assert_array_equal(env.subviews(node), world.subviews(node))
