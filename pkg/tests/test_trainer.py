import numpy as np
import pytest

from cccvln.autodiff import Tape, backward, sgd_step
from cccvln.objectives import il_loss
from cccvln.trainer import (
    COLUMNS,
    ConfigError,
    NumericError,
    RunLog,
    Trainer,
    TrainConfig,
    checkpoint_bytes,
    evaluate,
    load_config,
    restore,
    runlog_charts,
)
from cccvln.autodiff import CheckpointError

SMALL = dict(hidden=4, embed=3, n_worlds=3, n_unseen_worlds=1, n_labeled=6, m_unlabeled=6,
             n_val_seen=4, n_val_unseen=4, batch_size=2, u_batch_size=2, iterations=3)


def small(**kw):
    return TrainConfig(**{**SMALL, **kw})


def flat(tr):
    return np.concatenate([s.flat() for s in tr.models.stores()])


def test_identical_runs_are_bit_identical():
    a, b = Trainer(small(seed=3)), Trainer(small(seed=3))
    a.run()
    b.run()
    assert checkpoint_bytes(a) == checkpoint_bytes(b)
    assert a.log.to_csv() == b.log.to_csv()


def test_different_seeds_differ():
    a, b = Trainer(small(seed=3)), Trainer(small(seed=4))
    a.run()
    b.run()
    assert checkpoint_bytes(a) != checkpoint_bytes(b)


@pytest.mark.parametrize("mode", ["ccc", "bt"])
def test_resume_matches_unbroken_run(mode):
    cfg = small(seed=1, mode=mode, preset="rcm")
    full = Trainer(cfg)
    full.run()
    part = Trainer(cfg)
    part.run(until=2 if mode == "ccc" else 4)
    blob = checkpoint_bytes(part)
    resumed = restore(blob, part.data)
    assert checkpoint_bytes(resumed) == blob
    resumed.log = part.log
    resumed.run()
    assert checkpoint_bytes(resumed) == checkpoint_bytes(full)
    assert resumed.log.to_csv() == full.log.to_csv()


def test_corrupt_checkpoint_is_structured_error():
    tr = Trainer(small())
    blob = checkpoint_bytes(tr)
    with pytest.raises(CheckpointError):
        restore(b"garbage\n" + blob)
    with pytest.raises(CheckpointError):
        restore(blob[: len(blob) // 2])


def test_zero_learning_rate_leaves_parameters():
    tr = Trainer(small(lr=0.0))
    before = flat(tr)
    tr.run()
    np.testing.assert_array_equal(flat(tr), before)


def test_il_curve_matches_reference_loop():
    cfg = small(mode="baseline", iterations=4, seed=2)
    tr = Trainer(cfg)
    ref = Trainer(cfg)  # fresh copy of data and initial parameters, driven by hand below
    fol = ref.models.follower
    rng = np.random.default_rng([cfg.seed, 11])
    for it in range(cfg.iterations):
        row = tr.step()
        idx = rng.choice(len(ref.data.labeled), size=cfg.batch_size, replace=False)
        rng.choice(len(ref.data.unlabeled), size=cfg.u_batch_size, replace=False)
        theta = fol.store
        fol.store = theta.copy()
        losses = []
        for k in idx:
            ep = ref.data.labeled[int(k)]
            tape = Tape()
            loss = il_loss(fol, ref.data.worlds[ep.world_id], ep.instruction, ep.start, ep.actions, tape)
            losses.append(loss.item())
            sgd_step(fol.store, backward(tape, loss), cfg.lr, cfg.clip_norm)
        theta.assign(fol.store)
        fol.store = theta
        assert abs(row["il"] - np.mean(losses)) <= 1e-12
    np.testing.assert_array_equal(tr.models.follower.store.flat(), fol.store.flat())


EXPECTED_TRACE = [
    "copy temporaries",
    "ep0 sample X_hat s@v0",
    "ep0 sample A_hat f@v0",
    "ep0 estimate cycle+task on E",
    "step s_tmp v1",
    "step f_tmp v1",
    "ep0 create E_bar c@v0",
    "ep0 estimate L_c",
    "step c_tmp v1",
    "ep0 estimate cycle+task on E_bar",
    "step s_tmp v2",
    "step f_tmp v2",
    "u0 sample X_hat s@v2",
    "u0 estimate dA'",
    "step f_tmp v3",
    "commit temporaries",
    "step d v1",
    "update baselines",
]


def test_single_episode_step_order():
    tr = Trainer(small(batch_size=1, u_batch_size=1, iterations=1, trace=True))
    tr.run()
    assert tr.trace == EXPECTED_TRACE


def test_temporaries_chain_within_a_batch():
    tr = Trainer(small(batch_size=3, u_batch_size=0, iterations=1, trace=True, mode="ablation:dA+dX"))
    tr.run()
    reads = [ln for ln in tr.trace if "sample A_hat" in ln]
    # episode i+1 reads the follower temporaries written by episode i, not theta
    assert reads == ["ep0 sample A_hat f@v0", "ep1 sample A_hat f@v1", "ep2 sample A_hat f@v2"]


def test_commit_writes_temporaries_back():
    tr = Trainer(small(iterations=1, mode="ablation:dA"))
    store = tr.models.follower.store
    before = store.flat().copy()
    tr.run()
    assert tr.models.follower.store is store
    assert not np.array_equal(store.flat(), before)


def test_batch_mean_variant_runs_and_differs():
    a, b = Trainer(small(seed=5)), Trainer(small(seed=5, batch_mean=True))
    a.run()
    b.run()
    assert np.all(np.isfinite(flat(b)))
    assert not np.array_equal(flat(a), flat(b))


def test_bt_pseudo_labels():
    tr = Trainer(small(mode="bt", iterations=2))
    tr.run(until=2)
    labels = tr.pseudo_labels()
    assert len(labels) == len(tr.data.unlabeled)
    again = Trainer(small(mode="bt", iterations=2))
    again.run(until=2)
    assert [e.instruction for e in again.pseudo_labels()] == [e.instruction for e in labels]
    tr.run()
    assert tr.iteration == 4


def test_non_finite_loss_aborts_with_location():
    tr = Trainer(small())
    tr.models.follower.store["follower/w2"][...] = np.nan
    with pytest.raises(NumericError, match="iteration 0"):
        tr.step()


def test_il_smoke_on_one_episode():
    tr = Trainer(small(mode="baseline", n_labeled=1, batch_size=1, u_batch_size=0, iterations=2000, hidden=8,
                       embed=4))
    il = None
    while tr.iteration < 2000:
        il = tr.step()["il"]
        if il < 0.05:
            break
    assert il < 0.05


def test_evaluate_is_deterministic_and_thread_invariant():
    tr = Trainer(small())
    tr.run()
    a = evaluate(tr.models, tr.data, "val_unseen", tr.cfg)
    b = evaluate(tr.models, tr.data, "val_unseen", tr.cfg, threads=3)
    assert a == b
    assert a["SPL"] <= a["SR"] <= a["OR"]
    with pytest.raises(ValueError):
        evaluate(tr.models, tr.data, "test", tr.cfg)


def test_config_parsing_and_errors():
    cfg = load_config("# comment\nlr = 0.5\ntrace = yes\nlr_disc = none\n", {"seed": 4})
    assert cfg.lr == 0.5 and cfg.trace and cfg.lr_disc is None and cfg.seed == 4
    assert load_config(cfg.to_text()) == cfg
    with pytest.raises(ConfigError, match="line 2"):
        load_config("lr = 1\nbogus = 3\n")
    with pytest.raises(ConfigError, match="line 1"):
        load_config("lr 1\n")
    with pytest.raises(ConfigError):
        TrainConfig(mode="ablation:nope")
    with pytest.raises(ConfigError):
        TrainConfig(preset="transformer")


def test_ablation_rows_select_terms():
    assert small(mode="baseline").terms() == frozenset()
    assert small(mode="ablation:dA+dX").terms() == {"dA", "dX"}
    assert small(mode="ccc").terms() == small(mode="ablation:full").terms()
    assert "zero_reference" in small(mode="ablation:cf-noref").terms()


def test_runlog_round_trip_and_charts():
    tr = Trainer(small(eval_every=3))
    tr.run()
    text = tr.log.to_csv()
    assert text.splitlines()[0].split(",") == list(COLUMNS)
    rows = RunLog.parse(text)
    assert len(rows) == 3 and rows[-1]["SR"] is not None
    assert rows[0]["il"] == tr.log.rows[0]["il"]
    charts = runlog_charts(rows)
    assert set(charts) >= {"losses", "navigation"}
    assert all(svg.startswith("<svg") for svg in charts.values())
    with pytest.raises(KeyError):
        RunLog().append({"nope": 1})
