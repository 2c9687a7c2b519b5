import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sganvo.data import SynthSceneSpec, generate_synth, stack_windows
from sganvo.losses import LossWeights, discriminator_layer_loss
from sganvo.network import SGANVONet, StackConfig
from sganvo.tensor import Rng, reachable
from sganvo.trainer import LOG_HEADER, TrainConfig, TrainState, lr_schedule, train, train_step

SMALL = StackConfig(n_layers=0, window=2, height=32, width=64)
WEIGHTS = LossWeights(lambda_l=(1.0,))


@pytest.fixture(scope="module")
def windows():
    w = generate_synth(SynthSceneSpec(motion=[[0.1, 0, 0.05, 0, 0, 0]], n_frames=3))
    from sganvo.data import sliding_windows

    return sliding_windows(w.frames, 2)


def cfg(**kw):
    base = dict(iterations=4, batch_size=1, n_critic=1, seed=3, window=2, prefetch=0)
    base.update(kw)
    return TrainConfig(**base)


def log_rows(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == LOG_HEADER
    return [r[:-1] for r in rows[1:]]  # wall_ms is timing, not state


def params(net):
    return {n: p.data.copy() for n, p in net.named_parameters()}


def test_lr_schedule_examples():
    assert lr_schedule(0, 100, 1e-4) == 1e-4
    assert lr_schedule(19, 100, 1e-4) == 1e-4
    assert lr_schedule(20, 100, 1e-4) == 5e-5
    assert lr_schedule(99, 100, 1e-4) == 1e-4 * 0.5**4 == 6.25e-6


@given(st.integers(5, 5000))
def test_lr_schedule_five_non_increasing_plateaus(total):
    rates = [lr_schedule(i, total, 1e-4) for i in range(total)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert sorted(set(rates), reverse=True) == [1e-4 * 0.5**k for k in range(5)]


def test_config_validation():
    errs = TrainConfig(batch_size=0, base_lr=0, n_critic=-1).validate()
    assert "batch_size must be >= 1, got 0" in errs
    assert "base_lr must be > 0, got 0" in errs
    assert "n_critic must be >= 0, got -1" in errs


def test_degenerate_step_touches_no_critic(windows):
    net = SGANVONet(SMALL, seed=0)
    state = TrainState(net, cfg(n_critic=0))
    before = params(net)
    report = train_step(state, stack_windows(windows[:1]), LossWeights(alpha=0.0, lambda_l=(1.0,)), 4)
    after = params(net)
    assert report.g_adv == 0.0 and report.d_final == 0.0
    assert all(np.array_equal(before[n], after[n]) for n in before if "/disc/" in n)
    assert any(not np.array_equal(before[n], after[n]) for n in before if "/disc/" not in n)


def test_generator_step_never_moves_critic(windows):
    net = SGANVONet(SMALL, seed=0)
    state = TrainState(net, cfg(n_critic=0))
    before = params(net)
    train_step(state, stack_windows(windows[:1]), WEIGHTS, 4)
    assert all(np.array_equal(before[n], p.data) for n, p in net.named_parameters() if "/disc/" in n)


def test_critic_loss_does_not_reach_generator(windows):
    net = SGANVONet(SMALL, seed=0)
    outs = net.unroll_window(*windows[0].as_batch())
    loss = discriminator_layer_loss(net.critics[0], outs[1].A[0].detach(), outs[1].A_hat[0].detach(), Rng(0))
    assert not any(reachable(loss, p) for p in net.generator_parameters())
    assert any(reachable(loss, p) for p in net.critic_parameters())


def test_identical_runs_identical_reports(windows):
    def run():
        net = SGANVONet(SMALL, seed=1)
        state = TrainState(net, cfg())
        return [train_step(state, stack_windows(windows[:1]), WEIGHTS, 4) for _ in range(2)]

    assert run() == run()


def test_non_finite_step_is_skipped(windows):
    net = SGANVONet(SMALL, seed=0)
    state = TrainState(net, cfg())
    lefts, rights, K = stack_windows(windows[:1])
    lefts = [x.copy() for x in lefts]
    lefts[1][0, 0, 3, 3] = np.nan
    before = params(net)
    report = train_step(state, (lefts, rights, K), WEIGHTS, 4)
    assert np.isnan(report.g_final) and state.skipped >= 1
    assert state.iteration == 1
    for n, p in net.named_parameters():
        np.testing.assert_array_equal(p.data, before[n])


def test_zero_epochs_writes_initial_checkpoint_only(windows, tmp_path):
    net = SGANVONet(SMALL, seed=0)
    result = train(net, windows, cfg(iterations=None, epochs=0), WEIGHTS, tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.npz")) == ["checkpoint_000000.npz"]
    assert log_rows(result.log_path) == []


def test_checkpoint_roundtrip_gives_identical_next_step(windows, tmp_path):
    batch = stack_windows(windows[:1])
    net = SGANVONet(SMALL, seed=2)
    state = TrainState(net, cfg())
    train_step(state, batch, WEIGHTS, 4)
    state.save(tmp_path / "c.npz")
    expected = train_step(state, batch, WEIGHTS, 4)

    net2 = SGANVONet(SMALL, seed=99)
    state2 = TrainState(net2, cfg())
    state2.load(tmp_path / "c.npz")
    assert state2.iteration == 1
    assert train_step(state2, batch, WEIGHTS, 4) == expected
    for (n, a), (_, b) in zip(net.named_parameters(), net2.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=n)


def test_resume_matches_uninterrupted_run(windows, tmp_path):
    full = train(SGANVONet(SMALL, seed=4), windows, cfg(), WEIGHTS, tmp_path / "full")
    first = train(SGANVONet(SMALL, seed=4), windows, cfg(), WEIGHTS, tmp_path / "a", stop_at=2)
    rest = train(SGANVONet(SMALL, seed=4), windows, cfg(), WEIGHTS, tmp_path / "b", resume=str(first.checkpoint))
    assert log_rows(first.log_path) + log_rows(rest.log_path) == log_rows(full.log_path)
    for (n, a), (_, b) in zip(full.state.net.named_parameters(), rest.state.net.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=n)


def test_prefetch_does_not_change_results(windows, tmp_path):
    a = train(SGANVONet(SMALL, seed=5), windows, cfg(iterations=2), WEIGHTS, tmp_path / "a")
    b = train(SGANVONet(SMALL, seed=5), windows, cfg(iterations=2, prefetch=2), WEIGHTS, tmp_path / "b")
    assert log_rows(a.log_path) == log_rows(b.log_path)


def test_corrupt_window_is_skipped_and_logged(windows, tmp_path, caplog):
    def broken():
        raise ValueError("truncated image")

    result = train(SGANVONet(SMALL, seed=0), [broken, windows[0]], cfg(iterations=2, batch_size=2), WEIGHTS,
                   tmp_path)
    assert len(log_rows(result.log_path)) == 2
    assert "truncated image" in caplog.text
