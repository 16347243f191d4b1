import numpy as np
import pytest

from nomarl.dqn import (
    DqnConfig,
    DqnRun,
    InsufficientSamples,
    ReplayBuffer,
    TwinNetworks,
    greedy_rollout,
    load_dqn,
    pretrain,
    remember,
    run_episode,
    sample_minibatch,
    save_dqn,
    select_action,
    sync_target,
    target_values,
    train,
    train_step,
)
from nomarl.mdp import NomaEnv, TransitionRecord
from nomarl.mlp import forward
from nomarl.network import NetworkConfig

TOY_R = np.array([[-10.0, -2.0], [-1.0, -5.0]])
TOY_GAMMA = 0.6


def _toy_next(s, a):
    return s if a == 0 else 1 - s


def toy_optimal_q():
    """Value iteration on the 2-state, 2-action toy MDP."""
    q = np.zeros((2, 2))
    for _ in range(500):
        q = np.array([[TOY_R[s, a] + TOY_GAMMA * q[_toy_next(s, a)].max() for a in range(2)] for s in range(2)])
    return q


def _rec(i, s_dim=2):
    return TransitionRecord(np.full(s_dim, float(i)), i % 2, -float(i), np.zeros(s_dim))


def _small_config(**kw):
    base = dict(batch_size=8, replay_capacity=50, pretrain_length=20, hidden=(16, 16), episodes=3,
                trials_per_episode=20, lr=1e-2)
    base.update(kw)
    return DqnConfig(**base)


def _env(traffic=(2, 3)):
    return NomaEnv(NetworkConfig(max_cluster_load=traffic[1]), traffic, steps=20)


class TestReplay:
    def test_eviction(self):
        buf = ReplayBuffer(2)
        for i in range(3):
            remember(buf, _rec(i))
        assert [r.r for r in buf] == [-1.0, -2.0]

    def test_empty(self):
        assert len(ReplayBuffer()) == 0

    def test_order_preserved(self):
        buf = ReplayBuffer(10)
        for i in range(7):
            remember(buf, _rec(i))
        assert len(buf) == 7 and [r.r for r in buf] == [-float(i) for i in range(7)]

    def test_full_batch_is_permutation(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            remember(buf, _rec(i))
        batch = sample_minibatch(buf, 10, np.random.default_rng(0))
        assert sorted(r.r for r in batch) == sorted(r.r for r in buf)

    def test_no_duplicates(self):
        buf = ReplayBuffer(50)
        for i in range(50):
            remember(buf, _rec(i))
        rng = np.random.default_rng(1)
        for _ in range(100):
            batch = sample_minibatch(buf, 20, rng)
            assert len({id(r) for r in batch}) == 20

    def test_uniform_frequencies(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            remember(buf, _rec(i))
        rng = np.random.default_rng(2)
        counts = np.zeros(10)
        for _ in range(100_000):
            counts[int(-sample_minibatch(buf, 1, rng)[0].r)] += 1
        assert np.all(np.abs(counts / 1e5 - 0.1) < 0.02 * 0.1)

    def test_insufficient(self):
        buf = ReplayBuffer(10)
        remember(buf, _rec(0))
        with pytest.raises(InsufficientSamples):
            sample_minibatch(buf, 2, np.random.default_rng(0))

    def test_config_rejects_batch_over_capacity(self):
        with pytest.raises(ValueError):
            DqnConfig(batch_size=10, replay_capacity=5)


class TestTargets:
    def _twins(self):
        return TwinNetworks.build(2, 3, _small_config(), np.random.default_rng(0))

    def test_gamma_zero(self):
        batch = [_rec(i) for i in range(4)]
        np.testing.assert_array_equal(target_values(batch, self._twins().target_net, 0.0), [r.r for r in batch])

    def test_zero_net(self):
        tw = self._twins()
        for p in tw.target_net.params():
            p[...] = 0
        batch = [_rec(i) for i in range(4)]
        np.testing.assert_array_equal(target_values(batch, tw.target_net, 0.6), [r.r for r in batch])

    def test_hand_example(self):
        tw = self._twins()
        for p in tw.target_net.params():
            p[...] = 0
        tw.target_net.biases[-1][:] = [1.0, 5.0, -3.0]
        rec = TransitionRecord(np.zeros(2), 0, -10.0, np.zeros(2))
        assert target_values([rec], tw.target_net, 0.6)[0] == pytest.approx(-7.0)


class TestTrainStep:
    def test_zero_loss_keeps_parameters(self):
        cfg = _small_config(gamma=0.5)
        tw = TwinNetworks.build(2, 2, cfg, np.random.default_rng(0))
        for p in tw.train_net.params() + tw.target_net.params():
            p[...] = 0
        # all Q = 0 and reward 0 makes y = 0 = prediction
        buf = ReplayBuffer(50)
        for i in range(20):
            remember(buf, TransitionRecord(np.ones(2) * i, i % 2, 0.0, np.ones(2)))
        assert train_step(tw, buf, cfg.adam(), cfg, np.random.default_rng(1)) == 0.0
        assert all(np.all(p == 0) for p in tw.train_net.params())

    def test_target_frozen_between_syncs(self):
        cfg = _small_config(target_update_interval=5)
        tw = TwinNetworks.build(2, 2, cfg, np.random.default_rng(0))
        buf = ReplayBuffer(50)
        for i in range(20):
            remember(buf, _rec(i))
        probe = np.random.default_rng(3).normal(size=(10, 2))
        before = forward(tw.target_net, probe)
        adam, rng = cfg.adam(), np.random.default_rng(1)
        for _ in range(4):
            train_step(tw, buf, adam, cfg, rng)
            np.testing.assert_array_equal(forward(tw.target_net, probe), before)
        train_step(tw, buf, adam, cfg, rng)
        np.testing.assert_array_equal(forward(tw.target_net, probe), forward(tw.train_net, probe))

    def test_toy_mdp_converges(self):
        q_star = toy_optimal_q()
        np.testing.assert_allclose(q_star, [[-12.1, -3.5], [-2.5, -7.1]], atol=1e-9)
        cfg = DqnConfig(batch_size=32, replay_capacity=400, hidden=(16, 16), lr=0.01, gamma=TOY_GAMMA)
        rng = np.random.default_rng(0)
        tw = TwinNetworks.build(2, 2, cfg, rng)
        buf = ReplayBuffer(400)
        eye = np.eye(2)
        for i in range(400):
            s, a = divmod(i % 4, 2)
            remember(buf, TransitionRecord(eye[s], a, TOY_R[s, a], eye[_toy_next(s, a)]))
        adam = cfg.adam()
        for _ in range(5000):
            train_step(tw, buf, adam, cfg, rng)
        q = forward(tw.train_net, eye)
        assert np.abs(q - q_star).max() <= 0.05 * np.abs(q_star).max()
        assert q.min() >= -40 and q.max() <= 10


class TestSelectAction:
    def _favoring(self, k):
        tw = TwinNetworks.build(6, 9, _small_config(), np.random.default_rng(0))
        for p in tw.train_net.params():
            p[...] = 0
        tw.train_net.biases[-1][k] = 1.0
        return tw

    def test_greedy(self):
        assert select_action(self._favoring(3), np.zeros(6), 0.0, np.random.default_rng(0)) == 3

    def test_uniform(self):
        tw = self._favoring(3)
        rng = np.random.default_rng(0)
        counts = np.bincount([select_action(tw, np.zeros(6), 1.0, rng) for _ in range(100_000)], minlength=9)
        assert np.all(np.abs(counts / 1e5 - 1 / 9) < 0.02 / 9)

    def test_shift_invariance(self):
        tw = TwinNetworks.build(6, 9, _small_config(), np.random.default_rng(5))
        x = np.random.default_rng(6).normal(size=6)
        a = select_action(tw, x, 0.0, np.random.default_rng(0))
        tw.train_net.biases[-1] += 123.0
        assert select_action(tw, x, 0.0, np.random.default_rng(0)) == a


class TestSync:
    def test_exact_copy(self):
        tw = TwinNetworks.build(6, 9, _small_config(), np.random.default_rng(0))
        for p in tw.train_net.params():
            p += 0.1
        sync_target(tw)
        probes = np.random.default_rng(1).normal(size=(100, 6))
        np.testing.assert_array_equal(forward(tw.target_net, probes), forward(tw.train_net, probes))


class TestEpisodes:
    def test_pretrain_no_gradient(self):
        env = _env()
        run = DqnRun.create(env, _small_config(), np.random.default_rng(0))
        before = [p.copy() for p in run.twins.train_net.params()]
        n = pretrain(env, run, np.random.default_rng(1), np.random.default_rng(2))
        assert n == 20 and len(run.buffer) == 20 and run.twins.grad_steps == 0
        assert all(np.array_equal(a, b) for a, b in zip(before, run.twins.train_net.params()))

    def test_episode_trains_after_gate(self):
        env = _env()
        run = DqnRun.create(env, _small_config(), np.random.default_rng(0))
        pretrain(env, run, np.random.default_rng(1), np.random.default_rng(2))
        env.reset(env.sample_instance(np.random.default_rng(3)))
        m = run_episode(env, run, np.random.default_rng(4))
        assert run.twins.grad_steps == 20 and m.loss is not None and len(m.rewards) == 20

    def test_deterministic_loss_trace(self):
        def go():
            _, hist = train(_env(), _small_config(), np.random.default_rng(1), np.random.default_rng(2),
                            np.random.default_rng(3))
            return [m.loss for m in hist]

        assert go() == go()

    def test_heavy_loss_trend(self):
        # reduced-scale version of the heavy-traffic loss trend
        cfg = _small_config(batch_size=32, replay_capacity=200, pretrain_length=100, episodes=60,
                            trials_per_episode=30, hidden=(32, 32))
        env = NomaEnv(NetworkConfig(max_cluster_load=10), (2, 10), steps=30)
        _, hist = train(env, cfg, np.random.default_rng(11), np.random.default_rng(12), np.random.default_rng(13))
        losses = [m.loss for m in hist]
        assert np.mean(losses[-15:]) < np.mean(losses[:15])

    def test_greedy_rollout_returns_rate(self):
        env = _env()
        run, _ = train(env, _small_config(), np.random.default_rng(1), np.random.default_rng(2))
        env.reset(env.sample_instance(np.random.default_rng(5)))
        assert greedy_rollout(env, run, 10, np.random.default_rng(6)) == env.rate >= 0


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        env = _env()
        cfg = _small_config()
        run, _ = train(env, cfg, np.random.default_rng(1), np.random.default_rng(2))
        save_dqn(tmp_path / "d.bin", run)
        back = load_dqn(tmp_path / "d.bin", cfg)
        assert (back.episode, back.twins.grad_steps, back.env_steps) == (run.episode, run.twins.grad_steps,
                                                                        run.env_steps)
        for a, b in zip(run.twins.train_net.params() + run.twins.target_net.params(),
                        back.twins.train_net.params() + back.twins.target_net.params()):
            assert a.tobytes() == b.tobytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "d.bin").write_bytes(b"\x00" * 64)
        with pytest.raises(ValueError):
            load_dqn(tmp_path / "d.bin", _small_config())
