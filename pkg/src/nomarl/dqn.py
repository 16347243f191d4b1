"""DQN with a FIFO replay memory and a periodically synced target network."""

from __future__ import annotations

import struct
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import NomaEnv, TransitionRecord, encode_drl_state
from .mlp import Activation, AdamState, Mlp, adam_step, backward, forward, mlp_from_bytes, mlp_to_bytes
from .sarsa import EpisodeMetrics


class InsufficientSamples(ValueError):
    """The replay memory holds fewer records than the requested batch."""


class ReplayBuffer:
    """Bounded FIFO of transitions; the oldest record is evicted first."""

    def __init__(self, capacity: int = 500):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[TransitionRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> TransitionRecord:
        return self._items[i]

    def __iter__(self):
        return iter(self._items)


def remember(buf: ReplayBuffer, record: TransitionRecord) -> None:
    buf._items.append(record)


def sample_minibatch(buf: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> list[TransitionRecord]:
    """Uniform draw without replacement."""
    if batch_size > len(buf):
        raise InsufficientSamples(f"need {batch_size} records, buffer holds {len(buf)}")
    idx = rng.choice(len(buf), size=batch_size, replace=False)
    return [buf[int(i)] for i in idx]


@dataclass
class DqnConfig:
    batch_size: int = 500
    replay_capacity: int = 500
    pretrain_length: int = 500
    target_update_interval: int = 100
    epsilon: float = 0.1
    gamma: float = 0.6
    episodes: int = 500
    trials_per_episode: int = 500
    activation: Activation = "relu"
    hidden: tuple[int, ...] = (500, 500)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_decay: float = 0.5

    def __post_init__(self):
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size cannot exceed replay_capacity")
        if self.batch_size < 1 or self.target_update_interval < 1:
            raise ValueError("batch_size and target_update_interval must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")

    def adam(self) -> AdamState:
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2, lambda_decay=self.lambda_decay)


@dataclass
class TwinNetworks:
    train_net: Mlp
    target_net: Mlp
    grad_steps: int = 0

    @classmethod
    def build(cls, n_inputs: int, n_actions: int, config: DqnConfig, rng: np.random.Generator) -> TwinNetworks:
        net = Mlp([n_inputs, *config.hidden, n_actions], config.activation, rng)
        return cls(net, net.copy())


def sync_target(twins: TwinNetworks) -> None:
    twins.target_net.load_from(twins.train_net)


def _stack(batch: list[TransitionRecord]):
    s = np.array([rec.s for rec in batch], dtype=np.float64)
    a = np.array([rec.a for rec in batch], dtype=np.int64)
    r = np.array([rec.r for rec in batch], dtype=np.float64)
    s2 = np.array([rec.s_next for rec in batch], dtype=np.float64)
    return s, a, r, s2


def target_values(batch: list[TransitionRecord], target_net: Mlp, gamma: float) -> np.ndarray:
    """Bootstrap targets ``r + gamma * max_a' Q(s', a'; theta')``."""
    if not batch:
        raise ValueError("empty batch")
    _, _, r, s2 = _stack(batch)
    return r + gamma * forward(target_net, s2).max(axis=1)


def train_step(
    twins: TwinNetworks, buf: ReplayBuffer, adam: AdamState, config: DqnConfig, rng: np.random.Generator
) -> float:
    """One masked-MSE gradient step on a sampled batch; syncs the target on cadence."""
    batch = sample_minibatch(buf, config.batch_size, rng)
    s, a, _, _ = _stack(batch)
    y = target_values(batch, twins.target_net, config.gamma)
    n_out = twins.train_net.layer_widths[-1]
    target = np.zeros((len(batch), n_out))
    mask = np.zeros((len(batch), n_out))
    rows = np.arange(len(batch))
    target[rows, a] = y
    mask[rows, a] = 1.0
    loss, grads = backward(twins.train_net, s, target, mask)
    adam_step(twins.train_net.params(), grads, adam)
    twins.grad_steps += 1
    if twins.grad_steps % config.target_update_interval == 0:
        sync_target(twins)
    return loss


def select_action(twins: TwinNetworks, s_vec, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the training network; ties go to the lowest index."""
    n_out = twins.train_net.layer_widths[-1]
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(n_out))
    return int(np.argmax(forward(twins.train_net, s_vec)))


@dataclass
class DqnRun:
    """Everything one trainer owns."""

    config: DqnConfig
    twins: TwinNetworks
    buffer: ReplayBuffer
    adam: AdamState
    episode: int = 0
    env_steps: int = 0

    @classmethod
    def create(cls, env: NomaEnv, config: DqnConfig, rng: np.random.Generator) -> DqnRun:
        n_in = env.config.n_cells + 2
        twins = TwinNetworks.build(n_in, env.n_actions, config, rng)
        return cls(config, twins, ReplayBuffer(config.replay_capacity), config.adam())


class _Tracker:
    """Running reward statistics that feed the state encoding."""

    def __init__(self, env: NomaEnv):
        self.env = env
        self.load = env.config.max_cluster_load
        self.r_inst = 0.0
        self.total = 0.0
        self.t = 0

    def encode(self) -> np.ndarray:
        r_avg = self.total / self.t if self.t else 0.0
        return encode_drl_state(self.env.state, self.r_inst, r_avg, self.load)

    def push(self, r: float) -> None:
        self.r_inst = r
        self.total += r
        self.t += 1


def pretrain(env: NomaEnv, run: DqnRun, instance_rng: np.random.Generator, rng: np.random.Generator) -> int:
    """Fill memory with uniformly random transitions; no gradient steps."""
    cfg = run.config
    n = 0
    while n < cfg.pretrain_length:
        env.reset(env.sample_instance(instance_rng))
        tracker = _Tracker(env)
        s = tracker.encode()
        for _ in range(min(cfg.trials_per_episode, cfg.pretrain_length - n)):
            a = int(rng.integers(env.n_actions))
            _, r, _ = env.step(a, rng)
            tracker.push(r)
            s2 = tracker.encode()
            remember(run.buffer, TransitionRecord(s, a, r, s2))
            s = s2
            n += 1
    return n


def run_episode(env: NomaEnv, run: DqnRun, rng: np.random.Generator, trace: bool = True) -> EpisodeMetrics:
    """One episode on the env's current instance; trains once memory holds a batch."""
    cfg = run.config
    tracker = _Tracker(env)
    s = tracker.encode()
    rewards: list[float] = []
    rates: list[float] = []
    losses: list[float] = []
    rate_sum = 0.0
    elapsed = 0.0
    for _ in range(cfg.trials_per_episode):
        t0 = time.perf_counter()
        a = select_action(run.twins, s, cfg.epsilon, rng)
        _, r, info = env.step(a, rng)
        elapsed += time.perf_counter() - t0
        tracker.push(r)
        s2 = tracker.encode()
        remember(run.buffer, TransitionRecord(s, a, r, s2))
        s = s2
        run.env_steps += 1
        if len(run.buffer) >= cfg.batch_size:
            losses.append(train_step(run.twins, run.buffer, run.adam, cfg, rng))
        rate_sum += info.sum_rate_bps
        if trace:
            rewards.append(r)
            rates.append(info.sum_rate_bps)
    run.episode += 1
    n = cfg.trials_per_episode
    return EpisodeMetrics(
        cumulative_reward=tracker.total,
        mean_sum_rate_bps=rate_sum / n if n else env.rate,
        final_sum_rate_bps=env.rate,
        served_users=env.served,
        clustering_time_s=elapsed / n if n else 0.0,
        final_cells=env.cells,
        rewards=rewards,
        sum_rates=rates,
        loss=float(np.mean(losses)) if losses else None,
    )


def train(
    env: NomaEnv,
    config: DqnConfig,
    instance_rng: np.random.Generator,
    agent_rng: np.random.Generator,
    pretrain_rng: np.random.Generator | None = None,
    trace: bool = False,
) -> tuple[DqnRun, list[EpisodeMetrics]]:
    """Pretrain then train; ``pretrain_rng`` keeps warm-up draws off the instance stream."""
    run = DqnRun.create(env, config, agent_rng)
    pretrain(env, run, pretrain_rng if pretrain_rng is not None else instance_rng, agent_rng)
    history = []
    for _ in range(config.episodes):
        env.reset(env.sample_instance(instance_rng))
        history.append(run_episode(env, run, agent_rng, trace=trace))
    return run, history


def greedy_rollout(env: NomaEnv, run: DqnRun, steps: int, rng: np.random.Generator) -> float:
    """Follow the greedy policy from the env's current state; returns the final sum rate."""
    tracker = _Tracker(env)
    for _ in range(steps):
        a = select_action(run.twins, tracker.encode(), 0.0, rng)
        _, r, _ = env.step(a, rng)
        tracker.push(r)
    return env.rate


# Checkpoint layout, little-endian:
#   8s magic b"NOMADQN\x01", I episode, Q gradient steps, Q env steps,
#   then the training and target networks in the MLP checkpoint format.
#   The replay memory is not stored.
_DQN_MAGIC = b"NOMADQN\x01"
_DQN_HEAD = struct.Struct("<8sIQQ")


def save_dqn(path: str | Path, run: DqnRun) -> None:
    head = _DQN_HEAD.pack(_DQN_MAGIC, run.episode, run.twins.grad_steps, run.env_steps)
    Path(path).write_bytes(head + mlp_to_bytes(run.twins.train_net) + mlp_to_bytes(run.twins.target_net))


def load_dqn(path: str | Path, config: DqnConfig) -> DqnRun:
    """Restore networks and counters; the optimizer and memory start fresh."""
    raw = Path(path).read_bytes()
    magic, episode, grad_steps, env_steps = _DQN_HEAD.unpack_from(raw)
    if magic != _DQN_MAGIC:
        raise ValueError(f"{path}: not a DQN checkpoint")
    train_net, off = mlp_from_bytes(raw, _DQN_HEAD.size)
    target_net, off = mlp_from_bytes(raw, off)
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes")
    twins = TwinNetworks(train_net, target_net, grad_steps)
    return DqnRun(config, twins, ReplayBuffer(config.replay_capacity), config.adam(), episode, env_steps)
