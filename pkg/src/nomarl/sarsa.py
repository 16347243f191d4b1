"""Tabular on-policy SARSA with epsilon-greedy exploration."""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import NomaEnv, state_index

Q_INIT = -100.0


@dataclass
class SarsaHyper:
    alpha: float = 0.75
    gamma: float = 0.6
    epsilon: float = 0.1
    episodes: int = 500
    trials_per_episode: int = 500
    # Optional hand-over to DQN after this many episodes without improvement.
    fallback_after_stagnant: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.episodes < 0 or self.trials_per_episode < 0:
            raise ValueError("episodes and trials must be non-negative")


class QTable:
    """Dense state x action table, every entry initialised to -100."""

    def __init__(self, n_states: int, n_actions: int, radix: int | None = None):
        self.values = np.full((n_states, n_actions), Q_INIT, dtype=np.float64)
        self.radix = radix

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        self.values[key] = value


def select_action(q: QTable, s: int, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    n_actions = q.values.shape[1]
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(n_actions))
    return int(np.argmax(q.values[s]))


def sarsa_update(q: QTable, s: int, a: int, r: float, s_next: int, a_next: int, hyper: SarsaHyper) -> float:
    """Q(s,a) <- (1 - alpha) Q(s,a) + alpha [r + gamma Q(s', a')]; returns the new entry."""
    new = (1.0 - hyper.alpha) * q.values[s, a] + hyper.alpha * (r + hyper.gamma * q.values[s_next, a_next])
    q.values[s, a] = new
    return new


def greedy_policy(q: QTable) -> np.ndarray:
    return np.argmax(q.values, axis=1)


def state_value(q: QTable, s: int) -> float:
    return float(q.values[s].max())


@dataclass
class EpisodeMetrics:
    cumulative_reward: float
    mean_sum_rate_bps: float
    final_sum_rate_bps: float
    served_users: int
    clustering_time_s: float
    final_cells: list[int]
    rewards: list[float] = field(default_factory=list)
    sum_rates: list[float] = field(default_factory=list)
    loss: float | None = None


def run_episode(env: NomaEnv, q: QTable, hyper: SarsaHyper, rng: np.random.Generator, trace: bool = True) -> EpisodeMetrics:
    """One episode of the (s, a, r, s', a') loop from the env's current state.

    ``env`` must already be reset onto this episode's instance.
    """
    n_users = env.max_users
    s = state_index(env.state, n_users)
    a = select_action(q, s, hyper.epsilon, rng)
    rewards: list[float] = []
    rates: list[float] = []
    total_r = 0.0
    rate_sum = 0.0
    elapsed = 0.0
    for _ in range(hyper.trials_per_episode):
        t0 = time.perf_counter()
        state, r, info = env.step(a, rng)
        s_next = state_index(state, n_users)
        a_next = select_action(q, s_next, hyper.epsilon, rng)
        elapsed += time.perf_counter() - t0
        sarsa_update(q, s, a, r, s_next, a_next, hyper)
        s, a = s_next, a_next
        total_r += r
        rate_sum += info.sum_rate_bps
        if trace:
            rewards.append(r)
            rates.append(info.sum_rate_bps)
    n = hyper.trials_per_episode
    return EpisodeMetrics(
        cumulative_reward=total_r,
        mean_sum_rate_bps=rate_sum / n if n else env.rate,
        final_sum_rate_bps=env.rate,
        served_users=env.served,
        clustering_time_s=elapsed / n if n else 0.0,
        final_cells=env.cells,
        rewards=rewards,
        sum_rates=rates,
    )


def train(
    env: NomaEnv,
    hyper: SarsaHyper,
    instance_rng: np.random.Generator,
    agent_rng: np.random.Generator,
    q: QTable | None = None,
    trace: bool = False,
) -> tuple[QTable, list[EpisodeMetrics]]:
    """Train over ``hyper.episodes`` fresh instances; returns the table and per-episode metrics."""
    if q is None:
        q = QTable(env.n_states, env.n_actions, radix=env.max_users + 1)
    history = []
    best = -np.inf
    stagnant = 0
    for _ in range(hyper.episodes):
        env.reset(env.sample_instance(instance_rng))
        m = run_episode(env, q, hyper, agent_rng, trace=trace)
        history.append(m)
        if hyper.fallback_after_stagnant:
            if m.cumulative_reward > best:
                best, stagnant = m.cumulative_reward, 0
            else:
                stagnant += 1
                if stagnant >= hyper.fallback_after_stagnant:
                    break
    return q, history


# Checkpoint layout, all little-endian:
#   8s   magic b"NOMAQT\x00\x01" (last byte = format version)
#   3xI  radix, n_states, n_actions
#   3xd  alpha, gamma, epsilon
#   2xI  episodes, trials_per_episode
#   n_states*n_actions x d  values, row-major
_Q_MAGIC = b"NOMAQT\x00\x01"
_Q_HEADER = struct.Struct("<8s3I3d2I")


def save_qtable(path: str | Path, q: QTable, hyper: SarsaHyper) -> None:
    n_s, n_a = q.values.shape
    header = _Q_HEADER.pack(
        _Q_MAGIC, q.radix or 0, n_s, n_a, hyper.alpha, hyper.gamma, hyper.epsilon, hyper.episodes, hyper.trials_per_episode
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.values.astype("<f8").tobytes(order="C"))


def load_qtable(path: str | Path) -> tuple[QTable, SarsaHyper]:
    raw = Path(path).read_bytes()
    magic, radix, n_s, n_a, alpha, gamma, eps, episodes, trials = _Q_HEADER.unpack_from(raw)
    if magic != _Q_MAGIC:
        raise ValueError(f"{path}: not a Q-table checkpoint")
    body = np.frombuffer(raw, dtype="<f8", offset=_Q_HEADER.size)
    if body.size != n_s * n_a:
        raise ValueError(f"{path}: expected {n_s * n_a} values, found {body.size}")
    q = QTable(n_s, n_a, radix=radix or None)
    q.values[:] = body.reshape(n_s, n_a)
    return q, SarsaHyper(alpha, gamma, eps, episodes, trials)
