"""Association MDP shared by the SARSA and DQN agents.

The agent-visible state is the ``N_b x N_s`` occupancy matrix; actions move a
single user between two resource blocks (or do nothing); the reward is 0 when
the sum rate did not drop and no user was lost, -10 otherwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np

from .network import (
    AssociationState,
    ConfigError,
    NetworkConfig,
    UserTerminal,
    controlled_powers,
    sample_active_users,
    sum_rate_arrays,
)

REWARD_OK = 0.0
REWARD_FAIL = -10.0

PowerMode = Literal["controlled", "sampled", "fixed"]
GainDynamics = Literal["per_step", "per_episode"]
RateReference = Literal["previous", "best", "average"]


@dataclass(frozen=True)
class SwapAction:
    delta: np.ndarray

    @property
    def is_noop(self) -> bool:
        return not self.delta.any()

    @property
    def source(self) -> tuple[int, int] | None:
        idx = np.argwhere(self.delta < 0)
        return None if len(idx) == 0 else (int(idx[0][0]), int(idx[0][1]))

    @property
    def target(self) -> tuple[int, int] | None:
        idx = np.argwhere(self.delta > 0)
        return None if len(idx) == 0 else (int(idx[0][0]), int(idx[0][1]))


def _move(shape: tuple[int, int], src: tuple[int, int], dst: tuple[int, int]) -> SwapAction:
    d = np.zeros(shape, dtype=np.int64)
    d[src] = -1
    d[dst] = 1
    d.setflags(write=False)
    return SwapAction(d)


@lru_cache(maxsize=None)
def _catalog(n_bs: int, n_sc: int) -> tuple[SwapAction, ...]:
    shape = (n_bs, n_sc)
    if shape == (2, 2):
        # the eight reference swap matrices, in canonical order
        pairs = [
            ((0, 0), (1, 0)), ((1, 0), (0, 0)),
            ((0, 1), (1, 1)), ((1, 1), (0, 1)),
            ((1, 1), (1, 0)), ((1, 0), (1, 1)),
            ((0, 1), (0, 0)), ((0, 0), (0, 1)),
        ]
    else:
        # inter-BS moves on one sub-channel, then intra-BS sub-channel moves
        pairs = [((i, j), (k, j)) for j in range(n_sc) for i in range(n_bs) for k in range(n_bs) if i != k]
        pairs += [((i, j), (i, l)) for i in range(n_bs) for j in range(n_sc) for l in range(n_sc) if j != l]
    noop = np.zeros(shape, dtype=np.int64)
    noop.setflags(write=False)
    return tuple(_move(shape, s, d) for s, d in pairs) + (SwapAction(noop),)


def action_catalog(config: NetworkConfig) -> tuple[SwapAction, ...]:
    """Swap moves followed by the no-op (always last).

    For 2x2 this is the 8 reference swap matrices plus the no-op, 9 in total.
    """
    return _catalog(config.n_bs, config.n_subchannels)


@dataclass
class EnvState:
    occupancy: np.ndarray
    association: AssociationState
    step: int = 0

    @property
    def n_users(self) -> int:
        return int(self.occupancy.sum())


@dataclass
class TransitionRecord:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray


class InvalidAction(Exception):
    """The move would push an occupancy entry outside [0, U_s]."""


def apply_action(state: EnvState, action: SwapAction, rng: np.random.Generator, config: NetworkConfig) -> EnvState:
    """Return the successor state; raises :class:`InvalidAction` for illegal moves.

    The moved user is drawn uniformly from the source cell's members.
    """
    occ = state.occupancy + action.delta
    if occ.min() < 0 or occ.max() > config.max_cluster_load:
        raise InvalidAction(f"occupancy would become {occ.tolist()}")
    assignment = dict(state.association.assignment)
    src = action.source
    if src is not None:
        members = sorted(uid for uid, c in assignment.items() if c == src)
        uid = members[int(rng.integers(len(members)))]
        assignment[uid] = action.target
    return EnvState(occ, AssociationState(assignment, occ.copy()), state.step + 1)


def reward(prev: EnvState, next: EnvState, prev_rate: float, next_rate: float) -> float:
    if next_rate >= prev_rate and prev.n_users == next.n_users:
        return REWARD_OK
    return REWARD_FAIL


def state_index(state: EnvState | np.ndarray, n_users: int) -> int:
    """Mixed-radix code of the occupancy, row-major, most significant digit first.

    The radix is ``n_users + 1`` so per-cell counts 0..n_users are representable.
    """
    occ = state.occupancy if isinstance(state, EnvState) else np.asarray(state)
    radix = n_users + 1
    idx = 0
    for v in occ.ravel():
        v = int(v)
        if not 0 <= v < radix:
            raise ValueError(f"occupancy entry {v} outside [0, {radix})")
        idx = idx * radix + v
    return idx


def decode_state_index(index: int, n_users: int, shape: tuple[int, int]) -> np.ndarray:
    radix = n_users + 1
    size = shape[0] * shape[1]
    if not 0 <= index < radix**size:
        raise ValueError(f"state index {index} out of range")
    digits = []
    for _ in range(size):
        index, d = divmod(index, radix)
        digits.append(d)
    return np.array(digits[::-1], dtype=np.int64).reshape(shape)


def n_states(config: NetworkConfig, n_users: int) -> int:
    return (n_users + 1) ** config.n_cells


def encode_drl_state(state: EnvState | np.ndarray, r_inst: float, r_avg: float, max_cluster_load: int) -> np.ndarray:
    occ = state.occupancy if isinstance(state, EnvState) else np.asarray(state)
    flat = occ.ravel().astype(np.float64) / max_cluster_load
    return np.concatenate([flat, [float(r_inst), float(r_avg)]])


@lru_cache(maxsize=None)
def _occupancies(n_users: int, n_bs: int, n_sc: int, load: int) -> tuple[tuple[int, ...], ...]:
    cells = n_bs * n_sc
    return tuple(
        combo for combo in itertools.product(range(min(load, n_users) + 1), repeat=cells) if sum(combo) == n_users
    )


@dataclass
class Instance:
    """One episode's frozen draw: users, per-step gains and initial association."""

    users: list[UserTerminal]
    gains: np.ndarray  # (steps + 1, n_users)
    initial_cells: np.ndarray  # flat cell index per user

    @property
    def ids(self) -> list[int]:
        return [u.id for u in self.users]


def random_instance(
    rng: np.random.Generator,
    config: NetworkConfig,
    traffic: tuple[int, int],
    steps: int,
    gain_dynamics: GainDynamics = "per_step",
) -> Instance:
    """Sample users, a gain trajectory and a uniformly random legal occupancy."""
    users = sample_active_users(rng, config, config.max_cluster_load * config.n_cells, traffic)
    n = len(users)
    base = np.array([u.gain for u in users])
    if gain_dynamics == "per_step" and steps > 0:
        drawn = rng.choice(np.asarray(config.gain_levels), size=(steps, n))
        gains = np.vstack([base, drawn])
    else:
        gains = np.tile(base, (steps + 1, 1))
    occs = _occupancies(n, config.n_bs, config.n_subchannels, config.max_cluster_load)
    if not occs:
        raise ConfigError(f"{n} users do not fit in {config.n_cells} cells of load {config.max_cluster_load}")
    occ = occs[int(rng.integers(len(occs)))]
    cells = np.repeat(np.arange(config.n_cells), occ)
    rng.shuffle(cells)
    return Instance(users, gains, cells)


@dataclass
class StepInfo:
    valid: bool
    sum_rate_bps: float
    served_users: int


@dataclass
class NomaEnv:
    """Single-network environment stepping over the swap-action catalog.

    ``power_mode`` picks transmit powers per step: ``controlled`` applies
    :func:`controlled_powers`, ``sampled`` keeps each user's drawn level and
    ``fixed`` pins everyone to ``fixed_power_dbm``.
    """

    config: NetworkConfig
    traffic: tuple[int, int]
    steps: int = 500
    power_mode: PowerMode = "controlled"
    fixed_power_dbm: float = 30.0
    gain_dynamics: GainDynamics = "per_episode"
    rate_reference: RateReference = "previous"
    actions: tuple[SwapAction, ...] = field(init=False)
    instance: Instance | None = field(init=False, default=None)
    state: EnvState | None = field(init=False, default=None)
    rate: float = field(init=False, default=0.0)
    served: int = field(init=False, default=0)
    invalid_actions: int = field(init=False, default=0)

    def __post_init__(self):
        lo, hi = self.traffic
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid traffic range {self.traffic}")
        if hi > self.config.max_cluster_load * self.config.n_cells:
            raise ConfigError(f"traffic {self.traffic} exceeds network capacity")
        self.actions = action_catalog(self.config)
        n_sc = self.config.n_subchannels
        # flat (source, target) per action, None for the no-op
        self._moves = [
            None if a.is_noop else (a.source[0] * n_sc + a.source[1], a.target[0] * n_sc + a.target[1])
            for a in self.actions
        ]
        self._fixed_w = 10.0 ** ((self.fixed_power_dbm - 30.0) / 10.0)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def max_users(self) -> int:
        return self.traffic[1]

    @property
    def n_states(self) -> int:
        return n_states(self.config, self.max_users)

    def sample_instance(self, rng: np.random.Generator) -> Instance:
        return random_instance(rng, self.config, self.traffic, self.steps, self.gain_dynamics)

    def reset(self, instance: Instance) -> EnvState:
        self.instance = instance
        self._ids = instance.ids
        self._sampled = [u.tx_power_w for u in instance.users]
        self._cells = [int(c) for c in instance.initial_cells]
        self._t = 0
        self._rate_cache: dict[tuple[int, ...], tuple[float, int]] = {}
        self.invalid_actions = 0
        self.state = self._make_state(0)
        self.rate, self.served = self._evaluate()
        self.best_rate = self.rate
        self._rate_total, self._rate_n = self.rate, 1
        return self.state

    def _make_state(self, step: int) -> EnvState:
        n_sc = self.config.n_subchannels
        assignment = {uid: divmod(c, n_sc) for uid, c in zip(self._ids, self._cells)}
        assoc = AssociationState.from_assignment(assignment, self.config)
        return EnvState(assoc.occupancy.copy(), assoc, step)

    def powers(self, gains) -> list[float]:
        if self.power_mode == "controlled":
            return controlled_powers(self._cells, gains, self.config)
        if self.power_mode == "fixed":
            return [self._fixed_w] * len(self._cells)
        return list(self._sampled)

    def _evaluate(self) -> tuple[float, int]:
        frozen = self.gain_dynamics == "per_episode"
        key = tuple(self._cells)
        if frozen and key in self._rate_cache:
            return self._rate_cache[key]
        gains = self.instance.gains[min(self._t, len(self.instance.gains) - 1)].tolist()
        out = sum_rate_arrays(self._cells, gains, self.powers(gains), self.config)
        if frozen:
            self._rate_cache[key] = out
        return out

    def current_users(self) -> list[UserTerminal]:
        """Users with the gains and powers in effect at the current step."""
        gains = self.instance.gains[min(self._t, len(self.instance.gains) - 1)].tolist()
        pw = self.powers(gains)
        return [UserTerminal(uid, g, p) for uid, g, p in zip(self._ids, gains, pw)]

    def step(self, action: int, rng: np.random.Generator) -> tuple[EnvState, float, StepInfo]:
        """Apply catalog action ``action``; invalid moves stay in place with -10."""
        prev_state, prev_rate = self.state, self.rate
        move = self._moves[action]
        self._t += 1
        valid = True
        if move is not None:
            src, dst = move
            members = [k for k, c in enumerate(self._cells) if c == src]
            load = self._cells.count(dst)
            valid = bool(members) and load < self.config.max_cluster_load
            if valid:
                self._cells[members[int(rng.integers(len(members)))]] = dst
        if not valid:
            self.invalid_actions += 1
        self.state = self._make_state(self._t)
        self.rate, self.served = self._evaluate()
        if self.rate_reference == "best":
            reference = self.best_rate
        elif self.rate_reference == "average":
            reference = self._rate_total / self._rate_n
        else:
            reference = prev_rate
        r = reward(prev_state, self.state, reference, self.rate) if valid else REWARD_FAIL
        self.best_rate = max(self.best_rate, self.rate)
        self._rate_total += self.rate
        self._rate_n += 1
        return self.state, r, StepInfo(bool(valid), self.rate, self.served)

    @property
    def cells(self) -> list[int]:
        return list(self._cells)
