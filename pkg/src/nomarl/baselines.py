"""Reference allocators: exhaustive search, fixed-power NOMA and OMA."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .network import (
    AssociationState,
    NetworkConfig,
    UserTerminal,
    instantaneous_sum_rate,
    noise_power,
)

MAX_CANDIDATES = 10**7


class InstanceTooLarge(ValueError):
    """The exhaustive search space exceeds :data:`MAX_CANDIDATES`."""


@dataclass
class BenchmarkResult:
    best_assignment: AssociationState | None
    best_powers: dict[int, float] = field(default_factory=dict)
    best_sum_rate_bps: float = 0.0
    states_evaluated: int = 0  # raw assignments enumerated, before filtering

    @property
    def feasible(self) -> bool:
        return self.best_assignment is not None

    @property
    def served_users(self) -> int:
        if self.best_assignment is None:
            return 0
        return self.best_assignment.n_assigned

    def users(self, users: list[UserTerminal]) -> list[UserTerminal]:
        """``users`` with the chosen powers substituted."""
        return [UserTerminal(u.id, u.gain, self.best_powers.get(u.id, u.tx_power_w), u.active) for u in users]


def batch_sum_rates(
    cells: np.ndarray,
    gains: np.ndarray,
    powers: np.ndarray,
    config: NetworkConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Sum rate and constraint feasibility for many candidates at once.

    ``cells`` and ``powers`` are ``(M, n)``; users must already be sorted by
    ascending (gain, id). Every user is assumed assigned.
    """
    n_sc = config.n_subchannels
    bw = config.subchannel_bandwidth_hz
    thr = config.sic_rate_threshold_bps
    gamma_min = config.sinr_threshold
    noise = noise_power(config)

    rx = powers * gains[None, :]
    same = cells[:, :, None] == cells[:, None, :]
    n = cells.shape[1]
    lower = np.tril(np.ones((n, n), dtype=bool), k=-1)  # [k, k'] = k' < k
    sc = cells % n_sc
    co_channel = (sc[:, :, None] == sc[:, None, :]) & ~same

    weaker = np.einsum("mkj,mj->mk", same & lower[None], rx)
    inter = np.einsum("mkj,mj->mk", co_channel, rx)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(rx > 0, rx / (weaker + inter + noise), 0.0)
    rate = bw * np.log2(1.0 + sinr)

    # a stronger same-cell member below threshold silences everyone after it
    failed = rate < thr
    stronger = same & lower.T[None]
    lost = np.einsum("mkj,mj->mk", stronger, failed) > 0
    total = np.where(lost, 0.0, rate).sum(axis=1)

    cluster_power = np.einsum("mkj,mj->mk", same, powers)
    cluster_size = same.sum(axis=2)
    feasible = (
        (sinr >= gamma_min).all(axis=1)
        & (cluster_power <= config.subchannel_power_cap_w * (1 + 1e-12)).all(axis=1)
        & (cluster_size <= config.max_cluster_load).all(axis=1)
    )
    return total, feasible


def _search(users: list[UserTerminal], config: NetworkConfig, level_sets: list[list[float]]) -> BenchmarkResult:
    n = len(users)
    n_cells = config.n_cells
    n_assign = n_cells**n
    k = int(np.prod([len(levels) for levels in level_sets], dtype=object))
    if n_assign * k > MAX_CANDIDATES:
        raise InstanceTooLarge(f"{n_assign} assignments x {k} power combinations exceeds {MAX_CANDIDATES}")
    power_combos = np.array(list(itertools.product(*level_sets)), dtype=np.float64).reshape(-1, n)
    if n == 0:
        return BenchmarkResult(AssociationState.from_assignment({}, config), {}, 0.0, 1)

    order = sorted(range(n), key=lambda i: (users[i].gain, users[i].id))
    gains = np.array([users[i].gain for i in order])
    combos_sorted = power_combos[:, order]

    best_val = -np.inf
    best = None
    chunk = max(1, 200_000 // k)
    assign_iter = itertools.product(range(n_cells), repeat=n)
    done = 0
    while done < n_assign:
        block = np.array(list(itertools.islice(assign_iter, chunk)), dtype=np.int64).reshape(-1, n)
        m = len(block)
        cells = np.repeat(block[:, order], k, axis=0)
        powers = np.tile(combos_sorted, (m, 1))
        total, feasible = batch_sum_rates(cells, gains, powers, config)
        total = np.where(feasible, total, -np.inf)
        idx = int(np.argmax(total))
        if total[idx] > best_val:
            best_val = float(total[idx])
            best = (block[idx // k], power_combos[idx % k])
        done += m

    if best is None:
        return BenchmarkResult(None, {}, 0.0, n_assign)
    n_sc = config.n_subchannels
    assignment = {u.id: divmod(int(c), n_sc) for u, c in zip(users, best[0])}
    powers = {u.id: float(p) for u, p in zip(users, best[1])}
    state = AssociationState.from_assignment(assignment, config)
    chosen = [UserTerminal(u.id, u.gain, powers[u.id]) for u in users]
    # report the reference-path value so every allocator is scored identically
    value = instantaneous_sum_rate(state, chosen, config).sum_rate_bps
    return BenchmarkResult(state, powers, value, n_assign)


def exhaustive_best(users: list[UserTerminal], config: NetworkConfig, power_search: bool = True) -> BenchmarkResult:
    """Best feasible (assignment, power levels) by brute force.

    Every user is assigned; candidates violating a cluster load, power cap or
    SINR threshold are skipped. Ties keep the lexicographically first
    assignment. With ``power_search=False`` each user keeps its own power.
    """
    users = [u for u in users if u.active]
    if power_search:
        levels = [list(config.power_levels_w)] * len(users)
    else:
        levels = [[u.tx_power_w] for u in users]
    return _search(users, config, levels)


def noma_fixed_power(users: list[UserTerminal], config: NetworkConfig, fixed_level_dbm: float) -> BenchmarkResult:
    if fixed_level_dbm not in config.power_levels_dbm:
        raise ValueError(f"{fixed_level_dbm} dBm is not one of {config.power_levels_dbm}")
    p = 10.0 ** ((fixed_level_dbm - 30.0) / 10.0)
    users = [u for u in users if u.active]
    return _search(users, config, [[p]] * len(users))


def oma_allocate(users: list[UserTerminal], config: NetworkConfig, controlled: bool = True) -> BenchmarkResult:
    """One user per resource block, strongest received power first.

    Blocks fill in row-major (bs, subchannel) order. With ``controlled`` each
    served user transmits at the highest level allowed by ``P_s``; otherwise
    at its own power. Unserved users stay unassigned with rate 0.
    """
    users = [u for u in users if u.active]
    if controlled:
        allowed = [p for p in config.power_levels_w if p <= config.subchannel_power_cap_w * (1 + 1e-12)]
        top = max(allowed) if allowed else min(config.power_levels_w)
        powered = [UserTerminal(u.id, u.gain, top) for u in users]
    else:
        powered = list(users)
    ranked = sorted(powered, key=lambda u: (-u.tx_power_w * u.gain, u.id))
    blocks = [(i, j) for i in range(config.n_bs) for j in range(config.n_subchannels)]
    assignment: dict[int, tuple[int, int] | None] = {u.id: None for u in ranked}
    for u, block in zip(ranked, blocks):
        assignment[u.id] = block
    state = AssociationState.from_assignment(assignment, config)
    report = instantaneous_sum_rate(state, powered, config)
    return BenchmarkResult(state, {u.id: u.tx_power_w for u in powered}, report.sum_rate_bps, 1)
