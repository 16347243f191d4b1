"""Uplink NOMA physical layer: noise, SINR, SIC decoding, sum rate and constraints.

Users are grouped into clusters, one per (base station, sub-channel) resource
block. Inside a cluster the receiver decodes the strongest channel first and
treats every weaker member as interference; co-channel users served by other
base stations add inter-cell interference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

BOLTZMANN = 1.380649e-23

Cell = tuple[int, int]


class ConfigError(ValueError):
    """Raised for an inconsistent network or experiment configuration."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class NetworkConfig:
    n_bs: int = 2
    n_subchannels: int = 2
    total_bandwidth_hz: float = 60e3
    resistor_temp_k: float = 300.0
    boltzmann: float = BOLTZMANN
    max_cluster_load: int = 3
    # Non-binding for ten users at the top power level.
    subchannel_power_cap_w: float = 10.0
    sic_rate_threshold_bps: float = 10e3
    gain_levels: tuple[float, ...] = (1e-5, 1.5e-5, 2e-5)
    power_levels_dbm: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)

    def __post_init__(self):
        object.__setattr__(self, "gain_levels", tuple(float(g) for g in self.gain_levels))
        object.__setattr__(self, "power_levels_dbm", tuple(float(p) for p in self.power_levels_dbm))
        if self.n_bs < 1 or self.n_subchannels < 1:
            raise ConfigError("n_bs and n_subchannels must be >= 1")
        if not self.total_bandwidth_hz > 0:
            raise ConfigError("total_bandwidth_hz must be > 0")
        if self.max_cluster_load < 1:
            raise ConfigError("max_cluster_load must be >= 1")
        if not self.gain_levels or min(self.gain_levels) <= 0:
            raise ConfigError("gain_levels must be nonempty and strictly positive")
        if not self.power_levels_dbm:
            raise ConfigError("power_levels_dbm must be nonempty")

    @property
    def subchannel_bandwidth_hz(self) -> float:
        return self.total_bandwidth_hz / self.n_subchannels

    @property
    def n_cells(self) -> int:
        return self.n_bs * self.n_subchannels

    @property
    def power_levels_w(self) -> tuple[float, ...]:
        return tuple(dbm_to_watts(p) for p in self.power_levels_dbm)

    @property
    def sinr_threshold(self) -> float:
        """Minimum SINR that sustains the SIC rate threshold on one sub-channel."""
        return 2.0 ** (self.sic_rate_threshold_bps / self.subchannel_bandwidth_hz) - 1.0


@dataclass(frozen=True)
class UserTerminal:
    id: int
    gain: float
    tx_power_w: float
    active: bool = True


@dataclass
class AssociationState:
    """User -> (bs, subchannel) map plus the derived occupancy matrix.

    ``None`` marks an unassigned user. Build through :meth:`from_assignment`
    so the occupancy stays consistent with the map.
    """

    assignment: dict[int, Cell | None]
    occupancy: np.ndarray

    @classmethod
    def from_assignment(cls, assignment: Mapping[int, Cell | None], config: NetworkConfig) -> "AssociationState":
        occ = np.zeros((config.n_bs, config.n_subchannels), dtype=np.int64)
        for cell in assignment.values():
            if cell is not None:
                occ[cell] += 1
        return cls(dict(assignment), occ)

    def members(self, bs: int, subchannel: int) -> list[int]:
        return [uid for uid, cell in self.assignment.items() if cell == (bs, subchannel)]

    @property
    def n_assigned(self) -> int:
        return sum(1 for c in self.assignment.values() if c is not None)


@dataclass(frozen=True)
class ClusterSnapshot:
    bs: int
    subchannel: int
    # (user id, gain, tx power), ascending gain; ties by id
    members: tuple[tuple[int, float, float], ...]

    @classmethod
    def build(cls, bs: int, subchannel: int, users: Iterable[UserTerminal]) -> "ClusterSnapshot":
        ordered = sorted(
            ((u.id, u.gain, u.tx_power_w) for u in users if u.active),
            key=lambda m: (m[1], m[0]),
        )
        return cls(bs, subchannel, tuple(ordered))

    @property
    def total_power_w(self) -> float:
        return sum(m[2] for m in self.members)


@dataclass
class RateReport:
    per_user_rate_bps: dict[int, float] = field(default_factory=dict)
    per_user_sinr: dict[int, float] = field(default_factory=dict)
    sum_rate_bps: float = 0.0
    decode_failures: set[int] = field(default_factory=set)

    def merge(self, other: "RateReport") -> None:
        self.per_user_rate_bps.update(other.per_user_rate_bps)
        self.per_user_sinr.update(other.per_user_sinr)
        self.decode_failures |= other.decode_failures
        self.sum_rate_bps += other.sum_rate_bps

    @property
    def served_users(self) -> int:
        return sum(1 for r in self.per_user_rate_bps.values() if r > 0)


class Violation(str, Enum):
    GAIN_ORDER = "GainOrder"
    POWER_CAP = "PowerCap"
    SINR_THRESHOLD = "SinrThreshold"
    SYSTEM_LOAD = "SystemLoad"
    CLUSTER_LOAD = "ClusterLoad"
    SINGLE_CLUSTER = "SingleCluster"


def _as_user_map(users: Iterable[UserTerminal] | Mapping[int, UserTerminal]) -> dict[int, UserTerminal]:
    if isinstance(users, Mapping):
        return dict(users)
    return {u.id: u for u in users}


def thermal_noise_w(bandwidth_hz: float, temp_k: float = 300.0, boltzmann: float = BOLTZMANN) -> float:
    return boltzmann * temp_k * bandwidth_hz


def noise_power(config: NetworkConfig) -> float:
    """k_b * T_r * B over the full system bandwidth."""
    return thermal_noise_w(config.total_bandwidth_hz, config.resistor_temp_k, config.boltzmann)


def inter_cell_interference(target_bs: int, subchannel: int, state: AssociationState, users) -> float:
    """Received power from active co-channel users served by every other BS."""
    umap = _as_user_map(users)
    total = 0.0
    for uid, cell in state.assignment.items():
        if cell is None or cell[1] != subchannel or cell[0] == target_bs:
            continue
        u = umap[uid]
        if u.active:
            total += u.tx_power_w * u.gain
    return total


def cluster_sinrs(cluster: ClusterSnapshot, inter_cell_w: float, noise_w: float) -> list[tuple[int, float]]:
    """SINR of every member; each member sees all weaker-gain members as interference."""
    out = []
    weaker = 0.0
    for uid, gain, power in cluster.members:
        rx = power * gain
        denom = weaker + inter_cell_w + noise_w
        if rx <= 0:
            sinr = 0.0
        elif denom <= 0:
            sinr = math.inf
        else:
            sinr = rx / denom
        out.append((uid, sinr))
        weaker += rx
    return out


def sic_decode(cluster: ClusterSnapshot, sinrs: Sequence[tuple[int, float]], config: NetworkConfig) -> RateReport:
    """Strongest-first SIC. A member below the rate threshold keeps its own rate
    but every weaker member after it is lost."""
    bw = config.subchannel_bandwidth_hz
    threshold = config.sic_rate_threshold_bps
    report = RateReport()
    chain_ok = True
    for uid, sinr in reversed(list(sinrs)):
        report.per_user_sinr[uid] = sinr
        if not chain_ok:
            report.per_user_rate_bps[uid] = 0.0
            report.decode_failures.add(uid)
            continue
        rate = bw * math.log2(1.0 + sinr)
        report.per_user_rate_bps[uid] = rate
        report.sum_rate_bps += rate
        if rate < threshold:
            chain_ok = False
    return report


def cluster_snapshots(state: AssociationState, users, config: NetworkConfig) -> dict[Cell, ClusterSnapshot]:
    umap = _as_user_map(users)
    grouped: dict[Cell, list[UserTerminal]] = {}
    for uid, cell in state.assignment.items():
        if cell is None:
            continue
        u = umap[uid]
        if u.active:
            grouped.setdefault(tuple(cell), []).append(u)
    return {cell: ClusterSnapshot.build(cell[0], cell[1], members) for cell, members in sorted(grouped.items())}


def instantaneous_sum_rate(state: AssociationState, users, config: NetworkConfig) -> RateReport:
    umap = _as_user_map(users)
    noise = noise_power(config)
    report = RateReport()
    for (bs, sc), cluster in cluster_snapshots(state, umap, config).items():
        inter = inter_cell_interference(bs, sc, state, umap)
        report.merge(sic_decode(cluster, cluster_sinrs(cluster, inter, noise), config))
    return report


def validate(
    state: AssociationState,
    users,
    config: NetworkConfig,
    clusters: Mapping[Cell, ClusterSnapshot] | None = None,
) -> list[Violation]:
    """Constraint identifiers violated by ``state``, in a fixed order.

    ``clusters`` overrides the gain-sorted snapshots with explicit decoding
    orders; only then can ``GainOrder`` fire for positive gains.
    """
    umap = _as_user_map(users)
    found: set[Violation] = set()
    snaps = dict(clusters) if clusters is not None else cluster_snapshots(state, umap, config)
    noise = noise_power(config)
    gamma_min = config.sinr_threshold

    for (bs, sc), cluster in snaps.items():
        gains = [m[1] for m in cluster.members]
        if any(g <= 0 for g in gains) or gains != sorted(gains):
            found.add(Violation.GAIN_ORDER)
        if cluster.total_power_w > config.subchannel_power_cap_w * (1 + 1e-12):
            found.add(Violation.POWER_CAP)
        if len(cluster.members) > config.max_cluster_load:
            found.add(Violation.CLUSTER_LOAD)
        inter = inter_cell_interference(bs, sc, state, umap)
        if any(s < gamma_min for _, s in cluster_sinrs(cluster, inter, noise)):
            found.add(Violation.SINR_THRESHOLD)

    occ = state.occupancy
    if occ.min() < 0 or occ.max() > config.max_cluster_load:
        found.add(Violation.CLUSTER_LOAD)

    served = sum(len(c.members) for c in snaps.values())
    # a single-user system cannot reach two served users
    if served > 0 and not min(2, len(umap)) <= served <= len(umap):
        found.add(Violation.SYSTEM_LOAD)

    for uid, cell in state.assignment.items():
        if cell is None:
            continue
        if uid not in umap or not umap[uid].active:
            found.add(Violation.SINGLE_CLUSTER)
            continue
        bs, sc = cell
        if not (0 <= bs < config.n_bs and 0 <= sc < config.n_subchannels):
            found.add(Violation.SINGLE_CLUSTER)
    expected = np.zeros_like(occ)
    for cell in state.assignment.values():
        if cell is not None and 0 <= cell[0] < config.n_bs and 0 <= cell[1] < config.n_subchannels:
            expected[cell] += 1
    if not np.array_equal(expected, occ):
        found.add(Violation.SINGLE_CLUSTER)

    return [v for v in Violation if v in found]


def sample_active_users(
    rng: np.random.Generator,
    config: NetworkConfig,
    n_total_users: int,
    count_range: tuple[int, int] | None = None,
) -> list[UserTerminal]:
    """Draw this slot's active users with fresh gains and power levels.

    The active count is uniform on ``count_range`` (default ``[2, U_s*N_b*N_s]``);
    ids are a uniform subset of ``range(n_total_users)``, returned sorted.
    """
    capacity = config.max_cluster_load * config.n_cells
    if capacity > n_total_users:
        raise ConfigError(f"U_s*N_b*N_s = {capacity} exceeds the user population {n_total_users}")
    lo, hi = count_range if count_range is not None else (2, capacity)
    if not 1 <= lo <= hi <= n_total_users:
        raise ConfigError(f"invalid active-user range [{lo}, {hi}]")
    count = int(rng.integers(lo, hi + 1))
    ids = np.sort(rng.choice(n_total_users, size=count, replace=False))
    gains = rng.choice(np.asarray(config.gain_levels), size=count)
    powers = rng.choice(np.asarray(config.power_levels_w), size=count)
    return [UserTerminal(int(i), float(g), float(p)) for i, g, p in zip(ids, gains, powers)]


# Array fast path used by the environment and the exhaustive oracle. Users are
# described by parallel arrays; ``cells`` holds flat cell indices bs*N_s + sc
# (-1 = unassigned).


def controlled_powers(cells: Sequence[int], gains: Sequence[float], config: NetworkConfig) -> list[float]:
    """SIC-aware BS power control over the discrete levels.

    Per cluster, members are visited strongest-first and each takes the highest
    level that keeps every already-placed stronger member decodable (intra-cluster
    terms only) and leaves room under ``P_s`` for the rest at the lowest level.
    Inter-cell interference is not anticipated.
    """
    levels = sorted(config.power_levels_w, reverse=True)
    lowest = levels[-1]
    gamma = config.sinr_threshold
    noise = noise_power(config)
    powers = [0.0] * len(cells)
    by_cell: dict[int, list[int]] = {}
    for k, c in enumerate(cells):
        if c >= 0:
            by_cell.setdefault(c, []).append(k)
    for members in by_cell.values():
        members.sort(key=lambda k: (gains[k], k), reverse=True)
        budget = config.subchannel_power_cap_w
        cap = math.inf
        for pos, k in enumerate(members):
            reserve = lowest * (len(members) - pos - 1)
            chosen = lowest
            for p in levels:
                if p * gains[k] <= cap and p + reserve <= budget * (1 + 1e-12):
                    chosen = p
                    break
            powers[k] = chosen
            budget -= chosen
            rx = chosen * gains[k]
            cap = min(cap - rx, rx / gamma - noise) if gamma > 0 else cap - rx
    return powers


def sum_rate_arrays(
    cells: Sequence[int],
    gains: Sequence[float],
    powers: Sequence[float],
    config: NetworkConfig,
) -> tuple[float, int]:
    """Sum rate and served-user count; same arithmetic as :func:`instantaneous_sum_rate`."""
    n_sc = config.n_subchannels
    noise = noise_power(config)
    bw = config.subchannel_bandwidth_hz
    thr = config.sic_rate_threshold_bps
    by_cell: dict[int, list[int]] = {}
    cell_rx: dict[int, float] = {}
    sc_rx = [0.0] * n_sc
    for k, c in enumerate(cells):
        if c < 0:
            continue
        rx = powers[k] * gains[k]
        by_cell.setdefault(c, []).append(k)
        cell_rx[c] = cell_rx.get(c, 0.0) + rx
        sc_rx[c % n_sc] += rx
    total = 0.0
    served = 0
    for c in sorted(by_cell):
        members = sorted(by_cell[c], key=lambda k: (gains[k], k))
        base = (sc_rx[c % n_sc] - cell_rx[c]) + noise
        # weaker-member interference seen by each member, ascending order
        cum = []
        acc = 0.0
        for k in members:
            cum.append(acc)
            acc += powers[k] * gains[k]
        for idx in range(len(members) - 1, -1, -1):
            k = members[idx]
            rx = powers[k] * gains[k]
            sinr = rx / (cum[idx] + base) if rx > 0 else 0.0
            rate = bw * math.log2(1.0 + sinr)
            total += rate
            if rate > 0:
                served += 1
            if rate < thr:
                break
    return total, served
