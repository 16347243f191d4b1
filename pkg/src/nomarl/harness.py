"""Scenario runner, metric emission and cross-run comparison."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dqn, sarsa
from .baselines import exhaustive_best, noma_fixed_power, oma_allocate
from .mdp import NomaEnv
from .network import ConfigError, NetworkConfig

SCENARIOS = ("sarsa-light", "dqn-medium", "dqn-heavy", "benchmark", "oma", "noma-fixed")
TRAFFIC = {"light": (2, 3), "medium": (2, 4), "heavy": (2, 10)}
DEFAULT_TRAFFIC = {
    "sarsa-light": TRAFFIC["light"],
    "dqn-medium": TRAFFIC["medium"],
    "dqn-heavy": TRAFFIC["heavy"],
    "benchmark": TRAFFIC["light"],
    "oma": TRAFFIC["light"],
    "noma-fixed": TRAFFIC["light"],
}
FIELDS = ("scenario", "seed", "episode", "reward", "sum_rate_bps", "loss", "clustering_time_s", "served_users")
CSV_HEADER = ",".join(FIELDS)
TIMING_FIELDS = ("clustering_time_s",)


@dataclass
class ExperimentConfig:
    scenario: str
    seeds: list[int] = field(default_factory=list)
    traffic: tuple[int, int] | None = None
    bandwidth_khz: float = 60.0
    power_levels_dbm: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    power_cap_w: float = 10.0
    alpha: float = 0.75
    gamma: float = 0.6
    epsilon: float = 0.1
    lambda_decay: float = 0.5
    activation: str = "relu"
    episodes: int = 500
    trials: int = 500
    fixed_power_dbm: float = 30.0
    power_mode: str = "controlled"
    gain_dynamics: str = "per_episode"
    rate_reference: str = "previous"
    # DQN sizing; the defaults are the full-scale values
    hidden: tuple[int, ...] = (500, 500)
    batch_size: int = 500
    replay_capacity: int = 500
    pretrain_length: int = 500
    target_update_interval: int = 100
    lr: float = 1e-3
    label: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.scenario not in SCENARIOS:
            problems.append(f"scenario: {self.scenario!r} not in {SCENARIOS}")
        if not self.seeds:
            problems.append("seeds: at least one seed is required")
        if self.traffic is not None and not 1 <= self.traffic[0] <= self.traffic[1]:
            problems.append(f"traffic: bad range {self.traffic}")
        if self.bandwidth_khz <= 0:
            problems.append("bandwidth_khz: must be positive")
        if self.episodes < 1 or self.trials < 1:
            problems.append("episodes/trials: must be positive")
        if self.activation not in ("relu", "sigmoid", "tanh"):
            problems.append(f"activation: {self.activation!r} not in relu, sigmoid, tanh")
        if self.power_mode not in ("controlled", "sampled", "fixed"):
            problems.append(f"power_mode: {self.power_mode!r}")
        if self.gain_dynamics not in ("per_step", "per_episode"):
            problems.append(f"gain_dynamics: {self.gain_dynamics!r}")
        if self.rate_reference not in ("previous", "best", "average"):
            problems.append(f"rate_reference: {self.rate_reference!r}")
        if self.batch_size > self.replay_capacity:
            problems.append("batch_size: exceeds replay_capacity")
        if self.fixed_power_dbm not in self.power_levels_dbm:
            problems.append(f"fixed_power_dbm: {self.fixed_power_dbm} not a power level")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def traffic_range(self) -> tuple[int, int]:
        return tuple(self.traffic) if self.traffic is not None else DEFAULT_TRAFFIC.get(self.scenario, (2, 3))

    @property
    def name(self) -> str:
        return self.label or self.scenario

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            total_bandwidth_hz=self.bandwidth_khz * 1e3,
            max_cluster_load=self.traffic_range[1],
            subchannel_power_cap_w=self.power_cap_w,
            power_levels_dbm=tuple(self.power_levels_dbm),
        )

    def env(self) -> NomaEnv:
        return NomaEnv(
            self.network(),
            self.traffic_range,
            steps=self.trials,
            power_mode=self.power_mode,
            fixed_power_dbm=self.fixed_power_dbm,
            gain_dynamics=self.gain_dynamics,
            rate_reference=self.rate_reference,
        )

    def sarsa_hyper(self) -> sarsa.SarsaHyper:
        return sarsa.SarsaHyper(self.alpha, self.gamma, self.epsilon, self.episodes, self.trials)

    def dqn_config(self) -> dqn.DqnConfig:
        return dqn.DqnConfig(
            batch_size=self.batch_size,
            replay_capacity=self.replay_capacity,
            pretrain_length=self.pretrain_length,
            target_update_interval=self.target_update_interval,
            epsilon=self.epsilon,
            gamma=self.gamma,
            episodes=self.episodes,
            trials_per_episode=self.trials,
            activation=self.activation,
            hidden=tuple(self.hidden),
            lr=self.lr,
            lambda_decay=self.lambda_decay,
        )

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


@dataclass
class MetricsRecord:
    scenario: str
    seed: int
    episode: int
    reward: float
    sum_rate_bps: float
    loss: float | None
    clustering_time_s: float
    served_users: int  # cumulative over episodes

    def as_row(self) -> dict:
        return {f: getattr(self, f) for f in FIELDS}


@dataclass
class Summary:
    """Across-seed mean and standard deviation of per-seed statistics."""

    scenario: str
    seeds: list[int]
    episodes: int
    window: int
    stats: dict[str, tuple[float, float]]

    def mean(self, key: str) -> float:
        return self.stats[key][0]


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (instance, agent, warm-up) generators.

    The instance stream depends only on the seed, so every scenario sharing a
    seed and traffic range sees the same episodes.
    """
    kids = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(k) for k in kids)  # type: ignore[return-value]


def _baseline_episodes(cfg: ExperimentConfig, seed: int, instance_rng) -> list[MetricsRecord]:
    env = cfg.env()
    net = env.config
    records = []
    served_total = 0
    for ep in range(cfg.episodes):
        inst = env.sample_instance(instance_rng)
        env.reset(inst)
        users = env.current_users()
        if cfg.scenario == "benchmark":
            res = exhaustive_best(users, net)
        elif cfg.scenario == "noma-fixed":
            res = noma_fixed_power(users, net, cfg.fixed_power_dbm)
        else:
            res = oma_allocate(users, net)
        served_total += res.served_users
        records.append(
            MetricsRecord(cfg.name, seed, ep, 0.0, res.best_sum_rate_bps, None, 0.0, served_total)
        )
    return records


def run_seed(cfg: ExperimentConfig, seed: int) -> list[MetricsRecord]:
    instance_rng, agent_rng, warm_rng = seed_streams(seed)
    if cfg.scenario in ("benchmark", "oma", "noma-fixed"):
        return _baseline_episodes(cfg, seed, instance_rng)
    env = cfg.env()
    if cfg.scenario == "sarsa-light":
        _, history = sarsa.train(env, cfg.sarsa_hyper(), instance_rng, agent_rng)
    else:
        _, history = dqn.train(env, cfg.dqn_config(), instance_rng, agent_rng, warm_rng)
    records = []
    served_total = 0
    for ep, m in enumerate(history):
        served_total += m.served_users
        records.append(
            MetricsRecord(
                cfg.name, seed, ep, m.cumulative_reward, m.mean_sum_rate_bps, m.loss, m.clustering_time_s, served_total
            )
        )
    return records


def _job(args):
    return run_seed(*args)


def summarize(cfg_name: str, records: list[MetricsRecord], window: int = 100) -> Summary:
    by_seed: dict[int, list[MetricsRecord]] = {}
    for r in records:
        by_seed.setdefault(r.seed, []).append(r)
    episodes = {len(v) for v in by_seed.values()}
    if len(episodes) != 1:
        raise ValueError("seeds ran different episode counts")
    n_ep = episodes.pop()
    w = min(window, n_ep)
    per_seed: dict[str, list[float]] = {k: [] for k in ("reward", "sum_rate_bps", "loss", "clustering_time_s")}
    per_seed["long_run_sum_rate_bps"] = []
    per_seed["long_run_reward"] = []
    for seed in sorted(by_seed):
        recs = by_seed[seed]
        tail = recs[-w:]
        for key in ("reward", "sum_rate_bps", "clustering_time_s"):
            per_seed[key].append(float(np.mean([getattr(r, key) for r in tail])))
        losses = [r.loss for r in tail if r.loss is not None]
        per_seed["loss"].append(float(np.mean(losses)) if losses else float("nan"))
        per_seed["long_run_sum_rate_bps"].append(float(np.mean([r.sum_rate_bps for r in recs])))
        per_seed["long_run_reward"].append(float(np.mean([r.reward for r in recs])))
    stats = {k: (float(np.mean(v)), float(np.std(v))) for k, v in per_seed.items()}
    return Summary(cfg_name, sorted(by_seed), n_ep, w, stats)


def run(cfg: ExperimentConfig, jobs: int = 1, window: int = 100) -> tuple[list[MetricsRecord], Summary]:
    """Run every seed; records come back ordered by (seed position, episode)."""
    cfg.validate()
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            streams = list(pool.map(_job, [(cfg, s) for s in cfg.seeds]))
    else:
        streams = [run_seed(cfg, s) for s in cfg.seeds]
    records = [r for stream in streams for r in stream]
    return records, summarize(cfg.name, records, window)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit(records: list[MetricsRecord], fmt: str, path: str | Path) -> Path:
    """Write records as CSV or JSON lines; floats keep full precision."""
    if not records:
        raise ValueError("no records to emit")
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in FIELDS])
        text = buf.getvalue()
    else:
        text = "".join(json.dumps(r.as_row()) + "\n" for r in records)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def _record_from(row: dict) -> MetricsRecord:
    loss = row["loss"]
    return MetricsRecord(
        scenario=str(row["scenario"]),
        seed=int(row["seed"]),
        episode=int(row["episode"]),
        reward=float(row["reward"]),
        sum_rate_bps=float(row["sum_rate_bps"]),
        loss=None if loss in ("", None) else float(loss),
        clustering_time_s=float(row["clustering_time_s"]),
        served_users=int(row["served_users"]),
    )


def parse_metrics(path: str | Path) -> list[MetricsRecord]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".jsonl" or text.lstrip().startswith("{"):
        return [_record_from(json.loads(line)) for line in text.splitlines() if line.strip()]
    rows = list(csv.DictReader(io.StringIO(text)))
    return [_record_from(r) for r in rows]


def compare_report(summaries: list[Summary], keys=("sum_rate_bps", "reward", "loss")) -> str:
    """Aligned table of final-window means with ratios against the first run."""
    if len(summaries) < 2:
        raise ValueError("need at least two summaries")
    if len({s.episodes for s in summaries}) != 1:
        raise ValueError("summaries cover different episode counts")
    base = summaries[0]
    lines = [f"{'run':<24}" + "".join(f"{k:>18}{'ratio':>8}" for k in keys)]
    for s in summaries:
        cells = []
        for k in keys:
            v, b = s.mean(k), base.mean(k)
            ratio = v / b if b not in (0.0,) and np.isfinite(b) and np.isfinite(v) else float("nan")
            cells.append(f"{v:>18.6g}{ratio:>8.3f}")
        lines.append(f"{s.scenario:<24}" + "".join(cells))
    return "\n".join(lines)


def compare_ratios(summaries: list[Summary], key: str) -> list[float]:
    if len(summaries) < 2:
        raise ValueError("need at least two summaries")
    if len({s.episodes for s in summaries}) != 1:
        raise ValueError("summaries cover different episode counts")
    b = summaries[0].mean(key)
    return [s.mean(key) / b for s in summaries]


# Config files: one ``key = value`` per line, ``#`` starts a comment.
_TUPLE_KEYS = {"traffic", "power_levels_dbm", "hidden"}


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    if name not in types:
        raise ConfigError(f"{name}: unknown config key")
    raw = raw.strip()
    try:
        if name == "seeds":
            return parse_seeds(raw)
        if name == "traffic":
            return parse_range(raw)
        if name in _TUPLE_KEYS:
            conv = int if name == "hidden" else float
            return tuple(conv(x) for x in raw.replace(" ", "").split(",") if x)
        t = types[name]
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc


def parse_seeds(raw: str) -> list[int]:
    """``"0,1,2"`` or ``"0-9"`` or a mix of both."""
    seeds: list[int] = []
    for part in raw.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds += list(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def parse_range(raw: str) -> tuple[int, int]:
    if raw in TRAFFIC:
        return TRAFFIC[raw]
    for sep in ("-", ",", ":"):
        if sep in raw:
            lo, hi = raw.split(sep, 1)
            return int(lo), int(hi)
    n = int(raw)
    return n, n


def load_config_file(path: str | Path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = line.split("=", 1)
        key = key.strip().replace("-", "_")
        values[key] = _coerce(key, raw)
    return values
