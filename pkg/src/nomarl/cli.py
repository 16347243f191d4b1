"""Command-line entry point: ``nomarl run | compare | sweep``."""

from __future__ import annotations

import os
import sys
from pathlib import Path

import click

from . import harness
from .baselines import InstanceTooLarge
from .network import ConfigError

OUTPUT_DIR_ENV = "NOMARL_OUTPUT_DIR"
EXIT_CONFIG = 2
EXIT_GUARD = 3


def _out_path(out: str | None, default_name: str) -> Path:
    """Relative paths land under ``$NOMARL_OUTPUT_DIR`` when it is set."""
    path = Path(out) if out else Path(default_name)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


def _build_config(config_path, scenario, overrides: dict) -> harness.ExperimentConfig:
    values = harness.load_config_file(config_path) if config_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    if scenario:
        values["scenario"] = scenario
    if "scenario" not in values:
        raise ConfigError("scenario: required (use --scenario or the config file)")
    return harness.ExperimentConfig(**values)


def _common(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="key = value file"),
        click.option("--scenario", type=click.Choice(harness.SCENARIOS)),
        click.option("--seeds", help="e.g. 0,1,2 or 0-9"),
        click.option("--bandwidth-khz", type=float, help="system bandwidth; each sub-channel gets B/N_s"),
        click.option("--traffic", help="light, medium, heavy or LO-HI"),
        click.option("--alpha", type=float),
        click.option("--gamma", type=float),
        click.option("--epsilon", type=float),
        click.option("--lambda", "lambda_decay", type=float, help="Adam beta1 decay"),
        click.option("--activation", type=click.Choice(["relu", "sigmoid", "tanh"])),
        click.option("--episodes", type=int),
        click.option("--trials", type=int),
        click.option("--power-levels", help="comma-separated dBm levels"),
        click.option("--hidden", help="comma-separated hidden widths"),
        click.option("--batch-size", type=int),
        click.option("--lr", type=float),
        click.option("--jobs", type=int, default=1, show_default=True, help="parallel seed workers"),
        click.option("--format", "fmt", type=click.Choice(["csv", "jsonl"]), default="csv", show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _overrides(seeds, bandwidth_khz, traffic, alpha, gamma, epsilon, lambda_decay, activation, episodes, trials,
               power_levels, hidden, batch_size, lr) -> dict:
    ov = dict(
        bandwidth_khz=bandwidth_khz, alpha=alpha, gamma=gamma, epsilon=epsilon, lambda_decay=lambda_decay,
        activation=activation, episodes=episodes, trials=trials, batch_size=batch_size, lr=lr,
    )
    if seeds is not None:
        ov["seeds"] = harness.parse_seeds(seeds)
    if traffic is not None:
        ov["traffic"] = harness.parse_range(traffic)
    if power_levels is not None:
        ov["power_levels_dbm"] = tuple(float(x) for x in power_levels.split(","))
    if hidden is not None:
        ov["hidden"] = tuple(int(x) for x in hidden.split(","))
    return ov


def _guarded(fn):
    """Map library errors onto the documented exit codes."""
    try:
        return fn()
    except InstanceTooLarge as exc:
        click.echo(f"guard violation: {exc}", err=True)
        sys.exit(EXIT_GUARD)
    except (ConfigError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _print_summary(s: harness.Summary) -> None:
    click.echo(f"{s.scenario}: {len(s.seeds)} seed(s), {s.episodes} episodes, final window {s.window}")
    for key, (mean, std) in s.stats.items():
        click.echo(f"  {key:<24} {mean:.6g} +/- {std:.3g}")


@click.group()
def main():
    """Uplink NOMA resource-allocation experiments."""


@main.command("run")
@_common
@click.option("--out", help="metrics file (default metrics.<format>)")
def run_cmd(config_path, scenario, seeds, bandwidth_khz, traffic, alpha, gamma, epsilon, lambda_decay, activation,
            episodes, trials, power_levels, hidden, batch_size, lr, jobs, fmt, out):
    """Run one scenario over its seeds and write per-episode metrics."""

    def go():
        ov = _overrides(seeds, bandwidth_khz, traffic, alpha, gamma, epsilon, lambda_decay, activation, episodes,
                        trials, power_levels, hidden, batch_size, lr)
        cfg = _build_config(config_path, scenario, ov)
        records, summary = harness.run(cfg, jobs=jobs)
        path = harness.emit(records, fmt, _out_path(out, f"metrics.{fmt}"))
        _print_summary(summary)
        click.echo(f"wrote {path}")

    _guarded(go)


@main.command("compare")
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--window", type=int, default=100, show_default=True)
def compare_cmd(files, window):
    """Compare final-window means across metric files (ratios vs the first)."""

    def go():
        summaries = []
        for f in files:
            records = harness.parse_metrics(f)
            for name in dict.fromkeys(r.scenario for r in records):
                summaries.append(harness.summarize(name, [r for r in records if r.scenario == name], window))
        click.echo(harness.compare_report(summaries))

    _guarded(go)


@main.command("sweep")
@_common
@click.option("--bandwidths-khz", default="30,40,50,60,70,80,90,100,110,120", show_default=True,
              help="system bandwidths to sweep")
@click.option("--out", help="metrics file (default sweep.<format>)")
def sweep_cmd(config_path, scenario, seeds, bandwidth_khz, traffic, alpha, gamma, epsilon, lambda_decay, activation,
              episodes, trials, power_levels, hidden, batch_size, lr, jobs, fmt, bandwidths_khz, out):
    """Repeat a scenario across system bandwidths; rows are labelled scenario@<kHz>kHz."""

    def go():
        ov = _overrides(seeds, bandwidth_khz, traffic, alpha, gamma, epsilon, lambda_decay, activation, episodes,
                        trials, power_levels, hidden, batch_size, lr)
        base = _build_config(config_path, scenario, ov)
        records = []
        for bw in (float(x) for x in bandwidths_khz.split(",")):
            cfg = base.replace(bandwidth_khz=bw, label=f"{base.scenario}@{bw:g}kHz")
            recs, summary = harness.run(cfg, jobs=jobs)
            records += recs
            click.echo(f"{cfg.name}: sum rate {summary.mean('sum_rate_bps'):.6g} bps")
        path = harness.emit(records, fmt, _out_path(out, f"sweep.{fmt}"))
        click.echo(f"wrote {path}")

    _guarded(go)


if __name__ == "__main__":
    main()
