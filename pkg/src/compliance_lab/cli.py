"""CLI entrypoint for compliance-lab."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np
from rich.console import Console
from rich.table import Table

from compliance_lab.config import START_CHOICES, SimConfig, load_config, serialize_config
from compliance_lab.export import write_agents, write_ode, write_sweep, write_timeseries
from compliance_lab.ledger.audit import AuditFailure, audit_ledger
from compliance_lab.ledger.base import PolicyKind
from compliance_lab.ledger.book import LedgerFormatError, agent_token_summary, read_ledger, write_ledger
from compliance_lab.logging_config import configure_logging
from compliance_lab.models import ConfigError, ScalingParams, ScenarioKind
from compliance_lab.montecarlo import epsilon_sweep, fairness_summary, run_ensemble
from compliance_lab.reference import RefParams, lyapunov_value, ode_integrate
from compliance_lab.scenarios import build_scenario

console = Console()
err_console = Console(stderr=True)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CHECK_FAILED = 2


class CheckFailed(Exception):
    """A requested statistical check did not hold."""


def _parse_floats(raw: str, name: str, count: int | None = None) -> list[float]:
    try:
        values = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"{raw!r} is not a comma-separated list of numbers", param_hint=name) from None
    if not values or (count is not None and len(values) != count):
        expected = f"{count} values" if count else "at least one value"
        raise click.BadParameter(f"{raw!r}: expected {expected}", param_hint=name)
    return values


def _emit_run(sim: SimConfig, out: Path, workers: int | None) -> None:
    """Run an ensemble and write its CSVs, rep 0's ledger and the config used."""
    out.mkdir(parents=True, exist_ok=True)
    agg = run_ensemble(sim, workers=workers, record_ledger=True)

    write_timeseries(agg, out / "timeseries.csv")
    write_timeseries(agg, out / "timeseries_std.csv", stat="std")
    write_agents(agg, out / "agents.csv")
    ledger = agg.runs[0].ledger
    write_ledger(ledger, out / "ledger.csv")
    (out / "config.txt").write_text(serialize_config(sim), encoding="utf-8")

    fair = fairness_summary(agg)
    flows = agent_token_summary(ledger)
    table = Table(title=f"Scenario {sim.scenario.value}: {agg.reps} reps, n={sim.n}, horizon={sim.horizon}")
    table.add_column("Statistic")
    table.add_column("Value", justify="right")
    table.add_row("final mean M", f"{agg.mean['mean_m'][-1]:.4f}")
    table.add_row("final mean M̄", f"{agg.mean['mean_mbar'][-1]:.4f}")
    table.add_row("final C", f"{agg.mean['C'][-1]:.4f}")
    table.add_row("M̄ p10 / p90", f"{agg.mean['mbar_p10'][-1]:.4f} / {agg.mean['mbar_p90'][-1]:.4f}")
    table.add_row("Spearman(q, rate)", f"{fair.spearman:.3f}")
    table.add_row("rate spread p90-p10", f"{fair.spread:.4f}")
    table.add_row("ledger transactions", f"{len(ledger)}")
    table.add_row("tokens forfeited (rep 0)", f"{ledger.forfeited_total.tokens:.6f}")
    table.add_row("agents never forfeiting", f"{sum(1 for f in flows if f.forfeited == 0)}")
    console.print(table)
    console.print(f"[green]Wrote outputs to {out}[/green]")


@click.group()
@click.option(
    "--log-level",
    default="WARNING",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Structured log level (logs go to stderr).",
)
def cli(log_level: str):
    """Compliance Lab: seeded simulation of personalised compliance pricing."""
    configure_logging(getattr(logging, log_level.upper()))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="key = value config file.")
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory.")
@click.option("--workers", default=None, type=click.IntRange(min=1), help="Worker processes (default $COMPLIANCE_LAB_THREADS or CPU count).")
def simulate(config_path: str, out: Path, workers: int | None):
    """Run the ensemble described by a config file."""
    _emit_run(load_config(config_path), out, workers)


@cli.command()
@click.option("--kind", required=True, type=click.Choice([k.value for k in ScenarioKind]), help="Scenario I, II, III or IV.")
@click.option("--reps", default=150, type=click.IntRange(min=1), help="Independent repetitions.")
@click.option("--seed", default=0, type=click.IntRange(min=0, max=2 ** 64 - 1), help="Base seed.")
@click.option("--n", "n_agents", default=1000, type=click.IntRange(min=1), help="Number of agents.")
@click.option("--horizon", default=500, type=click.IntRange(min=0), help="Steps per run.")
@click.option("--policy", default="adaptive", type=click.Choice(["fixed", "adaptive", "event"]), help="Bond policy recorded on the ledger.")
@click.option("--start", default="zero", type=click.Choice(list(START_CHOICES)), help="Initial state: zero, target (M̄ = Q*) or settled (also c_i = Q* - q_i).")
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory.")
@click.option("--workers", default=None, type=click.IntRange(min=1), help="Worker processes.")
def scenario(
    kind: str, reps: int, seed: int, n_agents: int, horizon: int, policy: str, start: str, out: Path, workers: int | None,
):
    """Run one of the four preset scenarios."""
    sim = build_scenario(
        kind, reps=reps, base_seed=seed, n=n_agents, horizon=horizon, policy=PolicyKind(policy), start=start
    )
    _emit_run(sim, out, workers)


@cli.command()
@click.option("--epsilons", required=True, help="Comma-separated step sizes, e.g. 0.02,0.04,0.08.")
@click.option("--w", "w", default=1.0, type=float, help="EMA rate w.")
@click.option("--alpha0", default=1.0, type=float, help="Global gain scale alpha0.")
@click.option("--beta0", default=1.0, type=float, help="Individual gain scale beta0 in (0, 1].")
@click.option("--n", "n_agents", default=200, type=click.IntRange(min=1), help="Number of agents.")
@click.option("--reps", default=50, type=click.IntRange(min=1), help="Repetitions per epsilon.")
@click.option("--seed", default=0, type=click.IntRange(min=0, max=2 ** 64 - 1), help="Base seed.")
@click.option("--delta", default=0.1, type=float, help="Deviation threshold.")
@click.option("--check", is_flag=True, help="Exit 2 unless the MSD trend in epsilon is monotone.")
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory.")
@click.option("--workers", default=None, type=click.IntRange(min=1), help="Worker processes.")
def sweep(
    epsilons: str, w: float, alpha0: float, beta0: float, n_agents: int, reps: int,
    seed: int, delta: float, check: bool, out: Path, workers: int | None,
):
    """Theorem-mode epsilon sweep of MSD and deviation probability (Scenario II)."""
    eps_list = _parse_floats(epsilons, "--epsilons")
    scaling = ScalingParams(epsilon=eps_list[0], w=w, alpha0=alpha0, beta0=beta0)
    base = build_scenario(ScenarioKind.II_BOTH, n=n_agents, base_seed=seed)
    result = epsilon_sweep(base, scaling, eps_list, reps, delta=delta, workers=workers)

    out.mkdir(parents=True, exist_ok=True)
    write_sweep(result, out / "sweep.csv")

    table = Table(title=f"Epsilon sweep ({reps} reps, n={n_agents})")
    for col in ("epsilon", "alpha", "beta", "gamma", "MSD", f"P(dev > {delta:g})", "K3 hat"):
        table.add_column(col, justify="right")
    for row in result.rows:
        table.add_row(
            f"{row.epsilon:g}", f"{row.alpha:.3g}", f"{row.beta:.3g}", f"{row.gamma:.4g}",
            f"{row.msd:.4g}", f"{row.deviation_prob:.4g}", f"{row.k3_hat:.4g}",
        )
    console.print(table)
    console.print(f"log-log slope of MSD vs epsilon: {result.slope:.3f}; monotone: {result.monotone}")
    if check and not result.monotone:
        raise CheckFailed("MSD is not non-decreasing in epsilon")


@cli.command()
@click.option("--beta0", default=1.0, type=float, help="Individual gain scale beta0 in (0, 1].")
@click.option("--w", "w", default=1.0, type=float, help="EMA rate w.")
@click.option("--qstar", default=0.85, type=float, help="Target compliance Q*.")
@click.option("--start", required=True, help="Start point z1,z2.")
@click.option("--T", "horizon", required=True, type=click.FloatRange(min=0), help="Integration horizon.")
@click.option("--dt", default=None, type=float, help="RK4 step (default min(0.01/w, 0.01)).")
@click.option("--out", required=True, type=click.Path(file_okay=False, path_type=Path), help="Output directory.")
def ode(beta0: float, w: float, qstar: float, start: str, horizon: float, dt: float | None, out: Path):
    """Integrate the reference ODE from one start point."""
    try:
        p = RefParams(w=w, beta0=beta0, q_star=qstar)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    z0 = np.array(_parse_floats(start, "--start", count=2))
    try:
        t, z = ode_integrate(z0, p, horizon, dt=dt)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc

    out.mkdir(parents=True, exist_ok=True)
    write_ode(t, z, p, out / "ode.csv")

    table = Table(title=f"Reference ODE (beta0={beta0:g}, w={w:g}, Q*={qstar:g})")
    table.add_column("t", justify="right")
    table.add_column("z1", justify="right")
    table.add_column("z2", justify="right")
    table.add_column("V", justify="right")
    for idx in (0, len(t) - 1):
        table.add_row(f"{t[idx]:.3f}", f"{z[idx, 0]:.6f}", f"{z[idx, 1]:.6f}", f"{lyapunov_value(z[idx], p):.3g}")
    console.print(table)


@cli.command()
@click.option("--ledger", "ledger_path", required=True, type=click.Path(dir_okay=False), help="Ledger file (# ledger v1).")
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Config the ledger was produced with.")
def audit(ledger_path: str, config_path: str):
    """Replay a ledger against its config; exit 2 if anything does not match."""
    cfg = load_config(config_path)
    report = audit_ledger(read_ledger(ledger_path), cfg)

    table = Table(title=f"Ledger audit: {ledger_path}")
    table.add_column("Check")
    table.add_column("Result", justify="right")
    table.add_row("transactions", f"{report.n_transactions}")
    table.add_row("compliance readable every step", "yes" if report.complete else "no")
    table.add_row("deposits re-priced", f"{report.deposits_checked}")
    table.add_row("findings", f"[{'green' if report.ok else 'red'}]{len(report.findings)}[/]")
    console.print(table)
    if not report.ok:
        raise AuditFailure(report.findings)


def cli_dispatch(argv: list[str]) -> int:
    """Run the CLI on argv and map the outcome to an exit status.

    0 success; 1 usage or validation error; 2 audit or check failure.
    """
    argv = list(argv)
    if not argv:
        err_console.print(cli.get_usage(click.Context(cli, info_name="compliance-lab")))
        return EXIT_INVALID
    try:
        rv = cli.main(args=argv, prog_name="compliance-lab", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_INVALID
    except click.Abort:
        err_console.print("Aborted.")
        return EXIT_INVALID
    except ConfigError as exc:
        err_console.print(f"invalid configuration: {'; '.join(exc.errors)}", markup=False, highlight=False)
        return EXIT_INVALID
    except (LedgerFormatError, OSError) as exc:
        err_console.print(f"error: {exc}", markup=False, highlight=False)
        return EXIT_INVALID
    except (AuditFailure, CheckFailed) as exc:
        err_console.print(f"FAILED: {exc}", markup=False, highlight=False)
        return EXIT_CHECK_FAILED
    return rv if isinstance(rv, int) else EXIT_OK


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
