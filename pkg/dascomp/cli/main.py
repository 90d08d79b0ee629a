"""
dascomp CLI: run distributed CoMP power-allocation experiments.

Usage:
    dascomp [--json] [--verbose] <command> [args...]

Commands:
    run            Generate scenarios, run every strategy, write reports
    compare-steps  Iterations-to-dual-gap for the two step-size rules
    validate       Check a config file without running anything
"""

import asyncio
import json
import logging
import sys
from typing import Any, Optional

import click

try:
    from rich.console import Console
    from rich.table import Table
    from rich import box
    from rich.text import Text
    from rich.panel import Panel
    from rich.logging import RichHandler

    HAS_RICH = True
    console = Console()
    err_console = Console(stderr=True)
except ImportError:
    HAS_RICH = False
    console = None  # type: ignore[assignment]
    err_console = None  # type: ignore[assignment]

import dascomp
from dascomp.api.experiment import (
    ExperimentConfig,
    acompare_step_sizes,
    arun_experiment,
    load_config,
)
from dascomp.exceptions import ConfigError, DasCompError, NotConvergedError

EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2


# ─── Async runner ─────────────────────────────────────────────────────────────

def _run(coro):
    """Run an async coroutine in a new event loop."""
    return asyncio.run(coro)


# ─── Formatting helpers ────────────────────────────────────────────────────────

def _mbps(val) -> str:
    """bit/s as Mbit/s with three decimals; 'N/A' for missing values."""
    if val is None:
        return "N/A"
    return f"{float(val) / 1e6:,.3f}"


def _iters(val) -> Any:
    """Iteration count as a cell; a red dash when the gap never settled."""
    if val is None or val == "":
        if HAS_RICH:
            return Text("—", style="red")
        return "-"
    return str(val)


def _die(msg: str, code: int = EXIT_CONFIG):
    """Print error message to stderr and exit with ``code``."""
    if HAS_RICH and err_console:
        err_console.print(f"[bold red]Error:[/bold red] {msg}")
    else:
        click.echo(f"Error: {msg}", err=True)
    sys.exit(code)


def _setup_logging(verbose: bool):
    """Route the package logger to stderr, through RichHandler when rich is installed."""
    level = logging.DEBUG if verbose else logging.WARNING
    if HAS_RICH:
        handler: logging.Handler = RichHandler(console=err_console, show_path=False, rich_tracebacks=False)
        fmt = "%(message)s"
    else:
        handler = logging.StreamHandler(sys.stderr)
        fmt = "%(levelname)s %(name)s: %(message)s"
    handler.setFormatter(logging.Formatter(fmt))
    root = logging.getLogger("dascomp")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _load(path: str) -> ExperimentConfig:
    try:
        return load_config(path)
    except ConfigError as e:
        _die(f"config {path}: {e}", EXIT_CONFIG)


# ─── Table helpers ─────────────────────────────────────────────────────────────

def _col(name: str, style: str = "", justify: str = "left", no_wrap: bool = False):
    """Column definition dict."""
    return {"name": name, "style": style, "justify": justify, "no_wrap": no_wrap}


def _print_rich_table(title: str, columns: list, rows: list):
    """Build and print a rich Table, or fall back to tab-separated plain text."""
    if HAS_RICH and console:
        table = Table(
            title=title,
            box=box.SIMPLE_HEAVY,
            show_header=True,
            header_style="bold cyan",
            title_style="bold white",
        )
        for col in columns:
            table.add_column(col["name"], style=col["style"], justify=col["justify"], no_wrap=col["no_wrap"])
        for row in rows:
            table.add_row(*[cell if isinstance(cell, Text) else str(cell) for cell in row])
        console.print(table)
    else:
        click.echo(f"\n{title}")
        click.echo("─" * 60)
        click.echo("\t".join(c["name"] for c in columns))
        click.echo("─" * 60)
        for row in rows:
            click.echo("\t".join(str(cell) for cell in row))


def _print_kv(pairs: list, title: str = ""):
    """Print (key, value) pairs as a panel or plain text."""
    if HAS_RICH and console:
        lines = [Text.assemble(Text(f"  {k}: ", style="dim"), Text(str(v))) for k, v in pairs]
        body = Text("\n").join(lines)
        console.print(Panel(body, title=f"[bold]{title}[/bold]", border_style="cyan", expand=False) if title else body)
    else:
        if title:
            click.echo(f"\n{title}")
            click.echo("─" * 40)
        for k, v in pairs:
            click.echo(f"  {k}: {v}")


# ─── Root CLI group ────────────────────────────────────────────────────────────

@click.group()
@click.option(
    "--json", "json_mode",
    is_flag=True, default=False,
    help="Output raw JSON instead of formatted tables.",
)
@click.option("--verbose", "-v", is_flag=True, default=False, help="Log seed and solver progress (default: warnings only).")
@click.version_option(
    version=dascomp.__version__,
    prog_name="dascomp",
    message="dascomp %(version)s",
)
@click.pass_context
def cli(ctx, json_mode, verbose):
    """Distributed CoMP power allocation for distributed antenna systems.

    Runs the proximal dual iteration, its baselines and the scenario
    generator from a JSON experiment config.

    \b
    Examples:
      dascomp validate sample-config/desk_scale.json
      dascomp run sample-config/desk_scale.json --out results/
      dascomp compare-steps sample-config/desk_scale.json
      dascomp --json run sample-config/full_scale.json
    """
    ctx.ensure_object(dict)
    ctx.obj["json"] = json_mode
    _setup_logging(verbose)


# ─── run ──────────────────────────────────────────────────────────────────────

@cli.command("run")
@click.argument("config_path", metavar="CONFIG", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Output directory (default: the config's 'output').")
@click.option("--allow-nonconverged", is_flag=True, default=False,
              help="Keep the last iterate of runs that hit their iteration budget.")
@click.pass_context
def run_cmd(ctx, config_path, out_dir, allow_nonconverged):
    """Run every strategy on every seed and write reports."""
    config = _load(config_path)
    try:
        result = _run(arun_experiment(config, out_dir, allow_nonconverged))
    except NotConvergedError as e:
        _die(f"{e} (pass --allow-nonconverged to keep the last iterate)", EXIT_NOT_CONVERGED)
    except DasCompError as e:
        _die(str(e), EXIT_CONFIG)

    summary = result.summary()
    if ctx.obj["json"]:
        click.echo(json.dumps({
            "out_dir": str(result.out_dir),
            "manifest": str(result.manifest),
            "strategies": summary,
        }, indent=2))
        return

    columns = [
        _col("Strategy", style="bold"),
        _col("Seeds", justify="right"),
        _col("Per-user Mbit/s", justify="right", style="bold yellow"),
        _col("± 95%", justify="right", style="dim"),
        _col("Margin violations", justify="right"),
    ]
    rows = [
        (
            name,
            stats["realizations"],
            _mbps(stats["mean_user_throughput_bps"]),
            _mbps(stats["half_width_bps"]),
            f"{100.0 * stats['margin_violation_rate']:.1f}%",
        )
        for name, stats in summary.items()
    ]
    _print_rich_table(f"Throughput, {len(config.scenario.seeds)} seed(s)", columns, rows)
    _print_kv([("Output", result.out_dir), ("Manifest", result.manifest)])


# ─── compare-steps ────────────────────────────────────────────────────────────

@cli.command("compare-steps")
@click.argument("config_path", metavar="CONFIG", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Output directory (default: the config's 'output').")
@click.pass_context
def compare_steps_cmd(ctx, config_path, out_dir):
    """Compare iterations-to-dual-gap under both step-size rules."""
    config = _load(config_path)
    try:
        rows = _run(acompare_step_sizes(config, out_dir))
    except NotConvergedError as e:
        _die(str(e), EXIT_NOT_CONVERGED)
    except DasCompError as e:
        _die(str(e), EXIT_CONFIG)

    if ctx.obj["json"]:
        click.echo(json.dumps(rows, indent=2))
        return

    columns = [
        _col("Seed", style="dim", justify="right"),
        _col("Gap threshold", justify="right"),
        _col("theorem1 steps", justify="right", style="bold green"),
        _col("lin2006 steps", justify="right"),
    ]
    table_rows = [
        (r["seed"], f"{r['threshold']:.0e}", _iters(r["theorem1"]), _iters(r["lin2006"]))
        for r in rows
    ]
    _print_rich_table("Iterations until the dual gap settles", columns, table_rows)
    _print_kv([("Rows where theorem1 is not slower", f"{_share_not_slower(rows):.1%}")])


def _share_not_slower(rows: list) -> float:
    def key(v: Optional[int]) -> float:
        return float("inf") if v is None else v

    if not rows:
        return 0.0
    return sum(1 for r in rows if key(r["theorem1"]) <= key(r["lin2006"])) / len(rows)


# ─── validate ─────────────────────────────────────────────────────────────────

@cli.command("validate")
@click.argument("config_path", metavar="CONFIG", type=click.Path(dir_okay=False))
@click.pass_context
def validate_cmd(ctx, config_path):
    """Parse and check a config file."""
    config = _load(config_path)
    if ctx.obj["json"]:
        click.echo(json.dumps(config.to_dict(), indent=2))
        return
    sc, alg = config.scenario, config.algorithm
    _print_kv([
        ("Seeds", len(sc.seeds)),
        ("Cells", sc.cells),
        ("Users per cell", sc.users_per_cell),
        ("Budget", f"{sc.P_dBm:g} dBm"),
        ("Serving antennas", sc.serving_count),
        ("Step sizes", alg.step_size_policy),
        ("Strategies", ", ".join(config.strategies)),
        ("Runtime", config.runtime),
    ], title=f"{config_path}: valid")


# ─── Entry point ──────────────────────────────────────────────────────────────

def main():
    """Entry point for the dascomp CLI."""
    cli(obj={})


if __name__ == "__main__":
    main()
