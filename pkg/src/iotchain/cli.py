"""Command-line front end.

Exit codes: 0 on success, 1 when an invariant or audit check fails, 2 on
configuration errors. IOTCHAIN_OUT_DIR sets the default output directory
for ``run``.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import click

from . import _kernels
from .artifacts import verify_run, write_run_artifacts
from .metrics import render_throughput, throughput_model
from .scenario import ConfigInvalid, resolve_scenario
from .sim import compare_modes as run_compare_modes
from .sim import run_simulation
from .store import fsck_chunk_dir

EXIT_AUDIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def _load_scenario_or_exit(ref: str):
    try:
        return resolve_scenario(ref)
    except ConfigInvalid as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)


@click.group()
def main():
    """Blockchain-backed LPWAN pipeline simulator."""


@main.command()
@click.argument("scenario")
@click.option("--seed", type=int, default=None,
              help="Override the scenario seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Run directory (default: $IOTCHAIN_OUT_DIR/<name>-<seed> "
                   "or ./runs/<name>-<seed>).")
@click.option("--csv", "with_csv", is_flag=True,
              help="Also write per-block rows to blocks.csv.")
@click.option("--faithful-listing", is_flag=True,
              help="Registry indexes devices on every write instead of "
                   "first sight.")
def run(scenario, seed, out_dir, with_csv, faithful_listing):
    """Run a scenario and write its artifacts."""
    sc = _load_scenario_or_exit(scenario)
    effective_seed = sc.seed if seed is None else seed
    if out_dir is None:
        base = os.environ.get("IOTCHAIN_OUT_DIR", "runs")
        out_dir = Path(base) / f"{sc.name}-seed{effective_seed}"
    click.echo(f"kernel backend: {_kernels.BACKEND}", err=True)
    result = run_simulation(sc, seed_override=seed, faithful=faithful_listing)
    out = write_run_artifacts(result, out_dir, with_csv=with_csv)
    click.echo(result.report.to_text())
    click.echo(f"artifacts written to {out}")
    if not result.report.converged:
        click.echo("invariant failure: node views did not converge", err=True)
        sys.exit(EXIT_AUDIT_FAILURE)


@main.command()
@click.option("--gas-limit", type=int, required=True)
@click.option("--tx-gas", type=int, required=True)
@click.option("--block-time", type=float, required=True,
              help="Seconds per block.")
def throughput(gas_limit, tx_gas, block_time):
    """Closed-form throughput: tx/block, tx/s and tx/min."""
    try:
        model = throughput_model(gas_limit, tx_gas, block_time)
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    click.echo(render_throughput(model))


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def verify(run_dir):
    """Re-validate a run directory: blocks, events, stored chunks."""
    violation = verify_run(run_dir)
    if violation is None:
        click.echo("verify: all checks passed")
        return
    click.echo(f"verify: FAILED: {violation}", err=True)
    sys.exit(EXIT_AUDIT_FAILURE)


@main.command("compare-modes")
@click.argument("scenario")
@click.option("--seed", type=int, default=None)
def compare_modes(scenario, seed):
    """Replay one run's registry calls under both write semantics."""
    sc = _load_scenario_or_exit(scenario)
    report = run_compare_modes(sc, seed_override=seed)
    click.echo("registry write semantics comparison")
    click.echo(f"  committed calls        : {report['calls']}")
    click.echo(f"  distinct devices       : {report['distinct_devices']}")
    click.echo(f"  dedup device count     : {report['dedup_device_count']}")
    click.echo(f"  faithful device count  : {report['faithful_device_count']}")


@main.command()
@click.argument("chunk_dir", type=click.Path(exists=True, file_okay=False))
def fsck(chunk_dir):
    """Re-hash every chunk file under a directory."""
    bad = fsck_chunk_dir(chunk_dir)
    if not bad:
        click.echo("fsck: all chunks intact")
        return
    for name in bad:
        click.echo(f"fsck: corrupt or misnamed chunk: {name}", err=True)
    sys.exit(EXIT_AUDIT_FAILURE)


if __name__ == "__main__":
    main()
