"""Command-line entry point for running topologies, pushing series, and
driving the end-to-end feedback scenario."""
from __future__ import annotations

import os
import re
import signal
import sys
import threading
from pathlib import Path

import click

from .dicom import DicomError, parse_part10
from .scenario import ScenarioAssertionError, run_feedback_scenario
from .topology import ConfigInvalid, PortConflict, load_config, run_topology
from .transfer import (
    AssociationRejected,
    ConnectionRefusedByPeer,
    Endpoint,
    StoreStatus,
    TransferError,
    associate,
)

EXIT_CONFIG = 2
EXIT_TRANSFER = 3
EXIT_SCENARIO = 4


@click.group()
def main() -> None:
    """Desk-scale radiology workflow system."""


@main.group()
def topology() -> None:
    """Start or stop a node topology."""


def _echo_err(msg: str) -> None:
    click.echo(msg, err=True)


def _load(config: str):
    try:
        return load_config(Path(config))
    except ConfigInvalid as exc:
        _echo_err(f"config error: {exc}")
        raise click.exceptions.Exit(EXIT_CONFIG)


@topology.command("up")
@click.option("--config", required=True, type=click.Path(exists=False))
@click.option("--mode", type=click.Choice(["research", "production", "feedback"]), default=None)
def topology_up(config: str, mode: str | None) -> None:
    """Start all nodes for the mode and run until stopped."""
    cfg = _load(config)
    try:
        system = run_topology(cfg, mode=mode)
    except (ConfigInvalid, PortConflict) as exc:
        _echo_err(f"config error: {exc}")
        raise click.exceptions.Exit(EXIT_CONFIG)
    root = Path(cfg.storage_root)
    pid_file = root / "topology.pid"
    pid_file.write_text(str(os.getpid()))
    click.echo(f"topology up in mode {system.mode}; router at "
               f"{system.router.endpoint.host}:{system.router.endpoint.port}")
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    system.shutdown()
    pid_file.unlink(missing_ok=True)
    click.echo("topology down")


@topology.command("down")
@click.option("--config", required=True, type=click.Path(exists=False))
def topology_down(config: str) -> None:
    """Stop a topology previously started with `topology up`."""
    cfg = _load(config)
    pid_file = Path(cfg.storage_root) / "topology.pid"
    if not pid_file.exists():
        _echo_err(f"no running topology recorded at {pid_file}")
        raise click.exceptions.Exit(EXIT_CONFIG)
    os.kill(int(pid_file.read_text()), signal.SIGTERM)
    click.echo("stop signal sent")


def _parse_target(target: str) -> Endpoint:
    m = re.fullmatch(r"([A-Z0-9_]+)@([^:]+):(\d+)", target)
    if not m:
        _echo_err(f"bad endpoint {target!r}; expected AE@host:port")
        raise click.exceptions.Exit(EXIT_CONFIG)
    return Endpoint(host=m.group(2), port=int(m.group(3)), called_ae=m.group(1))


@main.command()
@click.option("--series", "series_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--to", "target", required=True, help="destination as AE@host:port")
def send(series_dir: str, target: str) -> None:
    """Send every instance in a directory to one endpoint."""
    endpoint = _parse_target(target)
    files = sorted(Path(series_dir).glob("*.dcm"))
    if not files:
        _echo_err(f"no .dcm files in {series_dir}")
        raise click.exceptions.Exit(EXIT_CONFIG)
    sent = dup = failed = 0
    try:
        assoc = associate(endpoint, "CLI_SEND")
        try:
            for path in files:
                blob = path.read_bytes()
                try:
                    ds = parse_part10(blob)
                except DicomError as exc:
                    _echo_err(f"{path.name}: unparsable ({exc})")
                    failed += 1
                    continue
                from .dicom import T

                rsp = assoc.store(blob, str(ds.value(T.SOPInstanceUID)))
                if rsp.status == StoreStatus.SUCCESS:
                    sent += 1
                elif rsp.status == StoreStatus.DUPLICATE:
                    dup += 1
                else:
                    failed += 1
                    _echo_err(f"{path.name}: store failed ({rsp.status.name})")
        finally:
            assoc.release()
    except (AssociationRejected, ConnectionRefusedByPeer, TransferError, OSError) as exc:
        _echo_err(f"transfer error: {exc}")
        raise click.exceptions.Exit(EXIT_TRANSFER)
    click.echo(f"delivered={sent} duplicates={dup} failed={failed}")
    if failed:
        raise click.exceptions.Exit(EXIT_TRANSFER)


@main.group()
def scenario() -> None:
    """End-to-end case-study drivers."""


@scenario.command("feedback")
@click.option("--config", required=True, type=click.Path(exists=False))
@click.option("--seeds", default=None, help="comma-separated seeds, e.g. 1,2,3")
@click.option("--increments", default=None, help="series:patients pairs, e.g. 93:85,155:120")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
def scenario_feedback(config: str, seeds: str | None, increments: str | None, out_dir: str | None) -> None:
    """Run the full feedback case study and write CSV + figure reports."""
    cfg = _load(config)
    try:
        if seeds:
            cfg.scenario.seeds = [int(s) for s in seeds.split(",")]
        if increments:
            pairs = []
            for item in increments.split(","):
                a, b = item.split(":")
                pairs.append((int(a), int(b)))
            cfg.scenario.increments = pairs
    except ValueError as exc:
        _echo_err(f"config error: {exc}")
        raise click.exceptions.Exit(EXIT_CONFIG)
    out = Path(out_dir) if out_dir else Path(cfg.storage_root) / "report"
    try:
        result = run_feedback_scenario(cfg, out, log=click.echo)
    except (ConfigInvalid, PortConflict) as exc:
        _echo_err(f"config error: {exc}")
        raise click.exceptions.Exit(EXIT_CONFIG)
    except ScenarioAssertionError as exc:
        _echo_err(f"scenario assertion failed: {exc}")
        raise click.exceptions.Exit(EXIT_SCENARIO)
    click.echo(f"reports written to {result.out_dir}")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(exists=True, file_okay=False))
def report(out_dir: str) -> None:
    """Re-render figures from the CSVs in a scenario output directory."""
    from .reporting import render_figures

    if not (Path(out_dir) / "froc_detail.csv").exists():
        _echo_err(f"{out_dir} has no froc_detail.csv")
        raise click.exceptions.Exit(EXIT_CONFIG)
    for path in render_figures(Path(out_dir)):
        click.echo(str(path))


if __name__ == "__main__":
    main()
