"""Command line entry point.

Exit codes: 0 success, 2 validation or parse failure, 3 numerical failure.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import sys
from pathlib import Path

import click

from .. import swcap
from ..errors import NumericalError, ParseError, ValidationError
from . import runner
from .scenario import load_scenario

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, ParseError) as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except NumericalError as exc:
            click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _floats(text, what):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"{what} must be a comma-separated list of numbers") from None
    if not vals:
        raise ValidationError(f"{what} is empty")
    return vals


def _out_dir(out):
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


out_option = click.option("--out", "out", default=".", show_default=True,
                          type=click.Path(file_okay=False), help="Output directory.")


@click.group()
@click.version_option(package_name="wptdecrypt")
def main():
    """Simulate frequency-hopping WPT and a switched-capacitor receiver that follows it."""


@main.command()
@click.argument("scenario")
@out_option
@_guarded
def run(scenario, out):
    """Full attack run: ledger, probe traces, controller trace and report."""
    sc = load_scenario(scenario)
    report = runner.run_scenario(sc, _out_dir(out))
    for seg in report.segments:
        ratios = {k: round(v["ratio"], 4) for k, v in seg["ledger"]["receivers"].items()}
        click.echo(f"{seg['frequency_hz']:.6g} Hz  {ratios}")
    click.echo(f"report written to {Path(out) / 'report.json'}")


@main.command()
@click.argument("scenario")
@click.option("--grid", required=True, help="Comma-separated drive frequencies in Hz.")
@click.option("--cycles", default=runner.SWEEP_CYCLES, show_default=True, type=int,
              help="Simulated drive cycles per point.")
@click.option("--workers", default=1, show_default=True, type=int)
@out_option
@_guarded
def sweep(scenario, grid, cycles, workers, out):
    """Steady-state power per receiver across a frequency grid."""
    sc = load_scenario(scenario)
    rows = runner.sweep_frequency(sc, _floats(grid, "grid"), cycles=cycles, workers=workers)
    path = _out_dir(out) / "sweep.csv"
    text = runner.sweep_csv(rows, path)
    click.echo(text, nl=False)


@main.command()
@click.option("--flo", type=float, required=True, help="Lowest frequency to cover, Hz.")
@click.option("--fhi", type=float, required=True, help="Highest frequency to cover, Hz.")
@click.option("--l", "l", type=float, required=True, help="Receiver coil inductance, H.")
@click.option("--margin", type=float, default=0.0, show_default=True,
              help="Capacitor aging margin as a fraction.")
@click.option("--scales", default="0.8,0.9,1.0,1.1,1.2", show_default=True,
              help="Capacitance scale factors for the sensitivity table.")
@out_option
@_guarded
def design(flo, fhi, l, margin, scales, out):
    """Pick C1/C2 for a target range and tabulate range sensitivity."""
    c1, c2 = swcap.select_capacitances(flo, fhi, l, margin)
    f_lo, f_hi = swcap.hacking_frequency_range(l, c1, c2)
    rows = swcap.sensitivity_sweep(l, c1, c2, _floats(scales, "scales"))
    out_dir = _out_dir(out)
    text = swcap.sensitivity_csv(rows)
    (out_dir / "sensitivity.csv").write_text(text)
    summary = {"l_h": l, "c1_f": c1, "c2_f": c2, "f_lo_hz": f_lo, "f_hi_hz": f_hi,
               "aging_margin": margin}
    (out_dir / "design.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    click.echo(f"c1 = {c1:.6g} F, c2 = {c2:.6g} F, range {f_lo:.6g} to {f_hi:.6g} Hz", err=True)
    click.echo(text, nl=False)


@main.command("detect-demo")
@click.argument("scenario")
@click.option("--probe", default=None, help="Probe fed to the comparator (default: sense coil).")
@out_option
@_guarded
def detect_demo(scenario, probe, out):
    """Drive the scenario with gates idle and record the detector only."""
    sc = load_scenario(scenario)
    demo = runner.detect_demo(sc, probe=probe)
    out_dir = _out_dir(out)
    runner.Trace(demo.t, {demo.probe: demo.v}).to_csv(out_dir / f"trace_{demo.probe}.csv")
    demo.edges.to_csv(out_dir / "edges.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", "f_hat_hz"])
    for t, f in demo.estimates:
        w.writerow([f"{t:.9g}", f"{f:.9g}"])
    (out_dir / "estimates.csv").write_text(buf.getvalue())
    if demo.estimates:
        click.echo(f"{len(demo.edges)} edges, final estimate {demo.estimates[-1][1]:.6g} Hz")
    else:
        click.echo(f"{len(demo.edges)} edges, no estimate")


@main.command("compare-topologies")
@click.argument("scenario")
@click.option("--topology", "topologies", multiple=True,
              type=click.Choice([t.value for t in runner.Topology]),
              help="Topology to run (repeatable, default all).")
@click.option("--mistime", default=0.05, show_default=True, type=float,
              help="Back-to-back second turn-on delay, fraction of a period.")
@out_option
@_guarded
def compare_topologies(scenario, topologies, mistime, out):
    """Asymmetry, ZVS and spike metrics for the switch topologies."""
    sc = load_scenario(scenario)
    rows = runner.compare_topologies(sc, list(topologies) or None, mistime=mistime)
    text = runner.topology_csv(rows, _out_dir(out) / "topologies.csv")
    click.echo(text, nl=False)


if __name__ == "__main__":
    main()
