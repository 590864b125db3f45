"""Command line entry point: ``run``, ``validate`` and ``report``."""

from __future__ import annotations

import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import analyze, config, simulate
from .control import validate_gains
from .graph import spectral_report
from .trace_io import read_trace_csv, write_trace_csv

EXIT_FAILED_CRITERIA = 1
EXIT_ERROR = 2


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_scenario(scenario: simulate.Scenario, out_dir, plots: bool = False, backend: str | None = None) -> dict:
    """Sample, integrate, verify and write ``trace.csv``, ``report.json``, ``summary.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = simulate.integrate(scenario, backend=backend)
    report = analyze.verify_theorem(trace, scenario)
    spec = spectral_report(scenario.topology)

    write_json(out_dir / "scenario.json", scenario.raw)
    write_trace_csv(trace, out_dir / "trace.csv")
    write_json(out_dir / "report.json", report.to_dict())
    summary = {
        "name": scenario.raw.get("name", ""),
        "seed": scenario.seed,
        "config_hash": config.config_hash(scenario.raw),
        "backend": trace.metadata["backend"],
        "n_agents": scenario.n,
        "n_samples": len(trace.t),
        "bounds": trace.metadata["bounds"],
        "gain_validation": trace.metadata["gain_validation"],
        "spectral": {
            "laplacian_eigenvalues": spec.eigenvalues,
            "algebraic_connectivity": spec.algebraic_connectivity,
            "min_eig_H": spec.min_eig_H,
            "connected": spec.connected,
        },
        "convergence": report.to_dict(),
        "passed": report.passed and trace.metadata["gain_validation"]["passed"],
    }
    if plots:
        from .plots import emit_plots

        summary["figures"] = [p.name for p in emit_plots(trace, out_dir)]
    write_json(out_dir / "summary.json", summary)
    return summary


def _sweep_worker(raw: dict, out_dir: str, plots: bool, backend: str | None) -> dict:
    scenario = config.scenario_from_dict(raw)
    summary = run_scenario(scenario, out_dir, plots=plots, backend=backend)
    conv = summary["convergence"]
    return {
        "dir": Path(out_dir).name,
        "passed": summary["passed"],
        "gains_passed": summary["gain_validation"]["passed"],
        "eta_theoretical": conv["eta_theoretical"],
        "rate_q_plus_b_tilde": (conv["rate_q_plus_b_tilde"] or {}).get("rate"),
        "anchor_time": conv["anchor_time"],
    }


def _parse_sweep(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise click.BadParameter("expected key=v1,v2,...", param_hint="--sweep")
    key, values = text.split("=", 1)
    vals = [config.parse_value(v) for v in values.split(",") if v.strip()]
    if not vals:
        raise click.BadParameter("sweep needs at least one value", param_hint="--sweep")
    return key.strip(), vals


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Leader-follower spacecraft consensus under relative-position bias."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("scenario_file", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", default="runs/latest", show_default=True, type=click.Path(file_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a dotted config key.")
@click.option("--sweep", default=None, metavar="KEY=V1,V2,...", help="Run once per value of KEY.")
@click.option("--plots", is_flag=True, help="Write SVG figures.")
@click.option("--strict", is_flag=True, help="Exit nonzero when gain validation or any check fails.")
@click.option("--workers", default=min(4, os.cpu_count() or 1), show_default=True, help="Sweep worker processes.")
@click.option("--backend", type=click.Choice(["compiled", "python"]), default=None, help="Force a kernel backend.")
def run(scenario_file, out_dir, overrides, sweep, plots, strict, workers, backend):
    """Simulate SCENARIO_FILE and verify the convergence checks."""
    try:
        raw = config.apply_overrides(config.load_json(scenario_file), overrides)
        if sweep is None:
            scenario = config.scenario_from_dict(raw)
            summary = run_scenario(scenario, out_dir, plots=plots, backend=backend)
            _echo_summary(summary, out_dir)
            results = [summary]
        else:
            key, values = _parse_sweep(sweep)
            jobs = []
            for k, v in enumerate(values):
                variant = config.apply_overrides(raw, [(key, v)])
                config.scenario_from_dict(variant)  # fail fast before spawning workers
                jobs.append((variant, str(Path(out_dir) / f"{k:02d}_{key.split('.')[-1]}={v}")))
            with ProcessPoolExecutor(max_workers=max(1, workers)) as pool:
                futs = [pool.submit(_sweep_worker, variant, d, plots, backend) for variant, d in jobs]
                results = [f.result() for f in futs]
            for v, r in zip(values, results):
                r["value"] = v
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            write_json(Path(out_dir) / "sweep_summary.json", {"key": key, "runs": results})
            for r in results:
                click.echo(f"{r['dir']}: {'PASS' if r['passed'] else 'FAIL'}")
    except (config.ScenarioError, simulate.SimulationDiverged, ArithmeticError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    if strict and not all(r["passed"] for r in results):
        sys.exit(EXIT_FAILED_CRITERIA)


def _echo_summary(summary: dict, out_dir) -> None:
    conv = summary["convergence"]
    for c in conv["checks"]:
        click.echo(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:<26} value={c['value']}")
    gv = summary["gain_validation"]
    click.echo(f"{'PASS' if gv['passed'] else 'FAIL'}  gain_conditions")
    for note in conv["notes"]:
        click.echo(f"note: {note}")
    click.echo(f"wrote {out_dir}")


@main.command()
@click.argument("scenario_file", type=click.Path(dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
def validate(scenario_file, overrides):
    """Parse SCENARIO_FILE and check the gain conditions without simulating."""
    try:
        scenario = config.parse_scenario(scenario_file, overrides)
        ic = simulate.sample_initial_conditions(scenario)
        report = validate_gains(scenario.gains, simulate.agent_bounds(scenario, ic.biases))
        spec = spectral_report(scenario.topology)
    except (config.ScenarioError, ValueError, ArithmeticError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(json.dumps(_jsonable({
        "valid": True,
        "connected": spec.connected,
        "min_eig_H": spec.min_eig_H,
        "gain_validation": report.to_dict(),
    }), indent=2))
    if not report.passed:
        sys.exit(EXIT_FAILED_CRITERIA)


@main.command()
@click.argument("trace_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--scenario", "scenario_file", default=None, type=click.Path(dir_okay=False),
              help="Scenario used for the run (default: scenario.json next to the trace).")
@click.option("--out", "out_file", default=None, type=click.Path(dir_okay=False), help="Write the report JSON here.")
def report(trace_file, scenario_file, out_file):
    """Re-run the convergence checks on an existing TRACE_FILE."""
    scenario_file = scenario_file or str(Path(trace_file).with_name("scenario.json"))
    try:
        scenario = config.parse_scenario(scenario_file)
        ic = simulate.sample_initial_conditions(scenario)
        trace = read_trace_csv(trace_file, true_bias=ic.biases)
        if trace.n != scenario.n:
            raise ValueError(f"trace has {trace.n} agents but scenario has {scenario.n}")
        rep = analyze.verify_theorem(trace, scenario)
    except (config.ScenarioError, ValueError, ArithmeticError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)
    text = json.dumps(_jsonable(rep.to_dict()), indent=2, sort_keys=True)
    if out_file:
        Path(out_file).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


if __name__ == "__main__":
    main()
