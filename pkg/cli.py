#!/usr/bin/env python3
"""
CLI interface for bdglab
"""

import json
import os
from typing import List, Optional

import numpy as np
import pandas as pd
import typer

# Load environment variables FIRST, before any other imports
from dotenv import load_dotenv
load_dotenv()

from bdglab.bilinear import SymBilinearForm
from bdglab.checks import CHECKS, run_checks
from bdglab.errors import BdgLabError
from bdglab.experiments import parse_config, run_experiment, simulate_ensemble, umd_probe
from bdglab.gaussian import gamma_psd
from bdglab.norms import parse_norm_label
from bdglab.parallel import replication_rng, stream_id
from bdglab.quadvar import covariation_process
from bdglab.reports import (
    dump_covariation_csv,
    dump_paths_csv,
    load_config,
    output_dir_for,
    save_frame,
    save_report,
)
from bdglab.settings import configure_logging, ensure_dir, get_settings

app = typer.Typer(help="bdglab: BDG inequalities in finite dimension")


def _csv_list(value: str, cast=str) -> List:
    return [cast(v.strip()) for v in value.split(",") if v.strip()]


@app.callback()
def main(log_level: Optional[str] = typer.Option(None, "--log-level", help="Override BDGLAB_LOG_LEVEL")):
    configure_logging(log_level)


@app.command()
def verify(
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed (default BDGLAB_MASTER_SEED)"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Worker processes (default BDGLAB_WORKERS)"),
    quick: bool = typer.Option(False, "--quick", help="Small sample sizes (seconds instead of minutes)"),
    only: str = typer.Option("", "--only", help="Comma-separated check ids"),
    report: str = typer.Option("", "--report", help="Write a JSON summary to this file"),
):
    """Run the property suite; exits 1 if any check fails"""
    seed = get_settings().master_seed if seed is None else seed
    typer.echo(f"🧪 Running {'quick ' if quick else ''}property suite (seed {seed})...")
    try:
        results = run_checks(seed, workers=workers, quick=quick, only=_csv_list(only) or None)
    except BdgLabError as e:
        typer.echo(f"❌ {e}", err=True)
        raise typer.Exit(1)

    for r in results:
        mark = "✅" if r.passed else "❌"
        typer.echo(f"{mark} {r.id}: {r.detail} ({r.wall_ms / 1000:.1f}s)")

    if report:
        parent = os.path.dirname(report)
        if parent:
            ensure_dir(parent)
        with open(report, "w") as f:
            json.dump({"seed": seed, "quick": quick, "checks": [r.model_dump() for r in results]}, f, indent=2)
        typer.echo(f"📄 Summary written to {report}")

    failed = [r.id for r in results if not r.passed]
    if failed:
        typer.echo(f"❌ {len(failed)} of {len(results)} checks failed: {', '.join(failed)}", err=True)
        raise typer.Exit(1)
    typer.echo(f"🎉 All {len(results)} checks passed!")


@app.command("list-checks")
def list_checks():
    """List the registered property checks"""
    for c in CHECKS:
        typer.echo(f"  {c.id:<22} {c.title}")


@app.command()
def run(
    config: str = typer.Argument(..., help="Experiment config JSON"),
    out: str = typer.Option("", "--out", "-o", help="Output directory (default: config output or BDGLAB_OUTPUT_DIR)"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Worker processes"),
):
    """Run one experiment and write <name>.json and <name>.csv"""
    try:
        cfg = load_config(config)
        typer.echo(f"🔬 Running {cfg.experiment} '{cfg.name}' ({cfg.norm.label}, d={cfg.dim}, {cfg.family})...")
        report = run_experiment(cfg, workers)
        json_path, csv_path = save_report(report, output_dir_for(cfg, out or None))
    except BdgLabError as e:
        typer.echo(f"❌ {e}", err=True)
        raise typer.Exit(1)

    for row in report.rows:
        flag = " ⚠️  degenerate" if row.degenerate else ""
        typer.echo(
            f"   p={row.p:g} d={row.d} {row.norm}: lhs={row.lhs:.5g} rhs={row.rhs:.5g} "
            f"ratio={row.ratio:.4f} ± {row.ratio_stderr:.2g}{flag}"
        )
    typer.echo(f"✅ Report {report.run_id}: {json_path}, {csv_path}")


@app.command("probe-umd")
def probe_umd(
    p: float = typer.Option(2.0, "--p", help="Moment exponent (>= 1)"),
    depth: int = typer.Option(8, "--depth", help="Tree depth (<= 14)"),
    dim: int = typer.Option(2, "--dim", help="Dimension"),
    norm: str = typer.Option("lp1", "--norm", help="Norm label: lp1, lp2, lpinf, lp<p>"),
    budget: int = typer.Option(2000, "--budget", help="Objective evaluations per dimension"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed (default BDGLAB_MASTER_SEED)"),
    ladder: bool = typer.Option(False, "--ladder", help="Probe d = 1, 2, 4, ... up to --dim with warm starts"),
):
    """Lower bound for the UMD constant by alternating ascent on exhaustive trees"""
    seed = get_settings().master_seed if seed is None else seed
    dims = [dim]
    if ladder:
        dims = sorted({2**i for i in range(dim.bit_length()) if 2**i <= dim} | {dim})
    warm = None
    try:
        for d in dims:
            rng = replication_rng(seed, stream_id(f"probe-umd/{norm}/{p}/{depth}"), d)
            warm = umd_probe(p, depth, d, parse_norm_label(norm, d), budget, rng, warm_start=warm)
            note = " (budget exhausted)" if warm.budget_exhausted else ""
            typer.echo(
                f"📈 {warm.norm} d={d} p={p:g} depth={depth}: beta >= {warm.value:.6f}"
                f" [{warm.evaluations} evaluations{note}; Hilbert value {warm.hilbert_constant:g}]"
            )
    except (BdgLabError, ValueError) as e:
        typer.echo(f"❌ {e}", err=True)
        raise typer.Exit(1)


@app.command()
def sweep(
    config: str = typer.Argument(..., help="Base experiment config JSON"),
    dims: str = typer.Option("1,2,4", "--dims", help="Comma-separated dimensions"),
    ps: str = typer.Option("1,2,4", "--ps", help="Comma-separated exponents"),
    norms: str = typer.Option("lp2,lp1,lpinf", "--norms", help="Comma-separated norm labels"),
    out: str = typer.Option("", "--out", "-o", help="Output directory"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Worker processes"),
):
    """Cartesian product of bdg_ratio runs over dims x norms (all exponents per run) into one CSV"""
    try:
        base = load_config(config)
        frames = []
        for label in _csv_list(norms):
            for d in _csv_list(dims, int):
                data = base.model_dump(mode="json")
                data.update(
                    name=f"{base.name}-{label}-d{d}",
                    experiment="bdg_ratio",
                    norm=parse_norm_label(label, d).model_dump(mode="json"),
                    p_list=_csv_list(ps, float),
                )
                cfg = parse_config(data)
                typer.echo(f"🔬 {cfg.name}...")
                frames.append(run_experiment(cfg, workers).to_frame())
        path = save_frame(pd.concat(frames, ignore_index=True),
                          os.path.join(output_dir_for(base, out or None), f"{base.name}-sweep.csv"))
    except (BdgLabError, ValueError) as e:
        typer.echo(f"❌ {e}", err=True)
        raise typer.Exit(1)
    typer.echo(f"✅ {len(frames)} runs written to {path}")


@app.command()
def simulate(
    config: str = typer.Argument(..., help="Experiment config JSON"),
    count: Optional[int] = typer.Option(None, "--count", "-n", help="Paths to simulate (default: config replications)"),
    out: str = typer.Option("", "--out", "-o", help="Output directory"),
):
    """Dump sample paths and their running covariation matrices to CSV"""
    try:
        cfg = load_config(config)
        paths = simulate_ensemble(cfg, count)
        out_dir = output_dir_for(cfg, out or None)
        paths_csv = dump_paths_csv(paths, os.path.join(out_dir, f"{cfg.name}-paths.csv"))
        cov_csv = dump_covariation_csv([covariation_process(p) for p in paths],
                                       os.path.join(out_dir, f"{cfg.name}-covariation.csv"))
    except (BdgLabError, ValueError) as e:
        typer.echo(f"❌ {e}", err=True)
        raise typer.Exit(1)
    typer.echo(f"✅ {len(paths)} {paths[0].family} paths written to {paths_csv}, {cov_csv}")


@app.command()
def gamma(
    norm: str = typer.Option("lpinf", "--norm", help="Norm label"),
    dim: int = typer.Option(2, "--dim", help="Dimension"),
    samples: int = typer.Option(1_000_000, "--samples", help="Monte Carlo samples"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed (default BDGLAB_MASTER_SEED)"),
    workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Worker processes"),
):
    """Gaussian characteristic of the identity form (closed-form anchor)"""
    seed = get_settings().master_seed if seed is None else seed
    try:
        spec = parse_norm_label(norm, dim)
        rng = np.random.default_rng([seed, stream_id("cli/gamma")])
        est = gamma_psd(SymBilinearForm.identity(dim), spec, samples, rng, workers=workers)
    except (BdgLabError, ValueError) as e:
        typer.echo(f"❌ {e}", err=True)
        raise typer.Exit(1)
    kind = "exact" if est.exact else f"± {est.stderr:.2e} ({est.samples} samples)"
    typer.echo(f"γ(I_{dim}) under {spec.label} = {est.value:.6f} {kind}")


if __name__ == "__main__":
    app()
