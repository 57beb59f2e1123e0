#!/usr/bin/env python3
"""
Main entry point for the switching-environment solver suite.

Each command runs one pipeline:
1. Resolve the run configuration (config file or preset, plus CLI overrides)
2. Run the solver, estimator or analysis the command names
3. Write CSV snapshots, reports and the run manifest

Commands: solve-fpe, simulate-mc, stationary, classify, correlate,
compare, verify.
"""

import argparse
import logging
import sys
import time
from dataclasses import replace
from datetime import datetime
from pathlib import Path

# Add scripts directory to path for imports
sys.path.insert(0, str(Path(__file__).parent))

import numpy as np

from asymptotics import (INCONCLUSIVE, STABLE, SWEEPING, classify, hopf_vstar, kappa_and_vstar, stationary_pair,
                         sweeping_diagnostic)
from config import COMMANDS, RunConfig, load_preset, parse_config
from errors import ConstraintViolation, SwitchingError, VerificationFailure
from flow import IntegratorConfig
from fpe import (MAX_GENERATOR_CELLS_1D, Grid1D, assemble_discrete_generator, l1_distance, solve_correlation,
                 solve_moment, solve_polar_moment)
from generate_outputs import OutputWriter, RunManifest
from transport import mc_mean
from verification import Verifier

TOOL_VERSION = "1.0.0"
COMPARE_TOLERANCE = 0.05

logger = logging.getLogger("main")


def _printer(quiet: bool):
    if quiet:
        return lambda *args, **kwargs: None
    return print


def _step(say, number: int, glyph: str, title: str):
    say(f"\n{glyph} STEP {number}: {title}")
    say("-" * 40)


def _solve_fpe(cfg: RunConfig, writer: OutputWriter, manifest: RunManifest, say) -> bool:
    spec = cfg.spec
    _step(say, 2, "🧮", "FINITE-VOLUME SOLVE")
    if spec.is_polar:
        grid = cfg.polar_grid
        snapshots = solve_polar_moment(spec, grid, cfg.solver)
        say(f"✅ {len(snapshots)} snapshots on a {grid.shape[0]}x{grid.shape[1]} polar grid")
    else:
        grid = cfg.grid
        snapshots = solve_moment(spec, grid, cfg.solver)
        say(f"✅ {len(snapshots)} snapshots on {grid.n_cells} cells")
    manifest.shed_mass["fpe"] = snapshots[-1].shed_mass
    say(f"📊 Final mass {snapshots[-1].mass:.6f}, shed {snapshots[-1].shed_mass:.3e}")

    _step(say, 3, "📝", "WRITING SNAPSHOTS")
    profiles = []
    if "csv" in cfg.formats:
        for snap in snapshots:
            name = f"{spec.name}_fpe_t{snap.t:g}.csv"
            if spec.is_polar:
                writer.write_surface_csv(name, grid.x.centers, grid.y.centers, snap.values)
            else:
                profiles.append(str(writer.write_profile_csv(name, grid.centers, snap.values)))

    if "plot" in cfg.formats and profiles:
        v_star_file = None
        report = classify(spec, grid)
        if report.verdict == STABLE and report.v_star is not None:
            v0, v1 = report.v_star.per_state(grid.centers)
            v_star_file = str(writer.write_profile_csv(f"{spec.name}_vstar.csv", grid.centers, np.vstack([v0, v1])))
        writer.write_plot_script(f"{spec.name}_fpe.gp", profiles, v_star_file, title=spec.name)

    if "generator" in cfg.formats:
        coarse = Grid1D(min(grid.n_cells, MAX_GENERATOR_CELLS_1D), grid.x_lo, grid.x_hi) \
            if not spec.is_polar else None
        if coarse is None:
            say("⚠️  Generator export skipped: defined for interval models")
        else:
            generator = assemble_discrete_generator(spec, coarse, cfg.solver.boundary)
            writer.write_generator(f"{spec.name}_generator_{coarse.n_cells}.txt", generator)
            say(f"✅ Generator {generator.shape[0]}x{generator.shape[1]}, {generator.nnz} nonzeros")
    return True


def _simulate_mc(cfg: RunConfig, writer: OutputWriter, manifest: RunManifest, say) -> bool:
    spec = cfg.spec
    grid = cfg.grid
    integrator = IntegratorConfig(base_step=cfg.mc_base_step)
    _step(say, 2, "🎲", "MONTE CARLO ESTIMATE")
    say(f"Paths: {cfg.n_paths}  Seed: {cfg.master_seed}  Workers: {cfg.workers}")
    for t in cfg.mc_times:
        est = mc_mean(spec, grid, t, cfg.n_paths, cfg.master_seed, integrator, workers=cfg.workers)
        say(f"✅ t={t:g}: mass {est.mass:.4f}, max std err {est.total_std_err.max():.3e}")
        manifest.shed_mass[f"mc_t{t:g}"] = est.shed_mass
        if "csv" in cfg.formats:
            writer.write_profile_csv(f"{spec.name}_mc_t{t:g}.csv", grid.centers, est.values)
            writer.write_profile_csv(f"{spec.name}_mc_stderr_t{t:g}.csv", grid.centers, est.std_err,
                                     total=est.total_std_err, check_mass=False)
    return True


def _stationary(cfg: RunConfig, writer: OutputWriter, manifest: RunManifest, say) -> bool:
    spec = cfg.spec
    _step(say, 2, "📐", "STATIONARY DENSITY")
    if spec.is_polar:
        grid = cfg.polar_grid
        surface = hopf_vstar(spec, grid)
        writer.write_surface_csv(f"{spec.name}_vstar.csv", grid.x.centers, grid.y.centers, surface[None, :, :])
        say("✅ Hopf V* written (uniform in theta)")
        return True

    pair = stationary_pair(spec, grid=cfg.grid)
    kappa, v_star = kappa_and_vstar(pair, strict=True)
    manifest.notes.append(f"kappa = {kappa!r}, support (0, {pair.a!r})")
    say(f"✅ kappa = {kappa:.10g} on (0, {pair.a:g})")
    writer.write_profile_csv(f"{spec.name}_vstar.csv", cfg.grid.centers,
                             np.vstack([pair.f0, pair.f1]) / kappa)
    return True


def _classify(cfg: RunConfig, writer: OutputWriter, manifest: RunManifest, say) -> bool:
    spec = cfg.spec
    _step(say, 2, "🔍", "LARGE-TIME CLASSIFICATION")
    report = classify(spec, None if spec.is_polar else cfg.grid)
    lam = report.lam_exact if report.lam_exact is not None else "n/a"
    say(f"{'✅' if report.verdict != INCONCLUSIVE else '⚠️ '} {report.verdict} (lambda = {lam})")

    sweeping = None
    if cfg.window is not None and not spec.is_polar:
        snapshots = solve_moment(spec, cfg.grid, cfg.solver)
        sweeping = sweeping_diagnostic(snapshots, cfg.grid, cfg.window)
        trend = " > ".join(f"{m:.3f}" for m in sweeping.masses)
        say(f"📉 Window mass {trend}")
        if report.verdict == SWEEPING and not sweeping.decreasing:
            say("⚠️  Window mass is not monotone over the snapshots")
    writer.write_report(f"{spec.name}_report.md", report, sweeping, extra_notes=cfg.notes)
    manifest.notes.append(f"verdict {report.verdict}, lambda {lam}")
    return True


def _correlate(cfg: RunConfig, writer: OutputWriter, manifest: RunManifest, say) -> bool:
    spec = cfg.spec
    grid2d = cfg.grid2d
    _step(say, 2, "🔗", "CORRELATION SOLVE")
    snapshots = solve_correlation(spec, grid2d, cfg.solver)
    manifest.shed_mass["fpe"] = snapshots[-1].shed_mass
    say(f"✅ {len(snapshots)} snapshots on a {grid2d.shape[0]}x{grid2d.shape[1]} grid")
    if "csv" in cfg.formats:
        for snap in snapshots:
            writer.write_surface_csv(f"{spec.name}_corr_t{snap.t:g}.csv", grid2d.x.centers,
                                     grid2d.y.centers, snap.values)
    return True


def _compare(cfg: RunConfig, writer: OutputWriter, manifest: RunManifest, say) -> bool:
    spec = cfg.spec
    grid = cfg.grid
    times = tuple(cfg.mc_times)
    _step(say, 2, "⚖️ ", "MONTE CARLO VS FINITE VOLUMES")
    solver = replace(cfg.solver, t_end=max(times), snapshot_times=times)
    snapshots = {snap.t: snap for snap in solve_moment(spec, grid, solver)}
    integrator = IntegratorConfig(base_step=cfg.mc_base_step)

    rows = []
    for t in times:
        est = mc_mean(spec, grid, t, cfg.n_paths, cfg.master_seed, integrator, workers=cfg.workers)
        snap = snapshots[float(t)]
        distance = l1_distance(est.total, snap.total, grid.dx)
        rows.append({
            "t": t,
            "l1_distance": distance,
            "mc_mean_std_err": float(est.total_std_err.mean()),
            "fpe_shed_mass": snap.shed_mass,
            "mc_shed_mass": est.shed_mass,
        })
        glyph = "✅" if distance <= COMPARE_TOLERANCE else "⚠️ "
        say(f"{glyph} t={t:g}: L1(MC, FPE) = {distance:.4f}")
    writer.write_compare_table(f"{spec.name}_compare.csv", rows)
    manifest.notes.append("L1 distances: " + ", ".join(f"t={r['t']:g} {r['l1_distance']:.4f}" for r in rows))
    return True


def _verify(cfg: RunConfig, writer: OutputWriter, manifest: RunManifest, say) -> bool:
    _step(say, 2, "🧪", "ACCEPTANCE CHECKS")
    verifier = Verifier(cfg.n_paths, cfg.master_seed, cfg.workers, quiet=writer.quiet)
    results = verifier.run_all()
    writer.write_checks("verification.md", results)
    failed = [r["id"] for r in results if not r["passed"]]
    manifest.notes.append(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return not failed


HANDLERS = {
    "solve-fpe": _solve_fpe,
    "simulate-mc": _simulate_mc,
    "stationary": _stationary,
    "classify": _classify,
    "correlate": _correlate,
    "compare": _compare,
    "verify": _verify,
}


def run_command(cmd: str, cfg: RunConfig, quiet: bool = False) -> RunManifest:
    """
    Run one command and write its artifacts.

    Args:
        cmd: One of COMMANDS
        cfg: Resolved run configuration
        quiet: Suppress progress output

    Returns:
        RunManifest listing every written file

    Raises:
        VerificationFailure: verify ran but at least one check failed
    """
    if cmd not in HANDLERS:
        raise ConstraintViolation(f"unknown command '{cmd}' (known: {', '.join(COMMANDS)})")
    say = _printer(quiet)
    say("=" * 60)
    say("SWITCHING ENVIRONMENT SOLVER")
    say("=" * 60)
    say(f"Command: {cmd}")
    say(f"Model: {cfg.spec.name} ({cfg.model_source})")
    say(f"Started: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    say("-" * 60)

    _step(say, 1, "⚙️ ", "CONFIGURATION")
    for note in cfg.notes:
        say(f"⚠️  {note}")
    say(f"✅ Output directory: {cfg.out_dir}")

    writer = OutputWriter(cfg.out_dir, quiet=quiet)
    manifest = RunManifest(
        command=cmd,
        tool_version=TOOL_VERSION,
        master_seed=cfg.master_seed,
        config=dict(cfg.echo, model_source=cfg.model_source),
    )

    started = time.perf_counter()
    ok = HANDLERS[cmd](cfg, writer, manifest, say)
    manifest.timings[cmd] = round(time.perf_counter() - started, 3)
    logger.info("%s finished in %.2fs", cmd, manifest.timings[cmd])

    if "manifest" in cfg.formats or cmd == "verify":
        writer.write_manifest(manifest)

    say("\n" + "=" * 60)
    say(f"{'✅' if ok else '❌'} {cmd.upper()} {'COMPLETE' if ok else 'FAILED'}")
    say("=" * 60)
    say("\n📁 Generated files:")
    for path in writer.files:
        say(f"   - {path}")

    if not ok:
        raise VerificationFailure(f"{cmd}: {manifest.notes[-1]}")
    return manifest


def configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def resolve_config(args) -> RunConfig:
    overrides = {
        "out": args.out,
        "seed": args.seed,
        "paths": args.paths,
        "cells": args.cells,
        "workers": args.workers,
    }
    if args.config:
        if args.preset:
            overrides["preset"] = args.preset
        return parse_config(args.config, args.command, overrides)
    if args.preset:
        return load_preset(args.preset, args.command, overrides)
    raise ConstraintViolation("either --config <path> or --preset <name> is required")


def main():
    """Main entry point."""
    parser = argparse.ArgumentParser(
        description="Switching-environment PDMP solver suite",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Finite-volume snapshots for the transcritical preset
  python scripts/main.py solve-fpe --preset fig1

  # Monte Carlo against finite volumes at the preset's mc.times
  python scripts/main.py compare --preset fig1 --paths 10000 --cells 512

  # Large-time verdict and window-mass trend
  python scripts/main.py classify --preset fig2a

  # Run from a configuration document
  python scripts/main.py solve-fpe --config configs/example.conf --out results/example

  # Full acceptance suite
  python scripts/main.py verify --preset fig1

Presets: fig1 (alias transcritical-fig1), fig2a, fig2b, fig2c, fig3, hopf-rotating
Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 verification failure
        """
    )

    parser.add_argument("command", choices=COMMANDS, help="Command to run")
    parser.add_argument("--config", help="Run configuration document")
    parser.add_argument("--preset", help="Named preset (overrides the model source of --config)")
    parser.add_argument("--out", help="Output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides mc.master_seed)")
    parser.add_argument("--paths", type=int, help="Monte Carlo paths (overrides mc.n_paths)")
    parser.add_argument("--cells", type=int, help="Grid cells (overrides grid.n_cells)")
    parser.add_argument("--workers", type=int, help="Worker processes for Monte Carlo (overrides mc.workers)")
    parser.add_argument("--quiet", action="store_true", help="Only print errors")
    parser.add_argument("--verbose", action="store_true", help="Debug logging from the solvers")

    args = parser.parse_args()
    configure_logging(args.verbose, args.quiet)

    try:
        cfg = resolve_config(args)
        run_command(args.command, cfg, quiet=args.quiet)
    except SwitchingError as e:
        print(f"\n❌ ERROR: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except Exception as e:
        print(f"\n❌ ERROR: {e}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        sys.exit(2)
    sys.exit(0)


if __name__ == "__main__":
    main()
