#!/usr/bin/env python3
"""
End-to-end cross-checks behind the `verify` command.

Each check runs the shipped presets through two independent routes
(Monte Carlo against finite volumes, quadrature against closed forms,
2D against 1D) and records PASS/FAIL with the measured numbers.
"""

import logging
import math
from typing import Callable, Dict, List

import numpy as np

from asymptotics import (STABLE, SWEEPING, classify, kappa_and_vstar, pitchfork_density,
                         stationary_pair, sweeping_diagnostic, transcritical_density)
from chain import occupation_probabilities
from config import load_preset
from errors import SwitchingError
from flow import IntegratorConfig, advance
from fpe import (Grid1D, Grid2D, SolverConfig, advection_blocks, advection_matrix, kronecker_sum,
                 l1_distance, moment_initial, solve_correlation, solve_moment, solve_polar_moment)
from model import SwitchingChain, VectorField, build_model
from transport import mc_correlation, mc_mean

logger = logging.getLogger(__name__)


def _pitchfork_closed_form(x0: float, t: float) -> float:
    return x0 * math.exp(t) / math.sqrt(1.0 + x0 * x0 * (math.exp(2.0 * t) - 1.0))


class Verifier:
    """Runs the acceptance checks on the shipped presets."""

    def __init__(self, n_paths: int = 10_000, master_seed: int = 20240101, workers: int = 1,
                 quiet: bool = False):
        """
        Initialize verifier.

        Args:
            n_paths: Paths for the Monte Carlo checks
            master_seed: Seed shared by every Monte Carlo check
            workers: Worker processes for Monte Carlo estimators
            quiet: Suppress per-check progress lines
        """
        self.n_paths = n_paths
        self.master_seed = master_seed
        self.workers = workers
        self.quiet = quiet
        self.results: List[Dict] = []
        self._fig1 = load_preset("fig1").spec

    def _record(self, check_id: int, name: str, passed: bool, detail: str):
        self.results.append({"id": check_id, "name": name, "passed": bool(passed), "detail": detail})
        if not self.quiet:
            print(f"  {'✅' if passed else '❌'} [{check_id}] {name}: {detail}")

    def _run(self, check_id: int, name: str, check: Callable[[], tuple]):
        try:
            passed, detail = check()
        except SwitchingError as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        self._record(check_id, name, passed, detail)

    def check_moment_equivalence(self):
        grid = Grid1D(512, 1e-4, 1.0)
        times = (0.25, 1.0, 2.5)
        snaps = solve_moment(self._fig1, grid, SolverConfig(t_end=2.5, snapshot_times=times))
        distances = []
        for snap in snaps:
            est = mc_mean(self._fig1, grid, snap.t, self.n_paths, self.master_seed, workers=self.workers)
            distances.append(l1_distance(est.total, snap.total, grid.dx))
        worst = max(distances)
        return worst <= 0.05, "L1(MC, FPE) = " + ", ".join(f"{d:.4f}" for d in distances)

    def check_lambda(self):
        expected = {"fig1": ("7/8", STABLE), "fig2a": ("-1/4", SWEEPING), "fig3": ("1/2", STABLE)}
        parts, ok = [], True
        for name, (lam, verdict) in expected.items():
            report = classify(load_preset(name).spec)
            ok &= str(report.lam_exact) == lam and report.verdict == verdict
            parts.append(f"{name}: {report.lam_exact} {report.verdict}")
        fig2c = classify(load_preset("fig2c").spec)
        ok &= str(fig2c.lam_exact) == "1/2"
        parts.append(f"fig2c: {fig2c.lam_exact} (flagged)")
        return ok, "; ".join(parts)

    def check_closed_forms(self):
        details, ok = [], True
        for name, closed in (("fig1", transcritical_density), ("fig3", pitchfork_density)):
            spec = load_preset(name).spec
            grid = Grid1D(1024, 1e-4, 1.0)
            pair = stationary_pair(spec, grid=grid)
            centers = grid.centers
            mask = (centers >= 0.05 * pair.a) & (centers <= 0.95 * pair.a)
            exact = closed(spec, centers)
            # one constant normalises both states
            scale = pair.f0[mask].sum() / exact[0][mask].sum()
            worst = 0.0
            for sampled, reference in zip((pair.f0, pair.f1), exact):
                rel = np.abs(sampled[mask] / (scale * reference[mask]) - 1.0)
                worst = max(worst, float(np.max(rel)))
            kappa, v_star = kappa_and_vstar(pair)
            mass = v_star.mass_in(0.0, pair.a) if v_star is not None else math.nan
            ok &= worst <= 1e-6 and math.isfinite(kappa) and abs(mass - 1.0) <= 1e-6
            details.append(f"{name}: rel err {worst:.2e}, kappa {kappa:.6g}, int V* {mass:.9f}")
        return ok, "; ".join(details)

    def check_convergence(self):
        details, ok = [], True
        for name, t, bound in (("fig1", 2.5, 0.05), ("fig3", 10.0, 0.1)):
            spec = load_preset(name).spec
            grid = Grid1D(1024, 1e-4, 1.0)
            snap = solve_moment(spec, grid, SolverConfig(t_end=t))[-1]
            report = classify(spec, grid)
            if report.v_star is None:
                ok = False
                details.append(f"{name}: no V* ({report.verdict})")
                continue
            d = l1_distance(snap.total, report.v_star.sample(grid), grid.dx)
            ok &= d <= bound
            details.append(f"{name} t={t:g}: L1 {d:.4f} (<= {bound})")
        return ok, "; ".join(details)

    def check_sweeping(self):
        details, ok = [], True
        for name in ("fig2a", "fig2b"):
            cfg = load_preset(name)
            snaps = solve_moment(cfg.spec, cfg.grid, cfg.solver)
            sweep = sweeping_diagnostic(snaps, cfg.grid, cfg.window)
            ok &= sweep.decreasing and sweep.final_mass < 0.2
            details.append(f"{name}: " + " > ".join(f"{m:.3f}" for m in sweep.masses))
        return ok, "; ".join(details)

    def check_mass_identities(self):
        frozen = build_model([VectorField("polynomial", {"coeffs": [0.0]})] * 2,
                             SwitchingChain.two_state(1.0, 1.0),
                             {"x_lo": 0.0, "x_hi": 1.0, "g_center": 0.5, "g_width": 0.3}, name="frozen")
        grid = Grid1D(128, 0.0, 1.0)
        snaps = solve_moment(frozen, grid, SolverConfig(t_end=2.0, snapshot_times=(0.5, 1.0)))
        initial_mass = float(moment_initial(frozen, grid).sum() * grid.dx)
        worst = 0.0
        for snap in snaps:
            exact = occupation_probabilities(frozen.chain, 0, snap.t).probs * initial_mass
            worst = max(worst, float(np.max(np.abs(snap.state_mass - exact))))

        grid = Grid1D(512, 1e-4, 1.0)
        est = mc_mean(self._fig1, grid, 1.0, self.n_paths, self.master_seed, workers=self.workers)
        probs = occupation_probabilities(self._fig1.chain, 0, 1.0).probs
        gap = np.abs(est.state_mass - probs)
        # mass shed through the grid boundary is not an estimator error
        within = bool(np.all(gap <= 4.0 * est.state_mass_std_err + est.shed_mass))
        ok = worst <= 1e-8 and within
        return ok, (f"b=0 state-mass error {worst:.2e}; MC state masses {np.round(est.state_mass, 4)} "
                    f"vs P(i(1)=i) {np.round(probs, 4)}, 4 std err {np.round(4 * est.state_mass_std_err, 4)}")

    def check_correlations(self):
        spec = self._fig1
        axis = Grid1D(64, 1e-4, 1.0)
        grid2d = Grid2D.square(axis)
        corr = solve_correlation(spec, grid2d, SolverConfig(t_end=0.5))[-1]
        moment = solve_moment(spec, axis, SolverConfig(t_end=0.5, cfl=0.45))[-1]
        marginal = corr.values.sum(axis=2) * axis.dx
        d = l1_distance(marginal, moment.values, axis.dx)

        est = mc_correlation(spec, grid2d, 0.5, min(self.n_paths, 2000), self.master_seed, workers=self.workers)
        symmetric = all(np.array_equal(v, v.T) for v in est.values)

        blocks = advection_blocks(spec, grid2d)
        worst = 0.0
        for f, block in zip(spec.fields, blocks):
            a1 = advection_matrix(f(axis.edges), axis)
            diff = block - kronecker_sum(a1, a1)
            worst = max(worst, float(np.max(np.abs(diff.data), initial=0.0)))
        ok = d <= 0.05 and symmetric and worst == 0.0
        return ok, f"marginal L1 {d:.4f}; MC symmetric {symmetric}; Kronecker max-abs {worst:g}"

    def check_hygiene(self):
        negatives = []

        def watch(label):
            def monitor(t, values):
                if values.min() < 0.0:
                    negatives.append((label, t))
            return monitor

        for name in ("fig1", "fig2a", "fig2b", "fig3"):
            cfg = load_preset(name)
            solve_moment(cfg.spec, cfg.grid, cfg.solver, monitor=watch(name))
        hopf = load_preset("hopf-rotating")
        solve_polar_moment(hopf.spec, hopf.polar_grid, SolverConfig(t_end=1.0), monitor=watch("hopf"))

        drift = []
        last = {}

        def conserve(t, values):
            mass = values.sum()
            if "m" in last:
                drift.append(abs(mass - last["m"]) / max(abs(last["m"]), 1e-300))
            last["m"] = mass

        grid = Grid1D(256, 1e-4, 1.0)
        solve_moment(self._fig1, grid, SolverConfig(t_end=1.0, boundary=("reflecting", "reflecting")),
                     monitor=conserve)
        max_drift = max(drift) if drift else 0.0

        f = VectorField("pitchfork", {"alpha": 1.0})
        exact = _pitchfork_closed_form(0.5, 2.0)
        e1 = abs(advance(f, 0.5, 2.0, IntegratorConfig(base_step=0.25)).endpoint - exact)
        e2 = abs(advance(f, 0.5, 2.0, IntegratorConfig(base_step=0.125)).endpoint - exact)
        order_ratio = e1 / e2 if e2 > 0 else math.inf

        h = 1e-5
        res = advance(f, 0.5, 2.0)
        fd = (advance(f, 0.5 + h, 2.0).endpoint - advance(f, 0.5 - h, 2.0).endpoint) / (2 * h)
        jac_err = abs(math.exp(res.log_jacobian) - fd)

        ok = not negatives and max_drift <= 1e-12 and 10.0 <= order_ratio <= 22.0 and jac_err <= 1e-5
        return ok, (f"negative cells {len(negatives)}; reflecting mass drift {max_drift:.1e}; "
                    f"RK4 ratio {order_ratio:.1f}; Jacobian vs FD {jac_err:.1e}")

    def check_determinism(self):
        grid = Grid1D(128, 1e-4, 1.0)
        n = min(self.n_paths, 1024)
        serial = mc_mean(self._fig1, grid, 1.0, n, self.master_seed, workers=1)
        parallel = mc_mean(self._fig1, grid, 1.0, n, self.master_seed, workers=max(2, self.workers))
        same = (np.array_equal(serial.values, parallel.values)
                and np.array_equal(serial.std_err, parallel.std_err))
        return same, f"{n} paths, workers 1 vs {max(2, self.workers)}: {'identical' if same else 'differ'}"

    def run_all(self) -> List[Dict]:
        """Run every check in order and return the outcome records."""
        checks = [
            (1, "MC vs FPE moments (fig1)", self.check_moment_equivalence),
            (2, "lambda classification", self.check_lambda),
            (3, "stationary closed forms", self.check_closed_forms),
            (4, "convergence to V*", self.check_convergence),
            (5, "sweeping (fig2a, fig2b)", self.check_sweeping),
            (6, "chain / mass identities", self.check_mass_identities),
            (7, "correlations", self.check_correlations),
            (8, "numerics hygiene", self.check_hygiene),
            (9, "determinism", self.check_determinism),
        ]
        for check_id, name, check in checks:
            logger.info("verify: running check %d (%s)", check_id, name)
            self._run(check_id, name, check)
        return self.results

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r["passed"] for r in self.results)
