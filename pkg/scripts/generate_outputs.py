#!/usr/bin/env python3
"""
Write run artifacts: snapshot CSVs, Markdown reports, the run manifest,
gnuplot scripts and discrete generators.

CSV payloads carry no timestamps, so reruns with the same configuration
and seed produce byte-identical files.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate, sparse

from asymptotics import LargeTimeReport, SweepingReport
from errors import NumericalError

FLOAT_FORMAT = "%.17g"
MASS_TOLERANCE = 1e-10


@dataclass
class RunManifest:
    """Everything needed to trace a run back to its inputs."""

    command: str
    tool_version: str
    master_seed: int
    config: Dict[str, str]
    files: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    shed_mass: Dict[str, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)


def _fmt(value: float) -> str:
    return FLOAT_FORMAT % value


class OutputWriter:
    """Writes artifacts of one run into a single directory."""

    def __init__(self, output_dir="results", quiet: bool = False):
        """
        Initialize writer.

        Args:
            output_dir: Directory to save artifacts (created if missing)
            quiet: Do not print one line per written file
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.quiet = quiet
        self.files: List[Path] = []

    def _save(self, name: str, content: str) -> Path:
        path = self.output_dir / name
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(content)
        self.files.append(path)
        if not self.quiet:
            print(f"Generated: {path}")
        return path

    @staticmethod
    def _check_mass(coords: np.ndarray, columns: np.ndarray, label: str):
        """Trapezoid mass of the total column must equal the sum over state columns."""
        states = [integrate.trapezoid(col, coords) for col in columns[:-1]]
        total = integrate.trapezoid(columns[-1], coords)
        if abs(total - math.fsum(states)) > MASS_TOLERANCE * max(1.0, abs(total)):
            raise NumericalError(f"{label}: total column mass {total!r} != state masses {math.fsum(states)!r}")

    def write_profile_csv(self, name: str, x: np.ndarray, values: np.ndarray,
                          total: Optional[np.ndarray] = None, check_mass: bool = True) -> Path:
        """
        One row per node: x,state0,...,total.

        Args:
            name: File name
            x: Node coordinates
            values: Per-state values, shape (K, M)
            total: Total column (defaults to the sum over states)
            check_mass: Re-read the rows and compare column masses; off for
                standard-error tables, whose total is not a sum
        """
        values = np.atleast_2d(values)
        total = values.sum(axis=0) if total is None else total
        header = ",".join(["x"] + [f"state{i}" for i in range(values.shape[0])] + ["total"])
        table = np.vstack([x, values, total])
        rows = [",".join(_fmt(v) for v in table[:, j]) for j in range(table.shape[1])]

        if check_mass:
            parsed = np.array([[float(v) for v in row.split(",")] for row in rows]).T
            self._check_mass(parsed[0], parsed[1:], name)
        return self._save(name, header + "\n" + "\n".join(rows) + "\n")

    def write_surface_csv(self, name: str, x: np.ndarray, y: np.ndarray, values: np.ndarray) -> Path:
        """Row-major x,y,state0,...,total for per-state values of shape (K, Nx, Ny)."""
        n_states = values.shape[0]
        header = ",".join(["x", "y"] + [f"state{i}" for i in range(n_states)] + ["total"])
        total = values.sum(axis=0)
        lines = [header]
        for i, xi in enumerate(x):
            for j, yj in enumerate(y):
                cells = [xi, yj] + [values[k, i, j] for k in range(n_states)] + [total[i, j]]
                lines.append(",".join(_fmt(v) for v in cells))
        return self._save(name, "\n".join(lines) + "\n")

    def write_generator(self, name: str, matrix: sparse.spmatrix) -> Path:
        """Coordinate text format: a 'rows cols nnz' line, then 'row col value' per entry."""
        coo = sparse.coo_matrix(matrix)
        order = np.lexsort((coo.col, coo.row))
        lines = [f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}"]
        lines += [f"{coo.row[k]} {coo.col[k]} {_fmt(coo.data[k])}" for k in order]
        return self._save(name, "\n".join(lines) + "\n")

    def write_compare_table(self, name: str, rows: Sequence[Dict[str, float]]) -> Path:
        """CSV of t, L1 distance and the MC error budget per snapshot time."""
        lines = ["t,l1_distance,mc_mean_std_err,fpe_shed_mass,mc_shed_mass"]
        for row in rows:
            lines.append(",".join(_fmt(row[k]) for k in
                                  ("t", "l1_distance", "mc_mean_std_err", "fpe_shed_mass", "mc_shed_mass")))
        return self._save(name, "\n".join(lines) + "\n")

    def write_plot_script(self, name: str, profiles: Sequence[str], v_star: Optional[str] = None,
                          title: str = "") -> Path:
        """gnuplot script: each profile's total column solid, V* dashed."""
        lines = [
            "set datafile separator ','",
            "set key top right",
            "set xlabel 'x'",
            "set ylabel 'V(t, x)'",
            f"set title '{title}'",
        ]
        plots = [f"'{p}' using 1:(column('total')) with lines dt 1 title '{Path(p).stem}'" for p in profiles]
        if v_star:
            plots.append(f"'{v_star}' using 1:(column('total')) with lines dt 2 lw 2 title 'V*'")
        lines.append("plot " + ", \\\n     ".join(plots))
        return self._save(name, "\n".join(lines) + "\n")

    def write_report(self, name: str, report: LargeTimeReport,
                     sweeping: Optional[SweepingReport] = None, extra_notes: Sequence[str] = ()) -> Path:
        """LargeTimeReport as a Markdown document."""
        kappa = "inf" if math.isinf(report.kappa) else f"{report.kappa:.12g}"
        content = f"""# Large-time report: {report.name}

| Quantity | Value |
|----------|-------|
| verdict | **{report.verdict}** |
| lambda | {report.lam_exact if report.lam_exact is not None else 'n/a'} ({report.lam:.6g}) |
| kappa | {kappa} |
| V* | {'available' if report.v_star is not None else 'absent'} |
"""
        if sweeping is not None:
            content += f"\n## Mass in window [{sweeping.window[0]:g}, {sweeping.window[1]:g}]\n\n"
            content += "| t | mass |\n|---|------|\n"
            for t, m in zip(sweeping.times, sweeping.masses):
                content += f"| {t:g} | {m:.6f} |\n"
            content += f"\nMonotone decay: {'yes' if sweeping.decreasing else 'no'}\n"

        notes = list(report.notes) + list(extra_notes)
        if notes:
            content += "\n## Notes\n\n"
            for note in notes:
                content += f"- {note}\n"
        return self._save(name, content)

    def write_checks(self, name: str, checks: Sequence[Dict[str, str]]) -> Path:
        """Markdown table of verification outcomes."""
        content = "# Verification\n\n| # | Check | Result | Detail |\n|---|-------|--------|--------|\n"
        for check in checks:
            status = "PASS" if check["passed"] else "FAIL"
            content += f"| {check['id']} | {check['name']} | {status} | {check['detail']} |\n"
        return self._save(name, content)

    def write_manifest(self, manifest: RunManifest, name: str = "manifest.json") -> Path:
        """JSON manifest; it lists every file written before it and itself."""
        path = self.output_dir / name
        manifest.files = sorted(str(p) for p in set(self.files + [path]))
        return self._save(name, json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
