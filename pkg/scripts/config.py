#!/usr/bin/env python3
"""
Run configuration: document parsing, named presets and CLI overrides.

A configuration document holds one `section.key = value` assignment per
line; blank lines and `#` comments are ignored. Sections are model, grid,
solver, mc and output. The model comes from exactly one source:

    model.preset = fig1                       # named parameter set
    model.builtin = transcritical             # family + parameter keys
    model.field0 = pitchfork alpha=-0.5       # explicit fields and
    model.q = 0 4 ; 2 0                       # off-diagonal rates
"""

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from errors import ConstraintViolation, ParseError, SwitchingError, UnknownKey
from fpe import Grid1D, Grid2D, SolverConfig
from model import ModelSpec, SwitchingChain, VectorField, build_builtin, build_model

COMMANDS = ("solve-fpe", "simulate-mc", "stationary", "classify", "correlate", "compare", "verify")
MC_COMMANDS = ("simulate-mc", "compare", "verify")
OUTPUT_FORMATS = ("csv", "plot", "report", "manifest", "generator")

GOODWIN_X_HI = 1.5 * (2.0 + math.sqrt(3.0))

MODEL_FLOATS = {
    "q0", "q1", "beta0", "beta1", "c", "mu", "gamma0", "gamma1", "alpha0", "alpha1",
    "mu0", "mu1", "omega0", "omega1", "b", "x_lo", "x_hi", "g_center", "g_width",
    "g_mean", "g_sd", "theta_mean", "theta_sd",
}
MODEL_INTS = {"n", "initial_state"}
MODEL_LISTS = {"initial_weights", "g_nodes", "g_values"}
MODEL_WORDS = {"preset", "builtin", "name", "g_kind", "q"}

SCHEMA = {
    "grid": {"n_cells": int, "x_lo": float, "x_hi": float, "n_cells_2d": int, "n_theta": int, "n_r": int},
    "solver": {"cfl": float, "t_end": float, "snapshot_times": list, "boundary": "words",
               "splitting": str, "window": list},
    "mc": {"n_paths": int, "master_seed": int, "base_step": float, "workers": int, "times": list},
    "output": {"directory": str, "formats": "words"},
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "fig1": {
        "model": {"builtin": "transcritical", "q0": 5, "q1": 3, "beta0": 1, "beta1": 4, "c": 2, "mu": 2,
                  "x_lo": 1e-4, "x_hi": 1.0, "g_center": 0.5, "g_width": 0.4, "name": "fig1"},
        "solver": {"t_end": 2.5, "snapshot_times": [0.25, 0.5, 0.7, 1.0, 2.5]},
        "mc": {"times": [0.25, 1.0, 2.5]},
    },
    "fig2a": {
        "model": {"builtin": "transcritical", "q0": 2, "q1": 6, "beta0": 1, "beta1": 4, "c": 2, "mu": 2,
                  "x_lo": 1e-4, "x_hi": 1.0, "g_center": 0.3, "g_width": 0.2, "name": "fig2a"},
        "solver": {"t_end": 5.0, "snapshot_times": [0.25, 1.0, 5.0], "window": [0.1, 0.9]},
        "mc": {"times": [1.0]},
    },
    "fig2b": {
        "model": {"builtin": "goodwin", "q0": 6, "q1": 2, "gamma0": 2, "gamma1": 0.25, "n": 2,
                  "x_lo": 1e-4, "x_hi": GOODWIN_X_HI, "g_center": 0.35, "g_width": 0.2, "name": "fig2b"},
        "solver": {"t_end": 5.0, "snapshot_times": [0.25, 1.0, 5.0], "window": [0.1, 0.9 * GOODWIN_X_HI]},
        "mc": {"times": [1.0]},
    },
    "fig2c": {
        "model": {"builtin": "pitchfork", "q0": 4, "q1": 2, "alpha0": -0.5, "alpha1": 1,
                  "x_lo": 1e-4, "x_hi": 1.0, "name": "fig2c"},
        "solver": {"t_end": 5.0, "snapshot_times": [0.25, 1.0, 5.0], "window": [0.1, 0.9]},
        "mc": {"times": [1.0]},
        "notes": ["fig2c repeats the fig3 parameters, for which lambda = 1/2 > 0, although it is "
                  "grouped with the zero-mean cases; the computed lambda is reported as is"],
    },
    "fig3": {
        "model": {"builtin": "pitchfork", "q0": 4, "q1": 2, "alpha0": -0.5, "alpha1": 1,
                  "x_lo": 1e-4, "x_hi": 1.0, "name": "fig3"},
        "solver": {"t_end": 10.0, "snapshot_times": [0.25, 0.7, 2.5, 5.0, 10.0]},
        "mc": {"times": [0.7, 2.5]},
    },
    "hopf-rotating": {
        "model": {"builtin": "hopf", "q0": 4, "q1": 2, "mu0": -0.5, "mu1": 1, "omega0": 1, "omega1": 1,
                  "x_lo": 1e-4, "x_hi": 1.0, "name": "hopf-rotating"},
        "grid": {"n_theta": 256, "n_r": 128},
        "solver": {"t_end": 5.0, "snapshot_times": [1.0, 2.5, 5.0]},
    },
}
PRESET_ALIASES = {"transcritical-fig1": "fig1"}


@dataclass
class RunConfig:
    """Resolved configuration for one command."""

    spec: ModelSpec
    model_source: str
    grid: Grid1D
    solver: SolverConfig
    n_cells_2d: int = 64
    polar_grid: Optional[Grid2D] = None
    window: Optional[Tuple[float, float]] = None
    n_paths: int = 10_000
    master_seed: int = 20240101
    mc_base_step: float = 0.02
    mc_times: Tuple[float, ...] = ()
    workers: int = 1
    out_dir: Path = Path("results")
    formats: Tuple[str, ...] = ("csv", "plot", "manifest")
    notes: List[str] = field(default_factory=list)
    echo: Dict[str, str] = field(default_factory=dict)

    @property
    def grid2d(self) -> Grid2D:
        return Grid2D.square(Grid1D(self.n_cells_2d, self.grid.x_lo, self.grid.x_hi))


def resolve_preset(name: str) -> str:
    key = PRESET_ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConstraintViolation(f"Unknown preset '{name}' (known: {', '.join(sorted(PRESETS))})")
    return key


def _split_list(text: str) -> List[str]:
    return [t for t in re.split(r"[,\s]+", text.strip()) if t]


def _convert(value: str, kind, key: str, line: Optional[int]):
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind is list:
            return [float(v) for v in _split_list(value)]
        if kind == "words":
            return _split_list(value)
        return value.strip()
    except ValueError:
        raise ParseError(f"{key}: cannot read '{value}'", line) from None


def _model_kind(key: str):
    if key in MODEL_FLOATS:
        return float
    if key in MODEL_INTS:
        return int
    if key in MODEL_LISTS:
        return list
    if key in MODEL_WORDS or re.fullmatch(r"field\d+", key):
        return str
    return None


def read_document(text: str) -> Dict[str, Tuple[Any, int]]:
    """
    Parse a configuration document into {section.key: (value, line)}.

    Raises:
        ParseError: empty document, malformed or duplicate assignment
        UnknownKey: key outside the schema
    """
    entries = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'section.key = value', got '{line}'", number)
        name, value = (part.strip() for part in line.split("=", 1))
        if "." not in name:
            raise ParseError(f"key '{name}' has no section", number)
        section, key = name.split(".", 1)
        if section == "model":
            kind = _model_kind(key)
        else:
            kind = SCHEMA.get(section, {}).get(key)
        if kind is None:
            raise UnknownKey(f"unknown key '{name}'", number)
        if name in entries:
            raise ParseError(f"duplicate key '{name}'", number)
        entries[name] = (_convert(value, kind, name, number), number)
    if not entries:
        raise ParseError("configuration document has no assignments")
    return entries


def _parse_field(text: str, line: Optional[int]) -> VectorField:
    """'family key=value ...'; polynomial coefficients are comma separated."""
    parts = text.split()
    if not parts:
        raise ParseError("empty field definition", line)
    params = {}
    for item in parts[1:]:
        if "=" not in item:
            raise ParseError(f"field parameter '{item}' is not key=value", line)
        key, value = item.split("=", 1)
        try:
            if key == "coeffs":
                params[key] = [float(v) for v in value.split(",") if v]
            elif key == "n":
                params[key] = int(value)
            else:
                params[key] = float(value)
        except ValueError:
            raise ParseError(f"field parameter '{item}' is not numeric", line) from None
    return VectorField(parts[0], params)


def _parse_rates(text: str, line: Optional[int]) -> SwitchingChain:
    try:
        rows = [[float(v) for v in _split_list(row)] for row in text.split(";")]
    except ValueError:
        raise ParseError(f"model.q: cannot read '{text}'", line) from None
    if any(len(row) != len(rows) for row in rows):
        raise ParseError("model.q must be a square matrix of rates", line)
    return SwitchingChain.from_rates(rows)


def _merge(base: Dict[str, Any], entries: Dict[str, Tuple[Any, int]]) -> Dict[str, Tuple[Any, Optional[int]]]:
    merged = {}
    for section, values in base.items():
        if section == "notes":
            continue
        for key, value in values.items():
            merged[f"{section}.{key}"] = (value, None)
    merged.update(entries)
    return merged


def _build_spec(model: Dict[str, Tuple[Any, Optional[int]]]) -> Tuple[ModelSpec, str]:
    fields = sorted((k for k in model if re.fullmatch(r"field\d+", k)), key=lambda k: int(k[5:]))
    params = {k: v for k, (v, _) in model.items() if k not in ("builtin", "preset", "q") and k not in fields}
    try:
        if "builtin" in model:
            name = model["builtin"][0]
            return build_builtin(name, params), f"builtin:{name}"
        if not fields or "q" not in model:
            raise ConstraintViolation("explicit models need model.field<k> lines and model.q")
        vector_fields = [_parse_field(model[k][0], model[k][1]) for k in fields]
        chain = _parse_rates(model["q"][0], model["q"][1])
        return build_model(vector_fields, chain, params, name=str(params.get("name", "custom"))), "explicit"
    except SwitchingError as exc:
        if isinstance(exc, ParseError):
            raise
        raise type(exc)(f"model: {exc}") from None


def _check_sources(entries: Dict[str, Tuple[Any, int]]):
    sources = [k for k in ("model.preset", "model.builtin") if k in entries]
    if any(re.fullmatch(r"model\.field\d+", k) for k in entries):
        sources.append("model.field<k>")
    if len(sources) != 1:
        found = ", ".join(sources) if sources else "none"
        raise ConstraintViolation(f"exactly one model source is required (preset, builtin or fields); found {found}")


def build_run_config(entries: Dict[str, Tuple[Any, int]], command: Optional[str] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve parsed entries and CLI overrides into a RunConfig.

    Args:
        entries: Output of read_document (may be empty when a preset override is given)
        command: Command the configuration is for (enables command checks)
        overrides: preset, out, seed, paths, cells, workers

    Returns:
        RunConfig with defaults filled in
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    entries = dict(entries)
    if "preset" in overrides:
        entries = {k: v for k, v in entries.items()
                   if not (k in ("model.preset", "model.builtin") or re.fullmatch(r"model\.field\d+", k))}
        entries["model.preset"] = (overrides["preset"], None)

    # a builtin naming a preset is the preset
    builtin = entries.get("model.builtin")
    if builtin and resolve_preset_or_none(builtin[0]):
        entries.pop("model.builtin")
        entries["model.preset"] = builtin
    _check_sources(entries)

    notes = []
    source_label = None
    if "model.preset" in entries:
        preset_name = resolve_preset(entries.pop("model.preset")[0])
        preset = PRESETS[preset_name]
        notes.extend(preset.get("notes", []))
        merged = _merge(preset, entries)
        source_label = f"preset:{preset_name}"
    else:
        merged = dict(entries)

    model = {k.split(".", 1)[1]: v for k, v in merged.items() if k.startswith("model.")}
    spec, label = _build_spec(model)
    source_label = source_label or label

    def get(name, default=None):
        return merged[name][0] if name in merged else default

    n_cells = int(overrides.get("cells", get("grid.n_cells", 512)))
    grid = Grid1D(n_cells, float(get("grid.x_lo", spec.domain.lo)), float(get("grid.x_hi", spec.domain.hi)))
    polar_grid = None
    if spec.is_polar:
        polar_grid = Grid2D.polar(int(get("grid.n_theta", 64)), int(get("grid.n_r", 64)), grid.x_lo, grid.x_hi)

    t_end = float(get("solver.t_end", 1.0))
    try:
        solver = SolverConfig(
            t_end=t_end,
            cfl=float(get("solver.cfl", 0.9)),
            snapshot_times=tuple(sorted(get("solver.snapshot_times", []))),
            boundary=tuple(get("solver.boundary", ["outflow", "outflow"])),
            splitting=str(get("solver.splitting", "lie")).lower(),
        )
    except ConstraintViolation as exc:
        raise ConstraintViolation(f"solver: {exc}") from None

    window = get("solver.window")
    if window is not None and len(window) != 2:
        raise ConstraintViolation("solver.window needs two values (lo hi)")

    formats = tuple(get("output.formats", ["csv", "plot", "manifest"]))
    for fmt in formats:
        if fmt not in OUTPUT_FORMATS:
            raise ConstraintViolation(f"output.formats: unknown format '{fmt}' (known: {', '.join(OUTPUT_FORMATS)})")

    cfg = RunConfig(
        spec=spec,
        model_source=source_label,
        grid=grid,
        solver=solver,
        n_cells_2d=int(get("grid.n_cells_2d", 64)),
        polar_grid=polar_grid,
        window=tuple(window) if window is not None else None,
        n_paths=int(overrides.get("paths", get("mc.n_paths", 10_000))),
        master_seed=int(overrides.get("seed", get("mc.master_seed", 20240101))),
        mc_base_step=float(get("mc.base_step", 0.02)),
        mc_times=tuple(sorted(get("mc.times", [t_end]))),
        workers=int(overrides.get("workers", get("mc.workers", 1))),
        out_dir=Path(overrides.get("out", get("output.directory", "results"))),
        formats=formats,
        notes=notes,
        echo={k: _echo(v) for k, (v, _) in sorted(merged.items())},
    )
    check_for_command(cfg, command)
    return cfg


def _echo(value) -> str:
    if isinstance(value, (list, tuple)):
        return " ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def resolve_preset_or_none(name: str) -> Optional[str]:
    key = PRESET_ALIASES.get(name, name)
    return key if key in PRESETS else None


def check_for_command(cfg: RunConfig, command: Optional[str]):
    """Command-specific requirements."""
    if command is None:
        return
    if command not in COMMANDS:
        raise ConstraintViolation(f"unknown command '{command}' (known: {', '.join(COMMANDS)})")
    if command in MC_COMMANDS and cfg.n_paths < 1:
        raise ConstraintViolation(f"mc.n_paths must be >= 1 for {command}, got {cfg.n_paths}")
    if cfg.workers < 1:
        raise ConstraintViolation(f"mc.workers must be >= 1, got {cfg.workers}")
    if any(t < 0 for t in cfg.mc_times):
        raise ConstraintViolation("mc.times must be >= 0")


def parse_config_text(text: str, command: Optional[str] = None,
                      overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    return build_run_config(read_document(text), command, overrides)


def parse_config(path, command: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Read and validate a configuration file.

    Raises:
        ParseError, UnknownKey, ConstraintViolation, MissingParam
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"configuration file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), command, overrides)


def load_preset(name: str, command: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """RunConfig of a named preset, with optional CLI overrides."""
    overrides = dict(overrides or {})
    overrides["preset"] = name
    return build_run_config({}, command, overrides)
