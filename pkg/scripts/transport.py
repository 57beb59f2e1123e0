#!/usr/bin/env python3
"""
Pathwise Frobenius-Perron transport and Monte Carlo estimators.

For one sampled environment path the density u(t) = U(t) g is evaluated
exactly along characteristics: every grid node is pulled back through
the switching segments in reverse order and picks up the Jacobian of the
backward flow. Averaging over paths, binned by the terminal state,
estimates the moments V_i(t, x) and correlations C_i(t, x, y).

Paths are processed in fixed-size chunks seeded by (master_seed, index),
and chunk results are reduced in chunk order, so an estimate does not
depend on how many worker processes evaluated it.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from chain import ChainPath, derive_seed, sample_path
from errors import ConstraintViolation
from flow import IntegratorConfig, flow_switching
from fpe import Grid1D, Grid2D
from model import InitialDensity, ModelSpec, VectorField

logger = logging.getLogger(__name__)

MEAN_CHUNK = 256
CORRELATION_CHUNK = 64
MC_BASE_STEP = 0.02


@dataclass(frozen=True)
class SwitchSchedule:
    """Switching segments (state, duration) of a path on [0, t], in time order."""

    segments: Tuple[Tuple[int, float], ...]
    terminal_state: int

    @classmethod
    def from_path(cls, path: ChainPath, t: float) -> "SwitchSchedule":
        jumps = path.jump_times[path.jump_times < t]
        edges = np.concatenate(([0.0], jumps, [t]))
        states = [path.initial_state] + [int(s) for s in path.states_after[:len(jumps)]]
        segments = tuple(
            (state, float(b - a)) for state, a, b in zip(states, edges[:-1], edges[1:]) if b > a
        )
        return cls(segments, states[-1])

    @property
    def duration(self) -> float:
        return float(sum(d for _, d in self.segments))

    def state_at(self, s: float) -> int:
        elapsed = 0.0
        for state, duration in self.segments:
            elapsed += duration
            if s < elapsed:
                return state
        return self.terminal_state

    def backward_segments(self) -> List[Tuple[int, float]]:
        return list(reversed(self.segments))


def schedule_from_path(path: ChainPath, t: float) -> SwitchSchedule:
    return SwitchSchedule.from_path(path, t)


@dataclass(frozen=True, eq=False)
class MCEstimate:
    """
    Monte Carlo estimate of V_i(t, .) on a Grid1D or C_i(t, ., .) on a Grid2D.

    values and std_err are indexed [state, node...]; state_mass and
    occupancy are per state; shed_mass is the mean mass lost through the
    grid boundary per path.
    """

    grid: Any
    t: float
    values: np.ndarray
    std_err: np.ndarray
    total: np.ndarray
    total_std_err: np.ndarray
    n_paths: int
    occupancy: np.ndarray
    state_mass: np.ndarray
    state_mass_std_err: np.ndarray
    shed_mass: float

    @property
    def cell_size(self) -> float:
        return self.grid.cell_area if isinstance(self.grid, Grid2D) else self.grid.dx

    @property
    def mass(self) -> float:
        return float(self.state_mass.sum())


@dataclass
class _ChunkSums:
    count: int
    s1: np.ndarray
    s2: np.ndarray
    mass1: np.ndarray
    mass2: np.ndarray
    visits: np.ndarray
    shed: float


def _bounds(spec: ModelSpec, grid: Grid1D) -> Tuple[float, float]:
    return max(spec.domain.lo, grid.x_lo), min(spec.domain.hi, grid.x_hi)


def _mc_config(cfg: Optional[IntegratorConfig]) -> IntegratorConfig:
    return cfg or IntegratorConfig(base_step=MC_BASE_STEP)


def _sample_schedule(spec: ModelSpec, t: float, master_seed: int, index: int) -> SwitchSchedule:
    rng = np.random.default_rng(derive_seed(master_seed, index))
    i0 = spec.initial_state
    if spec.initial_weights is not None:
        i0 = int(rng.choice(spec.n_states, p=spec.initial_law()))
    return SwitchSchedule.from_path(sample_path(spec.chain, i0, t, rng), t)


def _pullback_rows(fields: Sequence[VectorField], schedules: Sequence[SwitchSchedule], g: InitialDensity,
                   nodes: np.ndarray, cfg: IntegratorConfig, bounds: Tuple[float, float]) -> np.ndarray:
    x = np.tile(np.asarray(nodes, dtype=float), (len(schedules), 1))
    y, log_jac, exited = flow_switching(fields, [s.backward_segments() for s in schedules], x, cfg, bounds)
    with np.errstate(over="ignore"):
        return np.where(exited, 0.0, g(y) * np.exp(log_jac))


def pullback_evaluate(schedule: SwitchSchedule, fields: Sequence[VectorField], g: InitialDensity, x,
                      cfg: IntegratorConfig = None, bounds: Optional[Tuple[float, float]] = None):
    """
    u(t, x) = U(t) g (x) for one switching schedule.

    Walks the segments in reverse, pulling x back through each flow and
    accumulating the log-Jacobians; returns g(y) exp(sum of log-Jacobians)
    at the pulled-back point y, or 0 where a characteristic left bounds.
    bounds defaults to the interval [g.lo, g.hi] on which g lives.
    """
    if bounds is None:
        bounds = (g.lo, g.hi)
    arr = np.asarray(x, dtype=float)
    values = _pullback_rows(fields, [schedule], g, np.atleast_1d(arr), cfg or IntegratorConfig(), bounds)[0]
    return float(values[0]) if arr.ndim == 0 else values.reshape(arr.shape)


def _empty_sums(n_states: int, shape: Tuple[int, ...]) -> _ChunkSums:
    return _ChunkSums(0, np.zeros((n_states,) + shape), np.zeros((n_states,) + shape),
                      np.zeros(n_states), np.zeros(n_states), np.zeros(n_states, dtype=int), 0.0)


def _mean_chunk(job) -> _ChunkSums:
    spec, grid, t, start, stop, master_seed, cfg = job
    schedules = [_sample_schedule(spec, t, master_seed, k) for k in range(start, stop)]
    u = _pullback_rows(spec.fields, schedules, spec.g, grid.centers, cfg, _bounds(spec, grid))
    masses = u.sum(axis=1) * grid.dx
    terminal = np.array([s.terminal_state for s in schedules])

    sums = _empty_sums(spec.n_states, (grid.n_cells,))
    sums.count = len(schedules)
    for i in range(spec.n_states):
        rows = terminal == i
        sums.s1[i] = u[rows].sum(axis=0)
        sums.s2[i] = (u[rows] ** 2).sum(axis=0)
        sums.mass1[i] = masses[rows].sum()
        sums.mass2[i] = (masses[rows] ** 2).sum()
        sums.visits[i] = int(rows.sum())
    # Midpoint quadrature can overshoot 1 slightly; that is not negative loss.
    sums.shed = float(np.clip(1.0 - masses, 0.0, None).sum())
    return sums


def _correlation_chunk(job) -> _ChunkSums:
    spec, grid2d, t, start, stop, master_seed, cfg = job
    schedules = [_sample_schedule(spec, t, master_seed, k) for k in range(start, stop)]
    ux = _pullback_rows(spec.fields, schedules, spec.g, grid2d.x.centers, cfg, _bounds(spec, grid2d.x))
    if grid2d.y == grid2d.x:
        uy = ux
    else:
        uy = _pullback_rows(spec.fields, schedules, spec.g, grid2d.y.centers, cfg, _bounds(spec, grid2d.y))

    sums = _empty_sums(spec.n_states, grid2d.shape)
    sums.count = len(schedules)
    for p, schedule in enumerate(schedules):
        product = np.multiply.outer(ux[p], uy[p])
        mass = product.sum() * grid2d.cell_area
        i = schedule.terminal_state
        sums.s1[i] += product
        sums.s2[i] += product * product
        sums.mass1[i] += mass
        sums.mass2[i] += mass * mass
        sums.visits[i] += 1
        sums.shed += max(0.0, 1.0 - mass)
    return sums


def _run_chunks(worker: Callable, jobs: list, workers: int) -> List[_ChunkSums]:
    if workers <= 1 or len(jobs) <= 1:
        return [worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


def _std_err(s1: np.ndarray, s2: np.ndarray, n: int) -> np.ndarray:
    mean = s1 / n
    var = np.clip(s2 / n - mean * mean, 0.0, None) * n / max(n - 1, 1)
    return np.sqrt(var / n)


def _reduce(chunks: Sequence[_ChunkSums], grid, t: float) -> MCEstimate:
    total = chunks[0]
    for c in chunks[1:]:
        total.count += c.count
        total.s1 = total.s1 + c.s1
        total.s2 = total.s2 + c.s2
        total.mass1 = total.mass1 + c.mass1
        total.mass2 = total.mass2 + c.mass2
        total.visits = total.visits + c.visits
        total.shed += c.shed
    n = total.count
    s1_all = total.s1.sum(axis=0)
    s2_all = total.s2.sum(axis=0)
    return MCEstimate(
        grid=grid,
        t=float(t),
        values=total.s1 / n,
        std_err=_std_err(total.s1, total.s2, n),
        total=s1_all / n,
        total_std_err=_std_err(s1_all, s2_all, n),
        n_paths=n,
        occupancy=total.visits / n,
        state_mass=total.mass1 / n,
        state_mass_std_err=_std_err(total.mass1, total.mass2, n),
        shed_mass=total.shed / n,
    )


def _jobs(spec, grid, t, n_paths, master_seed, cfg, chunk):
    return [(spec, grid, t, start, min(start + chunk, n_paths), master_seed, cfg)
            for start in range(0, n_paths, chunk)]


def _exact_start(spec: ModelSpec, grid, values: np.ndarray, n_paths: int) -> MCEstimate:
    law = spec.initial_law()
    per_state = law.reshape((-1,) + (1,) * values.ndim) * values[None]
    cell = grid.cell_area if isinstance(grid, Grid2D) else grid.dx
    zeros = np.zeros(spec.n_states)
    return MCEstimate(grid, 0.0, per_state, np.zeros_like(per_state), per_state.sum(axis=0),
                      np.zeros_like(values), n_paths, law.copy(),
                      per_state.reshape(spec.n_states, -1).sum(axis=1) * cell, zeros, 0.0)


def _check_request(spec: ModelSpec, t: float, n_paths: int):
    if spec.is_polar:
        raise ConstraintViolation("Monte Carlo estimators are defined for interval models")
    if t < 0:
        raise ConstraintViolation(f"t must be >= 0, got {t}")
    if n_paths < 1:
        raise ConstraintViolation(f"n_paths must be >= 1, got {n_paths}")


def mc_mean(spec: ModelSpec, grid: Grid1D, t: float, n_paths: int, master_seed: int,
            cfg: IntegratorConfig = None, workers: int = 1, chunk_size: int = MEAN_CHUNK) -> MCEstimate:
    """
    Estimate V_i(t, x) at the grid cell centers.

    Each path's pullback is evaluated at every node (common random numbers)
    and binned by the terminal state i(t).

    Args:
        spec: Interval model
        grid: Evaluation grid; also the truncated domain for pullbacks
        t: Evaluation time
        n_paths: Number of environment paths
        master_seed: Seed of the run; path k uses derive_seed(master_seed, k)
        cfg: RK4 settings (default base_step 0.02)
        workers: Worker processes (results do not depend on it)
        chunk_size: Paths per chunk

    Returns:
        MCEstimate with per-state values and standard errors
    """
    _check_request(spec, t, n_paths)
    if t == 0:
        return _exact_start(spec, grid, spec.g(grid.centers), n_paths)
    jobs = _jobs(spec, grid, t, n_paths, master_seed, _mc_config(cfg), chunk_size)
    estimate = _reduce(_run_chunks(_mean_chunk, jobs, workers), grid, t)
    logger.info("mc_mean[%s]: %d paths at t=%g, mass %.4f, shed %.3e",
                spec.name, n_paths, t, estimate.mass, estimate.shed_mass)
    return estimate


def mc_correlation(spec: ModelSpec, grid2d: Grid2D, t: float, n_paths: int, master_seed: int,
                   cfg: IntegratorConfig = None, workers: int = 1,
                   chunk_size: int = CORRELATION_CHUNK) -> MCEstimate:
    """
    Estimate C_i(t, x, y) from products u(t, x) u(t, y) of shared pullbacks.

    On a square grid both factors are the same array, so the estimate is
    exactly symmetric.
    """
    _check_request(spec, t, n_paths)
    if t == 0:
        return _exact_start(spec, grid2d, np.multiply.outer(spec.g(grid2d.x.centers),
                                                          spec.g(grid2d.y.centers)), n_paths)
    jobs = _jobs(spec, grid2d, t, n_paths, master_seed, _mc_config(cfg), chunk_size)
    estimate = _reduce(_run_chunks(_correlation_chunk, jobs, workers), grid2d, t)
    logger.info("mc_correlation[%s]: %d paths at t=%g, mass %.4f", spec.name, n_paths, t, estimate.mass)
    return estimate


def _particle_chunk(job):
    spec, grid, t, start, stop, master_seed, cfg = job
    xs = np.linspace(grid.x_lo, grid.x_hi, 8 * grid.n_cells + 1)
    cdf = integrate.cumulative_trapezoid(spec.g(xs), xs, initial=0.0)
    cdf /= cdf[-1]

    starts, schedules = [], []
    for k in range(start, stop):
        rng = np.random.default_rng(derive_seed(master_seed, k))
        i0 = spec.initial_state
        if spec.initial_weights is not None:
            i0 = int(rng.choice(spec.n_states, p=spec.initial_law()))
        starts.append(np.interp(rng.random(), cdf, xs))
        schedules.append(SwitchSchedule.from_path(sample_path(spec.chain, i0, t, rng), t))

    x, _, exited = flow_switching(spec.fields, [s.segments for s in schedules],
                                  np.array(starts)[:, None], cfg, _bounds(spec, grid), direction=1.0)
    cells = np.clip(((x[:, 0] - grid.x_lo) / grid.dx).astype(int), 0, grid.n_cells - 1)
    counts = np.zeros((spec.n_states, grid.n_cells), dtype=int)
    for p, schedule in enumerate(schedules):
        if not exited[p, 0]:
            counts[schedule.terminal_state, cells[p]] += 1
    visits = np.bincount([s.terminal_state for s in schedules], minlength=spec.n_states)
    return counts, visits, int(exited.sum())


def simulate_particles(spec: ModelSpec, grid: Grid1D, t: float, n_particles: int, master_seed: int,
                       cfg: IntegratorConfig = None, workers: int = 1,
                       chunk_size: int = MEAN_CHUNK) -> MCEstimate:
    """
    Estimate V_i(t, .) by simulating individuals xi(t) = (x(t), i(t)).

    Particles start from g, follow the switching flow forward and are
    histogrammed per terminal state; particles leaving the grid count as
    shed mass.
    """
    _check_request(spec, t, n_particles)
    jobs = _jobs(spec, grid, t, n_particles, master_seed, _mc_config(cfg), chunk_size)
    counts = np.zeros((spec.n_states, grid.n_cells), dtype=int)
    visits = np.zeros(spec.n_states, dtype=int)
    lost = 0
    for c, v, e in _run_chunks(_particle_chunk, jobs, workers):
        counts += c
        visits += v
        lost += e

    n = n_particles
    p = counts / n
    values = p / grid.dx
    std_err = np.sqrt(p * (1.0 - p) / n) / grid.dx
    p_total = p.sum(axis=0)
    state_p = p.sum(axis=1)
    logger.info("simulate_particles[%s]: %d particles at t=%g, %d left the grid", spec.name, n, t, lost)
    return MCEstimate(
        grid=grid,
        t=float(t),
        values=values,
        std_err=std_err,
        total=p_total / grid.dx,
        total_std_err=np.sqrt(p_total * (1.0 - p_total) / n) / grid.dx,
        n_paths=n,
        occupancy=visits / n,
        state_mass=state_p,
        state_mass_std_err=np.sqrt(state_p * (1.0 - state_p) / n),
        shed_mass=lost / n,
    )
