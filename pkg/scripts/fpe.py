#!/usr/bin/env python3
"""
Finite-volume solver for the moment and correlation systems.

Each chain state carries a density transported by its own vector field;
states exchange mass through Q^T. Advection is first-order donor-cell
upwind in coefficient form (every new cell value is a nonnegative
combination of old values whenever the step satisfies the CFL bound) and
the coupling is applied exactly per cell with exp(dt Q^T).

Grids:
    Grid1D: uniform cells on (x_lo, x_hi), optionally periodic
    Grid2D: tensor product of two Grid1D axes (correlations, polar Hopf)
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse

from errors import CFLDegenerate, ConstraintViolation, NonFiniteState, SizeCap
from model import ModelSpec, SwitchingChain, TWO_PI, eval_angular_rate, eval_field

logger = logging.getLogger(__name__)

BOUNDARY_KINDS = ("outflow", "reflecting")
SPLITTING_KINDS = ("lie", "strang")
MIN_CELLS = 16
MAX_GENERATOR_CELLS_1D = 256
MAX_GENERATOR_CELLS_2D = 64

Monitor = Callable[[float, np.ndarray], None]


@dataclass(frozen=True)
class Grid1D:
    """Uniform cells on (x_lo, x_hi)."""

    n_cells: int
    x_lo: float
    x_hi: float
    periodic: bool = False

    def __post_init__(self):
        if int(self.n_cells) < MIN_CELLS:
            raise ConstraintViolation(f"grid needs at least {MIN_CELLS} cells, got {self.n_cells}")
        if not self.x_hi > self.x_lo:
            raise ConstraintViolation(f"grid bounds ({self.x_lo}, {self.x_hi}) are empty")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def window_weights(self, lo: float, hi: float) -> np.ndarray:
        """Length of each cell's overlap with [lo, hi]."""
        e = self.edges
        return np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None)


@dataclass(frozen=True)
class Grid2D:
    """Tensor product of two axes; values are indexed [state, x, y] row-major."""

    x: Grid1D
    y: Grid1D

    @classmethod
    def square(cls, axis: Grid1D) -> "Grid2D":
        return cls(axis, axis)

    @classmethod
    def polar(cls, n_theta: int, n_r: int, r_lo: float, r_hi: float) -> "Grid2D":
        """Periodic angle axis on [0, 2 pi) times a radial axis."""
        return cls(Grid1D(n_theta, 0.0, TWO_PI, periodic=True), Grid1D(n_r, r_lo, r_hi))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.x.n_cells, self.y.n_cells

    @property
    def cell_area(self) -> float:
        return self.x.dx * self.y.dx


@dataclass(frozen=True, eq=False)
class FieldState:
    """Snapshot of the per-state cell averages at time t."""

    t: float
    values: np.ndarray
    cell_size: float
    shed_mass: float = 0.0

    @property
    def total(self) -> np.ndarray:
        return self.values.sum(axis=0)

    @property
    def state_mass(self) -> np.ndarray:
        return field_mass(self.values, self.cell_size)

    @property
    def mass(self) -> float:
        return float(self.state_mass.sum())


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping for the finite-volume solver."""

    t_end: float = 1.0
    cfl: float = 0.9
    snapshot_times: Tuple[float, ...] = ()
    boundary: Tuple[str, str] = ("outflow", "outflow")
    splitting: str = "lie"

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise ConstraintViolation(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.t_end < 0:
            raise ConstraintViolation(f"t_end must be >= 0, got {self.t_end}")
        for t in self.snapshot_times:
            if not 0.0 <= t <= self.t_end:
                raise ConstraintViolation(f"snapshot time {t} outside [0, {self.t_end}]")
        for kind in self.boundary:
            if kind not in BOUNDARY_KINDS:
                raise ConstraintViolation(f"boundary must be one of {BOUNDARY_KINDS}, got {kind}")
        if self.splitting not in SPLITTING_KINDS:
            raise ConstraintViolation(f"splitting must be one of {SPLITTING_KINDS}, got {self.splitting}")

    def times(self) -> List[float]:
        """Sorted snapshot times, always ending at t_end."""
        return sorted(set(float(t) for t in self.snapshot_times) | {float(self.t_end)})


@dataclass(frozen=True, eq=False)
class _Axis:
    """Upwind edge speeds of one spatial axis, per state."""

    ap: np.ndarray  # max(v, 0) at edges, shape (K, N + 1)
    am: np.ndarray  # min(v, 0) at edges
    dx: float
    periodic: bool
    position: int  # axis index in the (K, ...) value array

    @property
    def outflow(self) -> np.ndarray:
        return self.ap[:, 1:] - self.am[:, :-1]

    @property
    def max_rate(self) -> float:
        return float(self.outflow.max()) / self.dx


def field_mass(values: np.ndarray, cell_size: float) -> np.ndarray:
    """Per-state mass: sum of cell averages times cell size."""
    return values.reshape(values.shape[0], -1).sum(axis=1) * cell_size


def restrict(values: np.ndarray) -> np.ndarray:
    """Coarsen the last axis by averaging cell pairs."""
    n = values.shape[-1] // 2
    return 0.5 * (values[..., 0:2 * n:2] + values[..., 1:2 * n:2])


def l1_distance(a: np.ndarray, b: np.ndarray, cell_size: float) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum() * cell_size)


def _split_velocities(v: np.ndarray, boundary: Sequence[str], periodic: bool) -> Tuple[np.ndarray, np.ndarray]:
    ap = np.maximum(v, 0.0)
    am = np.minimum(v, 0.0)
    if not periodic:
        left, right = boundary
        # nothing flows in from outside the grid
        ap[:, 0] = 0.0
        am[:, -1] = 0.0
        if left == "reflecting":
            am[:, 0] = 0.0
        if right == "reflecting":
            ap[:, -1] = 0.0
    return ap, am


def _make_axis(velocity_edges: np.ndarray, grid: Grid1D, boundary: Sequence[str], position: int) -> _Axis:
    ap, am = _split_velocities(np.atleast_2d(np.asarray(velocity_edges, dtype=float)),
                               boundary, grid.periodic)
    return _Axis(ap, am, grid.dx, grid.periodic, position)


def _shift(u: np.ndarray, offset: int, axis: int) -> np.ndarray:
    """out[k] = u[k - offset] along axis, zero where no source cell exists."""
    out = np.zeros_like(u)
    src = [slice(None)] * u.ndim
    dst = [slice(None)] * u.ndim
    if offset > 0:
        dst[axis], src[axis] = slice(offset, None), slice(None, -offset)
    else:
        dst[axis], src[axis] = slice(None, offset), slice(-offset, None)
    out[tuple(dst)] = u[tuple(src)]
    return out


def _advect(values: np.ndarray, axes: Sequence[_Axis], dt: float) -> np.ndarray:
    loss = 0.0
    gain = 0.0
    for ax in axes:
        lam = dt / ax.dx
        shape = [1] * values.ndim
        shape[0] = values.shape[0]
        shape[ax.position] = -1
        out = ax.outflow.reshape(shape)
        from_left = ax.ap[:, :-1].reshape(shape)
        from_right = (-ax.am[:, 1:]).reshape(shape)
        if ax.periodic:
            left = np.roll(values, 1, axis=ax.position)
            right = np.roll(values, -1, axis=ax.position)
        else:
            left = _shift(values, 1, ax.position)
            right = _shift(values, -1, ax.position)
        loss = loss + lam * out
        gain = gain + lam * (from_left * left + from_right * right)
    return values * (1.0 - loss) + gain


def coupling_matrix(chain: SwitchingChain, dt: float) -> np.ndarray:
    """exp(dt Q^T), clipped to be entrywise nonnegative."""
    return np.clip(linalg.expm(dt * chain.q.T), 0.0, None)


def _couple(values: np.ndarray, transfer: np.ndarray) -> np.ndarray:
    # explicit per-state accumulation keeps each cell's arithmetic identical
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        acc = transfer[i, 0] * values[0]
        for j in range(1, values.shape[0]):
            acc = acc + transfer[i, j] * values[j]
        out[i] = acc
    return out


def _march(values: np.ndarray, axes: Sequence[_Axis], chain: SwitchingChain, cfg: SolverConfig,
           cell_size: float, monitor: Optional[Monitor], label: str) -> List[FieldState]:
    rate = sum(ax.max_rate for ax in axes)
    if not math.isfinite(rate):
        raise CFLDegenerate(f"{label}: edge velocities are not finite")
    if rate > 0:
        dt_max = cfg.cfl / rate
    else:
        logger.warning("%s: all velocities vanish, falling back to pure coupling", label)
        dt_max = math.inf

    transfers = {}

    def couple(v, dt):
        if dt not in transfers:
            transfers[dt] = coupling_matrix(chain, dt)
        return _couple(v, transfers[dt])

    values = np.array(values, dtype=float)
    snapshots = []
    t = 0.0
    shed = 0.0
    steps = 0
    for target in cfg.times():
        while target - t > 1e-12 * max(1.0, target):
            dt = min(dt_max, target - t)
            before = values.sum()
            if cfg.splitting == "strang":
                values = _advect(values, axes, 0.5 * dt)
                values = couple(values, dt)
                values = _advect(values, axes, 0.5 * dt)
            else:
                values = couple(_advect(values, axes, dt), dt)
            if not np.all(np.isfinite(values)):
                raise NonFiniteState(f"{label}: non-finite density after step {steps} (t={t + dt:g})")
            shed += (before - values.sum()) * cell_size
            t = target if dt >= target - t else t + dt
            steps += 1
            if monitor is not None:
                monitor(t, values)
        snapshots.append(FieldState(float(target), values.copy(), cell_size, float(shed)))

    logger.info("%s: %d steps to t=%g (dt_max=%g), shed mass %.3e", label, steps, cfg.t_end, dt_max, shed)
    return snapshots


def _edge_velocities(spec: ModelSpec, edges: np.ndarray) -> np.ndarray:
    return np.array([eval_field(f, edges) for f in spec.fields])


def moment_initial(spec: ModelSpec, grid: Grid1D) -> np.ndarray:
    """u_i(0, x) = w_i times the cell average of g, w the initial law of the chain."""
    return spec.initial_law()[:, None] * spec.g.cell_averages(grid.edges)[None, :]


def correlation_initial(spec: ModelSpec, grid2d: Grid2D) -> FieldState:
    """C_i(0, x, y) = w_i g(x) g(y)."""
    gx = spec.g.cell_averages(grid2d.x.edges)
    gy = spec.g.cell_averages(grid2d.y.edges)
    values = spec.initial_law()[:, None, None] * np.outer(gx, gy)[None, :, :]
    return FieldState(0.0, values, grid2d.cell_area)


def solve_moment(spec: ModelSpec, grid: Grid1D, cfg: SolverConfig,
                 init: Optional[FieldState] = None,
                 monitor: Optional[Monitor] = None) -> List[FieldState]:
    """
    Solve the first-moment system for V_i(t, x) on a 1D grid.

    Args:
        spec: Interval model
        grid: Computational grid (should cover the support of g)
        cfg: Time stepping; one snapshot per requested time plus t_end
        init: Starting cell averages, shape (n_states, n_cells); defaults
            to moment_initial
        monitor: Optional callback(t, values) after every step

    Returns:
        FieldState snapshots in time order
    """
    if spec.is_polar:
        raise ConstraintViolation("polar models are solved with solve_polar_moment")
    start = init.values if init is not None else moment_initial(spec, grid)
    if start.shape != (spec.n_states, grid.n_cells):
        raise ConstraintViolation(f"initial state has shape {start.shape}, expected {(spec.n_states, grid.n_cells)}")
    axis = _make_axis(_edge_velocities(spec, grid.edges), grid, cfg.boundary, position=1)
    return _march(np.array(start, dtype=float), [axis], spec.chain, cfg, grid.dx, monitor,
                  f"moment[{spec.name}, {grid.n_cells} cells]")


def solve_correlation(spec: ModelSpec, grid2d: Grid2D, cfg: SolverConfig,
                      init: Optional[FieldState] = None,
                      monitor: Optional[Monitor] = None) -> List[FieldState]:
    """
    Solve the correlation system for C_i(t, x, y).

    The 2D update is unsplit: both axes contribute to one donor-cell step
    with velocity (b_i(x), b_i(y)), so a symmetric initial condition stays
    symmetric bit for bit on a square grid.
    """
    if spec.is_polar:
        raise ConstraintViolation("correlations are defined for interval models")
    init = init if init is not None else correlation_initial(spec, grid2d)
    if init.mass > 1.0 + 1e-9:
        raise ConstraintViolation(f"initial correlation mass {init.mass:.6g} exceeds 1")
    axes = [
        _make_axis(_edge_velocities(spec, grid2d.x.edges), grid2d.x, cfg.boundary, position=1),
        _make_axis(_edge_velocities(spec, grid2d.y.edges), grid2d.y, cfg.boundary, position=2),
    ]
    return _march(init.values, axes, spec.chain, cfg, grid2d.cell_area, monitor,
                  f"correlation[{spec.name}, {grid2d.shape[0]}x{grid2d.shape[1]}]")


def solve_polar_moment(spec: ModelSpec, grid2d: Grid2D, cfg: SolverConfig,
                       monitor: Optional[Monitor] = None) -> List[FieldState]:
    """
    First moment of the Hopf model on a (theta, r) grid with measure d(theta) dr.

    The theta axis is periodic and rotates at omega_i; the r axis uses the
    configured boundaries.
    """
    if not spec.is_polar:
        raise ConstraintViolation("solve_polar_moment needs a polar model")
    if not grid2d.x.periodic:
        raise ConstraintViolation("the angle axis of a polar grid must be periodic")
    theta_edges = grid2d.x.edges
    omega = np.array([np.full_like(theta_edges, eval_angular_rate(f, 0.0)) for f in spec.fields])
    axes = [
        _make_axis(omega, grid2d.x, cfg.boundary, position=1),
        _make_axis(_edge_velocities(spec, grid2d.y.edges), grid2d.y, cfg.boundary, position=2),
    ]
    g0 = spec.g.cell_averages(grid2d.x.edges, grid2d.y.edges)
    values = spec.initial_law()[:, None, None] * g0[None, :, :]
    return _march(values, axes, spec.chain, cfg, grid2d.cell_area, monitor,
                  f"polar[{spec.name}, {grid2d.shape[0]}x{grid2d.shape[1]}]")


def _stencil(velocity_edges: np.ndarray, grid: Grid1D, boundary: Sequence[str]):
    """(diagonal, sub-diagonal, super-diagonal) of the 1D upwind generator."""
    ap, am = _split_velocities(np.atleast_2d(velocity_edges).astype(float), boundary, False)
    ap, am = ap[0], am[0]
    diag = -(ap[1:] - am[:-1]) / grid.dx
    lower = ap[1:-1] / grid.dx
    upper = -am[1:-1] / grid.dx
    return diag, lower, upper


def advection_matrix(velocity_edges: np.ndarray, grid: Grid1D,
                     boundary: Sequence[str] = ("outflow", "outflow")) -> sparse.csr_matrix:
    """Upwind generator A with du/dt = A u for one state on a 1D grid."""
    diag, lower, upper = _stencil(velocity_edges, grid, boundary)
    return sparse.diags([lower, diag, upper], [-1, 0, 1], format="csr")


def advection_matrix_2d(vx: np.ndarray, vy: np.ndarray, grid2d: Grid2D,
                        boundary: Sequence[str] = ("outflow", "outflow")) -> sparse.csr_matrix:
    """
    Upwind generator of one state on a 2D grid, built from the 2D stencil.

    Cell (i, j) has index i * Ny + j.
    """
    dx_diag, dx_lower, dx_upper = _stencil(vx, grid2d.x, boundary)
    dy_diag, dy_lower, dy_upper = _stencil(vy, grid2d.y, boundary)
    nx, ny = grid2d.shape
    idx = np.arange(nx * ny).reshape(nx, ny)

    rows = [idx.ravel()]
    cols = [idx.ravel()]
    data = [(dx_diag[:, None] + dy_diag[None, :]).ravel()]
    # x neighbours: (i-1, j) and (i+1, j)
    rows += [idx[1:, :].ravel(), idx[:-1, :].ravel()]
    cols += [idx[:-1, :].ravel(), idx[1:, :].ravel()]
    data += [np.repeat(dx_lower, ny), np.repeat(dx_upper, ny)]
    # y neighbours: (i, j-1) and (i, j+1)
    rows += [idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    cols += [idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    data += [np.tile(dy_lower, nx), np.tile(dy_upper, nx)]

    return sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    ).tocsr()


def kronecker_sum(a: sparse.spmatrix, b: sparse.spmatrix) -> sparse.csr_matrix:
    """A (x) I + I (x) B."""
    eye_a = sparse.identity(a.shape[0], format="csr")
    eye_b = sparse.identity(b.shape[0], format="csr")
    return (sparse.kron(a, eye_b, format="csr") + sparse.kron(eye_a, b, format="csr")).tocsr()


def advection_blocks(spec: ModelSpec, grid, boundary: Sequence[str] = ("outflow", "outflow")):
    """Per-state advection generators on a Grid1D or Grid2D."""
    if isinstance(grid, Grid2D):
        if max(grid.shape) > MAX_GENERATOR_CELLS_2D:
            raise SizeCap(f"2D generator capped at {MAX_GENERATOR_CELLS_2D} cells per axis, got {grid.shape}")
        return [advection_matrix_2d(eval_field(f, grid.x.edges), eval_field(f, grid.y.edges), grid, boundary)
                for f in spec.fields]
    if grid.n_cells > MAX_GENERATOR_CELLS_1D:
        raise SizeCap(f"1D generator capped at {MAX_GENERATOR_CELLS_1D} cells, got {grid.n_cells}")
    return [advection_matrix(eval_field(f, grid.edges), grid, boundary) for f in spec.fields]


def assemble_discrete_generator(spec: ModelSpec, grid,
                                boundary: Sequence[str] = ("outflow", "outflow")) -> sparse.csr_matrix:
    """
    Full discrete generator blockdiag(A_i) + Q^T (x) I.

    Unknowns are ordered state-major: index i * M + cell.
    """
    blocks = advection_blocks(spec, grid, boundary)
    n = blocks[0].shape[0]
    coupling = sparse.kron(sparse.csr_matrix(spec.chain.q.T), sparse.identity(n, format="csr"), format="csr")
    generator = (sparse.block_diag(blocks, format="csr") + coupling).tocsr()
    logger.debug("assembled generator %s with %d nonzeros", generator.shape, generator.nnz)
    return generator
