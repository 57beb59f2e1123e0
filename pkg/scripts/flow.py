#!/usr/bin/env python3
"""
Characteristics of the switching vector fields.

Integrates x' = b_i(x) forward or backward in time by classical RK4,
carrying the variational equation alongside so that every endpoint comes
with log d(pi)/dx, the Frobenius-Perron Jacobian factor. The batched
kernel `flow_switching` drives many points along many switching schedules
at once and is shared by the Monte Carlo estimators.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from errors import ConstraintViolation, Diverged
from model import Domain, TWO_PI, VectorField, eval_angular_rate, eval_field, eval_field_derivative

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step RK4 settings."""

    base_step: float = 0.005
    max_substeps: int = 10_000
    stationary_guard: float = 1e-14
    escape_factor: float = 10.0

    def __post_init__(self):
        if not self.base_step > 0:
            raise ConstraintViolation(f"base_step must be positive, got {self.base_step}")
        if self.stationary_guard < 0:
            raise ConstraintViolation(f"stationary_guard must be >= 0, got {self.stationary_guard}")
        if self.max_substeps < 1:
            raise ConstraintViolation(f"max_substeps must be >= 1, got {self.max_substeps}")

    def substeps(self, dt: float) -> int:
        return max(1, min(self.max_substeps, math.ceil(dt / self.base_step)))


@dataclass(frozen=True, eq=False)
class FlowResult:
    """
    Endpoint of one characteristic.

    endpoint is a float (or array) for interval fields and a (theta, r)
    pair for the polar field; exited marks departure from the domain.
    """

    endpoint: Any
    log_jacobian: Any
    exited: Any

    @property
    def jacobian(self):
        return np.exp(self.log_jacobian)


def _select_field(fields: Sequence[VectorField], states) -> Optional[VectorField]:
    """
    One field of the shared family whose parameters are picked per row.

    Returns None when the fields cannot be merged (mixed families,
    polynomial coefficients, differing Goodwin exponents).
    """
    family = fields[0].family
    if family == "polynomial" or any(f.family != family for f in fields):
        return None
    params = {}
    for key in fields[0].params:
        options = [f.params[key] for f in fields]
        if all(v == options[0] for v in options):
            params[key] = options[0]
        elif key == "n":
            return None
        else:
            params[key] = np.choose(states, options)
    return VectorField(family, params)


def _velocity(fields: Sequence[VectorField], states, x: np.ndarray, direction: float, guard: float):
    if len(fields) == 1:
        b = eval_field(fields[0], x)
        db = eval_field_derivative(fields[0], x)
    else:
        b = np.choose(states, [eval_field(f, x) for f in fields])
        db = np.choose(states, [eval_field_derivative(f, x) for f in fields])
    frozen = np.abs(b) < guard * np.maximum(1.0, np.abs(x))
    return direction * np.where(frozen, 0.0, b), direction * db


def rk4_step(fields: Sequence[VectorField], states, x: np.ndarray, h, direction: float = 1.0,
             guard: float = 1e-14) -> Tuple[np.ndarray, np.ndarray]:
    """
    One classical RK4 step of x' = direction * b(x) and L' = direction * b'(x).

    Args:
        fields: Candidate fields; `states` picks one per row
        states: Integer array broadcastable against x (ignored for one field)
        x: Current points
        h: Step size, scalar or broadcastable against x
        direction: +1 forward, -1 backward
        guard: Relative threshold below which |b| is treated as zero

    Returns:
        (x_new, increment of the log-Jacobian)
    """
    if len(fields) > 1:
        merged = _select_field(fields, states)
        if merged is not None:
            fields = (merged,)
    k1, l1 = _velocity(fields, states, x, direction, guard)
    k2, l2 = _velocity(fields, states, x + 0.5 * h * k1, direction, guard)
    k3, l3 = _velocity(fields, states, x + 0.5 * h * k2, direction, guard)
    k4, l4 = _velocity(fields, states, x + h * k3, direction, guard)
    x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    dlog = (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
    return x_new, dlog


def _bounds(domain: Optional[Domain], x0: np.ndarray, cfg: IntegratorConfig) -> Tuple[float, float]:
    if domain is not None:
        return domain.lo, domain.hi
    finite = np.abs(x0[np.isfinite(x0)])
    radius = cfg.escape_factor * max(1.0, float(finite.max()) if finite.size else 1.0)
    return -radius, radius


def _integrate(field: VectorField, x0, dt: float, cfg: IntegratorConfig,
               domain: Optional[Domain], direction: float) -> FlowResult:
    if dt < 0:
        raise ConstraintViolation(f"dt must be >= 0, got {dt}")
    x = np.array(x0, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    log_jac = np.zeros_like(x)
    exited = np.zeros(x.shape, dtype=bool)
    lo, hi = _bounds(domain, x, cfg)

    if dt > 0:
        n = cfg.substeps(dt)
        h = dt / n
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(n):
                x_new, dlog = rk4_step((field,), None, x, h, direction, cfg.stationary_guard)
                if not np.all(np.isfinite(x_new[~exited])):
                    raise Diverged(f"{field.family} flow became non-finite within dt={dt} (step {h:g})")
                out = (x_new < lo) | (x_new > hi)
                exited |= out
                x = np.where(exited, x, x_new)
                log_jac = np.where(exited, log_jac, log_jac + dlog)
                if exited.all():
                    break

    if not np.all(np.isfinite(log_jac[~exited])):
        raise Diverged(f"log-Jacobian of {field.family} became non-finite over dt={dt}")

    if scalar:
        return FlowResult(float(x[0]), float(log_jac[0]), bool(exited[0]))
    return FlowResult(x, log_jac, exited)


def advance(field: VectorField, x0, dt: float, cfg: IntegratorConfig = None,
            domain: Optional[Domain] = None) -> FlowResult:
    """
    Flow x0 forward by dt: endpoint pi(dt, x0), log_jacobian = int b'(x(s)) ds.

    Without a domain, points are only flagged as exited when they pass the
    escape radius escape_factor * max(1, |x0|). A non-finite endpoint raises
    Diverged.
    """
    return _integrate(field, x0, dt, cfg or IntegratorConfig(), domain, 1.0)


def backward(field: VectorField, x, dt: float, cfg: IntegratorConfig = None,
             domain: Optional[Domain] = None) -> FlowResult:
    """Flow x backward by dt: endpoint pi(-dt, x), log_jacobian = -int b'."""
    return _integrate(field, x, dt, cfg or IntegratorConfig(), domain, -1.0)


def advance_polar(field: VectorField, theta0, r0, dt: float, cfg: IntegratorConfig = None,
                  domain: Optional[Domain] = None, direction: float = 1.0) -> FlowResult:
    """
    Flow a point of the Hopf field in polar coordinates.

    The radius follows the radial RK4; with b = 0 the angle rotates at the
    constant rate omega, so it is advanced exactly and taken mod 2 pi.
    """
    cfg = cfg or IntegratorConfig()
    radial = _integrate(field, r0, dt, cfg, domain, direction)
    omega = eval_angular_rate(field, 0.0)
    theta = np.mod(np.asarray(theta0, dtype=float) + direction * omega * dt, TWO_PI)
    if theta.ndim == 0:
        theta = float(theta)
    return FlowResult((theta, radial.endpoint), radial.log_jacobian, radial.exited)


def flow_switching(fields: Sequence[VectorField], segments: Sequence[Sequence[Tuple[int, float]]],
                   x: np.ndarray, cfg: IntegratorConfig, bounds: Tuple[float, float],
                   direction: float = -1.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Drive many points along many switching schedules in lockstep.

    Row p of x follows segments[p], a list of (state, duration) in the
    order they are traversed. Every row advances by min(base_step,
    remaining time in its current segment) per iteration, so rows with
    different jump times stay aligned without a per-path Python loop.

    Args:
        fields: Vector fields indexed by chain state
        segments: One traversal-ordered schedule per row
        x: Starting points, shape (P, M)
        cfg: Integrator settings (base_step, stationary_guard)
        bounds: (lo, hi); a point leaving it is frozen and flagged
        direction: -1 for pullbacks, +1 for forward particle motion

    Returns:
        (endpoints, log-Jacobians, exited flags), each shaped like x
    """
    x = np.array(x, dtype=float)
    n_rows = x.shape[0]
    depth = max([1] + [len(s) for s in segments])
    states = np.zeros((n_rows, depth), dtype=int)
    durations = np.zeros((n_rows, depth))
    for p, schedule in enumerate(segments):
        for k, (state, duration) in enumerate(schedule):
            states[p, k] = state
            durations[p, k] = duration

    lo, hi = bounds
    rows = np.arange(n_rows)
    cursor = np.zeros(n_rows, dtype=int)
    remaining = durations[:, 0].copy()
    log_jac = np.zeros_like(x)
    exited = ~np.isfinite(x) | (x < lo) | (x > hi)
    iterations = 0

    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            move = (remaining <= 0) & (cursor < depth - 1)
            while move.any():
                cursor[move] += 1
                remaining[move] = durations[move, cursor[move]]
                move = (remaining <= 0) & (cursor < depth - 1)
            if not np.any(remaining > 0):
                break

            h = np.minimum(cfg.base_step, np.maximum(remaining, 0.0))
            current = states[rows, cursor][:, None]
            x_new, dlog = rk4_step(fields, current, x, h[:, None], direction, cfg.stationary_guard)
            exited |= ~np.isfinite(x_new) | (x_new < lo) | (x_new > hi)
            x = np.where(exited, x, x_new)
            log_jac = np.where(exited, log_jac, log_jac + dlog)
            remaining = np.where(remaining > h, remaining - h, 0.0)
            iterations += 1

    if not np.all(np.isfinite(log_jac[~exited])):
        raise Diverged("log-Jacobian became non-finite along a switching schedule")
    logger.debug("switching flow: %d rows, %d iterations, %d exited points",
                 n_rows, iterations, int(exited.sum()))
    return x, log_jac, exited
