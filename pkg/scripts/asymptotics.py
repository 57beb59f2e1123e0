#!/usr/bin/env python3
"""
Large-time behaviour of two-state switching models.

The sign of lambda = p0 b0'(0) + p1 b1'(0) decides between asymptotic
stability (lambda > 0) and sweeping (lambda < 0). In the stable case the
mean converges to V* = (f0 + f1) / kappa with

    f_i = exp(-R(x)) / |b_i(x)|,  R(x) = int_{x0}^{x} q0/b0 + q1/b1

on the support (0, a). This module computes those objects, the closed
forms of the transcritical and pitchfork examples, the Goodwin fold
condition, the Hopf stationary density and the sweeping diagnostic.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from chain import stationary_weights
from errors import (ConstraintViolation, DegenerateDerivative, NegativeLambda, NotIntegrable,
                    NotTwoState, SingularInterior)
from fpe import FieldState, Grid1D, Grid2D
from model import ModelSpec, VectorField, eval_angular_rate, eval_field, stationary_points

logger = logging.getLogger(__name__)

STABLE = "AsymptoticallyStable"
SWEEPING = "Sweeping"
INCONCLUSIVE = "Inconclusive"

GRADING_RATIO = 0.5
GRADING_LEVELS = 60
DIVERGENCE_RUN = 10
GAUSS_ORDER = 16
QUAD_OPTIONS = {"epsabs": 1e-13, "epsrel": 1e-12, "limit": 200}


@dataclass(frozen=True, eq=False)
class StationaryPair:
    """
    Stationary solutions f0, f1 of the moment system on (0, a).

    f0 and f1 hold samples at the centers of `grid` (zero outside (0, a));
    evaluate() gives the same functions anywhere.
    """

    fields: Tuple[VectorField, VectorField]
    rates: Tuple[float, float]
    x0: float
    a: float
    grid: Optional[Grid1D] = None
    f0: Optional[np.ndarray] = None
    f1: Optional[np.ndarray] = None

    def rate(self, s):
        """r(s) = q0/b0(s) + q1/b1(s)."""
        return self.rates[0] / eval_field(self.fields[0], s) + self.rates[1] / eval_field(self.fields[1], s)

    def potential(self, x) -> np.ndarray:
        """R(x) by adaptive quadrature, accumulated between sorted points."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(xs)
        above = np.nonzero(xs >= self.x0)[0]
        below = np.nonzero(xs < self.x0)[0]
        for idx in (above[np.argsort(xs[above])], below[np.argsort(-xs[below])]):
            acc, prev = 0.0, self.x0
            for k in idx:
                step, _ = integrate.quad(self.rate, prev, xs[k], **QUAD_OPTIONS)
                acc += step
                prev = xs[k]
                out[k] = acc
        return out

    def evaluate(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """(f0(x), f1(x)), zero outside (0, a)."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        f0 = np.zeros_like(xs)
        f1 = np.zeros_like(xs)
        inside = (xs > 0.0) & (xs < self.a)
        if inside.any():
            pts = xs[inside]
            with np.errstate(over="ignore"):
                weight = np.exp(-self.potential(pts))
            f0[inside] = weight / np.abs(eval_field(self.fields[0], pts))
            f1[inside] = weight / np.abs(eval_field(self.fields[1], pts))
        return f0, f1


@dataclass(frozen=True, eq=False)
class VStar:
    """Normalised large-time mean V* = (f0 + f1) / kappa."""

    pair: StationaryPair
    kappa: float

    def per_state(self, x) -> Tuple[np.ndarray, np.ndarray]:
        f0, f1 = self.pair.evaluate(x)
        return f0 / self.kappa, f1 / self.kappa

    def __call__(self, x):
        v0, v1 = self.per_state(x)
        out = v0 + v1
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def sample(self, grid: Grid1D) -> np.ndarray:
        if self.pair.grid == grid and self.pair.f0 is not None:
            return (self.pair.f0 + self.pair.f1) / self.kappa
        return self(grid.centers)

    def mass_in(self, lo: float, hi: float) -> float:
        """Integral of V* over [lo, hi]."""
        lo, hi = max(lo, 0.0), min(hi, self.pair.a)
        if hi <= lo:
            return 0.0
        value, _ = integrate.quad(self, lo, hi, limit=200, epsabs=1e-12, epsrel=1e-10)
        return value


@dataclass(frozen=True, eq=False)
class LargeTimeReport:
    """Verdict on the large-time behaviour of one model."""

    name: str
    lam: float
    lam_exact: Optional[Fraction]
    verdict: str
    kappa: float = math.inf
    v_star: Optional[VStar] = None
    notes: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class SweepingReport:
    """Mass of V inside a compact window over time."""

    window: Tuple[float, float]
    times: Tuple[float, ...]
    masses: Tuple[float, ...]
    decreasing: bool
    eventually_decreasing: bool

    @property
    def final_mass(self) -> float:
        return self.masses[-1] if self.masses else 0.0


def _require_two_state(spec: ModelSpec):
    if spec.n_states != 2:
        raise NotTwoState(f"{spec.name}: needs a two-state chain, got {spec.n_states} states")


def _exact(value) -> Fraction:
    return Fraction(repr(float(value)))


def _slope_at_zero(f: VectorField) -> Fraction:
    """b'(0) in exact arithmetic from the family coefficients."""
    p = f.params
    if f.family == "transcritical":
        return _exact(p["beta"]) - _exact(p["mu"])
    if f.family == "pitchfork":
        return _exact(p["alpha"])
    if f.family == "hopf_polar":
        return _exact(p["mu"])
    if f.family == "goodwin":
        return -_exact(p["gamma"])
    if f.family == "polynomial":
        coeffs = list(p["coeffs"])
        return _exact(coeffs[1]) if len(coeffs) > 1 else Fraction(0)
    raise ConstraintViolation(f"Unknown vector field family: {f.family}")


def lambda_exact(spec: ModelSpec) -> Fraction:
    """
    lambda = p0 b0'(0) + p1 b1'(0) in rational arithmetic.

    Raises:
        NotTwoState: chain with more than two states
        DegenerateDerivative: some b_i'(0) = 0
    """
    _require_two_state(spec)
    q0, q1 = (_exact(r) for r in spec.chain.exit_rates)
    slopes = [_slope_at_zero(f) for f in spec.fields]
    for i, slope in enumerate(slopes):
        if slope == 0:
            raise DegenerateDerivative(f"{spec.name}: b_{i}'(0) = 0")
    return (q1 * slopes[0] + q0 * slopes[1]) / (q0 + q1)


def lambda_rate(spec: ModelSpec) -> float:
    """lambda in floating point, with (p0, p1) from the chain's stationary law."""
    p0, p1 = stationary_weights(spec.chain)
    lambda_exact(spec)
    return p0 * float(_slope_at_zero(spec.fields[0])) + p1 * float(_slope_at_zero(spec.fields[1]))


def fold_condition(gamma: float, n: int) -> bool:
    """True iff n^n gamma^n > (n-1)^(n-1): 0 is then the only stationary point."""
    if not gamma > 0 or int(n) != n or n <= 1:
        raise ConstraintViolation(f"fold condition needs gamma > 0 and integer n > 1, got ({gamma}, {n})")
    n = int(n)
    return Fraction(n) ** n * _exact(gamma) ** n > Fraction(n - 1) ** (n - 1)


def support_endpoint(spec: ModelSpec) -> float:
    """a = largest positive stationary point among the fields."""
    points = [p for f in spec.fields for p in stationary_points(f)]
    if not points:
        raise ConstraintViolation(f"{spec.name}: no positive stationary point bounds the support")
    return max(points)


def _check_interior(fields: Sequence[VectorField], a: float):
    samples = np.linspace(0.0, a, 4003)[1:-1]
    for i, f in enumerate(fields):
        values = eval_field(f, samples)
        if np.any(values == 0.0) or np.any(np.sign(values[1:]) != np.sign(values[:-1])):
            raise SingularInterior(f"b_{i} vanishes inside (0, {a:g})")


def stationary_pair(spec: ModelSpec, x0: float = None, a: float = None,
                    grid: Optional[Grid1D] = None) -> StationaryPair:
    """
    Build f0, f1 = exp(-R)/|b_i| on (0, a).

    Args:
        spec: Two-state model (the radial part is used for the Hopf field)
        x0: Lower limit of R; defaults to a/2
        a: Right end of the support; defaults to the largest stationary point
        grid: When given, f0 and f1 are sampled at its cell centers

    Returns:
        StationaryPair
    """
    _require_two_state(spec)
    a = support_endpoint(spec) if a is None else float(a)
    x0 = 0.5 * a if x0 is None else float(x0)
    if not 0.0 < x0 < a:
        raise ConstraintViolation(f"x0 = {x0} must lie in (0, {a})")
    _check_interior(spec.fields, a)

    rates = tuple(float(r) for r in spec.chain.exit_rates)
    pair = StationaryPair(tuple(spec.fields), rates, x0, a)
    if grid is None:
        return pair
    f0, f1 = pair.evaluate(grid.centers)
    return StationaryPair(pair.fields, rates, x0, a, grid, f0, f1)


def _graded_intervals(a: float) -> Tuple[List[Tuple[float, float]], List[Tuple[float, float]]]:
    mid = 0.5 * a
    toward_zero = [(mid * GRADING_RATIO ** (k + 1), mid * GRADING_RATIO ** k) for k in range(GRADING_LEVELS)]
    toward_a = []
    for k in range(GRADING_LEVELS):
        lo, hi = a - mid * GRADING_RATIO ** k, a - mid * GRADING_RATIO ** (k + 1)
        if hi - lo < 64.0 * np.finfo(float).eps * a:
            break
        toward_a.append((lo, hi))
    return toward_zero, toward_a


def _gauss(func, lo, hi) -> np.ndarray:
    """Gauss-Legendre integral of func over [lo, hi], vectorised over lo."""
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    lo = np.atleast_1d(lo)
    half = 0.5 * (hi - lo)[:, None]
    pts = 0.5 * (hi + lo)[:, None] + half * nodes[None, :]
    return (half * weights[None, :] * func(pts)).sum(axis=1)


def _level_contributions(pair: StationaryPair, intervals, r_start: float, outward: str) -> List[float]:
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    contributions = []
    r_edge = r_start
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for lo, hi in intervals:
            half = 0.5 * (hi - lo)
            s = 0.5 * (hi + lo) + half * nodes
            if outward == "left":
                # R(s) = R(hi) - int_s^hi r
                r_nodes = r_edge - _gauss(pair.rate, s, np.full_like(s, hi))
                r_edge = r_edge - _gauss(pair.rate, np.array([lo]), np.array([hi]))[0]
            else:
                r_nodes = r_edge + _gauss(pair.rate, np.full_like(s, lo), s)
                r_edge = r_edge + _gauss(pair.rate, np.array([lo]), np.array([hi]))[0]
            weight = np.exp(-r_nodes)
            density = weight / np.abs(eval_field(pair.fields[0], s)) + weight / np.abs(eval_field(pair.fields[1], s))
            contributions.append(float(half * np.dot(weights, density)))
    return contributions


def _diverges(contributions: Sequence[float]) -> bool:
    if not all(math.isfinite(c) for c in contributions):
        return True
    tail = contributions[-(DIVERGENCE_RUN + 1):]
    return len(tail) == DIVERGENCE_RUN + 1 and all(b > a for a, b in zip(tail[:-1], tail[1:]))


def kappa_and_vstar(pair: StationaryPair, strict: bool = False) -> Tuple[float, Optional[VStar]]:
    """
    kappa = int_0^a (f0 + f1) on a mesh graded geometrically toward 0 and a.

    Each side is split into levels of ratio 0.5; a side diverges when its
    last 10 levels each contribute more than the previous one.

    Returns:
        (kappa, VStar), or (inf, None) when the integral diverges

    Raises:
        NotIntegrable: only with strict=True
    """
    toward_zero, toward_a = _graded_intervals(pair.a)
    r_mid = float(pair.potential(0.5 * pair.a)[0])
    left = _level_contributions(pair, toward_zero, r_mid, "left")
    right = _level_contributions(pair, toward_a, r_mid, "right")

    for side, contributions in (("0", left), ("a", right)):
        if _diverges(contributions):
            logger.warning("stationary density is not integrable near %s; kappa = inf", side)
            if strict:
                raise NotIntegrable(f"f0 + f1 is not integrable near {side}")
            return math.inf, None

    kappa = math.fsum(left) + math.fsum(right)
    logger.debug("kappa = %.12g from %d + %d graded levels", kappa, len(left), len(right))
    return kappa, VStar(pair, kappa)


def transcritical_density(spec: ModelSpec, x) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form f0, f1 of the transcritical model, up to a common constant.

    With a_i = (beta_i - mu)/c and k_i = q_i/(c a_i):
        f_i = x^-(k0+k1) |x-a0|^k0 |a1-x|^k1 / (x |x-a_i|)
    """
    q0, q1 = spec.chain.exit_rates
    p0, p1 = (f.params for f in spec.fields)
    c = p0["c"]
    a0 = (p0["beta"] - p0["mu"]) / c
    a1 = (p1["beta"] - p1["mu"]) / c
    k0, k1 = q0 / (c * a0), q1 / (c * a1)
    x = np.asarray(x, dtype=float)
    common = x ** (-(k0 + k1)) * np.abs(x - a0) ** k0 * np.abs(a1 - x) ** k1 / x
    return common / np.abs(x - a0), common / np.abs(x - a1)


def pitchfork_density(spec: ModelSpec, x, mirror: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Closed-form f0, f1 of the pitchfork model, up to a common constant.

        f_i = x^-(q0/alpha0 + q1/alpha1) |x^2 - alpha0|^(q0/2alpha0)
              |alpha1 - x^2|^(q1/2alpha1) / (x |alpha_i - x^2|)

    With mirror=True, x lies on the negative half line and f_i(-x) is
    returned. The Hopf field uses alpha_i = mu_i.
    """
    q0, q1 = spec.chain.exit_rates
    alphas = [f.params["alpha"] if f.family == "pitchfork" else f.params["mu"] for f in spec.fields]
    x = np.asarray(x, dtype=float)
    if mirror:
        x = -x
    al0, al1 = alphas
    x2 = x * x
    common = (x ** (-(q0 / al0 + q1 / al1)) * np.abs(x2 - al0) ** (q0 / (2 * al0))
              * np.abs(al1 - x2) ** (q1 / (2 * al1)) / x)
    return common / np.abs(al0 - x2), common / np.abs(al1 - x2)


def hormander_1d(spec: ModelSpec, n_samples: int = 2001) -> Tuple[bool, str]:
    """
    One-dimensional bracket condition: b1 - b0 vanishes only at isolated points.

    For the polar Hopf field the condition also needs omega0 != omega1.
    """
    _require_two_state(spec)
    lo, hi = spec.domain.lo, spec.domain.hi
    samples = np.linspace(lo, hi, n_samples)
    diff = np.abs(eval_field(spec.fields[1], samples) - eval_field(spec.fields[0], samples))
    scale = max(1.0, float(np.abs(eval_field(spec.fields[0], samples)).max()))
    zero = diff <= 1e-12 * scale
    if np.any(zero[1:] & zero[:-1]):
        return False, "b1 - b0 vanishes on an interval; the 1D bracket condition fails"
    if spec.is_polar:
        omegas = [eval_angular_rate(f, 0.0) for f in spec.fields]
        if omegas[0] == omegas[1]:
            return False, f"omega0 = omega1 = {omegas[0]:g}: the angle rotates rigidly, bracket condition fails"
        return True, "omega0 != omega1: bracket condition holds on the annulus"
    return True, "b1 - b0 vanishes only at isolated points: bracket condition holds"


def classify(spec: ModelSpec, grid: Optional[Grid1D] = None) -> LargeTimeReport:
    """
    Decide between asymptotic stability and sweeping.

    lambda > 0 with an integrable stationary pair gives AsymptoticallyStable,
    lambda < 0 gives Sweeping; lambda = 0 or a failed hypothesis gives
    Inconclusive with the reason in notes.
    """
    notes = ["accessibility of the state space is assumed from the model analysis, not checked"]
    if spec.n_states != 2:
        return LargeTimeReport(spec.name, math.nan, None, INCONCLUSIVE,
                               notes=notes + [f"{spec.n_states}-state chains are not classified"])

    holds, bracket_note = hormander_1d(spec)
    notes.append(bracket_note)
    try:
        lam_exact = lambda_exact(spec)
    except DegenerateDerivative as exc:
        return LargeTimeReport(spec.name, math.nan, None, INCONCLUSIVE, notes=notes + [str(exc)])
    lam = float(lam_exact)
    notes.append(f"lambda = {lam_exact} = {lam:.6g}")

    if lam < 0:
        return LargeTimeReport(spec.name, lam, lam_exact, SWEEPING, notes=notes)
    if lam == 0:
        return LargeTimeReport(spec.name, lam, lam_exact, INCONCLUSIVE,
                               notes=notes + ["lambda = 0 is not covered by the dichotomy"])

    try:
        pair = stationary_pair(spec, grid=grid)
    except (SingularInterior, ConstraintViolation) as exc:
        return LargeTimeReport(spec.name, lam, lam_exact, INCONCLUSIVE, notes=notes + [str(exc)])
    kappa, v_star = kappa_and_vstar(pair)
    if v_star is None:
        return LargeTimeReport(spec.name, lam, lam_exact, INCONCLUSIVE, kappa,
                               notes=notes + ["f0 + f1 is not integrable"])
    if not holds:
        notes.append("predicted mean (rotating): g_theta(theta - omega t) (f0 + f1)(r) / kappa"
                     if spec.is_polar else "stationary pair exists but stability is not established")
        return LargeTimeReport(spec.name, lam, lam_exact, INCONCLUSIVE, kappa, v_star, notes)
    return LargeTimeReport(spec.name, lam, lam_exact, STABLE, kappa, v_star, notes)


def hopf_radial_vstar(spec: ModelSpec) -> VStar:
    """
    Radial stationary density (f0 + f1)(r) / kappa of a Hopf model.

    This is the pitchfork V* with alpha_i = mu_i; its mass_in(0, a) is the
    mass of V*(theta, r) over the annulus.
    """
    if not spec.is_polar:
        raise ConstraintViolation("Hopf densities need a polar model")
    if lambda_exact(spec) < 0:
        raise NegativeLambda(f"{spec.name}: lambda < 0, the mean at large time is zero")
    _, v_star = kappa_and_vstar(stationary_pair(spec), strict=True)
    return v_star


def hopf_vstar(spec: ModelSpec, grid2d: Grid2D) -> np.ndarray:
    """
    V*(theta, r) = (f0 + f1)(r) / (2 pi kappa) on a polar grid (measure d(theta) dr).

    Uniform in theta; the radial part is the pitchfork V* with alpha_i = mu_i.
    """
    radial = hopf_radial_vstar(spec).sample(grid2d.y)
    return np.tile(radial / (2.0 * math.pi), (grid2d.x.n_cells, 1))


def hopf_rotating_mean(spec: ModelSpec, grid2d: Grid2D, t: float, v_star: VStar = None) -> np.ndarray:
    """
    Predicted mean g_theta(theta - omega t) (f0 + f1)(r) / kappa when omega0 = omega1.

    g_theta is the angular marginal of the initial density.
    """
    omegas = [eval_angular_rate(f, 0.0) for f in spec.fields]
    if omegas[0] != omegas[1]:
        raise ConstraintViolation("the rotating prediction needs omega0 = omega1")
    if spec.g.theta is None:
        raise ConstraintViolation("the rotating prediction needs a product initial density")
    v_star = v_star or hopf_radial_vstar(spec)
    angular = spec.g.theta(np.mod(grid2d.x.centers - omegas[0] * t, 2.0 * math.pi))
    return np.multiply.outer(angular, v_star.sample(grid2d.y))


def window_mass(state: FieldState, grid: Grid1D, window: Tuple[float, float]) -> float:
    """Mass of sum_i V_i inside [lo, hi]."""
    lo, hi = window
    if hi <= lo:
        return 0.0
    return float(np.dot(state.total, grid.window_weights(lo, hi)))


def sweeping_diagnostic(snapshots: Sequence[FieldState], grid: Grid1D,
                        window: Tuple[float, float]) -> SweepingReport:
    """
    Track the mass of V in a compact window across snapshots.

    decreasing: strictly decreasing over all snapshots;
    eventually_decreasing: strictly decreasing over the later half.
    """
    times = tuple(float(s.t) for s in snapshots)
    masses = tuple(window_mass(s, grid, window) for s in snapshots)
    steps = [b < a for a, b in zip(masses[:-1], masses[1:])]
    later = steps[len(steps) // 2:]
    return SweepingReport(
        window=(float(window[0]), float(window[1])),
        times=times,
        masses=masses,
        decreasing=bool(steps) and all(steps),
        eventually_decreasing=bool(later) and all(later),
    )
