#!/usr/bin/env python3
"""
Problem definitions for evolution equations in a switching environment.

A model couples one vector field b_i per environmental state with a
continuous-time Markov chain on the states, a spatial domain and an
initial density. This module defines those pieces, validates them and
builds the shipped bifurcation examples:
- transcritical population model with two birth rates
- Goodwin operon model (fold bifurcation)
- pitchfork normal form
- Hopf normal form in polar coordinates
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from errors import ConstraintViolation, MissingParam, OutOfDomain


FAMILY_PARAMS = {
    "transcritical": ("beta", "c", "mu"),
    "goodwin": ("gamma", "n"),
    "pitchfork": ("alpha",),
    "hopf_polar": ("omega", "mu", "b"),
    "polynomial": ("coeffs",),
}

MAX_POLYNOMIAL_DEGREE = 6

# Left end of truncated domains; several stationary densities are
# singular or degenerate at 0.
DEFAULT_EPSILON = 1e-4

TWO_PI = 2.0 * math.pi

# Gauss-Legendre nodes per cell for initial cell averages.
CELL_GAUSS_ORDER = 8


@dataclass(frozen=True)
class VectorField:
    """One vector field b_i of the switching family."""

    family: str
    params: Dict[str, Any]

    def __call__(self, x):
        return eval_field(self, x)

    @property
    def is_polar(self) -> bool:
        return self.family == "hopf_polar"


@dataclass(frozen=True, eq=False)
class SwitchingChain:
    """Intensity matrix Q = [q_ij] of the environmental Markov chain."""

    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.array(self.q, dtype=float))

    @classmethod
    def two_state(cls, q0: float, q1: float) -> "SwitchingChain":
        """Chain on {0, 1} switching 0->1 at rate q0 and 1->0 at rate q1."""
        return cls(np.array([[-q0, q0], [q1, -q1]], dtype=float))

    @classmethod
    def from_rates(cls, rates: Sequence[Sequence[float]]) -> "SwitchingChain":
        """Build Q from off-diagonal rates; the diagonal is filled in."""
        q = np.array(rates, dtype=float)
        np.fill_diagonal(q, 0.0)
        np.fill_diagonal(q, -q.sum(axis=1))
        return cls(q)

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        """q_i = sum over j != i of q_ij."""
        off = self.q.copy()
        np.fill_diagonal(off, 0.0)
        return off.sum(axis=1)

    def jump_probabilities(self, i: int) -> np.ndarray:
        """Probability q_ij / q_i of jumping from i to each j."""
        row = self.q[i].copy()
        row[i] = 0.0
        return row / row.sum()


@dataclass(frozen=True)
class Domain:
    """Spatial domain: an interval (lo, hi) or the polar annulus S^1 x (lo, hi)."""

    kind: str = "interval"
    lo: float = 0.0
    hi: float = 1.0

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def is_polar(self) -> bool:
        return self.kind == "polar_annulus"

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.lo) & (x <= self.hi)


@dataclass(frozen=True)
class InitialDensity:
    """
    Initial density g, normalised at construction time.

    Kinds:
        grid_samples: params nodes, values (piecewise linear)
        smooth_bump: params center, width (C-infinity bump)
        truncated_gaussian: params mean, sd
        product_of_marginals: theta and radial marginals (Hopf case)
    """

    kind: str
    lo: float = 0.0
    hi: float = 1.0
    params: Dict[str, Any] = field(default_factory=dict)
    theta: Optional["InitialDensity"] = None
    radial: Optional["InitialDensity"] = None
    scale: float = field(init=False, default=1.0)

    def __post_init__(self):
        if self.kind == "product_of_marginals":
            if self.theta is None or self.radial is None:
                raise MissingParam("product_of_marginals needs theta and radial marginals")
            return
        if self.kind not in ("grid_samples", "smooth_bump", "truncated_gaussian"):
            raise ConstraintViolation(f"Unknown initial density kind: {self.kind}")
        total = self._raw_integral()
        if not np.isfinite(total) or total <= 0.0:
            raise ConstraintViolation(f"Initial density '{self.kind}' has no mass on [{self.lo}, {self.hi}]")
        object.__setattr__(self, "scale", 1.0 / total)

    def _support(self) -> Tuple[float, float]:
        if self.kind == "smooth_bump":
            c, w = self.params["center"], self.params["width"]
            return max(self.lo, c - w), min(self.hi, c + w)
        if self.kind == "grid_samples":
            nodes = np.asarray(self.params["nodes"], dtype=float)
            return max(self.lo, nodes[0]), min(self.hi, nodes[-1])
        return self.lo, self.hi

    def _raw(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "smooth_bump":
            z = (x - self.params["center"]) / self.params["width"]
            inside = np.abs(z) < 1.0
            out = np.zeros_like(x)
            out[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
            return out
        if self.kind == "truncated_gaussian":
            z = (x - self.params["mean"]) / self.params["sd"]
            return np.exp(-0.5 * z * z)
        nodes = np.asarray(self.params["nodes"], dtype=float)
        values = np.asarray(self.params["values"], dtype=float)
        return np.interp(x, nodes, values, left=0.0, right=0.0)

    def _raw_integral(self, lo: float = -math.inf, hi: float = math.inf) -> float:
        a, b = self._support()
        a, b = max(a, lo), min(b, hi)
        if b <= a:
            return 0.0
        if self.kind == "grid_samples":
            nodes = np.asarray(self.params["nodes"], dtype=float)
            inner = nodes[(nodes > a) & (nodes < b)]
            pts = np.concatenate(([a], inner, [b]))
            return float(integrate.trapezoid(self._raw(pts), pts))
        value, _ = integrate.quad(
            lambda s: float(self._raw(np.array([s]))[0]), a, b,
            epsabs=1e-14, epsrel=1e-13, limit=200,
        )
        return value

    def mass_in(self, a: float, b: float) -> float:
        """Exact mass of g on [a, b] (1D kinds only)."""
        if self.kind == "product_of_marginals":
            raise ConstraintViolation("mass_in needs a one-dimensional density")
        return self.scale * self._raw_integral(a, b)

    def cell_averages(self, edges, radial_edges=None) -> np.ndarray:
        """
        Average of g over each cell of a grid with the given edges.

        Each cell is integrated by Gauss-Legendre and the result is rescaled
        to the exact mass over the span, so sum(avg * width) never exceeds 1.
        A product density takes theta edges and radial edges and returns the
        outer product of its marginals' averages.
        """
        if self.kind == "product_of_marginals":
            if radial_edges is None:
                raise MissingParam("product_of_marginals cell averages need radial edges")
            return np.outer(self.theta.cell_averages(edges), self.radial.cell_averages(radial_edges))
        edges = np.asarray(edges, dtype=float)
        widths = np.diff(edges)
        nodes, weights = np.polynomial.legendre.leggauss(CELL_GAUSS_ORDER)
        mid = 0.5 * (edges[:-1] + edges[1:])
        points = mid[:, None] + 0.5 * widths[:, None] * nodes[None, :]
        cells = 0.5 * widths * (self(points) @ weights)
        approx = float(cells.sum())
        exact = min(1.0, self.mass_in(edges[0], edges[-1]))
        if approx > 0.0:
            cells *= exact / approx
        return cells / widths

    def __call__(self, x, r=None):
        """Evaluate g(x), or g(theta, r) for a product density."""
        if self.kind == "product_of_marginals":
            theta = np.mod(np.asarray(x, dtype=float), TWO_PI)
            return self.theta(theta) * self.radial(r)
        x = np.asarray(x, dtype=float)
        values = self.scale * self._raw(np.atleast_1d(x).astype(float))
        values = np.where((np.atleast_1d(x) >= self.lo) & (np.atleast_1d(x) <= self.hi), values, 0.0)
        return values.reshape(x.shape) if x.ndim else float(values[0])


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full problem: fields, switching chain, domain, initial density and state."""

    fields: Tuple[VectorField, ...]
    chain: SwitchingChain
    domain: Domain
    g: InitialDensity
    initial_state: int = 0
    initial_weights: Optional[Tuple[float, ...]] = None
    name: str = "custom"

    @property
    def n_states(self) -> int:
        return len(self.fields)

    @property
    def is_polar(self) -> bool:
        return self.domain.is_polar

    def initial_law(self) -> np.ndarray:
        """Initial distribution of the chain state (indicator at l by default)."""
        if self.initial_weights is not None:
            return np.asarray(self.initial_weights, dtype=float)
        law = np.zeros(self.n_states)
        law[self.initial_state] = 1.0
        return law


@dataclass(frozen=True)
class Diagnostic:
    """One violated invariant reported by validate()."""

    code: str
    detail: str


def _as_array(x) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _check_domain(x: np.ndarray, domain: Optional[Domain]):
    if domain is not None and not np.all(domain.contains(x)):
        raise OutOfDomain(f"Point(s) outside [{domain.lo}, {domain.hi}]")


def eval_field(f: VectorField, x, domain: Optional[Domain] = None):
    """
    Evaluate b(x); for the Hopf field this is the radial component.

    Args:
        f: Vector field
        x: Point or array of points
        domain: When given, every point must lie in it

    Returns:
        b(x) with the shape of x
    """
    arr, scalar = _as_array(x)
    _check_domain(arr, domain)
    p = f.params
    if f.family == "transcritical":
        out = (p["beta"] - p["c"] * arr) * arr - p["mu"] * arr
    elif f.family == "goodwin":
        xn = arr ** int(p["n"])
        out = xn / (1.0 + xn) - p["gamma"] * arr
    elif f.family == "pitchfork":
        out = p["alpha"] * arr - arr ** 3
    elif f.family == "hopf_polar":
        out = p["mu"] * arr - arr ** 3
    elif f.family == "polynomial":
        out = np.polynomial.polynomial.polyval(arr, np.asarray(p["coeffs"], dtype=float))
    else:
        raise ConstraintViolation(f"Unknown vector field family: {f.family}")
    return float(out) if scalar else out


def eval_field_derivative(f: VectorField, x, domain: Optional[Domain] = None):
    """Evaluate b'(x) (radial derivative for the Hopf field)."""
    arr, scalar = _as_array(x)
    _check_domain(arr, domain)
    p = f.params
    if f.family == "transcritical":
        out = p["beta"] - 2.0 * p["c"] * arr - p["mu"]
    elif f.family == "goodwin":
        n = int(p["n"])
        out = n * arr ** (n - 1) / (1.0 + arr ** n) ** 2 - p["gamma"]
    elif f.family in ("pitchfork", "hopf_polar"):
        rate = p["alpha"] if f.family == "pitchfork" else p["mu"]
        out = rate - 3.0 * arr ** 2
    elif f.family == "polynomial":
        coeffs = np.polynomial.polynomial.polyder(np.asarray(p["coeffs"], dtype=float))
        out = np.polynomial.polynomial.polyval(arr, coeffs)
    else:
        raise ConstraintViolation(f"Unknown vector field family: {f.family}")
    if np.ndim(out) == 0 and not scalar:
        out = np.full_like(arr, out)
    return float(out) if scalar else out


def eval_angular_rate(f: VectorField, r):
    """Angular velocity omega + b r^2 of the Hopf field."""
    if not f.is_polar:
        raise ConstraintViolation(f"Field family '{f.family}' has no angular component")
    arr, scalar = _as_array(r)
    out = f.params["omega"] + f.params.get("b", 0.0) * arr ** 2
    return float(out) if scalar else out


def stationary_points(f: VectorField) -> List[float]:
    """
    Positive real stationary points of b (0 is always one and is omitted).

    Returns:
        Sorted list of positive equilibria
    """
    p = f.params
    if f.family == "transcritical":
        roots = [(p["beta"] - p["mu"]) / p["c"]]
    elif f.family in ("pitchfork", "hopf_polar"):
        rate = p["alpha"] if f.family == "pitchfork" else p["mu"]
        roots = [math.sqrt(rate)] if rate > 0 else []
    elif f.family == "goodwin":
        # x (gamma x^n - x^(n-1) + gamma) = 0
        n = int(p["n"])
        poly = np.zeros(n + 1)
        poly[0] = p["gamma"]
        poly[1] = -1.0
        poly[n] += p["gamma"]
        roots = np.roots(poly).tolist()
    elif f.family == "polynomial":
        coeffs = np.trim_zeros(np.asarray(p["coeffs"], dtype=float), "b")
        roots = np.polynomial.polynomial.polyroots(coeffs).tolist() if len(coeffs) > 1 else []
    else:
        raise ConstraintViolation(f"Unknown vector field family: {f.family}")

    positive = []
    for root in roots:
        root = complex(root)
        if abs(root.imag) < 1e-10 and root.real > 1e-12:
            positive.append(root.real)
    return sorted(positive)


def _field_diagnostics(f: VectorField, domain: Domain) -> List[Diagnostic]:
    found = []
    if f.family not in FAMILY_PARAMS:
        return [Diagnostic("UnknownFamily", f"unknown family '{f.family}'")]
    missing = [k for k in FAMILY_PARAMS[f.family] if k not in f.params]
    if missing:
        return [Diagnostic("MissingParam", f"{f.family} lacks {', '.join(missing)}")]

    p = f.params
    if f.family == "transcritical" and not (p["c"] > 0 and p["mu"] > 0):
        found.append(Diagnostic("TranscriticalConstraint", "transcritical needs c > 0 and mu > 0"))
    if f.family == "goodwin":
        n = float(p["n"])
        if not (p["gamma"] > 0):
            found.append(Diagnostic("GoodwinConstraint", "goodwin needs gamma > 0"))
        if not (n.is_integer() and n > 1):
            found.append(Diagnostic("GoodwinConstraint", f"goodwin needs an integer n > 1, got {p['n']}"))
    if f.family == "hopf_polar" and p["b"] != 0:
        found.append(Diagnostic("HopfBNonzero", f"hopf field requires b = 0, got {p['b']}"))
    if f.family == "polynomial" and len(p["coeffs"]) - 1 > MAX_POLYNOMIAL_DEGREE:
        found.append(Diagnostic("DegreeTooHigh", f"polynomial degree capped at {MAX_POLYNOMIAL_DEGREE}"))
    if f.is_polar != domain.is_polar:
        found.append(Diagnostic("DomainKindMismatch", f"{f.family} field on a {domain.kind} domain"))
    if found:
        return found

    if domain.width > 0:
        samples = np.linspace(domain.lo, domain.hi, 9)[1:-1]
        if not (np.all(np.isfinite(eval_field(f, samples)))
                and np.all(np.isfinite(eval_field_derivative(f, samples)))):
            found.append(Diagnostic("NonFiniteField", f"{f.family} is not finite inside the domain"))
    return found


def validate(spec: ModelSpec) -> List[Diagnostic]:
    """
    Check every model invariant.

    Args:
        spec: Model to check

    Returns:
        Empty list when all invariants hold, otherwise one Diagnostic per violation
    """
    diagnostics = []
    q = spec.chain.q

    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        return [Diagnostic("ChainShape", f"intensity matrix must be square, got {q.shape}")]
    if q.shape[0] != len(spec.fields):
        diagnostics.append(Diagnostic(
            "FieldCountMismatch", f"{len(spec.fields)} fields for {q.shape[0]} chain states"))

    off = q.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        diagnostics.append(Diagnostic("NegativeRate", "off-diagonal intensities must be >= 0"))
    scale = max(1.0, float(np.abs(q).max()))
    row_sums = q.sum(axis=1)
    for i, total in enumerate(row_sums):
        if abs(total) > 1e-12 * scale:
            diagnostics.append(Diagnostic("RowSumNonzero", f"row {i} of Q sums to {total:g}"))
    for i, rate in enumerate(off.sum(axis=1)):
        if rate <= 0:
            diagnostics.append(Diagnostic("AbsorbingState", f"state {i} has exit rate {rate:g}"))

    if not 0 <= spec.initial_state < q.shape[0]:
        diagnostics.append(Diagnostic(
            "InitialStateOutOfRange", f"initial state {spec.initial_state} not in [0, {q.shape[0]})"))
    if spec.initial_weights is not None:
        w = np.asarray(spec.initial_weights, dtype=float)
        if w.shape != (q.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            diagnostics.append(Diagnostic("InitialLawInvalid", "initial weights must be a probability vector over I"))

    if spec.domain.width <= 0:
        diagnostics.append(Diagnostic("EmptyDomain", f"domain ({spec.domain.lo}, {spec.domain.hi}) has no width"))
    if spec.domain.lo < 0:
        diagnostics.append(Diagnostic("NegativeDomain", "domain must lie in [0, inf)"))
    if spec.domain.kind not in ("interval", "polar_annulus"):
        diagnostics.append(Diagnostic("UnknownDomainKind", spec.domain.kind))

    kinds = {f.is_polar for f in spec.fields}
    if len(kinds) > 1:
        diagnostics.append(Diagnostic("MixedDomainKinds", "fields mix polar and interval families"))
    for f in spec.fields:
        diagnostics.extend(_field_diagnostics(f, spec.domain))

    if spec.g.kind == "product_of_marginals" and not spec.domain.is_polar:
        diagnostics.append(Diagnostic("DensityKindMismatch", "product density needs a polar domain"))
    return diagnostics


def _require(params: Dict[str, Any], name: str, keys: Sequence[str]):
    missing = [k for k in keys if k not in params]
    if missing:
        raise MissingParam(f"'{name}' requires parameter(s): {', '.join(missing)}")


def _interval_density(params: Dict[str, Any], lo: float, hi: float, a: float,
                      prefix: str = "g") -> InitialDensity:
    kind = params.get(f"{prefix}_kind", "smooth_bump")
    if kind == "smooth_bump":
        return InitialDensity("smooth_bump", lo, hi, {
            "center": float(params.get(f"{prefix}_center", 0.5 * a)),
            "width": float(params.get(f"{prefix}_width", 0.4 * a)),
        })
    if kind == "truncated_gaussian":
        return InitialDensity("truncated_gaussian", lo, hi, {
            "mean": float(params.get(f"{prefix}_mean", 0.5 * a)),
            "sd": float(params.get(f"{prefix}_sd", 0.15 * a)),
        })
    if kind == "grid_samples":
        _require(params, "initial density", [f"{prefix}_nodes", f"{prefix}_values"])
        return InitialDensity("grid_samples", lo, hi, {
            "nodes": list(params[f"{prefix}_nodes"]),
            "values": list(params[f"{prefix}_values"]),
        })
    raise ConstraintViolation(f"Unknown initial density kind: {kind}")


def build_builtin(name: str, params: Dict[str, Any]) -> ModelSpec:
    """
    Build one of the shipped two-state example models.

    Args:
        name: transcritical, goodwin, pitchfork or hopf
        params: q0, q1 and the family coefficients (beta0/beta1/c/mu,
            gamma0/gamma1/n, alpha0/alpha1, omega0/omega1/mu0/mu1/b);
            optional x_lo, x_hi, initial_state, initial_weights and
            g_* keys for the initial density

    Returns:
        Validated ModelSpec
    """
    name = name.replace("-", "_")
    _require(params, name, ["q0", "q1"])
    chain = SwitchingChain.two_state(float(params["q0"]), float(params["q1"]))

    if name == "transcritical":
        _require(params, name, ["beta0", "beta1", "c", "mu"])
        fields = tuple(
            VectorField("transcritical", {"beta": float(params[f"beta{i}"]),
                                          "c": float(params["c"]), "mu": float(params["mu"])})
            for i in (0, 1))
    elif name == "goodwin":
        _require(params, name, ["gamma0", "gamma1"])
        n = params.get("n", 2)
        fields = tuple(VectorField("goodwin", {"gamma": float(params[f"gamma{i}"]), "n": n}) for i in (0, 1))
    elif name == "pitchfork":
        _require(params, name, ["alpha0", "alpha1"])
        fields = tuple(VectorField("pitchfork", {"alpha": float(params[f"alpha{i}"])}) for i in (0, 1))
    elif name in ("hopf", "hopf_polar"):
        _require(params, name, ["mu0", "mu1", "omega0", "omega1"])
        fields = tuple(
            VectorField("hopf_polar", {"omega": float(params[f"omega{i}"]),
                                       "mu": float(params[f"mu{i}"]), "b": float(params.get("b", 0.0))})
            for i in (0, 1))
    else:
        raise ConstraintViolation(f"Unknown builtin model: {name}")

    return build_model(fields, chain, params, name=str(params.get("name", name)))


def build_model(fields: Sequence[VectorField], chain: SwitchingChain, params: Dict[str, Any],
                name: str = "custom") -> ModelSpec:
    """
    Assemble and validate a model from its fields and chain.

    Args:
        fields: One vector field per chain state
        chain: Switching chain
        params: Optional x_lo, x_hi, initial_state, initial_weights and
            g_* / theta_* keys for the initial density
        name: Model name used in logs and reports

    Returns:
        Validated ModelSpec
    """
    fields = tuple(fields)
    for f in fields:
        if f.family not in FAMILY_PARAMS:
            raise ConstraintViolation(f"Unknown vector field family: {f.family}")
        _require(f.params, f.family, FAMILY_PARAMS[f.family])
        # Goodwin n is checked before any evaluation needs an integer power
        if f.family == "goodwin" and not (float(f.params["n"]).is_integer() and float(f.params["n"]) > 1):
            raise ConstraintViolation(f"goodwin needs an integer n > 1, got {f.params['n']}")
    equilibria = [p for f in fields for p in stationary_points(f)]
    a = max(equilibria) if equilibria else 1.0
    lo = float(params.get("x_lo", DEFAULT_EPSILON))
    hi = float(params.get("x_hi", 1.5 * a))

    if fields and fields[0].is_polar:
        domain = Domain("polar_annulus", lo, hi)
        theta = InitialDensity("truncated_gaussian", 0.0, TWO_PI, {
            "mean": float(params.get("theta_mean", math.pi)),
            "sd": float(params.get("theta_sd", 1.0)),
        })
        g = InitialDensity("product_of_marginals", lo, hi, theta=theta,
                           radial=_interval_density(params, lo, hi, a))
    else:
        domain = Domain("interval", lo, hi)
        g = _interval_density(params, lo, hi, a)

    weights = params.get("initial_weights")
    spec = ModelSpec(
        fields=fields,
        chain=chain,
        domain=domain,
        g=g,
        initial_state=int(params.get("initial_state", 0)),
        initial_weights=tuple(float(w) for w in weights) if weights is not None else None,
        name=name,
    )
    diagnostics = validate(spec)
    if diagnostics:
        raise ConstraintViolation("; ".join(f"{d.code}: {d.detail}" for d in diagnostics))
    return spec
