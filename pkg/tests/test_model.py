import math

import numpy as np
import pytest
from scipy import integrate

from errors import ConstraintViolation, MissingParam, OutOfDomain
from model import (Domain, InitialDensity, ModelSpec, SwitchingChain, VectorField, build_builtin, build_model,
                   eval_angular_rate, eval_field, eval_field_derivative, stationary_points, validate)


def _spec(q, fields=None, **kwargs):
    fields = fields or (VectorField("pitchfork", {"alpha": 1.0}),) * 2
    g = InitialDensity("smooth_bump", 0.0, 1.0, {"center": 0.5, "width": 0.3})
    return ModelSpec(tuple(fields), SwitchingChain(np.array(q, dtype=float)), Domain("interval", 0.0, 1.0), g,
                     **kwargs)


def test_two_state_chain_fills_diagonal():
    chain = SwitchingChain.two_state(5.0, 3.0)
    assert np.array_equal(chain.q, [[-5.0, 5.0], [3.0, -3.0]])
    assert np.array_equal(chain.exit_rates, [5.0, 3.0])


def test_from_rates_ignores_given_diagonal():
    chain = SwitchingChain.from_rates([[7.0, 1.0, 2.0], [0.5, 0.0, 0.5], [1.0, 1.0, 9.0]])
    assert np.allclose(chain.q.sum(axis=1), 0.0)
    assert chain.q[0, 0] == -3.0
    assert np.allclose(chain.jump_probabilities(0), [0.0, 1 / 3, 2 / 3])


def test_transcritical_values():
    f = VectorField("transcritical", {"beta": 4.0, "c": 2.0, "mu": 2.0})
    assert eval_field(f, 0.5) == pytest.approx(0.5)
    assert eval_field(f, 1.0) == pytest.approx(0.0)
    assert eval_field_derivative(f, 0.0) == pytest.approx(2.0)
    assert eval_field_derivative(f, 0.5) == pytest.approx(0.0)


def test_field_evaluation_keeps_shape():
    f = VectorField("goodwin", {"gamma": 0.25, "n": 2})
    x = np.linspace(0.1, 2.0, 12).reshape(3, 4)
    assert eval_field(f, x).shape == (3, 4)
    assert eval_field_derivative(f, x).shape == (3, 4)
    assert isinstance(eval_field(f, 0.3), float)


def test_polynomial_derivative_of_constant_is_array():
    f = VectorField("polynomial", {"coeffs": [2.0]})
    assert np.array_equal(eval_field_derivative(f, np.zeros(5)), np.zeros(5))


def test_domain_check():
    f = VectorField("pitchfork", {"alpha": 1.0})
    with pytest.raises(OutOfDomain):
        eval_field(f, [0.5, 1.5], domain=Domain("interval", 0.0, 1.0))


def test_angular_rate_only_for_hopf():
    hopf = VectorField("hopf_polar", {"omega": 2.0, "mu": 1.0, "b": 0.0})
    assert eval_angular_rate(hopf, 0.7) == 2.0
    with pytest.raises(ConstraintViolation):
        eval_angular_rate(VectorField("pitchfork", {"alpha": 1.0}), 0.5)


@pytest.mark.parametrize("field, expected", [
    (VectorField("transcritical", {"beta": 4.0, "c": 2.0, "mu": 2.0}), [1.0]),
    (VectorField("transcritical", {"beta": 1.0, "c": 2.0, "mu": 2.0}), []),
    (VectorField("pitchfork", {"alpha": 1.0}), [1.0]),
    (VectorField("pitchfork", {"alpha": -0.5}), []),
    (VectorField("goodwin", {"gamma": 0.25, "n": 2}), [2.0 - math.sqrt(3.0), 2.0 + math.sqrt(3.0)]),
    (VectorField("goodwin", {"gamma": 2.0, "n": 2}), []),
    (VectorField("polynomial", {"coeffs": [0.0, 2.0, -1.0]}), [2.0]),
    (VectorField("polynomial", {"coeffs": [0.0]}), []),
])
def test_stationary_points(field, expected):
    assert stationary_points(field) == pytest.approx(expected)


def test_validate_accepts_a_good_model():
    assert validate(_spec([[-1.0, 1.0], [2.0, -2.0]])) == []


def test_validate_reports_chain_problems():
    codes = {d.code for d in validate(_spec([[-1.0, 1.0], [-2.0, 1.0]]))}
    assert "NegativeRate" in codes
    assert "RowSumNonzero" in codes
    assert "AbsorbingState" in codes


def test_validate_reports_field_count_and_initial_state():
    spec = _spec([[-1.0, 0.5, 0.5], [1.0, -1.0, 0.0], [1.0, 0.0, -1.0]], initial_state=5)
    codes = {d.code for d in validate(spec)}
    assert codes >= {"FieldCountMismatch", "InitialStateOutOfRange"}


def test_validate_rejects_bad_initial_weights():
    codes = {d.code for d in validate(_spec([[-1.0, 1.0], [1.0, -1.0]], initial_weights=(0.7, 0.7)))}
    assert codes == {"InitialLawInvalid"}


def test_validate_hopf_needs_zero_b():
    hopf = VectorField("hopf_polar", {"omega": 1.0, "mu": 1.0, "b": 0.3})
    spec = ModelSpec((hopf, hopf), SwitchingChain.two_state(1.0, 1.0), Domain("polar_annulus", 0.0, 1.0),
                     InitialDensity("smooth_bump", 0.0, 1.0, {"center": 0.5, "width": 0.3}))
    codes = {d.code for d in validate(spec)}
    assert "HopfBNonzero" in codes
    assert "DensityKindMismatch" not in codes


@pytest.mark.parametrize("kind, params", [
    ("smooth_bump", {"center": 0.5, "width": 0.4}),
    ("truncated_gaussian", {"mean": 0.4, "sd": 0.1}),
    ("grid_samples", {"nodes": [0.1, 0.3, 0.9], "values": [0.0, 2.0, 0.0]}),
])
def test_initial_density_is_normalised(kind, params):
    g = InitialDensity(kind, 0.0, 1.0, params)
    mass, _ = integrate.quad(g, 0.0, 1.0, points=[0.1, 0.3, 0.9], limit=200)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert g(1.5) == 0.0


def test_initial_density_without_mass_is_rejected():
    with pytest.raises(ConstraintViolation):
        InitialDensity("smooth_bump", 0.0, 1.0, {"center": 3.0, "width": 0.5})


@pytest.mark.parametrize("kind, params", [
    ("smooth_bump", {"center": 0.5, "width": 0.4}),
    ("truncated_gaussian", {"mean": 0.4, "sd": 0.1}),
    ("grid_samples", {"nodes": [0.1, 0.3, 0.9], "values": [0.0, 2.0, 0.0]}),
])
def test_cell_averages_carry_cell_masses(kind, params):
    g = InitialDensity(kind, 0.0, 1.0, params)
    edges = np.linspace(1e-4, 1.0, 65)
    widths = np.diff(edges)
    cells = g.cell_averages(edges) * widths
    assert np.all(cells >= 0.0)
    assert cells.sum() == pytest.approx(g.mass_in(1e-4, 1.0), abs=1e-12)
    assert cells.sum() <= 1.0 + 1e-12
    assert cells[40] == pytest.approx(g.mass_in(edges[40], edges[41]), rel=1e-4)
    assert g.mass_in(0.7, 0.2) == 0.0


def test_product_cell_averages():
    hopf = VectorField("hopf_polar", {"omega": 1.0, "mu": 1.0, "b": 0.0})
    spec = build_model([hopf, hopf], SwitchingChain.two_state(4.0, 2.0), {"x_lo": 1e-4, "x_hi": 1.0})
    theta_edges = np.linspace(0.0, 2 * math.pi, 33)
    r_edges = np.linspace(1e-4, 1.0, 17)
    averages = spec.g.cell_averages(theta_edges, r_edges)
    assert averages.shape == (32, 16)
    mass = (averages * np.outer(np.diff(theta_edges), np.diff(r_edges))).sum()
    assert mass <= 1.0 + 1e-12
    assert mass == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(MissingParam):
        spec.g.cell_averages(theta_edges)
    with pytest.raises(ConstraintViolation):
        spec.g.mass_in(0.0, 1.0)


def test_build_builtin_transcritical():
    spec = build_builtin("transcritical", {"q0": 5, "q1": 3, "beta0": 1, "beta1": 4, "c": 2, "mu": 2})
    assert spec.n_states == 2
    assert spec.domain.hi == pytest.approx(1.5)
    assert np.array_equal(spec.initial_law(), [1.0, 0.0])


def test_build_builtin_missing_parameter():
    with pytest.raises(MissingParam, match="beta1"):
        build_builtin("transcritical", {"q0": 5, "q1": 3, "beta0": 1, "c": 2, "mu": 2})


def test_build_builtin_goodwin_needs_integer_exponent():
    with pytest.raises(ConstraintViolation):
        build_builtin("goodwin", {"q0": 6, "q1": 2, "gamma0": 2, "gamma1": 0.25, "n": 2.5})


def test_build_builtin_unknown_name():
    with pytest.raises(ConstraintViolation):
        build_builtin("lorenz", {"q0": 1, "q1": 1})


def test_build_model_hopf_has_product_density():
    hopf = VectorField("hopf_polar", {"omega": 1.0, "mu": 1.0, "b": 0.0})
    spec = build_model([hopf, hopf], SwitchingChain.two_state(4.0, 2.0), {"x_lo": 1e-4, "x_hi": 1.0})
    assert spec.is_polar
    assert spec.g.kind == "product_of_marginals"
    theta = np.linspace(0.0, 2 * math.pi, 5)
    assert spec.g(theta, 0.5).shape == (5,)


def test_build_model_mixed_weights():
    spec = build_model([VectorField("pitchfork", {"alpha": 1.0})] * 2, SwitchingChain.two_state(1.0, 1.0),
                       {"initial_weights": [0.25, 0.75]})
    assert np.array_equal(spec.initial_law(), [0.25, 0.75])
