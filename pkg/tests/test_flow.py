import math

import numpy as np
import pytest

from errors import ConstraintViolation, Diverged
from flow import IntegratorConfig, advance, advance_polar, backward, flow_switching, rk4_step
from model import Domain, VectorField

PITCHFORK = VectorField("pitchfork", {"alpha": 1.0})


def pitchfork_exact(x0, t):
    return x0 * math.exp(t) / math.sqrt(1.0 + x0 * x0 * (math.exp(2.0 * t) - 1.0))


def test_advance_matches_closed_form():
    result = advance(PITCHFORK, 0.5, 2.0)
    assert result.endpoint == pytest.approx(pitchfork_exact(0.5, 2.0), abs=1e-10)
    assert not result.exited


def test_rk4_is_fourth_order():
    exact = pitchfork_exact(0.5, 2.0)
    coarse = abs(advance(PITCHFORK, 0.5, 2.0, IntegratorConfig(base_step=0.25)).endpoint - exact)
    fine = abs(advance(PITCHFORK, 0.5, 2.0, IntegratorConfig(base_step=0.125)).endpoint - exact)
    assert 10.0 <= coarse / fine <= 22.0


def test_jacobian_matches_finite_differences():
    h = 1e-5
    for x0 in (0.1, 0.5, 0.9):
        fd = (advance(PITCHFORK, x0 + h, 1.5).endpoint - advance(PITCHFORK, x0 - h, 1.5).endpoint) / (2 * h)
        assert advance(PITCHFORK, x0, 1.5).jacobian == pytest.approx(fd, abs=1e-5)


def test_backward_inverts_advance():
    f = VectorField("transcritical", {"beta": 4.0, "c": 2.0, "mu": 2.0})
    x0 = np.array([0.05, 0.3, 0.8])
    forward = advance(f, x0, 0.7)
    back = backward(f, forward.endpoint, 0.7)
    assert np.allclose(back.endpoint, x0, atol=1e-9)
    assert np.allclose(forward.log_jacobian + back.log_jacobian, 0.0, atol=1e-8)


def test_stationary_point_stays_put():
    result = advance(PITCHFORK, 1.0, 3.0)
    assert result.endpoint == 1.0
    assert result.log_jacobian == pytest.approx(-6.0)


def test_zero_time_is_identity():
    result = advance(PITCHFORK, np.array([0.2, 0.4]), 0.0)
    assert np.array_equal(result.endpoint, [0.2, 0.4])
    assert np.array_equal(result.log_jacobian, [0.0, 0.0])


def test_leaving_the_domain_is_flagged():
    growth = VectorField("polynomial", {"coeffs": [0.0, 1.0]})
    result = advance(growth, np.array([0.2, 0.5]), 1.0, domain=Domain("interval", 0.0, 1.0))
    assert result.exited.tolist() == [False, True]
    assert result.endpoint[0] == pytest.approx(0.2 * math.e, rel=1e-9)


def test_blow_up_raises_diverged():
    # x' = x^2 overflows within the first stage from a huge start
    square = VectorField("polynomial", {"coeffs": [0.0, 0.0, 1.0]})
    with pytest.raises(Diverged):
        advance(square, 1e200, 1.0, IntegratorConfig(base_step=0.5))
    with pytest.raises(Diverged):
        backward(square, -1e200, 1.0, IntegratorConfig(base_step=0.5))
    assert advance(square, np.array([0.1, 0.2]), 1.0).endpoint == pytest.approx([0.1 / 0.9, 0.2 / 0.8], rel=1e-8)


def test_negative_time_rejected():
    with pytest.raises(ConstraintViolation):
        advance(PITCHFORK, 0.5, -1.0)


def test_bad_integrator_config():
    with pytest.raises(ConstraintViolation):
        IntegratorConfig(base_step=0.0)
    assert IntegratorConfig(base_step=0.1).substeps(0.05) == 1


def test_advance_polar_rotates_exactly():
    hopf = VectorField("hopf_polar", {"omega": 2.0, "mu": 1.0, "b": 0.0})
    result = advance_polar(hopf, 6.0, 0.5, 1.0)
    theta, r = result.endpoint
    assert theta == pytest.approx(math.fmod(8.0, 2 * math.pi))
    assert r == pytest.approx(pitchfork_exact(0.5, 1.0), abs=1e-10)


def test_rk4_step_merges_same_family_fields():
    fields = [VectorField("pitchfork", {"alpha": -0.5}), PITCHFORK]
    x = np.array([[0.3, 0.6], [0.3, 0.6]])
    states = np.array([[0], [1]])
    merged, dlog = rk4_step(fields, states, x, 0.01)
    single0, _ = rk4_step([fields[0]], None, x[0], 0.01)
    single1, _ = rk4_step([fields[1]], None, x[1], 0.01)
    assert np.allclose(merged[0], single0, rtol=0, atol=1e-15)
    assert np.allclose(merged[1], single1, rtol=0, atol=1e-15)
    assert dlog.shape == x.shape


def test_flow_switching_follows_segments():
    fields = [VectorField("pitchfork", {"alpha": -0.5}), PITCHFORK]
    cfg = IntegratorConfig(base_step=0.01)
    x, log_jac, exited = flow_switching(fields, [[(0, 0.25), (1, 0.5)]], np.array([[0.4, 0.7]]), cfg,
                                        (-10.0, 10.0), direction=1.0)
    first = advance(fields[0], np.array([0.4, 0.7]), 0.25, cfg)
    second = advance(fields[1], first.endpoint, 0.5, cfg)
    assert np.allclose(x[0], second.endpoint, atol=1e-12)
    assert np.allclose(log_jac[0], first.log_jacobian + second.log_jacobian, atol=1e-12)
    assert not exited.any()


def test_flow_switching_freezes_exited_points():
    growth = VectorField("polynomial", {"coeffs": [0.0, 2.0]})
    x, _, exited = flow_switching([growth], [[(0, 1.0)]], np.array([[0.1, 0.5]]),
                                  IntegratorConfig(base_step=0.01), (0.0, 1.0), direction=1.0)
    assert exited[0].tolist() == [False, True]
    assert x[0, 1] <= 1.0
