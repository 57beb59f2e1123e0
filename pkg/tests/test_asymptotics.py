from fractions import Fraction

import numpy as np
import pytest

from asymptotics import (INCONCLUSIVE, STABLE, SWEEPING, classify, fold_condition, hopf_radial_vstar,
                         hopf_rotating_mean, hopf_vstar, hormander_1d, kappa_and_vstar, lambda_exact, lambda_rate,
                         pitchfork_density, stationary_pair, support_endpoint, sweeping_diagnostic,
                         transcritical_density, window_mass)
from config import load_preset
from errors import ConstraintViolation, DegenerateDerivative, NotIntegrable, NotTwoState, SingularInterior
from fpe import FieldState, Grid1D, Grid2D, SolverConfig, l1_distance, solve_moment, solve_polar_moment
from model import SwitchingChain, VectorField, build_model


@pytest.mark.parametrize("preset, expected", [
    ("fig1", Fraction(7, 8)),
    ("fig2a", Fraction(-1, 4)),
    ("fig3", Fraction(1, 2)),
    ("fig2c", Fraction(1, 2)),
])
def test_lambda_is_exact(preset, expected):
    assert lambda_exact(load_preset(preset).spec) == expected


def test_lambda_rate_agrees_with_exact(fig1):
    assert lambda_rate(fig1) == pytest.approx(0.875, abs=1e-15)


def test_lambda_needs_nonzero_slopes():
    flat = build_model([VectorField("polynomial", {"coeffs": [0.0, 0.0, -1.0]}),
                        VectorField("pitchfork", {"alpha": 1.0})],
                       SwitchingChain.two_state(1.0, 1.0), {"x_hi": 1.0})
    with pytest.raises(DegenerateDerivative):
        lambda_exact(flat)


def test_lambda_needs_two_states():
    spec = build_model([VectorField("pitchfork", {"alpha": 1.0})] * 3,
                       SwitchingChain.from_rates([[0, 1, 1], [1, 0, 1], [1, 1, 0]]), {"x_hi": 1.0})
    with pytest.raises(NotTwoState):
        lambda_exact(spec)
    assert classify(spec).verdict == INCONCLUSIVE


@pytest.mark.parametrize("preset, verdict", [
    ("fig1", STABLE),
    ("fig2a", SWEEPING),
    ("fig2b", SWEEPING),
    ("fig3", STABLE),
])
def test_classify_presets(preset, verdict):
    report = classify(load_preset(preset).spec)
    assert report.verdict == verdict
    if verdict == STABLE:
        assert report.v_star is not None
        assert np.isfinite(report.kappa)


def test_classify_rigid_rotation_is_inconclusive(hopf):
    report = classify(hopf)
    assert report.verdict == INCONCLUSIVE
    assert report.lam_exact == Fraction(1, 2)
    assert any("rotating" in note for note in report.notes)


def test_hormander_detects_identical_fields():
    same = build_model([VectorField("pitchfork", {"alpha": 1.0})] * 2, SwitchingChain.two_state(1.0, 1.0),
                       {"x_hi": 1.0})
    holds, note = hormander_1d(same)
    assert not holds
    assert "interval" in note


def test_fold_condition():
    assert fold_condition(2.0, 2)
    assert not fold_condition(0.25, 2)
    assert not fold_condition(0.5, 2)
    with pytest.raises(ConstraintViolation):
        fold_condition(0.5, 1)


def test_support_endpoint(fig1, fig3):
    assert support_endpoint(fig1) == pytest.approx(1.0)
    assert support_endpoint(fig3) == pytest.approx(1.0)
    assert support_endpoint(load_preset("fig2b").spec) == pytest.approx(2.0 + np.sqrt(3.0))


@pytest.mark.parametrize("preset, closed", [("fig1", transcritical_density), ("fig3", pitchfork_density)])
def test_stationary_pair_matches_closed_form(preset, closed):
    spec = load_preset(preset).spec
    grid = Grid1D(1024, 1e-4, 1.0)
    pair = stationary_pair(spec, grid=grid)
    mask = (grid.centers >= 0.05 * pair.a) & (grid.centers <= 0.95 * pair.a)
    exact = closed(spec, grid.centers)
    scale = pair.f0[mask].sum() / exact[0][mask].sum()
    for sampled, reference in zip((pair.f0, pair.f1), exact):
        assert np.max(np.abs(sampled[mask] / (scale * reference[mask]) - 1.0)) <= 1e-6


@pytest.mark.parametrize("preset", ["fig1", "fig3"])
def test_vstar_is_a_density(preset):
    pair = stationary_pair(load_preset(preset).spec)
    kappa, v_star = kappa_and_vstar(pair)
    assert np.isfinite(kappa) and kappa > 0
    assert v_star.mass_in(0.0, pair.a) == pytest.approx(1.0, abs=1e-6)
    assert v_star(1.5) == 0.0


def test_kappa_independent_of_x0(fig1):
    k_mid, _ = kappa_and_vstar(stationary_pair(fig1))
    k_low, v_low = kappa_and_vstar(stationary_pair(fig1, x0=0.2))
    _, v_mid = kappa_and_vstar(stationary_pair(fig1))
    assert v_low(0.37) == pytest.approx(v_mid(0.37), rel=1e-8)
    assert k_low != pytest.approx(k_mid)


def test_sweeping_pair_is_not_integrable(fig2a):
    pair = stationary_pair(fig2a)
    assert kappa_and_vstar(pair) == (np.inf, None)
    with pytest.raises(NotIntegrable):
        kappa_and_vstar(pair, strict=True)


def test_interior_zero_is_rejected():
    spec = build_model([VectorField("pitchfork", {"alpha": 0.25}), VectorField("pitchfork", {"alpha": 1.0})],
                       SwitchingChain.two_state(1.0, 1.0), {"x_hi": 1.0})
    with pytest.raises(SingularInterior):
        stationary_pair(spec)


def test_mirrored_pitchfork_density(fig3):
    x = np.array([0.2, 0.6])
    direct = pitchfork_density(fig3, x)
    mirrored = pitchfork_density(fig3, -x, mirror=True)
    assert np.allclose(direct[0], mirrored[0])
    assert np.allclose(direct[1], mirrored[1])


def test_window_mass_and_sweeping_report():
    grid = Grid1D(16, 0.0, 1.0)
    snapshots = [FieldState(t, np.full((2, 16), m / 2.0), grid.dx) for t, m in ((0.0, 1.0), (1.0, 0.5), (2.0, 0.2))]
    assert window_mass(snapshots[0], grid, (0.25, 0.75)) == pytest.approx(0.5)
    assert window_mass(snapshots[0], grid, (0.75, 0.25)) == 0.0
    report = sweeping_diagnostic(snapshots, grid, (0.0, 1.0))
    assert report.masses == pytest.approx((1.0, 0.5, 0.2))
    assert report.decreasing and report.eventually_decreasing
    assert report.final_mass == pytest.approx(0.2)


@pytest.mark.parametrize("preset, window", [("fig2a", (0.1, 0.9)), ("fig2b", None)])
def test_window_mass_decays_in_sweeping_presets(preset, window):
    cfg = load_preset(preset)
    snapshots = solve_moment(cfg.spec, cfg.grid, cfg.solver)
    report = sweeping_diagnostic(snapshots, cfg.grid, window or cfg.window)
    assert [round(t, 6) for t in report.times] == [0.25, 1.0, 5.0]
    assert report.decreasing
    assert report.final_mass < report.masses[0]
    if preset == "fig2b":
        assert report.final_mass < 0.2


@pytest.mark.slow
@pytest.mark.parametrize("preset, t, bound", [("fig1", 2.5, 0.05), ("fig3", 10.0, 0.1)])
def test_moment_converges_to_vstar(preset, t, bound):
    spec = load_preset(preset).spec
    grid = Grid1D(1024, 1e-4, 1.0)
    snap = solve_moment(spec, grid, SolverConfig(t_end=t))[-1]
    assert l1_distance(snap.total, classify(spec, grid).v_star.sample(grid), grid.dx) <= bound


def test_hopf_vstar_is_uniform_in_theta(hopf):
    grid2d = Grid2D.polar(32, 256, 1e-4, 1.0)
    surface = hopf_vstar(hopf, grid2d)
    assert surface.shape == (32, 256)
    assert np.array_equal(surface[0], surface[7])
    assert np.max(np.abs(surface[:, 100] / surface[0, 100] - 1.0)) <= 1e-12


def test_hopf_radial_vstar_is_normalised(hopf, fig3):
    radial = hopf_radial_vstar(hopf)
    assert radial.mass_in(0.0, radial.pair.a) == pytest.approx(1.0, abs=1e-6)
    _, pitchfork = kappa_and_vstar(stationary_pair(fig3))
    r = np.linspace(0.05, 0.95, 7)
    assert radial(r) == pytest.approx(pitchfork(r), rel=1e-8)


def test_rotating_mean_integrates_to_one(hopf):
    grid2d = Grid2D.polar(128, 256, 1e-4, 1.0)
    mean = hopf_rotating_mean(hopf, grid2d, 2.0)
    assert mean.shape == (128, 256)
    assert mean.sum() * grid2d.cell_area == pytest.approx(1.0, abs=0.02)


@pytest.mark.slow
def test_rotating_mean_matches_polar_solve(hopf):
    grid2d = load_preset("hopf-rotating").polar_grid
    snap = solve_polar_moment(hopf, grid2d, SolverConfig(t_end=5.0))[-1]
    predicted = hopf_rotating_mean(hopf, grid2d, 5.0)
    assert l1_distance(snap.total, predicted, grid2d.cell_area) <= 0.1


def test_vstar_is_a_fixed_point_of_one_step(fig1):
    grid = Grid1D(1024, 1e-4, 1.0)
    v_star = classify(fig1, grid).v_star
    start = FieldState(0.0, np.vstack(v_star.per_state(grid.centers)), grid.dx)
    # shorter than the CFL step, so exactly one update
    step = solve_moment(fig1, grid, SolverConfig(t_end=1e-4), init=start)[-1]
    assert l1_distance(step.values, start.values, grid.dx) <= 0.02


@pytest.mark.slow
def test_window_mass_approaches_vstar_mass(fig1):
    grid = Grid1D(1024, 1e-4, 1.0)
    snap = solve_moment(fig1, grid, SolverConfig(t_end=10.0))[-1]
    v_star = classify(fig1, grid).v_star
    assert window_mass(snap, grid, (0.1, 0.9)) == pytest.approx(v_star.mass_in(0.1, 0.9), abs=0.02)
