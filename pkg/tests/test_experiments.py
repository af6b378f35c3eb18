import numpy as np
import pytest

from potwell.experiments import *
from potwell.field import eigenvalue, random_field, sine_mode, zeros
from potwell.flow import BlewUp, GlobalDecayed, StepControl, run
from potwell.functionals import energy_J, fibering, lambda_scale, nehari_I
from potwell.well import WellCurve, d_of_delta, nehari_energy, roots_delta

from tests.common import relaxed_control, small_setup, small_well


def test_delta_grid():
    deltas = delta_grid(0.5, 1.5, 4)
    assert np.allclose(deltas, [0.7, 0.9, 1.1, 1.3])
    assert np.all((deltas > 0.5) & (deltas < 1.5))


def test_fit_series():
    t = np.linspace(0.0, 1.0, 20)
    fit = fit_series(t, 3.0 * np.exp(-2.0 * t), 'l2_sq')
    assert fit.slope == pytest.approx(-2.0, rel=1e-10)
    assert fit.intercept == pytest.approx(np.log(3.0), rel=1e-10)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.r_squared_defined
    assert fit.samples == 20
    assert fit.window == (0.0, 1.0)

    flat = fit_series(t, np.ones(20))
    assert flat.slope == 0.0
    assert not flat.r_squared_defined
    assert np.isnan(flat.r_squared)

    with pytest.raises(ValueError):
        fit_series(t[:9], np.ones(9))
    values = np.ones(20)
    values[4] = 0.0
    with pytest.raises(ValueError):
        fit_series(t, values)


def test_fit_rate_of_heat_only_run():
    grid, table, params = small_setup()
    dt = 1e-4
    ctrl = StepControl(dt_init=dt, dt_min=dt, dt_max=dt, energy_tol=1.0, t_max=0.05)
    traj, outcome = run(sine_mode(grid), ctrl, params.heat_only(), table)
    assert outcome.reason == 'reached t_max'
    lambda1 = eigenvalue(grid)
    fit = fit_rate(traj, 'l2_sq', (0.0, 1.0))
    assert fit.slope == pytest.approx(-2.0 * np.log1p(dt * lambda1) / dt, rel=1e-8)
    assert fit.slope == pytest.approx(-2.0 * lambda1, rel=0.01)
    assert fit.r_squared > 0.999999
    with pytest.raises(ValueError):
        fit_rate(traj, 'speed', (0.0, 1.0))


def test_windows():
    grid, table, params = small_setup()
    traj, _ = run(0.2 * sine_mode(grid), relaxed_control(t_max=0.01), params, table)
    t_a, t_b = tail_window(traj)
    assert t_b == traj.samples[-1].t
    assert 0.0 < t_a < t_b
    start, stop = growth_window(traj)
    assert start == 0.0
    assert stop == pytest.approx(0.5 * traj.samples[-1].t, rel=1e-15)
    assert growth_window(traj, fraction=1.0)[1] == traj.samples[-1].t
    with pytest.raises(ValueError):
        growth_window(traj, fraction=0.0)
    zero_traj, _ = run(zeros(grid), relaxed_control(), params, table)
    with pytest.raises(ValueError):
        growth_window(zero_traj)


def test_classify_initial():
    grid, table, params = small_setup()
    well = small_well()
    phi = sine_mode(grid)
    s_nehari = lambda_scale(1.0, phi, params, table)
    assert classify_initial(zeros(grid), params, table, well) == 'W_prime'
    assert classify_initial(0.5 * s_nehari * phi, params, table, well) == 'W_prime'
    assert classify_initial(1.5 * s_nehari * phi, params, table, well) == 'Z_prime'
    higher = sine_mode(grid, (2, 1, 1))
    on_nehari = lambda_scale(1.0, higher, params, table) * higher
    assert classify_initial(on_nehari, params, table, well) == 'outside'


def test_scaling_for_energy():
    grid, table, params = small_setup()
    well = small_well()
    phi = well.maximizer
    target = 0.6 * well.d_depth
    below = scaling_for_energy(phi, params, table, target, 'below')
    above = scaling_for_energy(phi, params, table, target, 'above')
    assert below < lambda_scale(1.0, phi, params, table) < above
    assert fibering(phi, below, params, table) == pytest.approx(target, rel=1e-9)
    assert fibering(phi, above, params, table) == pytest.approx(target, rel=1e-9)
    assert nehari_I(below * phi, params, table) > 0
    assert nehari_I(above * phi, params, table) < 0
    with pytest.raises(ValueError):
        scaling_for_energy(phi, params, table, 2.0 * well.d_depth, 'below')
    with pytest.raises(ValueError):
        scaling_for_energy(phi, params, table, target, 'sideways')


def test_critical_scaling():
    grid, table, params = small_setup()
    well = small_well()
    phi = well.maximizer
    for side, sign in (('below', 1), ('above', -1)):
        s = critical_scaling(phi, params, table, well, side)
        J = energy_J(s * phi, params, table)
        assert abs(J - well.d_depth) <= CRITICAL_REL_TOL * well.d_depth
        assert J < well.d_depth
        assert np.sign(nehari_I(s * phi, params, table)) == sign


def test_no_nehari_manifold_inside_the_vacuum_interval():
    grid, table, params = small_setup()
    well = small_well()
    e = 0.5 * well.d_depth
    delta1, delta2 = roots_delta(well, e)
    rng = np.random.default_rng(30)
    for delta in delta_grid(delta1, delta2, 5):
        assert d_of_delta(well, delta) > e
        for _ in range(3):
            u = random_field(grid, rng)
            assert nehari_energy(delta, u, params, table) >= d_of_delta(well, delta) * (1 - 1e-12)


def test_vacuum_check_errors():
    grid, table, params = small_setup()
    well = small_well()
    traj, _ = run(0.2 * sine_mode(grid), relaxed_control(t_max=0.01, snapshot_every=0), params, table)
    with pytest.raises(ValueError):
        vacuum_check(traj, well, well.d_depth)
    with pytest.raises(ValueError, match='snapshot'):
        vacuum_check(traj, well, 0.8 * well.d_depth)
    zero_traj, _ = run(zeros(grid), relaxed_control(), params, table)
    with pytest.raises(ValueError, match='nonzero'):
        vacuum_check(zero_traj, well, 0.8 * well.d_depth)


def test_vacuum_experiment():
    _, table, params = small_setup()
    well = small_well()
    report, runs = vacuum_experiment(well, params, table, relaxed_control(), n_jobs=2)
    assert sorted(runs) == ['blowup', 'decay']
    assert isinstance(runs['decay'][1], GlobalDecayed)
    assert isinstance(runs['blowup'][1], BlewUp)
    decay, blowup = report['runs']['decay'], report['runs']['blowup']
    assert decay['class'] == 'W_prime'
    assert blowup['class'] == 'Z_prime'
    assert decay['vacuum']['sign'] == 1
    assert blowup['vacuum']['sign'] == -1
    assert decay['J0'] == pytest.approx(report['e'], rel=1e-9)
    assert not report['violated']
    assert report['passed']


def test_threshold_scan():
    _, table, params = small_setup()
    well = small_well()
    phi = well.maximizer
    s_nehari = lambda_scale(1.0, phi, params, table)
    ctrl = relaxed_control(snapshot_every=0)
    with pytest.raises(ValueError, match='bracket'):
        threshold_scan(phi, 0.01, 0.02, ctrl, params, table, well)
    scan = threshold_scan(phi, 0.5 * s_nehari, 1.5 * s_nehari, ctrl, params, table, well, rel_width=0.05)
    assert scan.s_lo < scan.s_star < scan.s_hi
    assert scan.s_hi - scan.s_lo <= 0.05 * 1.5 * s_nehari
    assert abs(scan.s_star - s_nehari) <= THRESHOLD_AGREEMENT * s_nehari
    assert scan.evaluations[0] == (0.5 * s_nehari, 'GlobalDecayed')
    assert scan.evaluations[1] == (1.5 * s_nehari, 'BlewUp')
    assert scan.to_dict()['s_nehari'] == s_nehari


def test_growth_constants():
    well = WellCurve.from_constant(1.0, 2.0)
    constants = growth_constants(well, 0.2, 29.3)
    alpha2_sq = 1 + np.sqrt(0.2)
    assert constants['alpha1'] == 1.0
    assert constants['C1'] == pytest.approx((alpha2_sq - 1) / alpha2_sq, rel=1e-10)
    assert constants['C2'] == 1.0
    assert constants['C3'] == constants['C1']
    assert growth_constants(well, 0.2, 0.1)['C2'] == pytest.approx(5.0)


def test_threshold_experiment():
    _, table, params = small_setup()
    well = small_well()
    report, runs = threshold_experiment(well, params, table, relaxed_control(snapshot_every=0),
                                        rel_width=0.05, n_jobs=2)
    assert len(report['scan_points']) == 8
    assert sorted(runs) == ['scan_{:02d}'.format(k) for k in range(8)]
    assert report['scan_points'][0]['outcome'] == 'GlobalDecayed'
    assert report['scan_points'][-1]['outcome'] == 'BlewUp'
    assert report['monotone']
    assert report['relative_deviation'] <= THRESHOLD_AGREEMENT
    assert report['passed']


def test_rates_experiment():
    _, table, params = small_setup()
    well = small_well()
    report, runs = rates_experiment(well, params, table, relaxed_control(snapshot_every=0), n_jobs=2)
    assert sorted(runs) == ['blowup', 'decay', 'heat']
    assert report['decay']['passed']
    assert report['heat']['passed']
    growth = report['growth']
    blowup_end = runs['blowup'][0].samples[-1].t
    assert growth['fit']['window'][1] <= 0.5 * blowup_end
    assert growth['fit']['slope'] > 0
    assert growth['fit']['r_squared'] >= GROWTH_R2
    assert growth['concavity_positive_final_quarter']
    assert growth['passed']
    assert report['passed']


def test_critical_experiment():
    _, table, params = small_setup()
    well = small_well()
    report, runs = critical_experiment(well, params, table, relaxed_control(snapshot_every=0), n_jobs=2)
    assert report['critical_energy']
    for name in runs:
        assert abs(runs[name][0].samples[0].J - well.d_depth) <= CRITICAL_REL_TOL * well.d_depth
    assert isinstance(runs['decay'][1], GlobalDecayed)
    assert isinstance(runs['blowup'][1], BlewUp)

    decay = report['runs']['decay']
    assert decay['I0'] > 0
    assert decay['grad_sq_ceiling'] == pytest.approx(4.0 * well.d_depth + BARRIER_TOL)
    assert decay['grad_sq_max'] <= decay['grad_sq_ceiling']
    assert all(s.I > 0 for s in runs['decay'][0].samples if s.l2_sq > 0)
    assert decay['passed']

    blowup = report['runs']['blowup']
    assert blowup['I0'] < 0
    assert blowup['grad_sq_min'] >= blowup['grad_sq_floor']
    assert all(s.I < 0 for s in runs['blowup'][0].samples)
    assert blowup['passed']
    assert report['passed']
