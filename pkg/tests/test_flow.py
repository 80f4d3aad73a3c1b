import math

import numpy as np
import pytest
from scipy.optimize import brentq

from biharm4.errors import RadiusOutOfRange, StepRejected
from biharm4.flow import (CSV_COLUMNS, R_MAX, FlowState, ManufacturedSolution, ball_count,
                          ball_volume, concentration, critical_radius, flow_velocity, run, step,
                          temporal_order)
from biharm4.potentials import (energy_ext, great_circle_map, random_rotation,
                                random_sphere_map, rotate_map)
from biharm4.spectral import Grid, random_smooth
from biharm4.targets import Sphere


@pytest.fixture(scope="module")
def grid():
    return Grid(8)


def test_step_keeps_map_on_sphere_and_lowers_energy(grid):
    u = random_sphere_map(grid, 3, 0)
    res = step(grid, FlowState(u=u, dt=1e-3))
    assert np.max(Sphere(3).distance(res.state.u)) < 1e-14
    assert energy_ext(grid, res.state.u) < energy_ext(grid, u)
    assert res.state.steps == 1 and res.state.t == pytest.approx(1e-3)


def test_critical_map_is_stationary(grid):
    u = great_circle_map(grid)
    assert grid.norm(flow_velocity(grid, u)) < 1e-10
    res = step(grid, FlowState(u=u, dt=1e-2))
    assert np.max(np.abs(res.state.u - u)) < 1e-12


def test_step_is_rotation_equivariant(grid):
    u = random_sphere_map(grid, 3, 1)
    Q = random_rotation(3, 2)
    a = step(grid, FlowState(u=rotate_map(Q, u), dt=1e-3)).state.u
    b = rotate_map(Q, step(grid, FlowState(u=u, dt=1e-3)).state.u)
    assert np.max(np.abs(a - b)) < 1e-12


def test_step_rejection_exhausts_retries(grid):
    u = random_sphere_map(grid, 3, 1)
    with pytest.raises(StepRejected):
        kick = 1e8 * random_smooth(grid, (3,), 9, zero_mean=True)
        step(grid, FlowState(u=u, dt=1.0), source=lambda t: kick)
    with pytest.raises(ValueError):
        step(grid, FlowState(u=u), dt=0.0)


def test_energy_decrease_matches_dissipation(grid):
    u = random_sphere_map(grid, 3, 3)
    state = FlowState(u=u, dt=5e-4)
    e0 = energy_ext(grid, u)
    dissipation = 0.0
    for _ in range(40):
        res = step(grid, state)
        dissipation += res.dt_used * res.velocity_norm**2
        state = res.state
    drop = e0 - energy_ext(grid, state.u)
    # gradient flow of B_ext / 2: the energy falls by 2 dt |d_t u|^2 per step
    assert drop == pytest.approx(2.0 * dissipation, rel=0.1)


def test_ball_geometry():
    assert ball_count(8, 0.1 * R_MAX) == 1
    # radius 2h: lattice points with |d|^2 <= 4 number 1 + 8 + 24 + 32 + 24
    assert ball_count(8, R_MAX / 2) == 89
    assert ball_volume(1 / 32) == pytest.approx(0.5 * math.pi**2)


def test_concentration_methods_agree():
    grid = Grid(16)
    u = random_sphere_map(grid, 3, 4)
    for R in (0.3 * R_MAX, 0.6 * R_MAX, 0.95 * R_MAX):
        a = concentration(grid, u, R, method="brute")
        b = concentration(grid, u, R, method="windowed")
        assert abs(a.kappa - b.kappa) <= 1e-10 * a.kappa
        assert a.argmax_center == b.argmax_center


def test_concentration_radius_range(grid):
    u = great_circle_map(grid)
    for bad in (0.0, R_MAX, -1.0):
        with pytest.raises(RadiusOutOfRange):
            concentration(grid, u, bad)


def test_great_circle_kappa_closed_form(grid):
    u = great_circle_map(grid)
    R = 0.5 * R_MAX
    assert concentration(grid, u, R).kappa == pytest.approx(ball_volume(R) * (1 + R**-2),
                                                            rel=1e-12)


def test_great_circle_critical_radius_closed_form(grid):
    u = great_circle_map(grid)
    eps = 2000.0
    expected = brentq(lambda R: 0.5 * math.pi**2 * (32 * R) ** 4 * (1 + R**-2) - eps / 2,
                      1e-6, R_MAX)
    cr = critical_radius(grid, u, eps)
    assert not cr.saturated
    assert cr.R == pytest.approx(expected, rel=2e-3)
    widths = [hi - lo for lo, hi in cr.bracket_history]
    assert all(b < a for a, b in zip(widths, widths[1:]))


def test_constant_map_saturates(grid):
    u = np.zeros((3,) + grid.shape)
    u[2] = 1.0
    cr = critical_radius(grid, u, 1.0)
    assert cr.saturated
    assert cr.R == pytest.approx(R_MAX)
    assert cr.kappa == 0.0


def test_manufactured_solution_is_consistent(grid):
    q = random_sphere_map(grid, 3, 5, amplitude=0.1, kmax=1)
    ms = ManufacturedSolution(grid, [0, 0, 1], q, sigma=-1)
    h = 1e-5
    fd = (ms.exact(0.3 + h) - ms.exact(0.3 - h)) / (2 * h)
    np.testing.assert_allclose(ms.time_derivative(0.3), fd, atol=1e-8)


def test_manufactured_temporal_order(grid):
    q = random_sphere_map(grid, 3, 4, amplitude=0.1, kmax=1)
    ms = ManufacturedSolution(grid, [0, 0, 1], q, sigma=-1)
    errors, orders = temporal_order(grid, ms, 1e-3, 0.02)
    assert errors[0] > errors[1] > errors[2]
    assert all(0.9 < p < 1.1 for p in orders)


def test_run_with_zero_end_time(grid):
    u = random_sphere_map(grid, 3, 0)
    traj = run(grid, u, 1e-3, 0.0, eps=1.0)
    assert len(traj.rows) == 1
    assert traj.summary["steps"] == 0
    assert set(traj.rows[0]) == set(CSV_COLUMNS)


def test_run_decreases_energy(grid):
    u = random_sphere_map(grid, 3, 6)
    traj = run(grid, u, 2e-3, 0.1, eps=1.0, diag_every=25, with_flux=False)
    s = traj.summary
    assert s["energy_monotone"]
    assert s["max_target_offset"] < 1e-10
    assert s["energy_final"] < 0.5 * s["energy_initial"]
    assert [r["step"] for r in traj.rows] == [0, 25, 50]


def test_perturbed_constant_map_relaxes(grid):
    u = random_sphere_map(grid, 3, 0)
    traj = run(grid, u, 1e-2, 2.5, eps=1.0, diag_every=1000, with_kappa=False, with_flux=False)
    assert traj.summary["energy_final"] <= 0.01 * traj.summary["energy_initial"]


@pytest.mark.slow
def test_perturbed_constant_map_relaxes_fine_grid():
    grid = Grid(16)
    u = random_sphere_map(grid, 3, 0)
    traj = run(grid, u, 1e-2, 2.5, eps=1.0, diag_every=1000, with_kappa=False, with_flux=False)
    assert traj.summary["energy_final"] <= 0.01 * traj.summary["energy_initial"]
