import numpy as np
import pytest

from biharm4.errors import CalibrationAmbiguous, NotOnSphere
from biharm4.potentials import (PotentialSet, build_general_extrinsic, build_sphere_extrinsic,
                                build_sphere_intrinsic, calibrate_signs, clifford_map,
                                default_sigma, energy_ext, energy_int, great_circle_map,
                                pde_residual, random_potentials, random_rotation,
                                random_sphere_map, random_target_map, rotate_map,
                                second_fundamental_energy, small_circle_map, system_rhs,
                                tension_energy, wang_rhs)
from biharm4.spectral import Grid
from biharm4.targets import Sphere, torus_of_revolution

VOLUME = (2 * np.pi) ** 4


@pytest.fixture(scope="module")
def grid():
    return Grid(8)


@pytest.fixture(scope="module")
def fine():
    return Grid(16)


def test_builders_reject_off_sphere_maps(grid):
    u = 1.01 * great_circle_map(grid)
    with pytest.raises(NotOnSphere):
        build_sphere_extrinsic(grid, u, sigma=-1)


def test_sphere_potentials_are_antisymmetric(grid):
    u = random_sphere_map(grid, 3, 0)
    for build in (build_sphere_extrinsic, build_sphere_intrinsic):
        pots = build(grid, u, sigma=-1)
        np.testing.assert_array_equal(pots.V, -np.swapaxes(pots.V, 1, 2))
        np.testing.assert_array_equal(pots.omega, -np.swapaxes(pots.omega, 0, 1))
        np.testing.assert_array_equal(pots.F, -np.swapaxes(pots.F, 1, 2))
        np.testing.assert_allclose(pots.W, pots.assembled_W(grid), atol=1e-13)


def test_calibrated_signs():
    # frozen outcome of the variational oracle
    assert default_sigma("sphere_extrinsic") == -1
    assert default_sigma("sphere_intrinsic") == -1
    assert default_sigma("general_extrinsic") == 1


def test_calibration_report_separates_signs(fine):
    u = random_sphere_map(fine, 3, 5, amplitude=0.1, kmax=1)
    rep = calibrate_signs(fine, [u], n_directions=3, rng=1, return_report=True)
    assert rep.sigma == -1
    assert rep.max_rel_error[-1] < 1e-6
    assert rep.max_rel_error[+1] > 0.1


def test_calibration_on_torus_target(fine):
    torus = torus_of_revolution(1.0, 0.4)
    u = random_target_map(fine, torus, 1, amplitude=0.05, kmax=1)
    assert calibrate_signs(fine, [u], builder="general_extrinsic", target=torus,
                           n_directions=2) == 1


def test_calibration_ambiguous_with_zero_tolerance(fine):
    u = random_sphere_map(fine, 3, 5, amplitude=0.1, kmax=1)
    with pytest.raises(CalibrationAmbiguous):
        calibrate_signs(fine, [u], n_directions=1, rtol=0.0)


def test_great_circle_is_critical(grid):
    u = great_circle_map(grid)
    for build in (build_sphere_extrinsic, build_sphere_intrinsic):
        assert grid.norm(pde_residual(grid, u, build(grid, u))) < 1e-10


def test_small_circle_is_intrinsic_but_not_extrinsic_critical(grid):
    u = small_circle_map(grid)
    assert grid.norm(pde_residual(grid, u, build_sphere_intrinsic(grid, u))) < 1e-10
    assert grid.norm(pde_residual(grid, u, build_sphere_extrinsic(grid, u))) > 1.0


def test_clifford_maps(fine):
    harmonic = clifford_map(fine, (3, 1, 0, 0), (1, -3, 0, 0))
    assert fine.norm(pde_residual(fine, harmonic, build_sphere_extrinsic(fine, harmonic))) < 1e-9
    proper = clifford_map(fine, (3, 1, 0, 0), (1, 1, 0, 0))
    assert fine.norm(pde_residual(fine, proper, build_sphere_intrinsic(fine, proper))) < 1e-9
    assert fine.norm(pde_residual(fine, proper, build_sphere_extrinsic(fine, proper))) > 1.0


def test_div_W_vanishes_on_critical_maps(fine):
    u = clifford_map(fine, (3, 1, 0, 0), (1, 1, 0, 0))
    pots = build_sphere_intrinsic(fine, u)
    assert fine.norm(fine.divergence(pots.W)) < 1e-9 * fine.norm(pots.W)


def test_div_W_nonzero_off_shell(grid):
    u = random_sphere_map(grid, 3, 2)
    pots = build_sphere_extrinsic(grid, u)
    assert grid.norm(grid.divergence(pots.W)) > 1e-3 * grid.norm(pots.W)


def test_sphere_and_generic_paths_agree_on_fixture(fine):
    u = clifford_map(fine, (3, 1, 0, 0), (1, -3, 0, 0))
    rs = default_sigma("sphere_extrinsic") * system_rhs(fine, u, build_sphere_extrinsic(fine, u))
    rg = system_rhs(fine, u, build_general_extrinsic(fine, u, Sphere(4)))
    assert fine.norm(rs - rg) < 1e-12 * fine.norm(rs)


def test_generic_path_matches_projection_form(fine):
    u = clifford_map(fine, (3, 1, 0, 0), (1, -3, 0, 0))
    pots = build_general_extrinsic(fine, u, Sphere(4))
    a = system_rhs(fine, u, pots)
    b = wang_rhs(fine, u, Sphere(4))
    assert fine.norm(a - b) < 1e-12 * fine.norm(a)


def test_generic_path_converges_under_refinement():
    errs = []
    for n in (8, 16):
        g = Grid(n)
        u = random_sphere_map(g, 3, 3, amplitude=0.1, kmax=1)
        a = system_rhs(g, u, build_general_extrinsic(g, u, Sphere(3)))
        errs.append(g.norm(a - wang_rhs(g, u, Sphere(3))) / g.norm(a))
    assert errs[1] < 0.1 * errs[0]


def _identity_defect(g, u):
    ext = energy_ext(g, u)
    total = tension_energy(g, u, Sphere(3)) + second_fundamental_energy(g, u, Sphere(3))
    return abs(total - ext) / ext


def test_energy_identity(fine):
    # |lap u|^2 splits into tangential and normal parts; the normal part of
    # lap u equals A(u)(grad u, grad u) up to spectral truncation of |u| = 1
    for seed in range(3):
        assert _identity_defect(fine, random_sphere_map(fine, 3, seed, kmax=1)) < 1e-11


def test_energy_identity_refines(grid, fine):
    coarse = _identity_defect(grid, random_sphere_map(grid, 3, 0, kmax=2))
    assert _identity_defect(fine, random_sphere_map(fine, 3, 0, kmax=2)) < 1e-3 * coarse


def test_great_circle_energies(grid):
    u = great_circle_map(grid)
    assert energy_ext(grid, u) == pytest.approx(VOLUME, rel=1e-13)
    assert abs(energy_int(grid, u, Sphere(3))) < 1e-10 * VOLUME
    assert tension_energy(grid, u, Sphere(3)) < 1e-20


def test_potentials_are_rotation_equivariant(grid):
    u = random_sphere_map(grid, 3, 4)
    Q = random_rotation(3, 0)
    p = build_sphere_extrinsic(grid, u, sigma=-1)
    q = build_sphere_extrinsic(grid, rotate_map(Q, u), sigma=-1)
    np.testing.assert_allclose(q.V, np.einsum("ia,kab...,jb->kij...", Q, p.V, Q), atol=1e-12)
    np.testing.assert_allclose(system_rhs(grid, rotate_map(Q, u), q),
                               rotate_map(Q, system_rhs(grid, u, p)), atol=1e-10)


def test_potential_set_operations(grid):
    pots = random_potentials(grid, 3, 0)
    np.testing.assert_allclose(pots.W, grid.gradient(pots.omega) + pots.F)
    doubled = pots.scaled(2.0)
    assert doubled.size(grid) == pytest.approx(2.0 * pots.size(grid))
    neg = PotentialSet(pots.V, pots.w, pots.omega, pots.F, pots.W, sigma=-1).signed()
    assert neg.sigma == 1
    np.testing.assert_array_equal(neg.V, -pots.V)
    assert PotentialSet.zeros(grid, 3).size(grid) == 0.0
