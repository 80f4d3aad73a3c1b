"""Acceptance suite: one PASS/FAIL line per criterion at its stated tolerance.

Each test records a summary line in ``RESULTS`` (printed by ``conftest.py``
after the run, or directly when this file is executed as a script) and then
asserts.  Tolerances are the contract values; nothing here is tuned to the
measured numbers.
"""

import math
import time

import numpy as np
import pytest

from biharm4 import pointwise as pw
from biharm4.flow import (R_MAX, FlowState, ManufacturedSolution, concentration,
                          critical_radius, run, step, temporal_order)
from biharm4.gauge import (build_gauge_pair, coulomb_gauge, flux, identity_residual,
                           pair_from_sphere, pde_defect, random_field_tuple, random_gauge_data,
                           scaling_report, synthesize_connection, uhlenbeck_gauge)
from biharm4.potentials import (build_sphere_extrinsic, build_sphere_intrinsic, calibrate_signs,
                                clifford_map, energy_ext, great_circle_map, pde_residual,
                                random_potentials, random_rotation, random_sphere_map,
                                rotate_map, second_fundamental_energy, small_circle_map,
                                tension_energy)
from biharm4.spectral import Grid, random_smooth
from biharm4.targets import Sphere

RESULTS = {}
PAIR_EPSILON = 1.0  # RunConfig default


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} | {detail}"
    RESULTS[number] = line
    print(line)
    return passed


@pytest.fixture(scope="module")
def g8():
    return Grid(8)


@pytest.fixture(scope="module")
def g16():
    return Grid(16)


def test_criterion_1_identity_campaign(g8, g16):
    start = time.perf_counter()
    worst_ratio, worst_abs = 0.0, 0.0
    for seed in range(10):
        r8 = identity_residual(g8, *random_field_tuple(g8, 3, seed).arrays())[0]
        fields = random_field_tuple(g16, 3, seed)
        r16 = identity_residual(g16, *fields.arrays())[0]
        worst_ratio = max(worst_ratio, r16 / r8)
        worst_abs = max(worst_abs, r16 / fields.combined_norm(g16))
    elapsed = time.perf_counter() - start
    ok = worst_ratio <= 0.1 and worst_abs <= 1e-6 and elapsed <= 120.0
    record(1, "flux identity, 10 seeds, n=8 -> 16", ok,
           f"max ratio {worst_ratio:.2e} (<= 0.1), max r16/norms {worst_abs:.2e} (<= 1e-6), "
           f"{elapsed:.1f} s (<= 120 s)")
    assert ok


def test_criterion_2_flux_equivalence(g8):
    gc = great_circle_map(g8)
    pair = pair_from_sphere(g8, build_sphere_extrinsic(g8, gc))
    eff = pair.pots
    J = flux(g8, gc, pair.A, pair.B, eff.V, eff.w, pair.H)
    div_gc, J_gc = g8.norm(g8.divergence(J)), g8.norm(J)
    critical_ok = div_gc <= 1e-6 * J_gc

    u = random_sphere_map(g8, 3, 0, kmax=1)
    J = flux(g8, u, pair.A, pair.B, eff.V, eff.w, pair.H)
    R = pde_defect(g8, u, eff.V, eff.w, eff.W)
    defect = g8.norm(g8.divergence(J) - pw.matvec(pair.A, R))
    J_norm = g8.norm(J)
    random_ok = defect <= 1e-6 * J_norm
    ok = critical_ok and random_ok
    record(2, "div J = 0 on the great circle; div J = A R_pde off shell", ok,
           f"great circle |div J| {div_gc:.2e} vs 1e-6 |J| = {1e-6 * J_gc:.2e}; "
           f"random u |div J - A R_pde| {defect:.2e} vs 1e-6 |J| = {1e-6 * J_norm:.2e}")
    assert ok


def _pointwise_split_defect(grid, u, pots):
    a = np.einsum("i...,j...->ij...", u, grid.laplacian(u))
    omega = a - np.swapaxes(a, 0, 1)
    return grid.norm(pots.W - grid.gradient(omega) - pots.F) / grid.norm(pots.W)


def test_criterion_3_sphere_potentials(g8, g16):
    lines, ok = [], True
    for label, a, b, build in (("extrinsic", (3, 1, 0, 0), (1, -3, 0, 0), build_sphere_extrinsic),
                               ("intrinsic", (3, 1, 0, 0), (1, 1, 0, 0), build_sphere_intrinsic)):
        d8 = g8.norm(g8.divergence(build(g8, clifford_map(g8, a, b)).W))
        u16 = clifford_map(g16, a, b)
        pots = build(g16, u16)
        d16, W16 = g16.norm(g16.divergence(pots.W)), g16.norm(pots.W)
        split = _pointwise_split_defect(g16, u16, pots)
        ok &= d16 <= 1e-6 * W16 and d16 <= 0.1 * d8 and split <= 1e-8
        lines.append(f"{label}: |div W|/|W| {d16 / W16:.1e}, ratio {d16 / d8:.1e}, "
                     f"split {split:.1e}")
    for label, u, build in (("S2 great circle", great_circle_map(g16), build_sphere_extrinsic),
                            ("S2 small circle", small_circle_map(g16), build_sphere_intrinsic)):
        pots = build(g16, u)
        rel = g16.norm(g16.divergence(pots.W)) / g16.norm(pots.W)
        ok &= rel <= 1e-6
        lines.append(f"{label}: |div W|/|W| {rel:.1e}")
    u = random_sphere_map(g8, 3, 1)
    antisym = 0.0
    for build in (build_sphere_extrinsic, build_sphere_intrinsic):
        pots = build(g8, u)
        antisym = max(antisym, pw.antisymmetric_defect(np.moveaxis(pots.V, 0, -1)),
                      pw.antisymmetric_defect(pots.omega))
    ok &= antisym == 0.0
    lines.append(f"antisymmetry defect {antisym:.1e}")
    record(3, "sphere potentials", ok, "; ".join(lines))
    assert ok


def test_criterion_4_variational_calibration(g16):
    samples = [random_sphere_map(g16, 3, 7, amplitude=0.1, kmax=1)]
    rep = calibrate_signs(g16, samples, n_directions=5, rtol=1e-4, rng=3, return_report=True)
    gc = great_circle_map(g16)
    residual = g16.norm(pde_residual(g16, gc, build_sphere_extrinsic(g16, gc, sigma=rep.sigma)))
    passes = [s for s in (+1, -1) if rep.passed[s]]
    ok = len(passes) == 1 and residual <= 1e-6
    record(4, "variational sign calibration", ok,
           f"sigma {rep.sigma:+d}: error {rep.max_rel_error[rep.sigma]:.1e}, other sign "
           f"{rep.max_rel_error[-rep.sigma]:.1e} (tol 1e-4); great-circle residual "
           f"{residual:.1e} (<= 1e-6)")
    assert ok


def test_criterion_5_gauge_construction(g8):
    a = random_smooth(g8, (3, 3), 0, kmax=2, zero_mean=True)
    omega = a - np.swapaxes(a, 0, 1)
    coulomb = g8.norm(g8.divergence(coulomb_gauge(g8, omega)) + omega) / g8.norm(omega)

    uhl_worst, monotone = 0.0, True
    for seed in range(3):
        Omega = synthesize_connection(g8, *random_gauge_data(g8, 3, seed))
        gauge = uhlenbeck_gauge(g8, Omega, rtol=1e-11)
        uhl_worst = max(uhl_worst, gauge.residual)
        monotone &= all(y <= x for x, y in zip(gauge.history, gauge.history[1:]))

    converged, pair_worst = 0, 0.0
    for seed in range(20):
        try:
            pair = build_gauge_pair(g8, random_potentials(g8, 3, seed), PAIR_EPSILON)
        except Exception:
            continue
        converged += 1
        pair_worst = max(pair_worst, pair.residual_gauge_eq)

    rep = scaling_report(g8, random_potentials(g8, 3, 0), PAIR_EPSILON)
    ratios = (rep["A_minus_I"]["ratio"], rep["B"]["ratio"])
    scaling_ok = all(1.0 <= r <= 4.0 for r in ratios)
    ok = (coulomb <= 1e-10 and uhl_worst <= 1e-8 and monotone and converged == 20
          and pair_worst <= 1e-6 and scaling_ok)
    record(5, "gauge construction", ok,
           f"Coulomb {coulomb:.1e} (<= 1e-10); Uhlenbeck {uhl_worst:.1e} (<= 1e-8), monotone "
           f"{monotone}; pair {converged}/20 at eps={PAIR_EPSILON:g}, max residual "
           f"{pair_worst:.1e} (<= 1e-6); eps/(eps/2) ratios |A-I| {ratios[0]:.3f}, "
           f"|B| {ratios[1]:.3f} (in [1, 4])")
    assert ok


def test_criterion_6_flow(g8):
    monotone, offset = True, 0.0
    for seed in range(5):
        u0 = random_sphere_map(g8, 3, seed)
        traj = run(g8, u0, 1e-3, 0.5, eps=1.0, max_steps=500, with_kappa=False,
                   with_flux=False, diag_every=500)
        assert traj.summary["steps"] == 500
        monotone &= traj.summary["energy_monotone"]
        offset = max(offset, traj.summary["max_target_offset"])

    u = random_sphere_map(g8, 3, 11)
    Q = random_rotation(3, 12)
    a = step(g8, FlowState(u=rotate_map(Q, u), dt=1e-3)).state.u
    b = rotate_map(Q, step(g8, FlowState(u=u, dt=1e-3)).state.u)
    equivariance = float(np.max(np.abs(a - b)))

    q = random_sphere_map(g8, 3, 4, amplitude=0.1, kmax=1)
    ms = ManufacturedSolution(g8, [0, 0, 1], q, sigma=-1)
    _, orders = temporal_order(g8, ms, 1e-3, 0.02, levels=3)
    order = min(orders)

    ok = monotone and offset <= 1e-10 and equivariance <= 1e-12 and order >= 1.0
    record(6, "flow", ok,
           f"energy nonincreasing over 5 x 500 steps: {monotone}; on-target {offset:.1e} "
           f"(<= 1e-10); equivariance {equivariance:.1e} (<= 1e-12); manufactured order "
           f"{', '.join(f'{p:.4f}' for p in orders)} (>= 1.0)")
    assert ok


def _identity_defect(grid, u, sphere):
    ext = energy_ext(grid, u)
    total = tension_energy(grid, u, sphere) + second_fundamental_energy(grid, u, sphere)
    return abs(total - ext) / ext


def test_criterion_7_energy_identity(g8, g16):
    sphere = Sphere(3)
    worst, refines = 0.0, True
    for seed in range(10):
        coarse = _identity_defect(g8, random_sphere_map(g8, 3, seed, kmax=1), sphere)
        fine = _identity_defect(g16, random_sphere_map(g16, 3, seed, kmax=1), sphere)
        refines &= fine < coarse
        worst = max(worst, fine)
    gc = great_circle_map(g16)
    ext = energy_ext(g16, gc)
    b_ext_err = abs(ext - (2 * math.pi) ** 4) / (2 * math.pi) ** 4
    b_int = tension_energy(g16, gc, sphere) / ext
    ok = worst <= 1e-10 and refines and b_ext_err <= 1e-8 and b_int <= 1e-8
    record(7, "energy identity", ok,
           f"max relative defect {worst:.1e} over 10 maps at n=16 (<= 1e-10), smaller than "
           f"at n=8: {refines}; great circle B_ext "
           f"error {b_ext_err:.1e}, B_int/B_ext {b_int:.1e} (<= 1e-8)")
    assert ok


def _bump_map(grid, width):
    X = grid.coords()
    bump = np.exp((sum(np.cos(x - math.pi) for x in X) - 4.0) / width**2)
    return Sphere(3).project(np.stack([bump, np.zeros_like(bump), np.ones_like(bump)]))


def test_criterion_8_concentration(g16):
    worst = 0.0
    for seed in range(3):
        u = random_sphere_map(g16, 3, seed)
        for R in (0.25 * R_MAX, 0.5 * R_MAX, 0.9 * R_MAX):
            a = concentration(g16, u, R, method="brute").kappa
            b = concentration(g16, u, R, method="windowed").kappa
            worst = max(worst, abs(a - b))
    g32 = Grid(32)
    wide = critical_radius(g32, _bump_map(g32, 0.6), 2000.0)
    narrow = critical_radius(g32, _bump_map(g32, 0.3), 2000.0)
    ratio = narrow.R / wide.R
    ok = worst <= 1e-10 and 0.4 <= ratio <= 0.6 and not (wide.saturated or narrow.saturated)
    record(8, "concentration diagnostics", ok,
           f"|kappa_brute - kappa_windowed| {worst:.1e} (<= 1e-10); R_t {wide.R:.4f} -> "
           f"{narrow.R:.4f} under 2x shrink, ratio {ratio:.3f} (0.5 within 20%)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
