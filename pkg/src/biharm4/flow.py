"""Extrinsic biharmonic map flow into the unit sphere, with diagnostics.

The flow ``d_t u = -(bilap u - sigma * N(u))`` with
``N(u) = lap(V . grad u) + div(w grad u) + W . grad u`` is advanced by a
first-order IMEX step: the bilaplacian is implicit, ``N`` explicit, and the
result is projected back onto the sphere.  It is the gradient flow of
``B_ext / 2`` (``B_ext = int |lap u|^2``), so ``B_ext`` drops by roughly
``2 * dt * |d_t u|^2`` per step.

Concentration is measured by

    kappa(u; R) = max_x  int_{B_32R(x)} |grad^2 u|^2 + R^-2 |grad u|^2

over periodic balls, and ``R_t`` is the radius where ``kappa = eps / 2``.
The ball integral is the average over the grid points in the ball times the
exact ball volume ``pi^2/2 (32 R)^4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import OutsideTube, RadiusOutOfRange, StepRejected
from .gauge import flux, pair_from_sphere
from .potentials import (build_sphere_extrinsic, default_sigma, energy_ext, energy_int,
                         system_rhs)
from .spectral import Grid
from .targets import Sphere

ENERGY_SLACK = 1e-10
MAX_RETRIES = 10
BALL_FACTOR = 32.0
R_MAX = math.pi / BALL_FACTOR
BRUTE_FORCE_MAX_N = 16


@dataclass
class FlowState:
    u: np.ndarray
    t: float = 0.0
    dt: float = 1e-3
    energy_history: list = field(default_factory=list)
    kappa_history: list = field(default_factory=list)
    rejected_steps: int = 0
    steps: int = 0


@dataclass
class StepResult:
    state: FlowState
    dt_used: float
    retries: int
    velocity_norm: float


def flow_velocity(grid: Grid, u, sigma=None):
    """``-bilap u + sigma * N(u)`` with sphere potentials rebuilt from ``u``."""
    pots = build_sphere_extrinsic(grid, u, sigma=sigma)
    return -grid.bilaplacian(u) + pots.sigma * system_rhs(grid, u, pots)


def _explicit_part(grid, u, sigma):
    pots = build_sphere_extrinsic(grid, u, sigma=sigma)
    return pots.sigma * system_rhs(grid, u, pots)


def step(grid: Grid, state: FlowState, dt=None, sigma=None, source=None,
         check_energy=True, sphere=None) -> StepResult:
    """One accepted IMEX step, halving ``dt`` on rejection (at most 10 times).

    A trial ``u* = (I + dt bilap)^-1 (u + dt sigma N(u) [+ dt f])`` is
    projected onto the sphere.  It is rejected when the projection fails
    (``min |u*| < 0.5``) or, with ``check_energy``, when ``B_ext`` grows by
    more than ``1e-10`` relative.  ``source(t)`` adds a forcing evaluated at
    the new time.
    """
    sphere = sphere or Sphere(state.u.shape[0])
    sigma = default_sigma("sphere_extrinsic") if sigma is None else sigma
    tau = state.dt if dt is None else float(dt)
    if not tau > 0:
        raise ValueError(f"dt must be positive, got {tau}")
    u = state.u
    explicit = _explicit_part(grid, u, sigma)
    e_old = energy_ext(grid, u) if check_energy else None
    for attempt in range(MAX_RETRIES + 1):
        rhs = u + tau * explicit
        if source is not None:
            rhs = rhs + tau * source(state.t + tau)
        trial = grid.helmholtz_step_solve(rhs, tau)
        try:
            u_new = sphere.project(trial)
        except OutsideTube:
            tau *= 0.5
            continue
        if check_energy:
            e_new = energy_ext(grid, u_new)
            if e_new > e_old + ENERGY_SLACK * max(abs(e_old), np.finfo(float).tiny):
                tau *= 0.5
                continue
        new_state = FlowState(u=u_new, t=state.t + tau, dt=state.dt,
                              energy_history=state.energy_history,
                              kappa_history=state.kappa_history,
                              rejected_steps=state.rejected_steps + attempt,
                              steps=state.steps + 1)
        velocity = grid.norm(u_new - u) / tau
        return StepResult(state=new_state, dt_used=tau, retries=attempt, velocity_norm=velocity)
    raise StepRejected(f"step rejected {MAX_RETRIES + 1} times; last dt = {2 * tau:.3e}")


# -- concentration ------------------------------------------------------------

@dataclass
class ConcentrationReport:
    R: float
    kappa: float
    argmax_center: tuple


@lru_cache(maxsize=64)
def _ball_offsets(n: int, radius: float) -> np.ndarray:
    """Integer offsets ``d`` with ``|h d| <= radius`` (``radius < pi``, no wrap overlap)."""
    h = 2.0 * math.pi / n
    r = int(math.floor(radius / h + 1e-12))
    rng = np.arange(-r, r + 1)
    D = np.stack(np.meshgrid(rng, rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 4)
    keep = np.sum((h * D) ** 2, axis=1) <= radius**2 * (1.0 + 1e-12)
    return np.ascontiguousarray(D[keep], dtype=np.int_)


def ball_count(n: int, R: float) -> int:
    """Number of grid points in a periodic ball of radius ``32 R``."""
    return int(_ball_offsets(n, BALL_FACTOR * float(R)).shape[0])


def _ball_sums(grid: Grid, density, R, method):
    offsets = _ball_offsets(grid.n, BALL_FACTOR * float(R))
    if method == "brute":
        return kernels.ball_sums(np.ascontiguousarray(density, dtype=float), offsets)
    window = np.zeros(grid.shape)
    idx = tuple((offsets % grid.n).T)
    window[idx] = 1.0
    return grid.ifft(grid.fft(density) * grid.fft(window))


def _densities(grid: Grid, u):
    hess = grid.hessian(u)
    du = grid.gradient(u)
    return np.sum(hess**2, axis=(0, 1, 2)), np.sum(du**2, axis=(0, 1))


def _check_radius(R):
    if not 0.0 < R < R_MAX:
        raise RadiusOutOfRange(f"R = {R!r} outside (0, pi/32)")


def _resolve(grid, method):
    if method == "auto":
        return "brute" if grid.n <= BRUTE_FORCE_MAX_N else "windowed"
    if method not in ("brute", "windowed"):
        raise ValueError(f"unknown method {method!r}")
    return method


def ball_volume(R) -> float:
    """Volume of the 4-ball of radius ``32 R``."""
    return 0.5 * math.pi**2 * (BALL_FACTOR * R) ** 4


def _kappa_from(grid, dens, R, method):
    second, first = dens
    total = _ball_sums(grid, second, R, method) + _ball_sums(grid, first, R, method) / R**2
    # lattice average over the ball times the exact ball volume, so that
    # kappa -> 0 as R -> 0 even when the ball holds a single grid point
    total *= ball_volume(R) / ball_count(grid.n, R)
    flat = int(np.argmax(total))
    return float(total.flat[flat]), tuple(int(i) for i in np.unravel_index(flat, total.shape))


def concentration(grid: Grid, u, R, method="auto") -> ConcentrationReport:
    """``kappa(u; R)`` with its maximizing ball center.

    ``method="brute"`` sums over ball offsets directly (default for
    ``n <= 16``); ``"windowed"`` convolves with the ball indicator by FFT.
    """
    _check_radius(R)
    kappa, center = _kappa_from(grid, _densities(grid, u), R, _resolve(grid, method))
    return ConcentrationReport(R=float(R), kappa=kappa, argmax_center=center)


@dataclass
class CriticalRadius:
    R: float
    kappa: float
    saturated: bool
    bracket_history: list = field(default_factory=list)


def critical_radius(grid: Grid, u, eps, rtol=1e-3, method="auto",
                    r_max=R_MAX * (1.0 - 1e-9), scan_points=40) -> CriticalRadius:
    """Smallest radius ``R_t`` with ``kappa(u; R_t) = eps / 2``.

    ``kappa(u; R)`` need not be monotone in ``R`` (once a ball covers a
    bump the ``R^-2`` term makes it decrease), so radii
    ``r_max * 2^(-j/4)`` are scanned upwards to the first one with
    ``kappa > eps/2``; bisection then refines the bracket, keeping
    ``kappa(lo) <= eps/2 < kappa(hi)`` with a strictly shrinking bracket,
    until ``hi - lo <= rtol * hi``.  Without a crossing the result is
    ``r_max`` with ``saturated`` set.
    """
    method = _resolve(grid, method)
    dens = _densities(grid, u)
    level = 0.5 * eps
    radii = r_max * 2.0 ** (-np.arange(scan_points, -1, -1) / 4.0)
    lo, hi = 0.0, None
    for r in radii:
        k, _ = _kappa_from(grid, dens, r, method)
        if k > level:
            hi = r
            break
        lo = r
    if hi is None:
        return CriticalRadius(R=r_max, kappa=k, saturated=True)
    history = [(lo, hi)]
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        k_mid, _ = _kappa_from(grid, dens, mid, method)
        if k_mid <= level:
            lo = mid
        else:
            hi = mid
        width_prev = history[-1][1] - history[-1][0]
        assert hi - lo < width_prev and lo <= hi, "bisection bracket failed to shrink"
        history.append((lo, hi))
    R = 0.5 * (lo + hi)
    kappa, _ = _kappa_from(grid, dens, R, method)
    return CriticalRadius(R=R, kappa=kappa, saturated=False, bracket_history=history)


# -- manufactured solutions ----------------------------------------------------

class ManufacturedSolution:
    """``u(x, t) = project((1 - e^-t) p + e^-t q(x))`` and the forcing that makes it exact."""

    def __init__(self, grid: Grid, p, q, sigma):
        self.grid = grid
        self.p = np.asarray(p, float).reshape((-1,) + (1,) * 4)
        self.q = np.asarray(q, float)
        self.sigma = sigma
        self.sphere = Sphere(self.q.shape[0])

    def _y(self, t):
        return (1.0 - math.exp(-t)) * self.p + math.exp(-t) * self.q

    def exact(self, t):
        return self.sphere.project(self._y(t))

    def time_derivative(self, t):
        y = self._y(t)
        r = np.sqrt(np.sum(y**2, axis=0))
        ydot = math.exp(-t) * (self.p - self.q)
        u = y / r
        return (ydot - u * np.sum(u * ydot, axis=0)) / r

    def source(self, t):
        u = self.exact(t)
        return self.time_derivative(t) - flow_velocity(self.grid, u, sigma=self.sigma)


def integrate_manufactured(grid: Grid, ms: ManufacturedSolution, dt, t_end):
    """Max-norm error at ``t_end`` of the forced scheme started from the exact data."""
    nsteps = int(round(t_end / dt))
    state = FlowState(u=ms.exact(0.0), dt=dt)
    for _ in range(nsteps):
        state = step(grid, state, dt, sigma=ms.sigma, source=ms.source,
                     check_energy=False).state
    return float(np.max(np.abs(state.u - ms.exact(state.t))))


def temporal_order(grid: Grid, ms: ManufacturedSolution, dt, t_end, levels=3):
    """Errors and observed orders for ``dt, dt/2, dt/4, ...``."""
    errors = [integrate_manufactured(grid, ms, dt / 2**k, t_end) for k in range(levels)]
    orders = [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]
    return errors, orders


# -- diagnostics and runs -------------------------------------------------------

def flux_divergence(grid: Grid, u, sigma=None):
    """``|div J|`` with ``A = I`` and ``B`` from the coexact part of ``W``.

    Also returns the gauge defect norm (the exact part of ``W``, nonzero off
    critical points).
    """
    pots = build_sphere_extrinsic(grid, u, sigma=sigma)
    pair = pair_from_sphere(grid, pots, strict=False)
    J = flux(grid, u, pair.A, pair.B, pair.pots.V, pair.pots.w, pair.H)
    return grid.norm(grid.divergence(J)), pair.residual_gauge_eq


CSV_COLUMNS = ("step", "t", "dt", "energy_ext", "energy_int", "grad_norm", "kappa", "R_t",
               "divJ_norm", "rejected_steps")


def diagnostics_row(grid, state, dt_used, velocity, eps, sigma, sphere, with_kappa=True,
                    with_flux=True):
    row = {"step": state.steps, "t": state.t, "dt": dt_used,
           "energy_ext": energy_ext(grid, state.u),
           "energy_int": energy_int(grid, state.u, sphere),
           "grad_norm": velocity, "kappa": float("nan"), "R_t": float("nan"),
           "divJ_norm": float("nan"), "rejected_steps": state.rejected_steps}
    if with_kappa:
        cr = critical_radius(grid, state.u, eps)
        row["kappa"], row["R_t"] = cr.kappa, cr.R
        state.kappa_history.append((state.t, cr.R, cr.kappa))
    if with_flux:
        row["divJ_norm"], _ = flux_divergence(grid, state.u, sigma)
    state.energy_history.append((state.t, row["energy_ext"], row["energy_int"]))
    return row


@dataclass
class Trajectory:
    rows: list
    state: FlowState
    summary: dict


def run(grid: Grid, u0, dt, t_end, eps, sigma=None, diag_every=10, max_steps=None,
        with_kappa=True, with_flux=True) -> Trajectory:
    """Advance from ``u0`` until ``t_end``, recording diagnostics every ``diag_every`` steps."""
    sphere = Sphere(u0.shape[0])
    sphere.require_on(u0, tol=1e-10)
    sigma = default_sigma("sphere_extrinsic") if sigma is None else sigma
    state = FlowState(u=np.array(u0, dtype=float), dt=dt)
    rows = [diagnostics_row(grid, state, 0.0, 0.0, eps, sigma, sphere, with_kappa, with_flux)]
    monotone = True
    max_offset = 0.0
    e_prev = rows[0]["energy_ext"]
    while state.t < t_end * (1.0 - 1e-12) and (max_steps is None or state.steps < max_steps):
        res = step(grid, state, min(dt, t_end - state.t), sigma=sigma, sphere=sphere)
        state = res.state
        e_now = energy_ext(grid, state.u)
        monotone &= e_now <= e_prev + ENERGY_SLACK * max(abs(e_prev), np.finfo(float).tiny)
        e_prev = e_now
        max_offset = max(max_offset, float(np.max(sphere.distance(state.u))))
        if state.steps % diag_every == 0 or state.t >= t_end * (1.0 - 1e-12):
            rows.append(diagnostics_row(grid, state, res.dt_used, res.velocity_norm, eps, sigma,
                                        sphere, with_kappa, with_flux))
    summary = {"steps": state.steps, "t_final": state.t, "rejected_steps": state.rejected_steps,
               "energy_initial": rows[0]["energy_ext"], "energy_final": e_prev,
               "energy_monotone": bool(monotone), "max_target_offset": max_offset}
    return Trajectory(rows=rows, state=state, summary=summary)
