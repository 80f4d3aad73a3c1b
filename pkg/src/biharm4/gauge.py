"""Gauge fields that turn the fourth-order system into a conservation law.

Given potentials ``(V, w, W)`` (already carrying the sign convention, see
:meth:`PotentialSet.signed`), a gauge pair ``(A, B)`` solves the linear
equation

    grad(lap A) + lap(A) V - grad(A) w + A W = curl B + H            (*)

where ``curl B`` is :meth:`Grid.curl_2form`.  On the torus ``curl B`` has
no harmonic part, so the harmonic 1-form ``H`` (the mean, plus pure-Nyquist
modes on the grid) absorbs that part of the left-hand side; it has no
counterpart on a ball.  For any ``u`` the flux

    J_k = d_k(A lap u) - 2 d_k A lap u + lap A d_k u - A w d_k u
          + d_k A (V . grad u) - A d_k(V . grad u) - B_kl d_l u - H_k u

satisfies ``div J = A R_pde + R_gauge . grad u`` with

    R_pde   = bilap u - lap(V . grad u) - div(w grad u) - W . grad u
    R_gauge = grad(lap A) + lap(A) V - grad(A) w + A W - curl B - H

so when ``(*)`` holds, ``u`` solves the system exactly when ``div J = 0``.

Layout conventions follow :mod:`biharm4.spectral`: matrix fields are
``(m, m, *grid)``, matrix 1-forms ``(4, m, m, *grid)`` and matrix 2-forms
``(4, 4, m, m, *grid)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pointwise as pw
from .errors import NoConvergence, NonZeroMean, NotDivergenceFree, NotSmallEnough
from .potentials import PotentialSet, dot_grad
from .spectral import Grid, random_smooth

DIV_FREE_RTOL = 1e-6
UHLENBECK_RTOL = 1e-8
PAIR_RTOL = 1e-6
STALL_FACTOR = 1.1
STALL_STEPS = 3

# Largest tested smallness values for which all of 20 random seeds converge on
# an 8^4 grid (benchmarks/gauge_thresholds.py).  At the next tested values,
# 6144 and 128, 17/20 and 1/20 seeds converge.
EPS_GAUGE = 4096.0
EPS_PAIR = 64.0


# -- small helpers ------------------------------------------------------------

def _lmul(M, F):
    """Matrix field times matrix 1-form: ``(M F_k)``."""
    return np.einsum("ij...,kjl...->kil...", M, F)


def _rmul(F, M):
    """Matrix 1-form times matrix field: ``(F_k M)``."""
    return np.einsum("kij...,jl...->kil...", F, M)


def _as_field(H, grid):
    H = np.asarray(H, dtype=float)
    return H.reshape(H.shape + (1,) * 4) if H.shape[-4:] != grid.shape else H


def _harmonic(grid, F):
    """Kernel-mode part of ``F``: the mean plus the pure-Nyquist modes."""
    return F - grid.project_out_kernel(F)


def _antisym(F):
    """Antisymmetric part in the two matrix indices of a matrix 1-form."""
    return 0.5 * (F - np.swapaxes(F, 1, 2))


def _stall_check(history, name):
    """Raise when the residual reduction factor stays below the threshold."""
    if len(history) <= STALL_STEPS:
        return
    recent = history[-(STALL_STEPS + 1):]
    factors = [a / b if b > 0 else np.inf for a, b in zip(recent[:-1], recent[1:])]
    if all(f < STALL_FACTOR for f in factors):
        raise NoConvergence(f"{name} stalled: residual history {history[-4:]}", history)


# -- linear solves ------------------------------------------------------------

def solve_B_for_sphere(grid: Grid, W, strict=True, return_harmonic=False):
    """2-form ``B`` with ``curl B`` equal to the coexact part of ``W``.

    ``B = -curl_1form(inv_laplacian(W - H))`` is closed and mean free, where
    ``H`` is the harmonic part of ``W`` (its mean, plus pure-Nyquist modes
    on the grid).  With ``strict`` a ``W`` whose divergence exceeds
    ``1e-6 * |W|`` raises :class:`NotDivergenceFree`; otherwise the exact part
    is dropped and shows up in the gauge residual.  No ``curl B`` can produce
    ``H`` on the torus, so a nonzero ``H`` raises :class:`NonZeroMean` unless
    ``return_harmonic`` is set, in which case ``(B, H)`` is returned.
    """
    W = np.asarray(W, dtype=float)
    norm_W = grid.norm(W)
    if strict:
        div_norm = grid.norm(grid.divergence(W))
        if div_norm > DIV_FREE_RTOL * norm_W:
            raise NotDivergenceFree(f"|div W| = {div_norm:.3e} exceeds "
                                    f"{DIV_FREE_RTOL:g} * |W| = {DIV_FREE_RTOL * norm_W:.3e}")
    H = _harmonic(grid, W)
    if not return_harmonic and grid.norm(H) > 1e-12 * max(norm_W, np.finfo(float).tiny):
        raise NonZeroMean(f"W has a harmonic part of size {grid.norm(H):.3e}; "
                          "pass return_harmonic=True to carry it separately")
    B = -grid.curl_1form(grid.inv_laplacian(W - H, check_mean=False))
    return (B, H) if return_harmonic else B


def coulomb_gauge(grid: Grid, omega):
    """so(m)-valued 1-form ``Omega = -grad(inv_laplacian(omega))``, so ``div Omega = -omega``."""
    return -grid.gradient(grid.inv_laplacian(np.asarray(omega, dtype=float)))


# -- Uhlenbeck gauge ----------------------------------------------------------

@dataclass
class UhlenbeckGauge:
    """``Omega = R^T grad R + R^T (curl xi + h) R`` with ``R = exp(U)``.

    ``R^T grad R`` is evaluated as :func:`connection_form`.

    ``h`` is the harmonic part of the coclosed factor (constant for smooth
    fields); it has no counterpart on a ball.
    """

    U: np.ndarray
    xi: np.ndarray
    h: np.ndarray
    residual: float
    history: list = field(default_factory=list)

    @property
    def R(self):
        return pw.expm(self.U)

    @property
    def P(self):
        """``exp(-U)``: with this ``P``, ``Omega = P grad(P^-1) + P (curl xi + h) P^-1``."""
        return pw.expm(-self.U)


def gauge_smallness(grid: Grid, Omega) -> float:
    """``int |grad Omega|^2 + (int |Omega|^4)^(1/2)``."""
    dO = grid.gradient(Omega)
    quartic = grid.integrate(np.sum(Omega**2, axis=(0, 1, 2)) ** 2)
    return float(grid.norm(dO) ** 2 + np.sqrt(quartic))


def connection_form(grid: Grid, U):
    """so(m)-valued ``exp(-U) grad(exp(U))``.

    The spectral derivative of the pointwise exponential is not exactly
    antisymmetric once products alias, so the antisymmetric part is taken;
    in the continuum the two agree.
    """
    R = pw.expm(U)
    return _antisym(_lmul(pw.transpose(R), grid.gradient(R)))


def _factor(grid, Omega, U):
    """Coclosed factor of ``Omega`` for a given ``U`` and the factorization defect.

    Returns ``(div_theta, xi, h, residual)`` with
    ``Theta = R (Omega - connection_form(U)) R^T``.
    """
    R = pw.expm(U)
    Rt = pw.transpose(R)
    conn = connection_form(grid, U)
    Theta = _rmul(_lmul(R, Omega - conn), Rt)
    h = _harmonic(grid, Theta)
    xi = -grid.curl_1form(grid.inv_laplacian(Theta - h, check_mean=False))
    synth = conn + _rmul(_lmul(Rt, grid.curl_2form(xi) + h), R)
    return grid.divergence(Theta), xi, h, grid.norm(Omega - synth)


def uhlenbeck_gauge(grid: Grid, Omega, eps_gauge=EPS_GAUGE, maxiter=200, rtol=UHLENBECK_RTOL):
    """Factor an so(m)-valued 1-form as a gauge transform of a coclosed one.

    Finds mean-free ``U`` in so(m) with ``div Theta = 0``, where
    ``Theta = R (Omega - connection_form(U)) R^T`` and ``R = exp(U)``, by the
    fixed-point iteration
    ``U <- U + inv_laplacian(div Theta)``.  Then
    ``xi = -curl_1form(inv_laplacian(Theta - h))`` with ``h`` the harmonic
    part of ``Theta``.  The history records the factorization residual
    ``|Omega - R^T grad R - R^T (curl xi + h) R|`` after every step.
    """
    Omega = np.asarray(Omega, dtype=float)
    m = Omega.shape[1]
    size = gauge_smallness(grid, Omega)
    if size >= eps_gauge:
        raise NotSmallEnough(f"gauge smallness {size:.3e} >= eps_gauge = {eps_gauge:.3e}")
    tol = rtol * max(grid.norm(Omega), 1.0)
    U = np.zeros((m, m) + grid.shape)
    history = []
    for _ in range(maxiter):
        div_theta, xi, h, residual = _factor(grid, Omega, U)
        history.append(residual)
        if residual <= tol:
            return UhlenbeckGauge(U=U, xi=xi, h=h, residual=residual, history=history)
        _stall_check(history, "Uhlenbeck iteration")
        U = U + grid.inv_laplacian(div_theta, check_mean=False)
    raise NoConvergence(f"Uhlenbeck iteration did not reach {tol:.3e} in {maxiter} steps",
                        history)


def synthesize_connection(grid: Grid, U, xi, h=None):
    """Forward map of :func:`uhlenbeck_gauge`: ``connection_form(U) + R^T (curl xi + h) R``."""
    R = pw.expm(U)
    co = grid.curl_2form(xi)
    if h is not None:
        co = co + _as_field(h, grid)
    return connection_form(grid, U) + _rmul(_lmul(pw.transpose(R), co), R)


def random_gauge_data(grid: Grid, m=3, rng=None, kmax=2, amplitude=0.05):
    """Seeded mean-free so(m) field ``U`` and so(m)-valued 2-form ``xi``."""
    rng = np.random.default_rng(rng)
    a = random_smooth(grid, (m, m), rng, kmax=kmax, amplitude=amplitude, zero_mean=True)
    b = random_smooth(grid, (4, 4, m, m), rng, kmax=kmax, amplitude=amplitude, zero_mean=True)
    b = b - np.swapaxes(b, 0, 1)
    return a - np.swapaxes(a, 0, 1), b - np.swapaxes(b, 2, 3)


# -- gauge pair ---------------------------------------------------------------

@dataclass
class GaugePair:
    """Solution ``(A, B, H)`` of the gauge equation for ``pots`` (signed, scaled)."""

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    residual_gauge_eq: float
    dist_to_SO: float
    pots: PotentialSet
    iterations: int = 0
    history: list = field(default_factory=list)
    scale: float = 1.0
    uhlenbeck: UhlenbeckGauge | None = None


def gauge_defect(grid: Grid, A, B, H, V, w, W):
    """``grad(lap A) + lap(A) V - grad(A) w + A W - curl B - H``."""
    lapA = grid.laplacian(A)
    lhs = grid.gradient(lapA) + _lmul(lapA, V) - _rmul(grid.gradient(A), w) + _lmul(A, W)
    out = lhs - grid.curl_2form(B)
    return out if H is None else out - _as_field(H, grid)


def pair_from_sphere(grid: Grid, pots: PotentialSet, strict=True) -> GaugePair:
    """``A = I`` and ``(B, H)`` from the Hodge parts of ``W`` (signed potentials)."""
    eff = pots.signed()
    m = eff.m
    B, H = solve_B_for_sphere(grid, eff.W, strict=strict, return_harmonic=True)
    A = pw.identity(m, grid.shape)
    res = grid.norm(gauge_defect(grid, A, B, H, eff.V, eff.w, eff.W))
    return GaugePair(A=A, B=B, H=H, residual_gauge_eq=res, dist_to_SO=0.0, pots=eff)


def _bracket(grid, At, P, Pinv, V, w, W):
    """``grad lap(At) - L(At)`` where ``L(At) P^-1`` is the gauge operator at ``A = At P^-1``.

    These are the lower-order terms that remain once the leading
    ``grad lap`` is conjugated by the gauge ``P``.
    """
    A = pw.matmul(At, Pinv)
    lapA = grid.laplacian(A)
    L = grid.gradient(lapA) + _lmul(lapA, V) - _rmul(grid.gradient(A), w) + _lmul(A, W)
    return grid.gradient(grid.laplacian(At)) - _rmul(L, P), A


def build_gauge_pair(grid: Grid, pots: PotentialSet, eps, eps_max=EPS_PAIR,
                     eps_gauge=EPS_GAUGE, maxiter=100, rtol=PAIR_RTOL) -> GaugePair:
    """Construct ``(A, B, H)`` for ``pots`` rescaled to size ``eps``.

    The potentials are signed and multiplied by ``eps / size``.  ``omega`` is
    put in Coulomb gauge and factored by :func:`uhlenbeck_gauge`, giving
    ``P = exp(-U)``.  With ``At = A P`` the iteration is

        bilap At_new = div((curl B + H) P + bracket(At))
        X            = (grad lap At_new - bracket(At)) P^-1
        curl B_new   = coexact part of X,   H_new = mean of X

    started from ``A = I`` and ``(B, H)`` from the Hodge parts of ``W``.
    The mean of ``At`` stays fixed; at the end ``A``, ``B`` and ``H`` are
    multiplied by the constant ``mean(A)^-1`` so that ``A`` has mean ``I``.
    """
    if not 0 <= eps <= eps_max:
        raise NotSmallEnough(f"eps = {eps:.3e} outside [0, {eps_max:.3e}]")
    eff = pots.signed()
    size = eff.size(grid)
    m = eff.m
    if size == 0.0:
        eye = pw.identity(m, grid.shape)
        zero = np.zeros((4, 4, m, m) + grid.shape)
        return GaugePair(A=eye, B=zero, H=np.zeros((4, m, m) + grid.shape), residual_gauge_eq=0.0,
                         dist_to_SO=0.0, pots=eff, scale=0.0)
    scale = eps / size
    eff = eff.scaled(scale)
    V, w, W = eff.V, eff.w, eff.W
    tol = rtol * (1.0 + eff.size(grid))

    omega = eff.omega - grid.mean(eff.omega)[..., None, None, None, None]
    gauge = uhlenbeck_gauge(grid, coulomb_gauge(grid, omega), eps_gauge=eps_gauge)
    P = gauge.P
    Pinv = pw.transpose(P)

    A = pw.identity(m, grid.shape)
    B, H = solve_B_for_sphere(grid, W, strict=False, return_harmonic=True)
    res = grid.norm(gauge_defect(grid, A, B, H, V, w, W))
    history = [res]
    At = pw.matmul(A, P)
    At_mean = grid.mean(At)[..., None, None, None, None]
    it = 0
    while res > tol:
        if it >= maxiter:
            raise NoConvergence(f"gauge pair iteration did not reach {tol:.3e} in {maxiter} "
                                "steps", history)
        _stall_check(history, "gauge pair iteration")
        it += 1
        br, _ = _bracket(grid, At, P, Pinv, V, w, W)
        src = _rmul(grid.curl_2form(B) + H, P) + br
        At = grid.inv_bilaplacian(grid.divergence(src)) + At_mean
        X = _rmul(grid.gradient(grid.laplacian(At)) - br, Pinv)
        B, H = solve_B_for_sphere(grid, X, strict=False, return_harmonic=True)
        A = pw.matmul(At, Pinv)
        res = grid.norm(gauge_defect(grid, A, B, H, V, w, W))
        history.append(res)

    C = np.linalg.inv(grid.mean(A))
    A = np.einsum("ij,jk...->ik...", C, A)
    B = np.einsum("ij,kljm...->klim...", C, B)
    H = np.einsum("ij,kjm...->kim...", C, H)
    res = grid.norm(gauge_defect(grid, A, B, H, V, w, W))
    history.append(res)
    if np.min(np.abs(pw.det(A))) < 0.5:
        raise NotSmallEnough("gauge pair has min |det A| < 0.5")
    return GaugePair(A=A, B=B, H=H, residual_gauge_eq=res, dist_to_SO=pw.dist_to_SO(A),
                     pots=eff, iterations=it, history=history, scale=scale, uhlenbeck=gauge)


def scaling_report(grid: Grid, pots: PotentialSet, eps, **kwargs) -> dict:
    """Run :func:`build_gauge_pair` at ``eps`` and ``eps / 2`` and compare sizes.

    Ratios near 2 mean ``|A - I|`` and ``|B|`` grow linearly in ``eps``.
    """
    out = {}
    sizes = {}
    for label, e in (("eps", eps), ("eps_half", 0.5 * eps)):
        pair = build_gauge_pair(grid, pots, e, **kwargs)
        eye = pw.identity(pair.A.shape[0], grid.shape)
        sizes[label] = (grid.norm(pair.A - eye), grid.norm(pair.B), pair)
    for i, name in enumerate(("A_minus_I", "B")):
        big, small = sizes["eps"][i], sizes["eps_half"][i]
        ratio = big / small if small > 0 else float("nan")
        out[name] = {"eps": big, "eps_half": small, "ratio": ratio,
                     "exponent": float(np.log2(ratio)) if ratio > 0 else float("nan")}
    out["pairs"] = (sizes["eps"][2], sizes["eps_half"][2])
    return out


# -- flux and identity ----------------------------------------------------------

@dataclass
class ConservedFlux:
    J: np.ndarray
    divJ_norm: float
    identity_defect: float


def flux(grid: Grid, u, A, B, V, w, H=None):
    """The flux ``J`` (shape ``(4, m, *grid)``) for signed potentials."""
    du = grid.gradient(u)
    lap_u = grid.laplacian(u)
    dA = grid.gradient(A)
    lapA = grid.laplacian(A)
    Vdu = dot_grad(V, du)
    A_lap_u = pw.matvec(A, lap_u)
    J = grid.gradient(A_lap_u)
    J -= 2.0 * np.einsum("kij...,j...->ki...", dA, lap_u)
    J += np.einsum("ij...,kj...->ki...", lapA, du)
    J -= np.einsum("ij...,kj...->ki...", pw.matmul(A, w), du)
    J += np.einsum("kij...,j...->ki...", dA, Vdu)
    J -= np.einsum("ij...,kj...->ki...", A, grid.gradient(Vdu))
    J -= np.einsum("klij...,lj...->ki...", B, du)
    if H is not None:
        J -= np.einsum("kij...,j...->ki...", _as_field(H, grid), u)
    return J


def pde_defect(grid: Grid, u, V, w, W, du=None):
    """``bilap u - lap(V . grad u) - div(w grad u) - W . grad u`` for signed potentials."""
    du = grid.gradient(u) if du is None else du
    w_du = np.einsum("ij...,kj...->ki...", w, du)
    return (grid.bilaplacian(u) - grid.laplacian(dot_grad(V, du))
            - grid.divergence(w_du) - dot_grad(W, du))


def identity_residual(grid: Grid, u, A, B, V, w, W, H=None):
    """Check ``div J = A R_pde + R_gauge . grad u`` for arbitrary fields.

    Returns ``(r_total, r_pde, r_gauge)``: the L2 norm of the identity defect,
    of ``R_pde`` and of ``R_gauge``.  No solution property is assumed; for
    band-limited inputs ``r_total`` is pure aliasing error.
    """
    du = grid.gradient(u)
    J = flux(grid, u, A, B, V, w, H)
    divJ = grid.divergence(J)
    R_pde = pde_defect(grid, u, V, w, W, du)
    R_gauge = gauge_defect(grid, A, B, H, V, w, W)
    rhs = pw.matvec(A, R_pde) + dot_grad(R_gauge, du)
    return grid.norm(divJ - rhs), grid.norm(R_pde), grid.norm(R_gauge)


def conservation_flux(grid: Grid, u, pair: GaugePair, pots: PotentialSet | None = None):
    """Flux and divergence for ``u`` with a gauge pair (potentials default to ``pair.pots``)."""
    eff = pair.pots if pots is None else pots.signed()
    J = flux(grid, u, pair.A, pair.B, eff.V, eff.w, pair.H)
    divJ = grid.divergence(J)
    r_total, _, _ = identity_residual(grid, u, pair.A, pair.B, eff.V, eff.w, eff.W, pair.H)
    return ConservedFlux(J=J, divJ_norm=grid.norm(divJ), identity_defect=r_total)


@dataclass
class FieldTuple:
    """Arbitrary inputs ``(u, A, B, V, w, W, H)`` for :func:`identity_residual`."""

    u: np.ndarray
    A: np.ndarray
    B: np.ndarray
    V: np.ndarray
    w: np.ndarray
    W: np.ndarray
    H: np.ndarray

    def arrays(self):
        return (self.u, self.A, self.B, self.V, self.w, self.W, self.H)

    def combined_norm(self, grid: Grid) -> float:
        # H is constant, so its L2 norm is |H| times sqrt(vol(T^4)) = (2 pi)^2.
        fields = (self.u, self.A, self.B, self.V, self.w, self.W)
        return float(sum(grid.norm(f) for f in fields) + (2 * np.pi) ** 2 * np.linalg.norm(self.H))


def random_field_tuple(grid: Grid, m=3, rng=None, kmax=2, amplitude=1.0) -> FieldTuple:
    """Seeded band-limited field tuple; the same seed gives the same functions on every grid.

    ``B`` is antisymmetric in its form indices and ``H`` is constant.  With
    ``kmax = 2`` the products inside the flux alias on an ``8^4`` grid but are
    resolved exactly on ``16^4``.
    """
    rng = np.random.default_rng(rng)
    u = random_smooth(grid, (m,), rng, kmax=kmax, amplitude=amplitude)
    A = pw.identity(m, grid.shape) + random_smooth(grid, (m, m), rng, kmax=kmax,
                                                   amplitude=0.3 * amplitude)
    b = random_smooth(grid, (4, 4, m, m), rng, kmax=kmax, amplitude=amplitude)
    B = b - np.swapaxes(b, 0, 1)
    V = random_smooth(grid, (4, m, m), rng, kmax=kmax, amplitude=amplitude)
    w = random_smooth(grid, (m, m), rng, kmax=kmax, amplitude=amplitude)
    W = random_smooth(grid, (4, m, m), rng, kmax=kmax, amplitude=amplitude)
    H = amplitude * rng.standard_normal((4, m, m))
    return FieldTuple(u=u, A=A, B=B, V=V, w=w, W=W, H=H)
