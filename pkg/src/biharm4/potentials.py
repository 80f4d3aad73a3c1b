"""Potentials V, w, omega, F (and W = grad omega + F) of the fourth-order system

    bilap(u) = sigma * [ lap(V . grad u) + div(w grad u) + W . grad u ].

``sigma`` is a sign convention fixed empirically by :func:`calibrate_signs`:
the builders return the *raw* fields of the closed-form recipes together with
the sign that makes the system the Euler-Lagrange equation of the energy.
:meth:`PotentialSet.signed` folds the sign into the fields, which is the form
the conservation law and the gauge construction consume.

Field shapes follow :mod:`biharm4.spectral`: ``V, W, F`` are matrix 1-forms
``(4, m, m, *grid)``; ``w`` and ``omega`` are matrix fields ``(m, m, *grid)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationAmbiguous, NotOnSphere
from .spectral import Grid, random_smooth
from .targets import Sphere, Target

SPHERE_TOL = 1e-10


@dataclass
class PotentialSet:
    V: np.ndarray
    w: np.ndarray
    omega: np.ndarray
    F: np.ndarray
    W: np.ndarray
    sigma: int = 1
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.w.shape[0]

    def assembled_W(self, grid: Grid) -> np.ndarray:
        """``grad(omega) + F``."""
        return grid.gradient(self.omega) + self.F

    def scaled(self, c: float) -> "PotentialSet":
        return replace(self, V=c * self.V, w=c * self.w, omega=c * self.omega,
                       F=c * self.F, W=c * self.W)

    def signed(self) -> "PotentialSet":
        """Fields multiplied by ``sigma`` so the system reads with a plus sign."""
        out = self.scaled(float(self.sigma))
        out.sigma = 1
        return out

    def size(self, grid: Grid) -> float:
        """Discrete surrogate of ``|V|_{W^{1,2}} + |w|_2 + |omega|_2 + |F|_2``."""
        dV = grid.gradient(self.V)
        v12 = np.sqrt(grid.norm(self.V) ** 2 + grid.norm(dV) ** 2)
        return float(v12 + grid.norm(self.w) + grid.norm(self.omega) + grid.norm(self.F))

    @classmethod
    def zeros(cls, grid: Grid, m: int) -> "PotentialSet":
        one = np.zeros((4, m, m) + grid.shape)
        mat = np.zeros((m, m) + grid.shape)
        return cls(V=one, w=mat, omega=mat.copy(), F=one.copy(), W=one.copy(), kind="zero")


# -- contractions -------------------------------------------------------------

def dot_grad(X, du):
    """``X . grad u = sum_k X[k] d_k u`` for a matrix 1-form and ``du = grad(u)``."""
    return np.einsum("kij...,kj...->i...", X, du)


def system_rhs(grid: Grid, u, pots: PotentialSet, du=None):
    """``lap(V . grad u) + div(w grad u) + W . grad u`` with the raw fields."""
    du = grid.gradient(u) if du is None else du
    Vdu = dot_grad(pots.V, du)
    wdu = np.einsum("ij...,kj...->ki...", pots.w, du)
    return grid.laplacian(Vdu) + grid.divergence(wdu) + dot_grad(pots.W, du)


def pde_residual(grid: Grid, u, pots: PotentialSet):
    """``bilap(u) - sigma * system_rhs``; zero exactly for solutions."""
    return grid.bilaplacian(u) - pots.sigma * system_rhs(grid, u, pots)


# -- sphere targets -----------------------------------------------------------

def _require_sphere(u):
    dev = float(np.max(np.abs(np.sqrt(np.sum(u**2, axis=0)) - 1.0)))
    if not dev <= SPHERE_TOL:
        raise NotOnSphere(f"| |u| - 1 | = {dev:.3e} exceeds {SPHERE_TOL}")


def _sphere_fields(grid, u, intrinsic):
    _require_sphere(u)
    m = u.shape[0]
    du = grid.gradient(u)
    lap = grid.laplacian(u)
    # V^{ij} = u^i grad u^j - u^j grad u^i
    a = np.einsum("i...,kj...->kij...", u, du)
    V = a - np.swapaxes(a, 1, 2)
    divV = grid.divergence(V)
    grad_sq = np.sum(du**2, axis=(0, 1))
    w = divV.copy()
    if not intrinsic:
        for i in range(m):
            w[i, i] -= 2.0 * grad_sq
    b = np.einsum("i...,kj...->kij...", lap, du)
    F_closed = 2.0 * (b - np.swapaxes(b, 1, 2))
    if intrinsic:
        F_closed = F_closed + 2.0 * grad_sq * V
    # omega = div V, which is u^i lap u^j - u^j lap u^i up to aliasing
    omega = divV
    F = F_closed
    W = grid.gradient(omega) + F
    return V, w, omega, F, W


def build_sphere_extrinsic(grid: Grid, u, sigma=None) -> PotentialSet:
    """Potentials of extrinsic biharmonic maps into the unit sphere."""
    V, w, omega, F, W = _sphere_fields(grid, u, intrinsic=False)
    if sigma is None:
        sigma = default_sigma("sphere_extrinsic")
    return PotentialSet(V=V, w=w, omega=omega, F=F, W=W, sigma=sigma, kind="sphere_extrinsic")


def build_sphere_intrinsic(grid: Grid, u, sigma=None) -> PotentialSet:
    """Potentials of intrinsic biharmonic maps into the unit sphere."""
    V, w, omega, F, W = _sphere_fields(grid, u, intrinsic=True)
    if sigma is None:
        sigma = default_sigma("sphere_intrinsic")
    return PotentialSet(V=V, w=w, omega=omega, F=F, W=W, sigma=sigma, kind="sphere_intrinsic")


# -- generic embedded targets ---------------------------------------------------

def _M(G, z):
    """``M[z]^{sk} = sum_j (dP^{sj}/dy_k) z^j``, so that ``M[z] t = dP(t) z``."""
    return np.einsum("ksj...,j...->sk...", G, z)


def build_general_extrinsic(grid: Grid, u, target: Target, sigma=None) -> PotentialSet:
    """Potentials from the projection form of the extrinsic equation.

    With ``G_k = dP/dy_k`` evaluated along ``u`` and ``M[z]`` as in :func:`_M`,
    ``V_a = M[d_a u]``, ``w = M[lap u]`` and ``W_a = M[d_a lap u]`` reproduce
    ``lap(A(u)(grad u, grad u)) + div(<grad P(u), lap u>) + <grad P(u), grad lap u>``
    term by term.  ``omega = M[lap u] P - P M[lap u]^T`` is the so(m) part that
    carries the top-order derivative; ``F = W - grad(omega)``.
    """
    target.require_on(u)
    G = target.projector_derivative(u)
    P = target.tangent_projector(u)
    du = grid.gradient(u)
    lap = grid.laplacian(u)
    dlap = grid.gradient(lap)
    V = np.stack([_M(G, du[k]) for k in range(4)])
    w = _M(G, lap)
    W = np.stack([_M(G, dlap[k]) for k in range(4)])
    Ml = np.einsum("sj...,jk...->sk...", w, P)
    omega = Ml - np.swapaxes(Ml, 0, 1)
    F = W - grid.gradient(omega)
    if sigma is None:
        sigma = default_sigma("general_extrinsic")
    return PotentialSet(V=V, w=w, omega=omega, F=F, W=W, sigma=sigma, kind="general_extrinsic",
                        meta={"target": repr(target)})


def wang_rhs(grid: Grid, u, target: Target):
    """Right-hand side of the projection-form equation from spectral derivatives of P(u).

    Independent of :func:`build_general_extrinsic`: derivatives of ``P(u)`` are
    taken spectrally on the composed field instead of through the chain rule.
    """
    P = target.tangent_projector(u)
    dP = grid.gradient(P)
    du = grid.gradient(u)
    lap = grid.laplacian(u)
    dlap = grid.gradient(lap)
    two = np.einsum("kij...,kj...->i...", dP, du)
    first = grid.laplacian(two)
    second = grid.divergence(np.einsum("kij...,j...->ki...", dP, lap))
    third = np.einsum("kij...,kj...->i...", dP, dlap)
    return first + second + third


BUILDERS = {
    "sphere_extrinsic": build_sphere_extrinsic,
    "sphere_intrinsic": build_sphere_intrinsic,
    "general_extrinsic": build_general_extrinsic,
}


# -- energies -----------------------------------------------------------------

def energy_ext(grid: Grid, u) -> float:
    """``int |lap u|^2`` by the rectangle rule."""
    return float(grid.volume_element * np.sum(grid.laplacian(u) ** 2))


def second_fundamental_energy(grid: Grid, u, target: Target) -> float:
    """``int |A(u)(grad u, grad u)|^2``."""
    du = grid.gradient(u)
    A = sum(target.second_fundamental_form(u, du[k], du[k]) for k in range(4))
    return float(grid.volume_element * np.sum(A**2))


def energy_int(grid: Grid, u, target: Target) -> float:
    """Tension energy via ``B_int = B_ext - int |A(u)(grad u, grad u)|^2``."""
    return energy_ext(grid, u) - second_fundamental_energy(grid, u, target)


def tension_energy(grid: Grid, u, target: Target) -> float:
    """``int |P(u) lap u|^2`` evaluated directly."""
    lap = grid.laplacian(u)
    t = np.einsum("ij...,j...->i...", target.tangent_projector(u), lap)
    return float(grid.volume_element * np.sum(t**2))


# -- sign calibration ---------------------------------------------------------

@dataclass
class CalibrationReport:
    sigma: int
    max_rel_error: dict
    passed: dict
    steps: tuple
    n_directions: int


def _central_difference(energy_fn, target, u, phi, t):
    ep = energy_fn(target.project(u + t * phi))
    em = energy_fn(target.project(u - t * phi))
    return (ep - em) / (2.0 * t)


def _richardson_derivative(energy_fn, target, u, phi, t):
    coarse = _central_difference(energy_fn, target, u, phi, t)
    fine = _central_difference(energy_fn, target, u, phi, 0.5 * t)
    return (4.0 * fine - coarse) / 3.0


def _rel_err(a, b, floor):
    scale = max(abs(a), abs(b))
    if scale <= floor:
        return 0.0
    return abs(a - b) / scale


def calibrate_signs(grid: Grid, samples, builder="sphere_extrinsic", target=None,
                    energy="extrinsic", n_directions=5, steps=(1e-3, 1e-4), rtol=1e-4,
                    rng=0, return_report=False):
    """Pick the sign making ``2 <residual, phi>`` the derivative of the energy.

    For each sample map ``u`` and random ambient direction ``phi`` the
    directional derivative ``d/dt E(Pi(u + t phi))`` at ``t = 0`` (central
    differences at every step in ``steps``) is compared with
    ``2 <bilap u - s * rhs, phi>`` for ``s = +1`` and ``s = -1``.  Each step
    ``t`` yields a Richardson-extrapolated pair of central differences (``t``
    and ``t/2``), accurate to ``O(t^4)``.  The
    retraction ``Pi`` maps the variation onto N, so only the tangential part
    of the residual contributes to the derivative and the normal part must
    vanish for the right sign.  Exactly one sign must pass.
    """
    build = BUILDERS[builder] if isinstance(builder, str) else builder
    target = Sphere(m=samples[0].shape[0]) if target is None else target
    energy_fn = {"extrinsic": lambda v: energy_ext(grid, v),
                 "intrinsic": lambda v: energy_int(grid, v, target)}[energy]
    rng = np.random.default_rng(rng)
    errors = {+1: 0.0, -1: 0.0}
    for u in samples:
        if builder == "general_extrinsic":
            pots = build(grid, u, target, sigma=1)
        else:
            pots = build(grid, u, sigma=1)
        bil = grid.bilaplacian(u)
        rhs = system_rhs(grid, u, pots)
        e0 = abs(energy_fn(u))
        for _ in range(n_directions):
            phi = random_smooth(grid, (u.shape[0],), rng, kmax=min(2, grid.n // 4))
            fds = [_richardson_derivative(energy_fn, target, u, phi, t) for t in steps]
            floor = 1e-9 * max(e0, 1.0) * grid.norm(phi)
            for s in (+1, -1):
                an = 2.0 * grid.inner(bil - s * rhs, phi)
                for fd in fds:
                    errors[s] = max(errors[s], _rel_err(fd, an, floor))
    passed = {s: errors[s] <= rtol for s in errors}
    report = CalibrationReport(sigma=0, max_rel_error=errors, passed=passed, steps=tuple(steps),
                               n_directions=n_directions)
    if passed[+1] == passed[-1]:
        raise CalibrationAmbiguous(
            f"sign calibration inconclusive: +1 {'passes' if passed[+1] else 'fails'} "
            f"(err {errors[+1]:.2e}), -1 {'passes' if passed[-1] else 'fails'} (err {errors[-1]:.2e})")
    report.sigma = +1 if passed[+1] else -1
    return report if return_report else report.sigma


_SIGMA_CACHE: dict = {}


def default_sigma(builder: str) -> int:
    """Calibrated sign for ``builder``, computed once per process on a fixed sample."""
    if builder not in _SIGMA_CACHE:
        grid = Grid(16)
        target = Sphere(3)
        u = random_sphere_map(grid, 3, rng=20240601, amplitude=0.1, kmax=1)
        energy = "intrinsic" if builder == "sphere_intrinsic" else "extrinsic"
        _SIGMA_CACHE[builder] = calibrate_signs(grid, [u], builder=builder, target=target,
                                                energy=energy, n_directions=2, rng=7)
    return _SIGMA_CACHE[builder]


# -- sample maps --------------------------------------------------------------

def random_potentials(grid: Grid, m=3, rng=None, kmax=2, amplitude=1.0) -> PotentialSet:
    """Band-limited random ``(V, w, omega, F)`` with ``omega`` antisymmetric and mean free.

    ``W`` is assembled as ``grad(omega) + F``; ``sigma = +1``.
    """
    rng = np.random.default_rng(rng)
    V = random_smooth(grid, (4, m, m), rng, kmax=kmax, amplitude=amplitude)
    w = random_smooth(grid, (m, m), rng, kmax=kmax, amplitude=amplitude)
    a = random_smooth(grid, (m, m), rng, kmax=kmax, amplitude=amplitude, zero_mean=True)
    omega = a - np.swapaxes(a, 0, 1)
    F = random_smooth(grid, (4, m, m), rng, kmax=kmax, amplitude=amplitude)
    W = grid.gradient(omega) + F
    return PotentialSet(V=V, w=w, omega=omega, F=F, W=W, sigma=1, kind="random")


def great_circle_map(grid: Grid, m=3, wave=(1, 0, 0, 0)):
    """``x -> (cos(a.x), sin(a.x), 0, ...)``, an extrinsic and intrinsic biharmonic map."""
    X = grid.coords()
    phase = sum(a * x for a, x in zip(wave, X))
    u = np.zeros((m,) + grid.shape)
    u[0] = np.cos(phase)
    u[1] = np.sin(phase)
    return u


def clifford_map(grid: Grid, a=(1, 0, 0, 0), b=(0, 1, 0, 0)):
    """Map onto the Clifford torus in S^3.

    Harmonic (hence extrinsic and intrinsic biharmonic) when ``|a| = |b|``;
    a proper intrinsic biharmonic map when ``|a| != |b|``.
    """
    X = grid.coords()
    pa = sum(c * x for c, x in zip(a, X))
    pb = sum(c * x for c, x in zip(b, X))
    s = 1.0 / np.sqrt(2.0)
    return s * np.stack([np.cos(pa), np.sin(pa), np.cos(pb), np.sin(pb)])


def small_circle_map(grid: Grid, wave=(1, 0, 0, 0)):
    """Linear parametrization of the circle of radius ``1/sqrt(2)`` in S^2.

    That circle is a biharmonic curve which is not a geodesic, so the map is a
    proper intrinsic biharmonic map; it is not extrinsic biharmonic.
    """
    X = grid.coords()
    phase = sum(a * x for a, x in zip(wave, X))
    s = 1.0 / np.sqrt(2.0)
    return s * np.stack([np.cos(phase), np.sin(phase), np.ones_like(phase)])


def random_sphere_map(grid: Grid, m=3, rng=None, amplitude=0.1, kmax=2, base=None):
    """Project a band-limited perturbation of a constant point onto the sphere.

    The perturbation has zero mean and per-component RMS ``amplitude``.
    """
    rng = np.random.default_rng(rng)
    if base is None:
        base = np.zeros(m)
        base[-1] = 1.0
    y = np.asarray(base, float).reshape((m,) + (1,) * 4) \
        + random_smooth(grid, (m,), rng, kmax=kmax, amplitude=amplitude, zero_mean=True)
    return Sphere(m).project(y)


def random_target_map(grid: Grid, target: Target, rng=None, amplitude=0.1, kmax=2):
    """Like :func:`random_sphere_map`, for any target, centred at ``target.base_point``."""
    if isinstance(target, Sphere):
        return random_sphere_map(grid, target.m, rng, amplitude=amplitude, kmax=kmax)
    rng = np.random.default_rng(rng)
    y = np.asarray(target.base_point, float).reshape((target.m,) + (1,) * 4) \
        + random_smooth(grid, (target.m,), rng, kmax=kmax, amplitude=amplitude, zero_mean=True)
    return target.project(y)


def rotate_map(Q, u):
    return np.einsum("ij,j...->i...", Q, u)


def random_rotation(m, rng=None):
    rng = np.random.default_rng(rng)
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
