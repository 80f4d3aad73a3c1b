"""Target manifolds N in R^m: projection, tangent projector, second fundamental form.

Points are arrays with the ambient component axis first, ``(m, ...)``; any
trailing axes (typically the grid) are carried along pointwise.
"""

from __future__ import annotations

import numpy as np

from .errors import NotOnManifold, OutsideTube

ON_MANIFOLD_TOL = 1e-8


class Target:
    """Interface shared by the concrete targets."""

    m: int
    name: str

    @property
    def base_point(self) -> np.ndarray:
        """A point of N, used as the centre of random sample maps."""
        base = getattr(self, "_base_point", None)
        return self.project(np.eye(self.m)[-1]) if base is None else base

    def project(self, y):
        raise NotImplementedError

    def distance(self, y):
        """Unsigned distance to N (first-order estimate for implicit targets)."""
        raise NotImplementedError

    def tangent_projector(self, y):
        raise NotImplementedError

    def projector_derivative(self, y):
        """``G[k] = dP/dy_k`` at points of N, shape ``(m, m, m, ...)``."""
        raise NotImplementedError

    def require_on(self, y, tol=ON_MANIFOLD_TOL):
        dist = float(np.max(self.distance(y))) if np.size(y) else 0.0
        if not dist <= tol:
            raise NotOnManifold(f"point(s) off {self.name} by up to {dist:.3e}")

    def second_fundamental_form(self, y, X, Y):
        """``A_y(X, Y) = Q(y) dP_y(X) Y`` for tangent vectors ``X, Y`` at ``y``."""
        self.require_on(y)
        G = self.projector_derivative(y)
        dPX = np.einsum("k...,kij...->ij...", X, G)
        v = np.einsum("ij...,j...->i...", dPX, Y)
        P = self.tangent_projector(y)
        return v - np.einsum("ij...,j...->i...", P, v)

    def normal_part(self, y, v):
        P = self.tangent_projector(y)
        return v - np.einsum("ij...,j...->i...", P, v)


class Sphere(Target):
    """Unit sphere S^{m-1} in R^m."""

    min_norm = 0.5

    def __init__(self, m: int = 3):
        if m < 2:
            raise ValueError("ambient dimension must be at least 2")
        self.m = int(m)
        self.name = f"S^{m - 1}"

    def __repr__(self):
        return f"Sphere(m={self.m})"

    def project(self, y):
        y = np.asarray(y, dtype=float)
        r = np.sqrt(np.sum(y**2, axis=0))
        if np.any(~(r >= self.min_norm)):
            raise OutsideTube(f"|y| = {np.min(r):.3e} < {self.min_norm}")
        return y / r

    def distance(self, y):
        return np.abs(np.sqrt(np.sum(np.asarray(y) ** 2, axis=0)) - 1.0)

    def tangent_projector(self, y):
        y = np.asarray(y, dtype=float)
        P = -np.einsum("i...,j...->ij...", y, y)
        for i in range(self.m):
            P[i, i] += 1.0
        return P

    def projector_derivative(self, y):
        y = np.asarray(y, dtype=float)
        m = self.m
        G = np.zeros((m, m, m) + y.shape[1:])
        for k in range(m):
            G[k, k, :] -= y
            G[k, :, k] -= y
        return G

    def second_fundamental_form(self, y, X, Y):
        self.require_on(y)
        return -np.sum(np.asarray(X) * np.asarray(Y), axis=0) * y


class ImplicitTarget(Target):
    """Regular level set ``{phi = 0}`` of a function with analytic derivatives.

    ``phi(y)``, ``grad(y)`` and ``hess(y)`` take points ``(m, ...)`` and
    return arrays of shape ``(...)``, ``(m, ...)`` and ``(m, m, ...)``.  Points
    farther than ``tube_radius`` from N are rejected by :meth:`project`.
    """

    newton_tol = 1e-14
    newton_maxiter = 60

    def __init__(self, phi, grad, hess, m, tube_radius, name="implicit"):
        self.phi = phi
        self.grad = grad
        self.hess = hess
        self.m = int(m)
        self.tube_radius = float(tube_radius)
        self.name = name

    def __repr__(self):
        return f"ImplicitTarget({self.name!r}, m={self.m}, tube_radius={self.tube_radius})"

    def distance(self, y):
        g = self.grad(y)
        return np.abs(self.phi(y)) / np.sqrt(np.sum(g**2, axis=0))

    def _normal_and_dn(self, y):
        g = self.grad(y)
        gn = np.sqrt(np.sum(g**2, axis=0))
        nrm = g / gn
        H = self.hess(y)
        P = self._projector_from_normal(nrm)
        # Dn[i, k] = d n_i / d y_k = (P H)_{ik} / |g|
        Dn = np.einsum("ij...,jk...->ik...", P, H) / gn
        return nrm, Dn

    def _projector_from_normal(self, nrm):
        P = -np.einsum("i...,j...->ij...", nrm, nrm)
        for i in range(self.m):
            P[i, i] += 1.0
        return P

    def tangent_projector(self, y):
        g = self.grad(np.asarray(y, dtype=float))
        return self._projector_from_normal(g / np.sqrt(np.sum(g**2, axis=0)))

    def projector_derivative(self, y):
        y = np.asarray(y, dtype=float)
        nrm, Dn = self._normal_and_dn(y)
        # dP/dy_k = -(dn/dy_k n^T + n dn/dy_k^T)
        a = np.einsum("ik...,j...->kij...", Dn, nrm)
        return -(a + np.swapaxes(a, 1, 2))

    def project(self, y):
        """Closest point on N by Newton's method on the Lagrange system."""
        y = np.asarray(y, dtype=float)
        m = self.m
        rest = y.shape[1:]
        pts = y.reshape(m, -1)
        x = pts.copy()
        for _ in range(8):
            g = self.grad(x)
            x = x - self.phi(x) * g / np.sum(g**2, axis=0)
        g = self.grad(x)
        lam = np.sum((x - pts) * g, axis=0) / np.sum(g**2, axis=0)
        eye = np.eye(m)
        converged = False
        for _ in range(self.newton_maxiter):
            g = self.grad(x)
            H = self.hess(x)
            F = np.concatenate([x - pts - lam * g, self.phi(x)[None]], axis=0)
            if np.max(np.abs(F)) < self.newton_tol:
                converged = True
                break
            J = np.zeros((x.shape[1], m + 1, m + 1))
            J[:, :m, :m] = eye[None] - np.moveaxis(lam * H, -1, 0)
            J[:, :m, m] = -g.T
            J[:, m, :m] = g.T
            step = np.linalg.solve(J, -F.T[..., None])[..., 0].T
            x = x + step[:m]
            lam = lam + step[m]
        if not converged:
            F = np.concatenate([x - pts - lam * self.grad(x), self.phi(x)[None]], axis=0)
            converged = np.max(np.abs(F)) < 1e3 * self.newton_tol
        dist = np.sqrt(np.sum((x - pts) ** 2, axis=0))
        if not converged or np.any(~(dist <= self.tube_radius)):
            raise OutsideTube(f"projection distance {np.max(dist):.3e} exceeds tube radius "
                              f"{self.tube_radius}")
        return x.reshape((m,) + rest)


def torus_of_revolution(major=1.0, minor=0.4, tube_radius=None) -> ImplicitTarget:
    """Torus ``(sqrt(y1^2 + y2^2) - R)^2 + y3^2 = r^2`` in R^3."""
    R, r = float(major), float(minor)
    if not 0 < r < R:
        raise ValueError("need 0 < minor < major")

    def phi(y):
        rho = np.sqrt(y[0] ** 2 + y[1] ** 2)
        return (rho - R) ** 2 + y[2] ** 2 - r**2

    def grad(y):
        rho = np.sqrt(y[0] ** 2 + y[1] ** 2)
        c = 2.0 * (rho - R) / rho
        return np.stack([c * y[0], c * y[1], 2.0 * y[2]])

    def hess(y):
        rho = np.sqrt(y[0] ** 2 + y[1] ** 2)
        s = rho - R
        h = np.zeros((3, 3) + np.shape(y[0]))
        h[0, 0] = 2.0 * (y[0] ** 2 / rho**2 + s * y[1] ** 2 / rho**3)
        h[1, 1] = 2.0 * (y[1] ** 2 / rho**2 + s * y[0] ** 2 / rho**3)
        h[0, 1] = h[1, 0] = 2.0 * y[0] * y[1] * (1.0 / rho**2 - s / rho**3)
        h[2, 2] = 2.0
        return h

    target = ImplicitTarget(phi, grad, hess, m=3,
                            tube_radius=0.5 * r if tube_radius is None else tube_radius,
                            name=f"torus(R={R}, r={r})")
    target.major, target.minor = R, r
    target._base_point = np.array([R + r, 0.0, 0.0])
    return target


def torus_closest_point(y, major, minor):
    """Closed-form closest point on the torus of revolution (test oracle)."""
    y = np.asarray(y, dtype=float)
    rho = np.sqrt(y[0] ** 2 + y[1] ** 2)
    c = np.stack([major * y[0] / rho, major * y[1] / rho, np.zeros_like(rho)])
    d = y - c
    return c + minor * d / np.sqrt(np.sum(d**2, axis=0))


def make_target(spec) -> Target:
    """Build a target from a config mapping ``{"kind": ..., ...}``."""
    spec = dict(spec)
    kind = spec.pop("kind", "sphere")
    if kind == "sphere":
        return Sphere(m=spec.pop("m", 3))
    if kind == "torus":
        return torus_of_revolution(**spec)
    raise ValueError(f"unknown target kind {kind!r}")
