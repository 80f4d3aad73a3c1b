"""Fourier spectral calculus on the flat 4-torus [0, 2*pi)^4.

Array layout
------------
Every field is a real ``numpy`` array whose *last four* axes are the grid
axes ``(x1, x2, x3, x4)``; any leading axes are components.  The package
uses these component conventions throughout:

=====================  ===========================
scalar                 ``(n, n, n, n)``
map into R^m           ``(m, n, n, n, n)``
matrix field           ``(m, m, n, n, n, n)``
vector (1-form)        ``(4, ...)`` form index first
matrix 1-form          ``(4, m, m, n, n, n, n)``
matrix 2-form          ``(4, 4, m, m, n, n, n, n)``
=====================  ===========================

2-forms are stored with both form indices and are exactly antisymmetric,
``B[k, l] == -B[l, k]``.  The six independent components (``k < l``) are what
:func:`save_field` writes.

Transforms are real-to-complex over the grid axes, forward unnormalized and
inverse divided by ``n**4`` (the ``scipy.fft`` "backward" convention).  Mode
``k`` along axes 1-3 follows ``fftfreq`` ordering; along axis 4 only the
non-negative half is kept.

The derivative symbol is ``i * k`` with the Nyquist wavenumber ``n/2`` set to
zero on every axis, and every other operator is built from the same symbol:
the Laplacian is ``-sum(k_eff**2)``, so ``div(grad f) == laplacian(f)`` holds
to rounding.  Modes with ``k_eff == 0`` (the mean and pure-Nyquist modes) are
the discrete harmonic fields; the inverse operators annihilate them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import NonZeroMean

GRID_AXES = (-4, -3, -2, -1)
MEAN_RTOL = 1e-12


def _workers():
    value = os.environ.get("BIHARM4_THREADS")
    return int(value) if value else None


@dataclass(frozen=True)
class HodgeParts:
    exact: np.ndarray
    coexact: np.ndarray
    harmonic: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


class Grid:
    """Uniform periodic grid with ``n`` points per axis on ``[0, 2*pi)^4``."""

    def __init__(self, n: int):
        n = int(n)
        if n < 8 or n % 2:
            raise ValueError(f"grid size must be even and >= 8, got {n}")
        self.n = n
        self.h = 2.0 * np.pi / n
        self.volume_element = self.h**4
        self.shape = (n, n, n, n)

    def __repr__(self):
        return f"Grid(n={self.n})"

    def __eq__(self, other):
        return isinstance(other, Grid) and other.n == self.n

    def __hash__(self):
        return hash(("Grid", self.n))

    # -- coordinates and wavenumbers ---------------------------------------

    @cached_property
    def x1d(self) -> np.ndarray:
        return self.h * np.arange(self.n)

    def coords(self):
        """Return the four coordinate arrays, each of shape ``grid.shape``."""
        return np.meshgrid(self.x1d, self.x1d, self.x1d, self.x1d, indexing="ij")

    @cached_property
    def _k(self):
        n = self.n
        full = np.fft.fftfreq(n, d=1.0 / n)
        half = np.fft.rfftfreq(n, d=1.0 / n)
        full_eff = np.where(np.abs(full) == n // 2, 0.0, full)
        half_eff = np.where(np.abs(half) == n // 2, 0.0, half)
        ks = []
        for axis in range(4):
            vec = half_eff if axis == 3 else full_eff
            shape = [1, 1, 1, 1]
            shape[axis] = vec.size
            ks.append(vec.reshape(shape))
        return ks

    @cached_property
    def ksq(self) -> np.ndarray:
        k = self._k
        return k[0] ** 2 + k[1] ** 2 + k[2] ** 2 + k[3] ** 2

    @cached_property
    def kernel_mask(self) -> np.ndarray:
        """Modes annihilated by every derivative (mean plus pure-Nyquist modes)."""
        return self.ksq == 0

    @cached_property
    def _inv_ksq(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = np.where(self.kernel_mask, 0.0, 1.0 / np.where(self.kernel_mask, 1.0, self.ksq))
        return out

    # -- transforms --------------------------------------------------------

    def fft(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfftn(f, axes=GRID_AXES, workers=_workers())

    def ifft(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfftn(fh, s=self.shape, axes=GRID_AXES, workers=_workers())

    def _check(self, f):
        if f.shape[-4:] != self.shape:
            raise ValueError(f"field shape {f.shape} does not live on {self!r}")

    # -- differential operators --------------------------------------------

    def derivative(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Spectral partial derivative along grid axis ``axis`` (0-based)."""
        self._check(f)
        return self.ifft(1j * self._k[axis] * self.fft(f))

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """All four partial derivatives stacked on a new leading axis."""
        self._check(f)
        fh = self.fft(f)
        return np.stack([self.ifft(1j * k * fh) for k in self._k])

    def divergence(self, v: np.ndarray) -> np.ndarray:
        """``sum_k d_k v[k]`` for a field with form index first."""
        self._check(v)
        acc = 0.0
        for axis in range(4):
            acc = acc + 1j * self._k[axis] * self.fft(v[axis])
        return self.ifft(acc)

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        self._check(f)
        return self.ifft(-self.ksq * self.fft(f))

    def bilaplacian(self, f: np.ndarray) -> np.ndarray:
        self._check(f)
        return self.ifft(self.ksq**2 * self.fft(f))

    def hessian(self, f: np.ndarray) -> np.ndarray:
        """Second derivatives ``d_a d_b f`` with shape ``(4, 4) + f.shape``."""
        self._check(f)
        fh = self.fft(f)
        k = self._k
        out = np.empty((4, 4) + f.shape)
        for a in range(4):
            for b in range(a, 4):
                out[a, b] = self.ifft(-k[a] * k[b] * fh)
                out[b, a] = out[a, b]
        return out

    def _require_zero_mean(self, fh, f):
        mean = fh[(...,) + (0, 0, 0, 0)].real / self.n**4
        scale = np.sqrt(np.mean(f**2, axis=GRID_AXES))
        bad = np.abs(mean) > MEAN_RTOL * np.maximum(scale, np.finfo(float).tiny)
        if np.any(bad):
            raise NonZeroMean(f"field has nonzero mean (max |mean| = {np.max(np.abs(mean)):.3e})")

    def inv_laplacian(self, f: np.ndarray, check_mean: bool = True) -> np.ndarray:
        """Zero-mean solution of ``laplacian(g) = f``; ``f`` must have zero mean.

        ``check_mean=False`` skips the test and drops the kernel modes, for
        callers that removed the mean themselves.
        """
        self._check(f)
        fh = self.fft(f)
        if check_mean:
            self._require_zero_mean(fh, f)
        return self.ifft(-self._inv_ksq * fh)

    def inv_bilaplacian(self, f: np.ndarray, check_mean: bool = True) -> np.ndarray:
        self._check(f)
        fh = self.fft(f)
        if check_mean:
            self._require_zero_mean(fh, f)
        return self.ifft(self._inv_ksq**2 * fh)

    def helmholtz_step_solve(self, f: np.ndarray, tau: float) -> np.ndarray:
        """Return ``(I + tau * bilaplacian)^{-1} f``."""
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        self._check(f)
        return self.ifft(self.fft(f) / (1.0 + tau * self.ksq**2))

    def project_out_kernel(self, f: np.ndarray) -> np.ndarray:
        """Remove the harmonic (kernel) modes; for smooth fields this is the mean."""
        fh = self.fft(f)
        fh[..., self.kernel_mask] = 0.0
        return self.ifft(fh)

    # -- forms -------------------------------------------------------------

    def curl_2form(self, B: np.ndarray) -> np.ndarray:
        """``(curl B)_k = sum_l d_l B[l, k]``; maps a 2-form to a 1-form."""
        out = np.empty(B.shape[1:])
        hats = [self.fft(B[l]) for l in range(4)]
        for k in range(4):
            acc = 0.0
            for l in range(4):
                acc = acc + 1j * self._k[l] * hats[l][k]
            out[k] = self.ifft(acc)
        return out

    def curl_1form(self, C: np.ndarray) -> np.ndarray:
        """``(curl C)[k, l] = d_l C_k - d_k C_l``, an exactly antisymmetric 2-form."""
        hats = [self.fft(C[k]) for k in range(4)]
        out = np.zeros((4,) + C.shape)
        for k in range(4):
            for l in range(k + 1, 4):
                comp = self.ifft(1j * self._k[l] * hats[k] - 1j * self._k[k] * hats[l])
                out[k, l] = comp
                out[l, k] = -comp
        return out

    def d_2form(self, B: np.ndarray) -> np.ndarray:
        """Exterior derivative of a 2-form: ``(dB)[i,k,l] = d_i B_kl + d_k B_li + d_l B_ik``."""
        dB = np.stack([self.derivative(B, i) for i in range(4)])
        out = dB + np.transpose(dB, (1, 2, 0) + tuple(range(3, dB.ndim))) \
            + np.transpose(dB, (2, 0, 1) + tuple(range(3, dB.ndim)))
        return out

    def hodge_decompose(self, v: np.ndarray) -> HodgeParts:
        """Split a (matrix-valued) 1-form into exact, coexact and harmonic parts.

        ``exact = grad(alpha)`` with ``alpha = inv_laplacian(div v)``,
        ``coexact = curl_2form(beta)`` with ``beta = -curl_1form(inv_laplacian(v))``,
        and ``harmonic`` collects the kernel modes (the mean for smooth fields).
        """
        self._check(v)
        hats = np.stack([self.fft(v[k]) for k in range(4)])
        harmonic_hat = np.where(self.kernel_mask, hats, 0.0)
        harmonic = np.stack([self.ifft(harmonic_hat[k]) for k in range(4)])
        div_hat = sum(1j * self._k[k] * hats[k] for k in range(4))
        alpha_hat = -self._inv_ksq * div_hat
        alpha = self.ifft(alpha_hat)
        exact = np.stack([self.ifft(1j * k * alpha_hat) for k in self._k])
        coexact = v - exact - harmonic
        phi = np.stack([self.ifft(-self._inv_ksq * hats[k]) for k in range(4)])
        beta = -self.curl_1form(phi)
        return HodgeParts(exact=exact, coexact=coexact, harmonic=harmonic, alpha=alpha, beta=beta)

    # -- quadrature --------------------------------------------------------

    def integrate(self, f: np.ndarray):
        return self.volume_element * np.sum(f, axis=GRID_AXES)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.volume_element * np.sum(a * b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.sqrt(self.volume_element * np.sum(a * a)))

    def mean(self, f: np.ndarray) -> np.ndarray:
        return np.mean(f, axis=GRID_AXES)


# -- band-limited random fields ---------------------------------------------

def random_smooth(grid: Grid, shape=(), rng=None, kmax=None, amplitude=1.0, decay=4.0,
                  zero_mean=False) -> np.ndarray:
    """Seeded random trigonometric polynomial evaluated on ``grid``.

    Coefficients live on the mode box ``|k|_inf <= kmax`` with envelope
    ``(1 + |k|^2)^(-decay/2)``, so the same ``rng`` state and ``kmax`` give the
    same function on every grid with ``n > 2 * kmax``.  Each component is
    scaled to continuum RMS ``amplitude``.  ``kmax`` defaults to ``n // 4``.
    """
    rng = np.random.default_rng(rng)
    kmax = grid.n // 4 if kmax is None else int(kmax)
    if 2 * kmax >= grid.n:
        raise ValueError(f"kmax={kmax} not representable on {grid!r}")
    shape = tuple(np.atleast_1d(shape).astype(int)) if shape != () else ()
    side = 2 * kmax + 1
    modes = np.arange(-kmax, kmax + 1)
    K = np.meshgrid(modes, modes, modes, modes, indexing="ij")
    ksq = sum(k**2 for k in K)
    envelope = (1.0 + ksq) ** (-decay / 2.0)
    ncomp = int(np.prod(shape)) if shape else 1
    idx = tuple(np.ix_(*(modes % grid.n for _ in range(4))))
    out = np.empty((ncomp,) + grid.shape)
    for c in range(ncomp):
        coef = rng.standard_normal((side,) * 4) + 1j * rng.standard_normal((side,) * 4)
        coef = 0.5 * (coef + np.conj(coef[::-1, ::-1, ::-1, ::-1]))
        coef *= envelope
        if zero_mean:
            coef[kmax, kmax, kmax, kmax] = 0.0
        coef /= np.sqrt(np.sum(np.abs(coef) ** 2))
        spec = np.zeros(grid.shape, dtype=complex)
        spec[idx] = coef
        out[c] = np.fft.ifftn(spec).real * grid.n**4
    out *= amplitude
    return out.reshape(shape + grid.shape)


# -- serialization -----------------------------------------------------------

def pack_2form(B: np.ndarray) -> np.ndarray:
    """Six independent components ``B[k, l]``, ``k < l``, in lexicographic order."""
    return np.stack([B[k, l] for k in range(4) for l in range(k + 1, 4)])


def unpack_2form(packed: np.ndarray) -> np.ndarray:
    out = np.zeros((4, 4) + packed.shape[1:])
    i = 0
    for k in range(4):
        for l in range(k + 1, 4):
            out[k, l] = packed[i]
            out[l, k] = -packed[i]
            i += 1
    return out


def save_field(path, field: np.ndarray, kind: str = "generic") -> None:
    """Write raw little-endian float64 data plus a ``.json`` shape sidecar.

    Data is C-ordered with components first and grid axes ``(x1, x2, x3, x4)``
    last.  ``kind="2form"`` stores only the six independent components.
    """
    path = Path(path)
    data = pack_2form(field) if kind == "2form" else field
    np.ascontiguousarray(data, dtype="<f8").tofile(path)
    meta = {"kind": kind, "shape": list(data.shape), "dtype": "<f8", "order": "C",
            "grid_n": int(field.shape[-1])}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_field(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.fromfile(path, dtype=meta["dtype"]).reshape(meta["shape"])
    if meta["kind"] == "2form":
        return unpack_2form(data)
    return data
