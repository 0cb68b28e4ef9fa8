"""Half-wave propagation ``u = exp(-i t sqrt(-Lap)) f`` by two independent routes.

The Fourier-Bessel route sums the series

    u(t, r theta) = sum_{k,l} c_n i^k b_{k,l}(theta)
                    * int K_k(2 pi r rho) exp(-2 pi i t rho) c_{k,l}(rho) rho^(n-1) d rho

with ``K_k = j_k`` (spherical Bessel), ``c_3 = 4 pi`` for ``n = 3`` and
``K_k = J_k``, ``c_2 = 2 pi`` for ``n = 2``.  This is the same expansion as
``2 pi i^k r^((2-n)/2) J_{(n-2)/2+k}(2 pi r rho) rho^(n/2)`` written without the
removable singularity at ``r = 0``.

The plane-wave route samples ``f^`` on the dual lattice of a periodic box and
multiplies every mode by ``exp(-2 pi i t |xi|)``.  Frequencies are in cycles
throughout (``f^(xi) = int f(x) exp(-2 pi i x.xi) dx``).
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .data import RHO_MAX, RHO_MIN, Datum
from .errors import GridError, LayerError, ResourceLimitError
from .sphere import real_harmonics_upto, sphere_quadrature

__all__ = [
    "spherical_bessel_eval",
    "PolarGrid",
    "polar_grid",
    "WaveField",
    "radial_series",
    "propagate_fourier_bessel",
    "evaluate_at",
    "Lattice",
    "rasterize",
    "LatticeRasterizer",
    "lattice_field",
    "propagate_plane_wave_oracle",
    "profile_refine",
    "RadialSampler",
    "save_wavefield",
    "load_wavefield",
    "radial_closed_form_gaussian",
]

BESSEL_X_MAX = 1e6
REFINE_CAP = 64


def spherical_bessel_eval(k, n, x):
    """``J_{(n-2)/2 + k}(x)`` for ``n`` in {2, 3}.

    For ``n = 3`` the half-integer order is obtained from the spherical Bessel
    function, ``J_{k+1/2}(x) = sqrt(2 x / pi) j_k(x)``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("argument must be non-negative")
    if np.any(x > BESSEL_X_MAX):
        raise ResourceLimitError(f"Bessel argument beyond {BESSEL_X_MAX:g}")
    if n == 3:
        return np.sqrt(2.0 * x / np.pi) * special.spherical_jn(k, x)
    if n == 2:
        return special.jv(k, x)
    raise ValueError(f"unsupported space dimension n={n}")


def _kernel(n, k, z):
    """Regular radial kernel: ``j_k(z)`` for n=3, ``J_k(z)`` for n=2."""
    if n == 3:
        return special.spherical_jn(k, z)
    return special.jv(k, z)


def _series_constant(n):
    return 4.0 * np.pi if n == 3 else 2.0 * np.pi


# ----------------------------------------------------------------------------- profiles


def profile_refine(coeffs, M, refine):
    """Band-limited interpolation of unit-annulus samples onto a grid ``refine`` times finer.

    Returns ``(sigma, values)``.  The samples are treated as one period of a
    trigonometric polynomial (period 4), i.e. the mode expansion is evaluated
    exactly at the finer nodes.
    """
    coeffs = np.asarray(coeffs)
    n_rho = coeffs.shape[-1]
    drho = 4.0 / M
    if refine == 1:
        return RHO_MIN + drho * np.arange(n_rho), coeffs
    Mf = M * refine
    spec = np.fft.fft(coeffs, n=M, axis=-1)
    big = np.zeros(coeffs.shape[:-1] + (Mf,), dtype=complex)
    h = M // 2
    big[..., :h] = spec[..., :h]
    big[..., Mf - h + 1:] = spec[..., h + 1:]
    big[..., h] = 0.5 * spec[..., h]
    big[..., Mf - h] = 0.5 * spec[..., h]
    vals = np.fft.ifft(big, axis=-1) * refine
    nf = (n_rho - 1) * refine + 1
    return RHO_MIN + (drho / refine) * np.arange(nf), vals[..., :nf]


def _trap(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


class RadialSampler:
    """Four-point Lagrange interpolation of uniformly sampled profiles at fixed radii.

    ``sigma0 + h * j`` are the sample positions; values outside
    ``[sigma0, sigma0 + h (n - 1)]`` evaluate to zero.
    """

    def __init__(self, sigma0, h, n, points):
        p = np.asarray(points, dtype=float)
        self.shape = p.shape
        s = (p.ravel() - sigma0) / h
        inside = (s >= 0) & (s <= n - 1)
        base = np.clip(np.floor(s).astype(int) - 1, 0, n - 4)
        u = s - base
        w = np.empty((s.size, 4))
        nodes = np.arange(4.0)
        for a in range(4):
            others = [b for b in range(4) if b != a]
            num = np.ones_like(u)
            den = 1.0
            for b in others:
                num = num * (u - nodes[b])
                den *= nodes[a] - nodes[b]
            w[:, a] = num / den
        w[~inside] = 0.0
        self.index = base[:, None] + np.arange(4)[None, :]
        self.weights = w

    def __call__(self, values):
        values = np.asarray(values)
        return self.sample(values).reshape(values.shape[:-1] + self.shape)

    def sample(self, values, start=0, stop=None):
        """Interpolated values at the flattened points ``start:stop``."""
        sl = slice(start, stop)
        g = np.asarray(values)[..., self.index[sl]]      # (..., npts, 4)
        return np.einsum("...pa,pa->...p", g, self.weights[sl])


def _required_refine(N, r_max, t_max, M, extra=32.0):
    """Smallest power-of-two refinement resolving ``exp(2 pi i N (r + |t|) sigma)`` on the sigma grid."""
    need = N * (r_max + t_max) + extra           # cycles per unit sigma
    base = M / 8.0                               # half the Nyquist rate of the base grid
    ref = 1
    while base * ref < need:
        ref *= 2
        if ref > REFINE_CAP:
            warnings.warn(f"radial quadrature under-resolved for block {N} at r+|t|="
                          f"{r_max + t_max:g}", RuntimeWarning)
            return REFINE_CAP
    return ref


def radial_series(datum: Datum, times, r, std=True):
    """Radial coefficient functions ``A[t, row, r]`` of the Fourier-Bessel series.

    ``u(t, r theta) = sum_row A[t, row, r] Y_row(theta)`` in the standard basis
    (``std=True``) or with the frame rows ``b_row`` (``std=False``).
    """
    if datum.cube is not None and not datum.cube.is_identity():
        raise LayerError("the cube layer is a lattice multiplier; use the lattice route")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    r = np.asarray(r, dtype=float)
    n = datum.n
    cst = _series_constant(n)
    out = np.zeros((times.size, datum.n_rows, r.size), dtype=complex)
    r_max = float(r.max()) if r.size else 0.0
    t_max = float(np.abs(times).max())
    for N in sorted(datum.blocks):
        C = datum.standard_coeffs(N) if std else datum.blocks[N].coeffs
        ref = _required_refine(N, r_max, t_max, datum.grid.M)
        sig, Cf = profile_refine(C, datum.grid.M, ref)
        w = _trap(sig.size) * (datum.grid.drho / ref) * sig ** (n - 1)
        B = Cf * w[None, :] * N ** (n / 2.0)
        phase = np.exp(-2j * np.pi * np.outer(times, N * sig))       # (nt, ns)
        z = 2.0 * np.pi * N * np.outer(r, sig)                       # (nr, ns)
        for k in range(datum.K_max + 1):
            s = datum.degree_slice(k)
            Kk = _kernel(n, k, z)                                    # (nr, ns)
            Bt = phase[:, None, :] * B[None, s, :]                   # (nt, rows_k, ns)
            A = Bt.reshape(-1, sig.size) @ Kk.T
            out[:, s, :] += (cst * (1j) ** k) * A.reshape(times.size, -1, r.size)
    return out


# ----------------------------------------------------------------------------- fields


@dataclass(frozen=True)
class PolarGrid:
    n: int
    r: np.ndarray
    r_weights: np.ndarray        # includes r^(n-1)
    sphere: object               # SphereGrid
    R_max: float

    @property
    def shape(self):
        return (self.r.size, self.sphere.size)

    @property
    def weights(self):
        return np.outer(self.r_weights, self.sphere.weights).ravel()

    def spec(self):
        return {"kind": "polar", "n": self.n, "R_max": self.R_max, "n_r": int(self.r.size),
                "sphere_nodes": int(self.sphere.size), "sphere_exactness": int(self.sphere.exactness)}


def polar_grid(n, R_max, K_sphere, n_r=None, rho_top=RHO_MAX, oversample=1):
    """Gauss-Legendre radii on ``[0, R_max]`` times a product sphere grid exact to ``2 K_sphere``."""
    if R_max <= 0:
        raise GridError("R_max must be positive")
    if n_r is None:
        n_r = int(math.ceil(5.0 * rho_top * R_max)) + 32
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * R_max * (x + 1.0)
    wr = 0.5 * R_max * w * r ** (n - 1)
    sg = sphere_quadrature(n - 1, max(1, K_sphere), oversample)
    return PolarGrid(n, r, wr, sg, float(R_max))


@dataclass
class WaveField:
    """Space-time samples ``values[t, ...]`` with spatial quadrature ``weights``."""

    kind: str
    times: np.ndarray
    values: np.ndarray
    weights: np.ndarray          # flattened spatial weights
    grid: dict
    provenance: dict = field(default_factory=dict)
    lattice: object = None

    def flat(self):
        return self.values.reshape(self.times.size, -1)

    def spatial_l2(self):
        v = self.flat()
        return np.sqrt((v.real ** 2 + v.imag ** 2) @ self.weights)

    def l2_drift(self):
        m = self.spatial_l2()
        return float(np.max(np.abs(m / m[0] - 1.0)))


def propagate_fourier_bessel(datum: Datum, times, grid: PolarGrid, provenance=None):
    """``u(t)`` on a polar grid from the Fourier-Bessel series (ascending ``(k, l)`` order)."""
    if grid.n != datum.n:
        raise GridError("grid and datum dimensions differ")
    if 2 * datum.K_max > grid.sphere.exactness:
        warnings.warn("sphere grid does not resolve products of the datum's harmonics", RuntimeWarning)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    A = radial_series(datum, times, grid.r)                      # (nt, rows, nr)
    Y = np.concatenate(real_harmonics_upto(datum.d, datum.K_max, grid.sphere.nodes), axis=0)
    u = np.einsum("tqr,qa->tra", A, Y, optimize=True)
    prov = {"propagator": "fourier-bessel", "datum": datum.label}
    prov.update(provenance or {})
    return WaveField("polar", times, u, grid.weights, grid.spec(), prov)


def evaluate_at(datum: Datum, times, points, h_r=0.004, chunk=65536):
    """Fourier-Bessel series at arbitrary points (rows of ``points``), shape (nt, npts).

    Radial functions are tabulated on a uniform grid of spacing ``h_r`` (scaled by
    the top block) and interpolated with four-point Lagrange weights.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    pts = np.asarray(points, dtype=float).reshape(-1, datum.n)
    rad = np.sqrt(np.sum(pts ** 2, axis=1))
    h = h_r / max(datum.blocks)
    nr = int(math.ceil(rad.max() / h)) + 4
    rg = h * np.arange(nr)
    A = radial_series(datum, times, rg)                          # (nt, rows, nr)
    out = np.empty((times.size, pts.shape[0]), dtype=complex)
    with np.errstate(invalid="ignore", divide="ignore"):
        dirs = np.where(rad[:, None] > 0, pts / rad[:, None], np.eye(datum.n)[-1][None, :])
    for a in range(0, pts.shape[0], chunk):
        b = min(a + chunk, pts.shape[0])
        samp = RadialSampler(0.0, h, nr, rad[a:b])
        Ar = samp(A)                                             # (nt, rows, m)
        Y = np.concatenate(real_harmonics_upto(datum.d, datum.K_max, dirs[a:b]), axis=0)
        out[:, a:b] = np.einsum("tqm,qm->tm", Ar, Y, optimize=True)
    return out


def radial_closed_form_gaussian(t, r, center=1.25, width=0.1, amp=1.0):
    """Closed-form half wave in R^3 for the radial datum ``f^ = amp * Y_0 * exp(-(rho-c)^2 / (2 s^2))``.

    With ``G(s) = int rho g(rho) exp(2 pi i rho s) d rho`` over the real line,
    ``u(t, r) = Y_0 / (i r) [G(r - t) - G(-(r + t))]``; at ``r = 0`` the limit
    ``2 Y_0 G'(-t) / i`` is used.  Profile values below zero frequency are
    negligible for the default parameters.
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    Y0 = 1.0 / math.sqrt(4.0 * math.pi)
    c, s = center, width

    def G(x):
        return (np.exp(2j * np.pi * c * x) * s * math.sqrt(2.0 * math.pi)
                * np.exp(-2.0 * np.pi ** 2 * s * s * x * x) * (c + 2j * np.pi * s * s * x))

    def dG(x):
        e = np.exp(2j * np.pi * c * x - 2.0 * np.pi ** 2 * s * s * x * x)
        base = s * math.sqrt(2.0 * math.pi)
        lin = c + 2j * np.pi * s * s * x
        dphase = 2j * np.pi * c - 4.0 * np.pi ** 2 * s * s * x
        return base * e * (dphase * lin + 2j * np.pi * s * s)

    tt, rr = np.broadcast_arrays(t, r)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = Y0 / (1j * rr) * (G(rr - tt) - G(-(rr + tt)))
    lim = 2.0 * Y0 * dG(-tt) / 1j
    return amp * np.where(rr > 1e-8, val, lim)


# ----------------------------------------------------------------------------- lattice


@dataclass(frozen=True)
class Lattice:
    """Periodic box ``[-L/2, L/2)^n`` with ``size`` points per axis."""

    n: int
    L: float
    size: int

    @property
    def dx(self):
        return self.L / self.size

    @property
    def x(self):
        return -0.5 * self.L + self.dx * np.arange(self.size)

    @property
    def freqs(self):
        """Dual lattice frequencies (cycles) in FFT order."""
        return np.fft.fftfreq(self.size, self.dx)

    @property
    def nyquist(self):
        return 0.5 / self.dx

    @property
    def cell(self):
        return self.dx ** self.n

    def xi_mesh(self):
        f = self.freqs
        return np.meshgrid(*([f] * self.n), indexing="ij", sparse=True)

    def xi_norm(self):
        return np.sqrt(sum(g ** 2 for g in self.xi_mesh()))

    def x_mesh(self):
        return np.meshgrid(*([self.x] * self.n), indexing="ij", sparse=True)

    def phase_shift(self):
        """``exp(2 pi i j . x0 / L)`` relating DFT coefficients to physical samples."""
        j = np.fft.fftfreq(self.size, 1.0 / self.size)
        ph1 = np.exp(-1j * np.pi * j)                      # x0 = -L/2
        out = ph1
        for _ in range(self.n - 1):
            out = np.multiply.outer(out, ph1)
        return out

    def spec(self):
        return {"kind": "lattice", "n": self.n, "L": self.L, "size": self.size}

    def to_physical(self, F):
        """Physical samples from DFT coefficients ``F`` (last ``n`` axes)."""
        axes = tuple(range(-self.n, 0))
        return np.fft.ifftn(F * self.phase_shift(), axes=axes) * self.size ** self.n

    def to_coeffs(self, u):
        axes = tuple(range(-self.n, 0))
        return np.fft.fftn(u, axes=axes) / self.size ** self.n / self.phase_shift()


def _mass_beyond(datum, rho_cut):
    """Fraction of the datum's mass at frequencies above ``rho_cut``."""
    tot = 0.0
    beyond = 0.0
    g = datum.grid
    for N in datum.blocks:
        c = datum.blocks[N].coeffs
        m = (c.real ** 2 + c.imag ** 2).sum(axis=0) * g.weights * g.rho ** (datum.n - 1)
        tot += m.sum()
        beyond += m[N * g.rho > rho_cut].sum()
    return beyond / tot if tot > 0 else 0.0


def cube_multiplier(cube, lattice, region=None):
    """``m(xi) = sum_c h_c chi_c(xi)`` on the lattice for a recorded cube layer."""
    from .norms import cube_windows_1d

    f = lattice.freqs
    idx = np.arange(-cube.radius, cube.radius + 1)
    W = cube_windows_1d(f, cube.mu, idx)                         # (n_idx, size)
    m = cube.h
    for _ in range(lattice.n):
        # contract the leading cube axis against the window of the matching lattice axis
        m = np.tensordot(m, W, axes=([0], [0]))
    return m


class LatticeRasterizer:
    """Reusable sampler of block profiles on the shells ``N/2 <= |xi| <= 2N`` of a lattice.

    Lattice points, interpolation weights and harmonic values are prepared once;
    each call only gathers the (refined) profiles of a datum.  Harmonic tables are
    cached when they fit in ``cache_bytes`` and recomputed chunkwise otherwise.
    """

    def __init__(self, lattice: Lattice, n, K_max, blocks, M=1024, refine=4, chunk=65536,
                 cache_bytes=256 * 2 ** 20):
        self.lattice = lattice
        self.n = n
        self.K_max = K_max
        self.M = M
        self.refine = refine
        self.chunk = chunk
        self.blocks = sorted(blocks)
        rho = lattice.xi_norm()
        self.shape = rho.shape
        grids = np.meshgrid(*([lattice.freqs] * lattice.n), indexing="ij")
        hs = (4.0 / M) / refine
        self._parts = {}
        rows = int(sum(2 * k + 1 if n == 3 else (1 if k == 0 else 2) for k in range(K_max + 1)))
        for N in self.blocks:
            sel = np.flatnonzero(((rho >= RHO_MIN * N) & (rho <= RHO_MAX * N)).ravel())
            rr = rho.ravel()[sel]
            dirs = np.stack([g.ravel()[sel] for g in grids], axis=1) / np.where(rr > 0, rr, 1.0)[:, None]
            samp = RadialSampler(RHO_MIN, hs, (int(round(1.5 * M / 4)) * refine) + 1, rr / N)
            Y = None
            if rows * sel.size * 8 <= cache_bytes:
                Y = np.concatenate(real_harmonics_upto(n - 1, K_max, dirs), axis=0)
                dirs = None
            self._parts[N] = (sel, samp, Y, dirs)

    def __call__(self, datum: Datum, apply_cube=True):
        if datum.n != self.n or datum.K_max != self.K_max or datum.grid.M != self.M:
            raise GridError("datum does not match the rasterizer layout")
        F = np.zeros(int(np.prod(self.shape)), dtype=complex)
        for N in sorted(datum.blocks):
            if N not in self._parts:
                raise GridError(f"block {N} was not prepared")
            sel, samp, Y, dirs = self._parts[N]
            if sel.size == 0:
                continue
            C = datum.standard_coeffs(N)
            live = np.flatnonzero(np.any(C != 0, axis=1))
            _, Cf = profile_refine(C[live], datum.grid.M, self.refine)
            vals = np.empty(sel.size, dtype=complex)
            for a in range(0, sel.size, self.chunk):
                b = min(a + self.chunk, sel.size)
                prof = samp.sample(Cf, a, b)                         # (live rows, chunk)
                if Y is not None:
                    Yc = Y[live, a:b]
                else:
                    Yc = np.concatenate(real_harmonics_upto(self.n - 1, self.K_max, dirs[a:b]), axis=0)[live]
                vals[a:b] = np.einsum("qm,qm->m", prof, Yc)
            F[sel] += N ** (-datum.n / 2.0) * vals
        F = F.reshape(self.shape)
        if apply_cube and datum.cube is not None and not datum.cube.is_identity():
            F = F * cube_multiplier(datum.cube, self.lattice)
        return F / self.lattice.L ** self.lattice.n


def rasterize(datum: Datum, lattice: Lattice, alias_tol=1e-12, refine=4, chunk=65536,
              blocks=None, apply_cube=True, rasterizer=None):
    """DFT coefficients ``F_j = f^(j / L) / L^n`` of the datum on a periodic lattice.

    Frequencies above the lattice Nyquist rate must carry less than ``alias_tol``
    of the datum's mass.  A recorded cube layer is applied as a multiplier.
    """
    if lattice.n != datum.n:
        raise GridError("lattice and datum dimensions differ")
    frac = _mass_beyond(datum, lattice.nyquist)
    if frac > alias_tol:
        raise GridError(f"{frac:.2e} of the mass lies beyond the lattice Nyquist rate "
                        f"{lattice.nyquist:g}")
    if blocks is not None:
        datum = replace(datum, blocks={N: datum.blocks[N] for N in blocks})
    if rasterizer is None:
        rasterizer = LatticeRasterizer(lattice, datum.n, datum.K_max, datum.blocks, datum.grid.M,
                                       refine, chunk)
    return rasterizer(datum, apply_cube)


def lattice_field(F, lattice, times, provenance=None):
    """Plane-wave propagation of lattice coefficients at ``times`` as a WaveField."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    rho = lattice.xi_norm()
    vals = np.empty((times.size,) + F.shape, dtype=complex)
    for i, t in enumerate(times):
        vals[i] = lattice.to_physical(F * np.exp(-2j * np.pi * t * rho))
    w = np.full(F.size, lattice.cell)
    prov = {"propagator": "plane-wave"}
    prov.update(provenance or {})
    return WaveField("lattice", times, vals, w, lattice.spec(), prov, lattice)


def propagate_plane_wave_oracle(datum_or_coeffs, lattice: Lattice, times, provenance=None):
    """Independent half-wave on the torus: every lattice mode times ``exp(-2 pi i t |xi|)``."""
    if isinstance(datum_or_coeffs, Datum):
        F = rasterize(datum_or_coeffs, lattice)
        prov = {"datum": datum_or_coeffs.label}
    else:
        F = np.asarray(datum_or_coeffs)
        prov = {}
    prov.update(provenance or {})
    return lattice_field(F, lattice, times, prov)


# ----------------------------------------------------------------------------- export


def save_wavefield(field_: WaveField, path):
    """Write ``<path>.npy`` (complex samples) and ``<path>.json`` (grid and provenance)."""
    base = os.fspath(path)
    if base.endswith(".npy"):
        base = base[:-4]
    np.save(base + ".npy", field_.values)
    side = {"format": "randwave-wavefield", "version": 1, "kind": field_.kind,
            "times": field_.times.tolist(), "grid": field_.grid,
            "provenance": field_.provenance, "shape": list(field_.values.shape)}
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(side, fh, sort_keys=True, indent=1)
    return base + ".npy", base + ".json"


def load_wavefield(path):
    base = os.fspath(path)
    if base.endswith(".npy"):
        base = base[:-4]
    with open(base + ".json", encoding="utf-8") as fh:
        side = json.load(fh)
    vals = np.load(base + ".npy")
    return side, vals
