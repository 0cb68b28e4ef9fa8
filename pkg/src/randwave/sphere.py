"""Real spherical harmonics on S^1 and S^2 and product quadrature grids.

Rows of a basis are indexed by ``l = m + k`` for ``m = -k..k`` on S^2 (cosine
terms for ``m > 0``, sine terms for ``m < 0``) and by ``l = 0`` (cos), ``l = 1``
(sin) on S^1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import GridError, ResourceLimitError

__all__ = [
    "ProductSynthesizer",
    "SphereGrid",
    "BasisEval",
    "MAX_DEGREE",
    "harmonic_space_info",
    "sphere_volume",
    "sphere_quadrature",
    "standard_basis",
    "real_harmonics",
    "real_harmonics_upto",
    "directions_to_angles",
]

MAX_DEGREE = {1: 256, 2: 64}


def sphere_volume(d):
    if d == 1:
        return 2.0 * math.pi
    if d == 2:
        return 4.0 * math.pi
    raise ValueError(f"unsupported sphere dimension d={d}")


def harmonic_space_info(d, k):
    """Dimension of the degree-``k`` harmonics on S^d and the Laplace eigenvalue.

    >>> harmonic_space_info(2, 2)
    (5, 6)
    """
    if d not in (1, 2):
        raise ValueError(f"unsupported sphere dimension d={d}")
    if k < 0:
        raise ValueError("degree must be non-negative")
    if d == 2:
        nk = 2 * k + 1
    else:
        nk = 1 if k == 0 else 2
    return nk, k * (k + d - 1)


@dataclass(frozen=True)
class SphereGrid:
    """Product quadrature on S^d.

    For d=2 the polar direction uses Gauss-Legendre nodes in ``cos(theta)`` and
    the azimuth is equispaced; for d=1 the circle is equispaced.
    """

    d: int
    nodes: np.ndarray
    weights: np.ndarray
    exactness: int
    cos_theta: np.ndarray = field(repr=False, default=None)
    phi: np.ndarray = field(repr=False, default=None)

    @property
    def size(self):
        return self.weights.size

    def integrate(self, values):
        return np.tensordot(values, self.weights, axes=([-1], [0]))


def sphere_quadrature(d, K_max, oversample=1):
    """Grid integrating products of harmonics of total degree ``<= 2*K_max``.

    ``oversample`` multiplies the node counts per direction (used for grid
    maxima, which need several nodes per oscillation).
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    if d not in (1, 2):
        raise ValueError(f"unsupported sphere dimension d={d}")
    if K_max > MAX_DEGREE[d]:
        raise ResourceLimitError(
            f"K_max={K_max} exceeds the configured cap {MAX_DEGREE[d]} for d={d}")
    oversample = max(1, int(oversample))
    if d == 1:
        n_phi = oversample * (2 * K_max + 1)
        phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        nodes = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        weights = np.full(n_phi, 2.0 * np.pi / n_phi)
        return SphereGrid(1, nodes, weights, n_phi - 1, None, phi)

    n_theta = oversample * (K_max + 1)
    n_phi = oversample * (2 * K_max + 1)
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    sin_t = np.sqrt(1.0 - x * x)
    X = np.outer(sin_t, np.cos(phi))
    Y = np.outer(sin_t, np.sin(phi))
    Z = np.repeat(x[:, None], n_phi, axis=1)
    nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    weights = np.outer(wx, np.full(n_phi, 2.0 * np.pi / n_phi)).ravel()
    exact = min(2 * n_theta - 1, n_phi - 1)
    return SphereGrid(2, nodes, weights, exact,
                      np.repeat(x, n_phi), np.tile(phi, n_theta))


def directions_to_angles(points):
    """``(cos theta, phi)`` for unit vectors in R^3 (rows)."""
    points = np.asarray(points, dtype=float)
    z = np.clip(points[..., 2], -1.0, 1.0)
    phi = np.arctan2(points[..., 1], points[..., 0])
    return z, phi


def _legendre_table(K, x):
    """Fully normalized associated Legendre functions, shape (K+1, K+1, npts).

    Entry ``[k, m]`` is ``sqrt((2k+1)/(4 pi) (k-m)!/(k+m)!) P_k^m(x)`` without the
    Condon-Shortley phase; entries with ``m > k`` are zero.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    P = np.zeros((K + 1, K + 1) + x.shape)
    P[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, K + 1):
        P[m, m] = math.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(0, K):
        P[m + 1, m] = math.sqrt(2 * m + 3) * x * P[m, m]
    for m in range(0, K + 1):
        for k in range(m + 2, K + 1):
            a = math.sqrt((4.0 * k * k - 1.0) / (k * k - m * m))
            b = math.sqrt(((k - 1.0) ** 2 - m * m) / (4.0 * (k - 1.0) ** 2 - 1.0))
            P[k, m] = a * (x * P[k - 1, m] - b * P[k - 2, m])
    return P


def real_harmonics_upto(d, K, points):
    """All real harmonics of degree ``<= K`` at ``points``.

    Returns a list whose entry ``k`` has shape ``(N_k, npts)``.
    """
    points = np.asarray(points, dtype=float)
    if d == 1:
        phi = np.arctan2(points[..., 1], points[..., 0])
        out = [np.full((1,) + phi.shape, 1.0 / math.sqrt(2.0 * math.pi))]
        c = 1.0 / math.sqrt(math.pi)
        for k in range(1, K + 1):
            out.append(np.stack([c * np.cos(k * phi), c * np.sin(k * phi)]))
        return out
    if d != 2:
        raise ValueError(f"unsupported sphere dimension d={d}")
    z, phi = directions_to_angles(points)
    P = _legendre_table(K, z)
    cos_m = [np.cos(m * phi) for m in range(K + 1)]
    sin_m = [np.sin(m * phi) for m in range(K + 1)]
    r2 = math.sqrt(2.0)
    out = []
    for k in range(K + 1):
        rows = np.empty((2 * k + 1,) + z.shape)
        rows[k] = P[k, 0]
        for m in range(1, k + 1):
            rows[k + m] = r2 * P[k, m] * cos_m[m]
            rows[k - m] = r2 * P[k, m] * sin_m[m]
        out.append(rows)
    return out


def real_harmonics(d, k, points):
    """Real orthonormal basis of degree-``k`` harmonics at ``points``, shape (N_k, npts)."""
    return real_harmonics_upto(d, k, points)[k]


@dataclass(frozen=True)
class BasisEval:
    d: int
    k: int
    values: np.ndarray

    @property
    def dim(self):
        return self.values.shape[0]


def standard_basis(d, k, grid):
    """Standard real basis of degree ``k`` evaluated on ``grid``."""
    if 2 * k > grid.exactness:
        raise GridError(
            f"grid exactness {grid.exactness} too low for degree {k} (need {2 * k})")
    return BasisEval(d, k, real_harmonics(d, k, grid.nodes))


class ProductSynthesizer:
    """Fast evaluation of harmonic expansions on a product sphere grid.

    ``u(theta, phi) = sum_{k,m} c_{k,m} Y_{k,m}`` is assembled as an associated
    Legendre contraction for every order ``m`` followed by one azimuthal FFT,
    instead of a dense (rows x nodes) product.  Coefficients use the row order of
    :func:`real_harmonics_upto`.
    """

    def __init__(self, grid: SphereGrid, K):
        if grid.d != 2 or grid.cos_theta is None:
            raise ValueError("product synthesis needs a d=2 product grid")
        self.n_phi = int(np.unique(grid.phi).size)
        self.n_theta = grid.size // self.n_phi
        if self.n_phi < 2 * K + 1:
            raise GridError(f"{self.n_phi} azimuthal nodes cannot carry degree {K}")
        self.K = K
        self._buffers = {}
        x = grid.cos_theta.reshape(self.n_theta, self.n_phi)[:, 0]
        P = _legendre_table(K, x)                                   # (K+1, K+1, n_theta)
        r2 = math.sqrt(2.0)
        off = np.cumsum([0] + [2 * k + 1 for k in range(K)])
        self._cos_rows, self._sin_rows, self._leg = [], [], []
        for m in range(K + 1):
            ks = np.arange(m, K + 1)
            self._cos_rows.append(off[ks] + ks + m)
            self._sin_rows.append(off[ks] + ks - m)
            # the 1/2 of the cos/sin split is folded in for m > 0
            self._leg.append(P[m:, m, :] * (1.0 if m == 0 else 0.5 * r2))   # (K+1-m, n_theta)

    @property
    def n_rows(self):
        return (self.K + 1) ** 2

    def __call__(self, coeffs):
        """Values ``(..., n_theta * n_phi)`` in the grid's node order from ``coeffs (..., rows)``."""
        c = np.asarray(coeffs)
        lead = c.shape[:-1]
        c = c.reshape(-1, c.shape[-1])
        # orders above K stay zero, so one zeroed buffer per shape is reused across calls
        shape = (c.shape[0], self.n_theta, self.n_phi)
        spec = self._buffers.get(shape)
        if spec is None:
            spec = self._buffers.setdefault(shape, np.zeros(shape, dtype=complex))
        spec[:, :, 0] = c[:, self._cos_rows[0]] @ self._leg[0]
        for m in range(1, self.K + 1):
            Cm = c[:, self._cos_rows[m]] @ self._leg[m]
            Sm = 1j * (c[:, self._sin_rows[m]] @ self._leg[m])
            spec[:, :, m] = Cm - Sm
            spec[:, :, self.n_phi - m] = Cm + Sm
        vals = sfft.ifft(spec, axis=-1, norm="forward")
        return vals.reshape(lead + (self.n_theta * self.n_phi,))
