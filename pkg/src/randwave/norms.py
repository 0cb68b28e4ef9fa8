"""Mixed space-time norms, Sobolev norms and frequency localisation over covers.

Four cover kinds are supported:

``annulus``
    dyadic windows ``chi_N(rho) = phi(rho / N) - phi(2 rho / N)`` (``P_N``), with
    ``phi`` a smooth step from 1 (``x <= 1``) to 0 (``x >= 2``);
``cube``
    tensor products of one-dimensional lattice partitions with spacing ``mu``
    (``P_c``), support ``1.5 mu`` per axis;
``cap``
    angular bumps about near-uniform centres at scale ``2^-l`` times an optional
    dyadic radial window (``P_{k,kappa}``);
``modulation``
    square-root partition in ``log2 | |tau| - |xi| |`` (``Q_j``), so that
    ``sum_j ||Q_j u||^2 = ||u||^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GridError
from .windows import SUPPORT, bump, partition_1d, smooth_step

__all__ = [
    "CoverSpec", "NormReport",
    "build_cover", "cube_windows_1d", "localize", "mixed_norm", "lq_norm_stable",
    "square_sum_norm", "cube_square_sum", "sobolev_norm", "modulation_profile",
    "modulation_norm", "time_window", "bracket",
]


def bracket(x):
    """Japanese bracket ``<x> = sqrt(1 + x^2)``."""
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


# ----------------------------------------------------------------------------- covers


def cube_windows_1d(x, mu, indices):
    """One-dimensional partition windows of spacing ``mu`` centred at ``i * mu``."""
    return partition_1d(x, mu, indices, SUPPORT)


def annulus_window(rho, N):
    rho = np.asarray(rho, dtype=float)
    return smooth_step(rho / N) - smooth_step(2.0 * rho / N)


def _fibonacci_sphere(m):
    i = np.arange(m) + 0.5
    z = 1.0 - 2.0 * i / m
    phi = np.pi * (1.0 + math.sqrt(5.0)) * i
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


@dataclass
class CoverSpec:
    kind: str
    params: dict
    elements: list
    overlap_bound: int
    region: tuple
    n: int = 3
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.elements)

    def element_ids(self):
        return [str(e) for e in self.elements]

    # window evaluation ------------------------------------------------------

    def windows(self, xi):
        """Window values at frequency points ``xi`` (rows), shape (n_elements, npts)."""
        xi = np.asarray(xi, dtype=float).reshape(-1, self.n)
        rho = np.sqrt(np.sum(xi ** 2, axis=1))
        if self.kind == "annulus":
            return np.stack([annulus_window(rho, N) for N in self.elements])
        if self.kind == "cube":
            mu = self.params["mu"]
            E = np.array(self.elements)
            out = np.ones((len(E), xi.shape[0]))
            for a in range(self.n):
                idx = np.unique(E[:, a])
                W = cube_windows_1d(xi[:, a], mu, idx)
                pos = np.searchsorted(idx, E[:, a])
                out *= W[pos]
            return out
        if self.kind == "cap":
            ang = self._cap_windows(xi, rho)
            N = self.params.get("N")
            if N is not None:
                ang = ang * annulus_window(rho, N)[None, :]
            return ang
        raise ConfigError(f"cover kind {self.kind!r} has no spatial-frequency windows")

    def _cap_windows(self, xi, rho):
        centers = self.extra["centers"]
        if centers.shape[0] == 1:
            return np.ones((1, xi.shape[0]))
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(rho[:, None] > 0, xi / rho[:, None], np.array([0, 0, 1.0]))
        cosang = np.clip(d @ centers.T, -1.0, 1.0).T
        ang = np.arccos(cosang)
        raw = bump(ang / self.extra["radius"])
        tot = raw.sum(axis=0)
        return raw / np.where(tot > 0, tot, 1.0)

    def lattice_window(self, lattice, element):
        """Window of one element on a lattice (broadcastable array)."""
        xi = lattice.xi_mesh()
        if self.kind == "annulus":
            return annulus_window(lattice.xi_norm(), element)
        if self.kind == "cube":
            mu = self.params["mu"]
            out = 1.0
            for a in range(self.n):
                w = cube_windows_1d(lattice.freqs, mu, [element[a]])[0]
                shape = [1] * self.n
                shape[a] = -1
                out = out * w.reshape(shape)
            return out
        if self.kind == "cap":
            grids = np.meshgrid(*([lattice.freqs] * self.n), indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=1)
            i = self.elements.index(element)
            return self.windows(pts)[i].reshape((lattice.size,) * self.n)
        raise ConfigError("modulation windows act on space-time spectra; use localize")

    def modulation_windows(self, m):
        """Square-root partition values at modulations ``m``, shape (n_j, ...)."""
        j0, j1 = self.params["j_min"], self.params["j_max"]
        m = np.asarray(m, dtype=float)
        with np.errstate(divide="ignore"):
            x = np.log2(np.maximum(m, 1e-300))
        x = np.clip(x, j0, j1)
        return partition_1d(x, 1.0, np.arange(j0, j1 + 1), SUPPORT, power=2)

    def to_dict(self):
        return {"kind": self.kind, "params": self.params, "n_elements": len(self.elements),
                "overlap_bound": self.overlap_bound, "region": list(self.region)}


def _box_meets_shell(lo, hi, a, b):
    """Whether the axis-aligned boxes ``[lo, hi]`` (rows) meet the shell ``a <= |x| <= b``."""
    near = np.sqrt(np.sum(np.maximum(0.0, np.maximum(lo, -hi)) ** 2, axis=1))
    far = np.sqrt(np.sum(np.maximum(np.abs(lo), np.abs(hi)) ** 2, axis=1))
    return (near <= b) & (far >= a)


def build_cover(kind, params=None, region=(0.5, 2.0), n=3, resolution=None):
    """Smooth cover of the frequency shell ``region = (a, b)``.

    ``params``: ``{"mu"}`` for cubes, ``{"N_max"}`` (or ``{"N_list"}``) for dyadic
    annuli, ``{"l", "N"}`` for caps, ``{"j_min", "j_max"}`` for modulation.
    ``resolution`` is the finest frequency spacing that can be represented (for
    instance ``1/L`` on a lattice); covers finer than it are rejected.
    """
    params = dict(params or {})
    a, b = float(region[0]), float(region[1])
    if kind == "cube":
        mu = float(params.get("mu", 1.0))
        if not 0 < mu <= 1:
            raise ConfigError(f"cube side mu must lie in (0, 1], got {mu}")
        if resolution is not None and mu < 2 * resolution:
            raise GridError(f"mu={mu} is below twice the lattice frequency spacing {resolution:g}")
        R = int(math.ceil(b / mu + SUPPORT)) + 1
        ax = np.arange(-R, R + 1)
        grid = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
        lo = (grid - SUPPORT) * mu
        hi = (grid + SUPPORT) * mu
        keep = _box_meets_shell(lo, hi, a, b)
        elements = [tuple(int(v) for v in row) for row in grid[keep]]
        return CoverSpec("cube", {"mu": mu}, elements, 2 ** n, (a, b), n)
    if kind == "annulus":
        if "N_list" in params:
            Ns = sorted(int(N) for N in params["N_list"])
        else:
            N_max = int(params.get("N_max", max(1, 2 ** int(math.ceil(math.log2(max(b, 1.0)))))))
            Ns = [2 ** i for i in range(int(math.log2(N_max)) + 1)]
        if any(N < 1 or N & (N - 1) for N in Ns):
            raise ConfigError("dyadic blocks must be powers of two >= 1")
        return CoverSpec("annulus", {"N_list": Ns}, Ns, 2, (a, b), n)
    if kind == "cap":
        if n != 3:
            raise ConfigError("cap covers are implemented for n = 3")
        l = int(params.get("l", 0))
        if l < 0:
            raise ConfigError("cap level l must be >= 0")
        scale = 2.0 ** (-l)
        if resolution is not None and scale * max(a, 1e-12) < resolution:
            raise GridError(f"cap scale 2^-{l} is below the angular resolution")
        if l == 0:
            centers = np.array([[0.0, 0.0, 1.0]])
            radius = np.inf
        else:
            m = int(math.ceil(4.0 * math.pi / scale ** 2))
            centers = _fibonacci_sphere(m)
            radius = 1.5 * math.sqrt(4.0 * math.pi / m)
        # overlap: most centres inside one window radius of any direction (bounded empirically)
        cover = CoverSpec("cap", {"l": l, "N": params.get("N")}, list(range(len(centers))), 1,
                          (a, b), n, {"centers": centers, "radius": radius})
        if l > 0:
            probe = _fibonacci_sphere(4096)
            cnt = (np.arccos(np.clip(probe @ centers.T, -1, 1)) < radius).sum(axis=1)
            cover.overlap_bound = int(cnt.max())
        return cover
    if kind == "modulation":
        j0 = int(params.get("j_min", -3))
        j1 = int(params.get("j_max", 3))
        if j1 < j0:
            raise ConfigError("modulation range must satisfy j_min <= j_max")
        return CoverSpec("modulation", {"j_min": j0, "j_max": j1}, list(range(j0, j1 + 1)), 2,
                         (a, b), n)
    raise ConfigError(f"unknown cover kind {kind!r}")


# ----------------------------------------------------------------------------- localisation


def time_window(times, T):
    """Smooth time window ``bump(t / T)`` (compactly supported in ``(-T, T)``)."""
    return bump(np.asarray(times) / T)


def _modulation_grid(field_, lattice):
    nt = field_.times.size
    dt = float(field_.times[1] - field_.times[0])
    tau = np.fft.fftfreq(nt, dt)
    rho = lattice.xi_norm()
    return np.abs(np.abs(tau).reshape((-1,) + (1,) * lattice.n) - rho[None, ...]), dt


def localize(field_, cover: CoverSpec, element, T=None):
    """Apply one cover element's multiplier to a lattice WaveField.

    Spatial covers act by FFT at every time.  Modulation elements act on the
    space-time spectrum of the windowed field ``bump(t / T) u``; ``T`` is required
    and the time nodes must be uniform.
    """
    from .propagator import WaveField

    lat = field_.lattice
    if lat is None:
        raise GridError("localisation needs a lattice field")
    axes = tuple(range(1, lat.n + 1))
    if cover.kind == "modulation":
        if T is None:
            raise ConfigError("modulation localisation needs a declared time window T")
        _check_uniform(field_.times)
        u = field_.values * time_window(field_.times, T).reshape((-1,) + (1,) * lat.n)
        U = np.fft.fftn(u)
        m, _ = _modulation_grid(field_, lat)
        j = cover.elements.index(element)
        w = cover.modulation_windows(m)[j]
        vals = np.fft.ifftn(U * w)
        prov = dict(field_.provenance, localized=f"Q_{element}", time_window=T)
        return WaveField(field_.kind, field_.times, vals, field_.weights, field_.grid, prov, lat)
    W = cover.lattice_window(lat, element)
    vals = np.fft.ifftn(np.fft.fftn(field_.values, axes=axes) * W, axes=axes)
    prov = dict(field_.provenance, localized=f"{cover.kind}:{element}")
    return WaveField(field_.kind, field_.times, vals, field_.weights, field_.grid, prov, lat)


def _check_uniform(times):
    if times.size < 2:
        raise GridError("need at least two time nodes")
    d = np.diff(times)
    if np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
        raise GridError("time nodes must be uniform")


# ----------------------------------------------------------------------------- norms


def lq_norm_stable(values, weights, q, axis=-1):
    """``(sum w |u|^q)^(1/q)`` along ``axis`` computed as ``sqrt(m) (sum w (s/m)^(q/2))^(1/q)``.

    Here ``s = re^2 + im^2`` and ``m = max s``; for integer ``q/2`` the scale ``m`` is
    rounded to an even power of two.  Scaling ``u`` by a power of two then scales
    the result by exactly the same factor.
    """
    v = np.asarray(values)
    if np.iscomplexobj(v):
        s = np.square(v.real)
        s += np.square(v.imag)
    else:
        s = v * v
    s = np.moveaxis(s, axis, -1)
    m = s.max(axis=-1, keepdims=True)
    if math.isinf(q):
        return np.sqrt(m[..., 0])
    half = 0.5 * q
    if half == int(half) and 1 <= half <= 8 and np.all((m == 0) | ((m > 1e-30) & (m < 1e30))):
        # scale by an even power of two near m instead: exact, so it can be applied after the sum
        e = 2 * np.floor(0.5 * np.log2(np.where(m > 0, m, 1.0)))[..., 0]
        x = s * s if half > 1 else s
        for _ in range(int(half) - 2):
            x *= s
        r = np.ldexp(x @ weights, (-half * e).astype(int))
        return np.ldexp(r ** (1.0 / q), (0.5 * e).astype(int))
    s = s / np.where(m > 0, m, 1.0)
    np.power(s, half, out=s)
    r = s @ weights
    return np.sqrt(m[..., 0]) * r ** (1.0 / q)


def _time_weights(times, T=None):
    times = np.asarray(times, dtype=float)
    sel = np.ones(times.size, dtype=bool) if T is None else np.abs(times) <= T * (1 + 1e-12)
    t = times[sel]
    if t.size == 1:
        return sel, np.ones(1)
    w = np.zeros(t.size)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return sel, w


def mixed_norm(field_, p, q, T=None):
    """``||u||_{L^p_t L^q_x}`` over the time nodes in ``[-T, T]`` (trapezoid in time)."""
    if p < 1 or q < 1:
        raise ConfigError("exponents must be >= 1")
    sel, wt = _time_weights(field_.times, T)
    a = lq_norm_stable(field_.flat()[sel], field_.weights, q)
    return float(lq_norm_stable(a[None, :], wt, p)[0])


@dataclass
class NormReport:
    p: float
    q: float
    s: float | None
    element_ids: list
    per_element: np.ndarray
    total: float
    window: float | None
    grid: dict

    def to_dict(self):
        return {"p": _num(self.p), "q": _num(self.q), "s": self.s,
                "elements": [{"id": i, "norm": float(v)} for i, v in zip(self.element_ids, self.per_element)],
                "total": self.total, "window": self.window, "grid": self.grid}


def _num(x):
    return "inf" if math.isinf(x) else float(x)


def _sq_total(vals):
    vals = np.asarray(vals, dtype=float)
    m = vals.max() if vals.size else 0.0
    if m == 0:
        return 0.0
    return float(m * math.sqrt(np.sum((vals / m) ** 2)))


def square_sum_norm(field_, cover: CoverSpec, p, q, T=None, method="auto", oversample=4):
    """``(sum_c ||P_c u||^2_{L^p_t L^q_x})^(1/2)`` for a lattice field; returns a :class:`NormReport`.

    Cube covers with many elements use :func:`cube_square_sum` (demodulated
    sub-box transforms); other covers localise element by element on the full
    lattice.
    """
    if cover.kind == "cube" and (method == "subbox" or (method == "auto" and len(cover) > 64)):
        lat = field_.lattice
        F = lat.to_coeffs(field_.values)
        rho = lat.xi_norm()
        # undo the propagation phase so that the sub-box routine can reapply it
        F0 = F * np.exp(2j * np.pi * field_.times.reshape((-1,) + (1,) * lat.n) * rho)
        per = cube_square_sum(F0[0], lat, cover, field_.times, p, q, T, oversample)
        if not np.allclose(F0, F0[0][None], atol=1e-9 * np.abs(F0).max()):
            raise GridError("sub-box evaluation requires a free wave (single spectrum)")
        return NormReport(p, q, None, cover.element_ids(), per, _sq_total(per), T, lat.spec())
    per = np.array([mixed_norm(localize(field_, cover, e, T), p, q, T) for e in cover.elements])
    return NormReport(p, q, None, cover.element_ids(), per, _sq_total(per), T, field_.grid)


def cube_square_sum(F, lattice, cover: CoverSpec, times, p, q, T=None, oversample=4):
    """Per-cube ``||P_c u||_{L^p_t L^q_x}`` for the free wave with lattice coefficients ``F``.

    ``P_c u = e^{2 pi i j0 . x / L} e_c(x)`` with ``e_c`` a trigonometric
    polynomial of ``s`` modes per axis; ``|P_c u| = |e_c|`` is sampled on a grid
    of ``oversample * s`` points per axis by a small zero-padded inverse FFT.
    """
    n = lattice.n
    mu = cover.params["mu"]
    L = lattice.L
    size = lattice.size
    f = lattice.freqs
    times = np.atleast_1d(np.asarray(times, dtype=float))
    sel, wt = _time_weights(times, T)
    tsel = times[sel]
    half = SUPPORT * mu
    s = int(math.floor(2 * half * L)) + 2
    Msub = int(2 ** math.ceil(math.log2(max(2, oversample * s))))
    if Msub > size:
        Msub = size
    jv = np.fft.fftfreq(size, 1.0 / size).astype(int)       # integer frequency indices
    E = np.array(cover.elements)
    out = np.empty(len(E))
    cell = (L / Msub) ** n
    wx = np.full(Msub ** n, cell)
    for e_i, c in enumerate(E):
        starts = [int(math.floor((c[a] * mu - half) * L)) for a in range(n)]
        idx = [np.arange(st, st + s) for st in starts]
        pos = [(ix % size) for ix in idx]
        sub = F[np.ix_(*pos)]
        win = 1.0
        rho2 = 0.0
        for a in range(n):
            fa = idx[a] / L
            wa = cube_windows_1d(fa, mu, [c[a]])[0]
            shape = [1] * n
            shape[a] = -1
            win = win * wa.reshape(shape)
            rho2 = rho2 + (fa ** 2).reshape(shape)
        rho = np.sqrt(rho2)
        # only indices in the FFT range [-size/2, size/2) exist on the lattice
        valid = 1.0
        for a in range(n):
            ok = ((idx[a] >= -(size // 2)) & (idx[a] < size - size // 2)).astype(float)
            shape = [1] * n
            shape[a] = -1
            valid = valid * ok.reshape(shape)
        G = sub * win * valid
        if not np.any(G):
            out[e_i] = 0.0
            continue
        vals = np.empty((tsel.size, Msub ** n))
        box = np.zeros((Msub,) * n, dtype=complex)
        for ti, t in enumerate(tsel):
            box[...] = 0.0
            box[tuple(slice(0, s) for _ in range(n))] = G * np.exp(-2j * np.pi * t * rho)
            env = np.fft.ifftn(box) * Msub ** n
            vals[ti] = np.abs(env).ravel()
        a_t = lq_norm_stable(vals, wx, q)
        out[e_i] = float(lq_norm_stable(a_t[None, :], wt, p)[0])
    return out


def sobolev_norm(datum, s):
    """``(sum_N <N>^(2 s) ||f^(N)||^2)^(1/2)`` from the block structure."""
    tot = 0.0
    for N in sorted(datum.blocks):
        tot += float(bracket(N)) ** (2.0 * s) * datum.block_mass(N)
    return math.sqrt(tot)


def modulation_profile(field_, cover: CoverSpec, T):
    """``||Q_j (bump(t/T) u)||_{L^2_{t,x}}`` for every ``j`` of a modulation cover, plus the total."""
    lat = field_.lattice
    if lat is None:
        raise GridError("modulation norms need a lattice field")
    _check_uniform(field_.times)
    nt = field_.times.size
    dt = float(field_.times[1] - field_.times[0])
    tau_res = 1.0 / (nt * dt)
    tau_nyq = 0.5 / dt
    j0, j1 = cover.params["j_min"], cover.params["j_max"]
    if 2.0 ** j0 < 0.5 * tau_res or 2.0 ** j1 > tau_nyq:
        raise GridError(f"window of {nt} nodes (dt={dt:g}) cannot resolve modulations "
                        f"2^{j0}..2^{j1} (resolution {tau_res:g}, Nyquist {tau_nyq:g})")
    u = field_.values * time_window(field_.times, T).reshape((-1,) + (1,) * lat.n)
    U = np.fft.fftn(u)
    m, _ = _modulation_grid(field_, lat)
    W = cover.modulation_windows(m)
    # discrete Parseval: ||u||^2 = dt * cell * sum |u|^2 = dt * cell / (nt * size^n) * sum |U|^2
    scale = dt * lat.cell / U.size
    A = U.real ** 2 + U.imag ** 2
    per = np.sqrt(np.array([np.sum(A * w * w) * scale for w in W]))
    total = math.sqrt(float(np.sum(u.real ** 2 + u.imag ** 2) * dt * lat.cell))
    return np.array(cover.elements), per, total


def modulation_norm(field_, s, b, k, T, j_min=None, j_max=None):
    """``2^(s k) max_j 2^(b j) ||Q_j u||_{L^2_{t,x}}`` over the resolvable ``j``-range."""
    nt = field_.times.size
    dt = float(field_.times[1] - field_.times[0])
    if j_min is None:
        j_min = int(math.ceil(math.log2(1.0 / (nt * dt))))
    if j_max is None:
        j_max = int(math.floor(math.log2(0.5 / dt)))
    cover = build_cover("modulation", {"j_min": j_min, "j_max": j_max})
    js, per, _ = modulation_profile(field_, cover, T)
    vals = 2.0 ** (b * js) * per
    i = int(np.argmax(vals))
    return {"value": float(2.0 ** (s * k) * vals[i]), "j_star": int(js[i]),
            "profile": {int(j): float(v) for j, v in zip(js, per)}, "window": T}
