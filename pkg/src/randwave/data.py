"""Frequency-localised initial data in Fourier-Bessel form and their randomisation.

A datum is stored per dyadic block ``N``.  Each block holds, for every harmonic
row ``(k, l)`` with ``k <= K_max``, a radial profile ``C(sigma)`` sampled on the
unit annulus ``sigma in [1/2, 2]``.  The actual Fourier profile of the block is
``c^(N)(rho) = N^(-n/2) C(rho / N)``, which keeps ``L^2(rho^(n-1) d rho)`` norms
unchanged.  Profiles are expressed in frame coordinates: with ``Q_k`` the
orthogonal matrix of degree ``k`` the datum's Fourier transform is

    f^(rho theta) = sum_{k,l} c_{k,l}(rho) b_{k,l}(theta),   b_k = Q_k Y_k.

Radial profiles expand in the period-4 family ``exp(i pi nu rho / 2)``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeds
from .errors import ConfigError, LayerError
from .sphere import harmonic_space_info

__all__ = [
    "RHO_MIN", "RHO_MAX", "PERIOD",
    "RadialGrid", "Block", "Datum", "NuTable", "RandomPlan", "DrawSet", "CubeLayer",
    "FAMILIES", "draw", "verify_moment_bound",
    "radial_to_nu", "nu_to_radial", "nu_table_full", "interval_partition", "default_nu_max",
    "IntervalSplit", "interval_nu_tables",
    "randomize", "gaussian_profile", "random_datum", "radial_datum", "datum_from_profiles",
    "DATUM_FORMAT_VERSION",
]

RHO_MIN = 0.5
RHO_MAX = 2.0
PERIOD = 4.0
DATUM_FORMAT_VERSION = 1


# ----------------------------------------------------------------------------- grids


@dataclass(frozen=True)
class RadialGrid:
    """Uniform samples of the unit annulus, ``M`` samples per period 4."""

    M: int = 1024

    def __post_init__(self):
        if self.M < 8 or self.M & (self.M - 1):
            raise ConfigError(f"samples per period must be a power of two >= 8, got {self.M}")

    @property
    def drho(self):
        return PERIOD / self.M

    @property
    def n_rho(self):
        return int(round((RHO_MAX - RHO_MIN) / self.drho)) + 1

    @property
    def rho(self):
        return RHO_MIN + self.drho * np.arange(self.n_rho)

    @property
    def weights(self):
        w = np.full(self.n_rho, self.drho)
        w[0] = w[-1] = 0.5 * self.drho
        return w


# ----------------------------------------------------------------------------- nu modes


@dataclass
class NuTable:
    """Coefficients ``c^nu`` of ``sum_nu c^nu exp(2 pi i nu rho / period)`` (modes on the last axis)."""

    nu: np.ndarray
    coeffs: np.ndarray
    M: int
    rho0: float = RHO_MIN
    period: float = PERIOD
    tail_fraction: float = 0.0

    @property
    def nu_max(self):
        return int(np.max(np.abs(self.nu)))

    def mass(self):
        """``sum_nu |c^nu|^2``, the mean of ``|g|^2`` over one period (``int |g|^2 d rho / period``)."""
        return np.sum(np.abs(self.coeffs) ** 2, axis=-1)


def default_nu_max(period=PERIOD, M=1024):
    """Mode cut-off: 128 modes per period 4 (32 cycles per unit ``rho``), capped below ``M/2``."""
    return int(min(M // 2 - 1, math.ceil(32.0 * period)))


def radial_to_nu(values, M=1024, nu_max=None, rho0=RHO_MIN, warn_tol=1e-6, period=PERIOD):
    """Mode coefficients of samples ``values[..., j]`` at ``rho0 + period * j / M``.

    With the default period 4 the family is ``exp(i pi nu rho / 2)``.  Fewer than
    ``M`` samples are zero-padded to one full period.  The reconstruction
    ``g(rho) = sum_{|nu| <= nu_max} c^nu exp(2 pi i nu rho / period)`` is exact on
    the grid when no mode beyond ``nu_max`` carries mass; otherwise a warning
    reports the discarded fraction.
    """
    if M < 1 or M & (M - 1):
        raise ValueError("sample count per period must be a power of two")
    values = np.asarray(values)
    if values.shape[-1] > M:
        raise ValueError(f"{values.shape[-1]} samples exceed one period of {M}")
    nu_max = M // 2 if nu_max is None else int(nu_max)
    if not 0 <= nu_max <= M // 2:
        raise ValueError(f"nu_max must lie in [0, {M // 2}]")
    spec = np.fft.fft(values, n=M, axis=-1) / M
    nu_all = np.fft.fftfreq(M, 1.0 / M).astype(int)
    if nu_max == M // 2:
        # full spectrum: nu = -M/2 .. M/2 - 1
        order = np.argsort(nu_all)
        nu = nu_all[order]
        c = spec[..., order]
        tail = 0.0
    else:
        nu = np.arange(-nu_max, nu_max + 1)
        c = spec[..., nu % M]
        total = np.sum(np.abs(spec) ** 2)
        kept = np.sum(np.abs(c) ** 2)
        tail = float((total - kept) / total) if total > 0 else 0.0
        if tail > warn_tol:
            warnings.warn(f"nu-truncation at {nu_max} drops {tail:.2e} of the mass", RuntimeWarning)
    c = c * np.exp(-2j * np.pi * nu * rho0 / period)
    return NuTable(nu, c, M, rho0, period, max(tail, 0.0))


def nu_to_radial(table, rho=None, n=None):
    """Evaluate ``sum_nu c^nu exp(2 pi i nu rho / period)``.

    With ``rho=None`` the result is returned on the transform grid (first ``n``
    samples, default a full period) via an inverse FFT.
    """
    if rho is None:
        M = table.M
        n = M if n is None else n
        spec = np.zeros(table.coeffs.shape[:-1] + (M,), dtype=complex)
        spec[..., table.nu % M] = table.coeffs * np.exp(2j * np.pi * table.nu * table.rho0 / table.period)
        return (np.fft.ifft(spec, axis=-1) * M)[..., :n]
    rho = np.asarray(rho, dtype=float)
    phase = np.exp(2j * np.pi * np.multiply.outer(table.nu, rho) / table.period)
    return np.tensordot(table.coeffs, phase, axes=([-1], [0]))


@dataclass(frozen=True)
class IntervalSplit:
    """Square-root partition of the unit annulus into pieces of width ``width``.

    Piece ``I`` is expanded in the exponential family of period ``period``
    (``4 * 2^ceil(log2(width / 1.5))``, which is 4 for the whole annulus), on the
    ``M_I`` grid samples starting at index ``start[I]``.
    """

    width: float
    centers: np.ndarray
    eta: np.ndarray          # (n_I, n_rho), sum_I eta_I^2 = 1
    period: float
    M_I: int
    start: np.ndarray
    nu_max: int

    @property
    def n_intervals(self):
        return self.centers.size

    def gather_index(self, n_rho):
        idx = self.start[:, None] + np.arange(self.M_I)[None, :]
        return np.minimum(idx, n_rho - 1), idx < n_rho


def interval_partition(width, grid: RadialGrid, nu_max=None):
    """Split of the unit annulus into smooth pieces of width ``width`` (see :class:`IntervalSplit`)."""
    from .windows import SUPPORT, bump

    if not 0 < width <= RHO_MAX - RHO_MIN:
        raise ConfigError(f"interval width must lie in (0, 1.5], got {width}")
    n_int = int(math.ceil((RHO_MAX - RHO_MIN) / width - 1e-9))
    centers = RHO_MIN + width * (np.arange(n_int) + 0.5)
    raw = bump((grid.rho[None, :] - centers[:, None]) / (SUPPORT * width))
    eta = raw / np.sqrt(np.sum(raw ** 2, axis=0))[None, :]
    period = PERIOD * 2.0 ** math.ceil(math.log2(width / (RHO_MAX - RHO_MIN)) - 1e-12)
    M_I = int(round(period / grid.drho))
    if M_I < 8:
        raise ConfigError(f"interval width {width} is below the radial grid resolution")
    lo = centers - SUPPORT * width
    start = np.clip(np.floor((lo - RHO_MIN) / grid.drho).astype(int), 0, grid.n_rho - 1)
    nmax = default_nu_max(period, M_I) if nu_max is None else int(min(nu_max, M_I // 2 - 1))
    return IntervalSplit(float(width), centers, eta, float(period), M_I, start, nmax)


def interval_nu_tables(values, split: IntervalSplit, grid: RadialGrid):
    """Per-piece mode tables of ``eta_I * values``; returns a list of :class:`NuTable`."""
    values = np.asarray(values)
    idx, valid = split.gather_index(grid.n_rho)
    out = []
    for i in range(split.n_intervals):
        g = np.where(valid[i], (split.eta[i] * values)[..., idx[i]], 0.0)
        out.append(radial_to_nu(g, split.M_I, split.nu_max, grid.rho[split.start[i]],
                                warn_tol=np.inf, period=split.period))
    return out


# ----------------------------------------------------------------------------- datum


@dataclass
class Block:
    N: int
    coeffs: np.ndarray  # (rows, n_rho) complex, frame coordinates, unit-annulus profile


@dataclass
class CubeLayer:
    """Pending Wiener multiplier ``m(xi) = sum_c h_c chi_c(xi)`` over a cube lattice."""

    mu: float
    radius: int          # draws cover cube indices in [-radius, radius]^n
    h: np.ndarray        # shape (2*radius+1,)*n

    def is_identity(self):
        return bool(np.all(self.h == 1.0))


@dataclass
class Datum:
    n: int
    K_max: int
    grid: RadialGrid
    blocks: dict
    frames: dict = field(default_factory=dict)   # k -> (N_k, N_k) orthogonal matrix
    cube: CubeLayer | None = None
    label: str = "datum"

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ConfigError(f"space dimension must be 2 or 3, got {self.n}")
        deg, order = [], []
        for k in range(self.K_max + 1):
            nk = harmonic_space_info(self.n - 1, k)[0]
            deg += [k] * nk
            order += list(range(nk))
        self.degrees = np.array(deg, dtype=int)
        self.orders = np.array(order, dtype=int)
        for N, b in self.blocks.items():
            if N < 1 or N & (N - 1):
                raise ConfigError(f"block index must be a power of two >= 1, got {N}")
            if b.coeffs.shape != (self.n_rows, self.grid.n_rho):
                raise ConfigError(f"block {N} has shape {b.coeffs.shape}, expected "
                                  f"{(self.n_rows, self.grid.n_rho)}")

    @property
    def d(self):
        return self.n - 1

    @property
    def n_rows(self):
        return int(sum(harmonic_space_info(self.n - 1, k)[0] for k in range(self.K_max + 1)))

    def degree_slice(self, k):
        idx = np.nonzero(self.degrees == k)[0]
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def frame(self, k):
        nk = harmonic_space_info(self.n - 1, k)[0]
        Q = self.frames.get(k)
        return np.eye(nk) if Q is None else np.asarray(Q)

    def standard_coeffs(self, N):
        """Block ``N`` profiles in the standard harmonic basis (``c_std = Q^T c``)."""
        c = self.blocks[N].coeffs
        out = np.empty_like(c)
        for k in range(self.K_max + 1):
            s = self.degree_slice(k)
            out[s] = self.frame(k).T @ c[s]
        return out

    def block_mass(self, N):
        """``sum_{k,l} int |c^(N)_{k,l}|^2 rho^(n-1) d rho`` (rescaling-invariant)."""
        c = self.blocks[N].coeffs
        w = self.grid.weights * self.grid.rho ** (self.n - 1)
        return float(np.sum((c.real ** 2 + c.imag ** 2) @ w))

    def row_masses(self, N):
        c = self.blocks[N].coeffs
        w = self.grid.weights * self.grid.rho ** (self.n - 1)
        return (c.real ** 2 + c.imag ** 2) @ w

    def l2_norm(self):
        return math.sqrt(sum(self.block_mass(N) for N in self.blocks))

    def scaled(self, a):
        blocks = {N: Block(N, a * b.coeffs) for N, b in self.blocks.items()}
        return replace(self, blocks=blocks)

    def top_frequency(self):
        return RHO_MAX * max(self.blocks)

    def profile(self, N, rho):
        """Actual profiles ``c^(N)(rho)`` (frame coordinates) at radii ``rho`` by exact mode sums."""
        tab = radial_to_nu(self.blocks[N].coeffs, self.grid.M, warn_tol=np.inf)
        sig = np.asarray(rho, dtype=float) / N
        vals = nu_to_radial(tab, sig)
        inside = (sig >= RHO_MIN) & (sig <= RHO_MAX)
        return N ** (-self.n / 2.0) * np.where(inside, vals, 0.0)

    # -- serialisation

    def to_dict(self):
        return {
            "format": "randwave-datum",
            "version": DATUM_FORMAT_VERSION,
            "n": self.n,
            "K_max": self.K_max,
            "label": self.label,
            "rho_grid": {"rho_min": RHO_MIN, "rho_max": RHO_MAX, "samples_per_period": self.grid.M},
            "rows": [[int(k), int(l)] for k, l in zip(self.degrees, self.orders)],
            "blocks": {str(N): {"re": b.coeffs.real.tolist(), "im": b.coeffs.imag.tolist()}
                       for N, b in sorted(self.blocks.items())},
            "frames": {str(k): np.asarray(Q).tolist() for k, Q in sorted(self.frames.items())},
            "cube": None if self.cube is None else {
                "mu": self.cube.mu, "radius": self.cube.radius, "h": self.cube.h.ravel().tolist()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj):
        if obj.get("format") != "randwave-datum":
            raise ConfigError("not a datum container")
        if obj.get("version") != DATUM_FORMAT_VERSION:
            raise ConfigError(f"unsupported datum version {obj.get('version')!r}")
        grid = RadialGrid(int(obj["rho_grid"]["samples_per_period"]))
        blocks = {int(N): Block(int(N), np.array(v["re"]) + 1j * np.array(v["im"]))
                  for N, v in obj["blocks"].items()}
        frames = {int(k): np.array(Q) for k, Q in obj["frames"].items()}
        cube = None
        if obj.get("cube"):
            c = obj["cube"]
            n = int(obj["n"])
            r = int(c["radius"])
            cube = CubeLayer(float(c["mu"]), r, np.array(c["h"]).reshape((2 * r + 1,) * n))
        return cls(int(obj["n"]), int(obj["K_max"]), grid, blocks, frames, cube, obj.get("label", "datum"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def nu_table_full(datum, block, nu_max=None):
    """Mode table of a block's whole unit-annulus profile (rows x modes)."""
    if isinstance(block, int):
        block = datum.blocks[block]
    nu_max = default_nu_max(PERIOD, datum.grid.M) if nu_max is None else nu_max
    return radial_to_nu(block.coeffs, datum.grid.M, nu_max, warn_tol=np.inf)


# ----------------------------------------------------------------------------- generators


def gaussian_profile(rho, center=1.25, width=0.1):
    """Gaussian bump in ``rho``; at the default width its value at the annulus ends is below 1e-12."""
    rho = np.asarray(rho, dtype=float)
    return np.exp(-0.5 * ((rho - center) / width) ** 2)


def datum_from_profiles(n, K_max, profiles, frames=None, grid=None, label="datum"):
    """Build a datum from ``{N: array (rows, n_rho)}`` of unit-annulus profiles."""
    grid = grid or RadialGrid()
    blocks = {int(N): Block(int(N), np.asarray(c, dtype=complex)) for N, c in profiles.items()}
    return Datum(n, K_max, grid, blocks, dict(frames or {}), None, label)


def radial_datum(n=3, center=1.25, width=0.1, grid=None, N=1):
    """Radial datum (degree 0 only) with a Gaussian profile, normalised to unit L^2."""
    grid = grid or RadialGrid()
    c = gaussian_profile(grid.rho, center, width)[None, :].astype(complex)
    d = datum_from_profiles(n, 0, {N: c}, grid=grid, label="radial")
    return d.scaled(1.0 / d.l2_norm())


BUMP_CENTERS = (1.05, 1.25, 1.45)
BUMP_WIDTH = 0.08


def random_datum(n, K_max, seed, blocks=(1,), haar_frames=True, grid=None,
                 centers=BUMP_CENTERS, width=BUMP_WIDTH, normalize=True, degree_decay=0.0):
    """Smooth random datum: each row is a combination of Gaussian bumps in ``rho``.

    Bump amplitudes are standard complex Gaussians drawn from the datum lane;
    ``degree_decay`` damps degree ``k`` by ``(1 + k)^(-degree_decay)``.  Haar
    frames are drawn on the frame lane ``(k,)`` of the same seed.
    """
    from .frames import sample_haar_orthogonal

    grid = grid or RadialGrid()
    centers = np.asarray(centers, dtype=float)
    bumps = gaussian_profile(grid.rho[None, :], centers[:, None], width)
    prof = {}
    rows = sum(harmonic_space_info(n - 1, k)[0] for k in range(K_max + 1))
    deg = np.concatenate([[k] * harmonic_space_info(n - 1, k)[0] for k in range(K_max + 1)])
    damping = (1.0 + deg) ** (-float(degree_decay))
    for N in blocks:
        rng = seeds.generator(seed, seeds.LANE_DATUM, N)
        a = rng.standard_normal((rows, len(centers), 2))
        amp = (a[..., 0] + 1j * a[..., 1]) / math.sqrt(2.0)
        prof[N] = (amp @ bumps) * damping[:, None]
    frames = {}
    if haar_frames:
        for k in range(1, K_max + 1):
            nk = harmonic_space_info(n - 1, k)[0]
            frames[k] = sample_haar_orthogonal(nk, seed, k).matrix
    d = datum_from_profiles(n, K_max, prof, frames, grid, label=f"random-{seed}")
    return d.scaled(1.0 / d.l2_norm()) if normalize else d


# ----------------------------------------------------------------------------- laws


FAMILIES = {"signs": 0.5, "gaussian": 0.5, "uniform": 0.5, "identity": 0.0}


def _mgf_exact(family, g):
    g = np.asarray(g, dtype=float)
    if family == "signs":
        return np.cosh(g)
    if family == "gaussian":
        return np.exp(0.5 * g * g)
    if family == "uniform":
        a = math.sqrt(3.0) * g
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(a == 0, 1.0, np.sinh(a) / np.where(a == 0, 1.0, a))
    if family == "identity":
        return np.exp(g)
    raise ConfigError(f"unknown distribution family {family!r}")


def draw(family, rng, size):
    """Real unit-variance draws (``identity`` gives all ones)."""
    if family == "signs":
        return 2.0 * rng.integers(0, 2, size=size).astype(float) - 1.0
    if family == "gaussian":
        return rng.standard_normal(size)
    if family == "uniform":
        s = math.sqrt(3.0)
        return rng.uniform(-s, s, size=size)
    if family == "identity":
        return np.ones(size)
    raise ConfigError(f"unknown distribution family {family!r}")


@dataclass(frozen=True)
class RandomPlan:
    family: str = "signs"
    angular: bool = True
    radial: bool = False
    cube: bool = False
    c: float | None = None
    master_seed: int = 0
    interval_width: float = 1.0          # radial layer piece width
    nu_max: int | None = None            # radial layer mode cut-off (None: default for the width)
    cube_mu: float = 1.0                 # Wiener cube side

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown distribution family {self.family!r}")
        if self.c is None:
            object.__setattr__(self, "c", FAMILIES[self.family])

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("family", "angular", "radial", "cube", "c", "master_seed",
                 "interval_width", "nu_max", "cube_mu")}


def verify_moment_bound(plan: RandomPlan, gammas, samples=100_000, seed=None):
    """Empirical ``E exp(gamma X)`` against ``exp(c gamma^2)``.

    A point passes when the empirical value is at most the bound times
    ``1 + 5 * (relative Monte Carlo standard error)``.
    """
    gammas = np.asarray(gammas, dtype=float)
    if np.any(np.abs(gammas) > 4):
        raise ValueError("|gamma| must not exceed 4")
    rng = seeds.generator(plan.master_seed if seed is None else seed, 7)
    x = draw(plan.family, rng, samples)
    e = np.exp(np.multiply.outer(gammas, x))
    emp = e.mean(axis=1)
    se = e.std(axis=1, ddof=1) / math.sqrt(samples)
    bound = np.exp(plan.c * gammas ** 2)
    rel = np.where(emp > 0, se / emp, 0.0)
    ok = emp <= bound * (1.0 + 5.0 * rel)
    return {
        "family": plan.family,
        "c": plan.c,
        "gamma": gammas.tolist(),
        "empirical": emp.tolist(),
        "std_error": se.tolist(),
        "exact": _mgf_exact(plan.family, gammas).tolist(),
        "bound": bound.tolist(),
        "pass": bool(np.all(ok)),
        "per_gamma_pass": ok.tolist(),
    }


# ----------------------------------------------------------------------------- randomisation


@dataclass
class DrawSet:
    plan: RandomPlan
    trial: int
    angular: dict = field(default_factory=dict)     # N -> (rows,)
    radial: dict = field(default_factory=dict)      # N -> (rows, n_I, 2 nu_max + 1)
    cube: CubeLayer | None = None
    lineage: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "plan": self.plan.to_dict(),
            "trial": self.trial,
            "angular": {str(N): h.tolist() for N, h in sorted(self.angular.items())},
            "radial_shape": {str(N): list(h.shape) for N, h in sorted(self.radial.items())},
            "cube": None if self.cube is None else {"mu": self.cube.mu, "radius": self.cube.radius},
            "lineage": self.lineage,
        }


def _apply_radial(c, h, split: IntervalSplit, grid: RadialGrid):
    """``c + sum_I eta_I * sum_nu c^(I),nu (h - 1) e_nu`` on the grid.

    Modes beyond the cut-off keep their coefficient, so identity draws return
    ``c`` unchanged.
    """
    idx, valid = split.gather_index(grid.n_rho)
    nu = np.arange(-split.nu_max, split.nu_max + 1)
    out = c.copy()
    for i in range(split.n_intervals):
        g = np.where(valid[i], (split.eta[i] * c)[:, idx[i]], 0.0)
        spec = np.fft.fft(g, axis=-1)
        mult = np.zeros(spec.shape)
        mult[:, nu % split.M_I] = h[:, i, :] - 1.0
        back = np.fft.ifft(spec * mult, axis=-1) * (split.eta[i][idx[i]] * valid[i])
        sel = idx[i][valid[i]]
        out[:, sel] += back[:, valid[i]]
    return out


def cube_radius(datum, mu):
    return int(math.ceil(datum.top_frequency() / mu)) + 1


def randomize(datum: Datum, plan: RandomPlan, trial=0, order=("angular", "radial")):
    """Apply the requested layers with draws from the lanes ``(layer, trial, N)``.

    The angular layer multiplies every row of every block by its own draw.  The
    radial layer splits each profile with the square-root partition of width
    ``plan.interval_width``, expands every piece in modes and multiplies each mode
    by its own draw before reassembly.  The cube layer records one draw per cube of
    side ``plan.cube_mu`` (lane ``(layer, trial)``, shared by all blocks); it is
    applied as a Fourier multiplier when the datum is rasterised on a lattice.
    """
    if not (plan.angular or plan.radial or plan.cube):
        raise LayerError("plan activates no randomisation layer")
    if set(order) != {"angular", "radial"}:
        raise LayerError("order must list 'angular' and 'radial'")
    ds = DrawSet(plan, int(trial), lineage={"master_seed": plan.master_seed, "trial": int(trial)})
    rows = datum.n_rows
    new_blocks = {}
    split = None
    if plan.radial:
        split = interval_partition(plan.interval_width, datum.grid, plan.nu_max)
    for N in sorted(datum.blocks):
        c = datum.blocks[N].coeffs
        if plan.angular:
            rng = seeds.generator(plan.master_seed, seeds.LAYER_ANGULAR, trial, N)
            ds.angular[N] = draw(plan.family, rng, rows)
        if plan.radial:
            rng = seeds.generator(plan.master_seed, seeds.LAYER_RADIAL, trial, N)
            ds.radial[N] = draw(plan.family, rng, (rows, split.n_intervals, 2 * split.nu_max + 1))
        for layer in order:
            if layer == "angular" and plan.angular:
                c = c * ds.angular[N][:, None]
            elif layer == "radial" and plan.radial:
                c = _apply_radial(c, ds.radial[N], split, datum.grid)
        new_blocks[N] = Block(N, c)
    cube = datum.cube
    if plan.cube:
        if cube is not None:
            raise LayerError("datum already carries a cube layer")
        r = cube_radius(datum, plan.cube_mu)
        rng = seeds.generator(plan.master_seed, seeds.LAYER_CUBE, trial)
        h = draw(plan.family, rng, (2 * r + 1,) * datum.n)
        cube = CubeLayer(float(plan.cube_mu), r, h)
        ds.cube = cube
    out = Datum(datum.n, datum.K_max, datum.grid, new_blocks, datum.frames, cube,
                f"{datum.label}/trial-{trial}")
    return out, ds
