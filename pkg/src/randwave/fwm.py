"""Pseudo-spectral solver for the fractional wave-maps model on a periodic box.

The equation is ``Box u = R_nu u R^nu u`` with ``Box = -d_t^2 + Lap``, Minkowski
signature ``(-, +, +, +)`` and Riesz-type operators ``R_nu = d_nu |grad|^-alpha``:

    u_tt = Lap u - N(u),    N(u) = -(R_0 u)^2 + sum_j (R_j u)^2.

Spatial wavenumbers are angular (``k = 2 pi xi``), so the linear flow is
``exp(-+ i |k| t)`` exactly as in the plane-wave propagator.  Time stepping is
fourth-order Runge-Kutta in integrating-factor form: the linear part is applied
exactly and only the quadratic forcing is approximated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import fft as sfft

from .errors import BlowUpError, ConfigError, GridError

__all__ = [
    "FwmConfig", "FwmState", "Trajectory", "FwmLattice",
    "s_alpha", "riesz_apply", "null_nonlinearity", "linear_flow",
    "initial_state", "solve_fwm", "free_wave", "decoupling_diagnostic",
    "quadratic_scaling_fit", "step_convergence", "homogeneous_norm", "NullForm",
    "plane_wave_null_residual", "save_trajectory", "load_trajectory",
]


def s_alpha(alpha):
    """Critical regularity ``3/2 - 2 alpha`` (exact for rational input)."""
    if isinstance(alpha, Fraction):
        return Fraction(3, 2) - 2 * alpha
    return 1.5 - 2.0 * alpha


@dataclass(frozen=True)
class FwmConfig:
    alpha: float = 0.125
    L: float = 10.0
    size: int = 64
    dt: float = 0.01
    T: float = 4.0
    eps: float = 1e-2
    s: float | None = None          # data regularity (default s_alpha)
    dealias: str = "2/3"
    save_every: int = 10
    nonlinear: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 0.25:
            raise ConfigError(f"alpha must lie in (0, 1/4), got {self.alpha}")
        if self.size < 8 or self.size % 2:
            raise ConfigError("lattice size must be even and >= 8")
        if self.L <= 0 or self.T <= 0:
            raise ConfigError("box period and final time must be positive")
        if not 0 < self.dt <= 0.5 * self.L / self.size:
            raise ConfigError(f"time step {self.dt} violates dt <= 0.5 * L / size = "
                              f"{0.5 * self.L / self.size:g}")
        if self.dealias not in ("2/3", "none"):
            raise ConfigError(f"unknown dealiasing rule {self.dealias!r}")
        if self.save_every < 1:
            raise ConfigError("save_every must be >= 1")
        s = self.data_regularity
        floor = s_alpha(self.alpha) - self.alpha / 2.0
        if not s > floor:
            raise ConfigError(f"data regularity s={s} must exceed s_alpha - alpha/2 = {floor:g}")

    @property
    def data_regularity(self):
        return s_alpha(self.alpha) if self.s is None else self.s

    @property
    def s_alpha(self):
        return s_alpha(self.alpha)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("alpha", "L", "size", "dt", "T", "eps", "s", "dealias", "save_every", "nonlinear")}


class FwmLattice:
    """Real-to-complex spectral lattice with angular wavenumbers."""

    def __init__(self, L, size, dealias="2/3"):
        self.L = float(L)
        self.size = int(size)
        k1 = 2.0 * np.pi * np.fft.fftfreq(size, L / size)
        kz = 2.0 * np.pi * np.fft.rfftfreq(size, L / size)
        self.k = (k1[:, None, None], k1[None, :, None], kz[None, None, :])
        self.kabs = np.sqrt(self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2)
        self._pow_cache = {}
        j1 = np.abs(np.fft.fftfreq(size, 1.0 / size))
        jz = np.abs(np.fft.rfftfreq(size, 1.0 / size))
        if dealias == "2/3":
            cut = size / 3.0
            self.mask = ((j1[:, None, None] <= cut) & (j1[None, :, None] <= cut)
                         & (jz[None, None, :] <= cut)).astype(float)
        else:
            self.mask = np.ones(self.kabs.shape)
        # multiplicity of each rfft mode in the full spectrum
        w = np.full(kz.size, 2.0)
        w[0] = 1.0
        if size % 2 == 0:
            w[-1] = 1.0
        self.mult = np.broadcast_to(w[None, None, :], self.kabs.shape)

    def kpow(self, p):
        """``|k|^p`` with the zero mode set to 0."""
        key = float(p)
        if key not in self._pow_cache:
            safe = np.where(self.kabs > 0, self.kabs, 1.0)
            self._pow_cache[key] = np.where(self.kabs > 0, safe ** key, 0.0)
        return self._pow_cache[key]

    def fft(self, u):
        return sfft.rfftn(u)

    def ifft(self, U):
        return sfft.irfftn(U, s=(self.size,) * 3)


@dataclass
class FwmState:
    """Spectral pair ``(u^, u_t^)`` (real-to-complex layout) at time ``t``."""

    t: float
    u_hat: np.ndarray
    ut_hat: np.ndarray

    def is_finite(self):
        return bool(np.all(np.isfinite(self.u_hat)) and np.all(np.isfinite(self.ut_hat)))


@dataclass
class Trajectory:
    config: FwmConfig
    states: list
    blowup: tuple | None = None       # (last finite time, first non-finite time)
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self):
        return np.array([s.t for s in self.states])


# ----------------------------------------------------------------------------- operators


def riesz_apply(U, nu, alpha, lat: FwmLattice | None = None, k=None, Ut=None):
    """Fourier multiplier of ``R_nu = d_nu |grad|^-alpha`` (zero mode mapped to 0).

    For ``nu = 1..3`` the symbol is ``i k_nu |k|^-alpha`` acting on ``U``; for
    ``nu = 0`` the result is ``|grad|^-alpha`` applied to the velocity ``Ut``.
    ``k`` may be given explicitly as a tuple of broadcastable wavenumber arrays
    (complex full-spectrum layouts); otherwise the lattice's layout is used.
    """
    if k is None:
        k = lat.k
    kabs = np.sqrt(sum(kk ** 2 for kk in k))
    with np.errstate(divide="ignore"):
        w = np.where(kabs > 0, kabs ** (-float(alpha)), 0.0)
    if alpha == 0:
        w = np.where(kabs > 0, 1.0, 0.0)
    if nu == 0:
        if Ut is None:
            raise ConfigError("R_0 needs the velocity component")
        return w * Ut
    if nu not in (1, 2, 3):
        raise ConfigError("nu must be 0, 1, 2 or 3")
    return 1j * k[nu - 1] * w * U


def null_nonlinearity(U, Ut, alpha, k, ifft, fft, mask=None):
    """Spectrum of ``-(R_0 u)^2 + sum_j (R_j u)^2`` with products formed in physical space.

    ``U``, ``Ut`` are spectra in the layout matched by ``k``/``ifft``/``fft``;
    ``mask`` (optional) applies the dealiasing truncation to the product.
    """
    r0 = ifft(riesz_apply(None, 0, alpha, k=k, Ut=Ut))
    out = -(r0 * r0)
    for nu in (1, 2, 3):
        r = ifft(riesz_apply(U, nu, alpha, k=k))
        out = out + r * r
    N = fft(out)
    return N if mask is None else N * mask


class NullForm:
    """Cached multipliers for :func:`null_nonlinearity` on a fixed lattice."""

    def __init__(self, lat: FwmLattice, alpha):
        w = lat.kpow(-float(alpha))
        self.w0 = w
        self.wj = [1j * kk * w for kk in lat.k]
        self.lat = lat

    def __call__(self, U, Ut):
        lat = self.lat
        r = lat.ifft(self.w0 * Ut)
        out = -(r * r)
        for wj in self.wj:
            r = lat.ifft(wj * U)
            out += r * r
        return lat.fft(out) * lat.mask


def _exp_linear(lat, h):
    """Entries of ``exp(A h)`` for ``A = [[0, 1], [-|k|^2, 0]]``."""
    w = lat.kabs
    c = np.cos(w * h)
    with np.errstate(invalid="ignore", divide="ignore"):
        s_over = np.where(w > 0, np.sin(w * h) / np.where(w > 0, w, 1.0), h)
    return c, s_over, -w * np.sin(w * h)


def _apply_exp(E, U, V):
    c, so, ws = E
    return c * U + so * V, ws * U + c * V


def linear_flow(state: FwmState, t, lat: FwmLattice):
    """Exact linear evolution by time ``t`` (any sign)."""
    U, V = _apply_exp(_exp_linear(lat, t), state.u_hat, state.ut_hat)
    return FwmState(state.t + t, U, V)


# ----------------------------------------------------------------------------- data and solver


def initial_state(F, lattice, eps, fl: FwmLattice):
    """``u(0) = eps Re f``, ``u_t(0) = eps Re(-i |grad| f)`` from lattice coefficients ``F`` of ``f``.

    ``lattice`` is the :class:`randwave.propagator.Lattice` on which ``F`` lives.
    """
    f = lattice.to_physical(F)
    kabs_full = 2.0 * np.pi * lattice.xi_norm()
    g = lattice.to_physical(-1j * kabs_full * F)
    u0 = eps * f.real
    v0 = eps * g.real
    U = fl.fft(u0) * fl.mask
    V = fl.fft(v0) * fl.mask
    lost = np.sum(np.abs(fl.fft(u0) * (1 - fl.mask)) ** 2) / max(np.sum(np.abs(fl.fft(u0)) ** 2), 1e-300)
    if lost > 1e-20:
        raise GridError(f"datum is not band-limited under the dealiasing cap (lost {lost:.1e})")
    return FwmState(0.0, U, V)


def solve_fwm(cfg: FwmConfig, F=None, lattice=None, state0: FwmState | None = None, raise_on_blowup=False):
    """Integrate from ``t = 0`` to ``cfg.T``; saves every ``cfg.save_every`` steps."""
    fl = FwmLattice(cfg.L, cfg.size, cfg.dealias)
    if state0 is None:
        if F is None:
            raise ConfigError("need lattice coefficients or an initial state")
        if lattice is None or lattice.size != cfg.size or abs(lattice.L - cfg.L) > 1e-12:
            raise GridError("datum lattice does not match the solver configuration")
        state0 = initial_state(F, lattice, cfg.eps, fl)
    n_steps = int(round(cfg.T / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.T) > 1e-9 * cfg.T:
        raise ConfigError("final time must be an integer number of steps")
    h = cfg.dt
    E1 = _exp_linear(fl, h)
    E2 = _exp_linear(fl, 0.5 * h)
    nf = NullForm(fl, cfg.alpha)

    def G(U, V):
        if not cfg.nonlinear:
            return np.zeros_like(V)
        return -nf(U, V)

    U, V = state0.u_hat.copy(), state0.ut_hat.copy()
    states = [FwmState(state0.t, U.copy(), V.copy())]
    with np.errstate(over="ignore", invalid="ignore"):
        blow = _rk4_loop(G, E1, E2, U, V, h, n_steps, state0, states, cfg, raise_on_blowup)
    return Trajectory(cfg, states, blow)


def _rk4_loop(G, E1, E2, U, V, h, n_steps, state0, states, cfg, raise_on_blowup):
    blow = None
    for step in range(1, n_steps + 1):
        g1 = G(U, V)
        Ua, Va = _apply_exp(E2, U, V + 0.5 * h * g1)
        g2 = G(Ua, Va)
        Ub, Vb = _apply_exp(E2, U, V)
        Vb = Vb + 0.5 * h * g2
        g3 = G(Ub, Vb)
        U1, V1 = _apply_exp(E1, U, V)
        e3u, e3v = _apply_exp(E2, 0.0, g3)
        Uc, Vc = U1 + h * e3u, V1 + h * e3v
        g4 = G(Uc, Vc)
        e1u, e1v = _apply_exp(E1, 0.0, g1)
        e23u, e23v = _apply_exp(E2, 0.0, g2 + g3)
        U = U1 + (h / 6.0) * (e1u + 2.0 * e23u)
        V = V1 + (h / 6.0) * (e1v + 2.0 * e23v + g4)
        t_new = state0.t + step * h
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            blow = (t_new - h, t_new)
            if raise_on_blowup:
                raise BlowUpError(f"non-finite state between t={blow[0]:g} and t={blow[1]:g}")
            break
        if step % cfg.save_every == 0 or step == n_steps:
            states.append(FwmState(t_new, U.copy(), V.copy()))
    return blow


def plane_wave_null_residual(alpha=0.125, L=10.0, size=32, mode=(2, 1, -1)):
    """``max |N(u)| / |k|^(2 - 2 alpha)`` for the characteristic wave ``u = cos(k.x - |k| t)`` at ``t = 0``."""
    fl = FwmLattice(L, size, "none")
    x = np.arange(size) * (L / size)
    X = np.meshgrid(x, x, x, indexing="ij")
    k = [2.0 * np.pi * m / L for m in mode]
    kk = math.sqrt(sum(v * v for v in k))
    ph = k[0] * X[0] + k[1] * X[1] + k[2] * X[2]
    U = fl.fft(np.cos(ph))
    V = fl.fft(kk * np.sin(ph))
    N = fl.ifft(null_nonlinearity(U, V, alpha, fl.k, fl.ifft, fl.fft))
    return float(np.abs(N).max() / kk ** (2.0 - 2.0 * alpha))


def save_trajectory(traj: Trajectory, path):
    """Checkpoint as ``.npz`` (times, u^, u_t^) with the configuration as JSON text."""
    import json

    np.savez(path, times=traj.times, u_hat=np.stack([s.u_hat for s in traj.states]),
             ut_hat=np.stack([s.ut_hat for s in traj.states]),
             config=json.dumps(traj.config.to_dict(), sort_keys=True),
             blowup=np.array(traj.blowup if traj.blowup else [np.nan, np.nan]))


def load_trajectory(path):
    import json

    z = np.load(path, allow_pickle=False)
    cfg = FwmConfig(**json.loads(str(z["config"])))
    states = [FwmState(float(t), u, v) for t, u, v in zip(z["times"], z["u_hat"], z["ut_hat"])]
    b = z["blowup"]
    return Trajectory(cfg, states, None if np.isnan(b[0]) else (float(b[0]), float(b[1])))


def free_wave(state0: FwmState, times, lat: FwmLattice):
    return [linear_flow(state0, t - state0.t, lat) for t in times]


def homogeneous_norm(U, s, lat: FwmLattice):
    """``||u||_{H-dot^s}`` on the torus from an rfft spectrum (zero mode excluded)."""
    n3 = lat.size ** 3
    w = lat.kpow(2.0 * s) if s != 0 else np.where(lat.kabs > 0, 1.0, 0.0)
    tot = np.sum(lat.mult * w * (U.real ** 2 + U.imag ** 2))
    return math.sqrt(tot * lat.L ** 3 / n3 ** 2)


def decoupling_diagnostic(traj: Trajectory, state0: FwmState | None = None):
    """``v = u - free wave`` at the saved times, measured in ``H-dot^{s_alpha}`` (``v_t`` in ``s_alpha - 1``)."""
    cfg = traj.config
    fl = FwmLattice(cfg.L, cfg.size, cfg.dealias)
    state0 = traj.states[0] if state0 is None else state0
    sa = float(cfg.s_alpha)
    rows = []
    for st in traj.states:
        fw = linear_flow(state0, st.t - state0.t, fl)
        if fw.u_hat.shape != st.u_hat.shape:
            raise GridError("trajectory and free wave live on different grids")
        dv = st.u_hat - fw.u_hat
        dvt = st.ut_hat - fw.ut_hat
        rows.append({
            "t": st.t,
            "v": homogeneous_norm(dv, sa, fl),
            "v_t": homogeneous_norm(dvt, sa - 1.0, fl),
            "u": homogeneous_norm(st.u_hat, sa, fl),
            "u_l2": homogeneous_norm(st.u_hat, 0.0, fl),
        })
    sup_v = max(r["v"] for r in rows)
    sup_u = max(r["u"] for r in rows)
    return {"s_alpha": sa, "source_index": sa - 1.0, "rows": rows, "sup_v": sup_v, "sup_u": sup_u,
            "ratio": sup_v / sup_u if sup_u > 0 else 0.0,
            "v0": rows[0]["v"], "vt0": rows[0]["v_t"], "blowup": traj.blowup}


def quadratic_scaling_fit(cfg: FwmConfig, F, lattice, eps_list):
    """Slope of ``log sup_t ||v||_{H-dot^{s_alpha}}`` against ``log eps``."""
    eps_list = sorted(float(e) for e in eps_list)
    if eps_list[-1] / eps_list[0] < 10 * (1 - 1e-9):
        raise ConfigError("eps list must span at least one decade")
    sups = []
    for e in eps_list:
        tr = solve_fwm(replace(cfg, eps=e), F, lattice)
        if tr.blowup is not None:
            return {"valid": False, "eps": eps_list, "blowup": tr.blowup, "at_eps": e}
        sups.append(decoupling_diagnostic(tr)["sup_v"])
    x = np.log(eps_list)
    y = np.log(sups)
    slope, icpt = np.polyfit(x, y, 1)
    return {"valid": True, "eps": eps_list, "sup_v": sups, "slope": float(slope),
            "intercept": float(icpt)}


def _state_error(a: FwmState, b: FwmState, lat):
    """L^2 distance of the ``u`` components (zero mode included)."""
    d = a.u_hat - b.u_hat
    return math.sqrt(np.sum(lat.mult * (d.real ** 2 + d.imag ** 2)) * lat.L ** 3 / lat.size ** 6)


def step_convergence(cfg: FwmConfig, F, lattice, refine_ref=4):
    """Final-time errors at steps ``dt`` and ``dt/2`` against a reference at ``dt/refine_ref``."""
    fl = FwmLattice(cfg.L, cfg.size, cfg.dealias)
    runs = {}
    for div in (1, 2, refine_ref):
        c = replace(cfg, dt=cfg.dt / div, save_every=10 ** 9)
        tr = solve_fwm(c, F, lattice)
        if tr.blowup is not None:
            return {"dt": cfg.dt, "valid": False, "blowup": tr.blowup, "at_dt": c.dt}
        runs[div] = tr.states[-1]
    ref = runs[refine_ref]
    e1 = _state_error(runs[1], ref, fl)
    e2 = _state_error(runs[2], ref, fl)
    return {"dt": cfg.dt, "valid": True, "err_dt": e1, "err_half": e2, "ratio": e1 / e2 if e2 > 0 else math.inf}
