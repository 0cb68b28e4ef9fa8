"""Ensemble experiments over randomised data.

Every experiment draws trial ``i`` from the seed lanes ``(layer, i, N)`` of a
single master seed, evaluates one scalar functional per trial and reduces the
ordered list of scalars.  Nothing depends on how trials are scheduled, so
reports are identical for any worker count.

Two evaluation back ends are available:

``polar``
    Fourier-Bessel series on a polar grid (no cube layer).  When only the
    angular layer is active, the radial functions are computed once and every
    trial just rescales their rows.
``lattice``
    plane-wave propagation on a periodic box; supports all three layers and
    frequency covers.
"""
from __future__ import annotations

import math
import multiprocessing as mp
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import stats

from . import data as D
from . import propagator as P
from .errors import ConfigError, GridError, LayerError, ResourceLimitError
from .norms import (annulus_window, bracket, build_cover, cube_square_sum, lq_norm_stable,
                    mixed_norm, square_sum_norm, _time_weights)
from .sphere import ProductSynthesizer, _legendre_table, harmonic_space_info
from .windows import bump

__all__ = [
    "NormSpec", "ExperimentConfig", "TailFit", "ExperimentResult",
    "make_datum", "fit_tail", "run_trials", "PolarEvaluator", "LatticeEvaluator",
    "tail_experiment", "mu_scaling_experiment", "comparison_report", "knapp_datum",
    "tube_coherence", "knapp_separation", "dyadic_weight_experiment", "dyadic_weight_table",
    "log_bracket",
]

MIN_FIT_TRIALS = 100
MIN_EXCEEDANCES = 10


# ----------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class NormSpec:
    """Functional ``||u||_{L^p_t L^q_x([-T, T] x R^n)}`` (optionally square-summed over a cover)."""

    p: float = 2.0
    q: float = 6.0
    T: float = 4.0
    nt: int = 17
    backend: str = "polar"
    cover: dict | None = None          # e.g. {"kind": "cube", "mu": 0.5}
    R_pad: float = 6.0                 # polar grid radius beyond T
    lattice_L: float = 16.0
    lattice_size: int = 64
    oversample: int = 4                # sub-box sampling density of cube square sums

    def __post_init__(self):
        if self.oversample < 1:
            raise ConfigError("oversample must be >= 1")
        if self.p < 1 or self.q < 1:
            raise ConfigError("norm exponents must be >= 1")
        if self.T <= 0 or self.nt < 2:
            raise ConfigError("time window needs T > 0 and at least two nodes")
        if self.backend not in ("polar", "lattice"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.cover is not None and self.backend != "lattice":
            raise ConfigError("frequency covers need the lattice backend")

    @property
    def times(self):
        return np.linspace(-self.T, self.T, self.nt)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("p", "q", "T", "nt", "backend", "cover", "R_pad", "lattice_L", "lattice_size",
                 "oversample")}


@dataclass(frozen=True)
class ExperimentConfig:
    datum: dict = field(default_factory=lambda: {"generator": "random", "n": 3, "K_max": 8})
    plan: D.RandomPlan = field(default_factory=D.RandomPlan)
    trials: int = 2000
    norm: NormSpec = field(default_factory=NormSpec)
    lambdas: tuple | None = None        # increasing; default spans median..max of the sample
    n_lambda: int = 32
    eps_star: float = 0.1
    seed: int = 0
    scale: float = 1.0                  # multiplies the datum (scaling-equivariance checks)
    output: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trial count must be positive")
        if self.lambdas is not None:
            lam = np.asarray(self.lambdas, dtype=float)
            if lam.size < 2 or np.any(np.diff(lam) <= 0):
                raise ConfigError("lambda grid must be strictly increasing")
        if self.n_lambda < 2:
            raise ConfigError("n_lambda must be >= 2")
        if not self.eps_star > 0:
            raise ConfigError("eps_star must be positive")
        if self.plan.master_seed != self.seed:
            object.__setattr__(self, "plan", replace(self.plan, master_seed=self.seed))

    def to_dict(self):
        return {"datum": dict(self.datum), "plan": self.plan.to_dict(), "trials": self.trials,
                "norm": self.norm.to_dict(),
                "lambdas": None if self.lambdas is None else [float(x) for x in self.lambdas],
                "n_lambda": self.n_lambda, "eps_star": self.eps_star, "seed": self.seed,
                "scale": self.scale}


@dataclass
class ExperimentResult:
    """JSON-ready report plus the rows of its CSV companion."""

    name: str
    report: dict
    csv_header: list
    csv_rows: list
    passed: bool | None = None
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)


def make_datum(spec: dict):
    """Datum from a generator spec: ``random``, ``radial`` or ``knapp``."""
    spec = dict(spec)
    gen = spec.pop("generator", "random")
    n = int(spec.pop("n", 3))
    if gen == "random":
        blocks = tuple(int(b) for b in spec.pop("blocks", (1,)))
        return D.random_datum(n, int(spec.pop("K_max", 8)), int(spec.pop("seed", 0)), blocks=blocks,
                              **spec)
    if gen == "radial":
        return D.radial_datum(n, **spec)
    if gen == "knapp":
        return knapp_datum(float(spec.pop("delta")), n, **spec)
    raise ConfigError(f"unknown datum generator {gen!r}")


# ----------------------------------------------------------------------------- trial scheduling

_TASK = None


def _call_task(i):
    return _TASK(i)


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get("RANDWAVE_WORKERS", "1"))
    return max(1, int(workers))


def run_trials(fn, n_trials, workers=None, chunksize=8):
    """``[fn(0), ..., fn(n_trials - 1)]`` with optional forked worker processes.

    Results come back in trial order whatever the worker count.
    """
    global _TASK
    workers = _workers(workers)
    if workers == 1 or n_trials < 2:
        return [fn(i) for i in range(n_trials)]
    _TASK = fn
    try:
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
            return list(ex.map(_call_task, range(n_trials), chunksize=chunksize))
    finally:
        _TASK = None


# ----------------------------------------------------------------------------- evaluators


def _frame_to_std(B, datum):
    """Per-degree ``Q^T`` applied to the last (row) axis of ``B``."""
    out = np.empty_like(B)
    for k in range(datum.K_max + 1):
        s = datum.degree_slice(k)
        out[..., s] = B[..., s] @ datum.frame(k)
    return out


class PolarEvaluator:
    """``||u||_{L^p_t L^q_x}`` of randomised versions of one datum on a polar grid."""

    def __init__(self, datum: D.Datum, norm: NormSpec, plan: D.RandomPlan, scale=1.0):
        if datum.n != 3:
            raise ConfigError("the polar evaluator is implemented for n = 3")
        if plan.cube:
            raise LayerError("the cube layer needs the lattice backend")
        self.datum = datum if scale == 1.0 else datum.scaled(scale)
        self.norm = norm
        self.plan = plan
        self.times = norm.times
        K_sphere = max(datum.K_max, int(math.ceil(norm.q * datum.K_max / 2.0)))
        self.grid = P.polar_grid(3, norm.T + norm.R_pad, K_sphere)
        self.synth = ProductSynthesizer(self.grid.sphere, datum.K_max)
        self.w_x = self.grid.weights
        self.sel, self.w_t = _time_weights(self.times)
        self.fast = plan.angular and not plan.radial
        if self.fast:
            # radial functions in frame coordinates, one array per block
            # stored as (nt, n_r, rows), the layout the synthesiser consumes
            self.A = {N: np.ascontiguousarray(np.swapaxes(
                P.radial_series(_single_block(self.datum, N), self.times, self.grid.r, std=False), 1, 2))
                for N in sorted(self.datum.blocks)}

    def field_values(self, trial):
        """Complex samples ``(nt, n_r * n_sphere)`` for one trial."""
        if self.fast:
            B = None
            for N in sorted(self.A):
                rng = D.seeds.generator(self.plan.master_seed, D.seeds.LAYER_ANGULAR, trial, N)
                h = D.draw(self.plan.family, rng, self.datum.n_rows)
                term = self.A[N] * h
                B = term if B is None else B + term
            A = _frame_to_std(B, self.datum)
        else:
            rd, _ = D.randomize(self.datum, self.plan, trial)
            A = np.swapaxes(P.radial_series(rd, self.times, self.grid.r, std=True), 1, 2)
        u = self.synth(A)                                               # (nt, n_r, nodes)
        return u.reshape(self.times.size, -1)

    def __call__(self, trial):
        u = self.field_values(trial)
        a = lq_norm_stable(u, self.w_x, self.norm.q)
        return float(lq_norm_stable(a[None, :], self.w_t, self.norm.p)[0])


def _single_block(datum, N):
    return replace(datum, blocks={N: datum.blocks[N]})


class LatticeEvaluator:
    """Functionals of randomised data propagated on a periodic lattice."""

    def __init__(self, datum: D.Datum, norm: NormSpec, plan: D.RandomPlan, scale=1.0,
                 lattice: P.Lattice | None = None):
        self.datum = datum if scale == 1.0 else datum.scaled(scale)
        self.norm = norm
        self.plan = plan
        self.lattice = lattice or P.Lattice(datum.n, norm.lattice_L, norm.lattice_size)
        frac = P._mass_beyond(self.datum, self.lattice.nyquist)
        if frac > 1e-12:
            raise GridError(f"{frac:.2e} of the mass lies beyond the lattice Nyquist rate")
        self.raster = P.LatticeRasterizer(self.lattice, datum.n, datum.K_max, datum.blocks,
                                          datum.grid.M)
        self.times = norm.times
        self.rho = self.lattice.xi_norm()
        self.cover = None
        if norm.cover is not None:
            c = dict(norm.cover)
            kind = c.pop("kind")
            self.cover = build_cover(kind, c, region=(D.RHO_MIN, datum.top_frequency()), n=datum.n,
                                     resolution=1.0 / self.lattice.L)

    def coefficients(self, trial):
        rd, _ = D.randomize(self.datum, self.plan, trial)
        return self.raster(rd)

    def field(self, F, times=None):
        return P.lattice_field(F, self.lattice, self.times if times is None else times)

    def __call__(self, trial):
        F = self.coefficients(trial)
        nm = self.norm
        if self.cover is None:
            return mixed_norm(self.field(F), nm.p, nm.q)
        if self.cover.kind == "cube":
            per = cube_square_sum(F, self.lattice, self.cover, self.times, nm.p, nm.q,
                                  oversample=nm.oversample)
            return _l2(per)
        return square_sum_norm(self.field(F), self.cover, nm.p, nm.q).total


    def cost_probe(self, sample=32):
        """Projected seconds per trial: one timed rasterisation plus a timed subset of cubes."""
        t0 = time.perf_counter()
        F = self.coefficients(0)
        t1 = time.perf_counter()
        if self.cover is None or self.cover.kind != "cube":
            self(0)
            return time.perf_counter() - t0
        n = len(self.cover)
        pick = np.linspace(0, n - 1, min(sample, n)).astype(int)
        sub = replace(self.cover, elements=[self.cover.elements[i] for i in pick])
        cube_square_sum(F, self.lattice, sub, self.times, self.norm.p, self.norm.q,
                        oversample=self.norm.oversample)
        t2 = time.perf_counter()
        return (t1 - t0) + (t2 - t1) * n / pick.size


def _l2(v):
    v = np.asarray(v, dtype=float)
    m = v.max() if v.size else 0.0
    return 0.0 if m == 0 else float(m * math.sqrt(np.sum((v / m) ** 2)))


def make_evaluator(cfg: ExperimentConfig, datum=None):
    datum = make_datum(cfg.datum) if datum is None else datum
    if cfg.norm.backend == "polar":
        return PolarEvaluator(datum, cfg.norm, cfg.plan, cfg.scale)
    return LatticeEvaluator(datum, cfg.norm, cfg.plan, cfg.scale)


# ----------------------------------------------------------------------------- tail fits


@dataclass
class TailFit:
    lambdas: np.ndarray
    tail: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    exceed: np.ndarray
    trials: int
    used: np.ndarray                 # mask of lambdas entering the regression
    C: float | None = None
    c: float | None = None
    slope: float | None = None
    intercept: float | None = None
    r2: float | None = None
    valid: bool = False
    reason: str = ""

    def to_dict(self):
        return {
            "lambda": [float(x) for x in self.lambdas],
            "tail": [float(x) for x in self.tail],
            "ci_low": [float(x) for x in self.ci_low],
            "ci_high": [float(x) for x in self.ci_high],
            "exceedances": [int(x) for x in self.exceed],
            "used_in_fit": [bool(x) for x in self.used],
            "trials": int(self.trials),
            "fit": {"C": self.C, "c": self.c, "slope": self.slope, "intercept": self.intercept,
                    "r2": self.r2, "valid": self.valid, "reason": self.reason},
        }

    def csv_rows(self):
        return [[float(l), float(t), float(a), float(b), int(e)]
                for l, t, a, b, e in zip(self.lambdas, self.tail, self.ci_low, self.ci_high, self.exceed)]


CSV_TAIL_HEADER = ["lambda", "tail", "ci_low", "ci_high", "exceedances"]


def default_lambdas(values, n_lambda=32):
    """``n_lambda`` equispaced levels from the sample median up to (not including) the maximum."""
    v = np.sort(np.asarray(values, dtype=float))
    lo, hi = float(np.median(v)), float(v[-1])
    if hi <= lo:
        return np.array([lo, lo + 1.0])
    return lo + (hi - lo) * np.arange(n_lambda) / n_lambda


def fit_tail(values, lambdas=None, n_lambda=32, min_exceed=MIN_EXCEEDANCES):
    """Empirical ``P(X > lambda)`` with Wilson 95% intervals and a ``C exp(-c lambda^2)`` fit.

    Only levels with at least ``min_exceed`` exceedances enter the regression of
    ``log tail`` against ``lambda^2``.
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    lam = default_lambdas(v, n_lambda) if lambdas is None else np.asarray(lambdas, dtype=float)
    exceed = np.array([(v > x).sum() for x in lam], dtype=int)
    tail = exceed / n
    lo = np.empty(lam.size)
    hi = np.empty(lam.size)
    for i, k in enumerate(exceed):
        ci = stats.binomtest(int(k), n).proportion_ci(0.95, method="wilson")
        lo[i], hi[i] = ci.low, ci.high
    used = exceed >= min_exceed
    fit = TailFit(lam, tail, lo, hi, exceed, n, used)
    if n < MIN_FIT_TRIALS:
        fit.reason = f"fewer than {MIN_FIT_TRIALS} trials"
        return fit
    if used.sum() < 3:
        fit.reason = "fewer than 3 levels with enough exceedances"
        return fit
    x = lam[used] ** 2
    y = np.log(tail[used])
    if np.ptp(x) == 0:
        fit.reason = "degenerate lambda grid"
        return fit
    reg = stats.linregress(x, y)
    fit.slope = float(reg.slope)
    fit.intercept = float(reg.intercept)
    fit.r2 = float(reg.rvalue ** 2)
    fit.c = -fit.slope
    fit.C = float(math.exp(reg.intercept))
    fit.valid = True
    return fit


def tail_experiment(cfg: ExperimentConfig, workers=None, datum=None, values=None):
    """Per-trial norms of the randomised free wave, empirical tail curve and Gaussian fit."""
    t0 = time.perf_counter()
    if values is None:
        ev = make_evaluator(cfg, datum)
        values = run_trials(ev, cfg.trials, workers)
    values = np.asarray(values, dtype=float)
    fit = fit_tail(values, cfg.lambdas, cfg.n_lambda)
    med = float(np.median(values))
    report = {
        "experiment": "tails",
        "config": cfg.to_dict(),
        "per_trial": [float(x) for x in values],
        "median": med,
        "tail_fit": fit.to_dict(),
    }
    res = ExperimentResult("tails", report, CSV_TAIL_HEADER, fit.csv_rows(),
                           bool(fit.valid and fit.slope < 0 and fit.r2 >= 0.9))
    res.elapsed = time.perf_counter() - t0
    return res


# ----------------------------------------------------------------------------- mu scaling


def mu_target(n):
    """Predicted exponent ``-(n - 2) / (2 (n - 1))`` of the square sum in ``mu``."""
    return Fraction(-(n - 2), 2 * (n - 1))


def mu_lattice(mu_min, rho_top=D.RHO_MAX, pad=1.0):
    """Smallest power-of-two lattice resolving cubes of side ``mu_min`` and frequencies up to ``rho_top``."""
    L = max(2.0 / mu_min, 4.0) * pad
    size = 2 ** int(math.ceil(math.log2(2.0 * rho_top * L)))
    return L, size


def _mu_evaluator(cfg, datum, mu, lattice):
    plan = replace(cfg.plan, radial=True, interval_width=float(mu))
    norm = replace(cfg.norm, backend="lattice", cover={"kind": "cube", "mu": float(mu)})
    return LatticeEvaluator(datum, norm, plan, cfg.scale, lattice)


def mu_scaling_experiment(cfg: ExperimentConfig, mus, workers=None, budget_s=None, datum=None):
    """Median square-sum norm over the ``mu``-cube cover, for each ``mu``, and its log-log slope.

    The radial layer is always active with interval width ``mu``; the angular
    layer follows ``cfg.plan``.  One lattice fine enough for the smallest ``mu``
    is shared by all runs.  With ``budget_s`` set, the cost of every ``mu`` is
    projected from one timed trial first and a :class:`ResourceLimitError` is
    raised when the projection exceeds the budget.
    """
    mus = sorted((float(m) for m in mus), reverse=True)
    if len(mus) < 3:
        raise ConfigError("mu-scaling needs at least 3 values of mu")
    if any(not 0 < m <= 1 for m in mus):
        raise ConfigError("mu values must lie in (0, 1]")
    datum = make_datum(cfg.datum) if datum is None else datum
    L, size = mu_lattice(min(mus), datum.top_frequency())
    lattice = P.Lattice(datum.n, L, size)
    evs = {mu: _mu_evaluator(cfg, datum, mu, lattice) for mu in mus}
    projection = {}
    if budget_s is not None:
        for mu in mus:
            projection[mu] = evs[mu].cost_probe() * cfg.trials / _workers(workers)
        total = sum(projection.values())
        if total > budget_s:
            raise ResourceLimitError(
                f"projected runtime {total:.0f} s exceeds the budget {budget_s:.0f} s "
                f"(per mu: {', '.join(f'{m:g}: {s:.0f} s' for m, s in projection.items())})")
    per_mu = {mu: np.asarray(run_trials(evs[mu], cfg.trials, workers)) for mu in mus}
    return _mu_report(cfg, datum, mus, per_mu, lattice, evs, projection)


def _mu_report(cfg, datum, mus, per_mu, lattice, evs, projection):
    med = np.array([float(np.median(per_mu[m])) for m in mus])
    reg = stats.linregress(np.log(mus), np.log(med))
    target = mu_target(datum.n)
    rows = [[m, float(x), len(evs[m].cover)] for m, x in zip(mus, med)]
    report = {
        "experiment": "mu-scaling",
        "config": cfg.to_dict(),
        "lattice": lattice.spec(),
        "mu": mus,
        "n_cubes": [len(evs[m].cover) for m in mus],
        "median": [float(x) for x in med],
        "per_trial": {str(m): [float(x) for x in per_mu[m]] for m in mus},
        "fit": {"exponent": float(reg.slope), "intercept": float(reg.intercept),
                "r2": float(reg.rvalue ** 2), "stderr": float(reg.stderr)},
        "target": {"exponent": str(target), "value": float(target)},
    }
    passed = abs(reg.slope - float(target)) <= 0.15
    # wall-clock projections vary between runs, so they travel with the manifest, not the report
    timing = {"projection_s": {str(m): s for m, s in projection.items()}}
    return ExperimentResult("mu-scaling", report, ["mu", "median", "n_cubes"], rows, bool(passed),
                            extra={"timing": timing})


# ----------------------------------------------------------------------------- exponent arithmetic


def comparison_report(n_list=(3, 4, 5), measured=None, mu_probe=Fraction(1, 4)):
    """Exact exponent bookkeeping of the cube-localised bounds and their ``L^inf`` conversions.

    For each ``n`` the table lists, as fractions:

    * ``kt``: the deterministic cube bound at the endpoint ``p = 2(n-1)/(n-3)``
      (``n >= 4``), exponent ``1/2 - 1/p``;
    * ``randomized``: ``-(n-2)/(2(n-1))`` at ``q = 2(n-1)/(n-2)``;
    * their Bernstein conversions to ``L^inf`` (adding ``n/p`` resp. ``n/q``),
      both equal to ``(n-2)/2``.
    """
    rows = []
    for n in n_list:
        n = int(n)
        row = {"n": n, "target": Fraction(n - 2, 2)}
        if n >= 4:
            inv_p = Fraction(n - 3, 2 * (n - 1))
            row["kt_p"] = 1 / inv_p if inv_p else None
            row["kt"] = Fraction(1, 2) - inv_p
            row["kt_linf"] = row["kt"] + n * inv_p
        q = Fraction(2 * (n - 1), n - 2)
        row["randomized_q"] = q
        row["randomized"] = mu_target(n)
        row["randomized_linf"] = row["randomized"] + n / q
        row["amplification"] = float(mu_probe) ** float(row["randomized"])
        rows.append(row)

    def enc(v):
        return {"exact": str(v), "value": float(v)} if isinstance(v, Fraction) else v

    table = [{k: enc(v) for k, v in r.items()} for r in rows]
    consistent = all(r["randomized_linf"] == r["target"] and ("kt_linf" not in r or r["kt_linf"] == r["target"])
                     for r in rows)
    report = {"experiment": "compare", "mu_probe": str(mu_probe), "table": table,
              "measured": measured or {}, "chains_consistent": consistent}
    header = ["n", "kt", "kt_linf", "randomized", "randomized_linf", "target", "amplification"]
    csv_rows = [[r["n"], str(r.get("kt", "")), str(r.get("kt_linf", "")), str(r["randomized"]),
                 str(r["randomized_linf"]), str(r["target"]), r["amplification"]] for r in rows]
    return ExperimentResult("compare", report, header, csv_rows, consistent, extra={"rows": rows})


# ----------------------------------------------------------------------------- Knapp packets


KNAPP_K_CAP = 64


def _angular_profile(theta, delta):
    if delta >= math.pi:
        return np.ones_like(theta)
    return bump(theta / delta)


def knapp_datum(delta, n=3, K=None, grid=None, center=1.5, half_width=0.5, label=None):
    """Zonal wave packet Fourier-supported near the sector ``angle(xi, e3) <= delta``, ``1 <= |xi| <= 2``.

    The angular factor ``bump(theta / delta)`` is expanded in zonal harmonics up
    to degree ``K`` (default ``ceil(8 / delta)``, capped at 64); the radial
    factor is ``bump((rho - center) / half_width)``.  For ``delta >= pi`` the
    angular factor is 1 and the datum is radial.  ``L^2``-normalised.
    """
    if not 0 < delta <= math.pi:
        raise ConfigError("delta must lie in (0, pi]")
    if n != 3:
        raise ConfigError("Knapp packets are implemented for n = 3")
    if K is None:
        K = 0 if delta >= math.pi else int(math.ceil(8.0 / delta))
    if K > KNAPP_K_CAP:
        raise GridError(f"delta={delta:g} needs degree {K} beyond the angular cap {KNAPP_K_CAP}")
    grid = grid or D.RadialGrid()
    coef = zonal_coefficients(delta, K)
    radial = bump((grid.rho - center) / half_width)
    rows = (K + 1) ** 2
    prof = np.zeros((rows, grid.n_rho), dtype=complex)
    for k in range(K + 1):
        prof[k * k + k] = coef[k] * radial                      # m = 0 row of degree k
    d = D.datum_from_profiles(3, K, {1: prof}, None, grid, label or f"knapp-{delta:g}")
    return d.scaled(1.0 / d.l2_norm())


def zonal_coefficients(delta, K, nodes=None):
    """``int a(theta) Y_k0 d sigma`` for the angular factor of :func:`knapp_datum`, ``k <= K``."""
    if nodes is None:
        nodes = max(64, 8 * (K + 1))
    top = math.pi if delta >= math.pi else delta
    x, w = np.polynomial.legendre.leggauss(nodes)
    theta = 0.5 * top * (x + 1.0)
    wt = 0.5 * top * w * np.sin(theta) * 2.0 * math.pi
    a = _angular_profile(theta, delta)
    Pk = _legendre_table(K, np.cos(theta))[:, 0, :]             # Y_k0 on the nodes
    return Pk @ (a * wt)


def tube_coherence(datum: D.Datum, times, n_x=None):
    """``|u(t, t e3)| / |u(0, 0)|`` by direct quadrature over ``(rho, cos theta)``.

    ``u(t, t e3) = 2 pi int int f^(rho, x) exp(2 pi i rho t (x - 1)) rho^2 d rho dx``
    for a zonal datum ``f^(rho, x) = sum_k c_k(rho) Y_k0(x)``.
    """
    if datum.n != 3 or len(datum.blocks) != 1 or 1 not in datum.blocks:
        raise ConfigError("tube coherence needs a single-block datum in n = 3")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    K = datum.K_max
    rho = datum.grid.rho
    c = np.stack([datum.blocks[1].coeffs[k * k + k] for k in range(K + 1)])      # (K+1, n_rho)
    t_max = float(np.abs(times).max()) if times.size else 0.0
    if n_x is None:
        n_x = 2 * K + 64 + int(math.ceil(4.0 * D.RHO_MAX * t_max))
    x, wx = np.polynomial.legendre.leggauss(n_x)
    Y = _legendre_table(K, x)[:, 0, :]                                           # (K+1, n_x)
    fhat = c.T @ Y                                                               # (n_rho, n_x)
    wr = datum.grid.weights * rho ** 2
    out = np.empty(times.size, dtype=complex)
    for i, t in enumerate(times):
        ph = np.exp(2j * np.pi * t * np.outer(rho, x - 1.0))
        out[i] = 2.0 * np.pi * np.sum(wr[:, None] * wx[None, :] * fhat * ph)
    u0 = 2.0 * np.pi * np.sum(wr[:, None] * wx[None, :] * fhat)
    return times, np.abs(out) / abs(u0), u0


def knapp_separation(delta=0.5, trials=100, seed=0, q=4.5, T=2.0, nt=17, L=16.0, size=64,
                     workers=None, K_random=4):
    """Norm ``||u||_{L^2_t L^q_x}`` of the Knapp packet against the median over randomised data.

    Both data have unit ``L^2`` norm; the randomised ensemble uses smooth random
    data of degree ``<= K_random`` with angular signs.
    """
    knapp = knapp_datum(delta)
    norm = NormSpec(p=2.0, q=q, T=T, nt=nt, backend="lattice", lattice_L=L, lattice_size=size)
    lat = P.Lattice(3, L, size)
    Fk = P.rasterize(knapp, lat)
    k_norm = mixed_norm(P.lattice_field(Fk, lat, norm.times), 2.0, q)
    rnd = D.random_datum(3, K_random, seed)
    ev = LatticeEvaluator(rnd, norm, D.RandomPlan(master_seed=seed), 1.0, lat)
    vals = np.asarray(run_trials(ev, trials, workers))
    med = float(np.median(vals))
    return {"delta": delta, "q": q, "knapp_norm": float(k_norm), "random_median": med,
            "random_norms": [float(v) for v in vals], "separated": bool(med < k_norm)}


# ----------------------------------------------------------------------------- dyadic weighted sums


def log_bracket(N):
    """``<log N>`` with the natural logarithm and ``<x> = sqrt(1 + x^2)``."""
    return float(bracket(math.log(N)))


def dyadic_weight_table(N_list, s=Fraction(1, 2), delta=Fraction(1, 100)):
    """Exact exponents of ``N^(2s - 1 - delta)`` and ``N^(2s - delta)``, with monotonicity flags.

    ``N^e`` is nonincreasing along increasing ``N`` exactly when ``e <= 0``,
    which is how the check is carried out (no floating point).
    """
    s = Fraction(s)
    delta = Fraction(delta)
    e2 = 2 * s - 1 - delta
    e3 = 2 * s - delta
    rows = [{"N": int(N), "exponent_l2": str(e2), "weight_l2": float(N) ** float(e2),
             "exponent_linf": str(e3), "weight_linf": float(N) ** float(e3),
             "log_bracket_sq": log_bracket(N) ** 2} for N in sorted(N_list)]
    return {"s": str(s), "delta": str(delta), "rows": rows,
            "l2_nonincreasing": e2 <= 0, "l2_at_most_one": e2 <= 0}


@dataclass(frozen=True)
class DyadicSpec:
    """Lattice and functional parameters of the dyadic weighted-sum experiment."""

    blocks: tuple = (1, 2, 4, 8)
    K_max: int = 2
    L: float = 2.0
    size: int = 64
    T: float = 1.0
    nt: int = 9
    M: float = 6.0
    s: Fraction = Fraction(1, 2)
    delta: Fraction = Fraction(1, 100)
    cube_mu: float = 1.0

    def to_dict(self):
        return {"blocks": list(self.blocks), "K_max": self.K_max, "L": self.L, "size": self.size,
                "T": self.T, "nt": self.nt, "M": self.M, "s": str(self.s), "delta": str(self.delta),
                "cube_mu": self.cube_mu}


class DyadicEvaluator:
    """Per-trial weighted square sums over the dyadic pieces ``P_N u``."""

    def __init__(self, datum, spec: DyadicSpec, plan: D.RandomPlan, scale):
        self.spec = spec
        self.plan = plan
        self.datum = datum.scaled(scale)
        self.lattice = P.Lattice(3, spec.L, spec.size)
        frac = P._mass_beyond(self.datum, self.lattice.nyquist)
        if frac > 1e-12:
            raise GridError(f"block {max(datum.blocks)} exceeds the lattice Nyquist rate "
                            f"{self.lattice.nyquist:g}")
        self.raster = P.LatticeRasterizer(self.lattice, 3, datum.K_max, datum.blocks, datum.grid.M)
        rho = self.lattice.xi_norm()
        top = datum.top_frequency()
        self.N_list = [2 ** i for i in range(int(math.log2(top)) + 1)]
        self.windows = {N: annulus_window(rho, N) for N in self.N_list}
        self.times = np.linspace(-spec.T, spec.T, spec.nt)
        self.phase = [np.exp(-2j * np.pi * t * rho) for t in self.times]
        _, self.w_t = _time_weights(self.times)
        self.w_x = np.full(rho.size, self.lattice.cell)
        s, dl = float(spec.s), float(spec.delta)
        self.weights = {
            "F1": {N: log_bracket(N) ** 2 for N in self.N_list},
            "F2": {N: log_bracket(N) ** 2 * N ** (2 * s - 1 - dl) for N in self.N_list},
            "F2_inf": {N: log_bracket(N) ** 2 * N ** (2 * s - 1 - dl) for N in self.N_list},
            "F3": {N: log_bracket(N) ** 2 * N ** (2 * s - dl) for N in self.N_list},
        }

    def pieces(self, trial):
        rd, _ = D.randomize(self.datum, self.plan, trial)
        F = self.raster(rd)
        out = {}
        for N in self.N_list:
            G = F * self.windows[N]
            if not np.any(G):
                out[N] = (0.0, 0.0, 0.0)
                continue
            vals = np.stack([self.lattice.to_physical(G * ph) for ph in self.phase]).reshape(self.times.size, -1)
            aM = lq_norm_stable(vals, self.w_x, self.spec.M)
            ainf = lq_norm_stable(vals, self.w_x, math.inf)
            out[N] = (float(lq_norm_stable(aM[None], self.w_t, 2.0)[0]),
                      float(lq_norm_stable(ainf[None], self.w_t, 2.0)[0]),
                      float(ainf.max()))
        return out

    def __call__(self, trial):
        pcs = self.pieces(trial)
        res = {}
        for name, w in self.weights.items():
            j = {"F1": 0, "F2": 0, "F2_inf": 1, "F3": 2}[name]
            res[name] = math.sqrt(sum(w[N] * pcs[N][j] ** 2 for N in self.N_list))
        return res


def dyadic_weight_experiment(cfg: ExperimentConfig, spec: DyadicSpec | None = None, workers=None):
    """Tails of the weighted dyadic square sums with all three layers active.

    The datum is normalised to ``||f||_{H^s} = eps_star`` before the trials; the
    report lists, for each functional, the fraction of trials exceeding
    ``eps_star^(1/4)``.
    """
    spec = spec or DyadicSpec()
    dspec = dict(cfg.datum)
    dspec.update({"blocks": tuple(spec.blocks), "K_max": spec.K_max})
    datum = make_datum(dspec)
    if len(datum.blocks) == 0:
        raise ConfigError("datum has no blocks")
    from .norms import sobolev_norm
    hs = sobolev_norm(datum, float(spec.s))
    scale = cfg.scale * cfg.eps_star / hs
    plan = replace(cfg.plan, angular=True, radial=True, cube=True, cube_mu=spec.cube_mu)
    ev = DyadicEvaluator(datum, spec, plan, scale)
    per = run_trials(ev, cfg.trials, workers)
    names = list(ev.weights)
    thr = cfg.eps_star ** 0.25
    fits = {}
    rows = []
    for name in names:
        v = np.array([p[name] for p in per])
        fit = fit_tail(v, None, cfg.n_lambda, MIN_EXCEEDANCES)
        fits[name] = {"tail_fit": fit.to_dict(), "median": float(np.median(v)),
                      "threshold": thr, "fraction_above_threshold": float(np.mean(v > thr))}
        rows += [[name] + r for r in fit.csv_rows()]
    table = dyadic_weight_table(ev.N_list, spec.s, spec.delta)
    report = {
        "experiment": "dyadic",
        "config": cfg.to_dict(),
        "spec": spec.to_dict(),
        "sobolev_norm_before_scaling": hs,
        "N_list": ev.N_list,
        "weights": {k: {str(N): w for N, w in v.items()} for k, v in ev.weights.items()},
        "weight_table": table,
        "functionals": fits,
        "per_trial": {name: [float(p[name]) for p in per] for name in names},
    }
    ok = table["l2_nonincreasing"] and all(
        f["tail_fit"]["fit"]["valid"] and f["tail_fit"]["fit"]["slope"] < 0 and f["tail_fit"]["fit"]["r2"] >= 0.85
        for f in fits.values())
    return ExperimentResult("dyadic", report, ["functional"] + CSV_TAIL_HEADER, rows, bool(ok))
