"""Acceptance criteria 1-10 at their stated tolerances and budgets.

Each test records one pass/fail line, printed in the ``acceptance criteria``
section of the pytest terminal summary. The suite takes about half an hour
on one core. Set ``RANDWAVE_FULL_MU=1`` to run the mu-scaling criterion at its
full configuration instead of projecting its cost.
"""
import math
import os
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from randwave import cli
from randwave import data as D
from randwave import frames as FR
from randwave import fwm as FW
from randwave import montecarlo as MC
from randwave import propagator as P
from randwave.errors import ResourceLimitError

pytestmark = pytest.mark.slow


def test_criterion_01_projector_kernel(record_criterion):
    t0 = time.perf_counter()
    res = cli.projector_check(2, 16, 100, seed=42)
    dt = time.perf_counter() - t0
    ok = res["max_deviation"] < 1e-8 and dt < 30
    record_criterion(1, ok, f"max deviation {res['max_deviation']:.2e} (< 1e-8), {dt:.1f} s (< 30 s)")
    assert ok


def test_criterion_02_plancherel(record_criterion):
    # coefficient side: sum of ||c_kl||^2; physical side: polar quadrature of |f|^2 at t = 0
    t0 = time.perf_counter()
    grid = P.polar_grid(3, 16.0, 16)
    worst = 0.0
    for seed in range(20):
        d = D.random_datum(3, 16, seed)
        wf = P.propagate_fourier_bessel(d, [0.0], grid)
        worst = max(worst, abs(d.l2_norm() ** 2 / wf.spatial_l2()[0] ** 2 - 1))
    dt = time.perf_counter() - t0
    ok = worst < 0.01 and dt < 60
    record_criterion(2, ok, f"worst |ratio - 1| {worst:.2e} over 20 data (< 0.01), {dt:.1f} s (< 60 s)")
    assert ok


def test_criterion_03_propagator_cross_oracle(record_criterion):
    t0 = time.perf_counter()
    d = D.random_datum(3, 8, 11)
    ts = [0.0, 1.0, 2.0, 4.0]
    lat = P.Lattice(3, 32.0, 128)
    plane = P.propagate_plane_wave_oracle(P.rasterize(d, lat), lat, ts)
    # Fourier-Bessel samples on every third lattice point inside r < 14
    sl = slice(0, None, 3)
    idx = np.stack(np.meshgrid(*(np.arange(lat.size)[sl],) * 3, indexing="ij"), -1).reshape(-1, 3)
    pts = lat.x[idx]
    keep = np.linalg.norm(pts, axis=1) < 14
    idx, pts = idx[keep], pts[keep]
    fb = P.evaluate_at(d, ts, pts)
    disc = []
    for i in range(len(ts)):
        b = plane.values[i][idx[:, 0], idx[:, 1], idx[:, 2]]
        disc.append(float(np.linalg.norm(fb[i] - b) / np.linalg.norm(b)))
    polar = P.propagate_fourier_bessel(d, ts, P.polar_grid(3, 4 + 10.0, 8))
    drifts = (plane.l2_drift(), polar.l2_drift())
    dt = time.perf_counter() - t0
    ok = max(disc) < 1e-4 and max(drifts) < 1e-6 and dt < 120
    record_criterion(3, ok, f"max rel L2 discrepancy {max(disc):.2e} (< 1e-4), drift plane {drifts[0]:.1e} / "
                            f"Fourier-Bessel {drifts[1]:.1e} (< 1e-6), {dt:.1f} s (< 120 s)")
    assert ok


def test_criterion_04_good_frames(record_criterion):
    t0 = time.perf_counter()
    ks = list(range(1, 33))
    ens = FR.frame_ensemble(2, ks, 200, [4.0], master_seed=42)
    s = FR.good_frame_summary(ens, ks, q=4.0)
    dt = time.perf_counter() - t0
    ok = abs(s["lq_slope"]) <= 0.1 and s["linf_trend"] <= 0.15 and dt < 180
    record_criterion(4, ok, f"L4 slope {s['lq_slope']:+.3f} (|.| <= 0.1), L-inf/sqrt(log k) trend "
                            f"{s['linf_trend']:+.3f} (<= 0.15), {dt:.1f} s (< 180 s)")
    assert ok


def test_criterion_05_gaussian_tail(record_criterion):
    t0 = time.perf_counter()
    cfg = MC.ExperimentConfig(trials=2000, seed=42)
    a = MC.tail_experiment(cfg, workers=1)
    b = MC.tail_experiment(replace(cfg, scale=2.0), workers=2)
    dt = time.perf_counter() - t0
    fit = a.report["tail_fit"]["fit"]
    va, vb = np.array(a.report["per_trial"]), np.array(b.report["per_trial"])
    exact = bool(np.array_equal(vb, 2.0 * va))
    ok = a.passed and exact and dt < 600
    record_criterion(5, ok, f"slope {fit['slope']:.3g} (< 0), R2 {fit['r2']:.4f} (>= 0.9), 2f equivariance "
                            f"bit-exact {exact}, {dt:.0f} s (< 600 s)")
    assert ok


def test_criterion_06_mu_scaling(record_criterion):
    cfg = cli.parse_config({})
    ec = cli._experiment_config(cfg, 500, cli._norm(cfg, q=4.5, backend="lattice"), seed=42)
    mus = [0.5, 0.25, 0.125, 0.0625]
    t0 = time.perf_counter()
    if os.environ.get("RANDWAVE_FULL_MU") == "1":
        res = MC.mu_scaling_experiment(ec, mus)
        dt = time.perf_counter() - t0
        e = res.report["fit"]["exponent"]
        ok = res.passed and dt < 1200
        record_criterion(6, ok, f"exponent {e:+.3f} (target -1/4 +- 0.15), {dt:.0f} s (< 1200 s)")
        assert ok
        return
    try:
        res = MC.mu_scaling_experiment(ec, mus, budget_s=1200)
    except ResourceLimitError as err:
        projected = str(err)
    else:                                   # the projection fitted the budget and the full run went ahead
        e = res.report["fit"]["exponent"]
        record_criterion(6, res.passed, f"exponent {e:+.3f} (target -1/4 +- 0.15)")
        assert res.passed
        return
    # reduced diagnostic: coarser cubes, lower degree, short window, few trials
    small = MC.ExperimentConfig(datum={"generator": "random", "n": 3, "K_max": 4, "seed": 0}, trials=4,
                                norm=MC.NormSpec(q=4.5, T=2.0, nt=5), seed=42)
    red = MC.mu_scaling_experiment(small, [1.0, 0.5, 0.25])
    e = red.report["fit"]["exponent"]
    record_criterion(6, False, f"full run not attainable ({projected}); reduced mu 1..1/4 exponent "
                               f"{e:+.2f} vs -1/4 +- 0.15")
    pytest.fail(f"full configuration exceeds the runtime budget: {projected}")


def test_criterion_07_exponent_arithmetic(record_criterion):
    res = MC.comparison_report()
    rows = {r["n"]: r for r in res.extra["rows"]}
    ok = (res.passed and rows[4]["kt_linf"] == Fraction(1) and rows[3]["randomized_linf"] == Fraction(1, 2)
          and all(r["target"] == Fraction(r["n"] - 2, 2) for r in rows.values()))
    record_criterion(7, ok, f"n=4 KT chain {rows[4]['kt_linf']}, n=3 randomized chain "
                            f"{rows[3]['randomized_linf']}, both chains consistent {res.report['chains_consistent']}")
    assert ok


def test_criterion_08_dyadic_sums(record_criterion):
    t0 = time.perf_counter()
    res = MC.dyadic_weight_experiment(MC.ExperimentConfig(trials=500, seed=42))
    dt = time.perf_counter() - t0
    fits = {k: v["tail_fit"]["fit"] for k, v in res.report["functionals"].items()}
    worst = min(f["r2"] for f in fits.values())
    slopes = ", ".join(f"{k} {f['slope']:.3g}" for k, f in fits.items())
    ok = res.passed and res.report["weight_table"]["l2_nonincreasing"] and dt < 900
    record_criterion(8, ok, f"min R2 {worst:.4f} (>= 0.85), slopes "
                            f"{slopes}, weight table "
                            f"nonincreasing {res.report['weight_table']['l2_nonincreasing']}, {dt:.0f} s (< 900 s)")
    assert ok


def test_criterion_09_fwm_solver(record_criterion):
    t0 = time.perf_counter()
    null = max(FW.plane_wave_null_residual(0.125, mode=m) for m in [(2, 1, -1), (0, 3, 0), (1, 1, 1)])
    lat = P.Lattice(3, 10.0, 64)
    F = P.rasterize(D.random_datum(3, 2, 7), lat)
    base = FW.FwmConfig(alpha=0.125, L=10.0, size=64, dt=0.02, T=4.0, eps=1e-2)
    fl = FW.FwmLattice(base.L, base.size)
    lin_cfg = replace(base, T=1.0, nonlinear=False)
    lin = FW.solve_fwm(lin_cfg, F, lat)
    ref = P.propagate_plane_wave_oracle(F, lat, [s.t for s in lin.states])
    lin_err = max(np.linalg.norm(fl.ifft(s.u_hat) - lin_cfg.eps * ref.values[i].real)
                  / np.linalg.norm(lin_cfg.eps * ref.values[i].real) for i, s in enumerate(lin.states))
    conv = FW.step_convergence(replace(base, T=1.0, eps=1.0, dt=1 / 32), F, lat)
    diag = FW.decoupling_diagnostic(FW.solve_fwm(base, F, lat))
    quad = FW.quadratic_scaling_fit(base, F, lat, [1e-3, 3e-3, 1e-2])
    dt = time.perf_counter() - t0
    v0 = max(diag["v0"], diag["vt0"])
    parts = [null < 1e-10, lin_err < 1e-8, conv["valid"] and 12 <= conv["ratio"] <= 20, v0 <= 1e-12,
             quad["valid"] and 1.8 <= quad["slope"] <= 2.2, dt < 900]
    ok = all(parts)
    record_criterion(9, ok, f"null form {null:.1e} (< 1e-10), linear {lin_err:.1e} (< 1e-8), step ratio "
                            f"{conv.get('ratio', math.nan):.2f} ([12, 20]), v[0] {v0:.1e} (<= 1e-12), quadratic "
                            f"slope {quad['slope']:.3f} ([1.8, 2.2]), {dt:.0f} s (< 900 s)")
    assert ok


REDUCED_CONFIGS = {
    "frames": "[frames]\nk_max = 6\nn_frames = 4\nprojector_k_max = 4\nprojector_frames = 3\n",
    "tails": "[datum]\nK_max = 2\nseed = 3\n[norm]\nT = 1.0\nnt = 3\n[tails]\ntrials = 8\nn_lambda = 6\n",
    "mu-scaling": "[datum]\nK_max = 2\n[norm]\nT = 1.0\nnt = 3\n[mu]\nmu = [1.0, 0.75, 0.5]\ntrials = 2\n",
    "compare": "",
    "dyadic": "[dyadic]\ntrials = 3\n",
    "knapp": "[knapp]\ntrials = 3\nn_t = 5\n",
    "fwm": "[fwm]\nL = 5.0\nsize = 32\ndt = 0.05\nT = 1.0\nsave_every = 5\n",
    "selfcheck": "",
}


def test_criterion_10_reproducibility(tmp_path, record_criterion):
    # every subcommand at reduced size; criterion 5 covers the full-size tail run across worker counts
    t0 = time.perf_counter()
    mismatched = []
    for cmd, text in REDUCED_CONFIGS.items():
        cfg = tmp_path / f"{cmd}.toml"
        cfg.write_text(text)
        outs = []
        for w in (1, 2):
            out = tmp_path / f"{cmd}-w{w}"
            argv = [cmd, "--config", str(cfg), "--seed", "5", "--workers", str(w), "--out", str(out)]
            if cmd == "selfcheck":
                argv.insert(1, "--quick")
            assert cli.dispatch(argv) in (cli.EXIT_OK, cli.EXIT_ACCEPTANCE)
            outs.append(out)
        files = sorted(p.name for p in outs[0].iterdir() if not p.name.endswith(".manifest.json"))
        if not files or any((outs[0] / f).read_bytes() != (outs[1] / f).read_bytes() for f in files):
            mismatched.append(cmd)
    dt = time.perf_counter() - t0
    ok = not mismatched
    record_criterion(10, ok, f"{len(REDUCED_CONFIGS)} subcommands, workers 1 vs 2 JSON/CSV byte-identical "
                             f"{'all' if ok else 'except ' + ', '.join(mismatched)}, {dt:.0f} s")
    assert ok
