import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from randwave import data as D
from randwave import montecarlo as MC
from randwave import propagator as P
from randwave.errors import ConfigError, GridError, ResourceLimitError


def _small_cfg(**kw):
    base = dict(datum={"generator": "random", "n": 3, "K_max": 2, "seed": 3}, trials=6,
                norm=MC.NormSpec(q=6.0, T=2.0, nt=5, R_pad=6.0), seed=11)
    base.update(kw)
    return MC.ExperimentConfig(**base)


# --------------------------------------------------------------------------- tail fits

def test_fit_recovers_exact_gaussian_law():
    # X = sqrt(-log U / c) has P(X > l) = exp(-c l^2) exactly
    rng = np.random.default_rng(0)
    c = 2.0
    x = np.sqrt(-np.log(rng.random(20_000)) / c)
    fit = MC.fit_tail(x, np.linspace(0.2, 1.4, 13))
    assert fit.valid and fit.r2 > 0.99
    assert abs(fit.c / c - 1) < 0.05
    assert abs(fit.C - 1) < 0.1


def test_default_grid_starts_at_median():
    x = np.random.default_rng(1).standard_normal(1001) ** 2
    fit = MC.fit_tail(x)
    assert fit.lambdas[0] == np.median(x)
    assert abs(fit.tail[0] - 0.5) < 1e-3
    assert fit.lambdas.size == 32 and np.all(np.diff(fit.lambdas) > 0)
    assert len(fit.csv_rows()) == 32


@given(st.integers(0, 10_000), st.integers(1, 400))
def test_tail_curve_invariants(seed, n):
    x = np.abs(np.random.default_rng(seed).standard_normal(n))
    fit = MC.fit_tail(x, n_lambda=8)
    assert np.all(np.diff(fit.tail) <= 0)
    assert np.all(fit.ci_low <= fit.tail + 1e-15) and np.all(fit.tail <= fit.ci_high + 1e-15)
    assert np.all((fit.ci_low >= 0) & (fit.ci_high <= 1))
    if n < MC.MIN_FIT_TRIALS:
        assert not fit.valid and "trials" in fit.reason


def test_fit_needs_enough_exceedances():
    x = np.r_[np.zeros(195), np.ones(5)]
    fit = MC.fit_tail(x, [0.5, 0.6, 0.7])
    assert not fit.valid and "exceedances" in fit.reason


# --------------------------------------------------------------------------- configuration

def test_config_invariants():
    with pytest.raises(ConfigError):
        MC.ExperimentConfig(trials=0)
    with pytest.raises(ConfigError):
        MC.ExperimentConfig(lambdas=(1.0, 1.0))
    with pytest.raises(ConfigError):
        MC.ExperimentConfig(eps_star=0.0)
    with pytest.raises(ConfigError):
        MC.NormSpec(q=0.5)
    with pytest.raises(ConfigError):
        MC.NormSpec(cover={"kind": "cube", "mu": 0.5})
    with pytest.raises(ConfigError):
        MC.NormSpec(backend="gpu")
    cfg = MC.ExperimentConfig(seed=5)
    assert cfg.plan.master_seed == 5
    assert cfg.to_dict()["plan"]["master_seed"] == 5
    with pytest.raises(ConfigError):
        MC.make_datum({"generator": "fractal"})


def test_run_trials_order_independent_of_workers():
    f = lambda i: (i * 7919) % 13
    assert MC.run_trials(f, 40, 1) == MC.run_trials(f, 40, 3) == [f(i) for i in range(40)]


# --------------------------------------------------------------------------- evaluators

def test_scaling_equivariance_bitwise():
    cfg = _small_cfg()
    a = MC.tail_experiment(cfg)
    b = MC.tail_experiment(replace(cfg, scale=2.0))
    va = np.array(a.report["per_trial"])
    vb = np.array(b.report["per_trial"])
    assert np.array_equal(vb, 2.0 * va)


def test_evaluator_identical_across_workers():
    cfg = _small_cfg(trials=4)
    ev = MC.make_evaluator(cfg)
    assert MC.run_trials(ev, 4, 1) == MC.run_trials(ev, 4, 2)


def test_polar_and_lattice_backends_agree():
    datum = {"generator": "random", "n": 3, "K_max": 2, "seed": 3}
    norm = MC.NormSpec(q=4.0, T=1.0, nt=3, R_pad=7.0)
    pol = MC.make_evaluator(_small_cfg(datum=datum, norm=norm))
    # |u|^4 has bandwidth 4 * 2, so the lattice Riemann sum is exact only for dx < 1/8
    lat = MC.make_evaluator(_small_cfg(datum=datum, norm=replace(norm, backend="lattice", lattice_L=24.0,
                                                                  lattice_size=192)))
    for t in range(2):
        assert abs(pol(t) / lat(t) - 1) < 1e-8


def test_tail_report_layout():
    res = MC.tail_experiment(_small_cfg(), values=np.linspace(1, 2, 150))
    assert res.csv_header == MC.CSV_TAIL_HEADER
    assert len(res.csv_rows) == res.report["config"]["n_lambda"]
    assert res.report["tail_fit"]["trials"] == 150


# --------------------------------------------------------------------------- mu scaling

def test_mu_target_and_lattice():
    assert MC.mu_target(3) == Fraction(-1, 4)
    assert MC.mu_target(4) == Fraction(-1, 3)
    assert MC.mu_lattice(0.5) == (4.0, 16)
    assert MC.mu_lattice(1 / 16) == (32.0, 128)


def test_mu_experiment_guards():
    cfg = _small_cfg(trials=2)
    with pytest.raises(ConfigError):
        MC.mu_scaling_experiment(cfg, [1.0, 0.5])
    with pytest.raises(ConfigError):
        MC.mu_scaling_experiment(cfg, [1.0, 0.5, 0.0])
    with pytest.raises(ResourceLimitError):
        MC.mu_scaling_experiment(cfg, [1.0, 0.5, 0.25], budget_s=1e-6)


def test_mu_experiment_small_run():
    cfg = _small_cfg(trials=3, norm=MC.NormSpec(q=4.5, T=1.0, nt=3))
    res = MC.mu_scaling_experiment(cfg, [1.0, 0.75, 0.5])
    r = res.report
    assert r["mu"] == [1.0, 0.75, 0.5]
    assert all(len(v) == 3 for v in r["per_trial"].values())
    assert r["n_cubes"][0] < r["n_cubes"][1] < r["n_cubes"][2]
    assert r["target"]["exponent"] == "-1/4"
    assert len(res.csv_rows) == 3


# --------------------------------------------------------------------------- exponent bookkeeping

def test_comparison_chains():
    res = MC.comparison_report()
    rows = {r["n"]: r for r in res.extra["rows"]}
    assert rows[4]["kt_linf"] == Fraction(1) == rows[4]["target"]
    assert rows[3]["randomized_linf"] == Fraction(1, 2)
    assert rows[3]["randomized_q"] == 4
    assert "kt" not in rows[3]
    assert abs(rows[3]["amplification"] - math.sqrt(2)) < 1e-12
    assert res.passed and res.report["chains_consistent"]


# --------------------------------------------------------------------------- Knapp packets

def test_zonal_coefficients_of_constant():
    c = MC.zonal_coefficients(math.pi, 4)
    assert abs(c[0] - math.sqrt(4 * math.pi)) < 1e-12
    assert np.abs(c[1:]).max() < 1e-12


def test_knapp_datum_limits():
    d = MC.knapp_datum(0.5)
    assert abs(d.l2_norm() - 1) < 1e-12 and d.K_max == 16
    with pytest.raises(GridError):
        MC.knapp_datum(0.1)
    with pytest.raises(ConfigError):
        MC.knapp_datum(0.0)


def test_tube_coherence():
    delta = 0.5
    d = MC.knapp_datum(delta)
    ts = np.array([0.0, 0.5, 1.0, 4.0, 8.0])
    _, coh, _ = MC.tube_coherence(d, ts)
    assert abs(coh[0] - 1) < 1e-12
    assert np.all(coh[ts <= 1 / (4 * delta ** 2)] >= 0.5)
    assert coh[-1] < coh[-2] < coh[2]
    # second route: pointwise Fourier-Bessel evaluation on the axis
    pts = np.array([[0, 0, t] for t in ts])
    u = np.array([P.evaluate_at(d, [t], pts[i:i + 1])[0, 0] for i, t in enumerate(ts)])
    assert np.abs(np.abs(u) / abs(u[0]) - coh).max() < 1e-6


def test_knapp_separation_small():
    rep = MC.knapp_separation(0.5, trials=4, L=8.0, size=32, T=1.0, nt=5)
    assert len(rep["random_norms"]) == 4
    assert rep["separated"]


# --------------------------------------------------------------------------- dyadic sums

def test_weight_table_monotonicity():
    t = MC.dyadic_weight_table([1, 2, 4, 8])
    assert t["rows"][0]["exponent_l2"] == "-1/100" and t["l2_nonincreasing"]
    w = [r["weight_l2"] for r in t["rows"]]
    assert all(a >= b for a, b in zip(w, w[1:]))
    assert not MC.dyadic_weight_table([1, 2], s=Fraction(1))["l2_nonincreasing"]
    assert MC.log_bracket(1) == 1.0
    assert abs(MC.log_bracket(math.e) - math.sqrt(2)) < 1e-15


def test_dyadic_small_run():
    cfg = _small_cfg(trials=3, datum={"generator": "random", "n": 3, "seed": 2})
    res = MC.dyadic_weight_experiment(cfg)
    r = res.report
    assert r["N_list"] == [1, 2, 4, 8, 16]          # block 8 reaches frequency 16
    assert set(r["functionals"]) == {"F1", "F2", "F2_inf", "F3"}
    assert all(len(v) == 3 for v in r["per_trial"].values())
    # weights are ordered F1 >= F2 (N^(2s-1-delta) <= 1) and F3 >= F2
    for a, b, c in zip(r["per_trial"]["F1"], r["per_trial"]["F2"], r["per_trial"]["F3"]):
        assert a >= b and c >= b
    again = MC.dyadic_weight_experiment(cfg, workers=2)
    assert again.report["per_trial"] == r["per_trial"]
