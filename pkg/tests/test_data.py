import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from randwave import data as D
from randwave import seeds
from randwave.errors import ConfigError, LayerError


# --------------------------------------------------------------------------- seeds

def test_seed_lanes_independent_and_reproducible():
    a = seeds.generator(3, 1, 0, 1).standard_normal(4)
    assert np.array_equal(a, seeds.generator(3, 1, 0, 1).standard_normal(4))
    assert not np.array_equal(a, seeds.generator(3, 1, 1, 1).standard_normal(4))
    with pytest.raises(ValueError):
        seeds.generator(3, -1)
    assert [seeds.zigzag(i) for i in (0, -1, 1, -2)] == [0, 1, 2, 3]


# --------------------------------------------------------------------------- laws

def test_mgf_examples():
    r = D.verify_moment_bound(D.RandomPlan(family="signs"), [1.0], 100_000, seed=1)
    assert abs(r["exact"][0] - math.cosh(1)) < 1e-15 and r["exact"][0] <= r["bound"][0]
    assert abs(r["exact"][0] - 1.5431) < 1e-4 and abs(r["bound"][0] - 1.6487) < 1e-4
    assert r["pass"]
    g = D.verify_moment_bound(D.RandomPlan(family="gaussian"), [2.0], 100_000, seed=1)
    assert abs(g["exact"][0] - math.e ** 2) < 1e-12 and abs(g["bound"][0] - math.e ** 2) < 1e-12
    assert g["pass"]
    u = D.verify_moment_bound(D.RandomPlan(family="uniform"), [1.0], 100_000, seed=2)
    ref = math.sinh(math.sqrt(3)) / math.sqrt(3)
    assert abs(u["empirical"][0] - ref) < 3 * u["std_error"][0]
    assert u["pass"]


def test_mgf_guards():
    with pytest.raises(ValueError):
        D.verify_moment_bound(D.RandomPlan(), [5.0])
    with pytest.raises(ConfigError):
        D.RandomPlan(family="cauchy")


@pytest.mark.parametrize("family", ["signs", "gaussian", "uniform"])
def test_draw_unit_variance(family):
    x = D.draw(family, np.random.default_rng(0), 200_000)
    assert abs(x.mean()) < 0.01 and abs(x.var() - 1) < 0.02


# --------------------------------------------------------------------------- nu modes

def test_single_mode_coefficient():
    M = 1024
    rho = D.RHO_MIN + D.PERIOD * np.arange(M) / M
    tab = D.radial_to_nu(np.exp(1j * np.pi * 3 * rho / 2), M)
    c = dict(zip(tab.nu.tolist(), tab.coeffs))
    assert abs(c[3] - 1) < 1e-12
    assert max(abs(v) for nu, v in c.items() if nu != 3) < 1e-12


@given(st.integers(0, 2 ** 31 - 1))
def test_nu_parseval(seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    tab = D.radial_to_nu(g, 256)
    assert abs(tab.mass() - np.mean(np.abs(g) ** 2)) < 1e-10 * tab.mass()


def test_bump_round_trip():
    grid = D.RadialGrid()
    g = D.gaussian_profile(grid.rho)
    tab = D.radial_to_nu(g, grid.M, nu_max=128)
    back = D.nu_to_radial(tab, n=grid.n_rho)
    assert np.abs(back - g).max() < 1e-10
    pts = D.nu_to_radial(tab, grid.rho[::7])
    assert np.abs(pts - g[::7]).max() < 1e-10


def test_truncation_warning():
    rng = np.random.default_rng(1)
    with pytest.warns(RuntimeWarning):
        D.radial_to_nu(rng.standard_normal(64), 64, nu_max=4)


@pytest.mark.parametrize("width", [1.5, 1.0, 0.5, 0.25, 0.125])
def test_interval_partition_square_sum(width):
    grid = D.RadialGrid()
    split = D.interval_partition(width, grid)
    assert np.abs(np.sum(split.eta ** 2, axis=0) - 1).max() < 1e-12
    # per-piece Parseval: mode mass times the period equals the piece's L^2(d rho) mass
    g = D.gaussian_profile(grid.rho) + 0.3j * D.gaussian_profile(grid.rho, 1.6, 0.1)
    idx, valid = split.gather_index(grid.n_rho)
    tabs = D.interval_nu_tables(g, split, grid)
    for i, tab in enumerate(tabs):
        piece = np.where(valid[i], (split.eta[i] * g)[idx[i]], 0.0)
        mass = np.sum(np.abs(piece) ** 2) * grid.drho
        full = D.radial_to_nu(piece, split.M_I, None, period=split.period)
        assert abs(full.mass() * split.period - mass) <= 1e-10 * mass + 1e-300
        # the truncated table reports exactly the mass it drops
        kept = tab.mass() * split.period
        assert abs(kept - (1 - tab.tail_fraction) * mass) <= 1e-10 * mass + 1e-300


def test_interval_partition_limits():
    with pytest.raises(ConfigError):
        D.interval_partition(0.0, D.RadialGrid())
    with pytest.raises(ConfigError):
        D.interval_partition(1.0 / 512, D.RadialGrid())


# --------------------------------------------------------------------------- datum

def test_datum_roundtrip_json(small_datum):
    back = D.Datum.from_json(small_datum.to_json())
    assert back.K_max == small_datum.K_max and back.n == small_datum.n
    assert np.array_equal(back.blocks[1].coeffs, small_datum.blocks[1].coeffs)
    for k, Q in small_datum.frames.items():
        assert np.array_equal(back.frames[k], Q)
    bad = small_datum.to_dict()
    bad["version"] = 99
    with pytest.raises(ConfigError):
        D.Datum.from_dict(bad)


def test_datum_shape_checks():
    grid = D.RadialGrid()
    with pytest.raises(ConfigError):
        D.datum_from_profiles(3, 1, {3: np.zeros((4, grid.n_rho))})
    with pytest.raises(ConfigError):
        D.datum_from_profiles(3, 1, {1: np.zeros((3, grid.n_rho))})
    with pytest.raises(ConfigError):
        D.RadialGrid(1000)


def test_radial_datum_unit_norm():
    assert abs(D.radial_datum().l2_norm() - 1) < 1e-14


def test_profile_block_rescaling():
    d = D.random_datum(3, 1, 4, blocks=(1, 4))
    rho = np.array([4.8, 5.0, 5.3])
    exp = 4 ** (-1.5) * D.nu_to_radial(D.radial_to_nu(d.blocks[4].coeffs, d.grid.M, warn_tol=np.inf), rho / 4)
    assert np.abs(d.profile(4, rho) - exp).max() < 1e-14
    assert np.all(d.profile(4, np.array([1.0, 9.0])) == 0)


# --------------------------------------------------------------------------- randomize

def test_identity_draws_are_noops(small_datum):
    plan = D.RandomPlan(family="identity", angular=True, radial=True, interval_width=0.25)
    out, _ = D.randomize(small_datum, plan, 3)
    assert np.array_equal(out.blocks[1].coeffs, small_datum.blocks[1].coeffs)


@given(st.integers(0, 10_000))
def test_sign_angular_layer_preserves_norms_exactly(trial):
    d = D.random_datum(3, 3, 1)
    out, ds = D.randomize(d, D.RandomPlan(), trial)
    assert np.array_equal(out.row_masses(1), d.row_masses(1))
    assert out.l2_norm() == d.l2_norm()
    assert set(np.unique(ds.angular[1])) <= {-1.0, 1.0}


def test_gaussian_angular_norm_in_mean(small_datum):
    plan = D.RandomPlan(family="gaussian")
    m = np.array([D.randomize(small_datum, plan, t)[0].l2_norm() ** 2 for t in range(1000)])
    se = m.std(ddof=1) / math.sqrt(m.size)
    assert abs(m.mean() - small_datum.l2_norm() ** 2) < 3 * se


def test_layers_commute_under_fixed_lanes(small_datum):
    plan = D.RandomPlan(angular=True, radial=True, interval_width=0.5)
    a, _ = D.randomize(small_datum, plan, 2, order=("angular", "radial"))
    b, _ = D.randomize(small_datum, plan, 2, order=("radial", "angular"))
    assert np.abs(a.blocks[1].coeffs - b.blocks[1].coeffs).max() < 1e-13


def test_drawset_reproducible_and_block_independent():
    d = D.random_datum(3, 2, 5, blocks=(1, 2))
    plan = D.RandomPlan(angular=True, radial=True, cube=True, master_seed=9, interval_width=0.5)
    _, a = D.randomize(d, plan, 4)
    _, b = D.randomize(replace(d, blocks={2: d.blocks[2]}), plan, 4)
    assert np.array_equal(a.angular[2], b.angular[2])
    assert np.array_equal(a.radial[2], b.radial[2])
    assert not np.array_equal(a.angular[1][:5], a.angular[2][:5]) or a.angular[1].size == 0
    _, c = D.randomize(d, plan, 4)
    assert np.array_equal(a.cube.h, c.cube.h)
    assert a.to_dict()["trial"] == 4


def test_radial_layer_changes_profile_and_keeps_support(small_datum):
    plan = D.RandomPlan(angular=False, radial=True, interval_width=0.5)
    out, ds = D.randomize(small_datum, plan, 0)
    assert ds.radial[1].shape[1] == 3
    assert not np.allclose(out.blocks[1].coeffs, small_datum.blocks[1].coeffs)
    assert np.all(np.isfinite(out.blocks[1].coeffs))


def test_randomize_errors(small_datum):
    with pytest.raises(LayerError):
        D.randomize(small_datum, D.RandomPlan(angular=False), 0)
    with pytest.raises(LayerError):
        D.randomize(small_datum, D.RandomPlan(), 0, order=("angular",))
    cubed, _ = D.randomize(small_datum, D.RandomPlan(angular=False, cube=True), 0)
    with pytest.raises(LayerError):
        D.randomize(cubed, D.RandomPlan(angular=False, cube=True), 0)
