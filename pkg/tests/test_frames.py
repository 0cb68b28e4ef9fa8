import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from randwave import data as D
from randwave.frames import (OrthoMatrix, frame_ensemble, frame_statistics, good_frame_summary, make_frame,
                             non_pinching_constant, projector_constant, projector_diagonal,
                             sample_haar_orthogonal)
from randwave.sphere import sphere_quadrature, standard_basis


@given(st.integers(1, 40), st.integers(0, 10 ** 6))
def test_haar_orthogonal_invariants(n, seed):
    Q = sample_haar_orthogonal(n, seed, 0).matrix
    assert np.abs(Q.T @ Q - np.eye(n)).max() < 1e-12
    assert abs(abs(np.linalg.det(Q)) - 1) < 1e-10


def test_haar_determinism_bitwise():
    a = sample_haar_orthogonal(9, 17, 4, 2).matrix
    b = sample_haar_orthogonal(9, 17, 4, 2).matrix
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_haar_orthogonal(9, 17, 4, 3).matrix)


def test_haar_one_dimensional_signs():
    vals = np.array([sample_haar_orthogonal(1, s).matrix[0, 0] for s in range(10_000)])
    assert set(np.unique(vals)) == {-1.0, 1.0}
    assert abs(np.mean(vals > 0) - 0.5) < 0.05


def test_haar_second_moment():
    vals = np.array([sample_haar_orthogonal(5, 3, i).matrix[0, 0] ** 2 for i in range(10_000)])
    assert abs(vals.mean() - 0.2) < 0.02


def test_haar_invariance_ks():
    k = 3
    g = sphere_quadrature(2, 4 * k)
    b = standard_basis(2, k, g)
    R = sample_haar_orthogonal(7, 999, 0).matrix

    def l4(Q):
        v = (Q @ b.values)[0]
        return float((np.abs(v) ** 4 @ g.weights) ** 0.25)

    a = [l4(sample_haar_orthogonal(7, 1, i).matrix) for i in range(1000)]
    c = [l4(R @ sample_haar_orthogonal(7, 1, 1000 + i).matrix) for i in range(1000)]
    assert stats.ks_2samp(a, c).pvalue > 0.01


def test_make_frame_identity_and_composition():
    g = sphere_quadrature(2, 6)
    b = standard_basis(2, 3, g)
    I = OrthoMatrix(np.eye(7))
    assert np.array_equal(make_frame(b, I).values, b.values)
    Q1 = sample_haar_orthogonal(7, 1, 0)
    Q2 = sample_haar_orthogonal(7, 2, 0)
    twice = Q2.matrix @ make_frame(b, Q1).values
    once = make_frame(b, OrthoMatrix(Q2.matrix @ Q1.matrix)).values
    assert np.abs(twice - once).max() < 1e-12
    with pytest.raises(ValueError):
        make_frame(b, OrthoMatrix(np.eye(5)))


@pytest.mark.parametrize("k", [0, 2, 9])
def test_projector_invariance(k):
    g = sphere_quadrature(2, max(k, 1))
    b = standard_basis(2, k, g)
    fr = make_frame(b, sample_haar_orthogonal(2 * k + 1, 4, k))
    diag = projector_diagonal(fr)
    assert np.abs(diag - projector_diagonal(make_frame(b, OrthoMatrix(np.eye(2 * k + 1))))).max() < 1e-12
    assert np.abs(diag - projector_constant(2, k)).max() < 1e-8
    G = (fr.values * g.weights) @ fr.values.T
    assert np.abs(G - np.eye(2 * k + 1)).max() < 1e-10


def test_projector_constant_examples():
    assert abs(projector_constant(2, 2) - 5 / (4 * math.pi)) < 1e-15
    assert abs(projector_constant(2, 0) - 1 / (4 * math.pi)) < 1e-15


def test_frame_statistics_k0_and_monotone_q():
    g = sphere_quadrature(2, 4, oversample=4)
    fs = frame_statistics(make_frame(standard_basis(2, 0, g), OrthoMatrix(np.eye(1))), [2, 4, math.inf], g)
    assert abs(fs.linf[0] - 1 / math.sqrt(4 * math.pi)) < 1e-12
    assert abs(fs.linf[0] - 0.2821) < 1e-4
    k = 6
    g = sphere_quadrature(2, 4 * k)
    fr = make_frame(standard_basis(2, k, g), sample_haar_orthogonal(13, 0, k))
    fs = frame_statistics(fr, [2, 3, 4, 6, 8, math.inf], g)
    assert np.abs(fs.norms[2.0] - 1).max() < 1e-8
    # averaged norms Vol^(-1/q) ||b||_q are nondecreasing in q (Jensen)
    vol = 4 * math.pi
    avg = {q: v * vol ** (-1 / q) if math.isfinite(q) else v for q, v in fs.norms.items()}
    qs = sorted(avg)
    for a, b in zip(qs, qs[1:]):
        assert np.all(avg[b] >= avg[a] - 1e-12)
    assert fs.to_dict()["k"] == k


def test_frame_statistics_rejects_and_warns():
    g = sphere_quadrature(2, 4)
    fr = make_frame(standard_basis(2, 2, g), OrthoMatrix(np.eye(5)))
    with pytest.raises(ValueError):
        frame_statistics(fr, [1.5], g)
    with pytest.warns(UserWarning):
        frame_statistics(fr, [32.0], g)


def test_ensemble_subsets_reproduce():
    full = frame_ensemble(2, [2, 3], 6, [4.0], 11)
    part = frame_ensemble(2, [3], 4, [4.0], 11)
    assert np.array_equal(full[4.0][:4, 1], part[4.0][:, 0])


def test_good_frame_summary_flat_ensemble():
    ks = list(range(1, 33))
    ens = {4.0: np.ones((5, 32)), math.inf: np.tile(np.sqrt(np.log(np.maximum(ks, 2))), (5, 1))}
    s = good_frame_summary(ens, ks)
    assert abs(s["lq_slope"]) < 1e-12 and abs(s["linf_trend"]) < 1e-12


# --------------------------------------------------------------------------- non-pinching

def _datum_k(k, row_values, K_max=None):
    K_max = k if K_max is None else K_max
    grid = D.RadialGrid()
    prof = np.zeros(((K_max + 1) ** 2, grid.n_rho), dtype=complex)
    bump = D.gaussian_profile(grid.rho)
    prof[k * k:(k + 1) ** 2] = np.asarray(row_values)[:, None] * bump[None, :]
    return D.datum_from_profiles(3, K_max, {1: prof}, grid=grid)


def test_non_pinching_flat_and_extreme():
    assert abs(non_pinching_constant(_datum_k(3, np.ones(7)))["C"] - 1) < 1e-12
    one = np.zeros(7)
    one[2] = 1.0
    assert abs(non_pinching_constant(_datum_k(3, one))["C"] - 7) < 1e-12


def test_non_pinching_gaussian_brute_force():
    rng = np.random.default_rng(8)
    c = rng.standard_normal(17)
    rep = non_pinching_constant(_datum_k(8, c))
    brute = 17 * max(x * x for x in c) / sum(x * x for x in c)
    assert abs(rep["C"] - brute) < 1e-9 * brute
    assert rep["worst"][0]["k"] == 8


def test_non_pinching_empty():
    d = _datum_k(1, np.zeros(3))
    with pytest.raises(ValueError):
        non_pinching_constant(d)


def test_summary_without_trend_range():
    ks = [1, 2, 3]
    ens = frame_ensemble(2, ks, 3, [4.0], master_seed=0)
    s = good_frame_summary(ens, ks)
    assert s["linf_trend"] is None and s["linf_k"] == []
