"""Haar-random orthonormal frames of spherical harmonics and their statistics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .sphere import BasisEval, harmonic_space_info, sphere_quadrature, sphere_volume, standard_basis

__all__ = [
    "good_frame_summary",
    "OrthoMatrix",
    "Frame",
    "FrameStats",
    "sample_haar_orthogonal",
    "make_frame",
    "frame_statistics",
    "projector_diagonal",
    "non_pinching_constant",
    "frame_ensemble",
    "lq_norms",
]

Q_WARN = 16.0


@dataclass(frozen=True)
class OrthoMatrix:
    matrix: np.ndarray
    lineage: tuple = ()

    @property
    def size(self):
        return self.matrix.shape[0]


def sample_haar_orthogonal(n_dim, seed, *lane):
    """Haar-distributed element of O(n_dim).

    A standard Gaussian matrix is QR-factored and the columns of Q are flipped
    so that the triangular factor has a positive diagonal; this makes the law of
    Q exactly Haar. ``seed`` may be an ``int`` master seed (``lane`` selects the
    stream) or a ready ``numpy.random.Generator``.
    """
    if n_dim < 1:
        raise ValueError("n_dim must be >= 1")
    if isinstance(seed, np.random.Generator):
        rng, lineage = seed, ("generator",)
    else:
        rng, lineage = seeds.generator(seed, seeds.LANE_FRAME, *lane), (seed,) + tuple(lane)
    z = rng.standard_normal((n_dim, n_dim))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return OrthoMatrix(q * d, lineage)


@dataclass(frozen=True)
class Frame:
    """Rotated basis ``b_l = sum_m Q[l, m] Y_m``."""

    d: int
    k: int
    values: np.ndarray
    rotation: OrthoMatrix

    @property
    def dim(self):
        return self.values.shape[0]


def make_frame(basis: BasisEval, Q: OrthoMatrix) -> Frame:
    if Q.size != basis.dim:
        raise ValueError(f"rotation size {Q.size} does not match N_k={basis.dim}")
    return Frame(basis.d, basis.k, Q.matrix @ basis.values, Q)


def projector_diagonal(frame, grid=None):
    """``sum_l |b_l(theta)|^2`` at every node (constant ``N_k / Vol``)."""
    return np.einsum("ln,ln->n", frame.values, frame.values)


def lq_norms(values, weights, q_list):
    """L^q norms of the rows of ``values`` under quadrature ``weights``.

    ``inf`` in ``q_list`` gives the grid maximum.
    """
    a = np.abs(values)
    out = {}
    for q in q_list:
        if math.isinf(q):
            out[q] = a.max(axis=1)
        else:
            out[q] = ((a ** q) @ weights) ** (1.0 / q)
    return out


@dataclass
class FrameStats:
    k: int
    q_list: tuple
    norms: dict
    linf: np.ndarray
    C_q: dict
    c0: float
    certified: bool
    slack: float = 3.0
    envelope: dict = field(default_factory=lambda: {"C": 1.0, "c0": 1.0})

    def to_dict(self):
        return {
            "k": self.k,
            "q_list": [_qkey(q) for q in self.q_list],
            "norms": {_qkey(q): v.tolist() for q, v in self.norms.items()},
            "linf": self.linf.tolist(),
            "C_q": {_qkey(q): v for q, v in self.C_q.items()},
            "c0": self.c0,
            "certified": self.certified,
            "slack": self.slack,
            "envelope": dict(self.envelope),
        }


def _qkey(q):
    return "inf" if math.isinf(q) else repr(float(q))


def _log_envelope(k):
    return math.sqrt(math.log(max(k, 2)))


def frame_statistics(frame, q_list, grid, slack=3.0, envelope=None):
    """Per-element L^q and grid-max norms with good-frame envelope fits.

    The certificate asks every element to satisfy ``||b||_q <= slack*C*sqrt(q)``
    and ``||b||_inf <= slack*c0*sqrt(log k)`` (``log 2`` floor for ``k < 2``).
    """
    envelope = dict(envelope or {"C": 1.0, "c0": 1.0})
    qs = tuple(sorted(float(q) for q in q_list))
    if any(q < 2 for q in qs):
        raise ValueError("q_list must lie in [2, inf]")
    for q in qs:
        if not math.isinf(q) and q > Q_WARN:
            warnings.warn(f"L^{q} norms above q={Q_WARN:g} are poorly resolved by the grid")
        if not math.isinf(q) and q == int(q) and int(q) % 2 == 0 and q * frame.k > grid.exactness:
            warnings.warn(f"grid exactness {grid.exactness} below degree {q * frame.k} of |b|^{q:g}")
    finite = [q for q in qs if not math.isinf(q)]
    norms = lq_norms(frame.values, grid.weights, finite)
    linf = np.abs(frame.values).max(axis=1)
    C_q = {q: float(norms[q].max() / math.sqrt(q)) for q in finite}
    c0 = float(linf.max() / _log_envelope(frame.k))
    ok = all(C <= slack * envelope["C"] for C in C_q.values())
    ok = ok and c0 <= slack * envelope["c0"]
    if any(math.isinf(q) for q in qs):
        norms[math.inf] = linf
    return FrameStats(frame.k, qs, norms, linf, C_q, c0, bool(ok), slack, envelope)


def frame_ensemble(d, k_list, n_frames, q_list, master_seed, oversample=4):
    """Ensemble of Haar frames; returns per-(frame, k) ``max_l`` norms.

    Output maps each ``q`` (``inf`` included) to an array of shape
    ``(n_frames, len(k_list))``. Frame ``i`` at degree ``k`` uses the lane
    ``(k, i)``, so subsets of the ensemble reproduce exactly.
    """
    qs = sorted(set(float(q) for q in q_list) | {math.inf})
    out = {q: np.empty((n_frames, len(k_list))) for q in qs}
    for j, k in enumerate(k_list):
        grid = sphere_quadrature(d, max(k, 1), oversample=oversample)
        basis = standard_basis(d, k, grid)
        nk = basis.dim
        for i in range(n_frames):
            Q = sample_haar_orthogonal(nk, master_seed, k, i)
            fr = make_frame(basis, Q)
            a = np.abs(fr.values)
            for q in qs:
                if math.isinf(q):
                    out[q][i, j] = a.max()
                else:
                    out[q][i, j] = (((a ** q) @ grid.weights) ** (1.0 / q)).max()
    return out


def non_pinching_constant(datum, rel_floor=1e-12, top=5):
    """Non-pinching constant ``max N_k max_l |c^nu_kl|^2 / sum_l |c^nu_kl|^2``.

    The nu-coefficients are those of each block's full radial profile in the
    datum's frame coordinates. Pairs ``(k, nu)`` whose denominator is below
    ``rel_floor`` times the largest denominator at that degree are skipped.
    """
    from .data import nu_table_full

    if not datum.blocks:
        raise ValueError("empty datum")
    d = datum.n - 1
    entries = []
    for N, block in sorted(datum.blocks.items()):
        table = nu_table_full(datum, block)          # (rows, n_nu)
        nus = table.nu
        mass = np.abs(table.coeffs) ** 2
        for k in range(datum.K_max + 1):
            rows = datum.degrees == k
            nk = harmonic_space_info(d, k)[0]
            m = mass[rows]
            den = m.sum(axis=0)
            if not np.any(den > 0):
                continue
            keep = den > rel_floor * den.max()
            ratio = np.zeros_like(den)
            ratio[keep] = nk * m.max(axis=0)[keep] / den[keep]
            for j in np.nonzero(keep)[0]:
                entries.append((float(ratio[j]), int(N), int(k), int(nus[j])))
    if not entries:
        raise ValueError("datum has no non-zero coefficients")
    entries.sort(key=lambda e: (-e[0], e[1], e[2], e[3]))
    per = {}
    for c, N, k, nu in entries:
        key = (N, k)
        per[key] = max(per.get(key, 0.0), c)
    return {
        "C": entries[0][0],
        "per_block_degree": {f"{N}:{k}": v for (N, k), v in sorted(per.items())},
        "worst": [{"C": c, "N": N, "k": k, "nu": nu} for c, N, k, nu in entries[:top]],
    }


def projector_constant(d, k):
    return harmonic_space_info(d, k)[0] / sphere_volume(d)


def good_frame_summary(ensemble, k_list, q=4.0, trend_range=(8, 32)):
    """Envelope fits of a :func:`frame_ensemble` result.

    * ``lq_slope``: slope of ``log median_frames max_l ||b_l||_q`` against ``log k``
      (a ``k``-uniform ``sqrt(q)`` envelope gives 0);
    * ``linf_trend``: slope of ``log median (max_l ||b_l||_inf / sqrt(log k))``
      against ``log k`` over ``trend_range``; ``linf_constant`` is the largest
      ratio seen anywhere in that range.
    """
    k = np.asarray(k_list, dtype=float)
    med_q = np.median(ensemble[float(q)], axis=0)
    slope_q = float(np.polyfit(np.log(k), np.log(med_q), 1)[0])
    sel = (k >= trend_range[0]) & (k <= trend_range[1])
    env = np.sqrt(np.log(np.maximum(k[sel], 2.0)))
    ratio = ensemble[math.inf][:, sel] / env[None, :]
    med_r = np.median(ratio, axis=0)
    # a trend needs two degrees inside the range; otherwise it is reported as missing
    trend = float(np.polyfit(np.log(k[sel]), np.log(med_r), 1)[0]) if sel.sum() >= 2 else None
    return {
        "q": float(q),
        "k": [int(x) for x in k],
        "median_lq": med_q.tolist(),
        "lq_slope": slope_q,
        "linf_k": [int(x) for x in k[sel]],
        "median_linf_ratio": med_r.tolist(),
        "linf_trend": trend,
        "linf_constant": float(ratio.max()) if ratio.size else None,
    }
