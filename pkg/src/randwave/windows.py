"""Smooth compactly supported bumps, steps and partitions of unity."""
from __future__ import annotations

import numpy as np

SUPPORT = 0.75   # half-support of lattice windows in units of the spacing


def bump(y):
    """``exp(1 - 1/(1 - y^2))`` on ``|y| < 1``, zero outside; ``bump(0) = 1``."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    yy = y[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - yy * yy))
    return out


def smooth_step(x):
    """C-infinity step equal to 1 for ``x <= 1`` and 0 for ``x >= 2``."""
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)

    def g(z):
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = np.exp(-1.0 / z[pos])
        return out

    a, b = g(1.0 - s), g(s)
    return a / (a + b)


def lattice_bumps(x, spacing, indices, half_support=SUPPORT):
    """Raw bumps centred at ``i * spacing`` for each ``i`` in ``indices``; shape (len(indices), ...)."""
    x = np.asarray(x, dtype=float)
    idx = np.asarray(indices)
    y = (x[None, ...] - spacing * idx.reshape((-1,) + (1,) * x.ndim)) / (half_support * spacing)
    return bump(y)


def partition_1d(x, spacing, indices, half_support=SUPPORT, power=1):
    """Windows ``w_i`` on the line with ``sum_i w_i**power = 1`` wherever ``x`` is covered.

    The normalisation runs over the two-sided neighbourhood of every point, so a
    restricted index set still sums to one where all contributing bumps are
    present. ``power=2`` gives a square-root partition.
    """
    x = np.asarray(x, dtype=float)
    raw = lattice_bumps(x, spacing, indices, half_support)
    k = int(np.ceil(half_support)) + 1
    base = np.floor(x / spacing).astype(int)
    tot = np.zeros_like(x)
    for off in range(-k, k + 2):
        tot += bump((x - spacing * (base + off)) / (half_support * spacing)) ** power
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(tot > 0, raw ** power / tot, 0.0)
    return w ** (1.0 / power) if power != 1 else w
