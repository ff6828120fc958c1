"""Truncated time-derivative jets.

A jet is an array whose leading axis stacks [f, df/dt, d2f/dt2, ...] at a
fixed time.  All linear field operations apply coefficient-wise, so they
broadcast over the leading axis untouched; products combine by the Leibniz
rule.  Time-constant factors (geometry, cutoffs, grids) are kept as plain
arrays and multiply by ordinary broadcasting.

This is what lets every time derivative downstream of the limiting solver be
evaluated exactly from formulas: d/dt of a constructed jet is just a shift
of the leading axis.
"""

import math

import numpy as np


def jconst(values: np.ndarray, order: int) -> np.ndarray:
    """Embed a time-constant array as a jet of the given order."""
    out = np.zeros((order + 1,) + np.shape(values), dtype=np.asarray(values).dtype)
    out[0] = values
    return out


def jshift(jet: np.ndarray, n: int = 1) -> np.ndarray:
    """d^n/dt^n of a jet: drop the first n coefficients."""
    if jet.shape[0] <= n:
        raise ValueError(f"jet of order {jet.shape[0]-1} cannot be shifted {n} times")
    return jet[n:]

def jtrunc(jet: np.ndarray, order: int) -> np.ndarray:
    """Truncate a jet to the given order."""
    return jet[: order + 1]


def jmul(a: np.ndarray, b: np.ndarray, order: int | None = None) -> np.ndarray:
    """Leibniz product of two jets; result order defaults to min of inputs."""
    ka, kb = a.shape[0] - 1, b.shape[0] - 1
    k = min(ka, kb) if order is None else order
    if k > min(ka, kb):
        raise ValueError("requested jet order exceeds the factors' orders")
    shape = np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros((k + 1,) + shape, dtype=np.result_type(a, b))
    for m in range(k + 1):
        for j in range(m + 1):
            out[m] += math.comb(m, j) * a[j] * b[m - j]
    return out
