"""Shared construction helpers for the test suite."""

from __future__ import annotations

import numpy as np

from shiftadd import Decomposition, DenseMatrix, Pow2Coeff, WiringMatrix, WiringRow


def gaussian(n: int, k: int, seed: int) -> DenseMatrix:
    rng = np.random.Generator(np.random.PCG64(seed))
    return DenseMatrix(rng.standard_normal((n, k)))


def random_row(rng, n: int, s: int) -> WiringRow:
    t = int(rng.integers(0, s + 1))
    terms = []
    for _ in range(t):
        col = int(rng.integers(0, n))
        sign = 1 if rng.integers(0, 2) else -1
        exp = int(rng.integers(-6, 4))
        terms.append((col, Pow2Coeff(sign, exp)))
    return WiringRow(tuple(terms))


def random_decomposition(rng, n=None, k=None, steps=None, s=None) -> Decomposition:
    n = n or int(rng.integers(1, 9))
    k = k or int(rng.integers(1, 5))
    steps = steps if steps is not None else int(rng.integers(0, 4))
    s = s or int(rng.integers(1, 4))
    ws = []
    for _ in range(steps):
        rows = tuple(random_row(rng, n, s) for _ in range(n))
        ws.append(WiringMatrix(rows, n, s))
    return Decomposition(n, k, tuple(ws))
