"""Distortion and cost accounting: SQNR, addition counts, and the
signed-digit scalar quantization baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    EXPONENT_MAX,
    EXPONENT_MIN,
    Decomposition,
    DenseMatrix,
    DimensionError,
    Pow2Coeff,
)

__all__ = ["Sqnr", "sqnr", "CostReport", "cost", "csd_quantize"]


@dataclass(frozen=True)
class Sqnr:
    """Signal-to-quantization-noise ratio.

    ``ratio`` is the linear Frobenius ratio; ``None`` marks an exact
    reconstruction (zero error), kept distinct from any finite number so it
    never leaks Inf/NaN into downstream CSV files.
    """

    ratio: float | None

    @property
    def is_exact(self) -> bool:
        return self.ratio is None

    @property
    def db(self) -> float | None:
        if self.ratio is None:
            return None
        return 10.0 * math.log10(self.ratio)

    def __str__(self) -> str:
        if self.ratio is None:
            return "exact"
        return f"{self.db:.3f} dB"

    def at_least_db(self, threshold: float) -> bool:
        return self.is_exact or self.db >= threshold


def sqnr(a: DenseMatrix, p: DenseMatrix) -> Sqnr:
    """``|A|_F^2 / |A - P|_F^2`` as an :class:`Sqnr` value."""
    if a.shape != p.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {p.shape}")
    signal = float(np.sum(a.a * a.a))
    if signal == 0.0:
        raise ValueError("SQNR undefined for an all-zero reference matrix")
    diff = a.a - p.a
    noise = float(np.sum(diff * diff))
    if noise == 0.0:
        return Sqnr(None)
    return Sqnr(signal / noise)


@dataclass(frozen=True)
class CostReport:
    """Addition counts of a decomposition.

    ``nominal_adds`` follows the budget formula sum_i N*(S_i - 1);
    ``effective_adds`` counts per row max(0, nonzero_terms - 1), i.e. the
    adds an emitted program actually performs.
    """

    nominal_adds: int
    effective_adds: int


def cost(d: Decomposition) -> CostReport:
    nominal = 0
    effective = 0
    for w in d.steps:
        nominal += w.source_dim * (w.s_terms - 1)
        for r in w.rows:
            effective += max(0, r.nonzero_count - 1)
    return CostReport(nominal, effective)


def _nearest_power(r: float) -> Pow2Coeff:
    """Nearest signed power of two to ``r`` (ties go to the lower exponent)."""
    sign = 1 if r > 0 else -1
    mag = abs(r)
    _, e = math.frexp(mag)  # mag = m * 2^e with m in [0.5, 1)
    e_lo = min(max(e - 1, EXPONENT_MIN), EXPONENT_MAX)
    e_hi = min(max(e, EXPONENT_MIN), EXPONENT_MAX)
    lo = math.ldexp(1.0, e_lo)
    hi = math.ldexp(1.0, e_hi)
    if mag - lo <= hi - mag:
        return Pow2Coeff(sign, e_lo)
    return Pow2Coeff(sign, e_hi)


def csd_quantize(value: float, digits: int) -> tuple[list[Pow2Coeff], float]:
    """Greedy signed-digit quantization of a scalar.

    Repeatedly rounds the residual to the nearest signed power of two and
    recurses, spending at most ``digits`` digits.  Returns the expansion and
    the quantized value (the sum of the digit values).
    """
    if digits < 1:
        raise ValueError(f"digits must be >= 1, got {digits}")
    if not math.isfinite(value):
        raise ValueError(f"value must be finite, got {value!r}")
    expansion: list[Pow2Coeff] = []
    r = float(value)
    q = 0.0
    for _ in range(digits):
        if r == 0.0:
            break
        digit = _nearest_power(r)
        expansion.append(digit)
        q += digit.value
        r -= digit.value
    return expansion, q
