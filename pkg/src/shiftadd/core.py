"""Core domain types: dense matrices, power-of-two coefficients, wiring rows
and matrices, and the multi-step decomposition container.

A decomposition represents a target N x K matrix as

    P = W_I * ... * W_1 * C0

where every W_i is an N x N "wiring" matrix whose rows hold at most S terms,
each term scaling one row of the current codebook by zero or a signed power
of two, and C0 is the augmented identity.  Applying P to a vector therefore
needs only shifts, adds and subtracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EXPONENT_MIN",
    "EXPONENT_MAX",
    "DimensionError",
    "Pow2Coeff",
    "ZERO_COEFF",
    "CoeffSet",
    "DenseMatrix",
    "WiringRow",
    "WiringMatrix",
    "Decomposition",
    "augmented_identity",
    "identity_wiring",
    "reconstruct",
    "apply",
    "row_residual",
    "term_key",
]

# Exponents are kept well inside float64 range so that every coefficient value
# is an exact, normal double and shift semantics stay exact.
EXPONENT_MIN = -1000
EXPONENT_MAX = 1000


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


@dataclass(frozen=True)
class Pow2Coeff:
    """A wiring coefficient: exactly zero, or ``sign * 2**exponent``.

    ``sign`` is -1, 0 or +1; the zero coefficient is encoded as sign 0 with
    exponent 0.
    """

    sign: int = 0
    exponent: int = 0

    def __post_init__(self) -> None:
        if self.sign not in (-1, 0, 1):
            raise ValueError(f"sign must be -1, 0 or +1, got {self.sign!r}")
        if self.sign == 0:
            if self.exponent != 0:
                raise ValueError("the zero coefficient carries no exponent")
        elif not EXPONENT_MIN <= self.exponent <= EXPONENT_MAX:
            raise ValueError(
                f"exponent {self.exponent} outside [{EXPONENT_MIN}, {EXPONENT_MAX}]"
            )

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return math.ldexp(float(self.sign), self.exponent)

    @classmethod
    def from_value(cls, v: float) -> "Pow2Coeff":
        """Inverse of :attr:`value`; rejects anything that is not 0 or +-2^k."""
        if v == 0.0:
            return cls(0, 0)
        if not math.isfinite(v):
            raise ValueError(f"{v!r} is not a power-of-two coefficient")
        m, e = math.frexp(abs(v))
        if m != 0.5:
            raise ValueError(f"{v!r} is not 0 or a signed power of two")
        return cls(1 if v > 0 else -1, e - 1)

    def sort_key(self) -> tuple[int, int]:
        # Zero sorts before every signed value; positive before negative.
        if self.sign == 0:
            return (EXPONENT_MIN - 1, 0)
        return (self.exponent, 0 if self.sign > 0 else 1)


ZERO_COEFF = Pow2Coeff(0, 0)


def term_key(term: tuple[int, Pow2Coeff]) -> tuple[int, int, int]:
    """Canonical ordering key for a (column, coefficient) wiring term."""
    col, coeff = term
    e, s = coeff.sort_key()
    return (col, e, s)


@dataclass(frozen=True)
class CoeffSet:
    """The finite coefficient alphabet ``{+-2^e : min <= e <= max}`` plus,
    optionally, zero."""

    min_exponent: int
    max_exponent: int
    include_zero: bool = True

    def __post_init__(self) -> None:
        if self.min_exponent > self.max_exponent:
            raise ValueError(
                f"min_exponent {self.min_exponent} > max_exponent {self.max_exponent}"
            )
        if self.min_exponent < EXPONENT_MIN or self.max_exponent > EXPONENT_MAX:
            raise ValueError("exponent range outside supported bounds")

    def __len__(self) -> int:
        return 2 * (self.max_exponent - self.min_exponent + 1) + int(self.include_zero)

    @property
    def admits_identity(self) -> bool:
        """Whether +2^0 (the exact copy coefficient) is a member."""
        return self.min_exponent <= 0 <= self.max_exponent

    def members(self) -> tuple[Pow2Coeff, ...]:
        out: list[Pow2Coeff] = []
        if self.include_zero:
            out.append(ZERO_COEFF)
        out.extend(self.nonzero_members())
        return tuple(out)

    def nonzero_members(self) -> tuple[Pow2Coeff, ...]:
        out = []
        for e in range(self.min_exponent, self.max_exponent + 1):
            out.append(Pow2Coeff(1, e))
            out.append(Pow2Coeff(-1, e))
        return tuple(out)


class DenseMatrix:
    """A validated, immutable 2-D float64 matrix.

    Entries must be finite; the backing array is write-protected and shared
    by reference through :attr:`a`.
    """

    __slots__ = ("_a",)

    def __init__(self, data) -> None:
        a = np.array(data, dtype=np.float64, order="C", copy=True)
        if a.ndim != 2:
            raise DimensionError(f"expected a 2-D matrix, got ndim={a.ndim}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise DimensionError(f"degenerate shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix entries must be finite")
        a.setflags(write=False)
        self._a = a

    @property
    def a(self) -> np.ndarray:
        return self._a

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._a.shape

    def row(self, n: int) -> np.ndarray:
        return self._a[n]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return bool(np.array_equal(self._a, other._a))

    def __repr__(self) -> str:
        return f"DenseMatrix(shape={self.rows}x{self.cols})"


def augmented_identity(n: int, k: int) -> DenseMatrix:
    """The N x K matrix with ones on the leading diagonal: the fixed initial
    codebook."""
    if n < 1 or k < 1:
        raise DimensionError(f"degenerate shape ({n}, {k})")
    return DenseMatrix(np.eye(n, k))


@dataclass(frozen=True)
class WiringRow:
    """A sparse row of wiring terms ``(column, coefficient)``.

    Repeated columns are allowed and sum in the dense expansion; a zero
    coefficient contributes nothing.
    """

    terms: tuple[tuple[int, Pow2Coeff], ...] = ()

    def __post_init__(self) -> None:
        for col, coeff in self.terms:
            if not isinstance(col, (int, np.integer)) or col < 0:
                raise ValueError(f"column index {col!r} must be a non-negative int")
            if not isinstance(coeff, Pow2Coeff):
                raise TypeError(f"coefficient {coeff!r} is not a Pow2Coeff")

    @property
    def nonzero_count(self) -> int:
        return sum(1 for _, c in self.terms if not c.is_zero)

    def dense(self, size: int) -> np.ndarray:
        """Expand to a length-``size`` vector, summing repeated columns in
        term order."""
        out = np.zeros(size)
        for col, coeff in self.terms:
            if col >= size:
                raise DimensionError(f"column {col} out of range for size {size}")
            out[col] += coeff.value
        return out

    def sorted(self) -> "WiringRow":
        return WiringRow(tuple(sorted(self.terms, key=term_key)))


@dataclass(frozen=True)
class WiringMatrix:
    """A square wiring factor: one :class:`WiringRow` per output row, each
    combining rows of a ``source_dim``-row codebook.

    ``s_terms`` records the per-row term budget S the producing solver was
    configured with; it drives the nominal addition count.
    """

    rows: tuple[WiringRow, ...]
    source_dim: int
    s_terms: int = 0  # 0 => infer from the widest row

    def __post_init__(self) -> None:
        if self.source_dim < 1:
            raise DimensionError(f"source_dim must be >= 1, got {self.source_dim}")
        if len(self.rows) != self.source_dim:
            raise DimensionError(
                f"wiring matrix must be square: {len(self.rows)} rows for "
                f"source_dim {self.source_dim}"
            )
        widest = max((len(r.terms) for r in self.rows), default=0)
        if self.s_terms == 0:
            object.__setattr__(self, "s_terms", max(1, widest))
        elif self.s_terms < widest:
            raise ValueError(
                f"s_terms {self.s_terms} smaller than widest row ({widest} terms)"
            )
        for r in self.rows:
            for col, _ in r.terms:
                if col >= self.source_dim:
                    raise DimensionError(
                        f"column {col} out of range for source_dim {self.source_dim}"
                    )

    @property
    def dim(self) -> int:
        return self.source_dim

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.source_dim, self.source_dim))
        for i, r in enumerate(self.rows):
            out[i] = r.dense(self.source_dim)
        return out


def identity_wiring(n: int, s_terms: int = 1) -> WiringMatrix:
    """The wiring step that copies the codebook unchanged."""
    rows = tuple(WiringRow(((i, Pow2Coeff(1, 0)),)) for i in range(n))
    return WiringMatrix(rows, n, s_terms)


@dataclass(frozen=True)
class Decomposition:
    """An ordered product of wiring steps over the augmented-identity initial
    codebook, approximating an ``n`` x ``k`` target."""

    n: int
    k: int
    steps: tuple[WiringMatrix, ...] = ()
    initial_codebook: str = "augmented-identity"

    def __post_init__(self) -> None:
        if self.n < 1 or self.k < 1:
            raise DimensionError(f"degenerate target shape ({self.n}, {self.k})")
        if self.initial_codebook != "augmented-identity":
            raise ValueError(
                f"unsupported initial codebook {self.initial_codebook!r}"
            )
        for i, w in enumerate(self.steps):
            if w.source_dim != self.n:
                raise DimensionError(
                    f"step {i} has dimension {w.source_dim}, expected {self.n}"
                )


def reconstruct(d: Decomposition) -> DenseMatrix:
    """Form the approximated matrix ``P`` by multiplying out all wiring steps
    against the initial codebook, right to left."""
    c = np.eye(d.n, d.k)
    for w in d.steps:
        c = w.to_dense() @ c
    return DenseMatrix(c)


def apply(d: Decomposition, x) -> np.ndarray:
    """Compute ``P @ x`` step by step without forming ``P``.

    Each wiring step costs only scaled adds of the previous stage's outputs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != d.k:
        raise DimensionError(f"input length {x.shape} does not match k={d.k}")
    y = np.zeros(d.n)
    m = min(d.n, d.k)
    y[:m] = x[:m]
    for w in d.steps:
        y_next = np.zeros(d.n)
        for i, row in enumerate(w.rows):
            acc = 0.0
            for col, coeff in row.terms:
                if not coeff.is_zero:
                    acc += coeff.value * y[col]
            y_next[i] = acc
        y = y_next
    return y


def row_residual(a_n, omega: WiringRow, C: DenseMatrix) -> float:
    """Euclidean norm of ``a_n - omega @ C`` for a single wiring row."""
    a = np.asarray(a_n, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] != C.cols:
        raise DimensionError(
            f"target row has length {a.shape}, codebook has {C.cols} columns"
        )
    approx = omega.dense(C.rows) @ C.a
    return float(np.linalg.norm(a - approx))
