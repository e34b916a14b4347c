"""Row solvers and the multi-step decomposition driver.

Three engines approximate one target row by a sparse power-of-two
combination of codebook rows:

* ``dmp_row``        - greedy single-change updates, one per iteration;
* ``exhaustive_row`` - exact minimum over all term multisets from a finite
  coefficient set (exponential in the term budget);
* ``beam_row``       - keeps the ``memory`` best candidate rows per
  iteration; with memory 1 it reproduces ``dmp_row`` exactly.

All engines share one candidate evaluator and one deterministic ordering:
squared residual, then term count, then the (column, exponent, sign) term
list.  Residual comparisons are exact float comparisons of identically
accumulated values, never epsilon tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import (
    CoeffSet,
    Decomposition,
    DenseMatrix,
    DimensionError,
    Pow2Coeff,
    WiringMatrix,
    WiringRow,
    term_key,
)
from .metrics import Sqnr, sqnr

__all__ = [
    "ENGINES",
    "DEFAULT_BUDGET",
    "BudgetError",
    "InternalConsistencyError",
    "SolverConfig",
    "DriverConfig",
    "TraceRow",
    "dmp_row",
    "exhaustive_row",
    "beam_row",
    "wiring_step",
    "decompose",
]

ENGINES = ("dmp", "exhaustive", "beam")

# Cap on the ordered-tuple work estimate (N * |coeff set|)^S of one
# exhaustive wiring step; roughly number of incremental residual updates.
DEFAULT_BUDGET = 1e10


class BudgetError(RuntimeError):
    """Exhaustive search refused because the work estimate exceeds the cap."""

    def __init__(self, estimate: float, budget: float):
        self.estimate = estimate
        self.budget = budget
        super().__init__(
            f"refusing exhaustive search: work estimate {estimate:.3e} "
            f"exceeds budget {budget:.3e}"
        )


class InternalConsistencyError(RuntimeError):
    """A wiring step worsened the fit although copying was admissible."""


@dataclass(frozen=True)
class SolverConfig:
    """Per-row search parameters.

    ``coeff_set`` restricts candidate coefficients to a finite alphabet;
    ``None`` means any signed power of two (the greedy and beam engines then
    test the two powers bracketing the per-column least-squares scalar).
    ``memory`` is the beam width; the other engines ignore it.
    """

    s_terms: int
    coeff_set: CoeffSet | None = None
    memory: int = 1
    budget: float = DEFAULT_BUDGET

    def __post_init__(self) -> None:
        if self.s_terms < 1:
            raise ValueError(f"s_terms must be >= 1, got {self.s_terms}")
        if self.memory < 1:
            raise ValueError(f"memory must be >= 1, got {self.memory}")
        if self.budget <= 0:
            raise ValueError("budget must be positive")


@dataclass(frozen=True)
class DriverConfig:
    """Multi-step decomposition schedule.

    The first ``warmup_steps`` steps always run the greedy engine with
    ``warmup_s`` terms and an unbounded alphabet (cheap codebook refinement);
    remaining steps use ``engine`` with ``solver``.  ``target_db`` stops the
    run early once the approximation reaches that SQNR.
    """

    total_steps: int
    engine: str = "dmp"
    solver: SolverConfig = SolverConfig(2)
    warmup_steps: int = 2
    warmup_s: int = 2
    target_db: float | None = None

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"warmup_steps {self.warmup_steps} outside [0, {self.total_steps}]"
            )
        if self.warmup_s < 1:
            raise ValueError("warmup_s must be >= 1")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")


@dataclass(frozen=True)
class TraceRow:
    """Per-step progress record (cumulative addition counts)."""

    step: int
    engine: str
    s_terms: int
    memory: int
    sqnr: Sqnr
    nominal_adds: int
    effective_adds: int


def _sqnorm(x: np.ndarray) -> float:
    return float(np.dot(x, x))


def _check_row(a_n, C: DenseMatrix) -> np.ndarray:
    a = np.array(a_n, dtype=np.float64, copy=True)
    if a.ndim != 1 or a.shape[0] != C.cols:
        raise DimensionError(
            f"target row has shape {a.shape}, codebook has {C.cols} columns"
        )
    if not np.all(np.isfinite(a)):
        raise ValueError("target row must be finite")
    return a


class _RowProblem:
    """Precomputed per-call state: codebook, row norms, coefficient arrays."""

    __slots__ = ("C", "g", "valid", "vals", "exps", "signs")

    def __init__(self, C: np.ndarray, coeff_set: CoeffSet | None):
        self.C = C
        self.g = np.einsum("nk,nk->n", C, C)
        # Zero-norm codebook rows are never candidates.
        self.valid = self.g > 0.0
        if coeff_set is None:
            self.vals = None
            self.exps = None
            self.signs = None
        else:
            nonzero = coeff_set.nonzero_members()
            self.vals = np.array([c.value for c in nonzero])
            self.exps = np.array([c.exponent for c in nonzero], np.int64)
            self.signs = np.array([0 if c.sign > 0 else 1 for c in nonzero], np.int64)


def _restricted_candidates(r2: float, p: np.ndarray, prob: _RowProblem):
    n = prob.C.shape[0]
    v = prob.vals
    t2 = (2.0 * v)[None, :] * p[:, None]
    t3 = r2 - t2
    t5 = (v * v)[None, :] * prob.g[:, None]
    grid = t3 + t5
    grid[~prob.valid, :] = np.inf
    nv = v.shape[0]
    cols = np.repeat(np.arange(n), nv)
    vals = np.tile(v, n)
    exps = np.tile(prob.exps, n)
    signs = np.tile(prob.signs, n)
    return cols, vals, exps, signs, grid.reshape(-1)


def _bracket_candidates(r2: float, p: np.ndarray, prob: _RowProblem):
    from .core import EXPONENT_MAX, EXPONENT_MIN

    mask = prob.valid & (p != 0.0)
    j = np.flatnonzero(mask)
    if j.size == 0:
        z = np.empty(0, np.int64)
        return z, np.empty(0), z.copy(), z.copy(), np.empty(0)
    # Least-squares scalar per column; the best power of two lies on one of
    # the two exponents bracketing it, with the same sign.
    alpha = p[j] / prob.g[j]
    _, e = np.frexp(np.abs(alpha))
    e = e.astype(np.int64)
    e_lo = np.clip(e - 1, EXPONENT_MIN, EXPONENT_MAX)
    e_hi = np.clip(e, EXPONENT_MIN, EXPONENT_MAX)
    cols = np.repeat(j, 2)
    exps = np.stack([e_lo, e_hi], axis=1).reshape(-1)
    sgn = np.repeat(np.where(alpha > 0.0, 1.0, -1.0), 2)
    vals = np.ldexp(sgn, exps)
    signs = np.where(vals > 0.0, 0, 1).astype(np.int64)
    p2 = np.repeat(p[j], 2)
    g2 = np.repeat(prob.g[j], 2)
    t2 = (2.0 * vals) * p2
    t3 = r2 - t2
    t5 = (vals * vals) * g2
    return cols, vals, exps, signs, t3 + t5


def _single_changes(r2: float, r: np.ndarray, prob: _RowProblem):
    """Residuals of every admissible single-term addition to the current row.

    Returns parallel arrays (cols, vals, exps, sign_keys, resid2) where
    resid2 is computed with one shared operation order so different engines
    can compare values exactly.
    """
    p = prob.C @ r
    if prob.vals is None:
        return _bracket_candidates(r2, p, prob)
    return _restricted_candidates(r2, p, prob)


def dmp_row(a_n, C: DenseMatrix, cfg: SolverConfig) -> WiringRow:
    """Greedy matching pursuit over codebook rows with power-of-two scaling.

    Runs ``s_terms`` iterations; each applies the admissible single-term
    change with the lowest residual, or keeps the current row when no change
    strictly improves it.  Ties break on lowest column, then lowest exponent,
    then positive sign.
    """
    a = _check_row(a_n, C)
    prob = _RowProblem(C.a, cfg.coeff_set)
    r = a.copy()
    r2 = _sqnorm(r)
    terms: list[tuple[int, Pow2Coeff]] = []
    for _ in range(cfg.s_terms):
        cols, vals, exps, signs, resid2 = _single_changes(r2, r, prob)
        if cols.size == 0:
            break
        m = resid2.min()
        if not (m < r2):
            break  # keeping the current vector beats every single change
        ties = np.flatnonzero(resid2 == m)
        best = min(ties, key=lambda i: (cols[i], exps[i], signs[i]))
        col = int(cols[best])
        coeff = Pow2Coeff(1 if signs[best] == 0 else -1, int(exps[best]))
        r = r - vals[best] * prob.C[col]
        r2 = float(m)
        terms.append((col, coeff))
    return WiringRow(tuple(sorted(terms, key=term_key)))


class _BeamState:
    __slots__ = ("terms", "key", "dense", "r", "r2")

    def __init__(self, terms, key, dense, r, r2):
        self.terms = terms  # insertion order, drives the residual chain
        self.key = key  # sorted tuple of term keys
        self.dense = dense
        self.r = r
        self.r2 = r2

    def order_key(self):
        return (self.r2, len(self.key), self.key)


def beam_row(a_n, C: DenseMatrix, cfg: SolverConfig) -> WiringRow:
    """Reduced-state search: carry the ``memory`` best mutually distinct rows.

    Per iteration every carried row spawns all its single-term changes (same
    candidate rules as ``dmp_row``) plus itself; the pool keeps the best
    ``memory`` rows that are distinct as dense vectors.  Returns the pool
    minimum after ``s_terms`` iterations.
    """
    a = _check_row(a_n, C)
    prob = _RowProblem(C.a, cfg.coeff_set)
    n = C.rows
    m_width = cfg.memory
    r = a.copy()
    pool = [_BeamState((), (), np.zeros(n), r, _sqnorm(r))]
    for _ in range(cfg.s_terms):
        cols_l, vals_l, exps_l, signs_l, resid_l, parent_l = [], [], [], [], [], []
        for si, st in enumerate(pool):
            cols, vals, exps, signs, resid2 = _single_changes(st.r2, st.r, prob)
            k = cols.size
            cols_l.append(cols)
            vals_l.append(vals)
            exps_l.append(exps)
            signs_l.append(signs)
            resid_l.append(resid2)
            parent_l.append(np.full(k, si, np.int64))
            # the unchanged row is itself a candidate ("at most" one change)
            cols_l.append(np.array([-1], np.int64))
            vals_l.append(np.zeros(1))
            exps_l.append(np.zeros(1, np.int64))
            signs_l.append(np.zeros(1, np.int64))
            resid_l.append(np.array([st.r2]))
            parent_l.append(np.array([si], np.int64))
        cols = np.concatenate(cols_l)
        vals = np.concatenate(vals_l)
        exps = np.concatenate(exps_l)
        signs = np.concatenate(signs_l)
        resid2 = np.concatenate(resid_l)
        parents = np.concatenate(parent_l)

        def entry_key(t: int):
            parent = pool[parents[t]]
            if cols[t] < 0:
                key = parent.key
            else:
                tk = (int(cols[t]), int(exps[t]), int(signs[t]))
                key = tuple(sorted(parent.key + (tk,)))
            return (len(key), key)

        order = np.argsort(resid2, kind="stable")
        selected: list[_BeamState] = []
        seen: set[bytes] = set()
        i = 0
        total = order.size
        while i < total and len(selected) < m_width:
            f = resid2[order[i]]
            if not np.isfinite(f):
                break  # only masked candidates remain
            j = i
            while j < total and resid2[order[j]] == f:
                j += 1
            for t in sorted(order[i:j], key=entry_key):
                if len(selected) >= m_width:
                    break
                parent = pool[parents[t]]
                if cols[t] < 0:
                    state = parent
                else:
                    col = int(cols[t])
                    dense = parent.dense.copy()
                    dense[col] += vals[t]
                    coeff = Pow2Coeff(1 if signs[t] == 0 else -1, int(exps[t]))
                    tk = (col, int(exps[t]), int(signs[t]))
                    state = _BeamState(
                        parent.terms + ((col, coeff),),
                        tuple(sorted(parent.key + (tk,))),
                        dense,
                        parent.r - vals[t] * prob.C[col],
                        float(f),
                    )
                fb = state.dense.tobytes()
                if fb in seen:
                    continue
                seen.add(fb)
                selected.append(state)
            i = j
        pool = selected
    best = min(pool, key=_BeamState.order_key)
    return WiringRow(tuple(sorted(best.terms, key=term_key)))


def exhaustive_row(a_n, C: DenseMatrix, cfg: SolverConfig) -> WiringRow:
    """Exact minimizer over all multisets of at most ``s_terms`` scaled rows.

    Enumerates unordered combinations with repetition (ordered tuples are
    permutation-redundant) from the finite coefficient set; when zero is a
    member, smaller multisets are enumerated as separate sizes.  Refuses to
    start if the ordered-tuple work estimate exceeds ``cfg.budget``.
    """
    a = _check_row(a_n, C)
    if cfg.coeff_set is None:
        raise ValueError("exhaustive search requires a finite coefficient set")
    n = C.rows
    estimate = float(n * len(cfg.coeff_set)) ** cfg.s_terms
    if estimate > cfg.budget:
        raise BudgetError(estimate, cfg.budget)
    prob = _RowProblem(C.a, cfg.coeff_set)
    cols_valid = np.flatnonzero(prob.valid)
    nv = prob.vals.size
    cand_cols = np.repeat(cols_valid, nv)
    cand_vals = np.tile(prob.vals, cols_valid.size)
    cand_exps = np.tile(prob.exps, cols_valid.size)
    cand_signs = np.tile(prob.signs, cols_valid.size)
    scaled = cand_vals[:, None] * prob.C[cand_cols]
    sizes = range(cfg.s_terms + 1) if cfg.coeff_set.include_zero else [cfg.s_terms]
    best = None
    for s in sizes:
        if s > 0 and cand_cols.size == 0:
            continue
        f, idx = _kernels.search_size(a, scaled, s)
        key = (float(f), s, tuple(int(i) for i in idx))
        if best is None or key < best:
            best = key
    if best is None:
        return WiringRow()
    _, _, idx = best
    terms = tuple(
        (int(cand_cols[i]), Pow2Coeff(1 if cand_signs[i] == 0 else -1, int(cand_exps[i])))
        for i in idx
    )
    return WiringRow(terms)  # candidate order is the canonical term order


_SOLVERS = {"dmp": dmp_row, "exhaustive": exhaustive_row, "beam": beam_row}


def wiring_step(
    A_target: DenseMatrix, C: DenseMatrix, cfg: SolverConfig, engine: str
) -> WiringMatrix:
    """Solve every row of ``A_target`` against codebook ``C`` independently."""
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if A_target.shape != C.shape:
        raise DimensionError(
            f"target shape {A_target.shape} differs from codebook {C.shape}"
        )
    if engine == "exhaustive":
        if cfg.coeff_set is None:
            raise ValueError("exhaustive search requires a finite coefficient set")
        estimate = float(C.rows * len(cfg.coeff_set)) ** cfg.s_terms
        if estimate > cfg.budget:
            raise BudgetError(estimate, cfg.budget)
    solve = _SOLVERS[engine]
    rows = []
    for i in range(A_target.rows):
        try:
            rows.append(solve(A_target.row(i), C, cfg))
        except (ValueError, ArithmeticError) as exc:
            raise type(exc)(f"row {i}: {exc}") from exc
    return WiringMatrix(tuple(rows), C.rows, cfg.s_terms)


def _fro_err2(a: np.ndarray, c: np.ndarray) -> float:
    d = a - c
    return float(np.sum(d * d))


def decompose(A: DenseMatrix, driver: DriverConfig) -> tuple[Decomposition, list[TraceRow]]:
    """Run the sequential factorization: each step's product becomes the next
    codebook.

    Returns the decomposition and one trace row per step (step 0 is the
    initial-codebook baseline).  Raises :class:`InternalConsistencyError` if
    a step increases the total squared error although the identity
    coefficient was admissible.
    """
    n, k = A.shape
    c = np.eye(n, k)
    steps: list[WiringMatrix] = []
    sq = sqnr(A, DenseMatrix(c))
    trace = [TraceRow(0, "init", 0, 0, sq, 0, 0)]
    nominal = 0
    effective = 0
    err_prev = _fro_err2(A.a, c)
    for i in range(1, driver.total_steps + 1):
        if driver.target_db is not None and sq.at_least_db(driver.target_db):
            break
        if i <= driver.warmup_steps:
            engine = "dmp"
            cfg = SolverConfig(driver.warmup_s, None, 1, driver.solver.budget)
        else:
            engine = driver.engine
            cfg = driver.solver
        w = wiring_step(A, DenseMatrix(c), cfg, engine)
        c = w.to_dense() @ c
        steps.append(w)
        err = _fro_err2(A.a, c)
        identity_ok = cfg.coeff_set is None or cfg.coeff_set.admits_identity
        if identity_ok and err > err_prev * (1.0 + 1e-9):
            raise InternalConsistencyError(
                f"step {i}: total squared error rose from {err_prev:.6e} to "
                f"{err:.6e} although the identity coefficient was admissible"
            )
        err_prev = err
        nominal += n * (cfg.s_terms - 1)
        effective += sum(max(0, r.nonzero_count - 1) for r in w.rows)
        sq = sqnr(A, DenseMatrix(c))
        trace.append(
            TraceRow(
                i,
                engine,
                cfg.s_terms,
                cfg.memory if engine == "beam" else 1,
                sq,
                nominal,
                effective,
            )
        )
    return Decomposition(n, k, tuple(steps)), trace
