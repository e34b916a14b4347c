"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to watch progress.  The
experiment-scale criteria (4, 5, 9) share module-scoped ensemble fixtures;
the exhaustive-search reproduction inside criterion 4 dominates the runtime
(roughly twenty minutes on one core).
"""

import csv
import math
from contextlib import contextmanager

import numpy as np
import pytest

from shiftadd import (
    CoeffSet,
    DenseMatrix,
    DriverConfig,
    SolverConfig,
    beam_row,
    cost,
    csd_quantize,
    decompose,
    dmp_row,
    emit,
    exhaustive_row,
    interpret,
    reconstruct,
    row_residual,
    wiring_step,
)
from shiftadd.cli import ExperimentSpec, compare_report, run_experiment, trial_matrix

from helpers import gaussian, random_decomposition
from oracles import accumulated_residual_sq, csd_mse_ratio, naive_min_residual, row_terms

THRESH = 47.0


@contextmanager
def criterion(num, label):
    try:
        yield
    except BaseException:
        print(f"\ncriterion {num} ({label}): FAIL")
        raise
    print(f"\ncriterion {num} ({label}): PASS")


# ---------------------------------------------------------------------------
# corpora and ensembles shared between criteria

@pytest.fixture(scope="module")
def corpus_small():
    """Criterion 1 corpus: >=200 random instances, N<=6, K<=3, S<=2,
    alphabet {0} and signed powers with exponents in [-2, 2].

    Zero stays in the alphabet: without it the exhaustive search is pinned
    to exactly S nonzero terms while the greedy engines may stop short, and
    the residual sandwich would compare different search spaces.
    """
    rng = np.random.default_rng(20260801)
    out = []
    for _ in range(200):
        n = int(rng.integers(2, 7))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        c = DenseMatrix(rng.standard_normal((n, k)))
        a = rng.standard_normal(k)
        out.append((a, c, s, CoeffSet(-2, 2, True)))
    return out


def _run(tmp, name, **kw):
    out = tmp / f"{name}.csv"
    run_experiment(ExperimentSpec(out=str(out), jobs=1, **kw))
    return out


@pytest.fixture(scope="module")
def ens_16x2(tmp_path_factory):
    """16x2 Gaussian ensemble, 100 trials: greedy baseline to 128 adds,
    beam and exhaustive to the same cumulative-adds budget."""
    tmp = tmp_path_factory.mktemp("ens16x2")
    print("\n[ensemble 16x2] dmp baseline ...", flush=True)
    base = _run(tmp, "dmp", n=16, k=2, engine="dmp", s_terms=2, steps=8,
                seed=20260809, trials=100)
    print("[ensemble 16x2] beam S=3 M=10, exponents [-40,3] ...", flush=True)
    beam = _run(tmp, "beam", n=16, k=2, engine="beam", s_terms=3, memory=10,
                exp_min=-40, exp_max=3, steps=5, seed=20260809, trials=100)
    print("[ensemble 16x2] exhaustive S=3, exponents [-20,3] "
          "(the documented desk-scale fallback; ~20 min) ...", flush=True)
    exh = _run(tmp, "exh", n=16, k=2, engine="exhaustive", s_terms=3,
               exp_min=-20, exp_max=3, steps=5, seed=20260809, trials=100)
    report = compare_report([base, beam, exh], tmp / "gains.csv", THRESH)
    return {"paths": [base, beam, exh], "report": {r["engine"]: r for r in report}}


@pytest.fixture(scope="module")
def ens_32x4(tmp_path_factory):
    """32x4 ensemble for the large-matrix beam gain row."""
    tmp = tmp_path_factory.mktemp("ens32x4")
    print("\n[ensemble 32x4] dmp baseline ...", flush=True)
    base = _run(tmp, "dmp", n=32, k=4, engine="dmp", s_terms=2, steps=14,
                seed=20260810, trials=100)
    print("[ensemble 32x4] beam S=3 M=10 (~2 min) ...", flush=True)
    beam = _run(tmp, "beam", n=32, k=4, engine="beam", s_terms=3, memory=10,
                exp_min=-40, exp_max=3, steps=8, seed=20260810, trials=100)
    report = compare_report([base, beam], tmp / "gains.csv", THRESH)
    return {"paths": [base, beam], "report": {r["engine"]: r for r in report}}


@pytest.fixture(scope="module")
def ens_16x4(tmp_path_factory):
    """16x4 runs for the qualitative figure-shape checks.

    Part a: ten seeded ensemble runs of twenty trials each, beam S=3 over
    exponents [-40,3] for M in {1,2,5,10} (final mean SQNR per run).
    Part b: twelve shared trials comparing exhaustive and beam mean curves
    over the narrower desk preset [-12,3] at matched adds.
    """
    ms = (1, 2, 5, 10)
    print("\n[ensemble 16x4] beam memory sweep, 10 runs x 20 trials ...", flush=True)
    finals = []  # per run: {m: final mean db}
    for run_seed in range(10):
        by_m = {}
        for m in ms:
            vals = []
            for t in range(20):
                a = trial_matrix(16, 4, 1000 + run_seed, t)
                _, tr = decompose(
                    a,
                    DriverConfig(8, "beam", SolverConfig(3, CoeffSet(-40, 3), m)),
                )
                vals.append(tr[-1].sqnr.db)
            by_m[m] = float(np.mean(vals))
        finals.append(by_m)
    print("[ensemble 16x4] exhaustive vs beam mean curves, 12 trials (~3 min) ...",
          flush=True)
    cs = CoeffSet(-12, 3)
    curves = {}
    traces = []
    engines = [("exh", "exhaustive", SolverConfig(3, cs))] + [
        (f"beam{m}", "beam", SolverConfig(3, cs, m)) for m in ms
    ]
    for label, engine, cfg in engines:
        acc = np.zeros(9)
        for t in range(12):
            a = trial_matrix(16, 4, 777, t)
            _, tr = decompose(a, DriverConfig(8, engine, cfg))
            traces.append(tr)
            acc += np.array([row.sqnr.db for row in tr])
        curves[label] = acc / 12
    return {"ms": ms, "finals": finals, "curves": curves, "traces": traces}


# ---------------------------------------------------------------------------
# criteria

def test_criterion_1_exhaustive_equals_naive_enumerator(corpus_small):
    with criterion(1, "oracle equivalence of the exhaustive search"):
        for a, c, s, cs in corpus_small:
            row = exhaustive_row(a, c, SolverConfig(s, cs))
            f_naive, terms_naive = naive_min_residual(
                a, c.a, s, cs.min_exponent, cs.max_exponent, cs.include_zero
            )
            f_impl = accumulated_residual_sq(
                a, c.a, [(col, coeff.value) for col, coeff in row.terms]
            )
            assert f_impl == f_naive  # bitwise, identical accumulation order
            assert row_terms(row) == sorted(terms_naive)


def test_criterion_2_beam_memory_one_reproduces_greedy():
    with criterion(2, "beam with memory 1 is the greedy algorithm"):
        rng = np.random.default_rng(20260802)
        checked = 0
        for mode in ("unbounded", "restricted"):
            for _ in range(60):
                n = int(rng.integers(2, 9))
                k = int(rng.integers(1, 5))
                s = int(rng.integers(1, 5))
                cs = (
                    None
                    if mode == "unbounded"
                    else CoeffSet(
                        int(rng.integers(-8, -1)),
                        int(rng.integers(0, 4)),
                        bool(rng.integers(0, 2)),
                    )
                )
                c = DenseMatrix(rng.standard_normal((n, k)))
                a = rng.standard_normal(k)
                assert beam_row(a, c, SolverConfig(s, cs, memory=1)) == dmp_row(
                    a, c, SolverConfig(s, cs)
                )
                checked += 1
        assert checked == 120


def test_criterion_3_sandwich_property(corpus_small):
    with criterion(3, "exhaustive <= beam <= greedy residual sandwich"):
        for a, c, s, cs in corpus_small:
            re_ = row_residual(a, exhaustive_row(a, c, SolverConfig(s, cs)), c)
            rd_ = row_residual(a, dmp_row(a, c, SolverConfig(s, cs)), c)
            rb1 = row_residual(a, beam_row(a, c, SolverConfig(s, cs, 1)), c)
            assert rb1 == rd_
            for m in (2, 5, 10):
                rb = row_residual(a, beam_row(a, c, SolverConfig(s, cs, m)), c)
                assert re_ <= rb <= rd_


@pytest.mark.slow
def test_criterion_4_table_reproduction_16x2(ens_16x2):
    # Exhaustive search runs the documented desk-scale fallback: exponents
    # narrowed to [-20,3], tolerance widened to +-8 percentage points.
    with criterion(4, "relative SQNR gains over the greedy baseline, 16x2"):
        rep = ens_16x2["report"]
        assert rep["dmp"]["gain_adds_matched_pct"] == "0.0"
        exh = float(rep["exhaustive"]["gain_adds_matched_pct"])
        beam = float(rep["beam"]["gain_adds_matched_pct"])
        print(f"  measured gains: exhaustive {exh:.2f}% (target 17.8 +- 8), "
              f"beam {beam:.2f}% (target 13.4 +- 6)")
        assert rep["exhaustive"]["status"] == "ok"
        assert rep["beam"]["status"] == "ok"
        assert abs(exh - 17.8) <= 8.0
        assert abs(beam - 13.4) <= 6.0


@pytest.mark.slow
def test_criterion_4_table_reproduction_32x4(ens_32x4):
    # Full-scale exhaustive rows are out of desk reach; per the acceptance
    # note only the beam-vs-greedy gain is checked at 32x4.
    with criterion(4, "relative beam SQNR gain over the greedy baseline, 32x4"):
        rep = ens_32x4["report"]
        beam = float(rep["beam"]["gain_adds_matched_pct"])
        print(f"  measured gain: beam {beam:.2f}% (target 12.9 +- 6)")
        assert rep["beam"]["status"] == "ok"
        assert abs(beam - 12.9) <= 6.0


@pytest.mark.slow
def test_criterion_5_figure_shape_16x4(ens_16x4):
    with criterion(5, "memory ordering and exhaustive upper bound, 16x4"):
        ms = ens_16x4["ms"]
        ordered = 0
        for by_m in ens_16x4["finals"]:
            vals = [by_m[m] for m in ms]
            if all(b >= a - 1e-12 for a, b in zip(vals, vals[1:])):
                ordered += 1
        print(f"  final mean SQNR non-decreasing in M in {ordered}/10 ensemble runs")
        assert ordered >= 8
        curves = ens_16x4["curves"]
        for m in ms:
            margin = curves["exh"] - curves[f"beam{m}"]
            assert np.all(margin >= -1e-9), f"beam M={m} exceeds exhaustive: {margin}"


def test_criterion_6_cost_model():
    with criterion(6, "nominal adds formula and program add count"):
        rng = np.random.default_rng(20260803)
        # solver-produced uniform-S runs
        for s, steps, engine, cfg in (
            (2, 4, "dmp", SolverConfig(2)),
            (3, 3, "beam", SolverConfig(3, CoeffSet(-8, 2), 4)),
            (2, 3, "exhaustive", SolverConfig(2, CoeffSet(-4, 2))),
            (1, 5, "dmp", SolverConfig(1)),
        ):
            a = DenseMatrix(rng.standard_normal((6, 2)))
            d, _ = decompose(a, DriverConfig(steps, engine, cfg,
                                             warmup_steps=0, warmup_s=2))
            report = cost(d)
            assert report.nominal_adds == steps * 6 * (s - 1)
            assert emit(d).add_count == report.effective_adds
        # arbitrary hand-built decompositions
        for _ in range(50):
            d = random_decomposition(rng)
            assert emit(d).add_count == cost(d).effective_adds


def test_criterion_7_csd_baseline():
    with criterion(7, "signed-digit per-digit SQNR improvement"):
        rng = np.random.Generator(np.random.PCG64(20260804))
        xs = rng.uniform(1.0, 2.0, 100_000)
        target = 10 * math.log10(28.0)
        for d in (1, 2):
            ratio_db = 10 * math.log10(csd_mse_ratio(xs, csd_quantize, d))
            print(f"  digits {d}->{d+1}: {ratio_db:.2f} dB per digit "
                  f"(target {target:.2f} +- 1)")
            assert abs(ratio_db - target) <= 1.0


def test_criterion_8_codegen_equivalence():
    with criterion(8, "emitted programs match the dense product"):
        rng = np.random.default_rng(20260805)
        for _ in range(1000):
            d = random_decomposition(rng)
            x = rng.standard_normal(d.k)
            ref = reconstruct(d).a @ x
            got = interpret(emit(d), x)
            assert np.linalg.norm(got - ref) <= 1e-9 * (1 + np.linalg.norm(ref))


@pytest.mark.slow
def test_criterion_9_per_step_monotonicity(ens_16x2, ens_32x4, ens_16x4):
    # 2^0 is admissible in every configured alphabet, so the total squared
    # error must never rise step over step in any trial of criteria 4-5.
    with criterion(9, "per-step error non-increase in every run"):
        for path in ens_16x2["paths"] + ens_32x4["paths"]:
            with open(path) as fh:
                rows = list(csv.reader(fh))[1:]
            by_trial = {}
            for r in rows:
                by_trial.setdefault(int(r[0]), []).append((int(r[1]), float(r[7])))
            for trial, pts in by_trial.items():
                dbs = [db for _, db in sorted(pts)]
                assert all(b >= a for a, b in zip(dbs, dbs[1:])), (path, trial)
        for tr in ens_16x4["traces"]:
            dbs = [row.sqnr.db for row in tr]
            assert all(b >= a for a, b in zip(dbs, dbs[1:]))
