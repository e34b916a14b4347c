"""Command line interface and experiment harness.

Subcommands: generate, decompose, run, compare, emit-ir, verify-ir.
``run`` decomposes an ensemble of random matrices and writes per-trial trace
rows as CSV (plus an aggregate CSV and a metadata JSON sidecar); ``compare``
turns several result files into a relative-gain table against the greedy
baseline.  Exit codes: 0 ok, 1 verification failure, 2 budget refusal,
3 I/O error, 4 invalid specification.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .algorithms import (
    DEFAULT_BUDGET,
    ENGINES,
    BudgetError,
    DriverConfig,
    SolverConfig,
    decompose,
)
from .codegen import emit, export_text, interpret, parse_text
from .core import CoeffSet, DenseMatrix, apply, reconstruct
from .io import (
    FormatError,
    load_decomposition,
    load_matrix_csv,
    save_decomposition,
    save_matrix_csv,
)
from .metrics import cost

__all__ = [
    "ExperimentSpec",
    "gaussian_matrix",
    "trial_matrix",
    "run_experiment",
    "compare_report",
    "main",
    "THRESHOLD_DB",
]

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_BUDGET = 2
EXIT_IO = 3
EXIT_SPEC = 4

# Accuracy threshold (dB) above which relative gains are averaged: at least
# 8-bit signed integer accuracy.
THRESHOLD_DB = 47.0

RESULT_COLUMNS = (
    "trial",
    "step",
    "engine",
    "s",
    "m",
    "cumulative_nominal_adds",
    "cumulative_effective_adds",
    "sqnr_db",
)


def gaussian_matrix(n: int, k: int, seed: int) -> DenseMatrix:
    """Standard-normal matrix from numpy's PCG64 stream for ``seed``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return DenseMatrix(rng.standard_normal((n, k)))


def trial_matrix(n: int, k: int, seed: int, trial: int) -> DenseMatrix:
    """Matrix for one trial of an ensemble: PCG64 seeded with the spawn key
    ``(seed, trial)``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial,))
    rng = np.random.Generator(np.random.PCG64(ss))
    return DenseMatrix(rng.standard_normal((n, k)))


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one experiment byte for byte."""

    n: int
    k: int
    engine: str = "dmp"
    s_terms: int = 2
    memory: int = 10
    exp_min: int | None = None
    exp_max: int | None = None
    include_zero: bool = True
    warmup_steps: int = 2
    warmup_s: int = 2
    steps: int = 10
    target_db: float | None = None
    budget: float = DEFAULT_BUDGET
    seed: int | None = None
    trials: int = 1
    matrix_file: str | None = None
    out: str = "results.csv"
    jobs: int = 0  # 0 => cpu count

    def validate(self) -> None:
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.n < 1 or self.k < 1:
            raise ValueError(f"degenerate shape ({self.n}, {self.k})")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if (self.seed is None) == (self.matrix_file is None):
            raise ValueError(
                "exactly one ensemble source: give --seed or an input matrix file"
            )
        if self.matrix_file is not None and self.trials != 1:
            raise ValueError("a file ensemble runs exactly one trial")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    def coeff_set(self) -> CoeffSet | None:
        if self.engine == "dmp" and self.exp_min is None and self.exp_max is None:
            return None  # unbounded powers of two
        lo = self.exp_min if self.exp_min is not None else -40
        hi = self.exp_max if self.exp_max is not None else 3
        return CoeffSet(lo, hi, self.include_zero)

    def driver(self) -> DriverConfig:
        solver = SolverConfig(self.s_terms, self.coeff_set(), self.memory, self.budget)
        return DriverConfig(
            total_steps=self.steps,
            engine=self.engine,
            solver=solver,
            warmup_steps=min(self.warmup_steps, self.steps),
            warmup_s=self.warmup_s,
            target_db=self.target_db,
        )


def _format_db(sq) -> str:
    return "exact" if sq.is_exact else repr(sq.db)


def _run_trial(spec: ExperimentSpec, trial: int) -> list[tuple]:
    if spec.matrix_file is not None:
        a = load_matrix_csv(spec.matrix_file)
        if a.shape != (spec.n, spec.k):
            raise ValueError(
                f"matrix file has shape {a.shape}, spec says ({spec.n}, {spec.k})"
            )
    else:
        a = trial_matrix(spec.n, spec.k, spec.seed, trial)
    _, trace = decompose(a, spec.driver())
    m_col = spec.memory if spec.engine == "beam" else ""
    return [
        (
            trial,
            tr.step,
            spec.engine,
            tr.s_terms,
            m_col,
            tr.nominal_adds,
            tr.effective_adds,
            _format_db(tr.sqnr),
        )
        for tr in trace
    ]


def _run_trial_packed(args: tuple[dict, int]) -> list[tuple]:
    spec_dict, trial = args
    return _run_trial(ExperimentSpec(**spec_dict), trial)


def run_experiment(spec: ExperimentSpec) -> list[tuple]:
    """Run every trial, write the results CSV plus aggregate CSV and metadata
    sidecar, and return the sorted result rows."""
    spec.validate()
    spec.driver()  # fail fast on bad solver parameters
    jobs = spec.jobs if spec.jobs > 0 else (os.cpu_count() or 1)
    jobs = min(jobs, spec.trials)
    rows: list[tuple] = []
    if jobs > 1:
        packed = [(asdict(spec), t) for t in range(spec.trials)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(_run_trial_packed, packed):
                rows.extend(chunk)
    else:
        for t in range(spec.trials):
            rows.extend(_run_trial(spec, t))
    rows.sort(key=lambda r: (r[0], r[1]))  # schedule independence

    out = Path(spec.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        w.writerows(rows)
    _write_aggregate(rows, spec, _aggregate_path(out))
    meta = asdict(spec)
    meta["sqnr_mean_domain"] = "db"
    _meta_path(out).write_text(json.dumps(meta, indent=2) + "\n")
    return rows


def _write_aggregate(rows: list[tuple], spec: ExperimentSpec, path: Path) -> None:
    """Mean dB per step over trials, restricted to steps every trial reached
    (avoids survivor bias under the target-dB stop rule)."""
    steps, adds, db = _complete_curve(rows, spec.trials)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ("engine", "step", "cumulative_nominal_adds", "mean_sqnr_db",
             "trials", "mean_domain")
        )
        for s, a, v in zip(steps, adds, db):
            w.writerow((spec.engine, s, a, repr(v), spec.trials, "db"))


def _aggregate_path(out: Path) -> Path:
    return out.with_name(out.stem + ".agg.csv")


def _meta_path(out: Path) -> Path:
    return out.with_name(out.stem + ".meta.json")


def _complete_curve(rows: list[tuple], trials: int):
    """Mean dB per step over trials, restricted to steps every trial reached.

    Returns (steps, adds, mean_db) arrays; exact-reconstruction rows have no
    dB value and end the curve.
    """
    by_step: dict[int, list] = {}
    adds: dict[int, int] = {}
    for r in rows:
        step = int(r[1])
        by_step.setdefault(step, []).append(r)
        adds[step] = int(r[5])
    steps, out_adds, out_db = [], [], []
    for step in sorted(by_step):
        group = by_step[step]
        if len(group) != trials:
            break  # incomplete step (early-stopped trials): survivor bias
        if any(g[7] == "exact" for g in group):
            break
        uniq = {int(g[5]) for g in group}
        if len(uniq) != 1:
            raise ValueError(f"step {step}: inconsistent cumulative adds {uniq}")
        steps.append(step)
        out_adds.append(uniq.pop())
        out_db.append(sum(float(g[7]) for g in group) / trials)
    return steps, out_adds, out_db


def _load_results(path: Path):
    with path.open() as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != RESULT_COLUMNS:
            raise FormatError(f"{path}: unexpected columns {header}")
        return list(rd)


def compare_report(
    result_paths: list[str | Path],
    out,
    threshold_db: float = THRESHOLD_DB,
) -> list[dict]:
    """Relative SQNR gain of every engine curve over the greedy baseline.

    The headline column matches curves at equal cumulative nominal adds,
    interpolating the baseline linearly in adds; the step-matched column
    compares at equal step index.  Gains average only points where the
    baseline is at or above ``threshold_db``.
    """
    curves = []
    shapes = set()
    for p in result_paths:
        p = Path(p)
        meta = json.loads(_meta_path(p).read_text())
        rows = _load_results(p)
        steps, adds, db = _complete_curve(rows, int(meta["trials"]))
        curves.append({"meta": meta, "steps": steps, "adds": adds, "db": db})
        shapes.add((meta["n"], meta["k"], meta.get("seed"), meta.get("matrix_file")))
    if len(shapes) != 1:
        raise ValueError(f"result files disagree on shape/ensemble: {shapes}")
    baselines = [c for c in curves if c["meta"]["engine"] == "dmp"]
    if len(baselines) != 1:
        raise ValueError(
            f"need exactly one dmp baseline among the inputs, found {len(baselines)}"
        )
    base = baselines[0]
    if not all(b < a for b, a in zip(base["adds"], base["adds"][1:])):
        raise ValueError("baseline adds are not strictly increasing")

    report = []
    for cur in curves:
        meta = cur["meta"]
        adds_gains = []
        for step, adds_e, db_e in zip(cur["steps"], cur["adds"], cur["db"]):
            if adds_e < base["adds"][0] or adds_e > base["adds"][-1]:
                continue
            b = float(np.interp(adds_e, base["adds"], base["db"]))
            if b >= threshold_db:
                adds_gains.append((db_e - b) / b * 100.0)
        step_gains = []
        base_by_step = dict(zip(base["steps"], base["db"]))
        for step, db_e in zip(cur["steps"], cur["db"]):
            b = base_by_step.get(step)
            if b is not None and b >= threshold_db:
                step_gains.append((db_e - b) / b * 100.0)
        report.append(
            {
                "n": meta["n"],
                "k": meta["k"],
                "engine": meta["engine"],
                "s": meta["s_terms"],
                "m": meta["memory"] if meta["engine"] == "beam" else "",
                "gain_adds_matched_pct": (
                    repr(sum(adds_gains) / len(adds_gains)) if adds_gains else ""
                ),
                "gain_step_matched_pct": (
                    repr(sum(step_gains) / len(step_gains)) if step_gains else ""
                ),
                "points_adds_matched": len(adds_gains),
                "points_step_matched": len(step_gains),
                "status": "ok" if adds_gains else "threshold-unreached",
            }
        )
    if out is not None:
        with Path(out).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(report[0].keys()))
            w.writeheader()
            w.writerows(report)
    return report


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are spec errors, not exit 2
        self.exit(EXIT_SPEC, f"{self.prog}: error: {message}\n")


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--engine", choices=ENGINES, help="row solver (default dmp)")
    p.add_argument("--s-terms", type=int, help="terms per wiring row (default 2)")
    p.add_argument("--memory", type=int, help="beam width M (default 10)")
    p.add_argument("--exp-min", type=int, help="smallest coefficient exponent")
    p.add_argument("--exp-max", type=int, help="largest coefficient exponent")
    p.add_argument(
        "--no-zero-coeff",
        action="store_true",
        help="exclude the zero coefficient from the search alphabet",
    )
    p.add_argument("--warmup-steps", type=int, help="greedy warm-up steps (default 2)")
    p.add_argument("--warmup-s", type=int, help="terms per row during warm-up (default 2)")
    p.add_argument("--steps", type=int, help="total wiring steps (default 10)")
    p.add_argument("--target-db", type=float, help="stop once SQNR reaches this many dB")
    p.add_argument("--budget", type=float, help="exhaustive work cap (default 1e10)")


def _build_parser() -> _Parser:
    top = _Parser(prog="shiftadd", description=__doc__)
    top.add_argument("--config", help="flat key=value file; command line overrides it")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[], help="write a Gaussian matrix CSV")
    p.add_argument("--shape", nargs=2, type=int, metavar=("N", "K"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("decompose", help="decompose one matrix file")
    p.add_argument("--in", dest="infile", required=True, help="matrix CSV")
    _add_solver_args(p)
    p.add_argument("--out", required=True, help="decomposition JSON")
    p.add_argument("--trace-out", help="optional per-step trace CSV")

    p = sub.add_parser("run", help="run a multi-trial experiment")
    p.add_argument("--shape", nargs=2, type=int, metavar=("N", "K"))
    p.add_argument("--seed", type=int, help="ensemble seed")
    p.add_argument("--trials", type=int, help="number of trial matrices (default 1)")
    p.add_argument("--in", dest="infile", help="single matrix CSV instead of an ensemble")
    _add_solver_args(p)
    p.add_argument("--jobs", type=int, help="parallel trial workers (default: cpu count)")
    p.add_argument("--out", required=True, help="results CSV")

    p = sub.add_parser("compare", help="gain table of result CSVs vs the dmp baseline")
    p.add_argument("results", nargs="+", help="result CSVs from `run`")
    p.add_argument("--threshold-db", type=float, default=THRESHOLD_DB)
    p.add_argument("--out", required=True)

    p = sub.add_parser("emit-ir", help="emit a shift-add program from a decomposition")
    p.add_argument("--in", dest="infile", required=True, help="decomposition JSON")
    p.add_argument("--out", required=True, help="program text (.sap)")

    p = sub.add_parser("verify-ir", help="check a program against its decomposition")
    p.add_argument("--in", dest="infile", required=True, help="program text (.sap)")
    p.add_argument("--decomposition", required=True, help="decomposition JSON")
    p.add_argument("--trials", type=int, default=100, help="random probe vectors")
    p.add_argument("--seed", type=int, default=0)
    return top


def _apply_config(top: _Parser, argv: list[str]) -> None:
    """Seed subparser defaults from a flat key=value file (CLI overrides)."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    try:
        text = Path(known.config).read_text()
    except OSError as exc:
        raise exc
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{known.config}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        entries[key.strip().replace("-", "_")] = value.strip()
    # find the chosen subparser
    sub_actions = [
        a for a in top._actions if isinstance(a, argparse._SubParsersAction)
    ]
    command = next((a for a in argv if not a.startswith("-") and a != known.config), None)
    if not sub_actions or command not in sub_actions[0].choices:
        return
    sub = sub_actions[0].choices[command]
    defaults = {}
    for action in sub._actions:
        if action.dest in entries:
            raw = entries.pop(action.dest)
            if isinstance(action, argparse._StoreTrueAction):
                defaults[action.dest] = raw.lower() in ("1", "true", "yes", "on")
            elif action.nargs == 2:
                parts = raw.split()
                if len(parts) != 2:
                    raise ValueError(f"config key {action.dest} needs two values")
                defaults[action.dest] = [action.type(p) for p in parts]
            elif action.type is not None:
                defaults[action.dest] = action.type(raw)
            else:
                defaults[action.dest] = raw
    if entries:
        raise ValueError(f"config keys not recognised: {sorted(entries)}")
    sub.set_defaults(**defaults)


def _spec_from_args(args) -> ExperimentSpec:
    if args.infile is not None:
        mat = load_matrix_csv(args.infile)
        n, k = mat.shape
    elif args.shape is not None:
        n, k = args.shape
    else:
        raise ValueError("give --shape with --seed, or an input matrix file")
    fields = dict(
        n=n,
        k=k,
        matrix_file=args.infile,
        seed=args.seed,
        out=args.out,
    )
    for name, default in (
        ("engine", "dmp"),
        ("s_terms", 2),
        ("memory", 10),
        ("exp_min", None),
        ("exp_max", None),
        ("warmup_steps", 2),
        ("warmup_s", 2),
        ("steps", 10),
        ("target_db", None),
        ("budget", DEFAULT_BUDGET),
        ("trials", 1),
        ("jobs", 0),
    ):
        value = getattr(args, name, None)
        fields[name] = default if value is None else value
    fields["include_zero"] = not getattr(args, "no_zero_coeff", False)
    return ExperimentSpec(**fields)


def _cmd_generate(args) -> int:
    n, k = args.shape
    save_matrix_csv(gaussian_matrix(n, k, args.seed), args.out)
    return EXIT_OK


def _cmd_decompose(args) -> int:
    args.trials = 1
    args.seed = None
    spec = _spec_from_args(args)
    spec.validate()
    a = load_matrix_csv(args.infile)
    d, trace = decompose(a, spec.driver())
    save_decomposition(d, args.out)
    if args.trace_out:
        with Path(args.trace_out).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step", "engine", "s", "m", "cumulative_nominal_adds",
                        "cumulative_effective_adds", "sqnr_db"))
            for tr in trace:
                w.writerow((tr.step, tr.engine, tr.s_terms, tr.memory,
                            tr.nominal_adds, tr.effective_adds, _format_db(tr.sqnr)))
    print(f"wrote {args.out}: {len(d.steps)} steps, final SQNR {trace[-1].sqnr}")
    return EXIT_OK


def _cmd_run(args) -> int:
    spec = _spec_from_args(args)
    rows = run_experiment(spec)
    out = Path(spec.out)
    print(
        f"wrote {out} ({len(rows)} rows), {_aggregate_path(out)}, {_meta_path(out)}"
    )
    return EXIT_OK


def _cmd_compare(args) -> int:
    report = compare_report(args.results, args.out, args.threshold_db)
    for row in report:
        print(
            f"{row['engine']:>10}  adds-matched {row['gain_adds_matched_pct'] or 'n/a':>8}"
            f"  step-matched {row['gain_step_matched_pct'] or 'n/a':>8}  [{row['status']}]"
        )
    return EXIT_OK


def _cmd_emit_ir(args) -> int:
    d = load_decomposition(args.infile)
    Path(args.out).write_text(export_text(emit(d)))
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_verify_ir(args) -> int:
    prog = parse_text(Path(args.infile).read_text())
    d = load_decomposition(args.decomposition)
    ok = True
    expected_adds = cost(d).effective_adds
    if prog.add_count != expected_adds:
        print(f"FAIL add count: program {prog.add_count}, decomposition {expected_adds}")
        ok = False
    else:
        print(f"ok   add count: {prog.add_count}")
    p_dense = reconstruct(d)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    worst = 0.0
    for _ in range(args.trials):
        x = rng.standard_normal(d.k)
        ref = p_dense.a @ x
        got = interpret(prog, x)
        rel = float(np.linalg.norm(got - ref)) / (1.0 + float(np.linalg.norm(ref)))
        worst = max(worst, rel)
    if worst <= 1e-9:
        print(f"ok   {args.trials} probes, worst relative error {worst:.3e}")
    else:
        print(f"FAIL worst relative error {worst:.3e} > 1e-9")
        ok = False
    if not ok:
        return EXIT_VERIFY
    print("program verified")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "decompose": _cmd_decompose,
    "run": _cmd_run,
    "compare": _cmd_compare,
    "emit-ir": _cmd_emit_ir,
    "verify-ir": _cmd_verify_ir,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    top = _build_parser()
    try:
        _apply_config(top, argv)
        args = top.parse_args(argv)
        return _COMMANDS[args.command](args)
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
