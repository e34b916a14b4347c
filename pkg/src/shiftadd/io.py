"""File formats: CSV matrices and JSON decompositions.

Matrix CSV: one row per line, comma separated, '.' decimal point, printed
with %.17g so float64 values round-trip exactly.

Decomposition JSON::

    {"n": N, "k": K,
     "steps": [step, ...]}

where each step is a list of N rows and each row is a list of exactly S
slots, a slot being either ``[col, sign, exp]`` (a nonzero term) or ``null``
(an unused slot / zero coefficient).  The slot count encodes the per-step
term budget S.  See docs/formats.md and docs/decomposition.schema.json.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Decomposition, DenseMatrix, Pow2Coeff, WiringMatrix, WiringRow

__all__ = [
    "FormatError",
    "load_matrix_csv",
    "save_matrix_csv",
    "decomposition_to_json",
    "decomposition_from_json",
    "save_decomposition",
    "load_decomposition",
]


class FormatError(ValueError):
    """A file does not match its documented format."""


def save_matrix_csv(m: DenseMatrix, path) -> None:
    np.savetxt(path, m.a, fmt="%.17g", delimiter=",")


def load_matrix_csv(path) -> DenseMatrix:
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: not a numeric CSV matrix: {exc}") from exc
    return DenseMatrix(a)


def decomposition_to_json(d: Decomposition) -> dict:
    steps = []
    for w in d.steps:
        rows = []
        for r in w.rows:
            slots: list = [
                [col, coeff.sign, coeff.exponent]
                for col, coeff in r.terms
                if not coeff.is_zero
            ]
            slots.extend([None] * (w.s_terms - len(slots)))
            rows.append(slots)
        steps.append(rows)
    return {"n": d.n, "k": d.k, "steps": steps}


def decomposition_from_json(obj) -> Decomposition:
    try:
        n = int(obj["n"])
        k = int(obj["k"])
        raw_steps = obj["steps"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"decomposition JSON missing n/k/steps: {exc}") from exc
    steps = []
    for si, raw_rows in enumerate(raw_steps):
        if len(raw_rows) != n:
            raise FormatError(f"step {si}: expected {n} rows, got {len(raw_rows)}")
        slot_counts = {len(row) for row in raw_rows}
        if len(slot_counts) != 1:
            raise FormatError(f"step {si}: rows disagree on slot count {slot_counts}")
        s_terms = slot_counts.pop()
        if s_terms < 1:
            raise FormatError(f"step {si}: rows need at least one slot")
        rows = []
        for ri, raw_row in enumerate(raw_rows):
            terms = []
            for slot in raw_row:
                if slot is None:
                    continue
                try:
                    col, sign, exp = (int(v) for v in slot)
                    terms.append((col, Pow2Coeff(sign, exp)))
                except (TypeError, ValueError) as exc:
                    raise FormatError(
                        f"step {si} row {ri}: bad term {slot!r}: {exc}"
                    ) from exc
            rows.append(WiringRow(tuple(terms)))
        try:
            steps.append(WiringMatrix(tuple(rows), n, s_terms))
        except ValueError as exc:
            raise FormatError(f"step {si}: {exc}") from exc
    try:
        return Decomposition(n, k, tuple(steps))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_decomposition(d: Decomposition, path) -> None:
    Path(path).write_text(json.dumps(decomposition_to_json(d)) + "\n")


def load_decomposition(path) -> Decomposition:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return decomposition_from_json(obj)
