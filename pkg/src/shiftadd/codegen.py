"""Shift-add straight-line programs.

``emit`` lowers a decomposition to a program of loads, shifts, negations,
adds and subtracts computing ``x -> P @ x``; ``interpret`` evaluates a
program over float64; ``export_text``/``parse_text`` serialize the
single-assignment form (documented in docs/formats.md, extension ``.sap``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import Decomposition, DimensionError

__all__ = [
    "Load",
    "Shift",
    "Neg",
    "Add",
    "Sub",
    "Zero",
    "Op",
    "ShiftAddProgram",
    "ProgramError",
    "emit",
    "interpret",
    "export_text",
    "parse_text",
]


class ProgramError(ValueError):
    """A program is structurally invalid or malformed text."""


@dataclass(frozen=True)
class Load:
    input_index: int


@dataclass(frozen=True)
class Shift:
    src: int
    amount: int  # multiplies by 2**amount; negative amounts shift right


@dataclass(frozen=True)
class Neg:
    src: int


@dataclass(frozen=True)
class Add:
    a: int
    b: int


@dataclass(frozen=True)
class Sub:
    a: int
    b: int


@dataclass(frozen=True)
class Zero:
    pass


Op = Union[Load, Shift, Neg, Add, Sub, Zero]


@dataclass(frozen=True)
class ShiftAddProgram:
    """Single-assignment op list; ``outputs`` references ops by index."""

    n_inputs: int
    n_outputs: int
    ops: tuple[Op, ...]
    outputs: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.outputs) != self.n_outputs:
            raise ProgramError(
                f"{len(self.outputs)} output refs for n_outputs={self.n_outputs}"
            )
        for i, op in enumerate(self.ops):
            for ref in _op_refs(op):
                if not 0 <= ref < i:
                    raise ProgramError(f"op {i} references op {ref}")
            if isinstance(op, Load) and not 0 <= op.input_index < self.n_inputs:
                raise ProgramError(f"op {i} loads input {op.input_index}")
        for ref in self.outputs:
            if not 0 <= ref < len(self.ops):
                raise ProgramError(f"output references op {ref}")

    @property
    def add_count(self) -> int:
        return sum(1 for op in self.ops if isinstance(op, (Add, Sub)))


def _op_refs(op: Op) -> tuple[int, ...]:
    if isinstance(op, Shift):
        return (op.src,)
    if isinstance(op, Neg):
        return (op.src,)
    if isinstance(op, (Add, Sub)):
        return (op.a, op.b)
    return ()


def emit(d: Decomposition) -> ShiftAddProgram:
    """Lower a decomposition to shift-add form, one layer per wiring step.

    Add/Sub count equals the decomposition's effective adds: a row with t
    nonzero terms costs t-1 of them.  Negation of a sole negative term is
    free wiring, not an add.
    """
    ops: list[Op] = [Load(i) for i in range(d.k)]
    zero_ref = -1

    def zero() -> int:
        nonlocal zero_ref
        if zero_ref < 0:
            ops.append(Zero())
            zero_ref = len(ops) - 1
        return zero_ref

    layer = [i if i < d.k else zero() for i in range(d.n)]
    for w in d.steps:
        next_layer = []
        for row in w.rows:
            shifted: list[tuple[int, int]] = []  # (ref, sign)
            for col, coeff in row.terms:
                if coeff.is_zero:
                    continue
                ref = layer[col]
                if coeff.exponent != 0:
                    ops.append(Shift(ref, coeff.exponent))
                    ref = len(ops) - 1
                shifted.append((ref, coeff.sign))
            if not shifted:
                next_layer.append(zero())
                continue
            if all(s < 0 for _, s in shifted):
                # combine magnitudes, negate once at the end
                acc = shifted[0][0]
                for ref, _ in shifted[1:]:
                    ops.append(Add(acc, ref))
                    acc = len(ops) - 1
                ops.append(Neg(acc))
                next_layer.append(len(ops) - 1)
                continue
            seed = next(i for i, (_, s) in enumerate(shifted) if s > 0)
            acc = shifted[seed][0]
            for i, (ref, sign) in enumerate(shifted):
                if i == seed:
                    continue
                ops.append(Add(acc, ref) if sign > 0 else Sub(acc, ref))
                acc = len(ops) - 1
            next_layer.append(acc)
        layer = next_layer
    return ShiftAddProgram(d.k, d.n, tuple(ops), tuple(layer))


def interpret(p: ShiftAddProgram, x) -> np.ndarray:
    """Evaluate the program over float64; shifts multiply by exact powers of
    two."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != p.n_inputs:
        raise DimensionError(f"input shape {x.shape} does not match {p.n_inputs}")
    vals = np.empty(len(p.ops))
    for i, op in enumerate(p.ops):
        if isinstance(op, Load):
            vals[i] = x[op.input_index]
        elif isinstance(op, Shift):
            vals[i] = math.ldexp(vals[op.src], op.amount)
        elif isinstance(op, Neg):
            vals[i] = -vals[op.src]
        elif isinstance(op, Add):
            vals[i] = vals[op.a] + vals[op.b]
        elif isinstance(op, Sub):
            vals[i] = vals[op.a] - vals[op.b]
        else:
            vals[i] = 0.0
    return np.array([vals[ref] for ref in p.outputs])


def export_text(p: ShiftAddProgram) -> str:
    """One line per op: ``v<i> = <mnemonic> <args>``; ops feeding program
    outputs carry ``; out <slot>...`` annotations."""
    slots: dict[int, list[int]] = {}
    for slot, ref in enumerate(p.outputs):
        slots.setdefault(ref, []).append(slot)
    lines = []
    for i, op in enumerate(p.ops):
        if isinstance(op, Load):
            body = f"load {op.input_index}"
        elif isinstance(op, Shift):
            body = f"shl v{op.src}, {op.amount}"
        elif isinstance(op, Neg):
            body = f"neg v{op.src}"
        elif isinstance(op, Add):
            body = f"add v{op.a}, v{op.b}"
        elif isinstance(op, Sub):
            body = f"sub v{op.a}, v{op.b}"
        else:
            body = "zero"
        line = f"v{i} = {body}"
        if i in slots:
            line += " ; out " + " ".join(str(s) for s in slots[i])
        lines.append(line)
    return "\n".join(lines) + "\n"


_LINE_RE = re.compile(
    r"^v(?P<idx>\d+) = (?P<body>[a-z]+[^;]*?)\s*(?:; out (?P<out>[\d ]+))?$"
)


def _parse_body(body: str, idx: int) -> Op:
    parts = body.split()
    kind = parts[0]
    try:
        if kind == "load":
            if len(parts) != 2:
                raise ProgramError(f"line {idx}: cannot parse {body!r}")
            return Load(int(parts[1]))
        if kind == "shl":
            m = re.fullmatch(r"shl v(\d+), (-?\d+)", body)
            return Shift(int(m.group(1)), int(m.group(2)))
        if kind == "neg":
            m = re.fullmatch(r"neg v(\d+)", body)
            return Neg(int(m.group(1)))
        if kind in ("add", "sub"):
            m = re.fullmatch(r"(?:add|sub) v(\d+), v(\d+)", body)
            cls = Add if kind == "add" else Sub
            return cls(int(m.group(1)), int(m.group(2)))
        if kind == "zero" and len(parts) == 1:
            return Zero()
    except (AttributeError, IndexError, ValueError) as exc:
        raise ProgramError(f"line {idx}: cannot parse {body!r}") from exc
    raise ProgramError(f"line {idx}: unknown op {body!r}")


def parse_text(text: str) -> ShiftAddProgram:
    """Inverse of :func:`export_text`."""
    ops: list[Op] = []
    out_slots: dict[int, int] = {}
    for lineno, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if m is None:
            raise ProgramError(f"line {lineno}: malformed {line!r}")
        idx = int(m.group("idx"))
        if idx != len(ops):
            raise ProgramError(f"line {lineno}: expected v{len(ops)}, got v{idx}")
        ops.append(_parse_body(m.group("body").strip(), lineno))
        if m.group("out"):
            for slot in m.group("out").split():
                s = int(slot)
                if s in out_slots:
                    raise ProgramError(f"line {lineno}: duplicate output slot {s}")
                out_slots[s] = idx
    n_outputs = len(out_slots)
    if sorted(out_slots) != list(range(n_outputs)):
        raise ProgramError(f"output slots {sorted(out_slots)} are not contiguous")
    outputs = tuple(out_slots[s] for s in range(n_outputs))
    n_inputs = sum(1 for op in ops if isinstance(op, Load))
    return ShiftAddProgram(n_inputs, n_outputs, tuple(ops), outputs)
