"""shiftadd: compress a constant matrix into a product of sparse factors with
power-of-two entries, then compute its matrix-vector product with shifts and
adds only."""

from .core import (
    CoeffSet,
    Decomposition,
    DenseMatrix,
    DimensionError,
    Pow2Coeff,
    WiringMatrix,
    WiringRow,
    apply,
    augmented_identity,
    identity_wiring,
    reconstruct,
    row_residual,
)
from .algorithms import (
    ENGINES,
    BudgetError,
    DriverConfig,
    InternalConsistencyError,
    SolverConfig,
    TraceRow,
    beam_row,
    decompose,
    dmp_row,
    exhaustive_row,
    wiring_step,
)
from .metrics import CostReport, Sqnr, cost, csd_quantize, sqnr
from .codegen import ShiftAddProgram, emit, export_text, interpret, parse_text
from .io import (
    FormatError,
    load_decomposition,
    load_matrix_csv,
    save_decomposition,
    save_matrix_csv,
)

__version__ = "0.1.0"

__all__ = [
    "CoeffSet",
    "Decomposition",
    "DenseMatrix",
    "DimensionError",
    "Pow2Coeff",
    "WiringMatrix",
    "WiringRow",
    "apply",
    "augmented_identity",
    "identity_wiring",
    "reconstruct",
    "row_residual",
    "ENGINES",
    "BudgetError",
    "DriverConfig",
    "InternalConsistencyError",
    "SolverConfig",
    "TraceRow",
    "beam_row",
    "decompose",
    "dmp_row",
    "exhaustive_row",
    "wiring_step",
    "CostReport",
    "Sqnr",
    "cost",
    "csd_quantize",
    "sqnr",
    "ShiftAddProgram",
    "emit",
    "export_text",
    "interpret",
    "parse_text",
    "FormatError",
    "load_decomposition",
    "load_matrix_csv",
    "save_decomposition",
    "save_matrix_csv",
    "__version__",
]
