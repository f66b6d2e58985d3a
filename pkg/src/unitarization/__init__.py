"""Unitarization: synthesize one garbage-free circuit from k state oracles."""

from .circuit import (
    PRIMARY,
    BasisSwap,
    Circuit,
    Controlled,
    DenseUnitary,
    EqualsBasis,
    EqualsOracleState,
    EqualsZero,
    NotEqualsZero,
    OracleCall,
    RegisterLayout,
    SingleQubit,
    compose,
    controlled_on_oracle_state,
)
from .errors import (
    BudgetExceeded,
    DegenerateVector,
    DimMismatch,
    EstimationFailure,
    InvalidDelta,
    LayoutMismatch,
    NonOrthogonalInput,
    TooWide,
    UnknownOracle,
)
from .linalg import complete_unitary, gram_schmidt, orthogonal_component
from .simulator import Oracle, Simulator, circuit_oracle, matrix_oracle, sample_measurement
from .structured import StructuredState

__all__ = [
    "PRIMARY",
    "BasisSwap",
    "BudgetExceeded",
    "Circuit",
    "Controlled",
    "DegenerateVector",
    "DenseUnitary",
    "DimMismatch",
    "EqualsBasis",
    "EqualsOracleState",
    "EqualsZero",
    "EstimationFailure",
    "InvalidDelta",
    "LayoutMismatch",
    "NonOrthogonalInput",
    "NotEqualsZero",
    "Oracle",
    "OracleCall",
    "RegisterLayout",
    "Simulator",
    "SingleQubit",
    "StructuredState",
    "TooWide",
    "UnknownOracle",
    "circuit_oracle",
    "complete_unitary",
    "compose",
    "controlled_on_oracle_state",
    "gram_schmidt",
    "matrix_oracle",
    "orthogonal_component",
    "sample_measurement",
]
