"""Gate-level circuit representation.

Registers are named: the primary register is always ``"primary"``; ancilla
blocks carry unique names so that composition can merge workspace by name.
Gates act on whole named registers, which keeps nested circuits (used as
oracles) addressable after composition.

Size convention: every listed gate costs 1 (an oracle call, a controlled
gate, a basis swap, a dense gate each count once; single-qubit width factors
are suppressed). Oracle-call counts are recomputed from the gate list; a
state-controlled gate (``EqualsOracleState``) counts as one call to its
oracle, while :func:`controlled_on_oracle_state` expands it to the explicit
inverse/controlled/forward triple which recounts as two.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .errors import DimMismatch, LayoutMismatch
from .linalg import is_unitary

PRIMARY = "primary"


@dataclass(frozen=True)
class RegisterLayout:
    """Primary register width plus ordered named ancilla blocks."""

    primary: int
    blocks: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if self.primary <= 0:
            raise LayoutMismatch("primary width must be positive")
        names = [name for name, _ in self.blocks]
        if len(set(names)) != len(names):
            raise LayoutMismatch("ancilla block names must be unique")
        if PRIMARY in names:
            raise LayoutMismatch(f"'{PRIMARY}' is reserved")
        if any(width <= 0 for _, width in self.blocks):
            raise LayoutMismatch("block widths must be positive")

    @property
    def register_names(self) -> tuple[str, ...]:
        return (PRIMARY,) + tuple(name for name, _ in self.blocks)

    def width(self, register: str) -> int:
        if register == PRIMARY:
            return self.primary
        for name, width in self.blocks:
            if name == register:
                return width
        raise LayoutMismatch(f"unknown register {register!r}")

    def span_width(self, registers: Iterable[str]) -> int:
        return sum(self.width(r) for r in registers)

    @property
    def total_width(self) -> int:
        return self.primary + sum(width for _, width in self.blocks)

    def merged(self, other: "RegisterLayout") -> "RegisterLayout":
        """Union of ancilla blocks (max width per name); primary must agree."""
        if self.primary != other.primary:
            raise LayoutMismatch(
                f"primary widths differ: {self.primary} vs {other.primary}"
            )
        widths = dict(self.blocks)
        order = [name for name, _ in self.blocks]
        for name, width in other.blocks:
            if name in widths:
                widths[name] = max(widths[name], width)
            else:
                widths[name] = width
                order.append(name)
        return RegisterLayout(self.primary, tuple((n, widths[n]) for n in order))

    def extended(self, blocks: Iterable[tuple[str, int]]) -> "RegisterLayout":
        layout = self
        for name, width in blocks:
            layout = layout.merged(RegisterLayout(self.primary, ((name, width),)))
        return layout


# --- control predicates -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class EqualsBasis:
    """Fires when the span holds exactly computational basis state ``value``."""

    registers: tuple[str, ...]
    value: int


@dataclass(frozen=True, eq=False)
class EqualsZero:
    """Fires when the span is the all-zero basis state (the M0 control)."""

    registers: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class NotEqualsZero:
    """Fires when the span is not all-zero (the OR control)."""

    registers: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class EqualsOracleState:
    """Fires on the state the oracle prepares from zeros (the M_psi control).

    Equivalent to conjugating an ``EqualsZero`` control by the oracle;
    counts as one call to the oracle.
    """

    oracle_id: str
    registers: tuple[str, ...]


Predicate = Union[EqualsBasis, EqualsZero, NotEqualsZero, EqualsOracleState]


# --- gates -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SingleQubit:
    matrix: np.ndarray
    register: str
    qubit: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise DimMismatch("single-qubit gate must be 2x2")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True, eq=False)
class BasisSwap:
    """Swap computational basis states ``a`` and ``b`` of one register (P gates)."""

    a: int
    b: int
    register: str


@dataclass(frozen=True, eq=False)
class DenseUnitary:
    matrix: np.ndarray
    register: str

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimMismatch("dense gate must be square")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True, eq=False)
class OracleCall:
    oracle_id: str
    registers: tuple[str, ...]
    inverse: bool = False


@dataclass(frozen=True, eq=False)
class Controlled:
    predicate: Predicate
    gate: "Gate"

    def __post_init__(self):
        if isinstance(self.gate, Controlled):
            raise LayoutMismatch("nested controls are not supported")


Gate = Union[SingleQubit, BasisSwap, DenseUnitary, OracleCall, Controlled]


def invert_gate(gate: Gate) -> Gate:
    if isinstance(gate, SingleQubit):
        return SingleQubit(gate.matrix.conj().T, gate.register, gate.qubit)
    if isinstance(gate, BasisSwap):
        return gate
    if isinstance(gate, DenseUnitary):
        return DenseUnitary(gate.matrix.conj().T, gate.register)
    if isinstance(gate, OracleCall):
        return OracleCall(gate.oracle_id, gate.registers, not gate.inverse)
    if isinstance(gate, Controlled):
        return Controlled(gate.predicate, invert_gate(gate.gate))
    raise TypeError(f"unknown gate {gate!r}")


def gate_registers(gate: Gate) -> tuple[str, ...]:
    """Registers a gate touches (controls included)."""
    if isinstance(gate, (SingleQubit, BasisSwap, DenseUnitary)):
        return (gate.register,)
    if isinstance(gate, OracleCall):
        return gate.registers
    if isinstance(gate, Controlled):
        return tuple(gate.predicate.registers) + gate_registers(gate.gate)
    raise TypeError(f"unknown gate {gate!r}")


def _count_calls(gates: Iterable[Gate]) -> Counter:
    counts: Counter = Counter()
    for gate in gates:
        if isinstance(gate, OracleCall):
            counts[gate.oracle_id] += 1
        elif isinstance(gate, Controlled):
            if isinstance(gate.predicate, EqualsOracleState):
                counts[gate.predicate.oracle_id] += 1
            if isinstance(gate.gate, OracleCall):
                counts[gate.gate.oracle_id] += 1
    return counts


@dataclass(frozen=True)
class Circuit:
    """Immutable ordered gate list over a register layout."""

    layout: RegisterLayout
    gates: tuple[Gate, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for gate in self.gates:
            for reg in gate_registers(gate):
                self.layout.width(reg)

    @property
    def size(self) -> int:
        return len(self.gates)

    def oracle_calls(self) -> Counter:
        """Static per-oracle call counts recomputed from the gate list."""
        return _count_calls(self.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.layout, tuple(invert_gate(g) for g in reversed(self.gates)))

    def to_json(self) -> dict:
        return {
            "layout": {
                "primary": self.layout.primary,
                "blocks": [[name, width] for name, width in self.layout.blocks],
            },
            "gates": [gate_to_json(g) for g in self.gates],
        }

    @staticmethod
    def from_json(data: dict) -> "Circuit":
        layout = RegisterLayout(
            data["layout"]["primary"],
            tuple((name, width) for name, width in data["layout"]["blocks"]),
        )
        return Circuit(layout, tuple(gate_from_json(g) for g in data["gates"]))


def compose(a: Circuit, b: Circuit) -> Circuit:
    """Circuit applying ``a`` then ``b``; sizes and call counts add."""
    return Circuit(a.layout.merged(b.layout), a.gates + b.gates)


def empty(layout: RegisterLayout) -> Circuit:
    return Circuit(layout)


def controlled_on_oracle_state(
    oracle_id: str, registers: tuple[str, ...], inner: Gate
) -> list[Gate]:
    """Explicit expansion of the state-controlled gate: V^-1, M0-controlled
    inner, V over the oracle's span."""
    return [
        OracleCall(oracle_id, registers, inverse=True),
        Controlled(EqualsZero(registers), inner),
        OracleCall(oracle_id, registers, inverse=False),
    ]


# --- JSON encoding -----------------------------------------------------------


def matrix_to_json(matrix: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in matrix]


def matrix_from_json(data: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data])


def _predicate_to_json(pred: Predicate) -> dict:
    if isinstance(pred, EqualsBasis):
        return {"kind": "equals_basis", "registers": list(pred.registers), "value": pred.value}
    if isinstance(pred, EqualsZero):
        return {"kind": "equals_zero", "registers": list(pred.registers)}
    if isinstance(pred, NotEqualsZero):
        return {"kind": "not_equals_zero", "registers": list(pred.registers)}
    if isinstance(pred, EqualsOracleState):
        return {
            "kind": "equals_oracle_state",
            "oracle": pred.oracle_id,
            "registers": list(pred.registers),
        }
    raise TypeError(f"unknown predicate {pred!r}")


def _predicate_from_json(data: dict) -> Predicate:
    kind = data["kind"]
    regs = tuple(data["registers"])
    if kind == "equals_basis":
        return EqualsBasis(regs, int(data["value"]))
    if kind == "equals_zero":
        return EqualsZero(regs)
    if kind == "not_equals_zero":
        return NotEqualsZero(regs)
    if kind == "equals_oracle_state":
        return EqualsOracleState(data["oracle"], regs)
    raise ValueError(f"unknown predicate kind {kind!r}")


def gate_to_json(gate: Gate) -> dict:
    if isinstance(gate, SingleQubit):
        return {
            "kind": "single",
            "register": gate.register,
            "qubit": gate.qubit,
            "matrix": matrix_to_json(gate.matrix),
        }
    if isinstance(gate, BasisSwap):
        return {"kind": "basis_swap", "register": gate.register, "a": gate.a, "b": gate.b}
    if isinstance(gate, DenseUnitary):
        return {"kind": "dense", "register": gate.register, "matrix": matrix_to_json(gate.matrix)}
    if isinstance(gate, OracleCall):
        return {
            "kind": "oracle",
            "oracle": gate.oracle_id,
            "registers": list(gate.registers),
            "inverse": gate.inverse,
        }
    if isinstance(gate, Controlled):
        return {
            "kind": "controlled",
            "predicate": _predicate_to_json(gate.predicate),
            "gate": gate_to_json(gate.gate),
        }
    raise TypeError(f"unknown gate {gate!r}")


def gate_from_json(data: dict) -> Gate:
    kind = data["kind"]
    if kind == "single":
        return SingleQubit(matrix_from_json(data["matrix"]), data["register"], data["qubit"])
    if kind == "basis_swap":
        return BasisSwap(int(data["a"]), int(data["b"]), data["register"])
    if kind == "dense":
        return DenseUnitary(matrix_from_json(data["matrix"]), data["register"])
    if kind == "oracle":
        return OracleCall(data["oracle"], tuple(data["registers"]), bool(data["inverse"]))
    if kind == "controlled":
        return Controlled(_predicate_from_json(data["predicate"]), gate_from_json(data["gate"]))
    raise ValueError(f"unknown gate kind {kind!r}")


def validate_gate_dims(circuit: Circuit, oracle_widths: dict[str, int] | None = None) -> None:
    """Check matrix dimensions against register widths (and oracle spans)."""
    layout = circuit.layout

    def check(gate: Gate) -> None:
        if isinstance(gate, SingleQubit):
            if not 0 <= gate.qubit < layout.width(gate.register):
                raise DimMismatch("single-qubit target outside register")
            if not is_unitary(gate.matrix, 1e-8):
                raise DimMismatch("single-qubit gate not unitary")
        elif isinstance(gate, BasisSwap):
            dim = 1 << layout.width(gate.register)
            if not (0 <= gate.a < dim and 0 <= gate.b < dim):
                raise DimMismatch("basis swap index outside register")
        elif isinstance(gate, DenseUnitary):
            if gate.matrix.shape[0] != 1 << layout.width(gate.register):
                raise DimMismatch("dense gate dimension mismatch")
            if not is_unitary(gate.matrix, 1e-8):
                raise DimMismatch("dense gate not unitary")
        elif isinstance(gate, OracleCall):
            if oracle_widths is not None:
                expected = oracle_widths.get(gate.oracle_id)
                if expected is not None and layout.span_width(gate.registers) != expected:
                    raise DimMismatch(
                        f"oracle {gate.oracle_id!r} span width mismatch"
                    )
        elif isinstance(gate, Controlled):
            check(gate.gate)

    for gate in circuit.gates:
        check(gate)
