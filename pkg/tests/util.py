"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from unitarization import (
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
    Simulator,
    matrix_oracle,
)

HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    z = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return z / np.linalg.norm(z)


def random_orthonormal(rng: np.random.Generator, dim: int, k: int) -> list[np.ndarray]:
    matrix = random_unitary(rng, dim)
    return [matrix[:, i] for i in range(k)]


def preparation_oracle(
    sim: Simulator, oracle_id: str, state: np.ndarray, *, rng=None
) -> "matrix_oracle":
    """Register a workspace-free oracle whose first column is ``state``."""
    dim = state.shape[0]
    matrix = _complete_columns(state, dim, rng)
    n = int(np.log2(dim))
    oracle = matrix_oracle(oracle_id, matrix, n, prepared_state=state)
    sim.register(oracle)
    return oracle


def _complete_columns(state: np.ndarray, dim: int, rng) -> np.ndarray:
    cols = [state]
    for j in range(dim):
        cand = np.zeros(dim, dtype=complex)
        cand[j] = 1.0
        for c in cols:
            cand = cand - np.vdot(c, cand) * c
        norm = np.linalg.norm(cand)
        if norm > 1e-9:
            cols.append(cand / norm)
        if len(cols) == dim:
            break
    return np.stack(cols, axis=1)


def random_circuit(
    rng: np.random.Generator, sim: Simulator, layout: RegisterLayout, n_gates: int
) -> Circuit:
    """Random circuit over the layout mixing every gate and predicate kind."""
    gates = []
    regs = list(layout.register_names)
    for _ in range(n_gates):
        kind = rng.integers(0, 5)
        reg = regs[rng.integers(0, len(regs))]
        width = layout.width(reg)
        dim = 1 << width
        if kind == 0:
            gate = SingleQubit(random_unitary(rng, 2), reg, int(rng.integers(0, width)))
        elif kind == 1:
            a, b = rng.integers(0, dim, size=2)
            gate = BasisSwap(int(a), int(b), reg)
        elif kind == 2:
            gate = DenseUnitary(random_unitary(rng, dim), reg)
        elif kind == 3 and sim.oracles:
            ids = sorted(sim.oracles)
            oid = ids[rng.integers(0, len(ids))]
            oracle = sim.oracle(oid)
            span = _span_for(layout, oracle.width, rng)
            if span is None:
                continue
            gate = OracleCall(oid, span, inverse=bool(rng.integers(0, 2)))
        else:
            gate = DenseUnitary(random_unitary(rng, dim), reg)
        if rng.random() < 0.4:
            ctrl = regs[rng.integers(0, len(regs))]
            if ctrl in _gate_regs(gate):
                gates.append(gate)
                continue
            cdim = 1 << layout.width(ctrl)
            roll = rng.integers(0, 3)
            if roll == 0:
                pred = EqualsBasis((ctrl,), int(rng.integers(0, cdim)))
            elif roll == 1:
                pred = EqualsZero((ctrl,))
            else:
                pred = NotEqualsZero((ctrl,))
            gate = Controlled(pred, gate)
        gates.append(gate)
    return Circuit(layout, tuple(gates))


def _gate_regs(gate):
    if isinstance(gate, OracleCall):
        return gate.registers
    return (gate.register,)


def _span_for(layout: RegisterLayout, width: int, rng) -> tuple[str, ...] | None:
    names = list(layout.register_names)
    for start in rng.permutation(len(names)):
        span = []
        total = 0
        for reg in names[start:]:
            span.append(reg)
            total += layout.width(reg)
            if total == width:
                return tuple(span)
            if total > width:
                break
    return None
