"""Simulator: engine agreement, norm preservation, distances, sampling."""

import numpy as np
import pytest

from unitarization import (
    BasisSwap,
    Circuit,
    Controlled,
    DenseUnitary,
    DimMismatch,
    EqualsBasis,
    EqualsOracleState,
    EqualsZero,
    NotEqualsZero,
    OracleCall,
    RegisterLayout,
    SingleQubit,
    Simulator,
    StructuredState,
    TooWide,
    compose,
    controlled_on_oracle_state,
    matrix_oracle,
    sample_measurement,
)

from util import HADAMARD, preparation_oracle, random_circuit, random_state, random_unitary


def test_empty_circuit_keeps_input():
    layout = RegisterLayout(2, (("a", 1),))
    sim = Simulator()
    vec = random_state(np.random.default_rng(0), 8)
    out = sim.run_dense(Circuit(layout), vec)
    np.testing.assert_allclose(out, vec)


def test_single_hadamard():
    layout = RegisterLayout(1)
    circuit = Circuit(layout, (SingleQubit(HADAMARD, "primary", 0),))
    out = Simulator().run_dense(circuit)
    np.testing.assert_allclose(out, np.array([1, 1]) / np.sqrt(2), atol=1e-12)
    structured = Simulator().run(circuit)
    np.testing.assert_allclose(structured.dense(), out, atol=1e-12)


def test_structured_matches_dense_on_random_circuits():
    rng = np.random.default_rng(7)
    for trial in range(25):
        n = int(rng.integers(1, 3))
        blocks = tuple(
            (f"b{i}", int(rng.integers(1, 3))) for i in range(rng.integers(0, 3))
        )
        layout = RegisterLayout(n, blocks)
        if layout.total_width > 8:
            continue
        sim = Simulator()
        preparation_oracle(sim, "v", random_state(rng, 1 << n))
        circuit = random_circuit(rng, sim, layout, int(rng.integers(3, 12)))
        dense = sim.run_dense(circuit)
        structured = sim.run(circuit)
        np.testing.assert_allclose(structured.dense(), dense, atol=1e-9)
        assert abs(np.linalg.norm(dense) - 1.0) < 1e-10
        assert abs(structured.norm() - 1.0) < 1e-9


def test_run_preserves_norm_random_inputs():
    rng = np.random.default_rng(8)
    for _ in range(10):
        layout = RegisterLayout(2, (("a", 2), ("b", 1)))
        sim = Simulator()
        circuit = random_circuit(rng, sim, layout, 10)
        vec = random_state(rng, 1 << layout.total_width)
        out = sim.run_dense(circuit, vec)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-10


def test_circuit_matrix_identity_and_x():
    layout = RegisterLayout(1)
    sim = Simulator()
    identity = sim.circuit_matrix(Circuit(layout))
    np.testing.assert_allclose(identity, np.eye(2))
    x_gate = Circuit(layout, (BasisSwap(0, 1, "primary"),))
    np.testing.assert_allclose(sim.circuit_matrix(x_gate), np.array([[0, 1], [1, 0]]))


def test_circuit_matrix_composition_order():
    rng = np.random.default_rng(9)
    layout = RegisterLayout(2)
    a = Circuit(layout, (DenseUnitary(random_unitary(rng, 4), "primary"),))
    b = Circuit(layout, (DenseUnitary(random_unitary(rng, 4), "primary"),))
    sim = Simulator()
    lhs = sim.circuit_matrix(compose(a, b))
    rhs = sim.circuit_matrix(b) @ sim.circuit_matrix(a)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_circuit_matrix_width_cap():
    layout = RegisterLayout(13)
    with pytest.raises(TooWide):
        Simulator().circuit_matrix(Circuit(layout))


def test_compose_then_inverse_is_identity():
    rng = np.random.default_rng(10)
    for _ in range(8):
        layout = RegisterLayout(2, (("a", 1), ("b", 2)))
        sim = Simulator()
        preparation_oracle(sim, "v", random_state(rng, 4))
        circuit = random_circuit(rng, sim, layout, 8)
        round_trip = compose(circuit, circuit.inverse())
        matrix = sim.circuit_matrix(round_trip)
        np.testing.assert_allclose(matrix, np.eye(matrix.shape[0]), atol=1e-9)


def test_oracle_state_control_matches_expansion():
    rng = np.random.default_rng(11)
    for trial in range(6):
        layout = RegisterLayout(2, (("w", 1), ("t", 1)))
        sim = Simulator()
        psi = random_state(rng, 4)
        matrix = np.kron(_embed(psi), np.eye(2))
        oracle = matrix_oracle("v", matrix, 2)
        sim.register(oracle)
        span = ("primary", "w")
        inner = BasisSwap(0, 1, "t")
        first_class = Circuit(layout, (Controlled(EqualsOracleState("v", span), inner),))
        expanded = Circuit(layout, tuple(controlled_on_oracle_state("v", span, inner)))
        m1 = sim.circuit_matrix(first_class)
        m2 = sim.circuit_matrix(expanded)
        np.testing.assert_allclose(m1, m2, atol=1e-9)
        # structured engine agrees on a random input
        vec = random_state(rng, 1 << layout.total_width)
        np.testing.assert_allclose(
            sim.run(first_class, vec).dense(), sim.run_dense(expanded, vec), atol=1e-9
        )


def _embed(state):
    dim = state.shape[0]
    cols = [state]
    for j in range(dim):
        cand = np.zeros(dim, dtype=complex)
        cand[j] = 1.0
        for c in cols:
            cand = cand - np.vdot(c, cand) * c
        norm = np.linalg.norm(cand)
        if norm > 1e-9:
            cols.append(cand / norm)
    return np.stack(cols, axis=1)


def test_state_control_leaves_workspace_clean():
    # Exactly-preparing oracle: workspace returns to zero on every basis input.
    rng = np.random.default_rng(12)
    layout = RegisterLayout(2, (("w", 1), ("t", 1)))
    sim = Simulator()
    psi = random_state(rng, 4)
    sim.register(matrix_oracle("v", np.kron(_embed(psi), np.eye(2)), 2))
    gate = Controlled(EqualsOracleState("v", ("primary", "w")), BasisSwap(0, 1, "t"))
    circuit = Circuit(layout, (gate,))
    matrix = sim.circuit_matrix(circuit)
    dim = matrix.shape[0]
    for col in range(0, dim, 4):
        out = matrix[:, col].reshape(4, 2, 2)
        workspace_mass = np.linalg.norm(out[:, 1, :])
        assert workspace_mass < 1e-10


def test_oracle_counters_match_recount():
    layout = RegisterLayout(2, (("w", 1),))
    sim = Simulator()
    psi = random_state(np.random.default_rng(13), 4)
    sim.register(matrix_oracle("v", np.kron(_embed(psi), np.eye(2)), 2))
    gates = (
        OracleCall("v", ("primary", "w")),
        Controlled(NotEqualsZero(("w",)), OracleCall("v", ("primary", "w"), inverse=True)),
        Controlled(EqualsOracleState("v", ("primary", "w")), BasisSwap(0, 1, "w")),
    )
    circuit = Circuit(layout, gates)
    assert circuit.oracle_calls() == {"v": 3}
    from collections import Counter

    counts = Counter()
    sim.run(circuit, counts=counts)
    assert counts == {"v": 3}
    assert sim.oracle("v").calls == 3


def test_approximation_distance_exact_zero():
    rng = np.random.default_rng(14)
    layout = RegisterLayout(2, (("a", 1),))
    target = random_unitary(rng, 4)
    circuit = Circuit(layout, (DenseUnitary(target, "primary"),))
    sim = Simulator()
    assert sim.approximation_distance(circuit, target) < 1e-12
    # the structured path squares amplitudes, so its floor near zero is ~1e-8
    report = sim.approximation_report(circuit, target, force_structured=True)
    assert report["operator_distance"] < 1e-7


def test_approximation_distance_excited_ancilla():
    # u followed by a stray X on an ancilla: every output is orthogonal to the
    # target embedding, so the distance is sqrt(2) on every input.
    rng = np.random.default_rng(15)
    layout = RegisterLayout(2, (("a", 1),))
    target = random_unitary(rng, 4)
    circuit = Circuit(
        layout, (DenseUnitary(target, "primary"), BasisSwap(0, 1, "a"))
    )
    sim = Simulator()
    assert abs(sim.approximation_distance(circuit, target) - np.sqrt(2)) < 1e-9
    report = sim.approximation_report(circuit, target)
    assert all(m > 0.99 for m in report["ancilla_excited_mass"])


def test_approximation_distance_composition_bound():
    rng = np.random.default_rng(16)
    layout = RegisterLayout(2, (("a", 1),))
    sim = Simulator()
    for _ in range(10):
        u1, u2 = random_unitary(rng, 4), random_unitary(rng, 4)
        c1 = random_circuit(rng, sim, layout, 4)
        c2 = random_circuit(rng, sim, layout, 4)
        d1 = sim.approximation_distance(c1, u1)
        d2 = sim.approximation_distance(c2, u2)
        d = sim.approximation_distance(compose(c1, c2), u2 @ u1)
        assert d <= d1 + d2 + 1e-9


def test_structured_report_matches_dense():
    rng = np.random.default_rng(17)
    layout = RegisterLayout(2, (("a", 1), ("b", 1)))
    sim = Simulator()
    circuit = random_circuit(rng, sim, layout, 8)
    target = random_unitary(rng, 4)
    dense = sim.approximation_report(circuit, target)
    structured = sim.approximation_report(circuit, target, force_structured=True)
    assert abs(dense["operator_distance"] - structured["operator_distance"]) < 1e-8
    np.testing.assert_allclose(
        dense["per_input_distance"], structured["per_input_distance"], atol=1e-8
    )
    np.testing.assert_allclose(
        dense["ancilla_excited_mass"], structured["ancilla_excited_mass"], atol=1e-8
    )


def test_sample_measurement_deterministic_and_calibrated():
    state = np.array([1, 0], dtype=complex)
    bits, collapsed = sample_measurement(state, [0], 1)
    assert bits == (0,)
    np.testing.assert_allclose(collapsed, state)

    plus = np.array([1, 1], dtype=complex) / np.sqrt(2)
    ones = sum(sample_measurement(plus, [0], seed)[0][0] for seed in range(10_000))
    assert 0.485 <= ones / 10_000 <= 0.515

    bell = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    for seed in range(20):
        bits, collapsed = sample_measurement(bell, [1], seed)
        expected = np.zeros(4, dtype=complex)
        expected[3 if bits[0] else 0] = 1.0
        np.testing.assert_allclose(collapsed, expected, atol=1e-12)


def test_dense_input_requires_matching_dim():
    layout = RegisterLayout(2)
    with pytest.raises(DimMismatch):
        Simulator().run_dense(Circuit(layout), np.ones(3, dtype=complex))


def test_structured_from_dense_round_trip():
    rng = np.random.default_rng(18)
    layout = RegisterLayout(2, (("a", 2),))
    vec = random_state(rng, 1 << layout.total_width)
    state = StructuredState.from_dense(layout, vec)
    np.testing.assert_allclose(state.dense(), vec, atol=1e-12)
    assert abs(state.norm() - 1.0) < 1e-9
