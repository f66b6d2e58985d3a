"""Build circuits that prepare the component of a state orthogonal to a basis.

Given an oracle V preparing psi and oracles U_i preparing orthonormal phi_i
with residual Delta >= delta, the orthogonalizer repeatedly prepares psi,
records (in superposition) which phi_i the register holds into a fresh
log2(k+1)-qubit block, re-prepares on the recorded branches, and finally
rotates the recorded blocks back to zero with a rotation R built from the
estimated components. l = ceil(4 ln(1/eps') / delta^2) rounds drive the
untracked amplitude below eps; the final state is within 2 alpha^l of
Phi((phi_i), psi) ⊗ |0...0>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    BasisSwap,
    Circuit,
    Controlled,
    EqualsBasis,
    EqualsOracleState,
    NotEqualsZero,
    OracleCall,
    RegisterLayout,
)
from .errors import EstimationFailure, InvalidDelta
from .estimation import (
    estimate_inner_product_robust,
    oracle_layout,
    oracle_span,
)
from .linalg import complete_unitary
from .simulator import Oracle, Simulator, matrix_oracle


@dataclass(frozen=True)
class ComponentEstimates:
    """Estimated components of psi along the basis plus the residual estimate.

    ``a[i]`` estimates <phi_i|psi>; ``c`` estimates Delta. The pair is kept
    normalized (sum |a_i|^2 + c^2 = 1), clamping c to zero and rescaling when
    raw estimates overshoot one. ``eps2`` bounds ||theta - psi|| for the unit
    vector theta the estimates describe, whenever the estimates are nice.
    """

    a: tuple[complex, ...]
    c: float
    eps1: float
    gamma: float
    eps2: float
    eta_inputs: float

    def __post_init__(self):
        total = sum(abs(x) ** 2 for x in self.a) + self.c**2
        if abs(total - 1.0) > 1e-10:
            raise EstimationFailure(f"component estimates are not unit ({total})")
        if self.c < 0:
            raise EstimationFailure("residual estimate must be non-negative")


def normalized_components(raw: list[complex]) -> tuple[tuple[complex, ...], float]:
    """C = sqrt(1 - sum |A|^2); when the sum exceeds one, set C = 0 and
    normalize the components instead."""
    total = float(sum(abs(x) ** 2 for x in raw))
    if total > 1.0:
        scale = 1.0 / math.sqrt(total)
        return tuple(x * scale for x in raw), 0.0
    return tuple(raw), math.sqrt(1.0 - total)


def eps2_bound(eta_plus_eps1: float, delta: float) -> float:
    """The reconstruction bound: min(4 s / delta, 2 sqrt(s)) when 2 s < delta^2,
    else 2 sqrt(s), for s = eta + eps1."""
    s = max(eta_plus_eps1, 0.0)
    loose = 2.0 * math.sqrt(s)
    if delta > 0 and 2.0 * s < delta * delta:
        return min(4.0 * s / delta, loose)
    return loose


@dataclass(frozen=True)
class RotationOracle:
    """Unitary on ceil(log2(k+1)) qubits whose first column is (C, A_1..A_k)."""

    oracle: Oracle
    column: np.ndarray


def rotation_width(k: int) -> int:
    return max(1, math.ceil(math.log2(k + 1)))


def build_rotation(
    sim: Simulator, est: ComponentEstimates, oracle_id: str
) -> RotationOracle:
    k = len(est.a)
    width = rotation_width(k)
    column = np.zeros(1 << width, dtype=complex)
    column[0] = est.c
    for i, value in enumerate(est.a):
        column[1 + i] = value
    matrix = complete_unitary([column], 1 << width)
    oracle = matrix_oracle(oracle_id, matrix, width, prepared_state=column)
    sim.register(oracle)
    return RotationOracle(oracle, column)


@dataclass
class OrthogonalizerBuild:
    """The built circuit plus the pieces tests and ledgers need."""

    circuit: Circuit
    rounds: int
    blocks: tuple[str, ...]
    sections: dict[str, Circuit]
    eta_bound: float
    oracle_calls: dict[str, int]


def round_count(eps: float, delta: float) -> int:
    """l = ceil(4 ln(1/eps') / delta^2) with eps' = min(eps, 1/4)."""
    if delta <= 0:
        raise InvalidDelta("delta must be positive")
    eps_prime = min(eps, 0.25)
    return math.ceil(4.0 * math.log(1.0 / eps_prime) / (delta * delta))


def build_orthogonalizer(
    sim: Simulator,
    v: Oracle,
    basis: list[Oracle],
    rotation: RotationOracle | None,
    eps: float,
    delta: float,
    *,
    prefix: str = "og",
    eps2: float = 0.0,
) -> OrthogonalizerBuild:
    """Construct the orthogonalizer circuit for psi (prepared by ``v``)
    against the orthonormal basis (prepared by ``basis``).

    With no basis the circuit is just a call to ``v``. Otherwise each of the
    l rounds costs one (controlled) call to ``v``, two calls to every basis
    oracle, and the cleanup one call to the rotation per round.
    """
    k = len(basis)
    if k == 0:
        layout = oracle_layout(v)
        circuit = Circuit(layout, (OracleCall(v.id, oracle_span(v)),))
        return OrthogonalizerBuild(
            circuit,
            rounds=0,
            blocks=(),
            sections={"a1": circuit, "a2": Circuit(layout), "a3": Circuit(layout), "a4": Circuit(layout)},
            eta_bound=v.preparation_error,
            oracle_calls=dict(circuit.oracle_calls()),
        )
    if rotation is None:
        raise InvalidDelta("a rotation oracle is required when the basis is non-empty")
    l = round_count(eps, delta)
    width = rotation_width(k)
    if rotation.oracle.width != width:
        raise InvalidDelta("rotation width does not match the basis size")
    blocks = tuple(f"{prefix}b{j}" for j in range(l))
    layout = oracle_layout(v)
    for oracle in basis:
        layout = layout.merged(oracle_layout(oracle))
    layout = layout.extended((name, width) for name in blocks)

    span_v = oracle_span(v)
    spans = [oracle_span(u) for u in basis]

    def step(j: int) -> list:
        gates = []
        if j == 0:
            gates.append(OracleCall(v.id, span_v))
        else:
            gates.append(
                Controlled(NotEqualsZero((blocks[j - 1],)), OracleCall(v.id, span_v))
            )
        for i, (u, span_u) in enumerate(zip(basis, spans), start=1):
            gates.append(
                Controlled(EqualsOracleState(u.id, span_u), BasisSwap(0, i, blocks[j]))
            )
            gates.append(
                Controlled(
                    EqualsBasis((blocks[j],), i), OracleCall(u.id, span_u, inverse=True)
                )
            )
        return gates

    a1 = step(0)
    a2 = [g for j in range(1, l) for g in step(j)]
    a3 = [
        Controlled(
            NotEqualsZero((blocks[j - 1],)),
            OracleCall(rotation.oracle.id, (blocks[j],), inverse=True),
        )
        for j in range(l - 1, 0, -1)
    ]
    a4 = [OracleCall(rotation.oracle.id, (blocks[0],), inverse=True)]
    circuit = Circuit(layout, tuple(a1 + a2 + a3 + a4))
    calls = dict(circuit.oracle_calls())
    eta_bound = (
        calls.get(v.id, 0) * v.preparation_error
        + sum(calls.get(u.id, 0) * u.preparation_error for u in basis)
        + calls.get(rotation.oracle.id, 0) * eps2
        + eps
    )
    return OrthogonalizerBuild(
        circuit,
        rounds=l,
        blocks=blocks,
        sections={
            "a1": Circuit(layout, tuple(a1)),
            "a2": Circuit(layout, tuple(a2)),
            "a3": Circuit(layout, tuple(a3)),
            "a4": Circuit(layout, tuple(a4)),
        },
        eta_bound=eta_bound,
        oracle_calls=calls,
    )


@dataclass(frozen=True)
class SkipReason:
    """The component's residual estimate fell below the caller's floor."""

    estimated_delta: float
    floor: float


@dataclass
class OrthogonalizeResult:
    estimates: ComponentEstimates
    build: OrthogonalizerBuild | None
    skip: SkipReason | None
    delta_bound: float

    @property
    def circuit(self) -> Circuit | None:
        return self.build.circuit if self.build else None


def approx_orthogonal_components(
    sim: Simulator,
    v: Oracle,
    basis: list[Oracle],
    eps1: float,
    gamma: float,
    eps3: float,
    delta_floor: float,
    mode: str = "exact",
    seed: int = 0,
    *,
    prefix: str = "og",
    rotation_id: str | None = None,
) -> OrthogonalizeResult:
    """Estimate the components of psi along the basis states, then build the
    orthogonalizer unless the residual estimate is below ``delta_floor``.

    Each component is estimated within eta_i + eps1/k with probability at
    least 1 - gamma/k (union bound: all of them with probability 1 - gamma).
    """
    k = len(basis)
    raw: list[complex] = []
    for i, u in enumerate(basis):
        est = estimate_inner_product_robust(
            sim, v, u, eps1 / max(k, 1), gamma / max(k, 1), mode, seed=seed + i
        )
        raw.append(est.value)
    a, c = normalized_components(raw)
    eta = sum(u.preparation_error for u in basis)
    est_err = eps2_bound(eta + eps1, max(delta_floor, 1e-12))
    delta_bound = max(delta_floor, c - est_err)
    eps2 = eps2_bound(eta + eps1, delta_bound)
    delta_bound = max(delta_bound, c - eps2)
    estimates = ComponentEstimates(a, c, eps1, gamma, eps2, eta)
    if c < delta_floor:
        return OrthogonalizeResult(estimates, None, SkipReason(c, delta_floor), delta_bound)
    if k == 0:
        build = build_orthogonalizer(sim, v, [], None, eps3, max(delta_bound, 1.0), prefix=prefix)
        return OrthogonalizeResult(estimates, build, None, 1.0)
    rotation = build_rotation(
        sim, estimates, rotation_id if rotation_id is not None else f"{prefix}.rot"
    )
    build = build_orthogonalizer(
        sim, v, basis, rotation, eps3, delta_bound, prefix=prefix, eps2=eps2
    )
    return OrthogonalizeResult(estimates, build, None, delta_bound)


def staircase_states(
    layout: RegisterLayout,
    blocks: tuple[str, ...],
    phi: np.ndarray,
    theta: np.ndarray,
    beta: float,
    *,
    frontier_primary: np.ndarray,
) -> "StructuredState":
    """The analytic pre-cleanup state: beta sum_i alpha^i |phi>|theta^i 0..>
    plus alpha^l |frontier>|theta^l>; used to check the section identities."""
    from .structured import StructuredState

    alpha = math.sqrt(max(1.0 - beta * beta, 0.0))
    l = len(blocks)
    spec = []
    for i in range(l):
        factors = {"primary": phi}
        for j in range(i):
            factors[blocks[j]] = theta
        spec.append((beta * alpha**i, factors))
    factors = {"primary": frontier_primary}
    for j in range(l):
        factors[blocks[j]] = theta
    spec.append((alpha**l, factors))
    return StructuredState.from_terms(layout, spec)
