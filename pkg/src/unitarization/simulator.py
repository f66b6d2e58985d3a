"""Circuit execution against registered oracles.

Two engines share one semantics:

* a dense statevector engine for totals up to the width cap (default 12
  qubits), used for full-matrix verification and cross-validation;
* the structured engine from :mod:`unitarization.structured`, exact at any
  width, which executes the deep orthogonalization circuits whose ancilla
  count far exceeds anything a dense vector can hold.

Oracles are black boxes with call counters. A state-controlled gate
(``EqualsOracleState``) is simulated through the operator identity
``V (|0><0| ⊗ P) V^-1 = |V0><V0| ⊗ P`` using the cached prepared state, which
is exactly the paper-style expansion without re-executing the oracle body.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .circuit import (
    PRIMARY,
    BasisSwap,
    Circuit,
    Controlled,
    DenseUnitary,
    EqualsBasis,
    EqualsOracleState,
    EqualsZero,
    Gate,
    NotEqualsZero,
    OracleCall,
    Predicate,
    RegisterLayout,
    SingleQubit,
)
from .config import DEFAULT, default_width_cap
from .errors import DimMismatch, TooWide, UnknownOracle
from .linalg import is_unitary
from .structured import (
    FrozenState,
    StructuredState,
    Term,
    basis_vector,
    expand_term,
    pair_overlap,
)

_SKIP_TOL = 1e-13


@dataclass
class Oracle:
    """A black-box unitary, backed by a dense matrix or by a circuit."""

    id: str
    width: int
    primary: int
    matrix: np.ndarray | None = None
    circuit: Circuit | None = None
    prepared_state: np.ndarray | None = None
    preparation_error: float = 0.0
    calls: int = 0

    @property
    def workspace(self) -> int:
        return self.width - self.primary

    @property
    def span(self) -> tuple[str, ...]:
        """Canonical register span for circuit-backed oracles."""
        if self.circuit is not None:
            return self.circuit.layout.register_names
        raise UnknownOracle(f"matrix oracle {self.id!r} has no canonical span")


def matrix_oracle(
    oracle_id: str,
    matrix: np.ndarray,
    primary: int,
    *,
    prepared_state: np.ndarray | None = None,
    preparation_error: float = 0.0,
    unitarity_tol: float = 1e-8,
) -> Oracle:
    matrix = np.asarray(matrix, dtype=complex)
    width = int(np.log2(matrix.shape[0]))
    if 1 << width != matrix.shape[0]:
        raise DimMismatch("oracle dimension must be a power of two")
    if not is_unitary(matrix, unitarity_tol):
        raise DimMismatch(f"oracle {oracle_id!r} is not unitary")
    if prepared_state is None and preparation_error == 0.0:
        column = matrix[:, 0].reshape(1 << primary, -1)
        prepared_state = column[:, 0].copy()
        if np.linalg.norm(column[:, 1:]) > 1e-8 or np.linalg.norm(prepared_state) < 0.5:
            prepared_state = None
    return Oracle(
        oracle_id,
        width,
        primary,
        matrix=matrix,
        prepared_state=prepared_state,
        preparation_error=preparation_error,
    )


def circuit_oracle(
    oracle_id: str,
    circuit: Circuit,
    *,
    prepared_state: np.ndarray | None = None,
    preparation_error: float = 0.0,
) -> Oracle:
    return Oracle(
        oracle_id,
        circuit.layout.total_width,
        circuit.layout.primary,
        circuit=circuit,
        prepared_state=prepared_state,
        preparation_error=preparation_error,
    )


@dataclass
class _Prep:
    """Cached prepared state of an oracle over a given span."""

    term: Term | None = None  # single product term (coeff folded in)
    frozen: FrozenState | None = None  # multi-term prepared state
    cross_mass: dict[str, float] = field(default_factory=dict)

    def bra_term(self, span: tuple[str, ...]) -> Term:
        if self.term is not None:
            return self.term
        return Term(1.0 + 0j, {span: self.frozen})

    @property
    def norm2(self) -> float:
        if self.frozen is not None:
            return self.frozen.norm2
        val = abs(self.term.coeff) ** 2
        for factor in self.term.factors.values():
            val *= float(np.linalg.norm(factor) ** 2)
        return val


class Simulator:
    """Oracle registry plus both execution engines."""

    def __init__(self, width_cap: int | None = None):
        self.width_cap = default_width_cap() if width_cap is None else width_cap
        self.oracles: dict[str, Oracle] = {}
        self._preps: dict[tuple[str, tuple[str, ...]], _Prep] = {}
        self._dense_oracles: dict[str, np.ndarray] = {}
        self._cross_mass: dict[tuple[str, str], float] = {}

    # --- registry -------------------------------------------------------------

    def register(self, oracle: Oracle) -> Oracle:
        if oracle.id in self.oracles:
            raise UnknownOracle(f"oracle id {oracle.id!r} already registered")
        self.oracles[oracle.id] = oracle
        return oracle

    def oracle(self, oracle_id: str) -> Oracle:
        try:
            return self.oracles[oracle_id]
        except KeyError:
            raise UnknownOracle(f"no oracle registered under {oracle_id!r}") from None

    # --- structured engine ------------------------------------------------------

    def run(
        self,
        circuit: Circuit,
        state: StructuredState | np.ndarray | int | None = None,
        *,
        counts: Counter | None = None,
    ) -> StructuredState:
        """Execute the circuit, returning the (exact) structured state."""
        if state is None:
            state = StructuredState.zero(circuit.layout)
        elif isinstance(state, (int, np.integer)):
            state = StructuredState.from_basis(circuit.layout, int(state))
        elif isinstance(state, np.ndarray):
            state = StructuredState.from_dense(circuit.layout, state)
        else:
            state = StructuredState(circuit.layout, [t.copy() for t in state.terms])
        terms = state.terms
        for idx, gate in enumerate(circuit.gates):
            terms = self._apply_gate(terms, gate, circuit.layout, counts, count=True)
            if self._should_merge(gate, idx, len(terms)):
                interim = StructuredState(circuit.layout, terms)
                interim.merge(self._merge_candidates(gate))
                terms = interim.terms
        state = StructuredState(circuit.layout, terms)
        state.merge()
        return state

    @staticmethod
    def _should_merge(gate: Gate, idx: int, n_terms: int) -> bool:
        if n_terms <= 1:
            return False
        if isinstance(gate, (Controlled, OracleCall)):
            return True
        return n_terms <= 64 or idx % 8 == 7

    @staticmethod
    def _merge_candidates(gate: Gate) -> list[str]:
        regs: list[str] = []
        if isinstance(gate, Controlled):
            if len(gate.predicate.registers) <= 2:
                regs.extend(gate.predicate.registers)
            inner = gate.gate
        else:
            inner = gate
        if isinstance(inner, (SingleQubit, BasisSwap, DenseUnitary)):
            regs.append(inner.register)
        elif isinstance(inner, OracleCall):
            # after a call the mergeable differences concentrate on primary
            regs.append(PRIMARY)
        return regs[:4]

    def _apply_gate(
        self,
        terms: list[Term],
        gate: Gate,
        layout: RegisterLayout,
        counts: Counter | None,
        count: bool,
    ) -> list[Term]:
        if isinstance(gate, Controlled):
            pred = gate.predicate
            if isinstance(pred, EqualsOracleState):
                if count:
                    self._tally(pred.oracle_id, counts)
                return self._apply_state_control(terms, pred, gate.gate, layout)
            if count and isinstance(gate.gate, OracleCall):
                self._tally(gate.gate.oracle_id, counts)
            out: list[Term] = []
            for term in terms:
                selected, unselected = self._split_predicate(term, pred, layout)
                out.extend(unselected)
                for sel in selected:
                    out.extend(self._apply_plain(sel, gate.gate, layout))
            return out
        if isinstance(gate, OracleCall) and count:
            self._tally(gate.oracle_id, counts)
        out = []
        for term in terms:
            out.extend(self._apply_plain(term, gate, layout))
        return out

    def _tally(self, oracle_id: str, counts: Counter | None):
        self.oracle(oracle_id).calls += 1
        if counts is not None:
            counts[oracle_id] += 1

    # --- plain gates ------------------------------------------------------------

    def _apply_plain(self, term: Term, gate: Gate, layout: RegisterLayout) -> list[Term]:
        if isinstance(gate, OracleCall):
            return self._apply_oracle(term, gate, layout)
        reg = gate.register
        prepared = self._free_register(term, reg, layout)
        out = []
        for t in prepared:
            vec = t.factors.get((reg,))
            t.pop_factor((reg,))
            t.set_factor((reg,), self._transform_vec(vec, gate, layout.width(reg)))
            out.append(t)
        return out

    def _free_register(self, term: Term, reg: str, layout: RegisterLayout) -> list[Term]:
        """Expand/reshape so that ``reg`` is held by a singleton plain factor."""
        key = term.key_for(reg)
        if key is None or key == (reg,):
            return [term]
        val = term.factors[key]
        if isinstance(val, FrozenState):
            expanded = expand_term(term, key)
            out = []
            for t in expanded:
                out.extend(self._free_register(t, reg, layout))
            return out
        # joint plain factor: split reg out by SVD (exact decomposition)
        dims = [1 << layout.width(r) for r in key]
        pos = key.index(reg)
        arr = val.reshape(dims)
        arr = np.moveaxis(arr, pos, 0).reshape(dims[pos], -1)
        u, s, vh = np.linalg.svd(arr, full_matrices=False)
        rest_key = tuple(r for r in key if r != reg)
        out = []
        for r in range(len(s)):
            if s[r] <= 1e-15 * s[0]:
                break
            t = term.copy()
            t.pop_factor(key)
            t.coeff *= s[r]
            t.set_factor((reg,), u[:, r].copy())
            rest = vh[r].copy()
            # vh rows keep the key order with reg removed
            t.set_factor(rest_key, rest)
            out.append(t)
        return out

    @staticmethod
    def _transform_vec(vec: np.ndarray | None, gate: Gate, width: int) -> np.ndarray:
        dim = 1 << width
        if isinstance(gate, BasisSwap):
            if vec is None:
                if gate.a == 0:
                    return basis_vector(dim, gate.b)
                if gate.b == 0:
                    return basis_vector(dim, gate.a)
                return basis_vector(dim, 0)
            new = vec.copy()
            new[gate.a], new[gate.b] = vec[gate.b], vec[gate.a]
            return new
        if vec is None:
            vec = basis_vector(dim, 0)
        if isinstance(gate, DenseUnitary):
            if gate.matrix.shape[0] != dim:
                raise DimMismatch("dense gate dimension mismatch")
            return gate.matrix @ vec
        if isinstance(gate, SingleQubit):
            pre = 1 << gate.qubit
            post = dim // (2 * pre)
            arr = vec.reshape(pre, 2, post)
            return np.einsum("ij,ajb->aib", gate.matrix, arr).reshape(-1)
        raise TypeError(f"cannot transform with {gate!r}")

    # --- predicates ---------------------------------------------------------------

    def _split_predicate(
        self, term: Term, pred: Predicate, layout: RegisterLayout
    ) -> tuple[list[Term], list[Term]]:
        """Exact decomposition into (selected, unselected) term lists."""
        regs = pred.registers
        if len(regs) == 1:
            reg = regs[0]
            prepared = self._free_register(term, reg, layout)
            if len(prepared) > 1:
                sel_all, unsel_all = [], []
                for t in prepared:
                    s, u = self._split_predicate(t, pred, layout)
                    sel_all.extend(s)
                    unsel_all.extend(u)
                return sel_all, unsel_all
            term = prepared[0]
            dim = 1 << layout.width(reg)
            vec = term.factors.get((reg,))
            if isinstance(pred, (EqualsBasis, EqualsZero)):
                value = pred.value if isinstance(pred, EqualsBasis) else 0
                amp = (1.0 + 0j if value == 0 else 0j) if vec is None else complex(vec[value])
                selected = []
                if amp != 0:
                    sel = term.copy()
                    sel.coeff *= amp
                    sel.pop_factor((reg,))
                    if value != 0:
                        sel.set_factor((reg,), basis_vector(dim, value))
                    selected.append(sel)
                unselected = []
                if vec is not None:
                    rest = vec.copy()
                    rest[value] = 0.0
                    if np.any(np.abs(rest) > 0):
                        uns = term.copy()
                        uns.pop_factor((reg,))
                        uns.set_factor((reg,), rest)
                        unselected.append(uns)
                elif value != 0:
                    unselected.append(term)
                return selected, unselected
            if isinstance(pred, NotEqualsZero):
                inverse = EqualsZero((reg,))
                unsel, sel = self._split_predicate(term, inverse, layout)
                return sel, unsel
            raise TypeError(f"predicate {pred!r} not handled here")
        # multi-register span: selected component is amplitude * basis product
        if isinstance(pred, (EqualsBasis, EqualsZero, NotEqualsZero)):
            value = pred.value if isinstance(pred, EqualsBasis) else 0
            indices = self._span_indices(regs, value, layout)
            amp = 1.0 + 0j
            prepared = [term]
            for reg in regs:
                nxt: list[Term] = []
                for t in prepared:
                    nxt.extend(self._free_register(t, reg, layout))
                prepared = nxt
            if len(prepared) > 1:
                sel_all, unsel_all = [], []
                for t in prepared:
                    s, u = self._split_predicate(t, pred, layout)
                    sel_all.extend(s)
                    unsel_all.extend(u)
                return sel_all, unsel_all
            term = prepared[0]
            for reg, idx in zip(regs, indices):
                vec = term.factors.get((reg,))
                amp *= (1.0 + 0j if idx == 0 else 0j) if vec is None else complex(vec[idx])
                if amp == 0:
                    break
            sel_term = None
            if amp != 0:
                sel_term = term.copy()
                sel_term.coeff *= amp
                for reg, idx in zip(regs, indices):
                    sel_term.pop_factor((reg,))
                    if idx != 0:
                        sel_term.set_factor((reg,), basis_vector(1 << layout.width(reg), idx))
            if isinstance(pred, NotEqualsZero):
                selected = [term]
                if sel_term is not None:
                    neg = sel_term.copy()
                    neg.coeff = -neg.coeff
                    selected.append(neg)
                    return selected, [sel_term]
                return selected, []
            selected = [sel_term] if sel_term is not None else []
            unselected = [term]
            if sel_term is not None:
                neg = sel_term.copy()
                neg.coeff = -neg.coeff
                unselected.append(neg)
            return selected, unselected
        raise TypeError(f"predicate {pred!r} not handled here")

    @staticmethod
    def _span_indices(regs: tuple[str, ...], value: int, layout: RegisterLayout) -> list[int]:
        widths = [layout.width(r) for r in regs]
        total = sum(widths)
        if value >= 1 << total:
            raise DimMismatch("basis value outside span")
        indices = []
        rem = value
        for width in reversed(widths):
            indices.append(rem & ((1 << width) - 1))
            rem >>= width
        return list(reversed(indices))

    # --- oracle calls ----------------------------------------------------------

    def prep(self, oracle_id: str, span: tuple[str, ...]) -> _Prep:
        """Cached prepared state of a circuit-backed oracle."""
        key = (oracle_id, span)
        cached = self._preps.get(key)
        if cached is not None:
            return cached
        oracle = self.oracle(oracle_id)
        if oracle.circuit is None:
            raise UnknownOracle(f"oracle {oracle_id!r} is not circuit-backed")
        if span != oracle.span:
            raise DimMismatch(
                f"circuit oracle {oracle_id!r} must be called on its own span"
            )
        prepared = self.run(oracle.circuit, counts=Counter())
        prepared.merge()
        prep = _Prep()
        if len(prepared.terms) == 1:
            prep.term = prepared.terms[0]
        else:
            prep.frozen = FrozenState(
                oracle_id,
                span,
                prepared,
                a0=prepared.zero_amplitude(),
                zero_slice=prepared.primary_zero_slice(),
                norm2=prepared.norm2(),
            )
        self._preps[key] = prep
        return prep

    def _apply_oracle(self, term: Term, gate: OracleCall, layout: RegisterLayout) -> list[Term]:
        oracle = self.oracle(gate.oracle_id)
        span = gate.registers
        if layout.span_width(span) != oracle.width:
            raise DimMismatch(f"oracle {oracle.id!r} span width mismatch")
        prep = self.prep(oracle.id, span) if oracle.circuit is not None else None
        touching = term.keys_touching(span)
        inside = all(all(r in span for r in k) for k in touching)
        if not gate.inverse:
            if not touching:
                return self._write_prepared(term, oracle, span, layout)
            return self._oracle_slow(term, gate, layout)
        # inverse call
        if prep is not None and prep.frozen is not None:
            val = term.factors.get(span)
            if val is prep.frozen:
                term.pop_factor(span)
                return [term]
        if touching and inside:
            bra = self._prep_bra(oracle, span, layout)
            ket = Term(1.0 + 0j, {k: v for k, v in term.factors.items() if k in touching})
            o = pair_overlap(bra, ket, layout)
            norm2 = float(np.real(pair_overlap(ket, ket, layout)))
            bra_norm2 = float(np.real(pair_overlap(bra, bra, layout)))
            resid = norm2 - (abs(o) ** 2) / max(bra_norm2, 1e-300)
            if resid <= _SKIP_TOL**2 * max(norm2, 1e-300):
                out = term.copy()
                for k in touching:
                    out.pop_factor(k)
                out.coeff *= o / bra_norm2
                return [out]
        return self._oracle_slow(term, gate, layout)

    def _prep_bra(self, oracle: Oracle, span: tuple[str, ...], layout: RegisterLayout) -> Term:
        if oracle.circuit is not None:
            return self.prep(oracle.id, span).bra_term(span)
        key = (oracle.id, span)
        cached = self._preps.get(key)
        if cached is None:
            cached = _Prep(term=self._separable_term(oracle.matrix[:, 0], span, layout))
            self._preps[key] = cached
        return cached.term

    def _separable_term(
        self, column: np.ndarray, span: tuple[str, ...], layout: RegisterLayout
    ) -> Term:
        """Greedy per-register factorization of a dense span vector."""
        term = Term(1.0 + 0j)
        regs = list(span)
        vec = column
        while len(regs) > 1:
            dim0 = 1 << layout.width(regs[0])
            arr = vec.reshape(dim0, -1)
            u, s, vh = np.linalg.svd(arr, full_matrices=False)
            if len(s) > 1 and s[1] > 1e-12 * s[0]:
                break
            factor = u[:, 0] * s[0]
            norm = np.linalg.norm(factor)
            pivot = int(np.argmax(np.abs(factor)))
            phase = factor[pivot] / abs(factor[pivot])
            term.coeff *= phase * norm
            if norm > 0 and abs(factor[0] / (phase * norm) - 1.0) > 1e-13 or np.any(
                np.abs(factor[1:]) > 1e-13 * norm
            ):
                term.set_factor((regs[0],), factor / (phase * norm))
            vec = vh[0]
            regs = regs[1:]
        if len(regs) == 1:
            norm = np.linalg.norm(vec)
            if abs(vec[0] - norm) > 1e-13 * max(norm, 1e-300) or np.any(
                np.abs(vec[1:]) > 1e-13 * max(norm, 1e-300)
            ):
                term.set_factor((regs[0],), vec.copy())
            else:
                term.coeff *= norm
        else:
            term.set_factor(tuple(regs), vec.copy())
        return term

    def _write_prepared(
        self, term: Term, oracle: Oracle, span: tuple[str, ...], layout: RegisterLayout
    ) -> list[Term]:
        if oracle.circuit is not None:
            prep = self.prep(oracle.id, span)
            out = term.copy()
            if prep.term is not None:
                out.coeff *= prep.term.coeff
                for k, v in prep.term.factors.items():
                    out.set_factor(k, v)
            else:
                out.set_factor(span, prep.frozen)
            return [out]
        bra = self._prep_bra(oracle, span, layout)
        out = term.copy()
        out.coeff *= bra.coeff
        for k, v in bra.factors.items():
            out.set_factor(k, v)
        return [out]

    def _oracle_slow(self, term: Term, gate: OracleCall, layout: RegisterLayout) -> list[Term]:
        oracle = self.oracle(gate.oracle_id)
        span = gate.registers
        if oracle.circuit is not None:
            gates = (
                oracle.circuit.inverse().gates if gate.inverse else oracle.circuit.gates
            )
            terms = [term]
            for g in gates:
                terms = self._apply_gate(terms, g, layout, None, count=False)
                interim = StructuredState(layout, terms)
                interim.merge(self._merge_candidates(g))
                terms = interim.terms
            return terms
        # dense matrix applied jointly over the span
        prepared = [term]
        for reg in span:
            nxt: list[Term] = []
            for t in prepared:
                nxt.extend(self._free_register(t, reg, layout))
            prepared = nxt
        out = []
        matrix = oracle.matrix.conj().T if gate.inverse else oracle.matrix
        for t in prepared:
            vec = np.array([1.0 + 0j])
            for reg in span:
                sub = t.pop_factor((reg,))
                if sub is None:
                    sub = basis_vector(1 << layout.width(reg), 0)
                vec = np.kron(vec, sub)
            new = matrix @ vec
            split = self._separable_term(new, span, layout)
            t.coeff *= split.coeff
            for k, v in split.factors.items():
                t.set_factor(k, v)
            out.append(t)
        return out

    # --- the state-controlled gadget ---------------------------------------------

    def _apply_state_control(
        self,
        terms: list[Term],
        pred: EqualsOracleState,
        inner: Gate,
        layout: RegisterLayout,
    ) -> list[Term]:
        oracle = self.oracle(pred.oracle_id)
        span = pred.registers
        if layout.span_width(span) != oracle.width:
            raise DimMismatch(f"oracle {oracle.id!r} control span width mismatch")
        bra = self._prep_bra(oracle, span, layout)
        bra_norm2 = float(np.real(pair_overlap(bra, bra, layout)))
        out: list[Term] = []
        scale = max((abs(t.coeff) for t in terms), default=0.0)
        for term in terms:
            out.extend(
                self._state_control_one(
                    term, oracle.id, bra, bra_norm2, span, inner, layout, scale
                )
            )
        return out

    def _state_control_one(
        self,
        term: Term,
        gadget_id: str,
        bra: Term,
        bra_norm2: float,
        span: tuple[str, ...],
        inner: Gate,
        layout: RegisterLayout,
        scale: float,
    ) -> list[Term]:
        touching = term.keys_touching(span)
        crossing = [k for k in touching if any(r not in span for r in k)]
        if crossing:
            mass = self._crossing_mass_bound(
                term, gadget_id, touching, crossing, bra, bra_norm2, span, layout
            )
            if mass <= _SKIP_TOL * max(scale, 1e-300):
                return [term]
            expanded = self._expand_crossing(term, crossing[0], layout)
            out = []
            for t in expanded:
                out.extend(
                    self._state_control_one(
                        t, gadget_id, bra, bra_norm2, span, inner, layout, scale
                    )
                )
            return out
        ket = Term(1.0 + 0j, {k: term.factors[k] for k in touching})
        o = pair_overlap(bra, ket, layout) / bra_norm2
        if abs(o * term.coeff) <= _SKIP_TOL * max(scale, 1e-300):
            return [term]
        rest = {k: v for k, v in term.factors.items() if k not in touching}
        sel = Term(term.coeff * o, dict(rest))
        sel.coeff *= bra.coeff
        for k, v in bra.factors.items():
            sel.set_factor(k, v)
        inner_applied = self._apply_plain(sel.copy(), inner, layout)
        if len(inner_applied) == 1 and self._terms_equal(inner_applied[0], sel, layout):
            return [term]
        neg = sel.copy()
        neg.coeff = -neg.coeff
        return [term, neg] + inner_applied

    def _crossing_mass_bound(
        self,
        term: Term,
        gadget_id: str,
        touching: list,
        crossing: list,
        bra: Term,
        bra_norm2: float,
        span: tuple[str, ...],
        layout: RegisterLayout,
    ) -> float:
        """Upper bound on the projected mass when a factor crosses the span."""
        # Common case: the only span-touching factor is one frozen prepared
        # state; its projected mass does not depend on the rest of the term.
        if len(touching) == 1 and touching == crossing:
            val = term.factors[touching[0]]
            if isinstance(val, FrozenState):
                key = (gadget_id, val.oracle_id)
                cached = self._cross_mass.get(key)
                if cached is None:
                    probe = Term(1.0 + 0j, {touching[0]: val})
                    cached = self._crossing_mass(probe, bra, bra_norm2, span, layout)
                    self._cross_mass[key] = cached
                return abs(term.coeff) * cached
        return self._crossing_mass(term, bra, bra_norm2, span, layout)

    def _crossing_mass(
        self, term: Term, bra: Term, bra_norm2: float, span: tuple[str, ...], layout
    ) -> float:
        # expand crossing frozen factors temporarily and sum |overlap| bounds
        total = 0.0
        stack = [term]
        budget = 4096
        while stack and budget > 0:
            t = stack.pop()
            budget -= 1
            crossing = [k for k in t.keys_touching(span) if any(r not in span for r in k)]
            if not crossing:
                touching = {k: v for k, v in t.factors.items() if any(r in span for r in k)}
                ket = Term(1.0 + 0j, dict(touching))
                o = pair_overlap(bra, ket, layout) / bra_norm2
                total += abs(t.coeff * o)
                continue
            key = crossing[0]
            val = t.factors[key]
            if isinstance(val, FrozenState):
                stack.extend(expand_term(t, key))
            else:
                stack.extend(self._expand_crossing(t, key, layout))
        if budget <= 0:
            return float("inf")
        return total

    def _expand_crossing(self, term: Term, key, layout: RegisterLayout) -> list[Term]:
        val = term.factors[key]
        if isinstance(val, FrozenState):
            return expand_term(term, key)
        # plain joint factor: SVD-split along the span boundary
        reg = key[0]
        return self._free_register(term, reg, layout)

    @staticmethod
    def _terms_equal(a: Term, b: Term, layout: RegisterLayout) -> bool:
        if a.factors.keys() != b.factors.keys():
            return False
        if abs(a.coeff - b.coeff) > 1e-15 * max(abs(a.coeff), abs(b.coeff), 1e-300):
            return False
        for k, va in a.factors.items():
            vb = b.factors[k]
            if isinstance(va, FrozenState) or isinstance(vb, FrozenState):
                if va is not vb:
                    return False
            elif va.shape != vb.shape or np.max(np.abs(va - vb)) > 1e-15:
                return False
        return True

    # --- dense engine -------------------------------------------------------------

    def dense_oracle_matrix(self, oracle_id: str) -> np.ndarray:
        cached = self._dense_oracles.get(oracle_id)
        if cached is not None:
            return cached
        oracle = self.oracle(oracle_id)
        if oracle.matrix is not None:
            matrix = oracle.matrix
        else:
            matrix = self.circuit_matrix(oracle.circuit)
        self._dense_oracles[oracle_id] = matrix
        return matrix

    def run_dense(self, circuit: Circuit, state: np.ndarray | None = None) -> np.ndarray:
        """Dense execution; state may be a vector or a (dim, batch) matrix."""
        layout = circuit.layout
        if layout.total_width > self.width_cap:
            raise TooWide(
                f"{layout.total_width} qubits exceeds the dense cap {self.width_cap}"
            )
        dim = 1 << layout.total_width
        if state is None:
            state = np.zeros(dim, dtype=complex)
            state[0] = 1.0
        state = np.asarray(state, dtype=complex)
        squeeze = state.ndim == 1
        if squeeze:
            state = state[:, None]
        if state.shape[0] != dim:
            raise DimMismatch("input dimension mismatch")
        dims = [1 << layout.width(r) for r in layout.register_names]
        batch = state.shape[1]
        arr = state.reshape(dims + [batch])
        for gate in circuit.gates:
            arr = _dense_apply(self, arr, gate, layout, dims, count=True)
        out = arr.reshape(dim, batch)
        return out[:, 0] if squeeze else out

    def circuit_matrix(self, circuit: Circuit) -> np.ndarray:
        dim = 1 << circuit.layout.total_width
        if circuit.layout.total_width > self.width_cap:
            raise TooWide(
                f"{circuit.layout.total_width} qubits exceeds the dense cap {self.width_cap}"
            )
        return self.run_dense(circuit, np.eye(dim, dtype=complex))

    # --- verification -------------------------------------------------------------

    def approximation_report(
        self, circuit: Circuit, target: np.ndarray, *, force_structured: bool = False
    ) -> dict:
        """Distance of the circuit to ``target ⊗ identity-on-|0...0> ancillas``.

        Reports the true operator-norm distance (sup over all primary inputs),
        the max over computational basis inputs, and per-input ancilla masses.
        """
        layout = circuit.layout
        n = layout.primary
        target = np.asarray(target, dtype=complex)
        if target.shape != (1 << n, 1 << n):
            raise DimMismatch("target unitary must act on the primary register")
        dim_n = 1 << n
        if not force_structured and layout.total_width <= self.width_cap:
            dim = 1 << layout.total_width
            anc_dim = dim // dim_n
            columns = np.zeros((dim, dim_n), dtype=complex)
            for a in range(dim_n):
                columns[a * anc_dim, a] = 1.0
            image = self.run_dense(circuit, columns)
            embedded = np.zeros((dim, dim_n), dtype=complex)
            embedded[::anc_dim, :] = target
            diff = image - embedded
            per_input = np.linalg.norm(diff, axis=0)
            sup = float(np.linalg.svd(diff, compute_uv=False)[0])
            masses = []
            for a in range(dim_n):
                col = image[:, a].reshape(dim_n, anc_dim)
                masses.append(float(1.0 - np.linalg.norm(col[:, 0]) ** 2))
        else:
            gram = np.zeros((dim_n, dim_n), dtype=complex)
            masses = []
            per_input = np.zeros(dim_n)
            for a in range(dim_n):
                state = self.run(circuit, a)
                zero_slice = state.primary_zero_slice()
                for b in range(dim_n):
                    gram[a, b] = np.vdot(zero_slice, target[:, b]).conjugate()
                masses.append(float(max(1.0 - np.linalg.norm(zero_slice) ** 2, 0.0)))
                per_input[a] = np.sqrt(max(2.0 - 2.0 * np.real(gram[a, a]), 0.0))
            herm = 2.0 * np.eye(dim_n) - gram - gram.conj().T
            sup = float(np.sqrt(max(np.max(np.linalg.eigvalsh(herm)), 0.0)))
        return {
            "operator_distance": sup,
            "basis_max_distance": float(np.max(per_input)),
            "per_input_distance": [float(x) for x in per_input],
            "ancilla_excited_mass": masses,
        }

    def approximation_distance(
        self, circuit: Circuit, target: np.ndarray, *, force_structured: bool = False
    ) -> float:
        report = self.approximation_report(
            circuit, target, force_structured=force_structured
        )
        return report["operator_distance"]


def _dense_apply(sim, arr, gate, layout, dims, count):
    names = list(layout.register_names)

    def axis(reg):
        return names.index(reg)

    if isinstance(gate, SingleQubit):
        ax = axis(gate.register)
        width = layout.width(gate.register)
        pre = 1 << gate.qubit
        post = (1 << width) // (2 * pre)
        moved = np.moveaxis(arr, ax, 0)
        shape = moved.shape
        work = moved.reshape(pre, 2, post, -1)
        work = np.einsum("ij,ajbc->aibc", gate.matrix, work)
        return np.moveaxis(work.reshape(shape), 0, ax)
    if isinstance(gate, DenseUnitary):
        ax = axis(gate.register)
        moved = np.moveaxis(arr, ax, 0)
        shape = moved.shape
        work = gate.matrix @ moved.reshape(shape[0], -1)
        return np.moveaxis(work.reshape(shape), 0, ax)
    if isinstance(gate, BasisSwap):
        ax = axis(gate.register)
        moved = np.moveaxis(arr, ax, 0)
        out = moved.copy()
        out[gate.a], out[gate.b] = moved[gate.b].copy(), moved[gate.a].copy()
        return np.moveaxis(out, 0, ax)
    if isinstance(gate, OracleCall):
        if count:
            sim._tally(gate.oracle_id, None)
        matrix = sim.dense_oracle_matrix(gate.oracle_id)
        if gate.inverse:
            matrix = matrix.conj().T
        return _dense_span_apply(arr, matrix, [axis(r) for r in gate.registers])
    if isinstance(gate, Controlled):
        pred = gate.predicate
        if isinstance(pred, EqualsOracleState):
            if count:
                sim._tally(pred.oracle_id, None)
            matrix = sim.dense_oracle_matrix(pred.oracle_id)
            axes = [axis(r) for r in pred.registers]
            arr = _dense_span_apply(arr, matrix.conj().T, axes)
            arr = _dense_controlled(sim, arr, EqualsZero(pred.registers), gate.gate, layout, dims)
            return _dense_span_apply(arr, matrix, axes)
        if count and isinstance(gate.gate, OracleCall):
            sim._tally(gate.gate.oracle_id, None)
        return _dense_controlled(sim, arr, pred, gate.gate, layout, dims)
    raise TypeError(f"unknown gate {gate!r}")


def _dense_span_apply(arr, matrix, axes):
    order = axes + [i for i in range(arr.ndim) if i not in axes]
    moved = np.transpose(arr, order)
    shape = moved.shape
    span_dim = int(np.prod(shape[: len(axes)]))
    work = matrix @ moved.reshape(span_dim, -1)
    moved = work.reshape(shape)
    inverse_order = np.argsort(order)
    return np.transpose(moved, inverse_order)


def _dense_controlled(sim, arr, pred, inner, layout, dims):
    names = list(layout.register_names)
    axes = [names.index(r) for r in pred.registers]
    order = axes + [i for i in range(arr.ndim) if i not in axes]
    moved = np.transpose(arr, order).copy()
    shape = moved.shape
    span_dim = int(np.prod(shape[: len(axes)]))
    work = moved.reshape(span_dim, *shape[len(axes):])
    if isinstance(pred, EqualsBasis):
        selected = [pred.value]
    elif isinstance(pred, EqualsZero):
        selected = [0]
    elif isinstance(pred, NotEqualsZero):
        selected = list(range(1, span_dim))
    else:
        raise TypeError(f"predicate {pred!r} not supported densely")
    if selected:
        sub = work[selected]
        # Build a reduced layout view: remaining axes keep their registers.
        remaining = [names[i] for i in order[len(axes):] if i < len(names)]
        sub_layout = _ReducedLayout(layout, remaining, len(selected))
        sub = _dense_apply(sim, sub, inner, sub_layout, None, count=False)
        work[selected] = sub
    moved = work.reshape(shape)
    inverse_order = np.argsort(order)
    return np.transpose(moved, inverse_order)


class _ReducedLayout:
    """Axis lookup for a controlled sub-array: leading axis is the selection."""

    def __init__(self, layout: RegisterLayout, remaining: list[str], lead: int):
        self._layout = layout
        self._names = ["\x00selection"] + remaining

    @property
    def register_names(self):
        return self._names

    def width(self, reg):
        return self._layout.width(reg)


def sample_measurement(
    state: np.ndarray, qubits: Sequence[int], rng: np.random.Generator | int
) -> tuple[tuple[int, ...], np.ndarray]:
    """Born-rule measurement of the listed qubits of a dense state.

    Qubit 0 is the most significant bit of the basis index. Returns the
    outcome bits and the collapsed, renormalized state. Deterministic for a
    given seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    state = np.asarray(state, dtype=complex)
    total = int(np.log2(state.shape[0]))
    if 1 << total != state.shape[0]:
        raise DimMismatch("state length must be a power of two")
    arr = state.reshape([2] * total).copy()
    outcome = []
    for q in qubits:
        probs = np.sum(np.abs(arr) ** 2, axis=tuple(i for i in range(total) if i != q))
        p1 = float(probs[1]) / float(probs.sum())
        bit = 1 if rng.random() < p1 else 0
        index = [slice(None)] * total
        index[q] = 1 - bit
        arr[tuple(index)] = 0.0
        norm = np.linalg.norm(arr)
        if norm > 0:
            arr = arr / norm
        outcome.append(bit)
    return tuple(outcome), arr.reshape(-1)
