"""Exact structured statevector: a sum of product terms over named registers.

A term is a coefficient times one factor per register (absent factor means
|0>). Factors are usually single-register vectors; a factor may also span a
register tuple jointly (after an entangling oracle application), or be a
frozen reference to an oracle's prepared state over that oracle's whole span.
Controls split terms exactly; a merge pass recombines terms that differ in at
most one factor. The representation is exact for any circuit; it is compact
for the circuits this library builds, whose states stay close to sums of a
few hundred product terms regardless of total register width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .circuit import PRIMARY, RegisterLayout
from .config import DEFAULT
from .errors import DimMismatch

SNAP_TOL = 1e-12


@dataclass
class FrozenState:
    """Cached oracle-prepared state used as an opaque factor over its span."""

    oracle_id: str
    span: tuple[str, ...]
    state: "StructuredState"
    a0: complex = 0.0
    zero_slice: np.ndarray | None = None
    norm2: float = 1.0


FactorKey = tuple[str, ...]


class Term:
    """One product term: coefficient times per-register (or joint) factors.

    Factor arrays are replaced, never mutated, so caches keyed by array
    identity stay valid. ``joints`` tracks registers covered by multi-register
    or frozen factors, keeping single-register lookups O(1).
    """

    __slots__ = ("coeff", "factors", "joints", "canon")

    def __init__(self, coeff: complex, factors: dict | None = None, canon: dict | None = None):
        self.coeff = complex(coeff)
        self.factors: dict[FactorKey, object] = {}
        self.joints: set[str] = set()
        self.canon: dict[FactorKey, tuple] = {} if canon is None else dict(canon)
        if factors:
            for key, val in factors.items():
                self.set_factor(key, val)

    def copy(self) -> "Term":
        term = Term(self.coeff)
        term.factors = dict(self.factors)
        term.joints = set(self.joints)
        term.canon = dict(self.canon)
        return term

    def set_factor(self, key: FactorKey, val) -> None:
        self.factors[key] = val
        if len(key) > 1 or isinstance(val, FrozenState):
            self.joints.update(key)

    def pop_factor(self, key: FactorKey):
        val = self.factors.pop(key, None)
        self.canon.pop(key, None)
        if val is not None and (len(key) > 1 or isinstance(val, FrozenState)):
            self.joints.difference_update(key)
        return val

    def key_for(self, reg: str) -> FactorKey | None:
        """The factor key covering ``reg``, or None when it is default |0>."""
        if (reg,) in self.factors:
            return (reg,)
        if reg in self.joints:
            for key in self.factors:
                if reg in key:
                    return key
        return None

    def keys_touching(self, span: Sequence[str]) -> list[FactorKey]:
        if len(span) < len(self.factors):
            seen: list[FactorKey] = []
            for reg in span:
                key = self.key_for(reg)
                if key is not None and key not in seen:
                    seen.append(key)
            return seen
        span_set = set(span)
        return [k for k in self.factors if not span_set.isdisjoint(k)]

    def reg_map(self) -> dict[str, FactorKey]:
        out = {}
        for key in self.factors:
            for reg in key:
                out[reg] = key
        return out

    def __repr__(self):
        return f"Term({self.coeff!r}, keys={sorted(self.factors)})"


def basis_vector(dim: int, index: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=complex)
    vec[index] = 1.0
    return vec


def _vdot_default(a: np.ndarray | None, b: np.ndarray | None) -> complex:
    if a is None and b is None:
        return 1.0 + 0j
    if a is None:
        return complex(b[0])
    if b is None:
        return complex(np.conj(a[0]))
    return complex(np.vdot(a, b))


class _NeedExpand(Exception):
    def __init__(self, side: int, key: FactorKey):
        self.side = side
        self.key = key


def expand_term(term: Term, key: FactorKey) -> list[Term]:
    """Replace a frozen factor by the explicit terms of its state."""
    frozen = term.factors[key]
    assert isinstance(frozen, FrozenState)
    out = []
    for sub in frozen.state.terms:
        new = term.copy()
        new.pop_factor(key)
        new.coeff *= sub.coeff
        for sk, sv in sub.factors.items():
            new.set_factor(sk, sv)
        out.append(new)
    return out


def _materialize(term: Term, regs: Sequence[str], layout: RegisterLayout) -> np.ndarray:
    """Dense vector of the term's factors over ``regs`` (in that order).

    All factors touching ``regs`` must be plain arrays fully inside ``regs``.
    """
    vec = np.array([1.0 + 0j])
    order: list[str] = []
    covered = set()
    for reg in regs:
        if reg in covered:
            continue
        key = term.key_for(reg)
        if key is None:
            vec = np.kron(vec, basis_vector(1 << layout.width(reg), 0))
            order.append(reg)
            covered.add(reg)
        else:
            val = term.factors[key]
            if isinstance(val, FrozenState):
                raise _NeedExpand(0, key)
            if any(r not in regs for r in key):
                raise _NeedExpand(0, key)
            vec = np.kron(vec, val)
            order.extend(key)
            covered.update(key)
    if tuple(order) != tuple(regs):
        dims = [1 << layout.width(r) for r in order]
        perm = [order.index(r) for r in regs]
        vec = vec.reshape(dims).transpose(perm).reshape(-1)
    return vec


def pair_overlap(ta: Term, tb: Term, layout: RegisterLayout) -> complex:
    """<ta|tb> including coefficients."""
    try:
        return _pair_overlap_inner(ta, tb, layout)
    except _NeedExpand as need:
        if need.side == 0:
            return sum(pair_overlap(t, tb, layout) for t in expand_term(ta, need.key))
        return sum(pair_overlap(ta, t, layout) for t in expand_term(tb, need.key))


def _pair_overlap_inner(ta: Term, tb: Term, layout: RegisterLayout) -> complex:
    total = np.conj(ta.coeff) * tb.coeff
    if total == 0:
        return 0j
    ra, rb = ta.reg_map(), tb.reg_map()
    done: set[str] = set()
    for reg in list(ra) + list(rb):
        if reg in done:
            continue
        cluster = {reg}
        frontier = [reg]
        while frontier:
            r = frontier.pop()
            for m in (ra, rb):
                key = m.get(r)
                if key:
                    for r2 in key:
                        if r2 not in cluster:
                            cluster.add(r2)
                            frontier.append(r2)
        done |= cluster
        total *= _cluster_overlap(ta, tb, cluster, ra, rb, layout)
        if total == 0:
            return 0j
    return complex(total)


def _cluster_overlap(
    ta: Term,
    tb: Term,
    cluster: set[str],
    ra: dict,
    rb: dict,
    layout: RegisterLayout,
) -> complex:
    keys_a = {ra[r] for r in cluster if r in ra}
    keys_b = {rb[r] for r in cluster if r in rb}
    frozen_a = [k for k in keys_a if isinstance(ta.factors[k], FrozenState)]
    frozen_b = [k for k in keys_b if isinstance(tb.factors[k], FrozenState)]
    if not frozen_a and not frozen_b:
        if all(len(k) == 1 for k in keys_a | keys_b):
            prod = 1.0 + 0j
            for r in cluster:
                prod *= _vdot_default(ta.factors.get((r,)), tb.factors.get((r,)))
                if prod == 0:
                    return 0j
            return prod
        regs = [r for r in layout.register_names if r in cluster]
        return complex(np.vdot(_materialize(ta, regs, layout), _materialize(tb, regs, layout)))
    if frozen_a and frozen_b:
        ka, kb = frozen_a[0], frozen_b[0]
        fa, fb = ta.factors[ka], tb.factors[kb]
        if fa is fb and keys_a == {ka} and keys_b == {kb} and cluster == set(ka):
            return complex(fa.norm2)
        raise _NeedExpand(0, ka)
    if frozen_b:
        return complex(np.conj(_cluster_overlap(tb, ta, cluster, rb, ra, layout)))
    key = frozen_a[0]
    frozen: FrozenState = ta.factors[key]  # type: ignore[assignment]
    if len(keys_a) > 1 or cluster != set(key):
        raise _NeedExpand(0, key)
    if any(len(k) > 1 for k in keys_b):
        raise _NeedExpand(0, key)
    locals_b = {r: tb.factors[(r,)] for r in cluster if (r,) in tb.factors}
    if not locals_b:
        return complex(np.conj(frozen.a0))
    if set(locals_b) == {PRIMARY} and frozen.zero_slice is not None:
        return complex(np.vdot(frozen.zero_slice, locals_b[PRIMARY]))
    pseudo = Term(1.0 + 0j, {(r,): v for r, v in locals_b.items()})
    return sum(pair_overlap(sub, pseudo, layout) for sub in frozen.state.terms)


@dataclass
class StructuredState:
    layout: RegisterLayout
    terms: list[Term] = field(default_factory=list)

    # --- constructors --------------------------------------------------------

    @staticmethod
    def zero(layout: RegisterLayout) -> "StructuredState":
        return StructuredState(layout, [Term(1.0 + 0j)])

    @staticmethod
    def from_factors(
        layout: RegisterLayout, factors: dict[str, np.ndarray], coeff: complex = 1.0
    ) -> "StructuredState":
        term = Term(complex(coeff))
        for reg, vec in factors.items():
            vec = np.asarray(vec, dtype=complex)
            if vec.shape[0] != 1 << layout.width(reg):
                raise DimMismatch(f"factor on {reg!r} has wrong dimension")
            term.set_factor((reg,), vec)
        return StructuredState(layout, [term])

    @staticmethod
    def from_terms(
        layout: RegisterLayout, spec: Iterable[tuple[complex, dict[str, np.ndarray]]]
    ) -> "StructuredState":
        terms = []
        for coeff, factors in spec:
            term = Term(complex(coeff))
            for reg, vec in factors.items():
                term.set_factor((reg,), np.asarray(vec, dtype=complex))
            terms.append(term)
        return StructuredState(layout, terms)

    @staticmethod
    def from_basis(layout: RegisterLayout, primary_index: int) -> "StructuredState":
        state = StructuredState.zero(layout)
        if primary_index:
            state.terms[0].set_factor(
                (PRIMARY,), basis_vector(1 << layout.primary, primary_index)
            )
        return state

    @staticmethod
    def from_dense(layout: RegisterLayout, vec: np.ndarray) -> "StructuredState":
        vec = np.asarray(vec, dtype=complex)
        if vec.shape[0] != 1 << layout.total_width:
            raise DimMismatch("dense vector length mismatch")
        dims = [1 << layout.width(r) for r in layout.register_names]
        arr = vec.reshape(dims)
        terms = []
        prim_dim = dims[0]
        flat = arr.reshape(prim_dim, -1)
        anc_dims = dims[1:]
        for anc_index in range(flat.shape[1]):
            column = flat[:, anc_index]
            if not np.any(np.abs(column) > 1e-300):
                continue
            term = Term(1.0 + 0j)
            term.set_factor((PRIMARY,), column.copy())
            rem = anc_index
            for reg_pos in range(len(anc_dims) - 1, -1, -1):
                dim = anc_dims[reg_pos]
                idx = rem % dim
                rem //= dim
                if idx:
                    reg = layout.register_names[1 + reg_pos]
                    term.set_factor((reg,), basis_vector(dim, idx))
            terms.append(term)
        return StructuredState(layout, terms)

    # --- algebra -------------------------------------------------------------

    def copy(self) -> "StructuredState":
        return StructuredState(self.layout, [t.copy() for t in self.terms])

    def overlap(self, other: "StructuredState") -> complex:
        return complex(
            sum(
                pair_overlap(ta, tb, self.layout)
                for ta in self.terms
                for tb in other.terms
            )
        )

    def norm2(self) -> float:
        return max(float(np.real(self.overlap(self))), 0.0)

    def norm(self) -> float:
        return float(np.sqrt(self.norm2()))

    def distance(self, other: "StructuredState") -> float:
        val = self.norm2() + other.norm2() - 2.0 * float(np.real(self.overlap(other)))
        return float(np.sqrt(max(val, 0.0)))

    def scaled(self, factor: complex) -> "StructuredState":
        out = self.copy()
        for term in out.terms:
            term.coeff *= factor
        return out

    def zero_amplitude(self) -> complex:
        """Amplitude of the all-zero basis configuration."""
        total = 0j
        for term in self.terms:
            contrib = term.coeff
            for key, val in term.factors.items():
                if isinstance(val, FrozenState):
                    contrib *= val.a0
                else:
                    contrib *= val.reshape(-1)[0]
                if contrib == 0:
                    break
            total += contrib
        return complex(total)

    def amplitude_zero_except(self, assignments: dict[str, int]) -> complex:
        """Amplitude of the basis configuration that is all-zero except for
        the listed register values."""
        needs_expand = any(
            isinstance(val, FrozenState) and any(assignments.get(r, 0) for r in key)
            for term in self.terms
            for key, val in term.factors.items()
        )
        if needs_expand:
            return self.expand_all_frozen().amplitude_zero_except(assignments)
        total = 0j
        for term in self.terms:
            contrib = term.coeff
            seen = set()
            for key, val in term.factors.items():
                if isinstance(val, FrozenState):
                    contrib *= val.a0
                elif len(key) == 1:
                    contrib *= val[assignments.get(key[0], 0)]
                else:
                    dims = [1 << self.layout.width(r) for r in key]
                    idx = [assignments.get(r, 0) for r in key]
                    contrib *= val.reshape(dims)[tuple(idx)]
                seen.update(key)
                if contrib == 0:
                    break
            if contrib == 0:
                continue
            for reg, idx in assignments.items():
                if idx and reg not in seen:
                    contrib = 0j
                    break
            total += contrib
        return complex(total)

    def primary_zero_slice(self) -> np.ndarray:
        """Primary-register amplitudes conditioned on every ancilla being |0>."""
        out = np.zeros(1 << self.layout.primary, dtype=complex)
        for term in self.terms:
            scalar = term.coeff
            prim: np.ndarray | None = None
            for key, val in term.factors.items():
                if isinstance(val, FrozenState):
                    if PRIMARY in key:
                        if val.zero_slice is None:
                            raise DimMismatch("frozen state lacks a zero slice")
                        if prim is not None:
                            raise DimMismatch("duplicate primary factor")
                        prim = val.zero_slice
                    else:
                        scalar *= val.a0
                elif key == (PRIMARY,):
                    prim = val
                elif PRIMARY in key:
                    dims = [1 << self.layout.width(r) for r in key]
                    arr = val.reshape(dims)
                    pos = key.index(PRIMARY)
                    idx = [0] * len(key)
                    idx[pos] = slice(None)
                    prim = np.ascontiguousarray(arr[tuple(idx)])
                else:
                    scalar *= val.reshape(-1)[0]
                if scalar == 0:
                    break
            if scalar == 0:
                continue
            if prim is None:
                out[0] += scalar
            else:
                out += scalar * prim
        return out

    def ancilla_excited_mass(self) -> float:
        """1 - |primary slice with all ancillas zero|^2 for a unit state."""
        slice_norm = float(np.linalg.norm(self.primary_zero_slice()) ** 2)
        return max(self.norm2() - slice_norm, 0.0)

    def expand_all_frozen(self) -> "StructuredState":
        terms = [t.copy() for t in self.terms]
        changed = True
        while changed:
            changed = False
            out = []
            for term in terms:
                frozen_keys = [
                    k for k, v in term.factors.items() if isinstance(v, FrozenState)
                ]
                if frozen_keys:
                    out.extend(expand_term(term, frozen_keys[0]))
                    changed = True
                else:
                    out.append(term)
            terms = out
        return StructuredState(self.layout, terms)

    def dense(self) -> np.ndarray:
        flat = self.expand_all_frozen()
        dims = [1 << self.layout.width(r) for r in self.layout.register_names]
        total = np.zeros(dims, dtype=complex)
        for term in flat.terms:
            vec = np.array([term.coeff])
            order: list[str] = []
            covered: set[str] = set()
            for reg in self.layout.register_names:
                if reg in covered:
                    continue
                key = term.key_for(reg)
                if key is None:
                    vec = np.kron(vec, basis_vector(1 << self.layout.width(reg), 0))
                    order.append(reg)
                    covered.add(reg)
                else:
                    vec = np.kron(vec, term.factors[key])
                    order.extend(key)
                    covered.update(key)
            term_dims = [1 << self.layout.width(r) for r in order]
            perm = [order.index(r) for r in self.layout.register_names]
            total += vec.reshape(term_dims).transpose(perm)
        return total.reshape(-1)

    # --- maintenance ----------------------------------------------------------

    def merge(self, candidates: Iterable[str] = (), *, rtol: float = DEFAULT.merge_rtol):
        self.terms = _prune(self.terms, DEFAULT.prune_rtol)
        self.terms = _sum_merge(self.terms, None, self.layout, rtol)
        for reg in dict.fromkeys(candidates):
            if any((reg,) in t.factors for t in self.terms):
                self.terms = _sum_merge(self.terms, reg, self.layout, rtol)
        self.terms = _prune(self.terms, DEFAULT.prune_rtol)


def _prune(terms: list[Term], rtol: float) -> list[Term]:
    if not terms:
        return terms
    biggest = max(abs(t.coeff) for t in terms)
    if biggest == 0.0:
        return []
    floor = biggest * rtol
    return [t for t in terms if abs(t.coeff) > floor]


def _canonicalize(term: Term) -> None:
    """Normalize factors to unit norm and fixed phase, folding scalars into
    the coefficient; snap near-default factors back to absent. Cached per
    factor-array identity so untouched factors cost one dict lookup."""
    for key in list(term.factors):
        val = term.factors[key]
        if isinstance(val, FrozenState):
            continue
        cached = term.canon.get(key)
        if cached is not None and cached[0] is val:
            continue
        norm = np.linalg.norm(val)
        if norm == 0.0:
            term.coeff = 0.0
            return
        vec = val / norm
        pivot = int(np.argmax(np.abs(vec)))
        phase = vec[pivot] / abs(vec[pivot])
        vec = vec * np.conj(phase)
        term.coeff *= norm * phase
        if len(key) == 1 and abs(vec[0] - 1.0) <= SNAP_TOL and np.all(
            np.abs(vec[1:]) <= SNAP_TOL
        ):
            term.pop_factor(key)
        else:
            term.factors[key] = vec
            term.canon[key] = (vec, np.round(vec, 10).tobytes())


def _signature(term: Term, skip: str | None) -> tuple | None:
    """Hashable signature of all factors except the one on register ``skip``.

    Returns None when ``skip`` sits inside a frozen or joint factor (such a
    term cannot participate in a sum-merge on that register).
    """
    parts = []
    for key in sorted(term.factors):
        val = term.factors[key]
        if skip is not None and skip in key:
            if len(key) > 1 or isinstance(val, FrozenState):
                return None
            continue
        if isinstance(val, FrozenState):
            parts.append((key, id(val)))
        else:
            cached = term.canon.get(key)
            if cached is not None and cached[0] is val:
                parts.append((key, cached[1]))
            else:
                data = np.round(val, 10).tobytes()
                term.canon[key] = (val, data)
                parts.append((key, data))
    return tuple(parts)


def _factors_close(ta: Term, tb: Term, skip: str | None, rtol: float) -> bool:
    keys_a = {k: v for k, v in ta.factors.items() if skip is None or skip not in k}
    keys_b = {k: v for k, v in tb.factors.items() if skip is None or skip not in k}
    if keys_a.keys() != keys_b.keys():
        return False
    for key, va in keys_a.items():
        vb = keys_b[key]
        if isinstance(va, FrozenState) or isinstance(vb, FrozenState):
            if va is not vb:
                return False
            continue
        if va is vb:
            continue
        if va.shape != vb.shape or np.max(np.abs(va - vb)) > rtol:
            return False
    return True


def _sum_merge(
    terms: list[Term], reg: str | None, layout: RegisterLayout, rtol: float
) -> list[Term]:
    if len(terms) < 2:
        return terms
    for term in terms:
        _canonicalize(term)
    buckets: dict[tuple, list[Term]] = {}
    out: list[Term] = []
    for term in terms:
        if term.coeff == 0:
            continue
        sig = _signature(term, reg)
        if sig is None:
            out.append(term)
            continue
        buckets.setdefault(sig, []).append(term)
    for group in buckets.values():
        while group:
            rep = group.pop()
            matched = [rep]
            remaining = []
            for other in group:
                if _factors_close(rep, other, reg, rtol):
                    matched.append(other)
                else:
                    remaining.append(other)
            group = remaining
            if len(matched) == 1:
                out.append(rep)
                continue
            if reg is None:
                rep.coeff = sum(t.coeff for t in matched)
                if rep.coeff != 0:
                    out.append(rep)
                continue
            dim = 1 << layout.width(reg)
            combined = np.zeros(dim, dtype=complex)
            for t in matched:
                vec = t.factors.get((reg,))
                if vec is None:
                    combined[0] += t.coeff
                else:
                    combined += t.coeff * vec
            rep.coeff = 1.0 + 0j
            rep.pop_factor((reg,))
            rep.set_factor((reg,), combined)
            _canonicalize(rep)
            if rep.coeff != 0:
                out.append(rep)
    return out
