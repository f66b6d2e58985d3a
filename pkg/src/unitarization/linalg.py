"""Exact complex linear algebra: Gram-Schmidt, unitary completion, residuals.

All vectors are 1-d complex numpy arrays; matrices are square complex arrays
with columns as basis images. Everything runs in double precision with the
tolerances from :mod:`unitarization.config`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .config import DEFAULT, Tolerances
from .errors import DegenerateVector, DimMismatch


def as_state(entries) -> np.ndarray:
    vec = np.asarray(entries, dtype=complex)
    if vec.ndim != 1:
        raise DimMismatch(f"expected a vector, got shape {vec.shape}")
    return vec


def is_unitary(matrix: np.ndarray, tol: float = DEFAULT.unitarity) -> bool:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    gram = matrix.conj().T @ matrix
    return bool(np.max(np.abs(gram - np.eye(matrix.shape[0]))) <= tol)


def gram_schmidt(
    vectors: Sequence[np.ndarray],
    *,
    floor: float = DEFAULT.degeneracy_floor,
    drop_degenerate: bool = False,
) -> list[np.ndarray]:
    """Orthonormalize ``vectors`` in order (modified Gram-Schmidt).

    A vector whose residual norm after projection falls below ``floor``
    signals linear dependence: it is dropped when ``drop_degenerate`` is
    set, otherwise :class:`DegenerateVector` is raised.
    """
    vectors = [as_state(v) for v in vectors]
    if not vectors:
        return []
    dim = vectors[0].shape[0]
    out: list[np.ndarray] = []
    for idx, vec in enumerate(vectors):
        if vec.shape[0] != dim:
            raise DimMismatch("gram_schmidt requires equal-dimension vectors")
        residual = vec.astype(complex, copy=True)
        for basis in out:
            residual -= np.vdot(basis, residual) * basis
        norm = np.linalg.norm(residual)
        if norm < floor:
            if drop_degenerate:
                continue
            raise DegenerateVector(
                f"vector {idx} is within {norm:.3e} of the span of its predecessors"
            )
        out.append(residual / norm)
    return out


def complete_unitary(
    vectors: Sequence[np.ndarray],
    dim: int,
    *,
    floor: float = DEFAULT.degeneracy_floor,
    tol: Tolerances = DEFAULT,
) -> np.ndarray:
    """Return a ``dim x dim`` unitary whose first columns orthonormalize ``vectors``.

    The completion appends the standard basis and Gram-Schmidts the whole
    list, dropping dependent vectors, which makes the result deterministic.
    """
    vectors = [as_state(v) for v in vectors]
    k = len(vectors)
    if k > dim:
        raise DimMismatch(f"cannot fit {k} columns into dimension {dim}")
    for vec in vectors:
        if vec.shape[0] != dim:
            raise DimMismatch("column length must equal dim")
    if k:
        gram = np.array([[np.vdot(a, b) for b in vectors] for a in vectors])
        if np.max(np.abs(gram - np.eye(k))) > 0.1:
            raise DegenerateVector("input columns are not nearly orthonormal")
    head = gram_schmidt(vectors, floor=floor)
    columns = list(head)
    for j in range(dim):
        candidate = np.zeros(dim, dtype=complex)
        candidate[j] = 1.0
        residual = candidate
        for basis in columns:
            residual = residual - np.vdot(basis, residual) * basis
        norm = np.linalg.norm(residual)
        if norm < floor:
            continue
        columns.append(residual / norm)
        if len(columns) == dim:
            break
    if len(columns) != dim:
        raise DegenerateVector("failed to complete an orthonormal basis")
    return np.stack(columns, axis=1)


def orthogonal_component(
    phis: Sequence[np.ndarray],
    psi: np.ndarray,
    *,
    floor: float = DEFAULT.component_floor,
) -> tuple[np.ndarray | None, float]:
    """Unit component of ``psi`` orthogonal to the orthonormal set ``phis``.

    Returns ``(phi, delta)`` with ``delta = sqrt(1 - sum |<phi_i|psi>|^2)``.
    The global phase of ``phi`` is fixed so its coefficient in ``psi`` is
    real positive. When ``delta`` is below ``floor`` the component is
    numerically undefined and ``phi`` is ``None``.
    """
    psi = as_state(psi)
    overlaps = np.array([np.vdot(phi, psi) for phi in phis])
    delta_sq = 1.0 - float(np.sum(np.abs(overlaps) ** 2))
    delta = float(np.sqrt(max(delta_sq, 0.0)))
    if delta < floor:
        return None, delta
    residual = psi.astype(complex, copy=True)
    for phi, ov in zip(phis, overlaps):
        residual -= ov * as_state(phi)
    norm = np.linalg.norm(residual)
    return residual / norm, delta


def residual_amplitude(phis: Sequence[np.ndarray], psi: np.ndarray) -> float:
    """The Delta value alone (no component vector)."""
    return orthogonal_component(phis, psi, floor=np.inf)[1]
