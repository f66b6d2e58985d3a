"""Gram-Schmidt, unitary completion, orthogonal components."""

import numpy as np
import pytest

from unitarization import DegenerateVector, complete_unitary, gram_schmidt, orthogonal_component
from unitarization.linalg import is_unitary, residual_amplitude

from util import random_orthonormal, random_state


def test_gram_schmidt_identity_on_orthonormal():
    vecs = [np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)]
    out = gram_schmidt(vecs)
    np.testing.assert_allclose(out[0], vecs[0])
    np.testing.assert_allclose(out[1], vecs[1])


def test_gram_schmidt_projects_first_coordinate():
    vecs = [np.array([1, 0], dtype=complex), np.array([1, 1], dtype=complex) / np.sqrt(2)]
    out = gram_schmidt(vecs)
    np.testing.assert_allclose(out[1], np.array([0, 1]), atol=1e-12)


def test_gram_schmidt_random_outputs_orthonormal():
    rng = np.random.default_rng(21)
    for _ in range(30):
        dim = int(rng.integers(2, 65))
        k = int(rng.integers(1, min(dim, 8) + 1))
        vecs = [random_state(rng, dim) for _ in range(k)]
        try:
            out = gram_schmidt(vecs)
        except DegenerateVector:
            continue
        gram = np.array([[np.vdot(a, b) for b in out] for a in out])
        assert np.max(np.abs(gram - np.eye(k))) < 1e-10
        # span of each prefix is preserved
        for j in range(1, k + 1):
            stacked = np.stack(vecs[:j], axis=1)
            proj = sum(np.outer(u, u.conj()) for u in out[:j])
            np.testing.assert_allclose(proj @ stacked, stacked, atol=1e-8)


def test_gram_schmidt_raises_on_dependence():
    vecs = [np.array([1, 0], dtype=complex), np.array([1, 0], dtype=complex)]
    with pytest.raises(DegenerateVector):
        gram_schmidt(vecs)
    assert len(gram_schmidt(vecs, drop_degenerate=True)) == 1


def test_perturbation_stability_bound():
    # perturbed orthonormal triple, eps = 1e-4, k = 3: error <= (64k+1) eps
    rng = np.random.default_rng(22)
    eps = 1e-4
    k = 3
    basis = random_orthonormal(rng, 12, k)
    perturbed = []
    for v in basis:
        noise = random_state(rng, 12)
        w = v + eps * noise / np.linalg.norm(noise) * rng.random()
        perturbed.append(w)
    out = gram_schmidt(perturbed)
    for u, v in zip(out, basis):
        assert np.linalg.norm(u - v) <= (64 * k + 1) * eps


def test_complete_unitary_trivial():
    u = complete_unitary([np.array([1, 0], dtype=complex)], 2)
    np.testing.assert_allclose(u, np.eye(2))


def test_complete_unitary_keeps_exact_columns():
    rng = np.random.default_rng(23)
    cols = random_orthonormal(rng, 4, 2)
    u = complete_unitary(cols, 4)
    assert is_unitary(u)
    np.testing.assert_allclose(u[:, 0], cols[0], atol=1e-12)
    np.testing.assert_allclose(u[:, 1], cols[1], atol=1e-12)


def test_complete_unitary_perturbed_columns():
    rng = np.random.default_rng(24)
    eps = 1e-5
    cols = random_orthonormal(rng, 4, 2)
    noisy = [c + eps * random_state(rng, 4) for c in cols]
    u = complete_unitary(noisy, 4)
    assert is_unitary(u)
    reference = gram_schmidt(noisy)
    for j in range(2):
        np.testing.assert_allclose(u[:, j], reference[j], atol=1e-12)
        assert np.linalg.norm(u[:, j] - cols[j]) <= (64 * 2 + 1) * eps


def test_complete_unitary_rejects_non_orthonormal():
    vecs = [np.array([1, 0], dtype=complex), np.array([0.9, 0.1], dtype=complex)]
    with pytest.raises(DegenerateVector):
        complete_unitary(vecs, 2)


def test_orthogonal_component_empty_basis():
    psi = random_state(np.random.default_rng(25), 8)
    phi, delta = orthogonal_component([], psi)
    np.testing.assert_allclose(phi, psi)
    assert delta == pytest.approx(1.0)


def test_orthogonal_component_already_orthogonal():
    phis = [np.array([1, 0, 0, 0], dtype=complex)]
    psi = np.zeros(4, dtype=complex)
    psi[1] = psi[2] = 1 / np.sqrt(2)
    phi, delta = orthogonal_component(phis, psi)
    np.testing.assert_allclose(phi, psi, atol=1e-12)
    assert delta == pytest.approx(1.0)


def test_orthogonal_component_half_overlap():
    # phis = [|1>], psi = (|1>+|3>)/sqrt(2) -> (|3>, 1/sqrt(2))
    phis = [np.eye(4, dtype=complex)[1]]
    psi = (np.eye(4, dtype=complex)[1] + np.eye(4, dtype=complex)[3]) / np.sqrt(2)
    phi, delta = orthogonal_component(phis, psi)
    np.testing.assert_allclose(phi, np.eye(4)[3], atol=1e-12)
    assert delta == pytest.approx(1 / np.sqrt(2), abs=1e-10)


def test_orthogonal_component_reconstruction_and_phase():
    rng = np.random.default_rng(26)
    for _ in range(20):
        dim = int(rng.integers(2, 17))
        k = int(rng.integers(0, min(dim - 1, 4) + 1))
        phis = random_orthonormal(rng, dim, k)
        psi = random_state(rng, dim)
        phi, delta = orthogonal_component(phis, psi)
        if phi is None:
            continue
        rebuilt = sum(np.vdot(p, psi) * p for p in phis) + delta * phi
        assert np.linalg.norm(psi - rebuilt) < 1e-10
        coefficient = np.vdot(phi, psi)
        assert abs(coefficient.imag) < 1e-10
        assert coefficient.real > 0


def test_orthogonal_component_below_floor():
    phis = [np.array([1, 0], dtype=complex)]
    psi = np.array([1, 0], dtype=complex)
    phi, delta = orthogonal_component(phis, psi)
    assert phi is None
    assert delta < 1e-7
    assert residual_amplitude(phis, psi) == delta
