"""Tests for the vectorisation/embedding coordinate helpers."""

import numpy as np
import pytest

from qbeam.la import (
    eigvalsh3,
    embed_extract,
    embed_map,
    hermitian_embed,
    hvec,
    hvec_dim,
    hvec_inv,
    svec,
    svec_dim,
    svec_inv,
)
from qbeam.model import complex_normal


def _rand_sym(rng, n):
    X = rng.normal(size=(n, n))
    return 0.5 * (X + X.T)


def _rand_herm(rng, n):
    X = complex_normal(rng, (n, n))
    return 0.5 * (X + X.conj().T)


def test_svec_roundtrip_and_isometry():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3, 6):
        A = _rand_sym(rng, n)
        B = _rand_sym(rng, n)
        assert svec(A).shape == (svec_dim(n),)
        assert np.allclose(svec_inv(svec(A), n), A, atol=1e-14)
        assert np.dot(svec(A), svec(B)) == pytest.approx(np.trace(A @ B), rel=1e-12)


def test_svec_batched_matches_loop():
    rng = np.random.default_rng(2)
    S = np.stack([_rand_sym(rng, 4) for _ in range(5)])
    V = svec(S)
    for i in range(5):
        assert np.array_equal(V[i], svec(S[i]))
    assert np.allclose(svec_inv(V, 4), S, atol=1e-14)


def test_hvec_roundtrip_and_norm():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3, 5):
        M = _rand_herm(rng, n)
        v = hvec(M)
        assert v.shape == (hvec_dim(n),)
        assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(M, "fro"), rel=1e-12)
        assert np.allclose(hvec_inv(v, n), M, atol=1e-14)


def test_hvec_inner_product_is_trace():
    rng = np.random.default_rng(4)
    A = _rand_herm(rng, 3)
    B = _rand_herm(rng, 3)
    assert np.dot(hvec(A), hvec(B)) == pytest.approx(np.trace(A @ B).real, rel=1e-12)


def test_embed_identity():
    assert np.array_equal(hermitian_embed(np.eye(2, dtype=complex)), np.eye(4))


def test_embed_eigenvalues_doubled():
    rng = np.random.default_rng(5)
    M = _rand_herm(rng, 3)
    lam = np.linalg.eigvalsh(M)
    lam_emb = np.linalg.eigvalsh(hermitian_embed(M))
    assert np.allclose(lam_emb, np.sort(np.repeat(lam, 2)), atol=1e-10)
    assert lam_emb.min() == pytest.approx(lam.min(), abs=1e-10)
    assert np.trace(hermitian_embed(M)) == pytest.approx(2.0 * np.trace(M).real, rel=1e-12)


def test_embed_extract_inverts_embed():
    rng = np.random.default_rng(6)
    M = _rand_herm(rng, 3)
    assert np.allclose(embed_extract(hermitian_embed(M)), M, atol=1e-14)


def test_embed_extract_is_orthogonal_projection():
    # residual after extraction must be Frobenius-orthogonal to the image
    rng = np.random.default_rng(7)
    S = _rand_sym(rng, 6)
    M = embed_extract(S)
    R = S - hermitian_embed(M).real
    for _ in range(10):
        X = hermitian_embed(_rand_herm(rng, 3)).real
        assert np.abs(np.sum(R * X)) < 1e-10


def test_eigvalsh3_matches_lapack():
    rng = np.random.default_rng(9)
    M = np.stack([_rand_herm(rng, 3) for _ in range(200)])
    M[0] = np.eye(3)  # fully degenerate
    M[1] = np.diag([2.0, 2.0, -1.0]).astype(complex)  # pairwise degenerate
    M[2] = np.zeros((3, 3), complex)
    mine = eigvalsh3(M)
    ref = np.linalg.eigvalsh(M)
    scale = np.abs(ref).max(axis=1, keepdims=True) + 1.0
    assert np.abs(mine - ref).max() < 1e-12 * scale.max()
    with pytest.raises(ValueError):
        eigvalsh3(np.eye(2))


def test_eigvalsh3_real_symmetric_input():
    rng = np.random.default_rng(10)
    M = np.stack([_rand_sym(rng, 3) for _ in range(20)])
    assert np.allclose(eigvalsh3(M), np.linalg.eigvalsh(M), atol=1e-12)


def test_embed_map_linearises_embedding():
    rng = np.random.default_rng(8)
    E = embed_map(3)
    assert E.shape == (svec_dim(6), hvec_dim(3))
    for _ in range(5):
        M = _rand_herm(rng, 3)
        assert np.allclose(E @ hvec(M), svec(hermitian_embed(M).real), atol=1e-12)


def _psd_part_ref(M):
    lam, U = np.linalg.eigh(M)
    lam = np.maximum(lam, 0.0)
    return (U * lam[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)


def _unitary(rng, n):
    X = complex_normal(rng, (n, n))
    Q, _ = np.linalg.qr(X)
    return Q


def test_psd_part_herm_matches_eigh():
    from qbeam.la import psd_part_herm

    rng = np.random.default_rng(21)
    for n in (2, 3):
        M = np.stack([_rand_herm(rng, n) for _ in range(300)])
        ref = _psd_part_ref(M)
        got = psd_part_herm(M)
        scale = np.abs(M).max(axis=(1, 2)) + 1.0
        err = np.abs(got - ref).max(axis=(1, 2))
        assert (err < 1e-11 * scale).all()


def test_psd_part_herm_degenerate_spectra():
    from qbeam.la import psd_part_herm

    rng = np.random.default_rng(22)
    # sign patterns and gaps chosen to stress every polynomial branch
    specs3 = [
        (0.0, 0.0, 0.0),
        (1.0, 1.0, 1.0),
        (-1.0, -1.0, -1.0),
        (-1.0, -1e-13, 1e-13),
        (-1e-15, 1e-15, 1.0),
        (-1.0, -1.0, 1e-9),
        (-1e-9, 2.0, 2.0),
        (-3.0, 0.0, 5.0),
        (-2.0, -2.0, 7.0),
        (-1e-300, 1e-300, 1e-300),
        (1e-8, 1.0, 1.0 + 1e-12),
    ]
    # closed-form eigenvalues lose ~sqrt(eps) absolute accuracy when two
    # eigenvalues coincide near zero under a large spectral spread, so the
    # degenerate bound is looser than the generic-spectrum one above
    for spec in specs3:
        U = _unitary(rng, 3)
        M = (U * np.asarray(spec)) @ U.conj().T
        M = 0.5 * (M + M.conj().T)
        ref = _psd_part_ref(M)
        got = psd_part_herm(M[None])[0]
        scale = max(1.0, float(np.abs(M).max()))
        assert np.abs(got - ref).max() < 2e-8 * scale, spec
    specs2 = [(0.0, 0.0), (-1.0, 1e-13), (-1e-13, 1.0), (2.0, 2.0), (-5.0, -1e-9)]
    for spec in specs2:
        U = _unitary(rng, 2)
        M = (U * np.asarray(spec)) @ U.conj().T
        M = 0.5 * (M + M.conj().T)
        ref = _psd_part_ref(M)
        got = psd_part_herm(M[None])[0]
        scale = max(1.0, float(np.abs(M).max()))
        assert np.abs(got - ref).max() < 1e-11 * scale, spec


def test_psd_part_herm_large_side_fallback():
    from qbeam.la import psd_part_herm

    rng = np.random.default_rng(23)
    M = np.stack([_rand_herm(rng, 4) for _ in range(10)])
    assert np.allclose(psd_part_herm(M), _psd_part_ref(M), atol=1e-11)
