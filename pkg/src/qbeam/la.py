"""Symmetric/Hermitian vectorisation and embedding helpers.

Two isometric coordinate systems are used throughout the cone machinery:

* svec: real symmetric n x n -> R^{n(n+1)/2}, lower triangle row by row
  with off-diagonal entries scaled by sqrt(2), so that
  <svec(A), svec(B)> = Tr(AB).
* hvec: Hermitian n x n -> R^{n^2}, (diagonal; sqrt(2) Re lower;
  sqrt(2) Im lower), so that ||hvec(M)|| = ||M||_F and
  <hvec(A), hvec(B)> = Re Tr(A B).

The real embedding T(M) = [[Re M, -Im M], [Im M, Re M]] turns Hermitian
PSD constraints into real symmetric ones at the cost of doubling traces
and eigenvalue multiplicities; EMBED_TRACE_FACTOR records the doubling
for builders that fold it into constraint coefficients.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

EMBED_TRACE_FACTOR = 2.0

_SQRT2 = np.sqrt(2.0)


def norm_rows(x: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis with a fixed summation order.

    numpy's reduce-based norms buffer strided views in chunks whose
    grouping can shift with the surrounding allocation, so two calls on
    bit-identical data may disagree in the last ulp.  Batched decision
    paths here promise bit-equality with their sequential counterparts,
    which needs every norm on that route to associate identically; the
    einsum contraction is order-stable, so use it for real and complex
    stacks alike.
    """
    x = np.ascontiguousarray(x)
    if np.iscomplexobj(x):
        s = np.einsum("...d,...d->...", x.real, x.real)
        s = s + np.einsum("...d,...d->...", x.imag, x.imag)
        return np.sqrt(s)
    return np.sqrt(np.einsum("...d,...d->...", x, x))


@lru_cache(maxsize=None)
def _tril(n: int, k: int = 0):
    # index arrays are hot-path constants; never mutate the cached copies
    i, j = np.tril_indices(n, k=k)
    return i, j, i != j


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec(S: np.ndarray) -> np.ndarray:
    """Scaled lower-triangle vector of a real symmetric matrix (batched)."""
    S = np.asarray(S)
    n = S.shape[-1]
    i, j, off = _tril(n)
    v = S[..., i, j].copy()
    v[..., off] *= _SQRT2
    return v


def svec_inv(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of svec (batched over leading axes)."""
    v = np.asarray(v)
    i, j, off = _tril(n)
    w = v.copy()
    w[..., off] /= _SQRT2
    S = np.zeros(v.shape[:-1] + (n, n), dtype=v.dtype)
    S[..., i, j] = w
    S[..., j, i] = w
    return S


def hvec_dim(n: int) -> int:
    return n * n


def hvec(M: np.ndarray) -> np.ndarray:
    """Isometric real coordinates of a Hermitian matrix (batched)."""
    M = np.asarray(M)
    n = M.shape[-1]
    i, j, _ = _tril(n, -1)
    d = np.arange(n)
    parts = [
        M[..., d, d].real,
        _SQRT2 * M[..., i, j].real,
        _SQRT2 * M[..., i, j].imag,
    ]
    return np.concatenate(parts, axis=-1)


def hvec_inv(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of hvec (batched over leading axes)."""
    v = np.asarray(v)
    i, j, _ = _tril(n, -1)
    d = np.arange(n)
    noff = i.size
    M = np.zeros(v.shape[:-1] + (n, n), dtype=complex)
    M[..., d, d] = v[..., :n]
    re = v[..., n:n + noff] / _SQRT2
    im = v[..., n + noff:] / _SQRT2
    M[..., i, j] = re + 1j * im
    M[..., j, i] = re - 1j * im
    return M


def hermitian_embed(M: np.ndarray) -> np.ndarray:
    """Real symmetric 2n x 2n embedding [[Re, -Im], [Im, Re]] (batched).

    PSD is preserved both ways; traces and eigenvalue multiplicities
    double (see EMBED_TRACE_FACTOR).
    """
    M = np.asarray(M)
    re, im = M.real, M.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def embed_extract(S: np.ndarray) -> np.ndarray:
    """Orthogonal projection of symmetric 2n x 2n onto the embedding image.

    Returns the Hermitian n x n matrix M with T(M) closest to S in
    Frobenius norm.  Exact inverse of hermitian_embed on its image.
    """
    S = np.asarray(S)
    n = S.shape[-1] // 2
    A = S[..., :n, :n]
    B = S[..., :n, n:]
    C = S[..., n:, :n]
    D = S[..., n:, n:]
    re = 0.5 * (A + D)
    re = 0.5 * (re + np.swapaxes(re, -1, -2))
    im = 0.25 * ((C - B) + np.swapaxes(B - C, -1, -2))
    return re + 1j * im


def eigvalsh3(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of Hermitian 3x3 stacks by the trigonometric closed form.

    Ascending order, matching np.linalg.eigvalsh.  Pure vectorised
    arithmetic (no per-matrix LAPACK calls), which is what makes scans
    over large stacks of tiny matrices affordable.  Eigenvalues are
    numerically stable even at degeneracies; this routine deliberately
    does not produce eigenvectors, which are not.
    """
    A = np.asarray(A)
    if A.shape[-2:] != (3, 3):
        raise ValueError("expects (..., 3, 3) stacks")
    a00 = A[..., 0, 0].real
    a11 = A[..., 1, 1].real
    a22 = A[..., 2, 2].real
    p1 = (
        np.abs(A[..., 0, 1]) ** 2
        + np.abs(A[..., 0, 2]) ** 2
        + np.abs(A[..., 1, 2]) ** 2
    )
    q = (a00 + a11 + a22) / 3.0
    d0, d1, d2 = a00 - q, a11 - q, a22 - q
    p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1
    p = np.sqrt(np.maximum(p2, 0.0) / 6.0)
    safe = np.where(p > 0.0, p, 1.0)
    b00, b11, b22 = d0 / safe, d1 / safe, d2 / safe
    b01 = A[..., 0, 1] / safe
    b02 = A[..., 0, 2] / safe
    b12 = A[..., 1, 2] / safe
    det = (
        b00 * (b11 * b22 - np.abs(b12) ** 2)
        - (b01 * (np.conj(b01) * b22 - b12 * np.conj(b02))).real
        + (b02 * (np.conj(b01) * np.conj(b12) - b11 * np.conj(b02))).real
    )
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    big = q + 2.0 * p * np.cos(phi)
    small = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - big - small
    out = np.stack([small, mid, big], axis=-1)
    return np.where(p2[..., None] > 0.0, out, np.stack([q, q, q], axis=-1))


def eigvalsh2(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of Hermitian 2x2 stacks, ascending (closed form)."""
    A = np.asarray(A)
    if A.shape[-2:] != (2, 2):
        raise ValueError("expects (..., 2, 2) stacks")
    a = A[..., 0, 0].real
    d = A[..., 1, 1].real
    t = 0.5 * (a + d)
    r = np.sqrt(np.maximum(0.25 * (a - d) ** 2 + np.abs(A[..., 0, 1]) ** 2, 0.0))
    return np.stack([t - r, t + r], axis=-1)


def psd_part_herm(M: np.ndarray) -> np.ndarray:
    """PSD part (eigenvalue clipping at zero) of Hermitian 2x2/3x3 stacks.

    Evaluates the clipping as a matrix polynomial picked by the
    eigenvalue sign pattern, so every divisor is a spectral gap that the
    pattern itself bounds away from zero (for one positive eigenvalue
    both gaps are >= lambda_max; for one negative both are >= the
    smallest positive eigenvalue).  Absolute error stays at rounding
    level even for coincident eigenvalues.  Larger sides fall back to
    np.linalg.eigh.
    """
    M = np.asarray(M)
    q = M.shape[-1]
    if q == 2:
        lam = eigvalsh2(M)
        l1, l2 = lam[..., 0], lam[..., 1]
        all_pos = l1 > 0.0
        one_pos = (l2 > 0.0) & ~all_pos
        den = np.where(one_pos, l2 - l1, 1.0)
        s = np.where(one_pos, l2, 0.0) / den
        shift = np.where(one_pos, l1, 0.0)
        P = np.where(all_pos[..., None, None], M, 0.0)
        P = P + s[..., None, None] * (M - shift[..., None, None] * np.eye(2))
    elif q == 3:
        lam = eigvalsh3(M)
        l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
        all_pos = l1 > 0.0
        two_pos = (l2 > 0.0) & ~all_pos
        one_pos = (l3 > 0.0) & (l2 <= 0.0)
        alpha = np.where(one_pos, l1, np.where(two_pos, l2, 0.0))
        beta = np.where(one_pos, l2, np.where(two_pos, l3, 0.0))
        den = np.where(
            one_pos,
            (l3 - l1) * (l3 - l2),
            np.where(two_pos, (l2 - l1) * (l3 - l1), 1.0),
        )
        num = np.where(one_pos, l3, np.where(two_pos, -l1, 0.0))
        s = num / den
        eye = np.eye(3)
        Ma = M - alpha[..., None, None] * eye
        Mb = M - beta[..., None, None] * eye
        P = np.where((all_pos | two_pos)[..., None, None], M, 0.0)
        P = P + s[..., None, None] * (Ma @ Mb)
    else:
        lam, U = np.linalg.eigh(M)
        lam = np.maximum(lam, 0.0)
        return (U * lam[..., None, :]) @ np.swapaxes(U.conj(), -1, -2)
    # polynomial products pick up ulp-level asymmetry; restore Hermitian
    return 0.5 * (P + np.swapaxes(P.conj(), -1, -2))


def embed_map(n: int) -> np.ndarray:
    """Matrix E with svec(T(M)) = E @ hvec(M), shape (svec_dim(2n), n^2)."""
    d = hvec_dim(n)
    E = np.empty((svec_dim(2 * n), d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        E[:, k] = svec(hermitian_embed(hvec_inv(e, n)).real)
    return E
