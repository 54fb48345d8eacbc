"""Conservative conditional packet-error control via a Gaussian tail bound.

Given the CSIT estimate, the success event of flow k is a quadratic form
in the unseen estimation noise v ~ CN(0, I):

    A(v) = v^H M v + 2 Re(z^H v)  >=  e.

A Bernstein-type inequality for such forms yields a closed-form threshold
that A exceeds with probability at least 1 - exp(-delta), so pushing the
threshold above e certifies a conditional PER of at most exp(-delta)
without touching the true channel distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Reliability exponents above this are numerically meaningless (PER 2e-22).
DELTA_CAP = 50.0

# Clamp point for sqrt(delta) before squaring, so extreme margin/spread
# ratios saturate at the cap instead of overflowing.
_CAP_ROOT = float(np.sqrt(DELTA_CAP))

_HERM_TOL = 1e-12


@dataclass(frozen=True)
class QuadFormTriple:
    """Data (M, z, e) of one flow's conditional success event."""

    M: np.ndarray
    z: np.ndarray
    e: float

    def __post_init__(self):
        M = np.asarray(self.M)
        scale = max(1.0, float(np.abs(M).max(initial=0.0)))
        if np.abs(M - M.conj().T).max(initial=0.0) > _HERM_TOL * scale:
            raise ValueError("M must be Hermitian")


@dataclass(frozen=True)
class BernsteinCertificate:
    """Feasibility record of the conservative constraint at one delta."""

    delta: float
    threshold: float
    slack: float

    @property
    def feasible(self) -> bool:
        return self.slack >= 0.0


def gram_combination(Wset, k: int, rate_k: float):
    """Signal-vs-interference combination W_k/(2^rate - 1) - sum_{j!=k} W_j."""
    a = 2.0 ** rate_k - 1.0
    B = Wset[k] / a
    for j, Wj in enumerate(Wset):
        if j != k:
            B = B - Wj
    return B


def quadform_from_gram(hhat_k, Wset, k: int, rate_k: float, eps_k: float) -> QuadFormTriple:
    """Build flow k's (M, z, e) from Gram matrices of the beam set.

    Works for rank-one W_j = w_j w_j^H and for general PSD relaxation
    output alike.  Note the sign of z: with the estimation model
    h = hhat - sqrt(eps) v, expanding h^H B h leaves a cross term
    -2 sqrt(eps) Re(hhat^H B v), so z = -sqrt(eps) B hhat.  (The mirrored
    model h = hhat + sqrt(eps) v gives +z; the two agree in distribution
    but not sample by sample, and the simulator uses the minus form.)
    """
    if not 0 < eps_k <= 1:
        raise ValueError(f"eps must be in (0, 1], got {eps_k}")
    for W in Wset:
        scale = max(1.0, float(np.abs(W).max(initial=0.0)))
        if np.abs(W - np.asarray(W).conj().T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("every W must be Hermitian")
    hhat_k = np.asarray(hhat_k)
    B = gram_combination(Wset, k, rate_k)
    M = eps_k * B
    z = -np.sqrt(eps_k) * (B @ hhat_k)
    e = 1.0 - float(np.real(np.vdot(hhat_k, B @ hhat_k)))
    return QuadFormTriple(M=M, z=z, e=e)


def event_value(triple: QuadFormTriple, v):
    """A(v) = v^H M v + 2 Re(z^H v), vectorised over stacked rows of v."""
    v = np.asarray(v)
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    quad = np.real(np.einsum("ni,ij,nj->n", v2.conj(), triple.M, v2))
    lin = 2.0 * np.real(v2 @ triple.z.conj())
    out = quad + lin
    return float(out[0]) if single else out


def s_plus(M) -> float:
    """Largest eigenvalue of -M clamped below at zero."""
    return max(float(np.linalg.eigvalsh(-np.asarray(M))[-1]), 0.0)


def bernstein_threshold(M, z, delta: float) -> float:
    """Lower tail threshold the quadratic form exceeds w.p. >= 1 - e^-delta."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    M = np.asarray(M)
    z = np.asarray(z)
    spread = np.sqrt(np.sum(np.abs(M) ** 2) + 2.0 * np.sum(np.abs(z) ** 2))
    return float(np.trace(M).real - np.sqrt(2.0 * delta) * spread - delta * s_plus(M))


def conservative_feasible(triple: QuadFormTriple, delta: float) -> BernsteinCertificate:
    """Certificate that the conditional PER is at most exp(-delta).

    Feasible (slack >= 0) means Pr[A(v) >= e] >= 1 - exp(-delta); at
    delta = 0 it degenerates to the nominal constraint Tr(M) >= e.
    """
    thr = bernstein_threshold(triple.M, triple.z, delta)
    return BernsteinCertificate(delta=delta, threshold=thr, slack=thr - triple.e)


def delta_max(tr_m_minus_e: float, x: float, y: float) -> float:
    """Largest delta >= 0 with sqrt(2 delta) x + delta y <= tr_m_minus_e.

    This is the separable reliability update: the loop objective strictly
    rewards larger delta per flow, so the active-constraint point is the
    exact per-flow maximiser.  Returns 0 when no margin exists (c <= 0,
    meaning no PER guarantee this slot) and caps the answer at DELTA_CAP.
    """
    if x < 0 or y < 0:
        raise ValueError("x and y must be nonnegative")
    c = tr_m_minus_e
    if c <= 0.0:
        return 0.0
    if x == 0.0 and y == 0.0:
        return DELTA_CAP
    # conjugate form of the quadratic root: stable for y -> 0
    s = 2.0 * c / (np.sqrt(2.0) * x + np.sqrt(2.0 * x * x + 4.0 * y * c))
    if s >= _CAP_ROOT:
        return DELTA_CAP
    return min(float(s * s), DELTA_CAP)


def delta_max_many(tr_m_minus_e, x, y):
    """Vectorised delta_max over aligned arrays; same branch logic."""
    c = np.asarray(tr_m_minus_e, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if (x < 0).any() or (y < 0).any():
        raise ValueError("x and y must be nonnegative")
    denom = np.sqrt(2.0) * x + np.sqrt(2.0 * x * x + 4.0 * y * np.maximum(c, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0.0, 2.0 * np.maximum(c, 0.0) / np.where(denom > 0, denom, 1.0), np.inf)
    s = np.minimum(s, _CAP_ROOT)
    out = np.minimum(s * s, DELTA_CAP)
    out = np.where(c <= 0.0, 0.0, out)
    return out
