"""Shared brute-force oracles for the test suite.

Everything here is deliberately independent of the package's own numerics:
quadrature instead of series expansions, direct sampling instead of closed
forms, dense enumeration instead of solvers.
"""

import numpy as np
from scipy.integrate import quad


def e1_quadrature(x: float) -> float:
    """E1(x) by adaptive quadrature, split at t = 1 for small x.

    For x >= 1 the substitution t = x + s factors out exp(-x), so the
    quadrature works on an O(1/x) integrand and stays accurate in a
    relative sense even when E1 itself underflows toward zero.
    """
    f = lambda t: np.exp(-t) / t
    if x < 1.0:
        head, _ = quad(f, x, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
        tail, _ = quad(f, 1.0, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)
        return head + tail
    g = lambda s: np.exp(-s) / (x + s)
    val, _ = quad(g, 0.0, np.inf, epsabs=1e-300, epsrel=1e-13, limit=200)
    return float(np.exp(-x) * val)


def central_difference(f, q, m, h):
    """Two-sided difference quotient of a scalar field along coordinate m."""
    qp = np.array(q, dtype=float)
    qm = np.array(q, dtype=float)
    qp[m] += h
    qm[m] -= h
    return (f(qp) - f(qm)) / (2.0 * h)


def random_stable_flow(rng, eps=None):
    """Random FlowParams drawn well inside the stability region.

    Rates are kept at or below 1.5 bit/s/Hz: the q^2 asymptote of the
    fluid value carries an a*log(q) correction whose constant grows with
    2^rate, and above that the q = 1e3 checkpoints drift outside the
    +/-5 percent band the asymptotic checks use.
    """
    from qbeam.model import FlowParams

    rate = float(rng.uniform(0.1, 1.5))
    lam = float(rate * rng.uniform(0.3, 0.95))
    gamma = float(rng.uniform(0.1, 10.0))
    e = float(rng.uniform(0.01, 0.5)) if eps is None else eps
    return FlowParams(rate=rate, lam=lam, gamma=gamma, eps=e)


def psd_project_2x2_bruteforce(S, grid=401, radius=None):
    """Nearest-PSD search for 2x2 symmetric matrices on a dense grid.

    Parametrises candidates by eigenvalue clamping of rotated bases and
    scans rotation angles; only used to sanity-check the analytic
    projection on tiny cases.
    """
    best = None
    best_d = np.inf
    for theta in np.linspace(0, np.pi, grid):
        c, s = np.cos(theta), np.sin(theta)
        u = np.array([[c, -s], [s, c]])
        d = np.diag(u.T @ S @ u)
        cand = u @ np.diag(np.maximum(d, 0.0)) @ u.T
        # keep only PSD candidates (off-diagonal residue can break it)
        w = np.linalg.eigvalsh(cand)
        if w.min() < -1e-12:
            continue
        dist = np.linalg.norm(cand - S)
        if dist < best_d:
            best_d = dist
            best = cand
    return best, best_d
