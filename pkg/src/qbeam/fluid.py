"""Closed-form fluid value function for delay-priced queues.

Each stable flow (lam < rate) gets a convex value function J(q) describing
the long-run cost-to-go of a backlog q under the optimal threshold power
policy of the single-flow fluid limit.  J is available only parametrically:
both q and J are closed forms in the costate y = J'(q), built from the
exponential integral.  The multi-flow approximation adds a pairwise
coupling correction with coefficients D[k, j] and is what the controller
differentiates to price urgency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FlowParams

# Backlogs below this floor are treated as zero inside q*ln(q) terms; keeps
# the value finite and continuous with V(0) = 0.
Q_FLOOR = 1e-6

_SERIES_TERMS = 40
_LENTZ_TINY = 1e-300
_LENTZ_EPS = 1e-15
_LENTZ_MAX = 200


def exp_integral_e1(x):
    """Exponential integral E1(x) = int_x^inf exp(-t)/t dt for x > 0.

    Power series below x = 1, modified Lentz continued fraction above.
    Relative error is held near 1e-12 (1e-10 guaranteed) on both branches.
    Accepts scalars or arrays; scalar in, scalar out.
    """
    scalar = np.ndim(x) == 0
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x_arr <= 0):
        raise ValueError("E1 is only evaluated for x > 0")
    out = np.empty_like(x_arr)

    small = x_arr <= 1.0
    if np.any(small):
        xs = x_arr[small]
        # E1(x) = -euler_gamma - ln x + sum_{n>=1} (-1)^(n+1) x^n / (n * n!)
        acc = np.zeros_like(xs)
        term = np.ones_like(xs)
        for n in range(1, _SERIES_TERMS + 1):
            term = term * (-xs) / n
            acc -= term / n
        out[small] = -np.euler_gamma - np.log(xs) + acc

    large = ~small
    if np.any(large):
        xl = x_arr[large]
        # E1(x) = exp(-x) * cf, cf = 1/(x+1-) 1^2/(x+3-) 2^2/(x+5-) ...
        f = xl + 1.0
        c = f.copy()
        d = np.zeros_like(xl)
        for n in range(1, _LENTZ_MAX + 1):
            a = -float(n * n)
            b = xl + 2.0 * n + 1.0
            d = b + a * d
            d[np.abs(d) < _LENTZ_TINY] = _LENTZ_TINY
            c = b + a / c
            c[np.abs(c) < _LENTZ_TINY] = _LENTZ_TINY
            d = 1.0 / d
            delta = c * d
            f = f * delta
            if np.all(np.abs(delta - 1.0) < _LENTZ_EPS):
                break
        out[large] = np.exp(-xl) / f

    if scalar:
        return float(out[0])
    return out.reshape(np.shape(x))


@dataclass(frozen=True)
class PerFlowFluid:
    """Parametric fluid value function of one stable flow.

    Attributes
    ----------
    flow : FlowParams
    a : float
        SINR threshold 2^rate - 1.
    c_inf : float
        Steady-state power cost holding the fluid queue at zero.
    y0 : float
        Costate at zero backlog, J'(0); also the left end of the legal
        parameter range.
    b : float
        Integration constant fixing J(0) = 0.
    """

    flow: FlowParams
    a: float
    c_inf: float
    y0: float
    b: float

    def _check_domain(self, y):
        if np.any(np.asarray(y) < self.y0 * (1.0 - 1e-12)):
            raise ValueError(f"parametric curve is defined for y >= y0 = {self.y0}")

    def q_of_y(self, y):
        """Backlog q at costate y; strictly increasing from q(y0) = 0."""
        self._check_domain(y)
        f = self.flow
        y = np.asarray(y, dtype=float)
        x = self.a / (f.rate * y)
        val = (f.lam / f.gamma) * (
            f.rate * np.exp(-x) * y - f.lam * y - self.a * exp_integral_e1(x) + self.c_inf
        )
        # clip the rounding dust at the q(y0) = 0 boundary
        return float(np.maximum(val, 0.0)) if val.ndim == 0 else np.maximum(val, 0.0)

    def j_of_y(self, y):
        """Fluid value J at costate y, normalised so J(y0) = 0."""
        self._check_domain(y)
        return self._j_raw(y) + self.b

    def _j_raw(self, y):
        f = self.flow
        y = np.asarray(y, dtype=float)
        x = self.a / (f.rate * y)
        val = (f.lam / f.gamma) * (
            0.5 * (f.rate * y - self.a) * y * np.exp(-x)
            - 0.5 * f.lam * y * y
            + (self.a**2 / (2.0 * f.rate)) * exp_integral_e1(x)
        )
        return float(val) if val.ndim == 0 else val

    def j_prime(self, q):
        """Costate y = J'(q), inverting q_of_y by bracketed bisection.

        The bracket starts at [y0, 2*y0] and doubles its upper end until it
        covers q (monotonicity guarantees this terminates), then bisection
        runs under a 200-iteration cap.  The stopping rule is deliberately
        tighter than the contractual |q(y) - q| <= 1e-10 * max(1, q): it
        also pins the bracket width, because dq/dy vanishes at y0 and the
        downstream finite-difference checks need J itself at ~1e-10
        absolute accuracy.  Each array lane freezes independently once
        converged, so results never depend on what else shares the batch.
        Accepts scalars or arrays.
        """
        q_arr = np.asarray(q, dtype=float)
        scalar = q_arr.ndim == 0
        q_arr = np.atleast_1d(q_arr).astype(float)
        if np.any(q_arr < 0):
            raise ValueError("backlog must be nonnegative")

        lo = np.full(q_arr.shape, self.y0)
        hi = np.full(q_arr.shape, 2.0 * self.y0)
        for _ in range(200):
            need = self.q_of_y(hi) < q_arr
            if not np.any(need):
                break
            hi[need] *= 2.0

        tol = 1e-12 * np.maximum(1.0, q_arr)
        mid = lo.copy()
        active = np.ones(q_arr.shape, dtype=bool)
        for _ in range(200):
            m = 0.5 * (lo + hi)
            mid[active] = m[active]
            err = self.q_of_y(mid) - q_arr
            done = (np.abs(err) <= tol) & (hi - lo <= 1e-12 * np.maximum(1.0, mid))
            active &= ~done
            if not np.any(active):
                break
            high = active & (err > 0)
            low = active & ~(err > 0)
            hi[high] = mid[high]
            lo[low] = mid[low]
        mid[q_arr == 0.0] = self.y0
        return float(mid[0]) if scalar else mid

    def j_at_q(self, q):
        """Fluid value J(q) through the parametric inverse."""
        return self.j_of_y(self.j_prime(q))

    def ode_residual(self, y):
        """Left side of the stationary fluid equation at costate y.

        Zero along the parametric curve; evaluating it is the fidelity
        check that the closed forms actually solve the equation.
        """
        self._check_domain(y)
        f = self.flow
        y = np.asarray(y, dtype=float)
        x = self.a / (f.rate * y)
        q = self.q_of_y(y)
        val = (
            self.a * exp_integral_e1(x)
            + f.gamma * q / f.lam
            - self.c_inf
            + y * (-f.rate * np.exp(-x) + f.lam)
        )
        return float(val) if val.ndim == 0 else val


def build_per_flow(flow: FlowParams) -> PerFlowFluid:
    """Construct the fluid value function of one flow.

    The costate at zero backlog solves rate*exp(-a/(rate*y0)) = lam, which
    gives y0 = a / (rate * ln(rate/lam)) analytically; the steady-state
    cost c_inf then makes q(y0) = 0 and b makes J(0) = 0.
    """
    if not flow.lam < flow.rate:
        raise ValueError("fluid value function needs a stable flow (lam < rate)")
    a = flow.a
    log_ratio = np.log(flow.rate / flow.lam)
    y0 = a / (flow.rate * log_ratio)
    c_inf = a * exp_integral_e1(log_ratio)
    pf = PerFlowFluid(flow=flow, a=a, c_inf=c_inf, y0=y0, b=0.0)
    b = -pf._j_raw(y0)
    pf = PerFlowFluid(flow=flow, a=a, c_inf=c_inf, y0=y0, b=b)
    assert abs(pf.q_of_y(y0)) <= 1e-8 and abs(pf.j_of_y(y0)) <= 1e-8
    return pf


def coupling_coeff(flows, k: int, j: int) -> float:
    """Pairwise interference-coupling coefficient D[k, j], k != j."""
    if k == j:
        raise ValueError("coupling is defined for distinct flows")
    fk, fj = flows[k], flows[j]
    for f in (fk, fj):
        if not f.lam < f.rate:
            raise ValueError("coupling requires stable flows")
    num = fk.gamma * fk.a * fj.a
    den = fk.lam * (fk.rate - fk.lam) * (fj.rate - fj.lam) * 2.0 ** (fk.rate - 1.0) * np.log(2.0)
    return num / den


def coupling_matrix(flows) -> np.ndarray:
    """K x K matrix of coupling coefficients with a zero diagonal."""
    K = len(flows)
    D = np.zeros((K, K))
    for k in range(K):
        for j in range(K):
            if k != j:
                D[k, j] = coupling_coeff(flows, k, j)
    return D


def _ln_plus(q):
    """ln(max(q, Q_FLOOR)) gated to zero at q == 0."""
    q = np.asarray(q, dtype=float)
    return np.where(q > 0, np.log(np.maximum(q, Q_FLOOR)), 0.0)


class ApproxValue:
    """Multi-flow approximate value function and its gradient.

    V(Q) = sum_k J_k(Q_k) + sum_k sum_{j != k} eps_k D[k,j] Q_k Q_j ln+ Q_j.

    The cross terms price how flow j's backlog amplifies flow k's cost
    through interference; they vanish with the CSIT error.
    """

    def __init__(self, flows):
        self.flows = list(flows)
        self.pfs = [build_per_flow(f) for f in self.flows]
        self.D = coupling_matrix(self.flows)
        self.eps = np.array([f.eps for f in self.flows])
        self.y0 = np.array([pf.y0 for pf in self.pfs])

    def value(self, q) -> float:
        q = np.asarray(q, dtype=float)
        total = sum(pf.j_at_q(qk) for pf, qk in zip(self.pfs, q))
        lq = _ln_plus(q)
        cross = self.eps * (self.D @ (q * lq)) @ q
        return float(total + cross)

    def gradient(self, q) -> np.ndarray:
        """Exact gradient of value(); rows follow the flow order.

        Component m collects the direct fluid slope J'_m, the cross terms
        where Q_m multiplies other queues, and the cross terms where Q_m
        sits inside q*ln(q) (gated off below the floor).
        """
        q = np.asarray(q, dtype=float)
        g = np.array([pf.j_prime(qm) for pf, qm in zip(self.pfs, q)])
        lq = _ln_plus(q)
        g = g + self.eps * (self.D @ (q * lq))
        inner = (lq + 1.0) * (q > Q_FLOOR)
        g = g + inner * ((self.eps * q) @ self.D)
        return g

    def gradient_many(self, q_rows) -> np.ndarray:
        """Vectorised gradient over an (n, K) stack of queue states."""
        q_rows = np.asarray(q_rows, dtype=float)
        g = np.column_stack([pf.j_prime(q_rows[:, m]) for m, pf in enumerate(self.pfs)])
        lq = _ln_plus(q_rows)
        g = g + self.eps * (q_rows * lq) @ self.D.T
        inner = (lq + 1.0) * (q_rows > Q_FLOOR)
        g = g + inner * ((self.eps * q_rows) @ self.D)
        return g
