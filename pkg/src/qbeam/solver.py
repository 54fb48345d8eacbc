"""Self-contained operator-splitting solver for small cone programs.

Standard form: minimize c.x subject to Ax + s = b, s in K, where K is an
ordered product of zero, nonnegative, second-order, real PSD, and
complex Hermitian PSD cones (real PSD blocks travel as scaled
lower-triangle vectors, see la.svec; Hermitian ones as la.hvec
coordinates).

The method is Douglas-Rachford splitting on the homogeneous self-dual
embedding: a skew-symmetric linear feasibility problem whose solutions
encode either an optimal primal-dual pair or an infeasibility
certificate through the (tau, kappa) coordinates.  Each iteration is one
structured linear solve plus one cone projection, so the per-iteration
cost is tiny at the problem sizes generated here (tens of variables, a
few hundred rows); no step-size parameter is needed.

A vectorised multi-instance path (solve_many) runs independent problem
instances in lockstep with per-lane convergence freezing.  Lanes never
exchange data, so results are bit-identical to solving each instance
alone; the single-problem solve() is literally a one-lane batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .la import (  # noqa: F401  (hermitian_embed re-exported as a public op)
    embed_extract,
    hermitian_embed,
    hvec,
    hvec_dim,
    hvec_inv,
    norm_rows,
    psd_part_herm,
    svec,
    svec_dim,
    svec_inv,
)

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
MAXITER = "MaxIter"

_VALID_KINDS = ("zero", "nonneg", "soc", "psd", "psdc")


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in _VALID_KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("cone block size must be >= 1")
        if self.kind == "soc" and self.n < 2:
            raise ValueError("second-order cone needs dimension >= 2")

    @property
    def coords(self) -> int:
        # psd blocks store svec(side x side); psdc blocks hvec(side x side)
        if self.kind == "psd":
            return svec_dim(self.n)
        if self.kind == "psdc":
            return hvec_dim(self.n)
        return self.n


def Zero(n: int) -> ConeBlock:
    return ConeBlock("zero", n)


def NonNeg(n: int) -> ConeBlock:
    return ConeBlock("nonneg", n)


def SecondOrder(n: int) -> ConeBlock:
    return ConeBlock("soc", n)


def PsdReal(n: int) -> ConeBlock:
    return ConeBlock("psd", n)


def PsdComplex(n: int) -> ConeBlock:
    """Hermitian PSD cone of side n, carried as hvec coordinates.

    hvec is an isometry from Hermitian matrices onto R^{n^2}, so the cone
    is self-dual in coordinate space and projects by eigenvalue clipping
    of the reassembled matrix; no real 2n x 2n embedding is involved.
    """
    return ConeBlock("psdc", n)


@dataclass(frozen=True)
class ConeSpec:
    """Ordered cone blocks; the product must cover all problem rows."""

    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for blk in self.blocks:
            if not isinstance(blk, ConeBlock):
                raise TypeError("ConeSpec expects ConeBlock entries")

    @property
    def total_dim(self) -> int:
        return sum(b.coords for b in self.blocks)

    def ranges(self):
        out, pos = [], 0
        for blk in self.blocks:
            out.append((blk, pos, pos + blk.coords))
            pos += blk.coords
        return out


@dataclass
class ConicProblem:
    """min c.x  s.t.  Ax + s = b,  s in cones."""

    c: np.ndarray
    A: object  # dense ndarray or scipy.sparse matrix
    b: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        A = self.A
        if hasattr(A, "toarray"):
            dense = A.toarray()
        else:
            dense = np.asarray(A, dtype=float)
        if dense.ndim != 2:
            raise ValueError("A must be a matrix")
        m, n = dense.shape
        if self.c.shape != (n,) or self.b.shape != (m,):
            raise ValueError("dimension mismatch between c, A, b")
        if self.cones.total_dim != m:
            raise ValueError("cone dimensions do not match row count")
        # Zero rows are a construction bug, with one structural exception:
        # Hermitian embeddings put Im(diagonal) coordinates inside psd
        # blocks, and those are identically zero for every Hermitian
        # argument.  Allow a zero row only there, and only with b = 0.
        zero_rows = np.where(np.abs(dense).sum(axis=1) == 0.0)[0]
        if zero_rows.size:
            allowed = np.zeros(m, dtype=bool)
            for blk, lo, hi in self.cones.ranges():
                if blk.kind == "psd":
                    allowed[lo:hi] = True
            bad = [int(i) for i in zero_rows if not (allowed[i] and self.b[i] == 0.0)]
            if bad:
                raise ValueError(f"all-zero rows in A at {bad}")
        self._dense = dense

    def dense_A(self) -> np.ndarray:
        return self._dense


@dataclass
class ConicSolution:
    x: np.ndarray
    s: np.ndarray
    dual: np.ndarray
    status: str
    primal_res: float
    dual_res: float
    gap: float
    iterations: int
    objective: float


# cone projections ---------------------------------------------------------


def project_soc(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {(t, u): ||u|| <= t}."""
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        raise ValueError("second-order cone vector needs length >= 2")
    t, u = v[0], v[1:]
    nu = float(np.linalg.norm(u))
    if nu <= t:
        return v.copy()
    if nu <= -t:
        return np.zeros_like(v)
    coef = (t + nu) / 2.0
    out = np.empty_like(v)
    out[0] = coef
    out[1:] = (coef / nu) * u
    return out


def project_psd(S: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm; input must be symmetric."""
    S = np.asarray(S, dtype=float)
    if np.abs(S - S.T).max(initial=0.0) > 1e-10 * max(1.0, np.abs(S).max(initial=0.0)):
        raise ValueError("matrix is not symmetric")
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    lam = np.maximum(lam, 0.0)
    return (U * lam) @ U.T


def _soc_project_stack(W: np.ndarray) -> np.ndarray:
    """Vectorised SOC projection over the last axis of (..., d) stacks."""
    t = W[..., 0]
    u = W[..., 1:]
    # order-stable norm: this runs inside the lockstep iteration, where
    # batch-size-independent bits are part of the contract
    nu = norm_rows(u)
    inside = nu <= t
    polar = nu <= -t
    boundary = ~(inside | polar)
    coef = 0.5 * (t + nu)
    out = np.zeros_like(W)
    out[inside] = W[inside]
    safe = np.where(nu > 0.0, nu, 1.0)
    scale = np.where(boundary, coef / safe, 0.0)
    out[..., 0] = np.where(boundary, coef, out[..., 0])
    out[..., 1:] = np.where(boundary[..., None], scale[..., None] * u, out[..., 1:])
    return out


def _psd_project_stack(W: np.ndarray, side: int) -> np.ndarray:
    """Projection of svec'd real symmetric stacks onto the PSD cone."""
    S = svec_inv(W, side)
    lam, U = np.linalg.eigh(S)
    lam = np.maximum(lam, 0.0)
    P = (U * lam[..., None, :]) @ np.swapaxes(U, -1, -2)
    return svec(P)


def _psd_project_stack_embedded(W: np.ndarray, side: int) -> np.ndarray:
    """Projection onto {svec(T(M)): M Hermitian PSD}, T the real embedding.

    Exact for arbitrary input: first the orthogonal projection onto the
    embedding image (embed_extract), then the Hermitian PSD projection,
    then re-embedding.  Works on the complex half-size matrix, where
    sides 2 and 3 get the closed-form clipping (la.psd_part_herm) instead
    of per-matrix LAPACK calls.
    """
    M = embed_extract(svec_inv(W, side))
    return svec(hermitian_embed(psd_part_herm(M)).real)


def cone_distance(s: np.ndarray, cones: ConeSpec) -> float:
    """Euclidean distance from s to the cone product."""
    s = np.asarray(s, dtype=float)
    gap2 = 0.0
    for blk, lo, hi in cones.ranges():
        seg = s[lo:hi]
        if blk.kind == "zero":
            proj = np.zeros_like(seg)
        elif blk.kind == "nonneg":
            proj = np.maximum(seg, 0.0)
        elif blk.kind == "soc":
            proj = project_soc(seg)
        elif blk.kind == "psdc":
            proj = hvec(psd_part_herm(hvec_inv(seg, blk.n)))
        else:
            proj = _psd_project_stack(seg[None, :], blk.n)[0]
        gap2 += float(np.sum((seg - proj) ** 2))
    return float(np.sqrt(gap2))


# batched core --------------------------------------------------------------


@dataclass
class _Layout:
    nonneg_idx: np.ndarray
    zero_idx: np.ndarray
    soc_groups: list  # (dim, index matrix (nblk, dim))
    psd_groups: list  # (side, embedded, index matrix (nblk, coords))
    psdc_groups: list  # (side, index matrix (nblk, side^2))


def _build_layout(cones: ConeSpec, embedded) -> _Layout:
    embedded = frozenset(embedded)
    nonneg, zero = [], []
    soc, psd, psdc = {}, {}, {}
    for bi, (blk, lo, hi) in enumerate(cones.ranges()):
        if blk.kind == "nonneg":
            nonneg.extend(range(lo, hi))
        elif blk.kind == "zero":
            zero.extend(range(lo, hi))
        elif blk.kind == "soc":
            soc.setdefault(blk.n, []).append(lo)
        elif blk.kind == "psdc":
            psdc.setdefault(blk.n, []).append(lo)
        else:
            if bi in embedded and blk.n % 2 != 0:
                raise ValueError("embedded psd block must have even side")
            psd.setdefault((blk.n, bi in embedded), []).append(lo)
    soc_groups = [
        (d, np.asarray(starts)[:, None] + np.arange(d)[None, :])
        for d, starts in sorted(soc.items())
    ]
    psd_groups = [
        (side, emb, np.asarray(starts)[:, None] + np.arange(svec_dim(side))[None, :])
        for (side, emb), starts in sorted(psd.items())
    ]
    psdc_groups = [
        (side, np.asarray(starts)[:, None] + np.arange(hvec_dim(side))[None, :])
        for side, starts in sorted(psdc.items())
    ]
    return _Layout(
        nonneg_idx=np.asarray(nonneg, dtype=int),
        zero_idx=np.asarray(zero, dtype=int),
        soc_groups=soc_groups,
        psd_groups=psd_groups,
        psdc_groups=psdc_groups,
    )


def _project_dual_cone_inplace(W: np.ndarray, lay: _Layout) -> None:
    """Project (L, m) rows onto the dual cone K* of the product.

    Zero cone dualises to the free cone (no-op); nonneg, SOC, PSD, and
    hvec-coordinate Hermitian PSD are self-dual.  Embedded-image PSD
    blocks are not self-dual inside svec space, so they use the Moreau
    identity P_{C*}(w) = w + P_C(-w).
    """
    if W.size == 0:
        return
    if len(lay.nonneg_idx):
        W[:, lay.nonneg_idx] = np.maximum(W[:, lay.nonneg_idx], 0.0)
    for d, idx in lay.soc_groups:
        W[:, idx] = _soc_project_stack(W[:, idx])
    for side, idx in lay.psdc_groups:
        W[:, idx] = hvec(psd_part_herm(hvec_inv(W[:, idx], side)))
    for side, emb, idx in lay.psd_groups:
        if emb:
            W[:, idx] += _psd_project_stack_embedded(-W[:, idx], side)
        else:
            W[:, idx] = _psd_project_stack(W[:, idx], side)


def _ruiz_equilibrate(A, b, c, lay, iters=6):
    """Per-lane Ruiz row/column scaling plus b/c norm normalisation.

    Row scales must be uniform within each SOC/PSD block: a single
    positive scalar per block maps the cone onto itself, so scaled
    slacks/duals stay members exactly.  Zero and nonneg rows scale
    per-row.  Columns scale freely.  The sweeps update a magnitude
    matrix only (scaling commutes with abs), so A is touched twice: one
    abs at entry and one fused rescale at exit.  Returns the scaled
    problem and the scale vectors; callers map iterates back via
    x = dc*xh/sb, s = sh/(dr*sb), y = dr*yh/sc.
    """
    B, m, n = A.shape
    dr = np.ones((B, m))
    dc = np.ones((B, n))
    Habs = np.abs(A)
    groups = [idx for _, idx in lay.soc_groups]
    groups += [idx for _, _, idx in lay.psd_groups]
    groups += [idx for _, idx in lay.psdc_groups]
    for _ in range(iters):
        rn = Habs.max(axis=2)
        for idx in groups:
            rn[:, idx] = rn[:, idx].max(axis=2, keepdims=True)
        rs = np.where(rn > 0.0, 1.0 / np.sqrt(rn), 1.0)
        Habs *= rs[:, :, None]
        cn = Habs.max(axis=1)
        cs = np.where(cn > 0.0, 1.0 / np.sqrt(cn), 1.0)
        Habs *= cs[:, None, :]
        dr *= rs
        dc *= cs
    Ah = A * dr[:, :, None]
    Ah *= dc[:, None, :]
    bh = b * dr
    ch = c * dc
    # these feed data scales, so they must associate identically at any
    # batch size; the residual norms below feed only status decisions
    nb = norm_rows(bh)
    nc = norm_rows(ch)
    sb = np.where(nb > 1e-12, 1.0 / np.maximum(nb, 1e-12), 1.0)
    sc = np.where(nc > 1e-12, 1.0 / np.maximum(nc, 1e-12), 1.0)
    bh *= sb[:, None]
    ch *= sc[:, None]
    return Ah, bh, ch, dr, dc, sb, sc


@dataclass
class BatchSolution:
    x: np.ndarray
    s: np.ndarray
    dual: np.ndarray
    status: list
    primal_res: np.ndarray
    dual_res: np.ndarray
    gap: np.ndarray
    iterations: np.ndarray
    objective: np.ndarray

    def single(self, i: int = 0) -> ConicSolution:
        return ConicSolution(
            x=self.x[i],
            s=self.s[i],
            dual=self.dual[i],
            status=self.status[i],
            primal_res=float(self.primal_res[i]),
            dual_res=float(self.dual_res[i]),
            gap=float(self.gap[i]),
            iterations=int(self.iterations[i]),
            objective=float(self.objective[i]),
        )


_STALL_WINDOW = 500
_STALL_FACTOR = 0.99


def solve_many(
    A: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    cones: ConeSpec,
    *,
    embedded=(),
    tol: float = 1e-7,
    max_iter: int = 20000,
    check_every: int = 25,
    alpha: float = 1.8,
    initial: np.ndarray | None = None,
    equilibrate: bool = True,
) -> BatchSolution:
    """Solve a batch of same-structure cone programs in lockstep.

    A: (B, m, n), b: (B, m), c: (B, n) or (n,) shared.  `embedded` lists
    cone-block indices whose PsdReal(2q) block is the real embedding of a
    Hermitian q x q variable; those lanes use the cheaper complex-eig
    projection.  Converged lanes freeze and drop out of the iteration, so
    batch composition never changes any lane's arithmetic.

    Each lane is Ruiz-equilibrated before iterating (its own data only,
    so lockstep bit-identity across batch compositions is untouched);
    residuals, gaps, objective values, and certificates are always
    computed and reported in the caller's original scaling.
    """
    A = np.asarray(A, dtype=float)
    B, m, n = A.shape
    b = np.broadcast_to(np.asarray(b, dtype=float), (B, m)).copy()
    c = np.broadcast_to(np.asarray(c, dtype=float), (B, n)).copy()
    if cones.total_dim != m:
        raise ValueError("cone dimensions do not match row count")
    lay = _build_layout(cones, embedded)

    # termination thresholds refer to the caller's scaling throughout
    norm_b = np.linalg.norm(b, axis=1)
    norm_c = np.linalg.norm(c, axis=1)
    if equilibrate:
        A, b, c, dr, dc, sb, sc = _ruiz_equilibrate(A, b, c, lay)
    else:
        dr = np.ones((B, m))
        dc = np.ones((B, n))
        sb = np.ones(B)
        sc = np.ones(B)
    col_map = dc / sb[:, None]  # x = col_map * xh
    row_div = dr * sb[:, None]  # s = sh / row_div, primal residual likewise
    y_map = dr / sc[:, None]  # y = y_map * yh
    dres_div = dc * sc[:, None]
    gap_scale = 1.0 / (sb * sc)

    # structured (I + Q)^-1 pieces, per lane
    At = np.swapaxes(A, 1, 2)
    G = np.eye(n) + At @ A
    Ginv = np.linalg.inv(G)
    Atb = np.einsum("lmn,lm->ln", A, b)
    gx = np.einsum("lij,lj->li", Ginv, c - Atb)
    gy = b + np.einsum("lmn,ln->lm", A, gx)
    hg = np.einsum("li,li->l", c, gx) + np.einsum("li,li->l", b, gy)

    N = n + m + 1
    u = np.zeros((B, N))
    v = np.zeros((B, N))
    u[:, -1] = 1.0
    v[:, -1] = 1.0
    if initial is not None:
        # warm starts arrive in the caller's coordinates
        u[:, :n] = np.broadcast_to(np.asarray(initial, dtype=float), (B, n)) / col_map

    # outputs
    out_x = np.zeros((B, n))
    out_s = np.zeros((B, m))
    out_y = np.zeros((B, m))
    out_status = [MAXITER] * B
    out_pres = np.full(B, np.inf)
    out_dres = np.full(B, np.inf)
    out_gap = np.full(B, np.inf)
    out_iter = np.zeros(B, dtype=int)
    out_obj = np.full(B, np.nan)

    live = np.arange(B)
    alpha_vec = np.full(B, alpha)
    best_metric = np.full(B, np.inf)
    snap_metric = np.full(B, np.inf)
    restarted = np.zeros(B, dtype=bool)
    next_snap = np.full(B, _STALL_WINDOW)

    it = 0
    while live.size and it < max_iter:
        steps = min(check_every, max_iter - it)
        al = alpha_vec[live][:, None]
        Al, bl, cl = A[live], b[live], c[live]
        Ginvl, gxl, gyl, hgl = Ginv[live], gx[live], gy[live], hg[live]
        ul, vl = u[live], v[live]
        for _ in range(steps):
            w = ul + vl
            wx, wy, wt = w[:, :n], w[:, n:-1], w[:, -1]
            rhs = wx - np.einsum("lmn,lm->ln", Al, wy)
            p = np.einsum("lij,lj->li", Ginvl, rhs)
            q = wy + np.einsum("lmn,ln->lm", Al, p)
            zt = (wt + np.einsum("li,li->l", cl, p) + np.einsum("li,li->l", bl, q)) / (1.0 + hgl)
            ubar = np.empty_like(w)
            ubar[:, :n] = p - zt[:, None] * gxl
            ubar[:, n:-1] = q - zt[:, None] * gyl
            ubar[:, -1] = zt
            ubar *= al
            ubar += (1.0 - al) * ul
            t = ubar - vl
            unew = t.copy()
            _project_dual_cone_inplace(unew[:, n:-1], lay)
            unew[:, -1] = np.maximum(t[:, -1], 0.0)
            vl = vl + unew - ubar
            ul = unew
        u[live], v[live] = ul, vl
        it += steps

        # per-lane convergence / certificate / stall assessment
        tau = ul[:, -1]
        xs = ul[:, :n]
        ys = ul[:, n:-1]
        ss = vl[:, n:-1]
        finite = np.isfinite(ul).all(axis=1) & np.isfinite(vl).all(axis=1)

        tau_safe = np.where(tau > 0, tau, 1.0)
        xh = xs / tau_safe[:, None]
        yh = ys / tau_safe[:, None]
        sh = ss / tau_safe[:, None]
        cm = col_map[live]
        rd = row_div[live]
        ym = y_map[live]
        dd = dres_div[live]
        gs = gap_scale[live]
        Axs = np.einsum("lmn,ln->lm", Al, xh)
        pres = np.linalg.norm((Axs + sh - bl) / rd, axis=1) / (1.0 + norm_b[live])
        Aty = np.einsum("lmn,lm->ln", Al, yh)
        dres = np.linalg.norm((Aty + cl) / dd, axis=1) / (1.0 + norm_c[live])
        cx = np.einsum("li,li->l", cl, xh) * gs
        by = np.einsum("li,li->l", bl, yh) * gs
        gap = cx + by
        gapn = np.abs(gap) / (1.0 + np.abs(cx))
        metric = np.maximum(np.maximum(pres, dres), gapn)
        metric = np.where(tau > 1e-9, metric, np.inf)
        opt = finite & (tau > 1e-9) & (metric <= tol)

        # infeasibility certificates from the raw (tau-free) iterate
        by_raw = np.einsum("li,li->l", bl, ys) * gs
        Aty_raw = np.einsum("lmn,lm->ln", Al, ys) / dd
        with np.errstate(divide="ignore", invalid="ignore"):
            pcert = np.where(
                by_raw < -1e-12,
                np.linalg.norm(Aty_raw, axis=1) / np.maximum(-by_raw, 1e-300),
                np.inf,
            )
        cx_raw = np.einsum("li,li->l", cl, xs) * gs
        Axps = (np.einsum("lmn,ln->lm", Al, xs) + ss) / rd
        with np.errstate(divide="ignore", invalid="ignore"):
            dcert = np.where(
                cx_raw < -1e-12,
                np.linalg.norm(Axps, axis=1) / np.maximum(-cx_raw, 1e-300),
                np.inf,
            )
        infeas = finite & ~opt & (pcert <= tol)
        unbnd = finite & ~opt & ~infeas & (dcert <= tol)

        done = opt | infeas | unbnd | ~finite
        idx = live

        # stall bookkeeping on still-running lanes
        run_mask = ~done
        bm = best_metric[idx]
        best_metric[idx] = np.minimum(bm, np.where(np.isfinite(metric), metric, bm))
        due = run_mask & (it >= next_snap[idx])
        if due.any():
            stalled = due & (best_metric[idx] > _STALL_FACTOR * snap_metric[idx])
            fresh = stalled & ~restarted[idx]
            if fresh.any():
                # one over-relaxation restart: drop to plain alpha = 1
                g = idx[fresh]
                alpha_vec[g] = 1.0
                restarted[g] = True
                stalled = stalled & ~fresh
            if stalled.any():
                done = done | stalled
            snap_metric[idx[due]] = best_metric[idx[due]]
            next_snap[idx[due]] = it + _STALL_WINDOW

        if done.any():
            g = idx[done]
            o = opt[done]
            inf_ = infeas[done]
            unb = unbnd[done]
            out_iter[g] = it
            out_pres[g] = pres[done]
            out_dres[g] = dres[done]
            out_gap[g] = gap[done]
            # tau-scaled pair (equals the raw iterate when tau ~ 0)
            out_x[g] = (xh * cm)[done]
            out_s[g] = (sh / rd)[done]
            out_y[g] = (yh * ym)[done]
            out_obj[g] = np.where(o | (tau[done] > 1e-9), cx[done], np.nan)
            for j, lane in enumerate(g):
                if o[j]:
                    out_status[lane] = OPTIMAL
                elif inf_[j]:
                    out_status[lane] = INFEASIBLE
                    nrm = -by_raw[done][j]
                    out_y[lane] = (ys * ym)[done][j] / nrm
                elif unb[j]:
                    out_status[lane] = UNBOUNDED
                    nrm = -cx_raw[done][j]
                    out_x[lane] = (xs * cm)[done][j] / nrm
                    out_s[lane] = (ss / rd)[done][j] / nrm
                else:
                    out_status[lane] = MAXITER
            live = idx[~done]

    if live.size:
        # ran out of iterations: best-effort scaled extraction
        tau = u[live, -1]
        tau_safe = np.where(tau > 1e-9, tau, 1.0)
        xh = u[live, :n] / tau_safe[:, None]
        yh = u[live, n:-1] / tau_safe[:, None]
        sh = v[live, n:-1] / tau_safe[:, None]
        out_x[live] = xh * col_map[live]
        out_y[live] = yh * y_map[live]
        out_s[live] = sh / row_div[live]
        out_iter[live] = it
        for lane in live:
            out_status[lane] = MAXITER
        Axs = np.einsum("lmn,ln->lm", A[live], xh)
        out_pres[live] = np.linalg.norm(
            (Axs + sh - b[live]) / row_div[live], axis=1
        ) / (1.0 + norm_b[live])
        Aty = np.einsum("lmn,lm->ln", A[live], yh)
        out_dres[live] = np.linalg.norm(
            (Aty + c[live]) / dres_div[live], axis=1
        ) / (1.0 + norm_c[live])
        cx = np.einsum("li,li->l", c[live], xh) * gap_scale[live]
        by = np.einsum("li,li->l", b[live], yh) * gap_scale[live]
        out_gap[live] = cx + by
        out_obj[live] = cx

    return BatchSolution(
        x=out_x,
        s=out_s,
        dual=out_y,
        status=out_status,
        primal_res=out_pres,
        dual_res=out_dres,
        gap=out_gap,
        iterations=out_iter,
        objective=out_obj,
    )


def solve(
    p: ConicProblem,
    tol: float = 1e-7,
    max_iter: int = 20000,
    *,
    initial: np.ndarray | None = None,
) -> ConicSolution:
    """Solve one cone program; see module docstring for the method."""
    A = p.dense_A()
    res = solve_many(
        A[None, :, :],
        p.b[None, :],
        p.c[None, :],
        p.cones,
        tol=tol,
        max_iter=max_iter,
        initial=None if initial is None else np.asarray(initial)[None, :],
    )
    return res.single(0)


def dump_problem(p: ConicProblem, path: str) -> None:
    """Write a self-describing text dump (for external cross-checks)."""
    A = p.dense_A()
    lines = ["# cone program: min c.x  s.t.  Ax + s = b, s in K"]
    lines.append("c " + " ".join(repr(float(v)) for v in p.c))
    lines.append("b " + " ".join(repr(float(v)) for v in p.b))
    lines.append(
        "cones " + " ".join(f"{blk.kind}:{blk.n}" for blk in p.cones.blocks)
    )
    ii, jj = np.nonzero(A)
    for i, j in zip(ii, jj):
        lines.append(f"A {i} {j} {A[i, j]!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
