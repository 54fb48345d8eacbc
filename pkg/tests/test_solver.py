"""Tests for the operator-splitting cone solver."""

import numpy as np
import pytest

from helpers import psd_project_2x2_bruteforce
from qbeam.la import embed_map, hvec, hvec_dim
from qbeam.model import complex_normal
from qbeam.solver import (
    ConeSpec,
    ConicProblem,
    NonNeg,
    PsdReal,
    SecondOrder,
    Zero,
    cone_distance,
    dump_problem,
    project_psd,
    project_soc,
    solve,
    solve_many,
)


# projections ---------------------------------------------------------------


def test_project_soc_examples():
    assert np.allclose(project_soc(np.array([2.0, 1.0, 0.0])), [2.0, 1.0, 0.0])
    assert np.allclose(project_soc(np.array([0.0, 1.0, 0.0])), [0.5, 0.5, 0.0])
    assert np.allclose(project_soc(np.array([-2.0, 1.0, 0.0])), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        project_soc(np.array([1.0]))


def test_project_soc_idempotent_and_nonexpansive():
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.normal(size=6) * rng.uniform(0.1, 10)
        p = project_soc(v)
        assert np.allclose(project_soc(p), p, atol=1e-12)
        assert np.linalg.norm(p[1:]) <= p[0] + 1e-12


def test_project_psd_examples():
    out = project_psd(np.diag([1.0, -1.0]))
    assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-12)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(3, 3))
    P = X @ X.T
    assert np.allclose(project_psd(P), P, atol=1e-10)
    with pytest.raises(ValueError):
        project_psd(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_project_psd_matches_bruteforce_2x2():
    rng = np.random.default_rng(2)
    for _ in range(8):
        S = rng.normal(size=(2, 2))
        S = 0.5 * (S + S.T)
        mine = project_psd(S)
        _, best_d = psd_project_2x2_bruteforce(S)
        # analytic projection can only be at least as close
        assert np.linalg.norm(mine - S) <= best_d + 1e-6
        assert np.linalg.eigvalsh(mine).min() >= -1e-12


# problem validation --------------------------------------------------------


def test_problem_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        ConicProblem(
            c=np.ones(2),
            A=np.ones((3, 2)),
            b=np.ones(3),
            cones=ConeSpec((NonNeg(2),)),
        )


def test_problem_rejects_zero_rows_outside_psd():
    A = np.array([[1.0], [0.0]])
    with pytest.raises(ValueError, match="zero rows"):
        ConicProblem(c=np.ones(1), A=A, b=np.zeros(2), cones=ConeSpec((NonNeg(2),)))


def test_problem_allows_structural_psd_zero_rows():
    # Im(diagonal) coordinates of a Hermitian embedding are always zero
    E = embed_map(2)
    zero_rows = np.where(np.abs(E).sum(axis=1) == 0)[0]
    assert zero_rows.size > 0
    p = ConicProblem(
        c=np.ones(hvec_dim(2)),
        A=-E,
        b=np.zeros(E.shape[0]),
        cones=ConeSpec((PsdReal(4),)),
    )
    assert p.dense_A().shape == E.shape


def test_cone_spec_validation():
    with pytest.raises(ValueError):
        NonNeg(0)
    with pytest.raises(ValueError):
        SecondOrder(1)


# solve: analytic instances --------------------------------------------------


def test_lp_min_x_subject_to_x_ge_1():
    p = ConicProblem(
        c=np.array([1.0]),
        A=np.array([[-1.0]]),
        b=np.array([-1.0]),
        cones=ConeSpec((NonNeg(1),)),
    )
    sol = solve(p, tol=1e-9)
    assert sol.status == "Optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)


def test_lp_with_equality_cone():
    # min x + 2y  s.t.  x + y = 1, x >= 0, y >= 0  -> (1, 0)
    A = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    p = ConicProblem(
        c=np.array([1.0, 2.0]),
        A=A,
        b=np.array([1.0, 0.0, 0.0]),
        cones=ConeSpec((Zero(1), NonNeg(2))),
    )
    sol = solve(p, tol=1e-9)
    assert sol.status == "Optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(sol.x, [1.0, 0.0], atol=1e-5)


def test_soc_norm_minimisation():
    # min t  s.t.  u = (3, 4), ||u|| <= t  -> t = 5
    A = np.array(
        [
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, -1.0],
        ]
    )
    b = np.array([3.0, 4.0, 0.0, 0.0, 0.0])
    p = ConicProblem(
        c=np.array([1.0, 0.0, 0.0]),
        A=A,
        b=b,
        cones=ConeSpec((Zero(2), SecondOrder(3))),
    )
    sol = solve(p, tol=1e-9)
    assert sol.status == "Optimal"
    assert sol.x[0] == pytest.approx(5.0, abs=1e-6)


def _sdp_shift_problem(scale=1.0):
    # min Tr X  s.t.  X - diag(1,-1) PSD, X PSD  ->  X = diag(1,0)
    from qbeam.la import svec

    Bm = np.diag([1.0, -1.0])
    A = np.vstack([-np.eye(3), -np.eye(3)])
    b = np.concatenate([-svec(Bm), np.zeros(3)])
    c = np.array([1.0, 0.0, 1.0]) * scale
    return ConicProblem(
        c=c, A=A, b=b * scale, cones=ConeSpec((PsdReal(2), PsdReal(2)))
    )


def test_sdp_spectral_shift():
    sol = solve(_sdp_shift_problem(), tol=1e-9)
    assert sol.status == "Optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(sol.x, [1.0, 0.0, 0.0], atol=1e-5)


def test_scaling_robustness():
    s1 = solve(_sdp_shift_problem(1.0), tol=1e-9)
    s10 = solve(_sdp_shift_problem(10.0), tol=1e-9)
    # (c, b) both scaled by 10 -> objective scales by 100/10... the b
    # scaling moves the feasible set, c scaling the objective: net x is
    # unchanged and the objective scales like c alone against the scaled
    # constraint, i.e. by 100 here; check the invariant on (c only) too.
    assert s10.status == "Optimal"
    assert s10.objective == pytest.approx(100.0 * s1.objective, rel=1e-5)

    base = _sdp_shift_problem(1.0)
    pc = ConicProblem(c=10.0 * base.c, A=base.dense_A(), b=base.b, cones=base.cones)
    sc = solve(pc, tol=1e-9)
    assert sc.objective == pytest.approx(10.0 * s1.objective, rel=1e-6)


def test_determinism_bitwise():
    p = _sdp_shift_problem()
    a = solve(p, tol=1e-9)
    b = solve(p, tol=1e-9)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.dual, b.dual)
    assert a.iterations == b.iterations


def test_solution_invariants_on_optimal():
    p = _sdp_shift_problem()
    sol = solve(p, tol=1e-8)
    assert sol.primal_res <= 1e-8
    assert sol.dual_res <= 1e-8
    assert abs(sol.gap) <= 1e-8 * (1 + abs(sol.objective))
    # cone membership of the returned slack
    assert cone_distance(sol.s, p.cones) <= 1e-8 * (1 + np.linalg.norm(sol.s))
    # weak duality
    assert sol.objective + np.dot(p.b, sol.dual) >= -1e-8 * (1 + abs(sol.objective))


def test_random_feasible_instances_all_optimal():
    rng = np.random.default_rng(11)
    cones = ConeSpec((NonNeg(3), SecondOrder(4), PsdReal(3)))
    m = cones.total_dim
    n = 5
    for trial in range(20):
        A = rng.normal(size=(m, n))
        x0 = rng.normal(size=n)
        # strict interior slack
        s0 = np.empty(m)
        s0[0:3] = rng.uniform(0.5, 2.0, size=3)
        u = rng.normal(size=3)
        s0[3] = np.linalg.norm(u) + rng.uniform(0.5, 2.0)
        s0[4:7] = u
        X = rng.normal(size=(3, 3))
        from qbeam.la import svec

        s0[7:] = svec(X @ X.T + np.eye(3))
        b = A @ x0 + s0
        # dual-feasible objective: c = -A^T y0 with y0 in the dual interior
        y0 = np.empty(m)
        y0[0:3] = rng.uniform(0.5, 2.0, size=3)
        w = rng.normal(size=3)
        y0[3] = np.linalg.norm(w) + rng.uniform(0.5, 2.0)
        y0[4:7] = w
        Y = rng.normal(size=(3, 3))
        y0[7:] = svec(Y @ Y.T + np.eye(3))
        c = -A.T @ y0
        p = ConicProblem(c=c, A=A, b=b, cones=cones)
        sol = solve(p, tol=1e-7)
        assert sol.status == "Optimal", (trial, sol.status, sol.primal_res)
        assert cone_distance(sol.s, cones) <= 1e-6 * (1 + np.linalg.norm(sol.s))


def test_infeasible_certificate():
    # x >= 1 and x <= -1 cannot hold
    p = ConicProblem(
        c=np.array([1.0]),
        A=np.array([[-1.0], [1.0]]),
        b=np.array([-1.0, -1.0]),
        cones=ConeSpec((NonNeg(2),)),
    )
    sol = solve(p, tol=1e-9)
    assert sol.status == "Infeasible"
    y = sol.dual
    assert np.all(y >= -1e-9)
    assert np.dot(p.b, y) == pytest.approx(-1.0, rel=1e-6)
    assert np.linalg.norm(p.dense_A().T @ y) <= 1e-6


def test_unbounded_certificate():
    # min -x  s.t.  x >= 0
    p = ConicProblem(
        c=np.array([-1.0]),
        A=np.array([[-1.0]]),
        b=np.array([0.0]),
        cones=ConeSpec((NonNeg(1),)),
    )
    sol = solve(p, tol=1e-9)
    assert sol.status == "Unbounded"
    x = sol.x
    assert np.dot(p.c, x) == pytest.approx(-1.0, rel=1e-6)
    assert np.linalg.norm(p.dense_A() @ x + sol.s) <= 1e-6


def test_maxiter_reports_residuals():
    sol = solve(_sdp_shift_problem(), tol=1e-12, max_iter=10)
    assert sol.status == "MaxIter"
    assert np.isfinite(sol.primal_res)
    assert sol.iterations == 10


# batch path -----------------------------------------------------------------


def test_batch_matches_single_bitwise():
    rng = np.random.default_rng(13)
    cones = ConeSpec((NonNeg(2), SecondOrder(3)))
    m, n = cones.total_dim, 3
    As, bs, cs, singles = [], [], [], []
    for _ in range(4):
        A = rng.normal(size=(m, n))
        x0 = rng.normal(size=n)
        s0 = np.array([1.0, 1.5, 2.5, 0.3, -0.4])
        b = A @ x0 + s0
        y0 = np.array([1.0, 0.7, 2.0, 0.5, 0.1])
        c = -A.T @ y0
        As.append(A)
        bs.append(b)
        cs.append(c)
        singles.append(solve(ConicProblem(c=c, A=A, b=b, cones=cones), tol=1e-8))
    batch = solve_many(np.stack(As), np.stack(bs), np.stack(cs), cones, tol=1e-8)
    for i, ref in enumerate(singles):
        assert batch.status[i] == ref.status
        assert np.array_equal(batch.x[i], ref.x)
        assert batch.iterations[i] == ref.iterations


def test_embedded_psd_matches_generic_path():
    # one-user power minimisation: min Tr W s.t. h^H W h >= a, W PSD;
    # optimum is the matched filter with Tr W = a/||h||^2
    rng = np.random.default_rng(17)
    for _ in range(5):
        Nt = 3
        h = complex_normal(rng, (Nt,))
        a = 2.0 ** 0.8 - 1.0
        E = embed_map(Nt)
        row = hvec(np.outer(h, h.conj()))
        A = np.vstack([-row[None, :], -E])
        b = np.concatenate([[-a], np.zeros(E.shape[0])])
        c = hvec(np.eye(Nt, dtype=complex))
        cones = ConeSpec((NonNeg(1), PsdReal(2 * Nt)))
        generic = solve(ConicProblem(c=c, A=A, b=b, cones=cones), tol=1e-9)
        fast = solve_many(
            A[None], b[None], c[None], cones, embedded=(1,), tol=1e-9
        )
        expect = a / float(np.linalg.norm(h) ** 2)
        assert generic.status == "Optimal"
        assert fast.status[0] == "Optimal"
        assert generic.objective == pytest.approx(expect, rel=1e-5)
        assert fast.objective[0] == pytest.approx(expect, rel=1e-5)
        assert np.allclose(fast.x[0], generic.x, atol=1e-6)


def test_dump_problem_roundtrippable_text(tmp_path):
    p = _sdp_shift_problem()
    path = tmp_path / "prob.txt"
    dump_problem(p, str(path))
    text = path.read_text()
    assert "cones psd:2 psd:2" in text
    nnz = int(np.count_nonzero(p.dense_A()))
    assert sum(1 for line in text.splitlines() if line.startswith("A ")) == nnz


def test_psdc_matched_filter_analytic():
    from qbeam.solver import PsdComplex

    rng = np.random.default_rng(33)
    for _ in range(5):
        h = complex_normal(rng, (3,))
        d = hvec_dim(3)
        # min Tr W  s.t.  h' W h >= 1,  W hermitian psd (hvec coordinates)
        A = np.zeros((1 + d, d))
        A[0] = -hvec(np.outer(h, h.conj()))
        A[1:] = -np.eye(d)
        b = np.zeros(1 + d)
        b[0] = -1.0
        c = hvec(np.eye(3))
        p = ConicProblem(c=c, A=A, b=b, cones=ConeSpec((NonNeg(1), PsdComplex(3))))
        sol = solve(p, tol=1e-9)
        assert sol.status == "Optimal"
        gain = float(np.vdot(h, h).real)
        assert abs(sol.objective - 1.0 / gain) < 1e-6 * (1.0 + 1.0 / gain)
        from qbeam.la import hvec_inv

        W = hvec_inv(sol.x, 3)
        lam = np.linalg.eigvalsh(W)
        assert lam.min() > -1e-7
        assert np.vdot(h, W @ h).real >= 1.0 - 1e-6


def test_psdc_projection_matches_embedded_route():
    from qbeam.la import embed_extract, hermitian_embed, svec, svec_inv, psd_part_herm, hvec_inv
    from qbeam.solver import PsdComplex, ConeSpec as CS

    rng = np.random.default_rng(34)
    v = rng.normal(size=(40, hvec_dim(3)))
    M = hvec_inv(v, 3)
    direct = hvec(psd_part_herm(M))
    lam, U = np.linalg.eigh(M)
    lam = np.maximum(lam, 0.0)
    ref = hvec((U * lam[..., None, :]) @ np.swapaxes(U.conj(), -1, -2))
    assert np.abs(direct - ref).max() < 1e-10

    # cone_distance treats psdc membership correctly; clipped matrices sit
    # exactly at the degenerate boundary, where closed-form eigenvalues
    # carry a few 1e-9 of absolute error
    P = hvec(psd_part_herm(hvec_inv(v[0], 3)))
    assert cone_distance(P, CS((PsdComplex(3),))) < 1e-7
