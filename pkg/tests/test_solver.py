import numpy as np
import pytest

from lowrank_iga import assembly as asm
from lowrank_iga import geometry as geo
from lowrank_iga import precond as pc
from lowrank_iga import solver as sv
from lowrank_iga import tucker as tk
from lowrank_iga import verify as vf

from tests.test_geometry import stacked_cubes


def dense_pcg(A, M_apply, b, tol, max_iter=500):
    """Classical PCG with the same eta-free update ordering as the
    truncated solver; returns (x, iterations)."""
    x = np.zeros_like(b)
    r = b - A @ x
    z = M_apply(r)
    p = z.copy()
    for k in range(max_iter):
        q = A @ p
        xi = p @ q
        omega = (r @ p) / xi
        x = x + omega * p
        r = b - A @ x
        if np.linalg.norm(r) <= tol:
            return x, k + 1
        z = M_apply(r)
        beta_k = -(z @ q) / xi
        p = z + beta_k * p
    return x, max_iter


def dense_prec_apply(system, prec):
    """Exact densified block-diagonal preconditioner application."""
    offsets, ndof = vf._block_offsets(system)
    mats = {}
    for (i, k) in offsets:
        P = prec.precs[(i, k)].dense(system.spaces[i])
        mats[(i, k)] = np.linalg.inv(P)

    def apply(r):
        z = np.zeros_like(r)
        for (i, k), off in offsets.items():
            n = int(np.prod(system.dims(i)))
            z[off:off + n] = mats[(i, k)] @ r[off:off + n]
        return z
    return apply


def flatten_blockvec(system, u):
    offsets, ndof = vf._block_offsets(system)
    x = np.zeros(ndof)
    for (i, k), off in offsets.items():
        n = int(np.prod(system.dims(i)))
        x[off:off + n] = u.parts[(i, k)].flatten()
    return x


class TestMatvec:
    def test_zero_input_gives_minus_rhs(self):
        s = asm.assemble(geo.builtin_domain('lshape'), 2, 2)
        x = sv.BlockVector.zeros(s)
        f = sv.BlockVector.from_rhs(s)
        y = sv.matvec_blocks(s, x, f, 0.0, 0.0)
        for key, v in y.parts.items():
            np.testing.assert_allclose(
                v.flatten(), -f.parts[key].flatten(), atol=1e-14)

    def test_exact_matvec_matches_dense(self):
        s = asm.assemble(geo.builtin_domain('lshape'), 2, 2)
        A, b = vf.densify_system(s)
        rng = np.random.default_rng(5)
        parts = {}
        for i in range(s.nsub):
            for k in range(s.ncomp):
                parts[(i, k)] = tk.from_dense(
                    rng.standard_normal(s.dims(i)), 0.0)
        x = sv.BlockVector(parts)
        y = sv.matvec_blocks(s, x, None, 0.0, 0.0)
        ref = A @ flatten_blockvec(s, x)
        got = flatten_blockvec(s, y)
        assert np.linalg.norm(got - ref) <= 1e-11 * np.linalg.norm(ref)


class TestTpcg:
    def test_matches_classical_pcg(self):
        # with truncation switched off the iterates follow classical PCG
        topo = stacked_cubes()
        s = asm.assemble(topo, 2, 2, mode='scalar',
                         f=lambda x, y, z: np.ones_like(x))
        A, b = vf.densify_system(s)
        prec = pc.build_preconditioner(s, tol=1e-9)
        tol = 1e-8
        u, rep = sv.tpcg(s, prec, tol=tol, gamma=0.0, beta=0.0,
                         eps_min=0.0, eps0=0.0)
        x_ref, iters_ref = dense_pcg(A, dense_prec_apply(s, prec), b, tol)
        assert rep.converged
        assert abs(rep.iterations - iters_ref) <= 1
        x = flatten_blockvec(s, u)
        assert np.linalg.norm(x - x_ref) <= 1e-10 * np.linalg.norm(x_ref)

    def test_residual_honesty(self):
        # the reported residual norm must match the densified residual
        s = asm.assemble(geo.builtin_domain('lshape'), 2, 2)
        prec = pc.build_preconditioner(s)
        tol = 1e-7
        u, rep = sv.tpcg(s, prec, tol=tol)
        assert rep.converged
        A, b = vf.densify_system(s)
        r = b - A @ flatten_blockvec(s, u)
        assert np.linalg.norm(r) <= 1.5 * tol
        assert abs(np.linalg.norm(r) - rep.residual_norm) <= 0.5 * tol

    def test_field_matches_dense_solve(self):
        s = asm.assemble(geo.builtin_domain('lshape'), 2, 2)
        prec = pc.build_preconditioner(s)
        tol = 1e-8
        u, rep = sv.tpcg(s, prec, tol=tol)
        assert rep.converged
        A, b = vf.densify_system(s)
        x = np.linalg.lstsq(A, b, rcond=None)[0]
        # evaluate both fields at scattered points of patch 0
        field = sv.reconstruct_solution(s, u)
        rng = np.random.default_rng(7)
        pts = rng.uniform(0.05, 0.95, (3, 8))
        offsets, _ = vf._block_offsets(s)
        ref = np.zeros((8, 8, 8))
        for (i, k), off in offsets.items():
            if k != 2 or 0 not in s.subs[i].patch_ids:
                continue
            n = int(np.prod(s.dims(i)))
            v = tk.from_dense(x[off:off + n].reshape(s.dims(i), order='F'),
                              0.0)
            w = sv.BlockVector({key: (v if key == (i, 2) else
                                      tk.TuckerVector.zeros(s.dims(key[0])))
                                for key in u.parts})
            ref += sv.FieldEvaluator(s, w).eval_patch(
                0, pts[0], pts[1], pts[2], component=2)
        got = field.eval_patch(0, pts[0], pts[1], pts[2], component=2)
        scale = np.max(np.abs(ref))
        assert np.max(np.abs(got - ref)) <= 10 * tol * max(scale, 1.0)

    def test_zero_rhs_converges_immediately(self):
        s = asm.assemble(geo.builtin_domain('lshape'), 2, 2,
                         f=(0.0, 0.0, 0.0))
        prec = pc.build_preconditioner(s)
        u, rep = sv.tpcg(s, prec)
        assert rep.converged
        assert rep.iterations == 0

    def test_history_format(self):
        s = asm.assemble(geo.builtin_domain('lshape'), 2, 2)
        prec = pc.build_preconditioner(s)
        u, rep = sv.tpcg(s, prec, tol=1e-5)
        assert rep.converged
        assert len(rep.history) == rep.iterations + 1
        ks = [row[0] for row in rep.history]
        assert ks == list(range(rep.iterations + 1))
        for k, rnorm, maxrank, eps in rep.history:
            assert rnorm > 0 and maxrank >= 1 and eps > 0


class TestMemory:
    def test_memory_percent_rank_one(self):
        topo = stacked_cubes()
        s = asm.assemble(topo, 2, 8, mode='scalar',
                         f=lambda x, y, z: np.ones_like(x))
        dims = s.dims(0)
        parts = {(0, 0): tk.TuckerVector(
            [np.ones((n, 1)) for n in dims], np.ones((1, 1, 1)))}
        u = sv.BlockVector(parts)
        mem, mem_c = sv.memory_percent(s, u)
        expect = 100.0 * sum(dims) / np.prod(dims)
        np.testing.assert_allclose(mem, expect, rtol=1e-12)
        np.testing.assert_allclose(
            mem_c, 100.0 * (sum(dims) + 1) / np.prod(dims), rtol=1e-12)

    def test_memory_decreases_with_level(self):
        mems = []
        for nel in (4, 8):
            s = asm.assemble(geo.builtin_domain('lshape'), 2, nel)
            prec = pc.build_preconditioner(s)
            u, rep = sv.tpcg(s, prec, tol=1e-6)
            assert rep.converged
            mems.append(rep.mem_percent)
        assert mems[1] < mems[0]
