import numpy as np
import pytest

from lowrank_iga import assembly as asm
from lowrank_iga import geometry as geo
from lowrank_iga import verify as vf

from tests.test_geometry import stacked_cubes


class TestMatrixError:
    def test_affine_domain_exact(self):
        r = vf.matrix_error_check('lshape', 2, 2)
        assert r.rel_error <= 1e-13

    def test_curved_domain_small(self):
        r = vf.matrix_error_check('thick_ring', 2, 2)
        assert r.rel_error <= 5e-7
        assert r.zeta > 0

    def test_scalar_bound_holds(self):
        r = vf.matrix_error_check('thick_ring', 2, 2, mode='scalar')
        assert r.lambda_min > 0
        assert np.isfinite(r.bound)
        assert r.rel_error <= r.bound

    def test_elasticity_coefficient_semidefinite(self):
        # the stacked gradient-coupling matrix vanishes on skew gradients,
        # so its smallest eigenvalue is zero and the bound degenerates
        r = vf.matrix_error_check('thick_ring', 2, 2)
        assert abs(r.lambda_min) <= 1e-10
        assert r.bound == np.inf


class TestKernel:
    def test_lshape_kernel_dims_equal(self):
        r = vf.kernel_check('lshape', 2, 2)
        assert r.kernel_dim_exact == r.kernel_dim_approx

    def test_single_subdomain_nonsingular(self):
        topo = stacked_cubes()
        r = vf.kernel_check(topo, 2, 2, mode='scalar')
        assert r.kernel_dim_exact == 0
        assert r.kernel_dim_approx == 0

    def test_rhs_in_range(self):
        r = vf.kernel_check('thick_ring', 2, 2)
        assert r.rhs_range_residual <= 1e-10


class TestBilinearIdentity:
    def test_lshape_50_pairs(self):
        s = asm.assemble(geo.builtin_domain('lshape'), 2, 2)
        assert vf.bilinear_identity_check(s, npairs=50) <= 1e-10

    def test_thick_square_pairs(self):
        s = asm.assemble(geo.builtin_domain('thick_square'), 2, 2)
        assert vf.bilinear_identity_check(s, npairs=10) <= 1e-10


class TestConvergence:
    @pytest.fixture(scope='class')
    def study_rows(self):
        return vf.convergence_study(degrees=(2,), levels=(2, 3))

    def test_error_decreases(self, study_rows):
        e2 = [r[3] for r in study_rows]
        e1 = [r[4] for r in study_rows]
        assert e2[1] < e2[0]
        assert e1[1] < e1[0]

    def test_orders(self, study_rows):
        orders = vf.convergence_orders(study_rows)
        (p, L0, L1, o2, o1) = orders[0]
        assert o2 >= 2.8
        assert o1 >= 1.8

    def test_csv_output(self, study_rows, tmp_path):
        path = tmp_path / "conv.csv"
        vf.write_convergence_csv(study_rows, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == 'p,level,n_el,err_l2,err_h1'
        assert len(lines) == 1 + len(study_rows)


class TestReportCsv:
    def test_theory_csv(self, tmp_path):
        r = vf.kernel_check('lshape', 2, 2)
        path = tmp_path / "theory.csv"
        vf.write_theory_csv([r], str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith('domain,p,n_el,rel_error,bound')
        assert len(lines) == 2
