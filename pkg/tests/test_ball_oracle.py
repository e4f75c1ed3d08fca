import time

import numpy as np
import pytest
from numpy.testing import assert_allclose

from edgedtn import ball_oracle as bo
from edgedtn.errors import DomainError
from edgedtn.specfun import hankel1_sph, z1_sph

Z1 = (np.sqrt(3) - 1j) / 2
H2 = (np.sqrt(3) - 3j) / 2


def near(roots, z, tol=1e-10):
    return [r for r in roots if abs(r.kappa - z) <= tol]


class TestRegion:
    def test_defaults(self):
        r = bo.SearchRegion()
        assert (r.width, r.height, r.center) == (2.0, 2.0, 1 - 1j)

    def test_half_open(self):
        r = bo.SearchRegion()
        assert r.contains(0.0 - 1j)
        assert not r.contains(2.0 - 1j)
        assert not r.contains(1.0 - 2j)
        assert not r.contains(1.0 + 0j)
        assert r.contains(-1e-10 - 1j, tol=1e-9)

    @pytest.mark.parametrize("args", [(1, 1, -2, 0), (0, 2, -2, 0.5), (0, np.inf, -2, 0), (0, 2, 0, -1)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            bo.SearchRegion(*args)


class TestRoots:
    def test_closed_forms(self):
        roots = bo.exact_ball_resonances(n_max=2)
        z = near(roots, Z1)
        assert len(z) == 1 and z[0].n == 1 and z[0].kind == bo.Z_ZERO and z[0].multiplicity == 3
        h = near(roots, H2)
        assert len(h) == 1 and h[0].n == 2 and h[0].kind == bo.H_ZERO and h[0].multiplicity == 5

    def test_minus_i_on_closed_edge(self):
        roots = bo.exact_ball_resonances(n_max=1)
        assert {(r.kind, round(r.kappa.real, 9), round(r.kappa.imag, 9)) for r in roots} == {
            (bo.Z_ZERO, round(Z1.real, 9), round(Z1.imag, 9)),
            (bo.H_ZERO, 0.0, -1.0),
        }

    def test_residuals_through_specfun(self):
        for r in bo.exact_ball_resonances(n_max=6):
            if r.kind == bo.H_ZERO:
                val = hankel1_sph(r.n, r.kappa).h
            else:
                val = z1_sph(r.n, r.kappa)
            _, scale = bo.factor_value(r.n, r.kind, r.kappa)
            assert abs(val) <= 1e-12 * scale

    def test_counts_match_isolated(self):
        lo, hi = -0.05 - 2.05j, 2.05 + 0.05j
        for n in range(1, 7):
            for kind in bo.KINDS:
                fun = lambda z, n=n, kind=kind: bo._g(n, kind, z)  # noqa: E731
                assert bo._count(fun, lo, hi) == len(bo.factor_roots(n, kind, lo, hi))

    def test_six_distinct_locations(self):
        locs = bo.distinct_locations(bo.exact_ball_resonances(n_max=6))
        assert len(locs) >= 6

    def test_sorted_and_multiplicity(self):
        roots = bo.exact_ball_resonances()
        mags = [abs(r.kappa) for r in roots]
        assert mags == sorted(mags)
        assert all(r.multiplicity == 2 * r.n + 1 for r in roots)

    def test_fast(self):
        t = time.perf_counter()
        bo.exact_ball_resonances(n_max=6)
        assert time.perf_counter() - t < 1.0

    def test_small_region(self):
        region = bo.SearchRegion(0.8, 0.95, -0.55, -0.45)
        roots = bo.exact_ball_resonances(region)
        assert len(roots) == 1 and abs(roots[0].kappa - Z1) < 1e-12

    def test_errors(self):
        with pytest.raises(DomainError):
            bo.exact_ball_resonances(n_max=0)
        with pytest.raises(DomainError):
            bo.factor_roots(1, "Q-zero", -1 - 1j, 1 + 0j)


class TestOrders:
    def test_first_ball_pair(self):
        rows = bo.convergence_orders([(2703, 0.875950 - 0.502153j), (5484, 0.873037 - 0.501016j)], Z1)
        assert rows[0].order is None
        assert_allclose(rows[1].order, 1.53, atol=0.01)

    def test_cube_successive(self):
        rows = bo.convergence_orders([(16366, 1.302799 - 0.703003j), (32976, 1.309138 - 0.709054j),
                                      (65712, 1.313384 - 0.712724j)])
        assert rows[0].order is None and rows[1].order is None
        assert_allclose(rows[2].order, 1.94, atol=0.01)

    def test_halving(self):
        rows = bo.convergence_orders([(1000, 1 + 0.1j), (2000, 1 + 0.05j)], 1.0)
        assert_allclose(rows[1].order, 3.0, rtol=1e-12)

    def test_zero_error_undefined(self):
        rows = bo.convergence_orders([(10, 1.0), (20, 1.0), (40, 1.5)], 1.0)
        assert rows[1].order is None and rows[2].order is None

    def test_preconditions(self):
        with pytest.raises(DomainError):
            bo.convergence_orders([(20, 1.0), (10, 2.0)], 0.0)
        with pytest.raises(DomainError):
            bo.convergence_orders([(20, 1.0)], 0.0)
        with pytest.raises(DomainError):
            bo.convergence_orders([(10, 1.0), (20, 2.0)])

    def test_fitted_order(self):
        Ns = np.array([1e3, 8e3, 64e3])
        errs = 0.3 * Ns ** (-2 / 3)
        assert_allclose(bo.fitted_order(Ns, errs), 2.0, rtol=1e-12)
