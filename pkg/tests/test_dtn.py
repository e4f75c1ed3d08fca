import numpy as np
import pytest
from numpy.testing import assert_allclose

from edgedtn import dtn, edge_fem as fem
from edgedtn.errors import CoefficientPoleError, DomainError
from edgedtn.mesh import build_ball_shell
from edgedtn.specfun import dtn_ratios, harmonic_index, vsh_table


def synthetic_trace(N, B=7, R=1.0, seed=0):
    rng = np.random.default_rng(seed)
    rows = dtn.TraceMatrix.row_labels(N)
    vals = rng.normal(size=(len(rows), B)) + 1j * rng.normal(size=(len(rows), B))
    return dtn.TraceMatrix(rows=rows, values=vals, support=np.arange(B), R=R, n_free=B)


@pytest.fixture(scope="module")
def small():
    m = build_ball_shell(1, 1, 1.3)
    d = fem.build_dof_map(m)
    return dtn.DtnHandle(fem.assemble_trace_matrix(m, d, 10, 1.3))


@pytest.fixture(scope="module")
def medium():
    m = build_ball_shell(4, 1, 1.3)
    d = fem.build_dof_map(m)
    return dtn.DtnHandle(fem.assemble_trace_matrix(m, d, 10, 1.3))


class TestCoefficients:
    def test_definition(self, small):
        kappa, R = 0.8 - 0.3j, 1.3
        delta, _ = dtn_ratios(10, kappa, R)
        cU, cV = dtn.dtn_coeffs(kappa, small)
        assert_allclose(cU, 1j * kappa * R / delta, rtol=1e-14)
        assert_allclose(cV, delta / (1j * kappa * R), rtol=1e-14)

    def test_z_pole(self):
        h = dtn.DtnHandle(synthetic_trace(3, R=1.0))
        with pytest.raises(CoefficientPoleError) as info:
            h.coeffs((np.sqrt(3) - 1j) / 2)
        assert info.value.n == 1 and info.value.factor == "z"

    def test_h_pole(self):
        h = dtn.DtnHandle(synthetic_trace(3, R=1.0))
        with pytest.raises(CoefficientPoleError) as info:
            h.coeffs(-1j)
        assert info.value.factor == "h"

    def test_imaginary_axis_real(self):
        h = dtn.DtnHandle(synthetic_trace(6, R=1.0))
        cU, cV = h.coeffs(1j)
        assert np.all(np.abs(cV.imag) <= 1e-12 * np.abs(cV))
        assert np.all(np.abs(cU.imag) <= 1e-12 * np.abs(cU))
        # delta_n(i) < 0 and i * i * R = -R
        assert np.all(cV.real > 0) and np.all(cU.real > 0)

    def test_high_order_asymptotic(self):
        h = dtn.DtnHandle(synthetic_trace(40, B=2, R=1.3))
        kappa = 1 - 0.5j
        kR = kappa * 1.3
        _, cV = h.coeffs(kappa)
        approx = (-40 + kR**2 / 79) / (1j * kR)
        assert abs(cV[39] - approx) <= 0.02 * abs(approx)

    @pytest.mark.parametrize("kappa", [0.6 - 0.2j, 1.4 - 0.9j, 0.3 - 1.6j, 1.0 + 0.0j])
    def test_derivatives(self, kappa):
        h = dtn.DtnHandle(synthetic_trace(8, R=1.3))
        _, _, dcU, dcV = h.coeffs(kappa, derivative=True)
        eps = 1e-6
        up, vp = h.coeffs(kappa + eps)
        um, vm = h.coeffs(kappa - eps)
        assert_allclose(dcU, (up - um) / (2 * eps), rtol=1e-7)
        assert_allclose(dcV, (vp - vm) / (2 * eps), rtol=1e-7)

    def test_truncation_range(self):
        q = synthetic_trace(3)
        with pytest.raises(DomainError):
            dtn.DtnHandle(q, N=4)
        h = dtn.DtnHandle(q, N=2)
        assert h.values.shape[0] == 2 * 2 * 4


class TestBlock:
    def test_double_sum(self, small):
        kappa = 0.9 - 0.6j
        E, support = dtn.materialize_E(small, kappa)
        cU, cV = small.coeffs(kappa)
        Q = small.values
        B = len(support)
        ref = np.zeros((B, B), dtype=complex)
        for k, (fam, n, _) in enumerate(small.Q.rows):
            c = cU[n - 1] if fam == "U" else cV[n - 1]
            for i in range(B):
                for j in range(B):
                    ref[i, j] += c * np.conj(Q[k, i]) * Q[k, j]
        assert_allclose(E, ref / 1.3**2, rtol=1e-12, atol=1e-14 * abs(ref).max())

    def test_symmetric(self, small):
        E, _ = dtn.materialize_E(small, 0.9 - 0.6j)
        assert np.linalg.norm(E - E.T) <= 1e-12 * np.linalg.norm(E)

    def test_gram_and_direct_paths_agree(self, medium):
        direct = dtn.DtnHandle(medium.Q, gram_budget=0)
        assert medium.use_gram() and not direct.use_gram()
        for kappa in (0.9 - 0.6j, 1.7 - 1.2j):
            a, _ = dtn.materialize_E(medium, kappa)
            b, _ = dtn.materialize_E(direct, kappa)
            assert_allclose(a, b, atol=1e-13 * abs(b).max())
            assert_allclose(dtn.materialize_dE(medium, kappa), dtn.materialize_dE(direct, kappa),
                            atol=1e-13 * abs(b).max())

    def test_rank(self, medium):
        assert medium.n_support > 240
        E, _ = dtn.materialize_E(medium, 1.1 - 0.4j)
        s = np.linalg.svd(E, compute_uv=False)
        assert np.sum(s > 1e-10 * s[0]) <= 240

    def test_apply_matches_block(self, small):
        kappa = 1.2 - 0.3j
        cU, cV = small.coeffs(kappa)
        x = np.random.default_rng(4).normal(size=small.n_support)
        E = small.block(cU, cV)
        assert_allclose(small.apply(small.row_coeffs(cU, cV), x), E @ x, rtol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_derivative_second_order(self, small, seed):
        rng = np.random.default_rng(seed)
        kappa = complex(rng.uniform(0.2, 1.8), rng.uniform(-1.8, -0.2))
        dE = dtn.materialize_dE(small, kappa)
        errs = []
        for h in (1e-2, 1e-3):
            fd = (dtn.materialize_E(small, kappa + h)[0] - dtn.materialize_E(small, kappa - h)[0]) / (2 * h)
            errs.append(np.linalg.norm(fd - dE))
        assert 50 <= errs[0] / errs[1] <= 200


class TestHarmonicAction:
    def test_multipliers(self, small):
        kappa, R = 1 - 1j, 1.3
        delta, _ = dtn_ratios(10, kappa, R)
        assert_allclose(dtn.apply_T_to_harmonic(small, kappa, "V", 1, 0), delta[0] / (1j * kappa * R))
        vals = {dtn.apply_T_to_harmonic(small, kappa, "U", 3, m) for m in range(-3, 4)}
        assert len(vals) == 1

    def test_out_of_range(self, small):
        with pytest.raises(DomainError):
            dtn.apply_T_to_harmonic(small, 1.0, "U", 11, 0)
        with pytest.raises(DomainError):
            dtn.apply_T_to_harmonic(small, 1.0, "W", 1, 0)

    def test_pipeline_on_pure_harmonic(self):
        kappa = 1 - 0.5j
        c = np.sqrt(3 / (8 * np.pi))

        def v10(x):
            r = np.linalg.norm(x, axis=1)
            return c * np.column_stack([x[:, 1], -x[:, 0], 0 * r]) / r[:, None]

        errors = []
        for n in (2, 4, 8):
            m = build_ball_shell(n, 1, 1.3)
            d = fem.build_dof_map(m)
            h = dtn.DtnHandle(fem.assemble_trace_matrix(m, d, 4, 1.3))
            u = fem.edge_interpolant(m, d, v10)[h.support]
            E, _ = dtn.materialize_E(h, kappa)
            # both trace coefficients are R^2 and E carries 1/R^2
            expected = dtn.apply_T_to_harmonic(h, kappa, "V", 1, 0) * 1.3**2
            errors.append(abs(u @ E @ u - expected))
        assert errors[0] > errors[1] > errors[2]

    def test_truncation_decay(self):
        m = build_ball_shell(8, 1, 1.3)
        d = fem.build_dof_map(m)
        Q = fem.assemble_trace_matrix(m, d, 20, 1.3)

        def field(x):
            r = np.linalg.norm(x, axis=1)
            _, U, V = vsh_table(2, x / r[:, None])
            return (V[harmonic_index(1, 0)] + 0.3 * U[harmonic_index(2, 1)]).real

        u = fem.edge_interpolant(m, d, field)[Q.support]

        def value(N):
            E, _ = dtn.materialize_E(dtn.DtnHandle(Q, N), 1 - 0.5j)
            return u @ E @ u

        gaps = [abs(value(N) - value(2 * N)) for N in (4, 6, 8, 10)]
        assert all(a > b for a, b in zip(gaps, gaps[1:]))
