import numpy as np
import pytest
from numpy.testing import assert_allclose

from edgedtn import edge_fem as fem
from edgedtn.errors import AssemblyError
from edgedtn.mesh import TetMesh, build_ball_shell, signed_volumes
from edgedtn.specfun import harmonic_index

REF_V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def single_tet(tag=None):
    faces = [(1, 2, 3, tag), (0, 2, 3, tag), (0, 1, 3, tag), (0, 1, 2, tag)] if tag else []
    return TetMesh.from_tagged(REF_V, [[0, 1, 2, 3]], faces)


def tet_rule(order=4):
    """Collapsed Gauss rule on the reference tet (exact well past degree 2)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1), 0.5 * w
    pts, wts = [], []
    for a, wa in zip(x, w):
        for b, wb in zip(x, w):
            for c, wc in zip(x, w):
                pts.append([a, (1 - a) * b, (1 - a) * (1 - b) * c])
                wts.append(wa * wb * wc * (1 - a) ** 2 * (1 - b))
    return np.array(pts), np.array(wts)


def whitney_oracle():
    """Reference-tet S and M by direct quadrature of explicit Whitney fields."""
    pts, wts = tet_rule()
    lam = np.column_stack([1 - pts.sum(1), pts])
    grad = np.array([[-1.0, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    phis, curls = [], []
    for a, b in fem.TET_EDGES:
        phis.append(lam[:, a, None] * grad[b] - lam[:, b, None] * grad[a])
        curls.append(2 * np.cross(grad[a], grad[b]))
    phis = np.array(phis)
    S = np.array([[np.dot(ci, cj) / 6 for cj in curls] for ci in curls])
    M = np.einsum("iqc,jqc,q->ij", phis, phis, wts)
    return S, M


class TestDofMap:
    def test_all_pec(self):
        d = fem.build_dof_map(single_tet("GammaD"))
        assert d.n_edges == 6 and d.n_free == 0 and d.pec.all()

    def test_untagged(self):
        d = fem.build_dof_map(single_tet())
        assert d.n_free == 6
        assert_allclose(d.free_index, np.arange(6))

    def test_shell_counts(self):
        m = build_ball_shell(1, 1, 1.3)
        d = fem.build_dof_map(m)
        inner = {tuple(sorted(e)) for f in m.faces_with("GammaD") for e in
                 ((f[0], f[1]), (f[0], f[2]), (f[1], f[2]))}
        assert d.n_free == d.n_edges - len(inner)
        assert d.n_free == 44
        assert np.all(d.edges[:, 0] < d.edges[:, 1])
        assert np.all(d.free_index[d.free_edges] == np.arange(d.n_free))

    def test_signs_consistent(self):
        m = build_ball_shell(2, 1, 1.3)
        d = fem.build_dof_map(m)
        a = m.tets[:, fem.TET_EDGES[:, 0]]
        b = m.tets[:, fem.TET_EDGES[:, 1]]
        lo = np.where(d.tet_signs > 0, a, b)
        assert np.all(d.edges[d.tet_edges, 0] == lo)
        assert all(len(set(row)) == 6 for row in d.tet_edges)


class TestReferenceElement:
    def test_stiffness_entry(self):
        m = single_tet()
        S = fem.assemble_stiffness(m, fem.build_dof_map(m)).toarray()
        # 4 |grad l0 x grad l1|^2 vol with vol = 1/6
        assert_allclose(S[0, 0], 4 * 2 / 6, rtol=1e-14)

    def test_against_quadrature_oracle(self):
        m = single_tet()
        d = fem.build_dof_map(m)
        S_ref, M_ref = whitney_oracle()
        assert_allclose(fem.assemble_stiffness(m, d).toarray(), S_ref, atol=1e-14)
        assert_allclose(fem.assemble_mass(m, d).toarray(), M_ref, atol=1e-14)

    def test_degenerate_tet(self):
        V = REF_V.copy()
        V[3] = [0.3, 0.3, 0.0]
        m = TetMesh(V, [[0, 1, 2, 3]])
        with pytest.raises(AssemblyError, match="degenerate tetrahedron 0"):
            fem.assemble_stiffness(m, fem.build_dof_map(m))


@pytest.fixture(scope="module")
def shell():
    m = build_ball_shell(2, 2, 1.3)
    d = fem.build_dof_map(m)
    return m, d, fem.assemble_stiffness(m, d), fem.assemble_mass(m, d)


class TestMatrices:
    def test_symmetric(self, shell):
        _, _, S, M = shell
        assert abs(S - S.T).max() == 0
        assert abs(M - M.T).max() == 0

    def test_mass_positive_definite(self):
        m = build_ball_shell(1, 1, 1.3)
        M = fem.assemble_mass(m, fem.build_dof_map(m)).toarray()
        assert m.n_tets == 36
        assert np.linalg.eigvalsh(M).min() > 0

    def test_random_quadratic_form(self, shell):
        _, _, _, M = shell
        x = np.random.default_rng(1).normal(size=(M.shape[0], 5))
        assert np.all(np.einsum("ij,ij->j", x, M @ x) > 0)

    def test_gradients_in_kernel(self, shell):
        m, d, S, _ = shell
        G = fem.discrete_gradient(m, d)
        norm_S = abs(S).sum(axis=1).max()
        rng = np.random.default_rng(2)
        for _ in range(10):
            g = G @ rng.normal(size=G.shape[1])
            assert np.linalg.norm(S @ g) <= 1e-10 * norm_S * np.linalg.norm(g)

    def test_permutation_invariance(self):
        m = build_ball_shell(2, 1, 1.3)
        d = fem.build_dof_map(m)
        S, M = fem.assemble_stiffness(m, d), fem.assemble_mass(m, d)
        perm = np.random.default_rng(3).permutation(m.n_vertices)
        V2 = np.empty_like(m.vertices)
        V2[perm] = m.vertices
        m2 = TetMesh.from_tagged(V2, perm[m.tets],
                                 [(*perm[f], "GammaD" if t == 0 else "GammaR")
                                  for f, t in zip(m.boundary_faces, m.face_tags)])
        d2 = fem.build_dof_map(m2)
        S2, M2 = fem.assemble_stiffness(m2, d2), fem.assemble_mass(m2, d2)
        e = d.edges[d.free_edges]
        pe = perm[e]
        idx = d2.free_index[d2.edge_ids(pe)]
        s = np.where(pe[:, 0] < pe[:, 1], 1.0, -1.0)
        D = np.diag(s)
        assert_allclose(D @ S2.toarray()[np.ix_(idx, idx)] @ D, S.toarray(), atol=1e-12)
        assert_allclose(D @ M2.toarray()[np.ix_(idx, idx)] @ D, M.toarray(), atol=1e-12)

    def test_norm_scaling(self):
        norms = []
        for n in (2, 4):
            m = build_ball_shell(n, n, 1.3)
            d = fem.build_dof_map(m)
            norms.append((abs(fem.assemble_stiffness(m, d)).sum(1).max(),
                          abs(fem.assemble_mass(m, d)).sum(1).max()))
        # basis ~ 1/h and curl ~ 1/h^2, so S ~ 1/h and M ~ h
        assert 1.6 < norms[1][0] / norms[0][0] < 2.5
        assert 1.6 < norms[0][1] / norms[1][1] < 2.5


class TestInterpolant:
    @staticmethod
    def untagged(n):
        m = build_ball_shell(n, n, 1.3)
        return TetMesh(m.vertices, m.tets)

    def test_constant_field_energy(self):
        exact = 4 * np.pi / 3 * (1.3**3 - 1)
        errors = []
        for n in (2, 4):
            m = self.untagged(n)
            d = fem.build_dof_map(m)
            u = fem.edge_interpolant(m, d, lambda x: np.tile([1.0, 0, 0], (len(x), 1)))
            M = fem.assemble_mass(m, d)
            S = fem.assemble_stiffness(m, d)
            vol = signed_volumes(m.vertices, m.tets).sum()
            assert_allclose(u @ M @ u, vol, rtol=1e-12)
            assert np.linalg.norm(S @ u) <= 1e-12 * abs(S).sum(1).max() * np.linalg.norm(u)
            errors.append(abs(vol - exact))
        # straight facets lose O(h^2) of the shell volume
        assert errors[1] < errors[0] / 3

    def test_linear_field_exact(self):
        m = single_tet()
        d = fem.build_dof_map(m)
        u = fem.edge_interpolant(m, d, lambda x: np.column_stack([x[:, 1], 2 * x[:, 2], -x[:, 0]]))
        # edge (0,1): (0, 0, -t) . (1, 0, 0) = 0;  edge (2,3): (1-t, 2t, 0) . (0, -1, 1) = -2t
        assert_allclose(u[0], 0.0, atol=1e-15)
        assert_allclose(u[5], -1.0, rtol=1e-14)


class TestTraceMatrix:
    def test_rows_and_conjugates(self):
        m = build_ball_shell(2, 1, 1.3)
        d = fem.build_dof_map(m)
        Q = fem.assemble_trace_matrix(m, d, 10, 1.3)
        assert Q.values.shape[0] == 240
        assert len(Q.rows) == 240 and Q.rows[0] == ("U", 1, -1) and Q.rows[120] == ("V", 1, -1)
        K = 120
        for blk in (0, K):
            for n in range(1, 11):
                for mm in range(1, n + 1):
                    a = Q.values[blk + harmonic_index(n, mm)]
                    b = Q.values[blk + harmonic_index(n, -mm)]
                    assert_allclose(b, a.conj(), atol=1e-12 * abs(Q.values).max())

    def test_support_is_gamma_r(self):
        m = build_ball_shell(2, 2, 1.3)
        d = fem.build_dof_map(m)
        Q = fem.assemble_trace_matrix(m, d, 3, 1.3)
        expected = d.free_index[np.flatnonzero(d.gamma_r)]
        assert_allclose(Q.support, np.sort(expected))
        assert Q.n_free == d.n_free

    def test_no_outer_sphere(self):
        m = single_tet("GammaD")
        with pytest.raises(AssemblyError, match="GammaR"):
            fem.assemble_trace_matrix(m, fem.build_dof_map(m), 2, 1.0)

    def test_bad_order(self):
        m = build_ball_shell(1, 1, 1.3)
        with pytest.raises(AssemblyError):
            fem.assemble_trace_matrix(m, fem.build_dof_map(m), 0, 1.3)

    @pytest.mark.parametrize("area_correction", [False, True])
    def test_v10_dominates_under_refinement(self, area_correction):
        c = np.sqrt(3 / (8 * np.pi))

        def v10(x):
            r = np.linalg.norm(x, axis=1)
            return c * np.column_stack([x[:, 1], -x[:, 0], 0 * r]) / r[:, None]

        ratios, errors = [], []
        target = 24 + harmonic_index(1, 0)
        for n in (2, 4, 8):
            m = build_ball_shell(n, 1, 1.3)
            d = fem.build_dof_map(m)
            Q = fem.assemble_trace_matrix(m, d, 4, 1.3, area_correction=area_correction)
            u = fem.edge_interpolant(m, d, v10)[Q.support]
            coef = np.abs(Q.values @ u)
            others = np.delete(coef, target).max()
            ratios.append(coef[target] / others)
            # |V_1^0| integrates to R^2 over the sphere
            errors.append(abs(coef[target] - 1.3**2))
        assert ratios[0] < ratios[1] < ratios[2]
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] < 0.02 * 1.3**2
