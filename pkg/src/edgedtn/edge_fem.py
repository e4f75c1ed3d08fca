"""Lowest-order Nedelec (Whitney) edge elements on tetrahedra.

Global edges are oriented from the lower to the higher vertex index. The
basis function of edge (a, b) is  lambda_a grad(lambda_b) - lambda_b grad(lambda_a),
whose tangential line integral along the edge from a to b equals one.
Edges lying on GammaD faces are eliminated (PEC), the rest are numbered
densely as free DOFs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dtn import TraceMatrix
from .errors import AssemblyError, MeshError
from .mesh import GAMMA_D, GAMMA_R, TET_EDGES, unique_edges
from .specfun import vsh_table

# degree-5 seven-point Dunavant rule on the reference triangle: barycentrics, weights (sum 1)
_A1, _B1, _W1 = 0.059715871789770, 0.470142064105115, 0.132394152788506
_A2, _B2, _W2 = 0.797426985353087, 0.101286507323456, 0.125939180544827
DUNAVANT7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
DUNAVANT7_W = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])

TRI_EDGES = np.array([(0, 1), (0, 2), (1, 2)])


@dataclass(frozen=True)
class EdgeDofMap:
    edges: np.ndarray        # (ne, 2), lo < hi
    tet_edges: np.ndarray    # (nt, 6) global edge ids
    tet_signs: np.ndarray    # (nt, 6) +1 when local a->b runs lo->hi
    pec: np.ndarray          # (ne,) bool
    gamma_r: np.ndarray      # (ne,) bool
    free_index: np.ndarray   # (ne,) dense index or -1
    free_edges: np.ndarray   # (n_free,) edge ids

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_free(self):
        return len(self.free_edges)

    def edge_ids(self, pairs):
        """Global ids of vertex pairs (any order)."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        nv = int(self.edges.max()) + 1
        keys = self.edges[:, 0] * nv + self.edges[:, 1]
        q = pairs[:, 0] * nv + pairs[:, 1]
        idx = np.searchsorted(keys, q)
        if np.any(idx >= len(keys)) or np.any(keys[np.minimum(idx, len(keys) - 1)] != q):
            raise MeshError("vertex pair is not an edge of the mesh")
        return idx


@dataclass(frozen=True)
class AssembledSystem:
    S: sp.csr_matrix
    M: sp.csr_matrix
    Q: TraceMatrix
    dofs: EdgeDofMap

    @property
    def n_free(self):
        return self.S.shape[0]


def _face_edge_pairs(faces):
    return faces[:, TRI_EDGES]


def build_dof_map(mesh):
    """Enumerate oriented global edges and eliminate PEC edges."""
    edges, tet_edges = unique_edges(mesh.tets)
    a = mesh.tets[:, TET_EDGES[:, 0]]
    b = mesh.tets[:, TET_EDGES[:, 1]]
    signs = np.where(a < b, 1, -1).astype(np.int8)

    dummy = EdgeDofMap(edges, tet_edges, signs, None, None, None, None)
    ne = len(edges)
    pec = np.zeros(ne, bool)
    gr = np.zeros(ne, bool)
    fd = mesh.faces_with(GAMMA_D)
    fr = mesh.faces_with(GAMMA_R)
    if len(fd):
        pec[dummy.edge_ids(_face_edge_pairs(fd).reshape(-1, 2))] = True
    if len(fr):
        gr[dummy.edge_ids(_face_edge_pairs(fr).reshape(-1, 2))] = True
    free_index = -np.ones(ne, dtype=np.int64)
    free_edges = np.flatnonzero(~pec)
    free_index[free_edges] = np.arange(len(free_edges))
    return EdgeDofMap(edges, tet_edges, signs, pec, gr, free_index, free_edges)


def _geometry(mesh):
    p = mesh.vertices[mesh.tets]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    det = np.linalg.det(J)
    h = np.linalg.norm(J, axis=2).max(axis=1)
    bad = np.abs(det) <= 1e-14 * h**3
    if bad.any():
        k = int(np.argmax(bad))
        raise AssemblyError(f"degenerate tetrahedron {k} {tuple(mesh.tets[k])} (volume {det[k] / 6:.3e})")
    inv = np.linalg.inv(J)
    grads = np.empty((len(J), 4, 3))
    grads[:, 1:] = np.transpose(inv, (0, 2, 1))
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return np.abs(det) / 6.0, grads


def element_stiffness(vol, grads):
    curls = 2.0 * np.cross(grads[:, TET_EDGES[:, 0]], grads[:, TET_EDGES[:, 1]])
    return vol[:, None, None] * np.einsum("tic,tjc->tij", curls, curls)


def element_mass(vol, grads):
    G = np.einsum("tic,tjc->tij", grads, grads)
    A, B = TET_EDGES[:, 0], TET_EDGES[:, 1]
    Ii = (np.ones((4, 4)) + np.eye(4)) / 20.0
    a, b = A[:, None], B[:, None]
    c, d = A[None, :], B[None, :]
    Me = (Ii[a, c] * G[:, b, d] - Ii[a, d] * G[:, b, c]
          - Ii[b, c] * G[:, a, d] + Ii[b, d] * G[:, a, c])
    return vol[:, None, None] * Me


def _scatter(local, dofs):
    s = dofs.tet_signs.astype(float)
    local = local * s[:, :, None] * s[:, None, :]
    idx = dofs.free_index[dofs.tet_edges]
    rows = np.broadcast_to(idx[:, :, None], local.shape)
    cols = np.broadcast_to(idx[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0)
    n = dofs.n_free
    A = sp.coo_matrix((local[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A = (0.5 * (A + A.T)).tocsr()
    A.sort_indices()
    return A


def assemble_stiffness(mesh, dofs):
    """Curl-curl matrix over free DOFs."""
    vol, grads = _geometry(mesh)
    return _scatter(element_stiffness(vol, grads), dofs)


def assemble_mass(mesh, dofs):
    """Mass matrix over free DOFs (exact for the degree-2 integrands)."""
    vol, grads = _geometry(mesh)
    return _scatter(element_mass(vol, grads), dofs)


def _triangle_basis(P):
    """Surface gradients of barycentrics on flat triangles P (nf, 3, 3) and areas."""
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12**2
    area = 0.5 * np.sqrt(det)
    gl1 = (g22[:, None] * e1 - g12[:, None] * e2) / det[:, None]
    gl2 = (-g12[:, None] * e1 + g11[:, None] * e2) / det[:, None]
    grads = np.stack([-gl1 - gl2, gl1, gl2], axis=1)
    normal = np.cross(e1, e2)
    normal /= np.linalg.norm(normal, axis=1)[:, None]
    return grads, area, normal


def assemble_trace_matrix(mesh, dofs, N, R, area_correction=False, chunk=800):
    """Trace matrix Q of the Gamma_R edge traces against conjugated U, V harmonics.

    Each boundary triangle is integrated with the 7-point degree-5 rule on
    the flat triangle; the harmonics are sampled in the direction x/|x|.
    With ``area_correction`` the flat area element is replaced by the
    projected spherical one, R^2 (x_hat . n) / |x|^2.
    """
    if N < 1:
        raise AssemblyError("truncation order must be >= 1")
    faces = mesh.faces_with(GAMMA_R)
    if len(faces) == 0:
        raise AssemblyError("mesh has no GammaR faces; the DtN block needs the outer sphere")
    pairs = faces[:, TRI_EDGES]                       # (nf, 3, 2)
    eid = dofs.edge_ids(pairs.reshape(-1, 2)).reshape(-1, 3)
    sign = np.where(pairs[:, :, 0] < pairs[:, :, 1], 1.0, -1.0)
    fidx = dofs.free_index[eid]
    if np.any(fidx < 0):
        raise AssemblyError("a GammaR edge is also PEC; the obstacle touches the outer sphere")
    support = np.unique(fidx)
    col = np.searchsorted(support, fidx)
    rows = TraceMatrix.row_labels(N)
    K = len(rows) // 2
    B = len(support)
    Qv = np.zeros((2 * K, B), dtype=complex)
    bary = DUNAVANT7_BARY
    for start in range(0, len(faces), chunk):
        sl = slice(start, start + chunk)
        P = mesh.vertices[faces[sl]]
        nf = len(P)
        grads, area, normal = _triangle_basis(P)
        xq = np.einsum("qv,fvc->fqc", bary, P)      # (nf, 7, 3)
        rq = np.linalg.norm(xq, axis=2)
        dirs = xq / rq[:, :, None]
        w = DUNAVANT7_W[None, :] * area[:, None]
        if area_correction:
            w = w * R**2 * np.abs(np.einsum("fqc,fc->fq", dirs, normal)) / rq**2
        a, b = TRI_EDGES[:, 0], TRI_EDGES[:, 1]
        # phi[f, q, e, c] for the three face edges, oriented lo -> hi
        phi = (bary[None, :, a, None] * grads[:, None, b, :]
               - bary[None, :, b, None] * grads[:, None, a, :])
        phi = phi * sign[sl][:, None, :, None]
        _, U, V = vsh_table(N, dirs.reshape(-1, 3))
        for blk, W in enumerate((U, V)):
            Wc = W.conj().reshape(K, nf, 7, 3)
            loc = np.einsum("kfqc,fqec,fq->kfe", Wc, phi, w)
            Pm = sp.csr_matrix((np.ones(nf * 3), (np.arange(nf * 3), col[sl].ravel())), shape=(nf * 3, B))
            Qv[blk * K:(blk + 1) * K] += (Pm.T @ loc.reshape(K, nf * 3).T).T
    Qv.setflags(write=False)
    return TraceMatrix(rows=rows, values=Qv, support=support, R=float(R), n_free=dofs.n_free)


def assemble(mesh, N, R, area_correction=False):
    """Dof map, S, M and Q for a mesh."""
    dofs = build_dof_map(mesh)
    S = assemble_stiffness(mesh, dofs)
    M = assemble_mass(mesh, dofs)
    Q = assemble_trace_matrix(mesh, dofs, N, R, area_correction=area_correction)
    return AssembledSystem(S=S, M=M, Q=Q, dofs=dofs)


# ---------------------------------------------------------------------------
# interpolation helpers


def edge_interpolant(mesh, dofs, field, n_gauss=4, free_only=True):
    """Edge DOFs  int_e u . t ds  of a vector field ``field(x) -> (n, 3)``.

    The line integrals run from the lower to the higher vertex index and use
    ``n_gauss`` Gauss-Legendre points per edge.
    """
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * (xg + 1.0)
    p0 = mesh.vertices[dofs.edges[:, 0]]
    p1 = mesh.vertices[dofs.edges[:, 1]]
    pts = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
    vals = np.asarray(field(pts.reshape(-1, 3))).reshape(len(p0), n_gauss, 3)
    u = 0.5 * np.einsum("g,egc,ec->e", wg, vals, p1 - p0)
    return u[dofs.free_edges] if free_only else u


def discrete_gradient(mesh, dofs):
    """Sparse map from vertex values to free edge DOFs of their gradient.

    Columns for vertices on GammaD are dropped, so the image lies in the
    PEC-constrained space.
    """
    nv = mesh.n_vertices
    on_d = np.zeros(nv, bool)
    on_d[mesh.faces_with(GAMMA_D).ravel()] = True
    free_v = np.flatnonzero(~on_d)
    vmap = -np.ones(nv, dtype=np.int64)
    vmap[free_v] = np.arange(len(free_v))
    fe = dofs.free_edges
    lo, hi = dofs.edges[fe, 0], dofs.edges[fe, 1]
    r = np.concatenate([np.arange(len(fe)), np.arange(len(fe))])
    c = np.concatenate([vmap[hi], vmap[lo]])
    v = np.concatenate([np.ones(len(fe)), -np.ones(len(fe))])
    keep = c >= 0
    return sp.csr_matrix((v[keep], (r[keep], c[keep])), shape=(len(fe), len(free_v)))
