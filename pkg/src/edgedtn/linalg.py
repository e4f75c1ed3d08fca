"""Sparse complex system F(kappa) = S - kappa^2 M - i kappa E(kappa) and direct solves.

The sparsity pattern of F is the union of the pattern of S, M and a dense
block on the DOFs supported on the outer sphere. It is built once; each kappa
only refills the value array.
"""
from __future__ import annotations

import io
import warnings

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dtn import DtnHandle
from .errors import AssemblyError, SingularFactorError

# structural/fill-reducing ordering passed to SuperLU; F is structurally symmetric
ORDERING = "MMD_AT_PLUS_A"
# prefer diagonal pivots so row interchanges do not undo the symmetric ordering
DIAG_PIVOT_THRESH = 0.1


def _csr(A):
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


class SystemPattern:
    """Union pattern of S, M and the dense Gamma_R block, with scatter maps."""

    def __init__(self, S, M, support):
        S, M = _csr(S), _csr(M)
        n = S.shape[0]
        if S.shape != (n, n) or M.shape != (n, n):
            raise AssemblyError(f"S {S.shape} and M {M.shape} must be square and equal")
        support = np.asarray(support, dtype=np.int64)
        B = len(support)
        bi = np.repeat(support, B)
        bj = np.tile(support, B)
        blk = sp.csr_matrix((np.ones(B * B), (bi, bj)), shape=(n, n))
        P = _csr(abs(S) + abs(M) + blk)
        P.data[:] = 1.0
        self.n = n
        self.indptr = P.indptr
        self.indices = P.indices
        self.nnz = P.nnz
        self.support = support
        self._S = self._locate(S)
        self._M = self._locate(M)
        self._blk = self._positions(bi, bj)
        self.S_data = S.data.astype(float)
        self.M_data = M.data.astype(float)

    def _positions(self, rows, cols):
        # position of (r, c) inside the sorted CSR arrays
        start = self.indptr[rows]
        key = rows.astype(np.int64) * self.n + cols
        flat = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr)) * self.n + self.indices
        pos = np.searchsorted(flat, key)
        assert np.all(pos >= start)
        return pos

    def _locate(self, A):
        rows = np.repeat(np.arange(self.n), np.diff(A.indptr))
        return self._positions(rows, A.indices)

    def matrix(self, s_coef, m_coef, block=None, b_coef=1.0):
        data = np.zeros(self.nnz, dtype=complex)
        data[self._S] += s_coef * self.S_data
        data[self._M] += m_coef * self.M_data
        if block is not None:
            data[self._blk] += b_coef * np.asarray(block).ravel()
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))


class ResonanceOperator:
    """kappa -> F(kappa), F'(kappa) and factorizations for one assembled system.

    ``mode`` selects how F(kappa) is factorized:

    ``"splice"``
        the dense Gamma_R block is written into the sparse pattern and the
        result is factorized directly;
    ``"bordered"``
        the low-rank DtN term is carried by 2N(N+2) extra unknowns
        y = diag(c) Q x, giving the sparse system
        [[S - kappa^2 M, -(i kappa / R^2) Q^H], [diag(c) Q, -I]]
        whose Schur complement on x is exactly F(kappa);
    ``"auto"``
        bordered once the Gamma_R support exceeds ``border_min`` DOFs.
    """

    def __init__(self, S, M, handle: DtnHandle, mode="auto", border_min=1000):
        if mode not in ("splice", "bordered", "auto"):
            raise ValueError(f"unknown factorization mode {mode!r}")
        self.handle = handle
        self.pattern = SystemPattern(S, M, handle.support)
        self.n = self.pattern.n
        self.mode = mode
        if mode == "auto":
            self.mode = "bordered" if handle.n_support >= border_min else "splice"
        self._S = self.pattern.matrix(1.0, 0.0).real if self.mode == "bordered" else None
        if self.mode == "bordered":
            self._M = self.pattern.matrix(0.0, 1.0).real
            K, B = handle.values.shape
            rows = np.repeat(np.arange(K), B)
            cols = np.tile(handle.support, K)
            self._Q = sp.csr_matrix((handle.values.ravel(), (rows, cols)), shape=(K, self.n))
            self._QH = self._Q.conj().T.tocsr()

    def __call__(self, kappa):
        return self.matrix(kappa)

    def matrix(self, kappa):
        kappa = complex(kappa)
        cU, cV = self.handle.coeffs(kappa)
        E = self.handle.block(cU, cV)
        return self.pattern.matrix(1.0, -kappa**2, E, -1j * kappa)

    def derivative(self, kappa):
        """F'(kappa) = -2 kappa M - i E(kappa) - i kappa E'(kappa)."""
        kappa = complex(kappa)
        cU, cV, dcU, dcV = self.handle.coeffs(kappa, derivative=True)
        blk = -1j * self.handle.block(cU + kappa * dcU, cV + kappa * dcV)
        return self.pattern.matrix(0.0, -2 * kappa, blk)

    def factor(self, kappa):
        if self.mode == "splice":
            return factorize(self.matrix(kappa))
        return self._bordered(complex(kappa))

    def _bordered(self, kappa):
        cU, cV = self.handle.coeffs(kappa)
        c = self.handle.row_coeffs(cU, cV)
        K = len(c)
        A = self._S - kappa**2 * self._M
        top = sp.hstack([A, (-1j * kappa / self.handle.R**2) * self._QH])
        bot = sp.hstack([sp.diags(c) @ self._Q, -sp.eye(K)])
        return BorderedFactorization(factorize(sp.vstack([top, bot]).tocsc()), self.n, K)


def build_F(S, M, handle, kappa):
    """Assemble F(kappa) = S - kappa^2 M - i kappa E(kappa) as a CSR matrix."""
    return ResonanceOperator(S, M, handle).matrix(kappa)


class Factorization:
    """SuperLU factors of a square sparse matrix."""

    def __init__(self, lu, n):
        self._lu = lu
        self.n = n
        self.perm_c = lu.perm_c
        self.perm_r = lu.perm_r

    def solve(self, b):
        b = np.asarray(b, dtype=complex)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {self.n}")
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularFactorError("solve produced non-finite values")
        return x

    @property
    def nnz(self):
        return self._lu.L.nnz + self._lu.U.nnz


class BorderedFactorization:
    """Solves with F through the factors of its bordered extension."""

    def __init__(self, fact, n, k):
        self._fact = fact
        self.n = n
        self.k = k

    def solve(self, b):
        b = np.asarray(b, dtype=complex)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {self.n}")
        pad = np.zeros((self.k,) + b.shape[1:], dtype=complex)
        return self._fact.solve(np.concatenate([b, pad]))[: self.n]

    @property
    def nnz(self):
        return self._fact.nnz


def factorize(F):
    """Sparse LU with a fill-reducing ordering; singular pivots raise SingularFactorError."""
    F = sp.csc_matrix(F, dtype=complex)
    if F.shape[0] != F.shape[1]:
        raise ValueError(f"matrix must be square, got {F.shape}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            lu = spla.splu(F, permc_spec=ORDERING, diag_pivot_thresh=DIAG_PIVOT_THRESH,
                           options={"SymmetricMode": True})
    except (RuntimeError, spla.MatrixRankWarning) as exc:
        raise SingularFactorError(f"factorization failed: {exc}") from exc
    d = lu.U.diagonal()
    if d.size and (not np.all(np.isfinite(d)) or np.min(np.abs(d)) == 0.0):
        raise SingularFactorError("exactly singular pivot")
    return Factorization(lu, F.shape[0])


def solve(fact, b):
    return fact.solve(b)


def write_triplets(A, fp=None):
    """Write a sparse matrix as ``i j re im`` lines (0-based). Returns text if fp is None."""
    A = sp.coo_matrix(A)
    order = np.lexsort((A.col, A.row))
    out = io.StringIO() if fp is None else fp
    for k in order:
        v = complex(A.data[k])
        out.write(f"{A.row[k]} {A.col[k]} {v.real:.17g} {v.imag:.17g}\n")
    return out.getvalue() if fp is None else None


def read_triplets(text, shape=None):
    rows, cols, vals = [], [], []
    for line in text.splitlines():
        if not line.strip():
            continue
        i, j, re, im = line.split()
        rows.append(int(i))
        cols.append(int(j))
        vals.append(complex(float(re), float(im)))
    if shape is None:
        n = max(max(rows), max(cols)) + 1 if rows else 0
        shape = (n, n)
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=shape)
