"""Truncated Calderon (DtN) operator as a kappa-dependent low-rank matrix.

With the boundary trace matrix Q (rows: harmonics, columns: edge DOFs on the
outer sphere) the DtN block is

    E(kappa) = Q^H diag(c(kappa)) Q / R^2,

where c holds  c_U,n = i kappa R / delta_n  and  c_V,n = delta_n / (i kappa R).
Q is computed once per mesh; each kappa only rescales.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .specfun import dtn_ratios, harmonic_indices

FAMILIES = ("U", "V")


@dataclass(frozen=True)
class TraceMatrix:
    """Surface integrals of edge-basis traces against conjugated harmonics.

    ``values[k, j]`` is the integral over Gamma_R of the tangential trace of
    the basis function of free DOF ``support[j]`` dotted with the conjugate of
    the harmonic ``rows[k]``.
    """

    rows: tuple
    values: np.ndarray
    support: np.ndarray
    R: float
    n_free: int

    @property
    def N(self):
        return max(n for _, n, _ in self.rows)

    @staticmethod
    def row_labels(N):
        h = harmonic_indices(N)
        return tuple((f, n, m) for f in FAMILIES for n, m in h)


@dataclass
class DtnHandle:
    """Cached Q plus the coefficient evaluator for a truncation order ``N``.

    ``N`` may be smaller than the order Q was assembled with; the extra rows
    are then ignored.
    """

    Q: TraceMatrix
    N: int = None
    gram_budget: float = 4e8
    _rows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.N is None:
            self.N = self.Q.N
        if not 1 <= self.N <= self.Q.N:
            raise DomainError(f"truncation order {self.N} outside 1..{self.Q.N}")
        keep = np.array([n <= self.N for _, n, _ in self.Q.rows])
        self._rows = np.flatnonzero(keep)
        self.R = self.Q.R
        self.row_family = np.array([0 if self.Q.rows[k][0] == "U" else 1 for k in self._rows])
        self.row_n = np.array([self.Q.rows[k][1] for k in self._rows])
        self.values = np.ascontiguousarray(self.Q.values[self._rows])
        self.support = self.Q.support
        self._gram = None

    @property
    def n_support(self):
        return len(self.support)

    def coeffs(self, kappa, derivative=False):
        """Per-degree coefficients (c_U, c_V), optionally with their kappa-derivatives."""
        kappa = complex(kappa)
        R = self.R
        delta, ddelta = dtn_ratios(self.N, kappa, R, check="hz")
        ikR = 1j * kappa * R
        cU = ikR / delta
        cV = delta / ikR
        if not derivative:
            return cU, cV
        dcU = 1j * R / delta - ikR * ddelta / delta**2
        dcV = ddelta / ikR - delta / (ikR * kappa)
        return cU, cV, dcU, dcV

    def row_coeffs(self, cU, cV):
        n = self.row_n - 1
        return np.where(self.row_family == 0, cU[n], cV[n])

    def _grams(self):
        # one real symmetric B x B matrix per (family, n)
        if self._gram is None:
            B = self.n_support
            G = np.zeros((2, self.N, B, B))
            for f in (0, 1):
                for n in range(1, self.N + 1):
                    sel = (self.row_family == f) & (self.row_n == n)
                    q = self.values[sel]
                    g = (q.conj().T @ q).real / self.R**2
                    G[f, n - 1] = 0.5 * (g + g.T)
            self._gram = G
        return self._gram

    def use_gram(self):
        return 2 * self.N * self.n_support**2 * 8 <= self.gram_budget

    def block(self, cU, cV):
        """Dense (B, B) block Q^H diag(c) Q / R^2 for given per-degree coefficients."""
        if self.use_gram():
            G = self._grams()
            c = np.stack([cU, cV])
            re = np.tensordot(c.real, G, axes=([0, 1], [0, 1]))
            im = np.tensordot(c.imag, G, axes=([0, 1], [0, 1]))
            return re + 1j * im
        c = self.row_coeffs(cU, cV)
        E = (self.values.conj().T * c) @ self.values / self.R**2
        return 0.5 * (E + E.T)

    def apply(self, c_rows, x_support):
        """Q^H diag(c_rows) Q x / R^2 without forming the block."""
        return self.values.conj().T @ (c_rows * (self.values @ x_support)) / self.R**2


def dtn_coeffs(kappa, handle):
    """(c_U, c_V) for n = 1..N; raises CoefficientPoleError near zeros of h_n or z_n."""
    return handle.coeffs(kappa)


def materialize_E(handle, kappa):
    """Dense DtN block over Gamma_R-supported DOFs and its support map."""
    cU, cV = handle.coeffs(kappa)
    return handle.block(cU, cV), handle.support


def materialize_dE(handle, kappa):
    """kappa-derivative of the DtN block."""
    _, _, dcU, dcV = handle.coeffs(kappa, derivative=True)
    return handle.block(dcU, dcV)


def apply_T_to_harmonic(handle, kappa, family, n, m):
    """Multiplier of the truncated DtN operator on the pure harmonic (family, n, m)."""
    if family not in FAMILIES:
        raise DomainError(f"family must be 'U' or 'V', got {family!r}")
    if not 1 <= n <= handle.N or abs(m) > n:
        raise DomainError(f"harmonic ({n}, {m}) outside truncation range N={handle.N}")
    cU, cV = handle.coeffs(kappa)
    return complex(cU[n - 1] if family == "U" else cV[n - 1])
