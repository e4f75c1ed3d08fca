"""Exact scattering poles of the PEC unit ball and convergence-order helpers.

The poles of the unit ball are the zeros of h_n(kappa) (TE family, "H-zero")
and of z_n(kappa) = h_n(kappa) + kappa h_n'(kappa) (TM family, "Z-zero"),
each with multiplicity 2n + 1 from the azimuthal index m.

Both factors are multiplied by z^(n+1) exp(-iz) before root finding. This
removes the pole at the origin and leaves polynomials in z, so the argument
principle works on rectangles that touch or contain z = 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import log

import numpy as np

from .errors import DomainError
from .specfun import hankel1_seq

H_ZERO = "H-zero"
Z_ZERO = "Z-zero"
KINDS = (H_ZERO, Z_ZERO)


@dataclass(frozen=True)
class SearchRegion:
    """Half-open rectangle [a_min, a_max) x (b_min, b_max) in the complex plane."""

    a_min: float = 0.0
    a_max: float = 2.0
    b_min: float = -2.0
    b_max: float = 0.0

    def __post_init__(self):
        vals = (self.a_min, self.a_max, self.b_min, self.b_max)
        if not all(np.isfinite(v) for v in vals):
            raise DomainError("region bounds must be finite")
        if not (self.a_min < self.a_max and self.b_min < self.b_max):
            raise DomainError(f"empty region {vals}")
        if self.b_max > 0:
            raise DomainError("region must lie in the closed lower half-plane (b_max <= 0)")

    @property
    def center(self):
        return complex(0.5 * (self.a_min + self.a_max), 0.5 * (self.b_min + self.b_max))

    @property
    def width(self):
        return self.a_max - self.a_min

    @property
    def height(self):
        return self.b_max - self.b_min

    def contains(self, z, tol=0.0):
        """Half-open membership; ``tol`` widens only the closed side a = a_min."""
        z = np.asarray(z)
        return ((z.real >= self.a_min - tol) & (z.real < self.a_max)
                & (z.imag > self.b_min) & (z.imag < self.b_max))


@dataclass(frozen=True)
class OracleRoot:
    n: int
    kind: str
    kappa: complex
    multiplicity: int


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    kappa_hat: complex
    order: float | None


def _scaled(n, kind, z):
    """g(z) = z^(n+1) e^(-iz) f(z) and g'(z)/g(z) for f = h_n or z_n."""
    z = np.asarray(z, dtype=complex)
    hs = hankel1_seq(n, z)
    h, hm1 = hs[n + 1], hs[n]
    scale = z ** (n + 1) * np.exp(-1j * z)
    if kind == H_ZERO:
        f = h
        fp = hm1 - (n + 1) / z * h
    else:
        f = -n * h + z * hm1
        fp = (n * (n + 1) / z - z) * h
    g = scale * f
    with np.errstate(divide="ignore", invalid="ignore"):
        dlog = (n + 1) / z - 1j + fp / f
    return g, dlog


def _g(n, kind, z):
    # evaluates the polynomial directly near z = 0, where the recurrence is singular
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty(z.shape, dtype=complex)
    small = np.abs(z) < 1e-3
    if np.any(~small):
        out[~small] = _scaled(n, kind, z[~small])[0]
    if np.any(small):
        out[small] = np.polyval(_poly(n, kind), z[small])
    return out


def _poly(n, kind):
    """Coefficients (highest first) of z^(n+1) e^(-iz) h_n(z) or of the z_n analogue."""
    from math import factorial

    # h_n(z) = (-i)^(n+1) e^{iz}/z sum_k (i/(2z))^k (n+k)!/(k!(n-k)!)
    c = np.zeros(n + 1, dtype=complex)  # c[j] multiplies z^j
    for k in range(n + 1):
        c[n - k] = (-1j) ** (n + 1) * (0.5j) ** k * factorial(n + k) / (factorial(k) * factorial(n - k))
    if kind == H_ZERO:
        return c[::-1]
    # with p(z) = z^(n+1) e^{-iz} h_n:  z^(n+1) e^{-iz} z_n = (1 - (n+1) - iz) p + z p'
    p = np.polynomial.Polynomial(c)
    z = np.polynomial.Polynomial([0, 1])
    q = (-n - 1j * z) * p + z * p.deriv()
    return q.coef[::-1]


def _count(fun, lo, hi, n_init=16):
    corners = [lo, complex(hi.real, lo.imag), hi, complex(lo.real, hi.imag), lo]
    total = 0.0
    for a, b in zip(corners[:-1], corners[1:]):
        pts = a + (b - a) * np.linspace(0, 1, n_init + 1)
        vals = fun(pts)
        for k in range(n_init):
            total += _seg(fun, pts[k], pts[k + 1], vals[k], vals[k + 1])
    w = total / (2 * np.pi)
    k = int(round(w))
    if abs(w - k) > 1e-3:
        raise DomainError(f"non-integral winding number {w:.6f}")
    return k


def _seg(fun, z0, z1, g0, g1, depth=0):
    if g0 == 0 or g1 == 0:
        raise DomainError("root on contour")
    step = np.angle(g1 / g0)
    if abs(step) <= np.pi / 8:
        return step
    if depth > 40:
        raise DomainError("winding number did not stabilise; root on or too close to the contour")
    zm = 0.5 * (z0 + z1)
    gm = fun(np.array([zm]))[0]
    return _seg(fun, z0, zm, g0, gm, depth + 1) + _seg(fun, zm, z1, gm, g1, depth + 1)


def _newton(n, kind, z, lo, hi, maxit=50):
    for _ in range(maxit):
        _, dlog = _scaled(n, kind, np.array([z]))
        dz = 1.0 / dlog[0]
        if not np.isfinite(dz):
            return None
        z = z - dz
        if abs(dz) <= 1e-15 * max(1.0, abs(z)):
            break
    if not (lo.real - 1e-9 <= z.real <= hi.real + 1e-9 and lo.imag - 1e-9 <= z.imag <= hi.imag + 1e-9):
        return None
    return z


def _isolate(n, kind, lo, hi, count, out, depth=0):
    if count == 0:
        return
    size = max(hi.real - lo.real, hi.imag - lo.imag)
    if count == 1:
        z = _newton(n, kind, 0.5 * (lo + hi), lo, hi)
        if z is not None:
            out.append(z)
            return
    if size < 1e-12 or depth > 60:
        # a multiple root or Newton failure in a tiny box: the centre is accurate enough
        out.extend([0.5 * (lo + hi)] * count)
        return
    # quadrisect with slightly off-centre split lines so symmetric roots avoid the cuts
    fun = lambda z: _g(n, kind, z)  # noqa: E731
    mid = lo + (0.5 + 1e-3 * np.sqrt(2)) * (hi - lo)
    quads = [
        (lo, mid),
        (complex(mid.real, lo.imag), complex(hi.real, mid.imag)),
        (complex(lo.real, mid.imag), complex(mid.real, hi.imag)),
        (mid, hi),
    ]
    counts = [_count(fun, qlo, qhi) for qlo, qhi in quads]
    if sum(counts) != count:
        raise DomainError(f"root count mismatch during isolation ({sum(counts)} vs {count})")
    for (qlo, qhi), c in zip(quads, counts):
        _isolate(n, kind, qlo, qhi, c, out, depth + 1)


def factor_roots(n, kind, lo, hi):
    """All zeros of h_n (kind H-zero) or z_n (kind Z-zero) in the closed rectangle lo..hi."""
    if kind not in KINDS:
        raise DomainError(f"unknown kind {kind!r}")
    fun = lambda z: _g(n, kind, z)  # noqa: E731
    count = _count(fun, lo, hi)
    out = []
    _isolate(n, kind, lo, hi, count, out)
    return out


def exact_ball_resonances(region=None, n_max=6, margin=0.05, edge_tol=1e-9):
    """Exact poles of the PEC unit ball inside ``region`` for orders 1..n_max.

    Roots are located on a rectangle enlarged by ``margin`` and then filtered
    by half-open membership; roots within ``edge_tol`` of the closed edge
    a = a_min are kept (this includes kappa = -i for the default region).
    """
    if n_max < 1:
        raise DomainError(f"n_max must be >= 1, got {n_max}")
    region = region or SearchRegion()
    lo = complex(region.a_min - margin, region.b_min - margin)
    hi = complex(region.a_max + margin, region.b_max + margin)
    roots = []
    for n in range(1, n_max + 1):
        for kind in KINDS:
            for z in factor_roots(n, kind, lo, hi):
                if region.contains(z, tol=edge_tol):
                    roots.append(OracleRoot(n=n, kind=kind, kappa=complex(z), multiplicity=2 * n + 1))
    roots.sort(key=lambda r: (abs(r.kappa), r.n, r.kind))
    return roots


def factor_value(n, kind, kappa):
    """h_n(kappa) or z_n(kappa) together with a local magnitude scale."""
    hs = hankel1_seq(n, complex(kappa))
    h, hm1 = hs[n + 1], hs[n]
    if kind == H_ZERO:
        return complex(h), float(abs((2 * n - 1) / kappa * hm1) + abs(hs[n - 1]))
    return complex(-n * h + kappa * hm1), float(n * abs(h) + abs(kappa * hm1))


def distinct_locations(roots, tol=1e-8):
    locs = []
    for r in roots:
        if all(abs(r.kappa - z) > tol for z in locs):
            locs.append(r.kappa)
    return locs


def convergence_orders(rows, reference=None):
    """Convergence orders for a sequence of (N_l, kappa_l) rows.

    With ``reference`` the errors are |kappa_l - reference| and orders exist
    from the second row on; otherwise successive differences are used and
    orders start at the third row. Undefined orders are ``None``.
    """
    rows = [(int(N), complex(k)) for N, k in rows]
    Ns = [N for N, _ in rows]
    if any(b <= a for a, b in zip(Ns[:-1], Ns[1:])):
        raise DomainError("DOF counts must be strictly increasing")
    need = 2 if reference is not None else 3
    if len(rows) < need:
        raise DomainError(f"need at least {need} rows")
    if reference is not None:
        err = [abs(k - complex(reference)) for _, k in rows]
        first = 1
    else:
        err = [None] + [abs(rows[i][1] - rows[i - 1][1]) for i in range(1, len(rows))]
        first = 2
    out = []
    for i, (N, k) in enumerate(rows):
        order = None
        if i >= first and err[i] and err[i - 1]:
            order = -log(err[i] / err[i - 1]) / log((N / Ns[i - 1]) ** (1.0 / 3.0))
        out.append(ConvergenceRow(N=N, kappa_hat=k, order=order))
    return out


def fitted_order(Ns, errors):
    """Least-squares slope of -log(error) against log(N^(1/3))."""
    x = np.log(np.asarray(Ns, dtype=float)) / 3.0
    y = -np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
