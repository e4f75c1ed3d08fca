"""Spherical Hankel functions, DtN ratios and vector spherical harmonics.

Hankel functions of the first kind are generated by upward recurrence from
the closed forms of h_0 and h_1; the recurrence is stable because h_n is the
dominant solution. Scalar spherical harmonics are fully orthonormal and carry
no Condon-Shortley phase, so that ``conj(Y_n^m) == Y_n^{-m}`` holds literally
and the same identity carries over to the tangential fields U and V.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import lgamma, log, pi, sqrt

import numpy as np

from .errors import CoefficientPoleError, DomainError

# relative size below which a computed h_n or z_n is treated as a zero
POLE_RTOL = 1e-12


@dataclass(frozen=True)
class HankelPair:
    n: int
    z: complex
    h: complex
    hp: complex


@dataclass(frozen=True)
class DtnRatio:
    n: int
    kR: complex
    delta: complex
    delta_prime: complex


@dataclass(frozen=True)
class VecHarmonicSample:
    n: int
    m: int
    dir: np.ndarray
    Y: complex
    U: np.ndarray
    V: np.ndarray


def hankel1_seq(nmax, z):
    """Return ``h_{-1}, h_0, ..., h_nmax`` of the first kind at ``z``.

    ``z`` may be a scalar or an array; the result has shape
    ``(nmax + 2,) + np.shape(z)`` and index ``k`` holds order ``k - 1``.
    The order -1 entry is what the three-term recurrence gives when run one
    step downward, which keeps derivative formulas uniform at n = 0, 1.
    """
    if nmax < 0:
        raise DomainError(f"order must be non-negative, got {nmax}")
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise DomainError("spherical Hankel functions are singular at z = 0")
    out = np.empty((nmax + 2,) + z.shape, dtype=complex)
    e = np.exp(1j * z)
    h0 = -1j * e / z
    h1 = -e * (z + 1j) / z**2
    out[0] = h0 / z - h1
    out[1] = h0
    if nmax >= 1:
        out[2] = h1
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, nmax):
            out[n + 2] = (2 * n + 1) / z * out[n + 1] - out[n]
            if not np.all(np.isfinite(out[n + 2])):
                raise OverflowError(f"spherical Hankel recurrence overflowed at order {n + 1}")
    return out


def hankel1_sph(n, z):
    """Spherical Hankel function h_n^(1)(z) and its derivative."""
    if n < 0:
        raise DomainError(f"order must be non-negative, got {n}")
    z = complex(z)
    hs = hankel1_seq(n, z)
    h = hs[n + 1]
    hp = hs[n] - (n + 1) / z * h
    return HankelPair(n=n, z=z, h=complex(h), hp=complex(hp))


def z1_sph(n, z):
    """Return z_n(z) = h_n(z) + z h_n'(z), evaluated as -n h_n + z h_{n-1}."""
    if n < 0:
        raise DomainError(f"order must be non-negative, got {n}")
    z = complex(z)
    hs = hankel1_seq(n, z)
    return complex(-n * hs[n + 1] + z * hs[n])


def _ratios(nmax, kR):
    """delta_n, d delta_n / d(kR) for n = 1..nmax plus pole diagnostics.

    Runs the recurrence on q_n = h_n / h_{n-1}, which stays bounded where
    h_n itself would overflow.
    """
    kR = complex(kR)
    if kR == 0:
        raise DomainError("spherical Hankel functions are singular at z = 0")
    n = np.arange(1, nmax + 1)
    q = np.empty(nmax, dtype=complex)
    # q_1 = h_1 / h_0
    q_prev = (kR + 1j) / (1j * kR)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q[0] = q_prev
        for k in range(1, nmax):
            q[k] = (2 * k + 1) / kR - 1 / q[k - 1]
        inv_q = 1 / q
        # h_{n-2} / h_{n-1}, with h_{-1} / h_0 = 1/kR - q_1
        inv_prev = np.concatenate([[1 / kR - q[0]], inv_q[:-1]])
        h_scale = np.abs((2 * n - 1) / kR) + np.abs(inv_prev)
        h_zero = np.abs(q) <= POLE_RTOL * h_scale
        zq = -n * q + kR
        z_zero = np.abs(zq) <= POLE_RTOL * (n * np.abs(q) + abs(kR))
        delta = -n + kR * inv_q
        # z_n'(z) = (n(n+1)/z - z) h_n  and  h_n'/h_n = h_{n-1}/h_n - (n+1)/z
        dlog_h = inv_q - (n + 1) / kR
        ddelta = (n * (n + 1) / kR - kR) - delta * dlog_h
    return delta, ddelta, h_zero, z_zero


def dtn_ratio(n, kappa, R):
    """DtN ratio delta_n(kappa) = z_n(kappa R) / h_n(kappa R) and its kappa-derivative."""
    if n < 1:
        raise DomainError(f"DtN ratio needs n >= 1, got {n}")
    if R <= 0:
        raise DomainError(f"radius must be positive, got {R}")
    kR = complex(kappa) * R
    delta, ddelta, h_zero, _ = _ratios(n, kR)
    if h_zero[-1]:
        raise CoefficientPoleError(n, "h", kappa)
    return DtnRatio(n=n, kR=kR, delta=complex(delta[-1]), delta_prime=complex(R * ddelta[-1]))


def dtn_ratios(nmax, kappa, R, check="h"):
    """Vectorised ``dtn_ratio`` for n = 1..nmax.

    Returns ``(delta, delta_prime)`` arrays. ``check`` selects which
    vanishing factors raise: ``"h"``, ``"hz"`` (both) or ``""``.
    """
    kR = complex(kappa) * R
    delta, ddelta, h_zero, z_zero = _ratios(nmax, kR)
    if "h" in check and h_zero.any():
        raise CoefficientPoleError(int(np.argmax(h_zero)) + 1, "h", kappa)
    if "z" in check and z_zero.any():
        raise CoefficientPoleError(int(np.argmax(z_zero)) + 1, "z", kappa)
    return delta, R * ddelta


# ---------------------------------------------------------------------------
# spherical harmonics


def harmonic_indices(nmax):
    """(n, m) pairs for 1 <= n <= nmax, m = -n..n in lexicographic order."""
    return [(n, m) for n in range(1, nmax + 1) for m in range(-n, n + 1)]


def harmonic_index(n, m):
    return n * n - 1 + n + m


def _log_seed(m):
    # log of  sqrt((2m+1)/(4 pi (2m)!)) * (2m-1)!!
    return 0.5 * (log(2 * m + 1) - log(4 * pi) - lgamma(2 * m + 1)) + (
        lgamma(2 * m + 1) - m * log(2.0) - lgamma(m + 1)
    )


def _angles(dirs):
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    norm = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norm - 1.0) > 1e-12):
        raise DomainError("directions must be unit vectors (|dir| = 1 within 1e-12)")
    x, y, zc = d.T
    st = np.hypot(x, y)
    ct = zc
    phi = np.arctan2(y, x)
    cp, sp = np.cos(phi), np.sin(phi)
    e_theta = np.stack([ct * cp, ct * sp, -st], axis=1)
    e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)
    return d, st, ct, phi, e_theta, e_phi


def vsh_table(nmax, dirs):
    """Evaluate Y, U, V for all 1 <= n <= nmax at the unit directions ``dirs``.

    Returns arrays ``Y`` of shape (K, P) and ``U``, ``V`` of shape (K, P, 3)
    with K = nmax (nmax + 2) rows in :func:`harmonic_indices` order.

    The associated Legendre functions are carried as P_n^m / sin(theta) for
    m >= 1, which is regular at the poles; together with the fixed azimuth
    phi = 0 used there, the pole values are the analytic limits.
    """
    d, st, ct, phi, e_theta, e_phi = _angles(dirs)
    P = d.shape[0]
    K = nmax * (nmax + 2)
    Y = np.empty((K, P), dtype=complex)
    G = np.empty((K, P, 3), dtype=complex)

    # Pi[m][n] = Pbar_n^m / sin(theta) for n = m..nmax+1
    Pi = {}
    for m in range(1, nmax + 1):
        seq = np.zeros((nmax + 2, P))
        seq[m] = np.exp(_log_seed(m)) * st ** (m - 1)
        seq[m + 1] = sqrt(2 * m + 3) * ct * seq[m]
        for n in range(m + 1, nmax + 1):
            a = sqrt((4 * (n + 1) ** 2 - 1) / ((n + 1) ** 2 - m * m))
            b = sqrt((n * n - m * m) / (4 * n * n - 1))
            seq[n + 1] = a * (ct * seq[n] - b * seq[n - 1])
        Pi[m] = seq

    # m = 0
    p_prev = np.full(P, 1.0 / sqrt(4 * pi))
    p_cur = sqrt(3.0) * ct * p_prev
    for n in range(1, nmax + 1):
        if n > 1:
            a = sqrt((4 * n * n - 1) / (n * n))
            b = sqrt(((n - 1) ** 2) / (4 * (n - 1) ** 2 - 1))
            p_prev, p_cur = p_cur, a * (ct * p_cur - b * p_prev)
        dth = -sqrt(n * (n + 1)) * st * Pi[1][n]
        k = harmonic_index(n, 0)
        Y[k] = p_cur
        G[k] = dth[:, None] * e_theta

    for m in range(1, nmax + 1):
        seq = Pi[m]
        eim = np.exp(1j * m * phi)
        for n in range(m, nmax + 1):
            pbar = st * seq[n]
            dth = -(n + 1) * ct * seq[n] + sqrt(
                (2 * n + 1) * (n + m + 1) * (n - m + 1) / (2 * n + 3)
            ) * seq[n + 1]
            grad = eim[:, None] * (dth[:, None] * e_theta + 1j * m * seq[n][:, None] * e_phi)
            kp = harmonic_index(n, m)
            km = harmonic_index(n, -m)
            Y[kp] = pbar * eim
            Y[km] = np.conj(Y[kp])
            G[kp] = grad
            G[km] = np.conj(grad)

    ns = np.array([n for n, _ in harmonic_indices(nmax)], dtype=float)
    U = G / np.sqrt(ns * (ns + 1))[:, None, None]
    V = np.cross(d[None, :, :], U)
    return Y, U, V


def vec_sph_harm(n, m, dir):
    """Single-direction evaluation of Y_n^m, U_n^m and V_n^m."""
    if n < 1 or abs(m) > n:
        raise DomainError(f"need n >= 1 and |m| <= n, got n={n}, m={m}")
    d = np.asarray(dir, dtype=float).reshape(3)
    Y, U, V = vsh_table(n, d[None, :])
    k = harmonic_index(n, m)
    return VecHarmonicSample(n=n, m=m, dir=d, Y=complex(Y[k, 0]), U=U[k, 0].copy(), V=V[k, 0].copy())
