"""Spectral-indicator search for eigenvalues of a nonlinear matrix function.

A box is scanned by the trapezoid rule on its circumscribed circle,

    delta = || (1/M) sum_q (z_q - z0) F(z_q)^{-1} f ||,

which approximates the Riesz projection of the probe ``f`` onto the
eigenvectors whose eigenvalues lie inside the circle. Boxes whose indicator
is large are split into four until they are small, their centres are then
polished by nonlinear inverse iteration, deduplicated and clustered.

Any object with ``n``, ``matrix(z)``, ``derivative(z)`` and ``factor(z)``
(returning something with ``solve``) can be searched; :class:`CallableProblem`
adapts plain callables, including dense ones used in tests.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .ball_oracle import SearchRegion
from .errors import CoefficientPoleError, DomainError, ProbeSaturatedError, SingularFactorError
from .linalg import factorize

log = logging.getLogger(__name__)

# evaluation failures that mark a quadrature node as singular
NODE_ERRORS = (CoefficientPoleError, SingularFactorError, DomainError, ZeroDivisionError)
JITTER = 1e-6
MAX_JITTER = 3


@dataclass(frozen=True)
class SimParams:
    quad_points: int = 16
    max_depth: int = 12
    box_tol: float = 1e-4
    tau_abs: float = 1e-3
    tau_rel: float = 10.0
    probes: int = 8
    newton_max: int = 20
    newton_tol: float = 1e-10
    cluster_radius: float = 0.02
    grid: tuple = (8, 8)
    count_points: int = 64
    origin_exclusion: float = 1e-3
    seed: int = 7
    threads: int = 1

    def __post_init__(self):
        if self.quad_points <= 0 or self.quad_points % 2:
            raise ValueError(f"quad_points must be positive and even, got {self.quad_points}")
        for name in ("max_depth", "probes", "newton_max", "count_points", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("box_tol", "tau_abs", "tau_rel", "newton_tol", "cluster_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise ValueError(f"grid must be two positive integers, got {self.grid}")


@dataclass(frozen=True)
class Box:
    center: complex
    hx: float
    hy: float
    depth: int = 0

    @property
    def radius(self):
        return float(np.hypot(self.hx, self.hy))

    @property
    def half_width(self):
        return max(self.hx, self.hy)

    def children(self):
        hx, hy = 0.5 * self.hx, 0.5 * self.hy
        c = self.center
        return [Box(c + complex(sx * hx, sy * hy), hx, hy, self.depth + 1)
                for sy in (-1, 1) for sx in (-1, 1)]

    def contains(self, z, pad=0.0):
        d = complex(z) - self.center
        return abs(d.real) <= self.hx + pad and abs(d.imag) <= self.hy + pad


@dataclass
class IndicatorResult:
    box: Box
    delta: float
    suspect: bool = False
    jitters: int = 0


@dataclass
class Resonance:
    kappa: complex
    residual: float
    converged: bool
    iterations: int
    box: Box | None = None
    cluster_id: int = -1
    cluster_size: int = 0
    count_probe: int | None = None
    vector: np.ndarray | None = field(default=None, repr=False)


@dataclass
class Cluster:
    id: int
    mean: complex
    members: list
    count_probe: int | None = None

    @property
    def size(self):
        return len(self.members)


@dataclass
class LevelRecord:
    depth: int
    boxes: int
    kept: int
    threshold: float
    suspect: int
    kept_boxes: tuple = ()


@dataclass
class ResonanceReport:
    resonances: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    n_factorizations: int = 0


# ---------------------------------------------------------------------------
# problem adapters


class _DenseFactor:
    def __init__(self, A):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self.lu, self.piv = sla.lu_factor(A, check_finite=True)
        d = np.diag(self.lu)
        if np.any(d == 0) or not np.all(np.isfinite(d)):
            raise SingularFactorError("exactly singular pivot in dense factorization")

    def solve(self, b):
        return sla.lu_solve((self.lu, self.piv), b)


class CallableProblem:
    """Wrap ``F(z)`` (dense array or sparse matrix) and optionally ``dF(z)``.

    Without ``dF`` the derivative is a central difference with step
    ``1e-6 * max(1, |z|)``.
    """

    def __init__(self, F, dF=None, n=None):
        self._F = F
        self._dF = dF
        self.n = n if n is not None else F(0.5 - 0.5j).shape[0]

    def matrix(self, z):
        return self._F(complex(z))

    def derivative(self, z):
        z = complex(z)
        if self._dF is not None:
            return self._dF(z)
        h = 1e-6 * max(1.0, abs(z))
        return (self._F(z + h) - self._F(z - h)) / (2 * h)

    def factor(self, z):
        A = self.matrix(z)
        if sp.issparse(A):
            return factorize(A)
        return _DenseFactor(np.asarray(A, dtype=complex))


def probe_vector(n, seed, count=None):
    """Deterministic unit-norm complex probe(s) from ``seed``."""
    rng = np.random.default_rng(seed)
    shape = (n,) if count is None else (n, count)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=0)


# ---------------------------------------------------------------------------
# contour moments


def _node_solve(problem, z0, r, theta, rhs):
    """Solve at z0 + r e^{i theta}, jittering radially outward if singular."""
    for j in range(MAX_JITTER + 1):
        z = z0 + r * (1 + j * JITTER) * np.exp(1j * theta)
        try:
            x = problem.factor(z).solve(rhs)
            if np.all(np.isfinite(x)):
                return z, x, j, False
        except NODE_ERRORS as exc:
            log.debug("singular node %s (%s), jitter %d", z, exc, j + 1)
    return z, None, MAX_JITTER, True


def contour_moment(problem, center, radius, rhs, M, threads=1):
    """(1/M) sum_q (z_q - z0) F(z_q)^{-1} rhs on the circle |z - center| = radius.

    Returns ``(moment, scale, jitters, suspect)`` where ``scale`` is the
    largest node contribution ``|z_q - z0| * ||F(z_q)^{-1} rhs||``.
    """
    thetas = 2 * np.pi * np.arange(M) / M
    work = lambda th: _node_solve(problem, center, radius, th, rhs)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, thetas))
    else:
        results = [work(th) for th in thetas]
    acc = np.zeros_like(np.asarray(rhs, dtype=complex))
    scale = 0.0
    jitters = 0
    suspect = False
    for z, x, j, bad in results:
        jitters += j
        if bad:
            suspect = True
            continue
        term = (z - center) * x
        acc += term
        scale = max(scale, float(np.linalg.norm(term, 2)))
    return acc / M, scale, jitters, suspect


def indicator(problem, box, f, M=16, threads=1):
    """Spectral indicator of ``box`` for probe ``f`` (see module docstring)."""
    f = np.asarray(f, dtype=complex)
    if not np.any(f):
        raise ValueError("probe vector must be nonzero")
    mom, _, jit, suspect = contour_moment(problem, box.center, box.radius, f, M, threads)
    delta = float(np.linalg.norm(mom))
    return IndicatorResult(box=box, delta=np.inf if suspect else delta, suspect=suspect, jitters=jit)


def initial_boxes(region, grid):
    nx, ny = grid
    hx = 0.5 * region.width / nx
    hy = 0.5 * region.height / ny
    return [Box(complex(region.a_min + (2 * i + 1) * hx, region.b_min + (2 * j + 1) * hy), hx, hy, 0)
            for j in range(ny) for i in range(nx)]


def sim_search(problem, region, params=SimParams(), f=None, levels=None):
    """Recursive box subdivision; returns the final boxes (their centres are candidates).

    The relative threshold uses the median indicator of the initial grid,
    which is dominated by root-free boxes, and is kept fixed for deeper
    levels. Boxes flagged suspect are always kept.
    """
    if f is None:
        f = probe_vector(problem.n, params.seed)
    boxes = initial_boxes(region, params.grid)
    finals = []
    threshold = None
    depth = 0
    while boxes:
        res = [indicator(problem, b, f, params.quad_points, params.threads) for b in boxes]
        vals = np.array([r.delta for r in res])
        if threshold is None:
            finite = vals[np.isfinite(vals)]
            med = float(np.median(finite)) if finite.size else 0.0
            threshold = max(params.tau_abs, params.tau_rel * med)
        kept = [r for r in res if r.suspect or r.delta >= threshold]
        if levels is not None:
            levels.append(LevelRecord(depth, len(res), len(kept), threshold, sum(r.suspect for r in res),
                                      tuple(r.box for r in kept)))
        log.info("level %d: %d boxes, %d kept (threshold %.3e)", depth, len(res), len(kept), threshold)
        nxt = []
        for r in kept:
            if r.box.half_width <= params.box_tol or depth >= params.max_depth:
                finals.append(r)
            else:
                nxt.extend(r.box.children())
        boxes = nxt
        depth += 1
    return finals


# ---------------------------------------------------------------------------
# refinement, counting, clustering


def _residual(F, v):
    return float(np.linalg.norm(F @ v) / np.linalg.norm(v))


def refine_eigenpair(problem, kappa0, v0=None, newton_max=20, tol=1e-10, seed=7):
    """Nonlinear inverse iteration with the complex-symmetric Rayleigh functional.

    Returns ``(kappa, v, residual, converged, iterations)``; ``residual`` is
    ``||F(kappa) v|| / ||v||`` at the returned pair.
    """
    kappa = complex(kappa0)
    F = problem.matrix(kappa)
    if v0 is None:
        v = problem.factor(kappa).solve(probe_vector(problem.n, seed))
    else:
        v = np.asarray(v0, dtype=complex)
    v = v / np.linalg.norm(v)
    best = (kappa, v, _residual(F, v))
    if best[2] <= tol:
        return (*best, True, 0)
    for it in range(1, newton_max + 1):
        dF = problem.derivative(kappa)
        try:
            u = problem.factor(kappa).solve(dF @ v)
        except NODE_ERRORS:
            # kappa is an eigenvalue to working precision
            return (*best, best[2] <= tol, it)
        v = u / np.linalg.norm(u)
        num = v @ (F @ v)
        den = v @ (dF @ v)
        if den == 0:
            break
        step = num / den
        kappa = kappa - step
        try:
            F = problem.matrix(kappa)
        except NODE_ERRORS:
            break
        r = _residual(F, v)
        if r < best[2]:
            best = (kappa, v, r)
        if r <= tol or abs(step) <= 1e-15 * max(1.0, abs(kappa)):
            return (*best, best[2] <= tol, it)
    return (*best, best[2] <= tol, newton_max)


def refine_cluster(problem, sigma, k, extra=2, sweeps=3, newton_max=20, tol=1e-10, seed=7):
    """Up to ``k`` distinct eigenpairs near ``sigma``.

    A block of ``k + extra`` vectors is pushed through F(sigma)^{-1} F'(sigma)
    a few times with a single factorization; Ritz values of the linearised
    projected pencil X^H (F(sigma) + (kappa - sigma) F'(sigma)) X then seed
    :func:`refine_eigenpair`. Distinct Ritz vectors let Newton land on the
    distinct members of a split multiple eigenvalue.
    """
    sigma = complex(sigma)
    p = k + extra
    fac = problem.factor(sigma)
    dF = problem.derivative(sigma)
    X = probe_vector(problem.n, seed + 2, p)
    for _ in range(sweeps):
        X, _ = np.linalg.qr(fac.solve(dF @ X))
    F0 = problem.matrix(sigma)
    A = X.conj().T @ (F0 @ X)
    B = X.conj().T @ (dF @ X)
    mu, Y = sla.eig(A, -B)
    ok = np.isfinite(mu)
    order = np.argsort(np.abs(mu[ok]))
    ritz = [(sigma + mu[ok][i], X @ Y[:, ok][:, i]) for i in order[:k]]
    out = []
    for theta, v in ritz:
        try:
            kappa, w, res, conv, it = refine_eigenpair(problem, theta, v0=v, newton_max=newton_max, tol=tol)
        except NODE_ERRORS:
            continue
        if conv:
            add_distinct(out, Resonance(kappa=kappa, residual=res, converged=conv, iterations=it, vector=w))
    return out


def add_distinct(found, res, ktol=1e-7, vtol=1e-3):
    """Append ``res`` unless it repeats a known eigenpair.

    Pairs at the same eigenvalue are merged only when the new eigenvector
    lies in the span of the known ones, so a multiple eigenvalue keeps one
    entry per independent eigenvector.
    """
    same = [e for e in found if abs(e.kappa - res.kappa) <= ktol * max(1.0, abs(res.kappa))]
    if same:
        if res.vector is None or any(e.vector is None for e in same):
            return False
        W, _ = np.linalg.qr(np.stack([e.vector for e in same], axis=1))
        v = res.vector / np.linalg.norm(res.vector)
        if np.linalg.norm(v - W @ (W.conj().T @ v)) <= vtol:
            return False
    found.append(res)
    return True


def count_in_box(problem, box, probes=8, M=64, seed=7, rtol=1e-8, threads=1):
    """Numerical rank of the zeroth contour moment for ``probes`` random vectors."""
    V = probe_vector(problem.n, seed + 1, probes)
    A0, scale, _, suspect = contour_moment(problem, box.center, box.radius, V, M, threads)
    if suspect:
        raise SingularFactorError("count contour passes through an eigenvalue")
    s = np.linalg.svd(A0, compute_uv=False)
    cut = rtol * max(s[0] if s.size else 0.0, scale)
    rank = int(np.sum(s > cut))
    if rank >= probes:
        raise ProbeSaturatedError(rank)
    return rank


def cluster_and_average(candidates, cluster_radius):
    """Single-linkage clusters of complex values; returns a list of :class:`Cluster`."""
    pts = [complex(c.kappa if isinstance(c, Resonance) else c) for c in candidates]
    n = len(pts)
    parent = list(range(n))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if abs(pts[i] - pts[j]) <= cluster_radius:
                a, b = root(i), root(j)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    groups = {}
    for i in range(n):
        groups.setdefault(root(i), []).append(i)
    ordered = sorted(groups.values(), key=lambda g: (round(np.mean([pts[i] for i in g]).real, 12),
                                                     round(np.mean([pts[i] for i in g]).imag, 12)))
    out = []
    for cid, g in enumerate(ordered):
        members = [candidates[i] for i in g]
        out.append(Cluster(id=cid, mean=complex(np.mean([pts[i] for i in g])), members=members))
    return out


def _in_region(region, z, tol):
    # closed edge a = a_min gets a tolerance; open edges are strict
    return (z.real >= region.a_min - tol and z.real < region.a_max
            and z.imag > region.b_min and z.imag < region.b_max - tol)


def locate_resonances(problem, region, params=SimParams(), count=True, edge_tol=1e-8):
    """Search, refine, deduplicate, cluster and optionally count.

    A refined eigenvalue is kept when it converged, lies within its final
    box enlarged by one half-width, and lies in the half-open region (with
    ``edge_tol`` slack on the closed edge and margin on the open ones).
    """
    report = ResonanceReport()
    finals = sim_search(problem, region, params, levels=report.levels)
    report.candidates = [r.box for r in finals]
    found = []
    for r in finals:
        box = r.box
        try:
            kappa, v, res, conv, it = refine_eigenpair(
                problem, box.center, newton_max=params.newton_max, tol=params.newton_tol, seed=params.seed)
        except NODE_ERRORS:
            continue
        if not conv or not box.contains(kappa, pad=box.half_width):
            continue
        if not _in_region(region, kappa, edge_tol) or abs(kappa) < params.origin_exclusion:
            # |kappa| ~ 0 is the static kernel of discrete gradients, not a resonance
            continue
        add_distinct(found, Resonance(kappa=kappa, residual=res, converged=conv, iterations=it, box=box,
                                      vector=v))
    clusters = cluster_and_average(_sorted(found), params.cluster_radius)
    if count:
        counts = {}
        for c in clusters:
            counts[c.id] = _cluster_count(problem, c, params)
            missing = (counts[c.id] or 0) - c.size
            if missing > 0:
                # the probe sees members that box-centre starts did not reach
                extra = refine_cluster(problem, c.mean, counts[c.id], newton_max=params.newton_max,
                                       tol=params.newton_tol, seed=params.seed)
                for e in extra:
                    e.box = c.members[0].box
                    if (_in_region(region, e.kappa, edge_tol) and abs(e.kappa) >= params.origin_exclusion
                            and abs(e.kappa - c.mean) <= params.cluster_radius):
                        add_distinct(found, e)
        means = {c.id: c.mean for c in clusters}
        clusters = cluster_and_average(_sorted(found), params.cluster_radius)
        for c in clusters:
            # carry the probe result over to the (possibly enlarged) cluster
            prev = min(means, key=lambda i: abs(means[i] - c.mean))
            c.count_probe = counts[prev] if abs(means[prev] - c.mean) <= params.cluster_radius else None
    for c in clusters:
        for e in c.members:
            e.cluster_id = c.id
            e.cluster_size = c.size
            e.count_probe = c.count_probe
    report.resonances = [e for c in clusters for e in c.members]
    report.clusters = clusters
    return report


def _sorted(found):
    return sorted(found, key=lambda e: (round(e.kappa.real, 10), round(e.kappa.imag, 10)))


def cluster_box(cluster, pad):
    zs = np.array([e.kappa for e in cluster.members])
    c = complex(0.5 * (zs.real.min() + zs.real.max()), 0.5 * (zs.imag.min() + zs.imag.max()))
    hx = 0.5 * (zs.real.max() - zs.real.min()) + pad
    hy = 0.5 * (zs.imag.max() - zs.imag.min()) + pad
    return Box(c, hx, hy)


def _cluster_count(problem, cluster, params):
    """Rank probe on a box around the cluster; None if it cannot be evaluated."""
    pad = 0.5 * params.cluster_radius
    for _ in range(3):
        box = cluster_box(cluster, pad)
        try:
            return count_in_box(problem, box, params.probes, params.count_points, params.seed)
        except ProbeSaturatedError as exc:
            return exc.rank
        except NODE_ERRORS:
            pad *= 1.1
    return None
