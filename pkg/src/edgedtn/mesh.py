"""Tetrahedral meshes: container, validation, cubed-sphere shell mesher and I/O.

Boundary triangles carry one of two tags: ``GammaD`` (the perfectly conducting
obstacle surface) or ``GammaR`` (the artificial sphere where the DtN condition
is imposed). Tags are stored as small integer codes, see :data:`TAG_CODES`.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import MeshError

log = logging.getLogger(__name__)

GAMMA_D = "GammaD"
GAMMA_R = "GammaR"
TAG_CODES = {GAMMA_D: 0, GAMMA_R: 1}
TAG_NAMES = {v: k for k, v in TAG_CODES.items()}

SPHERE_RTOL = 1e-8

# local (a, b) vertex pairs of the six tet edges and the vertex triples of the four faces
TET_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
TET_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TetMesh:
    """Straight-sided tetrahedral mesh with tagged boundary triangles.

    Parameters
    ----------
    vertices : (nv, 3) float array
    tets : (nt, 4) int array of vertex indices
    boundary_faces : (nf, 3) int array of vertex indices
    face_tags : (nf,) int array of codes from :data:`TAG_CODES`
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), int))
    face_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(np.reshape(self.vertices, (-1, 3)), float))
        object.__setattr__(self, "tets", _frozen(np.reshape(self.tets, (-1, 4)), np.int64))
        object.__setattr__(self, "boundary_faces", _frozen(np.reshape(self.boundary_faces, (-1, 3)), np.int64))
        object.__setattr__(self, "face_tags", _frozen(np.reshape(self.face_tags, (-1,)), np.int8))
        if len(self.boundary_faces) != len(self.face_tags):
            raise MeshError("boundary_faces and face_tags differ in length")

    @classmethod
    def from_tagged(cls, vertices, tets, faces, orient=True):
        """Build from ``faces`` given as ``[(a, b, c, tag_name), ...]``."""
        faces = list(faces)
        fv = np.array([f[:3] for f in faces], dtype=np.int64).reshape(-1, 3)
        try:
            tags = np.array([TAG_CODES[f[3]] for f in faces], dtype=np.int8)
        except KeyError as exc:
            raise MeshError(f"unknown boundary tag {exc.args[0]!r}") from None
        tets = np.asarray(tets, dtype=np.int64).reshape(-1, 4)
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        if orient:
            tets = orient_tets(vertices, tets)
        return cls(vertices, tets, fv, tags)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    def faces_with(self, tag):
        return self.boundary_faces[self.face_tags == TAG_CODES[tag]]


@dataclass(frozen=True)
class MeshQualityReport:
    n_vertices: int
    n_edges: int
    n_faces: int
    n_tets: int
    n_boundary_faces: int
    n_gamma_d: int
    n_gamma_r: int
    n_untagged_exterior: int
    euler: int
    boundary_euler: int
    h: float
    min_volume: float
    min_dihedral: float
    max_dihedral: float


def signed_volumes(vertices, tets):
    p = vertices[tets]
    return np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])) / 6.0


def orient_tets(vertices, tets):
    """Swap the last two vertices of negatively oriented tets."""
    tets = np.array(tets, dtype=np.int64, copy=True)
    neg = signed_volumes(vertices, tets) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def unique_edges(tets):
    """Sorted global edge list and the (nt, 6) tet-to-edge map."""
    pairs = np.sort(tets[:, TET_EDGES], axis=2).reshape(-1, 2)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    return edges, inv.reshape(-1, 6)


def _face_keys(faces):
    return np.sort(np.asarray(faces, dtype=np.int64), axis=1)


def exterior_faces(tets):
    """Faces that belong to exactly one tet, with the owning tet and the face multiplicity table."""
    allf = _face_keys(tets[:, TET_FACES].reshape(-1, 3))
    uniq, inv, counts = np.unique(allf, axis=0, return_inverse=True, return_counts=True)
    return uniq, inv.reshape(-1), counts


def _dihedral_angles(vertices, tets):
    p = vertices[tets]
    # outward-ish face normals; face i is opposite vertex i
    normals = []
    for i, (a, b, c) in enumerate(TET_FACES):
        n = np.cross(p[:, b] - p[:, a], p[:, c] - p[:, a])
        # point away from the opposite vertex
        s = np.sign(np.einsum("ij,ij->i", n, p[:, a] - p[:, i]))
        normals.append(n * s[:, None] / np.linalg.norm(n, axis=1)[:, None])
    angles = []
    for i, j in combinations(range(4), 2):
        c = np.clip(-np.einsum("ij,ij->i", normals[i], normals[j]), -1.0, 1.0)
        angles.append(np.arccos(c))
    return np.degrees(np.stack(angles, axis=1))


def validate(mesh, sphere_radius=None, vol_rtol=1e-14):
    """Check the mesh invariants and return a :class:`MeshQualityReport`.

    Raises :class:`MeshError` describing the first violated invariant:
    bad indices, non-positive tet volume, faces shared by more than two
    tets, tagged faces that are not exterior, a GammaR surface that is not
    closed, or (when ``sphere_radius`` is given) GammaR vertices off the
    sphere by more than ``1e-8 * sphere_radius``.
    """
    V, T, F, tags = mesh.vertices, mesh.tets, mesh.boundary_faces, mesh.face_tags
    nv = len(V)
    if len(T) == 0:
        raise MeshError("mesh has no tetrahedra")
    if T.min() < 0 or T.max() >= nv:
        raise MeshError("tet references a vertex index out of range")
    if len(F) and (F.min() < 0 or F.max() >= nv):
        raise MeshError("boundary face references a vertex index out of range")
    if np.any(np.sort(T, axis=1)[:, 1:] == np.sort(T, axis=1)[:, :-1]):
        bad = int(np.argmax(np.any(np.diff(np.sort(T, axis=1), axis=1) == 0, axis=1)))
        raise MeshError(f"tet {bad} repeats a vertex")
    if not np.all(np.isin(tags, list(TAG_NAMES))):
        raise MeshError("unknown boundary tag code")

    edges, _ = unique_edges(T)
    lengths = np.linalg.norm(V[edges[:, 1]] - V[edges[:, 0]], axis=1)
    h = float(lengths.max())
    vols = signed_volumes(V, T)
    floor = vol_rtol * h**3
    if np.any(vols <= floor):
        bad = int(np.argmin(vols))
        kind = "inverted" if vols[bad] < 0 else "degenerate"
        raise MeshError(f"orientation defect: tet {bad} {tuple(T[bad])} is {kind} (signed volume {vols[bad]:.3e})")

    faces, _, counts = exterior_faces(T)
    if np.any(counts > 2):
        bad = faces[np.argmax(counts > 2)]
        raise MeshError(f"non-conforming: face {tuple(bad)} is shared by {counts.max()} tets")
    ext = faces[counts == 1]

    fk = _face_keys(F)
    if len(np.unique(fk, axis=0)) != len(fk):
        raise MeshError("a boundary face is listed twice")
    ext_set = {tuple(f) for f in ext}
    for i, f in enumerate(fk):
        if tuple(f) not in ext_set:
            raise MeshError(f"boundary face {i} {tuple(F[i])} is not the face of exactly one tet")

    fr = fk[tags == TAG_CODES[GAMMA_R]]
    if len(fr):
        e = np.sort(fr[:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2), axis=1)
        _, ec = np.unique(e, axis=0, return_counts=True)
        if np.any(ec != 2):
            raise MeshError("GammaR faces do not form a closed surface")
        if sphere_radius is not None:
            rv = np.linalg.norm(V[np.unique(fr)], axis=1)
            dev = np.abs(rv - sphere_radius).max()
            if dev > SPHERE_RTOL * sphere_radius:
                raise MeshError(f"GammaR vertex off the sphere R={sphere_radius} by {dev:.3e}")

    ext_edges = np.unique(np.sort(ext[:, [[0, 1], [0, 2], [1, 2]]].reshape(-1, 2), axis=1), axis=0)
    boundary_euler = len(np.unique(ext)) - len(ext_edges) + len(ext)
    euler = nv - len(edges) + len(faces) - len(T)
    used = np.zeros(nv, bool)
    used[T.ravel()] = True
    if not used.all():
        raise MeshError(f"{int((~used).sum())} vertices are not referenced by any tet")
    if 2 * euler != boundary_euler:
        raise MeshError(f"Euler characteristic {euler} inconsistent with boundary ({boundary_euler}/2)")

    dih = _dihedral_angles(V, T)
    return MeshQualityReport(
        n_vertices=nv,
        n_edges=len(edges),
        n_faces=len(faces),
        n_tets=len(T),
        n_boundary_faces=len(F),
        n_gamma_d=int(np.sum(tags == TAG_CODES[GAMMA_D])),
        n_gamma_r=int(np.sum(tags == TAG_CODES[GAMMA_R])),
        n_untagged_exterior=len(ext) - len(F),
        euler=int(euler),
        boundary_euler=int(boundary_euler),
        h=h,
        min_volume=float(vols.min()),
        min_dihedral=float(dih.min()),
        max_dihedral=float(dih.max()),
    )


# ---------------------------------------------------------------------------
# cubed-sphere shell


def _kuhn_split(hexes):
    """Split hexahedra into six tets along the diagonal through the lowest vertex id.

    ``hexes`` is (nh, 8) with local corner ``k`` at bit position
    ``(k & 1, k >> 1 & 1, k >> 2 & 1)``. Every quad face is cut through its
    lowest and highest vertex ids, which is the same cut on both sides of
    a shared face as long as ids increase along each logical direction.
    """
    hexes = np.asarray(hexes)
    lo = np.argmin(hexes, axis=1)
    tets = []
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        path = [lo]
        cur = lo
        for axis in perm:
            cur = cur ^ (1 << axis)
            path.append(cur)
        tets.append(np.stack([hexes[np.arange(len(hexes)), p] for p in path], axis=1))
    return np.concatenate(tets, axis=0)


def build_ball_shell(n_tan, n_rad, R_outer, r_inner=1.0):
    """Tetrahedral mesh of the shell r_inner < |x| < R_outer.

    A cubed-sphere construction: the surface of an ``n_tan``-subdivided cube
    is mapped equiangularly onto the sphere, extruded radially into
    ``n_rad`` uniform layers, and every resulting hexahedron is cut into six
    tets by :func:`_kuhn_split`. Vertices are numbered lexicographically by
    (layer, i, j, k) of their integer cube coordinates, so ids increase along
    every logical direction of every hexahedron and the split is conforming.
    """
    if n_tan < 1 or n_rad < 1:
        raise MeshError("n_tan and n_rad must be >= 1")
    if R_outer <= r_inner:
        raise MeshError("outer radius must exceed the inner radius")
    n = n_tan
    g = np.arange(n + 1)
    I, J, K = np.meshgrid(g, g, g, indexing="ij")
    ijk = np.stack([I.ravel(), J.ravel(), K.ravel()], axis=1)
    on_surface = np.any((ijk == 0) | (ijk == n), axis=1)
    surf = ijk[on_surface]  # already lexicographic
    ns = len(surf)
    lookup = -np.ones((n + 1,) * 3, dtype=np.int64)
    lookup[surf[:, 0], surf[:, 1], surf[:, 2]] = np.arange(ns)

    t = np.tan(0.25 * np.pi * (2.0 * surf / n - 1.0))
    dirs = t / np.linalg.norm(t, axis=1)[:, None]
    radii = r_inner + (R_outer - r_inner) * np.arange(n_rad + 1) / n_rad
    radii[-1] = R_outer
    vertices = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 3)

    quads = []
    for axis in range(3):
        a, b = [ax for ax in range(3) if ax != axis]
        for side in (0, n):
            ja, jb = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            ja, jb = ja.ravel(), jb.ravel()
            corners = []
            for k in range(4):
                c = np.empty((len(ja), 3), dtype=np.int64)
                c[:, axis] = side
                c[:, a] = ja + (k & 1)
                c[:, b] = jb + (k >> 1 & 1)
                corners.append(lookup[c[:, 0], c[:, 1], c[:, 2]])
            quads.append(np.stack(corners, axis=1))
    quads = np.concatenate(quads, axis=0)

    hexes = []
    for layer in range(n_rad):
        hexes.append(np.concatenate([quads + layer * ns, quads + (layer + 1) * ns], axis=1))
    hexes = np.concatenate(hexes, axis=0)
    tets = orient_tets(vertices, _kuhn_split(hexes))

    faces, _, counts = exterior_faces(tets)
    ext = faces[counts == 1]
    r = np.linalg.norm(vertices[ext], axis=2).mean(axis=1)
    tags = np.where(np.abs(r - R_outer) <= 1e-6 * R_outer, TAG_CODES[GAMMA_R], TAG_CODES[GAMMA_D])
    return TetMesh(vertices, tets, ext, tags.astype(np.int8))


def ball_shell_vertex_count(n_tan, n_rad):
    return (6 * n_tan**2 + 2) * (n_rad + 1)


# ---------------------------------------------------------------------------
# native text format


def write_meshtxt(mesh, fp=None):
    """Serialise ``mesh`` in the ``meshtxt v1`` format; returns the text if ``fp`` is None."""
    out = io.StringIO() if fp is None else fp
    out.write("meshtxt v1\n")
    for x, y, z in mesh.vertices:
        out.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
    for a, b, c, d in mesh.tets:
        out.write(f"t {a} {b} {c} {d}\n")
    for (a, b, c), tag in zip(mesh.boundary_faces, mesh.face_tags):
        out.write(f"f {a} {b} {c} {TAG_NAMES[int(tag)]}\n")
    if fp is None:
        return out.getvalue()
    return None


def read_meshtxt(text):
    """Parse the ``meshtxt v1`` format (str or bytes)."""
    if isinstance(text, bytes):
        text = text.decode("ascii")
    lines = text.split("\n")
    if not lines or lines[0].strip() != "meshtxt v1":
        raise MeshError("missing 'meshtxt v1' header", line=1)
    verts, tets, faces, tags = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v" and len(parts) == 4:
                verts.append([float(p) for p in parts[1:]])
            elif parts[0] == "t" and len(parts) == 5:
                tets.append([int(p) for p in parts[1:]])
            elif parts[0] == "f" and len(parts) == 5:
                faces.append([int(p) for p in parts[1:4]])
                if parts[4] not in TAG_CODES:
                    raise MeshError(f"unknown tag {parts[4]!r}", line=lineno)
                tags.append(TAG_CODES[parts[4]])
            else:
                raise MeshError(f"unrecognised record {line!r}", line=lineno)
        except ValueError as exc:
            if isinstance(exc, MeshError):
                raise
            raise MeshError(f"bad number in {line!r}", line=lineno) from None
    return TetMesh(np.array(verts).reshape(-1, 3), np.array(tets, dtype=np.int64).reshape(-1, 4),
                   np.array(faces, dtype=np.int64).reshape(-1, 3), np.array(tags, dtype=np.int8))


# ---------------------------------------------------------------------------
# Gmsh


class _Lines:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self):
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise MeshError("unexpected end of file", line=self.pos)

    @property
    def lineno(self):
        return self.pos


def _resolve_tag_map(tag_map, names):
    """Map physical tag (int or name) -> tag name."""
    resolved = {}
    for key, tag in tag_map.items():
        if tag not in TAG_CODES:
            raise MeshError(f"tag_map value {tag!r} is not one of {sorted(TAG_CODES)}")
        if isinstance(key, str) and not key.lstrip("-").isdigit():
            matches = [num for (dim, num), nm in names.items() if nm == key and dim == 2]
            if not matches:
                raise MeshError(f"physical name {key!r} not found in $PhysicalNames")
            for num in matches:
                resolved[num] = tag
        else:
            resolved[int(key)] = tag
    return resolved


def load_msh(content, tag_map):
    """Read an ASCII Gmsh MSH 2.2 or 4.1 file.

    Parameters
    ----------
    content : bytes or str
        File content.
    tag_map : dict
        Physical surface tag (int, or name from ``$PhysicalNames``) to
        ``"GammaD"`` or ``"GammaR"``.

    Tetrahedra (type 4) become the volume mesh; triangles (type 2) become
    boundary faces and must all carry a physical tag present in ``tag_map``.
    Nodes not referenced by any tet are dropped, keeping the original order
    of the remaining ones.
    """
    if isinstance(content, bytes):
        content = content.decode("ascii", errors="replace")
    L = _Lines(content)
    version = None
    names = {}
    nodes = {}
    tets, tris, tri_phys = [], [], []
    entities = {}
    while True:
        try:
            head = L.next()
        except MeshError:
            break
        if not head.startswith("$"):
            raise MeshError(f"expected a section header, got {head!r}", line=L.lineno)
        sec = head[1:]
        if sec == "MeshFormat":
            parts = L.next().split()
            version = parts[0]
            if version not in ("2.2", "4.1"):
                raise MeshError(f"unsupported MSH version {version}", line=L.lineno)
            if len(parts) > 1 and parts[1] != "0":
                raise MeshError("binary MSH files are not supported", line=L.lineno)
        elif sec == "PhysicalNames":
            for _ in range(int(L.next())):
                parts = L.next().split(maxsplit=2)
                names[(int(parts[0]), int(parts[1]))] = parts[2].strip().strip('"')
        elif sec == "Entities" and version == "4.1":
            npts, ncrv, nsrf, nvol = (int(x) for x in L.next().split())
            for _ in range(npts):
                L.next()
            for _ in range(ncrv):
                L.next()
            for _ in range(nsrf):
                parts = L.next().split()
                tag = int(parts[0])
                nphys = int(parts[7])
                entities[(2, tag)] = [int(p) for p in parts[8:8 + nphys]]
            for _ in range(nvol):
                parts = L.next().split()
                entities[(3, int(parts[0]))] = [int(p) for p in parts[8:8 + int(parts[7])]]
        elif sec == "Nodes":
            if version == "2.2":
                for _ in range(int(L.next())):
                    parts = L.next().split()
                    nodes[int(parts[0])] = [float(p) for p in parts[1:4]]
            elif version == "4.1":
                nblocks = int(L.next().split()[0])
                for _ in range(nblocks):
                    parts = L.next().split()
                    parametric = int(parts[2])
                    count = int(parts[3])
                    if parametric:
                        raise MeshError("parametric node coordinates are not supported", line=L.lineno)
                    ids = [int(L.next()) for _ in range(count)]
                    for i in ids:
                        nodes[i] = [float(p) for p in L.next().split()[:3]]
            else:
                raise MeshError("$Nodes before $MeshFormat", line=L.lineno)
        elif sec == "Elements":
            if version == "2.2":
                for _ in range(int(L.next())):
                    lineno = L.lineno + 1
                    parts = [int(p) for p in L.next().split()]
                    etype, ntags = parts[1], parts[2]
                    conn = parts[3 + ntags:]
                    if etype == 4:
                        tets.append(conn[:4])
                    elif etype == 2:
                        tris.append(conn[:3])
                        tri_phys.append((parts[3] if ntags else None, lineno))
            elif version == "4.1":
                nblocks = int(L.next().split()[0])
                for _ in range(nblocks):
                    dim, etag, etype, count = (int(x) for x in L.next().split())
                    phys = entities.get((dim, etag), [])
                    for _ in range(count):
                        lineno = L.lineno + 1
                        conn = [int(p) for p in L.next().split()[1:]]
                        if etype == 4:
                            tets.append(conn[:4])
                        elif etype == 2:
                            tris.append(conn[:3])
                            tri_phys.append((phys[0] if phys else None, lineno))
            else:
                raise MeshError("$Elements before $MeshFormat", line=L.lineno)
        else:
            if version is None and sec != "Comments":
                raise MeshError(f"section ${sec} before $MeshFormat", line=L.lineno)
        # skip to the matching $End line
        while True:
            line = L.next()
            if line.startswith("$End"):
                if line != "$End" + sec:
                    raise MeshError(f"expected $End{sec}, got {line}", line=L.lineno)
                break
    if version is None:
        raise MeshError("no $MeshFormat section found", line=1)
    if not tets:
        raise MeshError("file contains no tetrahedra (element type 4)")

    resolved = _resolve_tag_map(tag_map, names)
    missing = sorted({p for p, _ in tri_phys if p not in resolved}, key=lambda p: (p is None, p))
    if missing:
        first = next(ln for p, ln in tri_phys if p == missing[0])
        raise MeshError(f"triangle physical tag(s) {missing} missing from tag_map", line=first)

    tets = np.array(tets, dtype=np.int64)
    used_ids = np.unique(tets)
    node_ids = np.array(sorted(nodes))
    if not np.all(np.isin(used_ids, node_ids)):
        raise MeshError("element references an undefined node")
    kept = node_ids[np.isin(node_ids, used_ids)]
    remap = {int(nid): k for k, nid in enumerate(kept)}
    vertices = np.array([nodes[int(i)] for i in kept], dtype=float).reshape(-1, 3)
    to_local = np.vectorize(remap.__getitem__, otypes=[np.int64])
    T = to_local(tets)
    try:
        Fv = to_local(np.array(tris, dtype=np.int64)) if tris else np.zeros((0, 3), np.int64)
    except KeyError:
        raise MeshError("boundary triangle uses a node that no tetrahedron references") from None
    tags = np.array([TAG_CODES[resolved[p]] for p, _ in tri_phys], dtype=np.int8)
    mesh = TetMesh(vertices, orient_tets(vertices, T), Fv, tags)
    validate(mesh)
    return mesh
