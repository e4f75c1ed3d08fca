"""Regenerate the bundled obstacle meshes in tests/fixtures (needs the gmsh Python module).

    python tools/make_fixtures.py [--scale 1.0]

Each mesh covers B_R minus the obstacle; physical surface "GammaD" is the
obstacle boundary, "GammaR" the outer sphere. Element sizes grade from
``h_near`` on the obstacle to ``h_far`` on the sphere.
"""
import argparse
from pathlib import Path

import gmsh

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def _box(lo, hi):
    return gmsh.model.occ.addBox(*lo, *(h - l for l, h in zip(lo, hi)))


def cube():
    return [(3, _box((-0.5,) * 3, (0.5,) * 3))]


def lshape():
    big = _box((-0.5,) * 3, (0.5,) * 3)
    notch = _box((0.0,) * 3, (0.5,) * 3)
    out, _ = gmsh.model.occ.cut([(3, big)], [(3, notch)])
    return out


def cavity():
    shell = _box((-1.2,) * 3, (1.2,) * 3)
    hollow = _box((-1.0,) * 3, (1.0,) * 3)
    slot = _box((1.0, -0.2, -0.2), (1.2, 0.2, 0.2))
    out, _ = gmsh.model.occ.cut([(3, shell)], [(3, hollow), (3, slot)])
    return out


CASES = {
    # name: (builder, R, h_near, h_far, msh version)
    "cube_R1": (cube, 1.0, 0.14, 0.22, 4.1),
    "lshape_R1": (lshape, 1.0, 0.14, 0.22, 2.2),
    "cavity_R2.3": (cavity, 2.3, 0.2, 0.45, 4.1),
}


def build(name, scale):
    builder, R, h_near, h_far, version = CASES[name]
    gmsh.model.add(name)
    obstacle = builder()
    ball = gmsh.model.occ.addSphere(0, 0, 0, R)
    dom, _ = gmsh.model.occ.cut([(3, ball)], obstacle)
    gmsh.model.occ.synchronize()
    vols = [t for d, t in dom if d == 3]
    faces = gmsh.model.getBoundary([(3, v) for v in vols], oriented=False)
    sphere, obst = [], []
    for _, tag in faces:
        x0, y0, z0, x1, y1, z1 = gmsh.model.getBoundingBox(2, tag)
        (sphere if max(abs(x0), abs(x1), abs(y0), abs(y1), abs(z0), abs(z1)) > 0.999 * R else obst).append(tag)
    gmsh.model.addPhysicalGroup(2, obst, name="GammaD")
    gmsh.model.addPhysicalGroup(2, sphere, name="GammaR")
    gmsh.model.addPhysicalGroup(3, vols, name="Omega")

    fd = gmsh.model.mesh.field.add("Distance")
    gmsh.model.mesh.field.setNumbers(fd, "SurfacesList", obst)
    ft = gmsh.model.mesh.field.add("Threshold")
    gmsh.model.mesh.field.setNumber(ft, "InField", fd)
    gmsh.model.mesh.field.setNumber(ft, "SizeMin", h_near * scale)
    gmsh.model.mesh.field.setNumber(ft, "SizeMax", h_far * scale)
    gmsh.model.mesh.field.setNumber(ft, "DistMin", 0.0)
    gmsh.model.mesh.field.setNumber(ft, "DistMax", R)
    gmsh.model.mesh.field.setAsBackgroundMesh(ft)
    gmsh.option.setNumber("Mesh.MeshSizeExtendFromBoundary", 0)
    gmsh.option.setNumber("Mesh.MeshSizeFromPoints", 0)
    gmsh.option.setNumber("Mesh.MeshSizeFromCurvature", 0)
    gmsh.option.setNumber("Mesh.Algorithm3D", 1)
    gmsh.option.setNumber("Mesh.RandomSeed", 1)
    gmsh.model.mesh.generate(3)
    gmsh.model.mesh.optimize("Netgen")
    gmsh.option.setNumber("Mesh.MshFileVersion", version)
    gmsh.option.setNumber("Mesh.Binary", 0)
    gmsh.option.setNumber("Mesh.SaveAll", 0)
    path = OUT / f"{name}.msh"
    gmsh.write(str(path))
    gmsh.model.remove()
    return path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", type=float, default=1.0, help="multiply all element sizes")
    ap.add_argument("names", nargs="*", default=list(CASES))
    args = ap.parse_args()
    gmsh.initialize()
    gmsh.option.setNumber("General.Terminal", 0)
    try:
        for name in args.names:
            print(build(name, args.scale))
    finally:
        gmsh.finalize()


if __name__ == "__main__":
    main()
