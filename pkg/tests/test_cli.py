import json
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from edgedtn import cli
from edgedtn.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden" / "tiny_solve.csv"
TINY = ["geometry.n_tan=1", "geometry.n_rad=1", "region.a_min=0.6", "region.a_max=1.1",
        "region.b_min=-0.8", "region.b_max=-0.3", "sim.box_tol=1e-3"]
Z1 = (np.sqrt(3) - 1j) / 2


def tiny_args(out):
    args = ["solve", "--out", str(out)]
    for s in TINY:
        args += ["--set", s]
    return args


class TestConfig:
    def test_parse(self):
        vals = cli.parse_config_text("# comment\ndtn.N = 6   # trailing\n\nsim.grid=4x4\n")
        assert vals == {"dtn.N": "6", "sim.grid": "4x4"}

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"cfg:2: unknown key 'dtn.n'"):
            cli.parse_config_text("dtn.N = 6\ndtn.n = 4\n", "cfg")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="expected 'key = value'"):
            cli.parse_config_text("dtn.N 6")

    @pytest.mark.parametrize("name", ["MP_SIM__QUAD_POINTS", "MP_SIM_QUAD_POINTS"])
    def test_env_override(self, name):
        assert cli.env_overrides({name: "24"}) == {"sim.quad_points": "24"}
        cfg = cli.load_config(environ={name: "24"})
        assert cfg.sim.quad_points == 24

    def test_layering(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("dtn.N = 6\nsim.quad_points = 20\nseed = 3\n")
        cfg = cli.load_config([p], ["dtn.N=8"], environ={"MP_SIM__QUAD_POINTS": "24"}, seed=11)
        assert cfg.N == 8 and cfg.sim.quad_points == 24 and cfg.i("seed") == 11
        assert cfg.base_dir == tmp_path

    def test_bad_set(self):
        with pytest.raises(ConfigError):
            cli.load_config(sets=["dtn.M=4"], environ={})
        with pytest.raises(ConfigError):
            cli.load_config(sets=["dtn.N"], environ={})

    def test_hash_semantics(self):
        base = cli.load_config(environ={})
        assert cli.load_config(threads=4, out="x.csv", environ={}).hash() == base.hash()
        assert cli.load_config(sets=["sim.box_tol=0.0001"], environ={}).hash() == base.hash()
        assert cli.load_config(sets=["dtn.N=9"], environ={}).hash() != base.hash()
        assert cli.load_config(seed=8, environ={}).hash() != base.hash()

    def test_mesh_file_hash_tracks_content(self, tmp_path):
        p = tmp_path / "m.msh"
        p.write_text("a")
        cfg = cli.load_config(sets=["geometry.kind=mesh_file", f"geometry.mesh_file={p}"], environ={})
        h0 = cfg.hash()
        p.write_text("b")
        assert cfg.hash() != h0

    def test_R_inside_obstacle(self):
        with pytest.raises(ConfigError, match="circumradius"):
            cli.load_config(sets=["geometry.R=0.5"], environ={})

    @pytest.mark.parametrize("sets", [["region.a_min=1", "region.a_max=1"], ["region.b_max=0.5"],
                                      ["sim.grid=0x4"], ["sim.count=maybe"], ["geometry.kind=torus"],
                                      ["dtn.N=0"], ["geometry.kind=mesh_file"]])
    def test_invalid(self, sets):
        with pytest.raises(ConfigError):
            cli.load_config(sets=sets, environ={})


class TestOracle:
    def test_first_order(self, tmp_path):
        out = tmp_path / "o.csv"
        assert cli.main(["oracle", "--set", "oracle.n_max=1", "--out", str(out)]) == 0
        meta, rows = cli.read_result_csv(out.read_text())
        assert meta["command"] == "oracle" and meta["distinct_locations"] == 2
        got = sorted((r["kind"], int(r["n"]), int(r["multiplicity"])) for r in rows)
        assert got == sorted([("Z-zero", 1, 3), ("H-zero", 1, 3)])
        z = [complex(float(r["re"]), float(r["im"])) for r in rows if r["kind"] == "Z-zero"][0]
        assert abs(z - Z1) < 1e-14
        assert all(float(r["residual"]) < 1e-12 for r in rows)

    def test_summary(self, tmp_path):
        s = tmp_path / "s.json"
        assert cli.main(["oracle", "--summary", str(s), "--out", str(tmp_path / "o.csv")]) == 0
        assert '"oracle"' in s.read_text()


class TestSolve:
    def test_golden_and_deterministic(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(tiny_args(a)) == 0
        assert cli.main(tiny_args(b) + ["--threads", "2"]) == 0
        assert a.read_bytes() == b.read_bytes()
        meta, rows = cli.read_result_csv(a.read_text())
        gmeta, grows = cli.read_result_csv(GOLDEN.read_text())
        assert meta == gmeta
        assert list(rows[0].keys()) == cli.CSV_COLUMNS
        assert len(rows) == len(grows)
        for r, g in zip(rows, grows):
            assert_allclose([float(r["re"]), float(r["im"])], [float(g["re"]), float(g["im"])], rtol=1e-9)
            assert (r["cluster_id"], r["cluster_size"], r["count_probe"]) == \
                (g["cluster_id"], g["cluster_size"], g["count_probe"])

    def test_summary_timings(self, tmp_path):
        s = tmp_path / "s.json"
        assert cli.main(tiny_args(tmp_path / "a.csv") + ["--summary", str(s)]) == 0
        data = json.loads(s.read_text())
        assert set(data["timings"]) == {"mesh", "assemble", "search"}
        assert data["meta"]["dofs"] == 44 and data["levels"][0]["depth"] == 0

    def test_stage_failure_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.msh"
        bad.write_text("$MeshFormat\n9.9 0 8\n$EndMeshFormat\n")
        code = cli.main(["solve", "--set", "geometry.kind=mesh_file", "--set", f"geometry.mesh_file={bad}",
                         "--out", str(tmp_path / "x.csv")])
        assert code == 2
        assert "stage 'mesh' failed" in capsys.readouterr().err

    def test_config_failure_exit_code(self, capsys):
        assert cli.main(["solve", "--set", "geometry.R=0.5"]) == 2
        assert "stage 'config' failed" in capsys.readouterr().err


class TestConverge:
    @staticmethod
    def cl(z, size=3):
        return SimpleNamespace(mean=z, size=size)

    def test_match_clusters(self):
        levels = [[self.cl(0.9 - 0.5j), self.cl(1.5 - 1j)], [self.cl(0.88 - 0.5j)], [],
                  [self.cl(0.87 - 0.5j), self.cl(0.875 - 0.5j)]]
        (track,) = cli.match_clusters(levels, [Z1], 0.1, 0.02)
        assert [r[2] for r in track] == ["", "", "missing", "ambiguous"]
        assert track[3][0] == 0.875 - 0.5j

    def test_convergence_table(self):
        tracks = [[(Z1 + 0.04, 3, ""), (Z1 + 0.01, 3, ""), (Z1 + 0.0025, 3, "")]]
        rows = cli.convergence_table([1000, 8000, 64000], tracks, [Z1])
        assert rows[0].order is None
        assert_allclose([rows[1].order, rows[2].order], [2.0, 2.0], rtol=1e-9)
        assert_allclose(rows[2].error, 0.0025, rtol=1e-9)

    def test_too_few(self):
        with pytest.raises(ConfigError, match="three"):
            cli.cmd_converge([cli.load_config(environ={})] * 2)

    def test_mismatched_geometry(self):
        a = cli.load_config(environ={})
        b = cli.load_config(sets=["dtn.N=6"], environ={})
        with pytest.raises(ConfigError, match="different geometries"):
            cli.cmd_converge([a, a, b])

    @pytest.mark.slow
    def test_three_shells(self, tmp_path):
        paths = []
        for k, n in enumerate((1, 2, 3)):
            p = tmp_path / f"l{k}.cfg"
            p.write_text("\n".join(s.replace("=", " = ") for s in TINY[2:])
                         + f"\ngeometry.n_tan = {n}\ngeometry.n_rad = 1\nconverge.match_radius = 0.2\n")
            paths.append(p)
        out = tmp_path / "c.csv"
        args = ["converge", "--out", str(out)]
        for p in paths:
            args += ["--config", str(p)]
        assert cli.main(args) == 0
        meta, rows = cli.read_result_csv(out.read_text())
        assert meta["dofs"] == sorted(meta["dofs"])
        errs = [float(r["error"]) for r in rows if r["target"] == "0"]
        assert len(errs) == 3 and errs[0] > errs[1] > errs[2]
