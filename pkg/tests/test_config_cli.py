import json
import os

import numpy as np
import pytest

from elastoacoustic.cli import main
from elastoacoustic.config import (ConfigError, RunConfig, load_config,
                                   parse_config)

CONFIG_TEXT = """
# vessel study setup
[geometry]
geometry = omega1
wall = 0.13
clamp = bottom

[discretization]
family = taylor-hood
levels = 1, 2

[materials]
e_modulus = 1.44e11
nu = 0.35

[eigensolver]
n_modes = 2
window = 400, 2800

[adaptivity]
theta = 0.5
max_dofs = 4000

[output]
out_dir = run1
"""


class TestConfig:
    def test_parse_sections(self):
        values = parse_config(CONFIG_TEXT)
        assert values["geometry"] == "omega1"
        assert values["levels"] == (1, 2)
        assert values["window"] == (400.0, 2800.0)
        assert values["theta"] == 0.5

    def test_load_and_defaults(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(CONFIG_TEXT)
        cfg = load_config(path)
        assert cfg.family == "taylor-hood"
        assert cfg.rho_f == 1000.0  # untouched default

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[x]\nnot_a_key = 3\n")

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(theta=0.0)
        with pytest.raises(ConfigError):
            RunConfig(nu=0.6)
        with pytest.raises(ConfigError):
            RunConfig(family="p17")
        with pytest.raises(ConfigError):
            RunConfig(geometry="dodecahedron")

    def test_overrides(self):
        cfg = RunConfig().with_overrides(nu=0.5, family="mini",
                                         shift=None)
        assert cfg.nu == 0.5
        assert cfg.family == "mini"
        assert cfg.shift is None

    def test_out_dir_env_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv("ELASTOACOUSTIC_OUTDIR", str(tmp_path))
        cfg = RunConfig(out_dir="sub")
        assert cfg.resolved_out_dir() == os.path.join(str(tmp_path),
                                                      "sub")

    def test_geometry_spec_dimensions(self):
        cfg = RunConfig(geometry="omega1", wall=0.2, fluid_width=1.5)
        spec = cfg.geometry_spec()
        assert spec.xs[0] == pytest.approx(-0.2)
        assert spec.xs[-1] == pytest.approx(1.7)


class TestCli:
    def test_mesh_subcommand(self, tmp_path, capsys):
        rc = main(["mesh", "--geometry", "omega1", "--level", "2",
                   "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "triangles=" in out
        assert (tmp_path / "mesh.txt").exists()
        assert (tmp_path / "manifest.json").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["command"] == "mesh"
        assert "numpy" in manifest

    def test_mesh_refine_and_reload(self, tmp_path, capsys):
        rc = main(["mesh", "--geometry", "omega1", "--level", "1",
                   "--refine", "1", "--out", str(tmp_path)])
        assert rc == 0
        rc = main(["mesh", "--input", str(tmp_path / "mesh.txt"),
                   "--out", str(tmp_path / "again")])
        assert rc == 0

    def test_solve_subcommand(self, tmp_path, capsys):
        rc = main(["solve", "--geometry", "omega1", "--level", "1",
                   "--modes", "2", "--family", "mini", "--vtk",
                   "--matrices", "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "mode 1" in out
        assert (tmp_path / "spectrum.csv").exists()
        assert (tmp_path / "mode_1.vtk").exists()
        assert (tmp_path / "system_A.mtx").exists()
        header = (tmp_path / "spectrum.csv").read_text().splitlines()[0]
        assert header == "mode_index,kappa,omega,residual,kernel_flag"

    def test_study_subcommand_deterministic(self, tmp_path, capsys):
        args = ["study", "--geometry", "omega1", "--family", "mini",
                "--levels", "1,2,3", "--modes", "1"]
        rc = main(args + ["--out", str(tmp_path / "a")])
        assert rc == 0
        rc = main(args + ["--out", str(tmp_path / "b")])
        assert rc == 0
        csv_a = next((tmp_path / "a").glob("study_*.csv")).read_bytes()
        csv_b = next((tmp_path / "b").glob("study_*.csv")).read_bytes()
        assert csv_a == csv_b

    def test_adapt_subcommand(self, tmp_path, capsys):
        cfg = tmp_path / "adapt.cfg"
        cfg.write_text("geometry = omega2\nfamily = mini\n"
                       "initial_level = 1\nmax_dofs = 2500\n"
                       "max_iterations = 4\nmode_index = 1\n"
                       "window = 400, 2800\n")
        rc = main(["adapt", "--config", str(cfg), "--out",
                   str(tmp_path)])
        assert rc == 0
        hist = next(tmp_path.glob("adapt_*.csv")).read_text()
        assert hist.startswith("iteration,dofs,cells")
        assert len(hist.splitlines()) >= 3

    def test_fit_subcommand(self, tmp_path, capsys):
        csv = tmp_path / "study.csv"
        rows = ["N,dofs,omega_1"]
        for N in (8, 10, 12, 14):
            rows.append(f"{N},0,{443.0 + 30.0 * N ** -2.0:.10f}")
        csv.write_text("\n".join(rows) + "\n")
        rc = main(["fit", str(csv)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "omega_extr = 443.0" in out
        assert "order t = 2.0" in out
