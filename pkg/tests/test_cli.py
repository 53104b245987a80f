import filecmp
import shutil

import numpy as np
import pytest

from msdiffeo import cli, io
from msdiffeo.fields import Grid2
from msdiffeo.flows import FlowBlowUpError

from conftest import CONFIGS

SRC = "id,x,y\n0,0.3,0.3\n1,0.6,0.55\n2,0.45,0.7\n"
TGT = "id,x,y\n0,0.33,0.31\n1,0.62,0.5\n2,0.43,0.74\n"


def write_case(d, extra="", src=SRC, tgt=TGT, components=("0.25,1.0", "0.08,1.0")):
    (d / "src.csv").write_text(src)
    (d / "tgt.csv").write_text(tgt)
    lines = ["paths.source = src.csv", "paths.target = tgt.csv", "grid.size = 16", "time.steps = 5"]
    lines += [f"kernel.component = {c}" for c in components]
    (d / "run.cfg").write_text("\n".join(lines) + "\n" + extra)
    return str(d / "run.cfg")


def read_col(path, name):
    cols, rows = io.read_table(path)
    return [float(r[cols.index(name)]) for r in rows]


def test_register_writes_every_output(tmp_path):
    cfg = write_case(tmp_path)
    assert cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert names == {"energy_log.csv", "control_final.csv", "phi_final.csv", "equivalence_report.csv", "run.cfg"}
    totals = read_col(tmp_path / "o" / "energy_log.csv", "total")
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert (tmp_path / "o" / "phi_final.csv").read_text().startswith("# msdiffeo v")


def test_identical_landmarks_converge_at_once(tmp_path):
    cfg = write_case(tmp_path, tgt=SRC)
    assert cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert len(read_col(tmp_path / "o" / "energy_log.csv", "iter")) <= 3


def test_demo_registration_regression(tmp_path):
    out = tmp_path / "demo"
    assert cli.main(["register", "--config", str(CONFIGS / "demo_two_scale.cfg"), "--out", str(out)]) == 0
    totals = read_col(out / "energy_log.csv", "total")
    assert len(totals) - 1 == 131
    assert totals[-1] == pytest.approx(0.0093623456719135363, rel=1e-9)
    assert read_col(out / "energy_log.csv", "data")[-1] == pytest.approx(2.4388311327938222e-07, rel=1e-6)


def test_decompose_single_scale_is_bit_identical_to_the_registration(tmp_path):
    cfg = write_case(tmp_path, "paths.control = o\n", components=("0.2,1.0",))
    assert cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert cli.main(["decompose", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    g = Grid2.unit_square(16)
    phi = io.read_diffeo(tmp_path / "o" / "phi_final.csv", g)
    psi = io.read_diffeo(tmp_path / "d" / "psi_scale1_t5.csv", g)
    assert np.array_equal(phi.map_values, psi.map_values)
    assert read_col(tmp_path / "d" / "decomposition_report.csv", "diagram_residual") == [0.0]


def test_decompose_zero_control_gives_identities(tmp_path):
    cfg = write_case(tmp_path, "paths.control = zero.csv\n")
    io.write_control(tmp_path / "zero.csv", np.zeros((5, 1, 3, 2)))
    assert cli.main(["decompose", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    g = Grid2.unit_square(16)
    for k in (1, 2):
        psi = io.read_diffeo(tmp_path / "d" / f"psi_scale{k}_t5.csv", g)
        assert np.array_equal(psi.map_values, g.nodes())
    assert read_col(tmp_path / "d" / "decomposition_report.csv", "max_displacement") == [0.0, 0.0]


def test_decompose_residual_matches_the_equivalence_report(tmp_path):
    cfg = write_case(tmp_path, "paths.control = o\n")
    cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")])
    cli.main(["decompose", "--config", cfg, "--out", str(tmp_path / "d")])
    cols, rows = io.read_table(tmp_path / "o" / "equivalence_report.csv")
    sdp = [float(r[cols.index("sup_distance")]) for r in rows if r[0] == "sdp_coarse_first"][0]
    res = read_col(tmp_path / "d" / "decomposition_report.csv", "diagram_residual")
    assert res[0] == sdp


def test_verify_is_reproducible_and_passes(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["verify", "--out", str(a), "--seed", "5"]) == 0
    assert cli.main(["verify", "--out", str(b), "--seed", "5"]) == 0
    assert filecmp.cmp(a / "verify_report.csv", b / "verify_report.csv", shallow=False)
    assert "checks passed" in capsys.readouterr().out


def test_verify_tightened_fails_with_exit_three(tmp_path):
    (tmp_path / "t.cfg").write_text("verify.tighten = 10\n")
    assert cli.main(["verify", "--config", str(tmp_path / "t.cfg"), "--out", str(tmp_path / "v")]) == 3
    cols, rows = io.read_table(tmp_path / "v" / "verify_report.csv")
    assert "FAIL" in [r[cols.index("status")] for r in rows]


def test_oracle_command(tmp_path):
    (tmp_path / "o.cfg").write_text("oracle.tuples = 20\n")
    assert cli.main(["oracle", "--config", str(tmp_path / "o.cfg"), "--out", str(tmp_path / "x")]) == 0
    assert (tmp_path / "x" / "oracle_report.csv").exists()


@pytest.mark.parametrize("extra", ["bogus.key = 1\n", "time.steps = 0\n", "kernel.component = 0,1\n"])
def test_bad_configuration_exits_one(tmp_path, extra):
    cfg = write_case(tmp_path, extra)
    assert cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


def test_missing_inputs_exit_one(tmp_path):
    cfg = write_case(tmp_path)
    (tmp_path / "tgt.csv").unlink()
    assert cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["decompose", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["register", "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["verify", "--seed", "-1", "--out", str(tmp_path / "o")]) == 1


def test_numerical_failure_exits_two(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FlowBlowUpError("trajectory left every bound")

    monkeypatch.setattr(cli, "optimize", boom)
    cfg = write_case(tmp_path)
    assert cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_output_dir_replaces_files_in_an_existing_folder(tmp_path):
    target = tmp_path / "out"
    target.mkdir()
    (target / "keep.txt").write_text("x")
    with cli.output_dir(target) as d:
        (d / "new.txt").write_text("y")
    assert sorted(p.name for p in target.iterdir()) == ["keep.txt", "new.txt"]
    with pytest.raises(RuntimeError):
        with cli.output_dir(tmp_path / "fresh") as d:
            (d / "half.txt").write_text("z")
            raise RuntimeError
    assert not (tmp_path / "fresh").exists()
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".")] == []


def test_relative_paths_follow_the_config_folder(tmp_path, monkeypatch):
    sub = tmp_path / "case"
    sub.mkdir()
    cfg = write_case(sub)
    monkeypatch.chdir(tmp_path)
    assert cli.main(["register", "--config", cfg]) == 0
    assert (tmp_path / "register_out" / "phi_final.csv").exists()
    shutil.rmtree(tmp_path / "register_out")


@pytest.mark.parametrize("convention", ["right", "left"])
def test_decompose_writes_scale_segments(tmp_path, convention):
    cfg = write_case(tmp_path, f"paths.control = o\ndecompose.convention = {convention}\n")
    cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")])
    assert cli.main(["decompose", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    g = Grid2.unit_square(16)
    eta = [io.read_diffeo(tmp_path / "d" / f"eta_s{j}.csv", g) for j in range(3)]
    seg = [io.read_diffeo(tmp_path / "d" / f"segment_s{j}.csv", g) for j in (1, 2)]
    # the first segment starts at the identity, so both conventions give eta(1/2)
    assert np.allclose(seg[0].map_values, eta[1].map_values, atol=1e-12)
    assert not (tmp_path / "d" / "segment_s3.csv").exists()


def test_continuum_register_and_decompose(tmp_path):
    extra = ("formulation = integral_kernel\nkernel.mode = continuum\nkernel.smin = 0\nkernel.smax = 1\n"
             "kernel.nodes = 8\nkernel.sigma_min = 0.08\nkernel.sigma_max = 0.3\nkernel.bins = 2\n"
             "optimizer.max_iters = 20\npaths.control = o\n")
    cfg = write_case(tmp_path, extra, components=())
    assert cli.main(["register", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    cols, rows = io.read_table(tmp_path / "o" / "equivalence_report.csv")
    assert any(r[cols.index("bit_exact")] == "1" for r in rows)
    assert cli.main(["decompose", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    assert len(read_col(tmp_path / "d" / "decomposition_report.csv", "scale")) == 2
    assert (tmp_path / "d" / "eta_s8.csv").exists()
