import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from msdiffeo import io
from msdiffeo.config import SCHEMA, ConfigError, RunConfig, parse_config
from msdiffeo.fields import Grid2, LandmarkSet, ScalarField, VectorField
from msdiffeo.flows import Diffeomorphism, FlowPath


def test_header_line():
    assert io.header_line(7, "verify").startswith("# msdiffeo v")
    assert io.header_line(7, "verify").endswith("seed=7 cmd=verify")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trip(x):
    assert float(io._fmt(x)) == x


def test_field_round_trip(tmp_path, rng):
    g = Grid2(5, 4, 0.25)
    v = VectorField(g, rng.standard_normal(g.shape + (2,)))
    s = ScalarField(g, rng.standard_normal(g.shape))
    io.write_field(tmp_path / "v.csv", v, io.header_line(0, "x"))
    io.write_field(tmp_path / "s.csv", s)
    assert np.array_equal(io.read_field(tmp_path / "v.csv", g).values, v.values)
    assert np.array_equal(io.read_field(tmp_path / "s.csv", g).values, s.values)
    assert io.read_table(tmp_path / "v.csv")[0] == ["i", "j", "vx", "vy"]


def test_landmarks_diffeo_and_flowpath_round_trip(tmp_path, rng):
    q = LandmarkSet(rng.uniform(0, 1, (4, 2)))
    io.write_landmarks(tmp_path / "q.csv", q)
    assert np.array_equal(io.read_landmarks(tmp_path / "q.csv").points, q.points)
    g = Grid2.unit_square(6)
    phi = Diffeomorphism(g, g.nodes() + 0.01 * rng.standard_normal(g.shape + (2,)), g.nodes())
    io.write_diffeo(tmp_path / "phi.csv", phi)
    back = io.read_diffeo(tmp_path / "phi.csv", g)
    assert np.array_equal(back.map_values, phi.map_values) and back.has_inverse
    path = FlowPath(g, rng.standard_normal((3,) + g.shape + (2,)))
    io.write_flowpath(tmp_path / "vel", path, scale=2)
    assert (tmp_path / "vel" / "vel_t0_s2.csv").exists()
    assert np.array_equal(io.read_flowpath(tmp_path / "vel", g, 2).velocities, path.velocities)


def test_control_round_trip(tmp_path, rng):
    P = rng.standard_normal((3, 2, 5, 2))
    io.write_control(tmp_path / "c.csv", P)
    assert np.array_equal(io.read_control(tmp_path / "c.csv", (5,)), P)


def test_pgm_orientation_and_round_trip(tmp_path):
    (tmp_path / "a.pgm").write_text("P2\n# c\n3 2\n10\n0 1 2\n3 4 5\n")
    f = io.read_pgm(tmp_path / "a.pgm")
    assert f.grid.shape == (3, 2)
    # top file row is the largest y
    assert f.values[0, 1] == 0.0 and f.values[2, 0] == 0.5
    io.write_pgm(tmp_path / "b.pgm", f, maxval=10)
    assert np.array_equal(io.read_pgm(tmp_path / "b.pgm").values, f.values)
    (tmp_path / "c.pgm").write_text("P5\n1 1\n255\n")
    with pytest.raises(ValueError):
        io.read_pgm(tmp_path / "c.pgm")


def test_bad_tables(tmp_path):
    (tmp_path / "x.csv").write_text("id,x,y\n1,2\n")
    with pytest.raises(ValueError):
        io.read_table(tmp_path / "x.csv")
    (tmp_path / "y.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        io.read_landmarks(tmp_path / "y.csv")


# ---- configuration ----

def test_defaults_and_paths(tmp_path):
    cfg = parse_config("paths.source = a.csv\n", tmp_path)
    assert cfg["grid.size"] == 32 and cfg["time.scheme"] == "rk4"
    assert cfg.path("source") == tmp_path / "a.csv" and cfg.path("target") is None


def test_comments_and_components():
    cfg = parse_config("# hi\n\nkernel.component = 0.25, 1.0  # coarse\nkernel.component = 0.05,2\n")
    assert cfg.components == [(0.25, 1.0), (0.05, 2.0)]
    assert cfg.kernel_spec().n_scales == 2


@pytest.mark.parametrize("text, msg", [
    ("nope = 1\n", "unknown key"),
    ("seed = 1\nseed = 2\n", "twice"),
    ("seed = x\n", "bad value"),
    ("seed\n", "expected"),
    ("time.scheme = midpoint\n", "expected one of"),
    ("kernel.component = 1\n", "sigma,weight"),
])
def test_config_errors_name_the_line(text, msg):
    with pytest.raises(ConfigError, match=msg) as e:
        parse_config(text)
    assert "line" in str(e.value)


def test_kernel_config_errors():
    with pytest.raises(ConfigError, match="kernel.component"):
        parse_config("").kernel_spec()
    with pytest.raises(ConfigError, match="kernel.smin"):
        parse_config("kernel.mode = continuum\n").kernel_spec()
    with pytest.raises(ConfigError):
        parse_config("kernel.component = -1,1\n").kernel_spec()
    with pytest.raises(ConfigError):
        parse_config("optimizer.backtrack = 2\n").optimizer()
    with pytest.raises(ConfigError):
        RunConfig({"bogus": 1})


values = st.fixed_dictionaries({
    "seed": st.integers(0, 2**63),
    "grid.size": st.integers(2, 200),
    "data.sigma2": st.floats(1e-9, 1e3),
    "time.scheme": st.sampled_from(["rk4", "euler"]),
    "verify.tighten": st.floats(0.1, 100),
})
comps = st.lists(st.tuples(st.floats(1e-3, 1.0), st.floats(1e-3, 10.0)), max_size=3)


@given(values, comps)
def test_serialize_parse_round_trip(settings, components):
    cfg = RunConfig(settings, components)
    again = parse_config(cfg.serialize())
    assert again == cfg


def test_schema_defaults_parse_back():
    assert parse_config(RunConfig().serialize()) == RunConfig()
    assert all(k.count(".") <= 1 for k in SCHEMA)


def test_writer_rejects_cells_with_commas(tmp_path):
    with pytest.raises(ValueError):
        io.write_table(tmp_path / "t.csv", ("a",), [("x,y",)])
