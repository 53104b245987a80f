"""Plain-text formats: field/landmark/map CSVs, velocity path directories, PGM images.

Every file starts with one comment line naming the program, seed and command.
Floats are written with 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import __version__
from .fields import Grid2, LandmarkSet, ScalarField, VectorField
from .flows import Diffeomorphism, FlowPath


def header_line(seed, command):
    return f"# msdiffeo v{__version__} seed={seed} cmd={command}"


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    s = str(x)
    if "," in s or "\n" in s:
        raise ValueError(f"table cell {s!r} would break the CSV layout")
    return s


def write_table(path, columns, rows, header=None):
    """CSV with an optional leading comment line and a column row."""
    lines = [] if header is None else [header]
    lines.append(",".join(columns))
    for r in rows:
        lines.append(",".join(_fmt(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path):
    """(columns, rows as lists of strings), skipping comment lines."""
    cols, rows = None, []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if cols is None:
            cols = parts
        else:
            if len(parts) != len(cols):
                raise ValueError(f"{path}: row has {len(parts)} fields, expected {len(cols)}")
            rows.append(parts)
    if cols is None:
        raise ValueError(f"{path}: no column header")
    return cols, rows


def _numeric(path, expected):
    cols, rows = read_table(path)
    if tuple(cols) != tuple(expected):
        raise ValueError(f"{path}: expected columns {','.join(expected)}, got {','.join(cols)}")
    return np.array(rows, dtype=float).reshape(-1, len(cols))


def _node_rows(grid, values):
    i, j = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    flat = values.reshape(grid.nx * grid.ny, -1)
    return [(int(a), int(b), *map(float, v)) for a, b, v in zip(i.ravel(), j.ravel(), flat)]


def _node_values(grid, data, ncomp):
    if data.shape[0] != grid.nx * grid.ny:
        raise ValueError(f"expected {grid.nx * grid.ny} rows for the grid, got {data.shape[0]}")
    i = data[:, 0].astype(int)
    j = data[:, 1].astype(int)
    if i.min() < 0 or j.min() < 0 or i.max() >= grid.nx or j.max() >= grid.ny:
        raise ValueError("node index outside the grid")
    out = np.zeros(grid.shape + (ncomp,))
    out[i, j] = data[:, 2 : 2 + ncomp]
    return out


def write_field(path, f, header=None):
    if isinstance(f, VectorField):
        write_table(path, ("i", "j", "vx", "vy"), _node_rows(f.grid, f.values), header)
    else:
        write_table(path, ("i", "j", "value"), _node_rows(f.grid, f.values), header)


def read_field(path, grid: Grid2):
    cols, _ = read_table(path)
    if tuple(cols) == ("i", "j", "vx", "vy"):
        return VectorField(grid, _node_values(grid, _numeric(path, cols), 2))
    if tuple(cols) == ("i", "j", "value"):
        return ScalarField(grid, _node_values(grid, _numeric(path, cols), 1)[..., 0])
    raise ValueError(f"{path}: not a field file")


def grid_of_value_csv(path) -> Grid2:
    """Unit-square grid sized by the largest node indices of an ``i,j,value`` file."""
    d = _numeric(path, ("i", "j", "value"))
    nx, ny = int(d[:, 0].max()) + 1, int(d[:, 1].max()) + 1
    return Grid2(nx, ny, 1.0 / (max(nx, ny) - 1))


def write_landmarks(path, q: LandmarkSet, header=None):
    write_table(path, ("id", "x", "y"), [(i, float(p[0]), float(p[1])) for i, p in zip(q.ids, q.points)], header)


def read_landmarks(path) -> LandmarkSet:
    d = _numeric(path, ("id", "x", "y"))
    return LandmarkSet(d[:, 1:3], d[:, 0].astype(int))


def write_diffeo(path, phi: Diffeomorphism, header=None):
    if phi.has_inverse:
        vals = np.concatenate([phi.map_values, phi.inverse_values], axis=-1)
        cols = ("i", "j", "phix", "phiy", "invx", "invy")
    else:
        vals = phi.map_values
        cols = ("i", "j", "phix", "phiy")
    write_table(path, cols, _node_rows(phi.grid, vals), header)


def read_diffeo(path, grid: Grid2) -> Diffeomorphism:
    cols, _ = read_table(path)
    if tuple(cols) == ("i", "j", "phix", "phiy", "invx", "invy"):
        v = _node_values(grid, _numeric(path, cols), 4)
        return Diffeomorphism(grid, v[..., :2], v[..., 2:])
    v = _node_values(grid, _numeric(path, ("i", "j", "phix", "phiy")), 2)
    return Diffeomorphism(grid, v)


def velocity_name(m, scale=None):
    return f"vel_t{m}.csv" if scale is None else f"vel_t{m}_s{scale}.csv"


def write_flowpath(directory, path: FlowPath, scale=None, header=None):
    os.makedirs(directory, exist_ok=True)
    for m in range(path.steps + 1):
        write_field(Path(directory) / velocity_name(m, scale), path.field(m), header)


def read_flowpath(directory, grid: Grid2, scale=None) -> FlowPath:
    fields = []
    m = 0
    while (Path(directory) / velocity_name(m, scale)).exists():
        fields.append(read_field(Path(directory) / velocity_name(m, scale), grid))
        m += 1
    if len(fields) < 2:
        raise ValueError(f"{directory}: need at least two velocity files")
    return FlowPath.from_fields(fields)


CONTROL_COLUMNS = ("m", "scale", "id", "px", "py")


def write_control(path, momenta, header=None):
    """Landmark control rows (m, scale, landmark id, px, py); grid controls use the flat node id."""
    M, G = momenta.shape[:2]
    flat = momenta.reshape(M, G, -1, 2)
    rows = [
        (m, k, a, float(flat[m, k, a, 0]), float(flat[m, k, a, 1]))
        for m in range(M)
        for k in range(G)
        for a in range(flat.shape[2])
    ]
    write_table(path, CONTROL_COLUMNS, rows, header)


def read_control(path, carrier_shape):
    d = _numeric(path, CONTROL_COLUMNS)
    M = int(d[:, 0].max()) + 1
    G = int(d[:, 1].max()) + 1
    n = int(d[:, 2].max()) + 1
    out = np.zeros((M, G, n, 2))
    out[d[:, 0].astype(int), d[:, 1].astype(int), d[:, 2].astype(int)] = d[:, 3:5]
    return out.reshape((M, G) + tuple(carrier_shape) + (2,))


def read_pgm(path) -> ScalarField:
    """ASCII PGM (P2), values scaled to [0, 1]; row r of the file is y index ny-1-r."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: only ASCII PGM (P2) is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), float(tokens[3])
    vals = np.array(tokens[4 : 4 + w * h], dtype=float)
    if vals.size != w * h or maxval <= 0:
        raise ValueError(f"{path}: truncated or invalid PGM")
    img = vals.reshape(h, w)[::-1].T / maxval
    grid = Grid2(w, h, 1.0 / (max(w, h) - 1))
    return ScalarField(grid, img)


def write_pgm(path, f: ScalarField, maxval=255, header=None):
    v = np.clip(np.rint(f.values * maxval), 0, maxval).astype(int)
    rows = v.T[::-1]
    lines = ["P2"]
    if header:
        lines.append(header)
    lines.append(f"{f.grid.nx} {f.grid.ny}")
    lines.append(str(maxval))
    lines.extend(" ".join(str(x) for x in r) for r in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_image(path) -> ScalarField:
    if str(path).lower().endswith(".pgm"):
        return read_pgm(path)
    return read_field(path, grid_of_value_csv(path))
