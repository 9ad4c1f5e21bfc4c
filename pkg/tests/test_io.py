import numpy as np
import pytest

from plexadapt.fields import NodalField
from plexadapt.io import FormatError, read_kv, read_metric, read_msh, write_metric, write_msh, write_vtk
from plexadapt.mesh import EDGE, unit_square_mesh, validate
from plexadapt.remesh import adapt

from conftest import jittered_square

MINIMAL = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
10 0 0 0
20 1 0 0
30 1 1 0
40 0 1 0
$EndNodes
$Elements
{count}
{body}
$EndElements
"""


def _write(tmp_path, text, name="m.msh"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _boundary_tags(mesh):
    xy = mesh.vertex_coords()
    idx = mesh.vertex_index()
    out = {}
    for e in mesh.points(EDGE):
        if mesh.is_boundary_edge(e):
            a, b = (tuple(xy[idx[v]]) for v in mesh.edge_vertices(e))
            out[frozenset((a, b))] = mesh.tag(e)
    return out


def test_msh_round_trip(tmp_path):
    m0 = jittered_square(5, seed=1)
    m = adapt(m0, NodalField.constant(m0, [120, 30, 60])).mesh
    write_msh(m, tmp_path / "a.msh")
    back = read_msh(tmp_path / "a.msh")
    assert validate(back).ok
    assert np.array_equal(back.vertex_coords(), m.vertex_coords())
    assert np.array_equal(back.triangles(), m.triangles())
    assert _boundary_tags(back) == _boundary_tags(m)
    assert set(_boundary_tags(back).values()) == {1, 2, 3, 4}
    write_msh(back, tmp_path / "b.msh")
    # a mesh read from file writes back byte for byte
    write_msh(read_msh(tmp_path / "b.msh"), tmp_path / "c.msh")
    assert (tmp_path / "b.msh").read_bytes() == (tmp_path / "c.msh").read_bytes()


def test_minimal_msh_with_arbitrary_node_ids(tmp_path):
    body = "1 2 2 0 0 10 20 30\n2 2 2 0 0 10 30 40\n3 15 2 0 0 10\n4 1 2 7 7 10 20"
    m = read_msh(_write(tmp_path, MINIMAL.format(count=4, body=body)))
    assert (m.num_vertices, m.num_edges, m.num_cells) == (4, 5, 2)
    tags = _boundary_tags(m)
    assert tags[frozenset(((0.0, 0.0), (1.0, 0.0)))] == 7
    # boundary edges without a line element default to tag 1
    assert tags[frozenset(((1.0, 0.0), (1.0, 1.0)))] == 1


def test_clockwise_triangles_are_reoriented(tmp_path):
    body = "1 2 2 0 0 10 30 20\n2 2 2 0 0 10 40 30"
    m = read_msh(_write(tmp_path, MINIMAL.format(count=2, body=body)))
    assert np.all(m.cell_areas() > 0)


def test_quad_elements_are_rejected(tmp_path):
    body = "1 3 2 0 0 10 20 30 40"
    with pytest.raises(FormatError, match="unsupported element type 3"):
        read_msh(_write(tmp_path, MINIMAL.format(count=1, body=body)))


@pytest.mark.parametrize("text,match", [
    ("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n", "version"),
    ("$MeshFormat\n2.2 1 8\n$EndMeshFormat\n", "binary"),
    ("$Nodes\n1\n1 0 0 0\n$EndNodes\n", "MeshFormat"),
    ("$MeshFormat\n2.2 0 8\n", "not closed"),
    (MINIMAL.format(count=2, body="1 2 2 0 0 10 20 30"), "declares 2"),
    (MINIMAL.format(count=1, body="1 2 2 0 0 10 20 99"), "malformed"),
    (MINIMAL.format(count=1, body="1 2 2 0 0 10 20 x"), "malformed"),
])
def test_malformed_msh(tmp_path, text, match):
    with pytest.raises(FormatError, match=match):
        read_msh(_write(tmp_path, text))


def test_vtk_without_fields(tmp_path):
    m = unit_square_mesh(1)
    write_vtk(m, {}, tmp_path / "e.vtk")
    lines = (tmp_path / "e.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert "POINTS 4 double" in lines and "CELLS 2 8" in lines and "CELL_TYPES 2" in lines
    assert not any(ln.startswith("POINT_DATA") for ln in lines)


def test_vtk_scalar_and_tensor_fields(tmp_path):
    m = unit_square_mesh(2)
    u = NodalField.from_function(m, lambda x, y: x + 0.1 * y)
    H = NodalField.constant(m, [2.0, 0.5, 3.0])
    write_vtk(m, {"u": u, "hessian": H}, tmp_path / "f.vtk")
    lines = (tmp_path / "f.vtk").read_text().splitlines()
    i = lines.index("SCALARS u double 1")
    assert lines[i + 1] == "LOOKUP_TABLE default"
    vals = np.array([float(x) for x in lines[i + 2 : i + 2 + m.num_vertices]])
    assert np.array_equal(vals, u.values)
    j = lines.index("TENSORS hessian double")
    assert lines[j + 1].split() == ["2", "0.5", "0", "0.5", "3", "0", "0", "0", "0"]
    assert len(lines) == j + 1 + m.num_vertices


def test_vtk_is_deterministic(tmp_path):
    m = jittered_square(6, seed=9)
    u = NodalField.from_function(m, lambda x, y: np.sin(x) * np.cos(y))
    write_vtk(m, {"u": u}, tmp_path / "a.vtk")
    twin = m.copy()
    write_vtk(twin, {"u": NodalField(twin, u.values.copy())}, tmp_path / "b.vtk")
    assert (tmp_path / "a.vtk").read_bytes() == (tmp_path / "b.vtk").read_bytes()


def test_vtk_rejects_bad_field_names(tmp_path):
    m = unit_square_mesh(1)
    with pytest.raises(ValueError):
        write_vtk(m, {"a b": NodalField.constant(m, 1.0)}, tmp_path / "x.vtk")


def test_metric_file_round_trip(tmp_path):
    m = jittered_square(4, seed=2)
    rng = np.random.default_rng(0)
    M = NodalField(m, np.column_stack([1 + rng.random(m.num_vertices), 0.1 * rng.random(m.num_vertices),
                                       2 + rng.random(m.num_vertices)]), "tensor")
    write_metric(M, tmp_path / "m.metric")
    first = (tmp_path / "m.metric").read_text().splitlines()[0].split()
    assert first[0] == "1"
    back = read_metric(tmp_path / "m.metric", m)
    assert np.array_equal(back.values, M.values)


def test_metric_file_errors(tmp_path):
    m = unit_square_mesh(1)
    p = tmp_path / "bad.metric"
    p.write_text("1 1 0 1\n2 1 0 1\n3 1 0 1\n")
    with pytest.raises(FormatError, match="vertex 4"):
        read_metric(p, m)
    p.write_text("1 1 0 1\n9 1 0 1\n")
    with pytest.raises(FormatError, match="out of range"):
        read_metric(p, m)
    p.write_text("1 1 0\n")
    with pytest.raises(FormatError, match="expected"):
        read_metric(p, m)


def test_read_kv(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# a comment\nn_adap = 4\n\n  dt=0.02   # trailing\nout_dir = runs/a b\n")
    assert read_kv(p) == {"n_adap": "4", "dt": "0.02", "out_dir": "runs/a b"}
    p.write_text("a = 1\na = 2\n")
    with pytest.raises(FormatError, match="duplicate"):
        read_kv(p)
    p.write_text("just words\n")
    with pytest.raises(FormatError, match="key = value"):
        read_kv(p)
