import numpy as np
import pytest

from swedg.cases import default_channel_mesh_path, manufactured_mesh, wb_mesh
from swedg.mesh import (
    MeshError,
    MeshFormatError,
    build_cartesian,
    build_interval,
    build_unstructured,
    compute_metrics,
    parse_quad_mesh,
    read_quad_mesh,
    sine_warp,
    warp_mesh,
    write_quad_mesh,
)
from swedg.operators import sbp
from swedg.physics import PhysicsParams
from swedg.semidiscretization import Semidiscretization

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_cartesian_jacobian_dam_break_grid():
    mesh = build_cartesian((0, 4, 0, 4), 32, 32, 4, "periodic")
    assert mesh.n_elements == 1024
    np.testing.assert_allclose(mesh.jac, 3.90625e-3, rtol=1e-12)
    assert np.all(mesh.neighbor >= 0)


def test_reference_element():
    mesh = build_cartesian((-1, 1, -1, 1), 1, 1, 3, "slip-wall")
    np.testing.assert_allclose(mesh.jac, 1.0, atol=1e-14)
    np.testing.assert_allclose(mesh.ja1, np.broadcast_to([1.0, 0.0], mesh.ja1.shape), atol=1e-14)
    np.testing.assert_allclose(mesh.ja2, np.broadcast_to([0.0, 1.0], mesh.ja2.shape), atol=1e-14)
    assert np.all(mesh.tags == "slip-wall")


def test_rectangle_metrics():
    mesh = build_cartesian((0, 2, 0, 1), 1, 1, 2, "slip-wall")
    np.testing.assert_allclose(mesh.jac, 0.5, atol=1e-14)
    np.testing.assert_allclose(mesh.ja1[..., 0], 0.5, atol=1e-14)
    np.testing.assert_allclose(mesh.ja1[..., 1], 0.0, atol=1e-14)
    np.testing.assert_allclose(mesh.ja2[..., 1], 1.0, atol=1e-14)


def _element_from_corners(corners, N):
    r = sbp(N).nodes
    xi, eta = np.meshgrid(r, r, indexing="ij")
    c = np.asarray(corners, float)
    X = (0.25 * (1 - xi) * (1 - eta))[..., None] * c[0] + (0.25 * (1 + xi) * (1 - eta))[..., None] * c[1] \
        + (0.25 * (1 + xi) * (1 + eta))[..., None] * c[2] + (0.25 * (1 - xi) * (1 + eta))[..., None] * c[3]
    return X[None]


def test_parallelogram_metrics_constant():
    coords = _element_from_corners([[0, 0], [2, 0.5], [2.7, 2.0], [0.7, 1.5]], 4)
    jac, ja1, ja2 = compute_metrics(coords, sbp(4))
    for a in (jac, ja1, ja2):
        assert np.ptp(a, axis=(1, 2)).max() <= 1e-13


def test_rotated_square():
    side = 2.0
    c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
    R = np.array([[c, -s], [s, c]])
    corners = (UNIT_SQUARE * side) @ R.T
    jac, ja1, ja2 = compute_metrics(_element_from_corners(corners, 3), sbp(3))
    np.testing.assert_allclose(np.linalg.norm(ja1, axis=-1), np.linalg.norm(ja2, axis=-1), rtol=1e-14)
    np.testing.assert_allclose(jac, (side / 2) ** 2, rtol=1e-14)


def test_folded_element_rejected():
    coords = _element_from_corners([[0, 0], [0, 1], [1, 1], [1, 0]], 2)  # clockwise
    with pytest.raises(MeshError, match="element 0"):
        compute_metrics(coords, sbp(2))


def test_degenerate_cartesian():
    with pytest.raises(MeshError):
        build_cartesian((0, 0, 0, 1), 2, 2, 2)
    with pytest.raises(MeshError):
        build_cartesian((0, 1, 0, 1), 0, 2, 2)


def test_identity_warp_keeps_metrics():
    mesh = build_cartesian((-1, 1, -1, 1), 4, 4, 3, "periodic")
    warped = warp_mesh(mesh, lambda x, y: (x, y), 3)
    for name in ("jac", "ja1", "ja2", "coords"):
        np.testing.assert_allclose(getattr(warped, name), getattr(mesh, name), atol=1e-14)


def test_shift_warp():
    mesh = build_cartesian((-1, 1, -1, 1), 4, 4, 3, "periodic")
    warped = warp_mesh(mesh, lambda x, y: (x + 0.3, y - 1.1), 3)
    np.testing.assert_allclose(warped.jac, mesh.jac, rtol=1e-13)
    np.testing.assert_allclose(warped.coords, mesh.coords + [0.3, -1.1], atol=1e-14)


def test_sine_warp_sixteen_elements_positive():
    mesh = manufactured_mesh(4, 3)
    assert mesh.n_elements == 16
    assert mesh.jac.min() > 0
    assert mesh.free_stream_defect() <= 1e-12
    assert mesh.conformity_defect() <= 1e-12
    assert mesh.area() == pytest.approx(4.0, rel=1e-12)


def test_fold_over_warp_rejected():
    mesh = build_cartesian((-1, 1, -1, 1), 4, 4, 3, "periodic")
    with pytest.raises(MeshError, match="element"):
        warp_mesh(mesh, lambda x, y: sine_warp(x, y, amplitude=2.0), 3)


def test_neighbour_round_trip():
    for mesh in (manufactured_mesh(4, 3), wb_mesh(3), read_quad_mesh(default_channel_mesh_path(), 2)):
        for e in range(mesh.n_elements):
            for f in range(4):
                nb = mesh.neighbor[e, f]
                if nb < 0:
                    continue
                nf = mesh.neighbor_face[e, f]
                assert mesh.neighbor[nb, nf] == e
                assert mesh.neighbor_face[nb, nf] == f
                assert mesh.flipped[nb, nf] == mesh.flipped[e, f]


def test_interval_mesh():
    mesh = build_interval(0, 2, 4, 3)
    assert mesh.dim == 1
    np.testing.assert_allclose(mesh.jac, 0.25, rtol=1e-14)
    np.testing.assert_allclose(mesh.ja1[..., 0], 1.0, rtol=1e-14)


def test_single_element_file(tmp_path):
    p = tmp_path / "one.mesh"
    write_quad_mesh(p, UNIT_SQUARE, [[0, 1, 2, 3]], {(0, f): "slip-wall" for f in range(4)})
    mesh = read_quad_mesh(p, 2)
    assert mesh.n_elements == 1
    assert np.all(mesh.tags == "slip-wall")
    assert mesh.area() == pytest.approx(1.0, rel=1e-14)


def test_two_element_strip(tmp_path):
    verts = np.array([[0, 0], [1, 0], [2, 0], [2, 1], [1, 1], [0, 1]], float)
    elems = [[0, 1, 4, 5], [1, 2, 3, 4]]
    tags = {(0, 0): "slip-wall", (0, 2): "slip-wall", (0, 3): "slip-wall",
            (1, 1): "outflow", (1, 2): "slip-wall", (1, 3): "slip-wall"}
    p = tmp_path / "strip.mesh"
    write_quad_mesh(p, verts, elems, tags)
    mesh = read_quad_mesh(p, 3)
    assert mesh.neighbor[0, 1] == 1 and mesh.neighbor[1, 0] == 0
    assert not mesh.flipped[0, 1]
    assert mesh.conformity_defect() <= 1e-14


def test_flipped_face_orientation():
    # second element's local frame is rotated so the shared face runs the other way
    verts = np.array([[0, 0], [1, 0], [2, 0], [2, 1], [1, 1], [0, 1]], float)
    elems = [[0, 1, 4, 5], [3, 4, 1, 2]]
    tags = {k: "slip-wall" for k in ((0, 0), (0, 2), (0, 3), (1, 0), (1, 2), (1, 3))}
    mesh = build_unstructured(verts, elems, 3, tags)
    assert mesh.neighbor[0, 1] == 1 and mesh.flipped[0, 1]
    assert mesh.conformity_defect() <= 1e-14
    assert mesh.jac.min() > 0


def test_file_round_trip_with_curved_edge(tmp_path):
    verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    t = sbp(3).nodes
    bulge = np.stack([1.0 + 0.1 * (1 - t**2), 0.5 * (t + 1)], axis=-1)
    p = tmp_path / "curved.mesh"
    write_quad_mesh(p, verts, [[0, 1, 2, 3]], {(0, f): "slip-wall" for f in range(4)}, {(0, 1): bulge})
    mf = parse_quad_mesh(p)
    np.testing.assert_array_equal(mf.vertices, verts)
    np.testing.assert_array_equal(mf.curved[(0, 1)], bulge)
    mesh = mf.build(3)
    np.testing.assert_allclose(mesh.coords[0, -1], bulge, atol=1e-14)
    # area of a parabolic bulge of height 0.1 over a unit chord
    assert mesh.area() == pytest.approx(1.0 + 2 / 3 * 0.1, rel=1e-13)


@pytest.mark.parametrize("text, line, match", [
    ("QUADMESH v2\n", 1, "header"),
    ("QUADMESH v1\n4 1\n0 0\n1 0\n1 1\n0 1\n0 1 2\n", 7, "4 node ids"),
    ("QUADMESH v1\n4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2 3\n1 2 3 0\n", 8, "duplicate"),
    ("QUADMESH v1\n4 1\n0 0\n1 0\n1 1\n0 1\n0 1 2 3\nBOUNDARY 1\n0 lava\n", 9, "tag"),
    ("QUADMESH v1\n4 1\n0 0\n1 0\n1 1\n0 1\n0 1 2 3\nBOUNDARY 3\n0 slip-wall\n1 slip-wall\n2 outflow\n", 11,
     "untagged"),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, line, match):
    p = tmp_path / "bad.mesh"
    p.write_text(text)
    with pytest.raises(MeshFormatError, match=match) as info:
        parse_quad_mesh(p)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_channel_mesh_file():
    mesh = read_quad_mesh(default_channel_mesh_path(), 3)
    assert mesh.n_elements == 462
    assert mesh.jac.min() > 0
    assert mesh.conformity_defect() <= 1e-12
    assert mesh.free_stream_defect() <= 1e-12
    out = mesh.tag_mask("outflow")
    assert out.any()
    fx = mesh.face_values(mesh.coords)[out]
    np.testing.assert_allclose(fx[..., 0], fx[..., 0].max(), atol=1e-12)
    assert set(mesh.tags[mesh.is_boundary]) == {"slip-wall", "outflow"}


@pytest.mark.parametrize("make", [
    lambda: build_cartesian((0, 3, 0, 2), 3, 2, 3, "periodic"),
    lambda: manufactured_mesh(4, 3),
    lambda: wb_mesh(3),
    lambda: read_quad_mesh(default_channel_mesh_path(), 3),
])
def test_free_stream_preservation(make):
    mesh = make()
    u = np.zeros(mesh.jac.shape + (3,))
    u[..., 0] = 1.3
    sd = Semidiscretization(mesh, np.zeros(mesh.jac.shape), PhysicsParams())
    assert np.abs(sd(u, 0.0)).max() <= 1e-12
