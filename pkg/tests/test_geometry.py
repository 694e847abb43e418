import numpy as np
import pytest

from odf.domain import make_rng, uniform_ball_sample, uniform_dir_sample
from odf.errors import DataError
from odf.geometry import (
    ExactODF,
    T_MIN,
    TriMesh,
    boundary_edges,
    boundary_loops,
    brute_force_intersect,
    brute_force_ray_cast,
    build_bvh,
    intersect,
    load_mesh,
    load_normalization,
    load_points,
    normalize_mesh,
    remove_degenerate_faces,
    sample_surface,
    save_mesh,
    save_points,
)


@pytest.mark.parametrize("name", ["sphere_mesh", "torus_mesh", "quad_mesh", "half_sphere_mesh"])
def test_bvh_matches_brute_force(name, request):
    mesh = request.getfixturevalue(name)
    rng = make_rng(3)
    origins = uniform_ball_sample(rng, 1.3, 10_000)
    dirs = uniform_dir_sample(rng, 10_000)
    t_bvh, f_bvh = intersect(build_bvh(mesh), origins, dirs)
    t_ref, f_ref = brute_force_intersect(mesh, origins, dirs)
    np.testing.assert_array_equal(t_bvh, t_ref)
    np.testing.assert_array_equal(f_bvh, f_ref)
    assert np.isfinite(t_bvh).any()


def test_bvh_leaves_partition_faces(torus_mesh):
    bvh = build_bvh(torus_mesh)
    leaves = bvh.leaves()
    assert all(len(leaf) <= 4 for leaf in leaves)
    np.testing.assert_array_equal(np.sort(np.concatenate(leaves)), np.arange(torus_mesh.n_faces))
    assert bvh.depth() > 1


def test_ray_cast_examples(exact_sphere, quad_mesh):
    out = exact_sphere.batch_query(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]))
    assert out.hit[0]
    assert 0.97 < out.depth[0] <= 1.0

    quad = ExactODF(quad_mesh)
    down = quad.batch_query(np.array([[0.0, 0.0, 1.0]]), np.array([[0.0, 0.0, -1.0]]))
    assert down.hit[0]
    assert down.depth[0] == pytest.approx(1.0, abs=1e-12)
    up = quad.batch_query(np.array([[0.0, 0.0, 1.0]]), np.array([[0.0, 0.0, 1.0]]))
    assert not up.hit[0]
    assert up.depth[0] == 0.5


def test_surface_origin_tolerances(quad_mesh):
    quad = ExactODF(quad_mesh)
    origin = np.zeros((1, 3))
    down = np.array([[0.0, 0.0, -1.0]])
    on_surface = quad.batch_query(origin, down)
    assert on_surface.hit[0] and on_surface.depth[0] == 0.0
    # labeling ignores hits closer than T_MIN
    assert not quad.label(origin, down).hit[0]
    assert T_MIN == 1e-6


def test_brute_force_ray_cast_on_empty_mesh():
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    out = brute_force_ray_cast(empty, np.zeros((2, 3)), np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    assert not out.hit.any()
    with pytest.raises(DataError):
        build_bvh(empty)


def test_recursive_property(torus_mesh):
    """Stepping part-way to the first hit shortens the remaining depth by exactly the step."""
    oracle = ExactODF(torus_mesh)
    rng = make_rng(8)
    origins = uniform_ball_sample(rng, 1.3, 5000)
    dirs = uniform_dir_sample(rng, 5000)
    out = oracle.batch_query(origins, dirs)
    hit = out.hit & (out.depth > 1e-3)
    o, d, depth = origins[hit], dirs[hit], out.depth[hit]
    step = rng.random(len(depth)) * depth * 0.999
    moved = oracle.batch_query(o + step[:, None] * d, d)
    assert moved.hit.all()
    np.testing.assert_allclose(moved.depth, depth - step, atol=1e-7)


def test_mesh_validation():
    with pytest.raises(DataError):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(DataError):
        TriMesh(np.full((3, 3), np.inf), np.array([[0, 1, 2]]))


def test_remove_degenerate_faces():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
    mesh = TriMesh(verts, np.array([[0, 1, 2], [0, 0, 1], [0, 1, 3]]))
    cleaned = remove_degenerate_faces(mesh)
    np.testing.assert_array_equal(cleaned.faces, [[0, 1, 2]])


def test_normalize_mesh_round_trip(torus_mesh):
    shifted = TriMesh(torus_mesh.vertices * 3.0 + np.array([1.0, -2.0, 0.5]), torus_mesh.faces)
    normalized, params = normalize_mesh(shifted)
    assert np.linalg.norm(normalized.vertices, axis=1).max() == pytest.approx(1.0)
    np.testing.assert_allclose(params.invert(normalized.vertices), shifted.vertices, atol=1e-12)
    np.testing.assert_allclose(params.apply(shifted.vertices), normalized.vertices, atol=1e-12)


def test_sample_surface_lies_on_mesh(sphere_mesh, rng):
    pts, faces = sample_surface(sphere_mesh, 2000, rng)
    assert pts.shape == (2000, 3)
    assert faces.min() >= 0 and faces.max() < sphere_mesh.n_faces
    r = np.linalg.norm(pts, axis=1)
    assert r.max() <= 1.0 + 1e-12
    assert r.min() > 0.98


def test_boundary_loops(sphere_mesh, torus_mesh, quad_mesh, half_sphere_mesh):
    assert boundary_loops(sphere_mesh) == 0
    assert boundary_loops(torus_mesh) == 0
    assert boundary_loops(quad_mesh) == 1
    assert boundary_loops(half_sphere_mesh) == 1
    assert len(boundary_edges(quad_mesh)) == 4


@pytest.mark.parametrize("suffix", [".obj", ".ply"])
def test_mesh_io(tmp_path, torus_mesh, suffix):
    path = tmp_path / f"torus{suffix}"
    _, params = normalize_mesh(torus_mesh)
    save_mesh(torus_mesh, path, normalization=params, meta={"source": "test"})
    loaded = load_mesh(path)
    assert loaded.n_faces == torus_mesh.n_faces
    assert loaded.face_areas().sum() == pytest.approx(torus_mesh.face_areas().sum(), rel=1e-6)
    assert load_normalization(path) == params


def test_load_mesh_errors(tmp_path):
    with pytest.raises(DataError):
        load_mesh(tmp_path / "missing.obj")
    with pytest.raises(DataError):
        save_mesh(TriMesh(np.zeros((3, 3)), [[0, 1, 2]]), tmp_path / "mesh.stl")


@pytest.mark.parametrize("suffix", [".npy", ".xyz", ".ply"])
def test_point_io(tmp_path, rng, suffix):
    pts = rng.random((50, 3))
    path = tmp_path / f"points{suffix}"
    save_points(pts, path)
    np.testing.assert_allclose(load_points(path), pts, atol=1e-6)


def test_load_points_errors(tmp_path):
    with pytest.raises(DataError):
        load_points(tmp_path / "nope.npy")
    bad = tmp_path / "bad.npy"
    np.save(bad, np.zeros((4, 2)))
    with pytest.raises(DataError):
        load_points(bad)
