import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybrid_pinn.geometry import (Axis, Box, ChannelObstacle, CloudFormatError, ConstrictedTube, DesignSpace,
                                  DoETable, PointCloud, SamplingError, TwoSlab, heat_sink_space, load_cloud,
                                  make_shape, maximin_lhs, reference_doe, sample_domain, save_cloud,
                                  select_sparse_data, sparse_indices)

TRAINING_DOE = [
    (5, 19, 45), (3, 15, 30), (3, 15, 60), (3, 23, 30), (3, 23, 60), (7, 15, 30), (7, 15, 60),
    (7, 23, 30), (7, 23, 60), (5.03, 15.3, 59), (3.01, 18.4, 45.55), (6.94, 19.4, 36.05), (6.53, 22.6, 51),
]
TESTING_DOE = [(6, 20, 47.5), (4, 17, 40), (6.5, 22, 55), (3.5, 19, 50)]


def _cloud_with_fields(n=50, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(n, 2))
    return PointCloud(pts, np.array(["interior"] * n, dtype=object),
                      {"u": rng.normal(size=n), "p": np.where(rng.random(n) < 0.2, np.nan, rng.normal(size=n))})


def test_cloud_roundtrip(tmp_path):
    cloud = sample_domain(Box([0, 0], [1, 2]), 30, {"xmin": 5, "ymax": 4}, seed=1)
    cloud = PointCloud(cloud.points, cloud.tags, {"T": np.sin(cloud.points[:, 0] * 7.1)}, cloud.normals)
    save_cloud(cloud, tmp_path / "c.csv")
    back = load_cloud(tmp_path / "c.csv")
    assert back.equals(cloud)
    assert np.array_equal(back.points, cloud.points)


def test_cloud_roundtrip_with_missing_values(tmp_path):
    cloud = _cloud_with_fields()
    save_cloud(cloud, tmp_path / "c.csv")
    assert load_cloud(tmp_path / "c.csv").equals(cloud)


def test_missing_x_column(tmp_path):
    (tmp_path / "c.csv").write_text("y,tag\n0.5,interior\n")
    with pytest.raises(CloudFormatError, match="'x'"):
        load_cloud(tmp_path / "c.csv")


def test_non_unit_normal_rejected(tmp_path):
    (tmp_path / "c.csv").write_text("x,y,tag,nx,ny\n0,0.5,boundary:wall,0.6,0.6\n")
    with pytest.raises(CloudFormatError, match="row 2"):
        load_cloud(tmp_path / "c.csv")


@pytest.mark.parametrize("text,msg", [
    ("x,y,tag,q\n0,0,interior,1\n", "unknown column"),
    ("x,y,tag\n0,0\n", "row 2"),
    ("x,y,tag\n0,inf,interior\n", "non-finite"),
    ("x,y,tag\n0,abc,interior\n", "row 2"),
])
def test_malformed_clouds(tmp_path, text, msg):
    (tmp_path / "c.csv").write_text(text)
    with pytest.raises(CloudFormatError, match=msg):
        load_cloud(tmp_path / "c.csv")


def test_one_dimensional_cloud(tmp_path):
    (tmp_path / "c.csv").write_text("x,tag,T\n0.25,interior:slab1,1\n0.75,interior:slab2,\n")
    c = load_cloud(tmp_path / "c.csv")
    assert c.dim == 1 and np.isnan(c.field("T")[1])


def test_unit_box_interior():
    cloud = sample_domain(Box([0, 0, 0], [1, 1, 1]), 1000, {"xmin": 10}, seed=3)
    inner = cloud.points[cloud.mask("interior")]
    assert len(inner) == 1000 and np.all((inner > 0) & (inner < 1))


def test_boundary_points_on_faces_with_unit_normals():
    box = Box([0, -1], [2, 1])
    cloud = sample_domain(box, 10, {f: 20 for f in box.faces}, seed=0)
    for face, axis, val in (("xmin", 0, 0.0), ("xmax", 0, 2.0), ("ymin", 1, -1.0), ("ymax", 1, 1.0)):
        m = cloud.mask(f"boundary:{face}")
        assert np.all(cloud.points[m, axis] == val)
    nrm = cloud.normals[~cloud.mask("interior")]
    assert np.allclose(np.linalg.norm(nrm, axis=1), 1.0)


def test_same_seed_same_cloud():
    shape = ChannelObstacle()
    a = sample_domain(shape, 200, {"inlet": 10, "obstacle": 10}, seed=4, refine_fraction=0.3)
    b = sample_domain(shape, 200, {"inlet": 10, "obstacle": 10}, seed=4, refine_fraction=0.3)
    assert a.equals(b)
    c = sample_domain(shape, 200, {"inlet": 10, "obstacle": 10}, seed=5, refine_fraction=0.3)
    assert not a.equals(c)


def test_channel_excludes_obstacle():
    shape = ChannelObstacle()
    cloud = sample_domain(shape, 500, {"walls": 5}, seed=0)
    x = cloud.points[cloud.mask("interior")]
    lo, hi = np.array(shape.obstacle_lo), np.array(shape.obstacle_hi)
    assert not np.any(np.all((x > lo) & (x < hi), axis=1))


def test_refinement_band():
    box = Box([0, 0], [1, 1])
    cloud = sample_domain(box, 1000, {"xmin": 1}, seed=0, refine_fraction=0.5, refine_band=0.02)
    d = -box.sdf(cloud.points[cloud.mask("interior")])
    assert np.mean(d < 0.02) > 0.5


def test_tube_throat_ratio():
    tube = ConstrictedTube(radius=0.2, area_ratio=0.36)
    assert tube.throat_radius == pytest.approx(0.6 * 0.2, rel=1e-12)
    assert tube.radius_at(np.array([0.0]))[0] == 0.2


def test_tube_rings():
    tube = ConstrictedTube()
    pts = tube.rings([0.2, 0.5], [0.25, 0.5], 8)
    assert pts.shape == (32, 3)
    assert np.all(tube.inside(pts))


def test_two_slab_regions():
    cloud = sample_domain(TwoSlab(), 100, {"left": 1, "right": 1}, seed=0, n_interface=2)
    x = cloud.points[:, 0]
    assert np.all(x[cloud.mask("interior:slab1")] < 0.5)
    assert np.all(x[cloud.mask("interior:slab2")] > 0.5)
    assert cloud.mask("interface:iface").sum() == 2


def test_unsatisfiable_sampling_reports_rate():
    # the obstacle fills all but a sliver of the channel
    shape = ChannelObstacle(obstacle_lo=[0.0, 0.0], obstacle_hi=[2.0, 0.9999])
    with pytest.raises(SamplingError, match="rate"):
        sample_domain(shape, 100, {"inlet": 1}, max_attempts=1000)


def test_bad_shapes():
    with pytest.raises(ValueError):
        Box([0, 0], [0, 1])
    with pytest.raises(ValueError):
        make_shape({"kind": "sphere"})
    with pytest.raises(ValueError):
        sample_domain(Box([0], [1]), 0, {"xmin": 1})


@pytest.mark.parametrize("shape,faces", [
    (Box([0, 0, 0], [1, 2, 0.5]), None),
    (ChannelObstacle(), None),
    (ConstrictedTube(), ("wall", "inlet")),
])
def test_sdf_normals_agree(shape, faces):
    rng = np.random.default_rng(0)
    h = 1e-6
    for face in faces or shape.faces:
        x, nrm = shape.sample_face(face, 40, rng)
        g = np.empty_like(x)
        for k in range(shape.dim):
            e = np.zeros(shape.dim)
            e[k] = h
            g[:, k] = (shape.sdf(x + e) - shape.sdf(x - e)) / (2 * h)
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        # points landing within h of an edge have an ambiguous gradient
        ok = np.isfinite(g).all(axis=1)
        assert np.max(np.abs(g[ok] - nrm[ok])) < 1e-3, face


def test_sparse_sizes():
    assert len(sparse_indices(230_000, 0.01)) == 2300
    assert len(sparse_indices(10_000, 0.002)) == 20
    assert np.array_equal(sparse_indices(37, 1.0), np.arange(37))
    with pytest.raises(ValueError):
        sparse_indices(10, 0.01)
    with pytest.raises(ValueError):
        sparse_indices(10, 1.5)


def test_sparse_subset_and_complement():
    cloud = _cloud_with_fields(200)
    sub = select_sparse_data(cloud, 0.1, seed=3)
    idx = sparse_indices(200, 0.1, seed=3)
    comp = np.setdiff1d(np.arange(200), idx)
    assert len(np.intersect1d(idx, comp)) == 0
    assert len(idx) + len(comp) == 200
    assert set(sub.tags) == {"data"}
    assert np.array_equal(sub.points, cloud.points[idx])
    assert select_sparse_data(cloud, 0.1, seed=3).equals(sub)


def test_sparse_needs_solution_columns():
    cloud = PointCloud(np.zeros((3, 2)), np.array(["interior"] * 3, dtype=object))
    with pytest.raises(ValueError):
        select_sparse_data(cloud, 1.0)


def _stratified(values, lo, hi, n):
    t = (values - lo) / (hi - lo)
    return sorted(np.minimum(np.floor(t * n), n - 1).astype(int).tolist()) == list(range(n))


def test_lhs_two_points():
    space = DesignSpace([Axis("a", 0, 1), Axis("b", 0, 1)])
    t = maximin_lhs(space, 2, seed=0, iterations=10).values
    for j in range(2):
        assert sorted((t[:, j] >= 0.5).tolist()) == [False, True]


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 15), st.integers(0, 1000))
def test_lhs_stratified_and_maximin_monotone(n, seed):
    space = heat_sink_space()
    table, trace = maximin_lhs(space, n, seed=seed, iterations=200, return_trace=True)
    for j, a in enumerate(space.axes):
        assert _stratified(table.values[:, j], a.lo, a.hi, n)
    assert np.all(np.diff(trace) >= 0)


def test_lhs_deterministic(tmp_path):
    a = maximin_lhs(heat_sink_space(), 13, seed=2, iterations=300)
    b = maximin_lhs(heat_sink_space(), 13, seed=2, iterations=300)
    assert a.values.tobytes() == b.values.tobytes()
    a.save(tmp_path / "d.csv")
    assert DoETable.load(tmp_path / "d.csv").values.tobytes() == a.values.tobytes()


def test_reference_doe_tables():
    train = reference_doe("training")
    assert train.names == ["inflow_velocity", "fin_height", "power"]
    assert np.array_equal(train.values, np.array(TRAINING_DOE, dtype=float))
    assert np.array_equal(reference_doe("testing").values, np.array(TESTING_DOE, dtype=float))


def test_design_space_validation():
    with pytest.raises(ValueError):
        DesignSpace([Axis("a", 1, 0)])
    with pytest.raises(ValueError):
        DesignSpace([Axis("a", 0, 1), Axis("a", 0, 2)])
    with pytest.raises(ValueError):
        maximin_lhs(heat_sink_space(), 1)
