import numpy as np
import pytest

from semtrack.errors import CalibrationError, ConfigError, DimensionError, FormatError, \
    GridSpecError
from semtrack.kitti_io import default_calibration, read_calibration
from semtrack.voxelizer import (Calibration, GridSpec, PointCloud, SemanticMap, VoxelGrid,
                                paint_semantics, project_to_image, voxelize)

from oracles import brute_force_bins


def random_cloud(rng, n, spec=GridSpec()):
    lo, hi = np.array(spec.roi_min), np.array(spec.roi_max)
    xyz = rng.uniform(lo - 2, hi + 2, (n, 3))
    return PointCloud(np.column_stack([xyz, rng.uniform(0, 1, n)]))


def test_default_grid_geometry():
    spec = GridSpec()
    assert spec.dims == (768, 1024, 21)
    np.testing.assert_allclose(spec.cell_size, [0.078125, 0.078125, 4 / 21])
    np.testing.assert_allclose(spec.cell_size, [0.078, 0.078, 0.190], rtol=0.02)


@pytest.mark.parametrize("kw", [
    {"dims": (0, 1, 1)}, {"dims": (1.5, 2, 2)}, {"roi_min": (0, 0, 0), "roi_max": (1, 0, 1)},
    {"dims": (1, 1)},
])
def test_bad_grid_spec(kw):
    with pytest.raises(GridSpecError):
        GridSpec(**kw)


def test_cell_index_edges():
    spec = GridSpec((0, 0, 0), (4, 4, 4), (4, 4, 4))
    idx = spec.cell_index(np.array([[0, 0, 0], [0.999, 1.0, 3.999], [4, 4, 4]]))
    assert idx.tolist() == [[0, 0, 0], [0, 1, 3], [3, 3, 3]]


@pytest.mark.parametrize("mode", ["occupancy", "intensity", "semantic"])
def test_voxelize_matches_brute_force(rng, mode):
    spec = GridSpec((0, -4, -2), (6, 4, 1), (30, 40, 6))
    cloud = random_cloud(rng, 3000, spec)
    labels = rng.integers(-1, 5, len(cloud))
    grid = voxelize(cloud, labels, spec, mode, num_classes=5)
    ref = brute_force_bins(cloud.points, labels, spec, mode, num_classes=5)
    np.testing.assert_allclose(grid.values, ref, atol=1e-6)


def test_semantic_tie_breaks_to_smallest_class():
    spec = GridSpec((0, 0, 0), (1, 1, 1), (1, 1, 1))
    cloud = PointCloud(np.full((4, 4), 0.5))
    grid = voxelize(cloud, np.array([3, 1, 3, 1]), spec, "semantic", num_classes=5)
    assert grid.values[0, 0, 0] == pytest.approx(1.25)


def test_semantic_unlabeled_cells():
    spec = GridSpec((0, 0, 0), (2, 1, 1), (2, 1, 1))
    cloud = PointCloud(np.array([[0.5, 0.5, 0.5, 0], [1.5, 0.5, 0.5, 0]]))
    labels = np.array([-1, 0])
    assert voxelize(cloud, labels, spec, "semantic").values.ravel().tolist() == [0.0, 1.0]
    grid = voxelize(cloud, labels, spec, "semantic", unlabeled_as_occupied=True)
    assert grid.values.ravel().tolist() == [1.0, 1.0]


def test_semantic_errors():
    spec = GridSpec((0, 0, 0), (1, 1, 1), (1, 1, 1))
    cloud = PointCloud(np.full((2, 4), 0.5))
    with pytest.raises(ConfigError):
        voxelize(cloud, None, spec, "semantic")
    with pytest.raises(DimensionError):
        voxelize(cloud, np.array([0]), spec, "semantic")
    with pytest.raises(DimensionError):
        voxelize(cloud, np.array([0, 19]), spec, "semantic")
    with pytest.raises(ConfigError):
        voxelize(cloud, None, spec, "heights")


def test_empty_and_out_of_roi():
    assert not voxelize(PointCloud(np.zeros((0, 4)))).values.any()
    far = PointCloud(np.array([[100.0, 0, 0, 1], [-1, 0, 0, 1]]))
    assert not voxelize(far).values.any()


def test_svxl_round_trip(rng):
    spec = GridSpec((0, 0, 0), (3, 2, 1), (6, 4, 3))
    grid = voxelize(random_cloud(rng, 500, spec), None, spec, "intensity")
    data = grid.to_bytes()
    assert data[:4] == b"SVXL" and len(data) == 32 + 4 * 6 * 4 * 3
    # header fields, decoded by hand
    assert int.from_bytes(data[4:8], "little") == 1
    assert [int.from_bytes(data[8 + 4 * i:12 + 4 * i], "little") for i in range(3)] == [6, 4, 3]
    assert data[20] == 1
    back = VoxelGrid.from_bytes(data, spec)
    assert back.mode == "intensity"
    np.testing.assert_array_equal(back.values, grid.values)


@pytest.mark.parametrize("mutate, offset", [
    (lambda d: d[:10], 10),
    (lambda d: b"XVXL" + d[4:], 0),
    (lambda d: d[:4] + (2).to_bytes(4, "little") + d[8:], 4),
    (lambda d: d[:20] + b"\x07" + d[21:], 20),
    (lambda d: d[:-4], None),
])
def test_svxl_malformed(mutate, offset):
    data = VoxelGrid(GridSpec(dims=(2, 2, 2)), "occupancy", np.zeros((2, 2, 2))).to_bytes()
    with pytest.raises(FormatError) as err:
        VoxelGrid.from_bytes(mutate(data))
    if offset is not None:
        assert err.value.offset == offset


# --------------------------------------------------------- calibration

def test_calibration_validation():
    with pytest.raises(CalibrationError):
        Calibration(np.zeros((3, 4)))
    bad = np.eye(4)[:3].copy()
    bad[0, 0] = 2.0
    with pytest.raises(CalibrationError):
        Calibration(np.eye(4)[:3], lidar_to_cam=bad)
    with pytest.raises(CalibrationError):
        Calibration(np.eye(4)[:3], rectification=np.diag([1, 1, 0.5]))


def test_projection_matches_matrix_chain(fixtures):
    calib = read_calibration((fixtures / "calib_kitti.txt").read_text())
    # independent chain written out with explicit 4x4 homogeneous matrices
    P2 = np.array([[707.0493, 0, 604.0814, 45.75831],
                   [0, 707.0493, 180.5066, -0.3454157],
                   [0, 0, 1, 0.004981016]])
    R0 = np.eye(4)
    R0[:3, :3] = [[0.9999128, 0.01009263, -0.008511932],
                  [-0.01012729, 0.9999406, -0.004037671],
                  [0.008470675, 0.004123522, 0.9999556]]
    Tr = np.eye(4)
    Tr[:3] = [[0.006927964, -0.9999722, -0.002757829, -0.02457729],
              [-0.001162982, 0.002749836, -0.9999955, -0.06127237],
              [0.9999753, 0.006931141, -0.001143899, -0.3321029]]
    pts = np.array([[10.0, 1.0, -0.5, 0.3], [25.0, -4.0, 0.2, 0.9], [5.0, 0.0, -1.7, 0.1]])
    hom = P2 @ R0 @ Tr @ np.column_stack([pts[:, :3], np.ones(3)]).T
    expected = (hom[:2] / hom[2]).T
    uv, in_view = project_to_image(PointCloud(pts), calib, (1242, 375))
    np.testing.assert_allclose(uv, expected, atol=1e-9)
    px = np.floor(expected + 0.5)
    visible = (px[:, 0] >= 0) & (px[:, 0] < 1242) & (px[:, 1] >= 0) & (px[:, 1] < 375)
    assert in_view.tolist() == visible.tolist() == [True, True, False]


def test_rect_round_trip(fixtures, rng):
    calib = read_calibration((fixtures / "calib_kitti.txt").read_text())
    xyz = rng.uniform(-20, 20, (50, 3))
    np.testing.assert_allclose(calib.rect_to_lidar(calib.lidar_to_rect(xyz)), xyz, atol=1e-9)


def test_points_behind_camera_not_in_view():
    calib = default_calibration()
    cloud = PointCloud(np.array([[-5.0, 0, 0, 0], [5.0, 0, 0, 0], [5.0, 50.0, 0, 0]]))
    uv, in_view = project_to_image(cloud, calib)
    assert in_view.tolist() == [False, True, False]
    assert np.isnan(uv[0]).all()


def test_paint_semantics_identity_camera():
    # identity chain: pixel = (x/z, y/z); pick points landing on known pixels
    calib = Calibration(np.eye(4)[:3])
    classes = np.arange(12, dtype=np.int64).reshape(3, 4) % 19
    sem = SemanticMap(classes)
    pts = np.array([[2.0, 1.0, 1.0, 0], [0.0, 0.0, 2.0, 0], [3.4, 2.4, 1.0, 0],
                    [4.0, 0.0, 1.0, 0], [1.5, 0.5, 1.0, 0], [0, 0, -1, 0]])
    labels = paint_semantics(PointCloud(pts), sem, calib)
    # (2,1) -> row 1 col 2; (0,0); (3.4,2.4) rounds to (3,2); col 4 outside;
    # (1.5,0.5) rounds half up to (2,1); behind the camera -> -1
    assert labels.tolist() == [6, 0, 11, -1, 6, -1]


def test_paint_semantics_size_mismatch():
    calib = default_calibration()
    with pytest.raises(DimensionError):
        paint_semantics(PointCloud(np.zeros((1, 4))), SemanticMap(np.zeros((10, 10), int)), calib)


def test_semantic_values_in_unit_band(rng):
    calib = default_calibration()
    sem = SemanticMap(rng.integers(0, 19, (375, 1242)))
    cloud = random_cloud(rng, 10_000)
    grid = voxelize(cloud, paint_semantics(cloud, sem, calib), mode="semantic")
    occupied = grid.values[grid.values > 0]
    assert occupied.size > 0
    assert occupied.min() >= 1.0 and occupied.max() <= 2.0
