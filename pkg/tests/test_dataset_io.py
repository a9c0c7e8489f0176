import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusiondet.calib_geometry import (
    CameraIntrinsics,
    Extrinsics,
    in_front,
    project_points,
    transform_to_camera_frame,
)
from fusiondet.dataset_io.depth_png import decode_depth, depth_png_bytes, encode_depth, read_depth_png
from fusiondet.dataset_io.kitti import (
    format_calibration,
    format_labels,
    read_calibration,
    read_labels,
    read_point_cloud,
    write_point_cloud,
)
from fusiondet.dataset_io.split import SplitSpec, apply_split
from fusiondet.dataset_io.store import read_dataset, read_manifest, read_metadata, write_frame, write_metadata
from fusiondet.dataset_io.synthetic import SyntheticSceneSpec, generate_frames, generate_synthetic_scene
from fusiondet.detect_eval.boxes import IGNORE, BBox
from fusiondet.errors import (
    DataError,
    MalformedLine,
    MalformedMatrix,
    MissingKey,
    SplitOverflow,
    TruncatedRecord,
)
from fusiondet.lidar_repr import SENTINEL, build_sparse_depth
from helpers import random_rotation

# typical values of a KITTI object-detection calibration file
KITTI_CALIB = """\
P0: 7.215377e+02 0.0 6.095593e+02 0.0 0.0 7.215377e+02 1.728540e+02 0.0 0.0 0.0 1.0 0.0
P2: 7.215377e+02 0.0 6.095593e+02 4.485728e+01 0.0 7.215377e+02 1.728540e+02 2.163791e-01 0.0 0.0 1.0 2.745884e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
"""


# ---------------------------------------------------------------- point clouds

def test_point_cloud_empty_and_single():
    assert len(read_point_cloud(b"")) == 0
    scan = read_point_cloud(struct.pack("<4f", 1, 2, 3, 0.5))
    np.testing.assert_array_equal(scan.points, [[1, 2, 3]])
    assert scan.intensity[0] == np.float32(0.5)


def test_point_cloud_truncated():
    with pytest.raises(TruncatedRecord, match="byte 16"):
        read_point_cloud(b"\0" * 20)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 50), st.integers(0, 2**31))
def test_point_cloud_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)).astype(np.float32).astype(np.float64)
    inten = rng.random(n).astype(np.float32)
    scan = read_point_cloud(write_point_cloud(pts, inten))
    np.testing.assert_array_equal(scan.points, pts)
    np.testing.assert_array_equal(scan.intensity, inten)


# ---------------------------------------------------------------- calibration

def test_calibration_known_intrinsics():
    intr, ext = read_calibration(KITTI_CALIB)
    assert intr.fx == pytest.approx(721.5377) and intr.ox == pytest.approx(609.5593)
    assert (intr.width, intr.height) == (1242, 375)
    assert intr.kappa == (0.0,) * 5


def test_calibration_roundtrip_identity_rectification(rng):
    intr = CameraIntrinsics(180, 175, 160, 48, 320, 96, skew=0.3, kappa=(0.1, -0.01, 0.001, 0.0005, -0.0005))
    ext = Extrinsics(random_rotation(rng), rng.normal(size=3))
    intr2, ext2 = read_calibration(format_calibration(intr, ext))
    np.testing.assert_allclose(ext2.rotation, ext.rotation, atol=1e-12)
    np.testing.assert_allclose(ext2.translation, ext.translation, atol=1e-12)
    np.testing.assert_allclose(intr2.matrix, intr.matrix)
    assert intr2.kappa == pytest.approx(intr.kappa) and (intr2.width, intr2.height) == (320, 96)


def test_kitti_points_land_in_image(rng):
    intr, ext = read_calibration(KITTI_CALIB)
    n = 5000
    dist = rng.uniform(4, 70, n)
    az = np.radians(rng.uniform(-38, 38, n))
    el = np.radians(rng.uniform(-12, 8, n))
    cloud = np.stack([dist * np.cos(el) * np.cos(az), dist * np.cos(el) * np.sin(az), dist * np.sin(el)], 1)
    cam = transform_to_camera_frame(cloud, ext)
    assert in_front(cam).all()
    uv = project_points(cam, intr)
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < intr.width) & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height)
    assert inside.mean() >= 0.95
    # lidar x points forward, y left: a point to the left lands left of the centre
    left = project_points(transform_to_camera_frame(np.array([[20.0, 5.0, 0.0]]), ext), intr)[0]
    assert left[0] < intr.ox


def test_calibration_errors():
    with pytest.raises(MissingKey):
        read_calibration(KITTI_CALIB.replace("R0_rect", "R9_rect"))
    with pytest.raises(MalformedMatrix):
        read_calibration(KITTI_CALIB.replace("P2: 7.215377e+02", "P2:"))
    with pytest.raises(MalformedMatrix, match="line 1"):
        read_calibration("garbage line\n" + KITTI_CALIB)
    with pytest.raises(MalformedMatrix):
        read_calibration(KITTI_CALIB.replace("P2: 7.215377e+02", "P2: abc"))


# ---------------------------------------------------------------- labels

def test_labels_examples():
    assert read_labels("") == []
    (car,) = read_labels("Car 0 0 0 10 20 110 220 1.5 1.6 3.9 1.0 1.5 20.0 0.1\n")
    assert (car.x1, car.y1, car.x2, car.y2, car.cls) == (10, 20, 110, 220, 0)
    (dc,) = read_labels("DontCare -1 -1 -10 500 150 530 170 -1 -1 -1 -1000 -1000 -1000 -10\n")
    assert dc.cls == IGNORE
    (misc,) = read_labels("Misc 0 0 0 1 2 3 4 1 1 1 1 1 1 0\n")
    assert misc.cls == IGNORE


def test_labels_errors_report_line():
    good = "Car 0 0 0 10 20 110 220 1.5 1.6 3.9 1.0 1.5 20.0 0.1\n"
    with pytest.raises(MalformedLine) as exc:
        read_labels(good + "Car 0 0 0 10 20\n")
    assert exc.value.line_no == 2
    with pytest.raises(MalformedLine, match="line 1"):
        read_labels("Car 0 0 0 x 20 110 220 1.5 1.6 3.9 1.0 1.5 20.0 0.1\n")
    with pytest.raises(MalformedLine):
        read_labels("Car 0 0 0 110 20 10 220 1.5 1.6 3.9 1.0 1.5 20.0 0.1\n")


def test_labels_roundtrip():
    boxes = [BBox(1.5, 2.25, 30, 40, 3), BBox(0, 0, 5, 5, IGNORE), BBox(7, 8, 9, 10, 5)]
    assert read_labels(format_labels(boxes)) == boxes


# ---------------------------------------------------------------- split

def test_split_defaults():
    test, train, val = apply_split(range(7481))
    assert (len(test), len(train), len(val)) == (500, 6500, 481)
    assert test[0] == 0 and train[0] == 500 and val[0] == 7000


def test_split_small_and_overflow():
    assert tuple(map(len, apply_split(range(10), SplitSpec(2, 5)))) == (2, 5, 3)
    with pytest.raises(SplitOverflow):
        apply_split(range(10), SplitSpec(5, 6))


@given(st.integers(0, 200), st.integers(0, 200), st.integers(0, 200))
def test_split_is_partition(n, a, b):
    if a + b > n:
        return
    parts = apply_split(range(n), SplitSpec(a, b))
    assert [x for p in parts for x in p] == list(range(n))


# ---------------------------------------------------------------- depth png

def test_depth_png_examples():
    assert np.all(encode_depth(np.full((3, 4), SENTINEL)) == 0)
    assert encode_depth(np.array([[10.0]]))[0, 0] == 2560
    assert encode_depth(np.array([[1e-5, 1e6]])).tolist() == [[1, 65535]]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_depth_png_roundtrip(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 200, (7, 9)).astype(np.float32)
    d[rng.random(d.shape) < 0.3] = SENTINEL
    back = read_depth_png(depth_png_bytes(d))
    finite = np.isfinite(d)
    assert np.array_equal(np.isfinite(back), finite)
    assert np.all(np.abs(back[finite] - d[finite]) <= 1 / 256)
    assert np.array_equal(decode_depth(encode_depth(back)), back)


# ---------------------------------------------------------------- synthetic scenes

def test_synthetic_zero_objects():
    f = generate_synthetic_scene(SyntheticSceneSpec(object_count=(0, 0)), 0)
    assert f.boxes == []
    assert np.isinf(f.depth[: f.intr.height // 2]).all()


def test_synthetic_single_object_depth():
    spec = SyntheticSceneSpec(seed=5, object_count=(1, 1), depth_range=(10.0, 10.0))
    f = generate_synthetic_scene(spec, 3)
    (b,) = f.boxes
    assert np.all(f.depth[int(b.y1):int(b.y2), int(b.x1):int(b.x2)] == 10.0)


@pytest.mark.parametrize("kappa", [(0.0,) * 5, (0.05, -0.01, 0.0, 0.001, -0.001)])
def test_synthetic_point_set_reprojects_to_sparse(kappa):
    spec = SyntheticSceneSpec(seed=2, kappa=kappa)
    for i in range(3):
        f = generate_synthetic_scene(spec, i)
        assert np.array_equal(build_sparse_depth(f.cloud, f.intr, f.ext), f.sparse)
        finite = np.isfinite(f.sparse)
        assert np.array_equal(f.sparse[finite], f.depth[finite])


def test_synthetic_deterministic_and_in_bounds():
    spec = SyntheticSceneSpec(seed=9, color_jitter=0.5)
    a, b = generate_synthetic_scene(spec, 4), generate_synthetic_scene(spec, 4)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.cloud, b.cloud) and a.boxes == b.boxes
    for i in range(20):
        for box in generate_synthetic_scene(spec, i).boxes:
            assert 0 <= box.x1 < box.x2 <= spec.width and 0 <= box.y1 < box.y2 <= spec.height
    assert not np.array_equal(generate_synthetic_scene(spec, 5).rgb, a.rgb)


def test_synthetic_nearer_objects_are_brighter():
    spec = SyntheticSceneSpec(seed=1, object_count=(1, 1), noise=0.0)
    f = generate_synthetic_scene(spec, 0)
    near = generate_synthetic_scene(SyntheticSceneSpec(seed=1, object_count=(1, 1), noise=0.0,
                                                       depth_range=(8.0, 8.0)), 0)
    b = f.boxes[0]
    sl = (slice(int(b.y1), int(b.y2)), slice(int(b.x1), int(b.x2)))
    assert near.rgb[sl].astype(int).sum() >= f.rgb[sl].astype(int).sum()


def test_synthetic_representations():
    f = generate_synthetic_scene(SyntheticSceneSpec(), 0)
    assert f.representation("sparse").shape == (64, 192)
    assert f.representation("dense").shape == (64, 192)
    assert f.representation("range").shape == (32, 128)
    with pytest.raises(ValueError):
        f.representation("voxel")
    with pytest.raises(ValueError):
        SyntheticSceneSpec(color_jitter=1.5)


# ---------------------------------------------------------------- dataset directories

def test_store_roundtrip(tmp_path):
    frames = generate_frames(SyntheticSceneSpec(seed=4), 3, kind="sparse")
    for f in frames:
        write_frame(tmp_path, f)
    write_metadata(tmp_path, {"representation": "sparse"}, [{"index": i, "frame_id": f.frame_id}
                                                            for i, f in enumerate(frames)])
    assert read_metadata(tmp_path)["representation"] == "sparse"
    back = read_dataset(tmp_path)
    for a, b in zip(frames, back):
        assert np.array_equal(a.rgb, b.rgb) and a.boxes == b.boxes
        fin = np.isfinite(a.depth)
        assert np.array_equal(np.isfinite(b.depth), fin)
        assert np.all(np.abs(a.depth[fin] - b.depth[fin]) <= 1 / 256)


def test_store_errors(tmp_path):
    with pytest.raises(DataError):
        read_metadata(tmp_path)
    with pytest.raises(MissingKey):
        read_manifest(tmp_path)
    (tmp_path / "manifest.jsonl").write_text('{"frame_id": "000000"}\n{oops\n')
    with pytest.raises(DataError, match="line 2"):
        read_manifest(tmp_path)
    (tmp_path / "manifest.jsonl").write_text('{"frame_id": "000000"}\n')
    with pytest.raises(DataError, match="missing file"):
        read_dataset(tmp_path)


def test_calibration_rejects_non_rotation():
    bad = KITTI_CALIB.replace("Tr_velo_to_cam: 7.533745e-03", "Tr_velo_to_cam: 5.0")
    with pytest.raises(MalformedMatrix, match="orthonormal"):
        read_calibration(bad)
