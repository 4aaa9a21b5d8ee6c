import json

import numpy as np
import pytest
from PIL import Image

from posebench import frames as fr
from posebench import synth as sy
from posebench.frames import (
    DepthMap,
    Frame,
    InconsistentIntrinsics,
    MalformedPose,
    ManifestError,
    MissingDepth,
    MissingFile,
    SequenceManifest,
    center_depth,
    load_manifest,
    materialize,
    parse_pose_values,
    registered_profiles,
    write_manifest_json,
)
from posebench.geometry import Intrinsics, Pose, rotation_from_euler


def small_intrinsics(w=64, h=48):
    return Intrinsics(fx=50.0, fy=50.0, cx=w / 2, cy=h / 2, width=w, height=h)


class TestDepthMap:
    def test_metric_lookup(self):
        dm = DepthMap(values=np.full((4, 6), 5000, dtype=np.uint16), depth_scale=1000.0)
        assert dm.metric_at(3.0, 2.0) == pytest.approx(5.0)

    def test_zero_is_missing(self):
        values = np.full((4, 6), 100, dtype=np.uint16)
        values[2, 3] = 0
        dm = DepthMap(values=values, depth_scale=1000.0)
        with pytest.raises(MissingDepth):
            dm.metric_at(3.0, 2.0)

    def test_out_of_range_is_missing(self):
        dm = DepthMap(values=np.full((4, 6), 1, dtype=np.uint16), depth_scale=1.0)
        with pytest.raises(MissingDepth):
            dm.metric_at(100.0, 0.0)

    def test_center_depth_uniform(self):
        dm = DepthMap(values=np.full((48, 64), 10000, dtype=np.uint16), depth_scale=5000.0)
        frame = Frame(index=0, pose=Pose.identity(), depth=dm, depth_scale=5000.0)
        assert center_depth(frame) == pytest.approx(2.0)

    def test_center_depth_zero_center(self):
        values = np.full((48, 64), 10000, dtype=np.uint16)
        values[24, 32] = 0
        frame = Frame(
            index=0,
            pose=Pose.identity(),
            depth=DepthMap(values=values, depth_scale=5000.0),
        )
        with pytest.raises(MissingDepth):
            center_depth(frame)

    def test_no_depth_channel(self):
        frame = Frame(index=0, pose=Pose.identity())
        with pytest.raises(MissingDepth):
            center_depth(frame)


class TestPoseParsing:
    def test_exact_pose_untouched(self):
        r = rotation_from_euler(0.2, 0.3, -0.4)
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = [1.0, 2.0, 3.0]
        pose = parse_pose_values(m.reshape(-1))
        np.testing.assert_array_equal(pose.rotation, r)

    def test_reflection_rejected(self):
        m = np.diag([1.0, 1.0, -1.0, 1.0])
        with pytest.raises(MalformedPose):
            parse_pose_values(m.reshape(-1))

    def test_mild_drift_reorthonormalized(self):
        r = rotation_from_euler(0.1, 0.2, 0.3)
        r = r + 1e-5  # off-orthogonal but salvageable
        m = np.eye(4)
        m[:3, :3] = r
        pose = parse_pose_values(m.reshape(-1))
        np.testing.assert_allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-9)

    def test_heavy_drift_rejected(self):
        r = rotation_from_euler(0.1, 0.2, 0.3) + 2e-3
        m = np.eye(4)
        m[:3, :3] = r
        with pytest.raises(MalformedPose):
            parse_pose_values(m.reshape(-1))

    def test_bad_bottom_row(self):
        m = np.eye(4)
        m[3, 0] = 0.5
        with pytest.raises(MalformedPose):
            parse_pose_values(m.reshape(-1))

    def test_wrong_count(self):
        with pytest.raises(MalformedPose):
            parse_pose_values([1.0] * 15)


class TestManifestRoundTrip:
    def test_empty_manifest_valid(self, tmp_path):
        seq = SequenceManifest(sequence_id="empty", frames=())
        _, path = materialize(seq, tmp_path / "empty")
        loaded = load_manifest(path)
        assert len(loaded) == 0
        assert loaded.sequence_id == "empty"

    def test_synthetic_round_trip_lossless(self, tmp_path):
        spec = sy.TrajectorySpec(kind="orbit", frame_count=6, step_deg=2.0, sequence_id="rt")
        seq = sy.generate_orbit(spec)
        _, path = materialize(seq, tmp_path / "rt")
        loaded = load_manifest(path)
        assert len(loaded) == len(seq)
        for orig, back in zip(seq.frames, loaded.frames):
            np.testing.assert_allclose(back.pose.matrix(), orig.pose.matrix(), atol=1e-12)
            assert back.intrinsics == orig.intrinsics
            np.testing.assert_array_equal(
                fr.frame_depth_map(back).values, orig.depth.values
            )

    def test_two_loads_identical(self, tmp_path):
        spec = sy.TrajectorySpec(kind="orbit", frame_count=4, step_deg=2.0)
        _, path = materialize(sy.generate_orbit(spec), tmp_path / "det")
        a = load_manifest(path)
        b = load_manifest(path)
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa.pose.matrix(), fb.pose.matrix())

    def test_missing_referenced_file(self, tmp_path):
        spec = sy.TrajectorySpec(kind="orbit", frame_count=3, step_deg=2.0)
        _, path = materialize(sy.generate_orbit(spec), tmp_path / "gone")
        (tmp_path / "gone" / "depth" / "frame_000001.png").unlink()
        with pytest.raises(MissingFile):
            load_manifest(path)

    def test_malformed_pose_in_manifest(self, tmp_path):
        doc = {
            "sequence_id": "bad",
            "depth_scale": 1.0,
            "frames": [
                {
                    "index": 0,
                    "image": None,
                    "depth": None,
                    "intrinsics": None,
                    "pose": list(np.diag([1.0, 1.0, -1.0, 1.0]).reshape(-1)),
                }
            ],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(MalformedPose):
            load_manifest(path)

    def test_inconsistent_intrinsics_size(self, tmp_path):
        spec = sy.TrajectorySpec(kind="orbit", frame_count=3, step_deg=2.0)
        _, path = materialize(sy.generate_orbit(spec), tmp_path / "mix")
        doc = json.loads(path.read_text())
        doc["frames"][0]["intrinsics"]["width"] = 320
        doc["frames"][0]["intrinsics"]["cx"] = 160.0
        path.write_text(json.dumps(doc))
        with pytest.raises(InconsistentIntrinsics):
            load_manifest(path)

    def test_indices_strictly_increasing(self):
        frame = Frame(index=0, pose=Pose.identity())
        with pytest.raises(ManifestError):
            SequenceManifest(sequence_id="dup", frames=(frame, frame))

    def test_in_memory_depth_requires_materialize(self, tmp_path):
        spec = sy.TrajectorySpec(kind="orbit", frame_count=3, step_deg=2.0)
        seq = sy.generate_orbit(spec)
        with pytest.raises(ManifestError):
            write_manifest_json(seq, tmp_path / "m.json")


def _write_pose_txt(path, pose: Pose):
    values = " ".join(repr(float(x)) for x in pose.matrix().reshape(-1))
    path.write_text(values + "\n")


def _write_depth_png(path, shape=(48, 64), value=3000):
    arr = np.full(shape, value, dtype=np.uint16)
    Image.fromarray(arr).save(path)


def _write_rgb_png(path, size=(64, 48)):
    Image.new("RGB", size, (10, 20, 30)).save(path)


class TestProfiles:
    def test_registry(self):
        assert set(registered_profiles()) == {"manifest", "seven_scenes", "scannet", "posed_rgb"}

    def test_unknown_profile(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path, profile="nope")

    def test_seven_scenes_layout(self, tmp_path):
        seq_dir = tmp_path / "chess_seq01"
        seq_dir.mkdir()
        poses = [
            Pose.identity(),
            Pose(rotation_from_euler(0.0, 0.1, 0.0), np.array([0.1, 0.0, 0.0])),
        ]
        for i, pose in enumerate(poses):
            _write_pose_txt(seq_dir / f"frame-{i:06d}.pose.txt", pose)
            _write_rgb_png(seq_dir / f"frame-{i:06d}.color.png", size=(640, 480))
            _write_depth_png(seq_dir / f"frame-{i:06d}.depth.png", shape=(480, 640))
        seq = load_manifest(seq_dir, profile="seven_scenes")
        assert len(seq) == 2
        assert seq.depth_scale == 1000.0
        assert seq.frames[0].intrinsics.fx == 585.0
        assert center_depth(seq.frames[0]) == pytest.approx(3.0)
        np.testing.assert_allclose(seq.frames[1].pose.matrix(), poses[1].matrix(), atol=1e-12)

    def test_seven_scenes_override(self, tmp_path):
        seq_dir = tmp_path / "s"
        seq_dir.mkdir()
        _write_pose_txt(seq_dir / "frame-000000.pose.txt", Pose.identity())
        _write_rgb_png(seq_dir / "frame-000000.color.png")
        _write_depth_png(seq_dir / "frame-000000.depth.png")
        seq = load_manifest(seq_dir, profile="seven_scenes",
                            fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=64, height=48,
                            depth_scale=500.0)
        assert seq.frames[0].intrinsics.fx == 100.0
        assert seq.depth_scale == 500.0

    def test_seven_scenes_missing_depth_file(self, tmp_path):
        seq_dir = tmp_path / "s"
        seq_dir.mkdir()
        _write_pose_txt(seq_dir / "frame-000000.pose.txt", Pose.identity())
        _write_rgb_png(seq_dir / "frame-000000.color.png")
        with pytest.raises(MissingFile):
            load_manifest(seq_dir, profile="seven_scenes")

    def test_scannet_layout(self, tmp_path):
        root = tmp_path / "scene0000_00"
        for sub in ("pose", "depth", "color", "intrinsic"):
            (root / sub).mkdir(parents=True)
        k = np.eye(4)
        k[0, 0], k[1, 1], k[0, 2], k[1, 2] = 570.0, 570.0, 320.0, 240.0
        np.savetxt(root / "intrinsic" / "intrinsic_depth.txt", k)
        for i in range(3):
            _write_pose_txt(root / "pose" / f"{i}.txt", Pose.identity())
            _write_depth_png(root / "depth" / f"{i}.png", shape=(480, 640))
            _write_rgb_png(root / "color" / f"{i}.jpg", size=(640, 480))
        seq = load_manifest(root, profile="scannet")
        assert len(seq) == 3
        assert seq.frames[0].intrinsics.fx == 570.0
        assert seq.frames[0].intrinsics.width == 640

    def test_posed_rgb_layout(self, tmp_path):
        root = tmp_path / "clip"
        (root / "poses").mkdir(parents=True)
        (root / "images").mkdir()
        for i in range(4):
            _write_pose_txt(root / "poses" / f"{i:04d}.txt", Pose.identity())
            _write_rgb_png(root / "images" / f"{i:04d}.png")
        seq = load_manifest(root, profile="posed_rgb")
        assert len(seq) == 4
        assert seq.frames[0].intrinsics is None
        assert not seq.has_depth
        assert seq.frames[0].image_path is not None
