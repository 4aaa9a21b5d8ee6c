"""Posed RGB-D sequence model, manifest IO, and dataset profiles.

A sequence is described by a single JSON manifest:

    {
      "sequence_id": "chess_seq01",
      "profile": "seven_scenes",
      "depth_scale": 1000.0,
      "frames": [
        {
          "index": 0,
          "image": "images/frame_000000.png",
          "depth": "depth/frame_000000.png",           # or null
          "intrinsics": {"fx": ..., "fy": ..., "cx": ..., "cy": ...,
                          "width": ..., "height": ...},  # or null
          "pose": [r11, r12, r13, tx, ..., 0, 0, 0, 1]   # 16 row-major
        },
        ...
      ]
    }

Paths are resolved relative to the manifest file.  Depth images are
single-channel 16-bit; a raw value of 0 marks missing depth, and metric
depth is ``raw / depth_scale``.  Pose text files used by dataset profiles
hold 16 whitespace-separated decimals, row-major.

Dataset profiles are thin adapters that walk a native on-disk layout and
emit the same in-memory structure, so downstream stages never care where
a sequence came from.
"""

from __future__ import annotations

import io
import json
import os
import re
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import GeometryError, Intrinsics, Pose

__all__ = [
    "ManifestError",
    "MissingFile",
    "MalformedPose",
    "InconsistentIntrinsics",
    "MissingDepth",
    "DepthMap",
    "Frame",
    "SequenceManifest",
    "center_depth",
    "frame_depth_map",
    "load_manifest",
    "write_manifest_json",
    "materialize",
    "load_depth_image",
    "parse_pose_values",
    "registered_profiles",
    "atomic_write_bytes",
    "atomic_write_text",
]

# Rotation drift (max |R^T R - I| element) beyond which a stored pose is junk.
POSE_DRIFT_REJECT = 1e-3


class ManifestError(Exception):
    """Base class for sequence-loading failures."""


class MissingFile(ManifestError):
    """A file referenced by a manifest or profile layout does not exist."""


class MalformedPose(ManifestError):
    """Stored pose is not a usable rigid transform."""


class InconsistentIntrinsics(ManifestError):
    """Intrinsics are invalid or disagree with the images they describe."""


class MissingDepth(ManifestError):
    """Depth is unavailable or invalid where it is required."""


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Raw 16-bit depth image; metric depth is ``values / depth_scale``."""

    values: np.ndarray  # (H, W) uint16, 0 = invalid
    depth_scale: float  # raw units per metric unit

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise MissingDepth(f"depth map must be 2-D, got shape {v.shape}")
        if v.dtype != np.uint16:
            if not np.issubdtype(v.dtype, np.integer):
                raise MissingDepth(f"depth values must be raw integers, got dtype {v.dtype}")
            if np.any(v < 0) or np.any(v > 65535):
                raise MissingDepth("depth values out of 16-bit range")
            v = v.astype(np.uint16)
        if self.depth_scale <= 0:
            raise MissingDepth(f"depth_scale must be positive, got {self.depth_scale}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def metric_at(self, u: float, v: float) -> float:
        """Nearest-pixel metric depth; raises :class:`MissingDepth` on gaps."""
        col, row = int(round(u)), int(round(v))
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise MissingDepth(f"pixel ({u}, {v}) outside depth map {self.width}x{self.height}")
        raw = int(self.values[row, col])
        if raw == 0:
            raise MissingDepth(f"no depth at pixel ({col}, {row})")
        return raw / self.depth_scale


@dataclass(frozen=True, eq=False)
class Frame:
    """One posed observation; depth may live in memory or on disk."""

    index: int
    pose: Pose
    intrinsics: Intrinsics | None = None
    image_path: Path | None = None
    depth_path: Path | None = None
    depth: DepthMap | None = None
    depth_scale: float = 1.0

    @property
    def has_depth(self) -> bool:
        return self.depth is not None or self.depth_path is not None


@dataclass(frozen=True, eq=False)
class SequenceManifest:
    """An ordered, immutable collection of frames sharing one world frame."""

    sequence_id: str
    frames: tuple[Frame, ...]
    depth_scale: float = 1.0
    profile: str = "manifest"
    root: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        indices = [f.index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ManifestError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def frame_by_index(self, index: int) -> Frame:
        for f in self.frames:
            if f.index == index:
                return f
        raise ManifestError(f"no frame with index {index} in sequence {self.sequence_id!r}")

    @property
    def has_depth(self) -> bool:
        return bool(self.frames) and all(f.has_depth for f in self.frames)

    @property
    def has_intrinsics(self) -> bool:
        return bool(self.frames) and all(f.intrinsics is not None for f in self.frames)


def parse_pose_values(values) -> Pose:
    """Build a Pose from 16 row-major numbers, snapping mild rotation drift.

    Rotations whose orthonormality drift exceeds ``POSE_DRIFT_REJECT`` (or
    whose determinant is not positive) are rejected; anything milder is
    projected back onto SO(3) so every loaded pose satisfies the exact
    invariants downstream code relies on.
    """
    m = np.asarray(values, dtype=float)
    if m.size != 16:
        raise MalformedPose(f"expected 16 pose values, got {m.size}")
    m = m.reshape(4, 4)
    if not np.all(np.isfinite(m)):
        raise MalformedPose("pose contains non-finite values")
    if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-6:
        raise MalformedPose(f"bottom row must be (0, 0, 0, 1), got {m[3].tolist()}")
    r = m[:3, :3]
    det = float(np.linalg.det(r))
    if det <= 0:
        raise MalformedPose(f"rotation block has determinant {det:.6f} (reflection or degenerate)")
    drift = float(np.abs(r.T @ r - np.eye(3)).max())
    if drift >= POSE_DRIFT_REJECT or abs(det - 1.0) >= POSE_DRIFT_REJECT:
        raise MalformedPose(f"rotation drift {drift:.3e} beyond repair threshold {POSE_DRIFT_REJECT}")
    if drift > 1e-12:
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        if np.linalg.det(r) < 0:  # cannot happen for det > 0 input, kept as a guard
            raise MalformedPose("rotation projection produced a reflection")
    try:
        return Pose(r, m[:3, 3])
    except GeometryError as exc:
        raise MalformedPose(str(exc)) from exc


def load_depth_image(path: Path, depth_scale: float) -> DepthMap:
    """Read a single-channel 16-bit depth image."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"depth image not found: {path}")
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise MissingDepth(f"depth image {path} is not single-channel")
    try:
        return DepthMap(values=arr, depth_scale=depth_scale)
    except MissingDepth as exc:
        raise MissingDepth(f"{path}: {exc}") from exc


def frame_depth_map(frame: Frame) -> DepthMap:
    """The frame's depth map, loading from disk when not already in memory."""
    if frame.depth is not None:
        return frame.depth
    if frame.depth_path is None:
        raise MissingDepth(f"frame {frame.index} carries no depth channel")
    return load_depth_image(frame.depth_path, frame.depth_scale)


def center_depth(frame: Frame) -> float:
    """Metric depth at the image center pixel (width/2, height/2).

    Nearest-pixel lookup; a stored value of 0 means the sensor had no
    reading there and raises :class:`MissingDepth` (callers skip the pair,
    no interpolation is attempted).
    """
    dm = frame_depth_map(frame)
    return dm.metric_at(dm.width / 2.0, dm.height / 2.0)


# --------------------------------------------------------------------------
# Manifest JSON
# --------------------------------------------------------------------------

def _intrinsics_from_record(rec: dict, context: str) -> Intrinsics:
    try:
        return Intrinsics(
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            width=int(rec["width"]),
            height=int(rec["height"]),
        )
    except (KeyError, TypeError, ValueError, GeometryError) as exc:
        raise InconsistentIntrinsics(f"{context}: {exc}") from exc


def _intrinsics_to_record(k: Intrinsics) -> dict:
    return {
        "fx": k.fx,
        "fy": k.fy,
        "cx": k.cx,
        "cy": k.cy,
        "width": k.width,
        "height": k.height,
    }


def _load_manifest_json(path: Path) -> SequenceManifest:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid manifest JSON in {path}: {exc}") from exc
    root = path.parent
    depth_scale = float(doc.get("depth_scale", 1.0))
    frames = []
    for rec in doc.get("frames", []):
        index = int(rec["index"])
        image_path = root / rec["image"] if rec.get("image") else None
        depth_path = root / rec["depth"] if rec.get("depth") else None
        for p, what in ((image_path, "image"), (depth_path, "depth")):
            if p is not None and not p.exists():
                raise MissingFile(f"frame {index}: referenced {what} file not found: {p}")
        intrinsics = None
        if rec.get("intrinsics"):
            intrinsics = _intrinsics_from_record(rec["intrinsics"], f"frame {index}")
        try:
            pose = parse_pose_values(rec["pose"])
        except MalformedPose as exc:
            raise MalformedPose(f"frame {index}: {exc}") from exc
        if depth_path is not None and intrinsics is not None:
            with Image.open(depth_path) as img:
                w, h = img.size
            if (w, h) != (intrinsics.width, intrinsics.height):
                raise InconsistentIntrinsics(
                    f"frame {index}: depth image is {w}x{h} but intrinsics say "
                    f"{intrinsics.width}x{intrinsics.height}"
                )
        frames.append(
            Frame(
                index=index,
                pose=pose,
                intrinsics=intrinsics,
                image_path=image_path,
                depth_path=depth_path,
                depth_scale=depth_scale,
            )
        )
    return SequenceManifest(
        sequence_id=str(doc.get("sequence_id", path.stem)),
        frames=tuple(frames),
        depth_scale=depth_scale,
        profile=str(doc.get("profile", "manifest")),
        root=root,
    )


def _frame_record(frame: Frame, root: Path) -> dict:
    def rel(p: Path | None):
        if p is None:
            return None
        try:
            return os.path.relpath(p, root)
        except ValueError:
            return str(p)

    return {
        "index": frame.index,
        "image": rel(frame.image_path),
        "depth": rel(frame.depth_path),
        "intrinsics": _intrinsics_to_record(frame.intrinsics) if frame.intrinsics else None,
        "pose": [float(x) for x in frame.pose.matrix().reshape(-1)],
    }


def write_manifest_json(seq: SequenceManifest, path: Path) -> Path:
    """Serialize a manifest whose frames already reference on-disk files."""
    path = Path(path)
    for f in seq.frames:
        if f.depth is not None and f.depth_path is None:
            raise ManifestError(
                f"frame {f.index} holds in-memory depth; materialize() the sequence first"
            )
    doc = {
        "sequence_id": seq.sequence_id,
        "profile": seq.profile,
        "depth_scale": seq.depth_scale,
        "frames": [_frame_record(f, path.parent) for f in seq.frames],
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
    return path


_PLACEHOLDER_SIZE = 8


def _write_png(path: Path, img: Image.Image) -> None:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def materialize(seq: SequenceManifest, out_dir: Path) -> tuple[SequenceManifest, Path]:
    """Write a sequence (depth images, placeholder RGB, manifest) to disk.

    Frames that already reference files keep their paths; in-memory depth
    maps are written as 16-bit PNGs and frames without an image get a flat
    placeholder so the manifest validates on reload.  Returns the updated
    manifest and the path of the written JSON.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    new_frames = []
    for frame in seq.frames:
        image_path = frame.image_path
        if image_path is None:
            image_path = out_dir / "images" / f"frame_{frame.index:06d}.png"
            _write_png(image_path, Image.new("RGB", (_PLACEHOLDER_SIZE, _PLACEHOLDER_SIZE), (96, 96, 96)))
        depth_path = frame.depth_path
        if frame.depth is not None and depth_path is None:
            depth_path = out_dir / "depth" / f"frame_{frame.index:06d}.png"
            _write_png(depth_path, Image.fromarray(frame.depth.values))
        new_frames.append(
            replace(frame, image_path=image_path, depth_path=depth_path)
        )
    new_seq = SequenceManifest(
        sequence_id=seq.sequence_id,
        frames=tuple(new_frames),
        depth_scale=seq.depth_scale,
        profile=seq.profile,
        root=out_dir,
    )
    manifest_path = write_manifest_json(new_seq, out_dir / "manifest.json")
    return new_seq, manifest_path


# --------------------------------------------------------------------------
# Dataset profiles
# --------------------------------------------------------------------------

def _read_pose_file(path: Path) -> Pose:
    if not path.exists():
        raise MissingFile(f"pose file not found: {path}")
    try:
        values = np.loadtxt(path, dtype=float)
    except ValueError as exc:
        raise MalformedPose(f"{path}: {exc}") from exc
    try:
        return parse_pose_values(values)
    except MalformedPose as exc:
        raise MalformedPose(f"{path}: {exc}") from exc


def _numeric_stem_key(path: Path):
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]) if digits else -1, path.stem)


@dataclass(frozen=True)
class ProfileDefaults:
    """Per-dataset constants; every field is overridable at ingest time."""

    depth_scale: float = 1000.0
    fx: float | None = None
    fy: float | None = None
    cx: float | None = None
    cy: float | None = None
    width: int | None = None
    height: int | None = None

    def intrinsics(self) -> Intrinsics | None:
        vals = (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
        if any(v is None for v in vals):
            return None
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, int(self.width), int(self.height))


def _ingest_seven_scenes(root: Path, defaults: ProfileDefaults) -> SequenceManifest:
    """Layout: frame-XXXXXX.color.png / .depth.png / .pose.txt in one directory."""
    root = Path(root)
    pose_files = sorted(root.glob("frame-*.pose.txt"), key=_numeric_stem_key)
    if not pose_files and not root.exists():
        raise MissingFile(f"sequence directory not found: {root}")
    intr = defaults.intrinsics()
    frames = []
    for pose_file in pose_files:
        stem = pose_file.name[: -len(".pose.txt")]
        index = int(re.findall(r"\d+", stem)[-1])
        color = root / f"{stem}.color.png"
        depth = root / f"{stem}.depth.png"
        if not color.exists():
            raise MissingFile(f"missing color image: {color}")
        if not depth.exists():
            raise MissingFile(f"missing depth image: {depth}")
        frames.append(
            Frame(
                index=index,
                pose=_read_pose_file(pose_file),
                intrinsics=intr,
                image_path=color,
                depth_path=depth,
                depth_scale=defaults.depth_scale,
            )
        )
    return SequenceManifest(
        sequence_id=root.name,
        frames=tuple(frames),
        depth_scale=defaults.depth_scale,
        profile="seven_scenes",
        root=root,
    )


def _ingest_scannet(root: Path, defaults: ProfileDefaults) -> SequenceManifest:
    """Layout: pose/N.txt, depth/N.png, color/N.jpg, intrinsic/intrinsic_depth.txt."""
    root = Path(root)
    pose_dir = root / "pose"
    if not pose_dir.is_dir():
        raise MissingFile(f"pose directory not found: {pose_dir}")
    intr = defaults.intrinsics()
    if intr is None:
        intr_file = root / "intrinsic" / "intrinsic_depth.txt"
        if not intr_file.exists():
            raise MissingFile(f"intrinsics file not found: {intr_file}")
        k = np.loadtxt(intr_file, dtype=float)
        if k.shape not in ((3, 3), (4, 4)):
            raise InconsistentIntrinsics(f"{intr_file}: expected a 3x3 or 4x4 matrix, got {k.shape}")
        first_depth = sorted((root / "depth").glob("*.png"), key=_numeric_stem_key)
        if not first_depth:
            raise MissingFile(f"no depth images under {root / 'depth'}")
        with Image.open(first_depth[0]) as img:
            w, h = img.size
        intr = Intrinsics(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]), w, h)
    frames = []
    for pose_file in sorted(pose_dir.glob("*.txt"), key=_numeric_stem_key):
        index = int(pose_file.stem)
        depth = root / "depth" / f"{index}.png"
        color = root / "color" / f"{index}.jpg"
        if not color.exists():
            color = root / "color" / f"{index}.png"
        if not depth.exists():
            raise MissingFile(f"missing depth image: {depth}")
        if not color.exists():
            raise MissingFile(f"missing color image for frame {index} under {root / 'color'}")
        frames.append(
            Frame(
                index=index,
                pose=_read_pose_file(pose_file),
                intrinsics=intr,
                image_path=color,
                depth_path=depth,
                depth_scale=defaults.depth_scale,
            )
        )
    return SequenceManifest(
        sequence_id=root.name,
        frames=tuple(frames),
        depth_scale=defaults.depth_scale,
        profile="scannet",
        root=root,
    )


def _ingest_posed_rgb(root: Path, defaults: ProfileDefaults) -> SequenceManifest:
    """Pose-only layout (no depth, no intrinsics): images/ plus poses/*.txt.

    Serves captures where only trajectories are trustworthy; the result
    supports single-DoF curation but not the reprojection pipeline.
    """
    root = Path(root)
    pose_dir = root / "poses"
    image_dir = root / "images"
    if not pose_dir.is_dir():
        raise MissingFile(f"poses directory not found: {pose_dir}")
    pose_files = sorted(pose_dir.glob("*.txt"), key=_numeric_stem_key)
    images = sorted(
        [p for p in image_dir.glob("*") if p.suffix.lower() in (".png", ".jpg", ".jpeg")],
        key=_numeric_stem_key,
    ) if image_dir.is_dir() else []
    if images and len(images) != len(pose_files):
        raise ManifestError(
            f"{root}: {len(images)} images but {len(pose_files)} pose files"
        )
    frames = []
    for i, pose_file in enumerate(pose_files):
        digits = re.findall(r"\d+", pose_file.stem)
        index = int(digits[-1]) if digits else i
        frames.append(
            Frame(
                index=index,
                pose=_read_pose_file(pose_file),
                intrinsics=None,
                image_path=images[i] if images else None,
                depth_path=None,
                depth_scale=defaults.depth_scale,
            )
        )
    return SequenceManifest(
        sequence_id=root.name,
        frames=tuple(frames),
        depth_scale=defaults.depth_scale,
        profile="posed_rgb",
        root=root,
    )


_PROFILES = {
    "seven_scenes": (_ingest_seven_scenes, ProfileDefaults(depth_scale=1000.0, fx=585.0, fy=585.0, cx=320.0, cy=240.0, width=640, height=480)),
    "scannet": (_ingest_scannet, ProfileDefaults(depth_scale=1000.0)),
    "posed_rgb": (_ingest_posed_rgb, ProfileDefaults(depth_scale=1.0)),
}


def registered_profiles() -> tuple[str, ...]:
    return ("manifest",) + tuple(_PROFILES)


def load_manifest(path: Path, profile: str = "manifest", **overrides) -> SequenceManifest:
    """Load a sequence from a manifest file or a native dataset layout.

    Args:
        path: manifest JSON file for ``profile="manifest"``, otherwise the
            sequence directory of the named dataset profile.
        profile: one of :func:`registered_profiles`.
        **overrides: profile constants to replace (``depth_scale``, ``fx``,
            ``fy``, ``cx``, ``cy``, ``width``, ``height``).

    Raises:
        ManifestError (or a subclass) on unknown profiles, missing files,
        malformed poses, or inconsistent intrinsics.
    """
    if profile == "manifest":
        if overrides:
            raise ManifestError("manifest profile takes no overrides")
        return _load_manifest_json(Path(path))
    if profile not in _PROFILES:
        raise ManifestError(
            f"unknown profile {profile!r}; registered: {', '.join(registered_profiles())}"
        )
    ingest, defaults = _PROFILES[profile]
    known = {f for f in ProfileDefaults.__dataclass_fields__}
    bad = set(overrides) - known
    if bad:
        raise ManifestError(f"unknown profile overrides: {sorted(bad)}")
    merged = replace(defaults, **{k: v for k, v in overrides.items() if v is not None})
    return ingest(Path(path), merged)
