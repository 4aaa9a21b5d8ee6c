"""Synthetic scenes, trajectories, depth maps, and correspondences.

Everything here is constructed analytically so the exact relative motion,
viewpoint angles, depth values, and point correspondences are known by
construction.  Generated sequences use the same manifest structure as
ingested data, so downstream stages cannot tell them apart.

The module also hosts :func:`oracle_check_pair`, an independent re-check
of the curation predicates.  It deliberately re-derives everything from
raw 4x4 pose matrices and intrinsics with inline numpy (matrix inverse,
explicit angle extraction, manual projection) instead of calling the
geometry helpers the curator uses, so a bug in the shared math cannot
hide from the check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import curation as cur
from . import frames as fr
from . import geometry as geo
from .geometry import Intrinsics, Pose, PoseVector
from .solver import Correspondence

__all__ = [
    "SynthError",
    "TooFewVisible",
    "DEFAULT_INTRINSICS",
    "Plane",
    "SyntheticScene",
    "TrajectorySpec",
    "OracleReport",
    "generate",
    "generate_orbit",
    "generate_single_dof",
    "generate_static",
    "sequence_from_increment",
    "render_depth",
    "random_scene",
    "project_correspondences",
    "oracle_check_pair",
]

DEFAULT_INTRINSICS = Intrinsics(fx=525.0, fy=525.0, cx=320.0, cy=240.0, width=640, height=480)

_MIN_SCENE_POINTS = 50


class SynthError(Exception):
    """Base class for synthetic-rig failures."""


class TooFewVisible(SynthError):
    """Fewer than 8 scene points are visible in both views."""


@dataclass(frozen=True, eq=False)
class Plane:
    """Infinite plane through ``point`` with unit ``normal``."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = float(np.linalg.norm(n))
        if norm < 1e-12:
            raise SynthError("plane normal must be non-zero")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n / norm)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Point cloud for correspondences plus planes for depth rendering."""

    points: np.ndarray  # (N, 3)
    planes: tuple[Plane, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(pts) < _MIN_SCENE_POINTS:
            raise SynthError(f"scene needs at least {_MIN_SCENE_POINTS} points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise SynthError("scene points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "planes", tuple(self.planes))


@dataclass(frozen=True)
class TrajectorySpec:
    """Parameters of a generated camera path.

    ``kind`` selects the motion class:

    * ``"orbit"``: cameras on a circle of ``radius`` around ``center`` in
      the horizontal plane, each oriented so the center projects exactly
      to the principal point; ``step_deg`` per frame (sign sets direction).
    * ``"single-dof"``: one component of the camera-frame motion advances
      by ``increment`` per frame (degrees for rotations, metric units for
      translations); all other components stay exactly zero.
    * ``"static"``: the same pose repeated.
    """

    kind: str
    frame_count: int
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 2.0
    step_deg: float = 1.0
    start_deg: float = 0.0
    dof: str = "phi"
    increment: float = 0.0
    intrinsics: Intrinsics = DEFAULT_INTRINSICS
    depth_scale: float = 5000.0
    sequence_id: str = "synthetic"
    render_depth: bool = True

    def __post_init__(self):
        if self.kind not in ("orbit", "single-dof", "static"):
            raise SynthError(f"unknown trajectory kind {self.kind!r}")
        if self.frame_count < 1:
            raise SynthError(f"frame_count must be >= 1, got {self.frame_count}")
        values = (self.radius, self.step_deg, self.start_deg, self.increment) + tuple(self.center)
        if not all(math.isfinite(v) for v in values):
            raise SynthError("trajectory parameters must be finite")
        if self.kind == "orbit":
            if self.step_deg == 0.0:
                raise SynthError("orbit needs a non-zero angular step")
            if self.radius <= 0:
                raise SynthError(f"orbit radius must be positive, got {self.radius}")
        if self.kind == "single-dof":
            if self.dof not in cur.DOF_ORDER:
                raise SynthError(f"unknown DoF {self.dof!r}")
            if self.increment == 0.0:
                raise SynthError("single-dof needs a non-zero increment")


def generate(spec: TrajectorySpec) -> fr.SequenceManifest:
    if spec.kind == "orbit":
        return generate_orbit(spec)
    if spec.kind == "single-dof":
        return generate_single_dof(spec)
    return generate_static(spec)


def _orbit_pose(center: np.ndarray, radius: float, angle: float) -> Pose:
    # Horizontal orbit (world y is down); the camera looks at the center.
    position = center + radius * np.array([math.sin(angle), 0.0, math.cos(angle)])
    z_axis = (center - position) / radius
    y_axis = np.array([0.0, 1.0, 0.0])
    x_axis = np.cross(y_axis, z_axis)
    return Pose(np.column_stack([x_axis, y_axis, z_axis]), position)


def generate_orbit(spec: TrajectorySpec) -> fr.SequenceManifest:
    """Cameras orbiting a fixed point that stays at the principal point.

    The viewing angle between frames k and k+g at the orbit center is
    exactly ``g * |step_deg|``, and the relative motion of consecutive
    frames is a pure yaw plus the lateral travel that keeps the center
    fixated: positive steps travel left while yawing right.
    """
    if spec.kind != "orbit":
        raise SynthError(f"expected an orbit spec, got kind {spec.kind!r}")
    center = np.asarray(spec.center, dtype=float)
    k = spec.intrinsics
    # One backing plane through the center, facing the middle of the arc,
    # so every pixel's ray hits a surface and the center depth is exact.
    mid = math.radians(spec.start_deg + spec.step_deg * (spec.frame_count - 1) / 2.0)
    plane = Plane(center, np.array([math.sin(mid), 0.0, math.cos(mid)]))
    frames = []
    for idx in range(spec.frame_count):
        angle = math.radians(spec.start_deg + spec.step_deg * idx)
        pose = _orbit_pose(center, spec.radius, angle)
        depth = None
        if spec.render_depth:
            depth = _render_planes((plane,), pose, k, spec.depth_scale)
        frames.append(
            fr.Frame(
                index=idx,
                pose=pose,
                intrinsics=k,
                depth=depth,
                depth_scale=spec.depth_scale,
            )
        )
    return fr.SequenceManifest(
        sequence_id=spec.sequence_id,
        frames=tuple(frames),
        depth_scale=spec.depth_scale,
        profile="synthetic",
    )


def sequence_from_increment(
    increment: PoseVector,
    frame_count: int,
    sequence_id: str = "synthetic",
    start: Pose | None = None,
    intrinsics: Intrinsics | None = None,
    depth_scale: float = 5000.0,
) -> fr.SequenceManifest:
    """Compose the same camera-frame step repeatedly.

    The relative motion between consecutive frames equals ``increment``
    exactly, because ``T_{k+1} = T_k o delta`` makes
    ``inverse(T_k) o T_{k+1} = delta``.
    """
    delta = Pose(
        geo.rotation_from_euler(increment.theta, increment.phi, increment.psi),
        np.array([increment.t_x, increment.t_y, increment.t_z]),
    )
    pose = start if start is not None else Pose.identity()
    frames = []
    for idx in range(frame_count):
        frames.append(
            fr.Frame(index=idx, pose=pose, intrinsics=intrinsics, depth_scale=depth_scale)
        )
        pose = pose.compose(delta)
    return fr.SequenceManifest(
        sequence_id=sequence_id,
        frames=tuple(frames),
        depth_scale=depth_scale,
        profile="synthetic",
    )


def generate_single_dof(spec: TrajectorySpec) -> fr.SequenceManifest:
    """Pose-only sequence advancing a single DoF by ``increment`` per frame."""
    if spec.kind != "single-dof":
        raise SynthError(f"expected a single-dof spec, got kind {spec.kind!r}")
    value = math.radians(spec.increment) if spec.dof in ("theta", "phi", "psi") else spec.increment
    components = {dof: 0.0 for dof in cur.DOF_ORDER}
    components[spec.dof] = value
    return sequence_from_increment(
        PoseVector(**components),
        spec.frame_count,
        sequence_id=spec.sequence_id,
        depth_scale=spec.depth_scale,
    )


def generate_static(spec: TrajectorySpec) -> fr.SequenceManifest:
    frames = tuple(
        fr.Frame(index=idx, pose=Pose.identity(), intrinsics=None, depth_scale=spec.depth_scale)
        for idx in range(spec.frame_count)
    )
    return fr.SequenceManifest(
        sequence_id=spec.sequence_id,
        frames=frames,
        depth_scale=spec.depth_scale,
        profile="synthetic",
    )


def _render_planes(planes: Sequence[Plane], pose: Pose, k: Intrinsics, depth_scale: float) -> fr.DepthMap:
    u = np.arange(k.width, dtype=float)
    v = np.arange(k.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    dir_x = (uu - k.cx) / k.fx
    dir_y = (vv - k.cy) / k.fy
    best = np.full((k.height, k.width), np.inf)
    r_t = pose.rotation.T
    for plane in planes:
        n_c = r_t @ plane.normal
        p0_c = r_t @ (plane.point - pose.translation)
        denom = n_c[0] * dir_x + n_c[1] * dir_y + n_c[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = float(np.dot(n_c, p0_c)) / denom
        hit = np.isfinite(s) & (s > 1e-9)
        best = np.where(hit & (s < best), s, best)
    raw = np.where(np.isfinite(best), np.rint(best * depth_scale), 0.0)
    raw = np.where((raw >= 1) & (raw <= 65535), raw, 0.0).astype(np.uint16)
    return fr.DepthMap(values=raw, depth_scale=depth_scale)


def render_depth(scene: SyntheticScene, frame: fr.Frame) -> fr.DepthMap:
    """Per-pixel z-depth of the nearest plane intersection.

    Pixels whose ray misses every plane (or whose hit is out of the 16-bit
    range) get the invalid value 0.
    """
    if not scene.planes:
        raise SynthError("scene has no plane geometry to render depth from")
    if frame.intrinsics is None:
        raise SynthError(f"frame {frame.index} has no intrinsics")
    return _render_planes(scene.planes, frame.pose, frame.intrinsics, frame.depth_scale)


def random_scene(
    n_points: int = 500,
    center=(0.0, 0.0, 0.0),
    extent=(6.0, 4.0, 6.0),
    planes: Sequence[Plane] = (),
    avoid: Sequence = (),
    min_clearance: float = 0.2,
    seed: int = 0,
) -> SyntheticScene:
    """Uniform points in a box around ``center``, kept clear of camera spots."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=float)
    half = np.asarray(extent, dtype=float) / 2.0
    avoid_pts = np.asarray(list(avoid), dtype=float).reshape(-1, 3)
    points = np.empty((0, 3))
    while len(points) < n_points:
        batch = center + rng.uniform(-half, half, size=(n_points, 3))
        if len(avoid_pts):
            dists = np.linalg.norm(batch[:, None, :] - avoid_pts[None, :, :], axis=2)
            batch = batch[dists.min(axis=1) >= min_clearance]
        points = np.vstack([points, batch])
    return SyntheticScene(points=points[:n_points], planes=tuple(planes), rng_seed=seed)


def _project_all(points: np.ndarray, pose: Pose, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    cam = (points - pose.translation) @ pose.rotation
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, 0] / z + k.cx
        v = k.fy * cam[:, 1] / z + k.cy
    pixels = np.column_stack([u, v])
    visible = (z > 1e-9) & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return pixels, visible


def project_correspondences(
    scene: SyntheticScene,
    frame_i: fr.Frame,
    frame_j: fr.Frame,
    noise_sigma: float = 0.0,
    outlier_fraction: float = 0.0,
    seed: int = 0,
) -> tuple[list[Correspondence], np.ndarray]:
    """Exact matches between two views, optionally corrupted.

    Scene points visible in both frames are projected into both images;
    isotropic Gaussian pixel noise (if any) is added to both sides, then
    ``floor(outlier_fraction * M)`` target points are replaced by uniform
    scatter.  Returns the correspondences and a boolean mask marking the
    planted outliers (the side-channel ground truth for robustness tests).

    Raises:
        TooFewVisible: fewer than 8 points are visible in both views.
    """
    if frame_i.intrinsics is None or frame_j.intrinsics is None:
        raise SynthError("both frames need intrinsics to project correspondences")
    pix_i, vis_i = _project_all(scene.points, frame_i.pose, frame_i.intrinsics)
    pix_j, vis_j = _project_all(scene.points, frame_j.pose, frame_j.intrinsics)
    both = vis_i & vis_j
    m = int(both.sum())
    if m < 8:
        raise TooFewVisible(f"only {m} scene points visible in both views")
    pix_i = pix_i[both].copy()
    pix_j = pix_j[both].copy()
    rng = np.random.default_rng(seed)
    if noise_sigma > 0:
        pix_i += rng.normal(0.0, noise_sigma, size=pix_i.shape)
        pix_j += rng.normal(0.0, noise_sigma, size=pix_j.shape)
    outlier_mask = np.zeros(m, dtype=bool)
    n_out = int(math.floor(outlier_fraction * m))
    if n_out > 0:
        kj = frame_j.intrinsics
        chosen = rng.choice(m, size=n_out, replace=False)
        outlier_mask[chosen] = True
        pix_j[chosen, 0] = rng.uniform(0.0, kj.width, size=n_out)
        pix_j[chosen, 1] = rng.uniform(0.0, kj.height, size=n_out)
    matches = [
        Correspondence(float(a[0]), float(a[1]), float(b[0]), float(b[1]))
        for a, b in zip(pix_i, pix_j)
    ]
    return matches, outlier_mask


# --------------------------------------------------------------------------
# Independent predicate re-check
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleReport:
    """Outcome of re-deriving every retention predicate for one sample."""

    sample_id: str
    passed: bool
    checks: tuple[tuple[str, bool, str], ...]

    def failures(self) -> list[str]:
        return [f"{name}: {detail}" for name, ok, detail in self.checks if not ok]


def _raw_relative(m_src: np.ndarray, m_tgt: np.ndarray) -> np.ndarray:
    return np.linalg.inv(m_src) @ m_tgt


def _raw_pose_vector(rel: np.ndarray) -> np.ndarray | None:
    r = rel[:3, :3]
    r31 = min(1.0, max(-1.0, float(r[2, 0])))
    if abs(r31) > 1.0 - 1e-6:
        return None
    return np.array(
        [
            math.atan2(r[2, 1], r[2, 2]),
            math.asin(-r31),
            math.atan2(r[1, 0], r[0, 0]),
            rel[0, 3],
            rel[1, 3],
            rel[2, 3],
        ]
    )


def _raw_project(m_wc: np.ndarray, k: Intrinsics, p_w: np.ndarray):
    p_h = np.append(p_w, 1.0)
    p_c = (np.linalg.inv(m_wc) @ p_h)[:3]
    if p_c[2] <= 1e-9:
        return None
    return np.array([k.fx * p_c[0] / p_c[2] + k.cx, k.fy * p_c[1] / p_c[2] + k.cy])


def _raw_center_lift(frame: fr.Frame) -> np.ndarray | None:
    k = frame.intrinsics
    dm = fr.frame_depth_map(frame)
    u, v = dm.width / 2.0, dm.height / 2.0
    raw = int(dm.values[int(round(v)), int(round(u))])
    if raw == 0:
        return None
    depth = raw / dm.depth_scale
    ray = np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0]) * depth
    return (frame.pose.matrix() @ np.append(ray, 1.0))[:3]


_VALUE_TOL = 1e-6


def _check_bench(sample: cur.PairSample, seq: fr.SequenceManifest, cfg: cur.BenchConfig) -> OracleReport:
    checks: list[tuple[str, bool, str]] = []

    def add(name: str, ok: bool, detail: str = ""):
        checks.append((name, bool(ok), detail))

    fi = seq.frame_by_index(sample.src_index)
    fj = seq.frame_by_index(sample.tgt_index)
    gap = sample.tgt_index - sample.src_index
    add("gap_window", cfg.min_gap <= gap <= cfg.max_gap, f"gap {gap}")

    p_w = _raw_center_lift(fi)
    q_w = _raw_center_lift(fj)
    add("center_depth_valid", p_w is not None and q_w is not None, "missing center depth")
    if p_w is None or q_w is None:
        return OracleReport(sample.sample_id, False, tuple(checks))

    m_i, m_j = fi.pose.matrix(), fj.pose.matrix()
    fwd = _raw_project(m_j, fj.intrinsics, p_w)
    bwd = _raw_project(m_i, fi.intrinsics, q_w)
    add("in_front", fwd is not None and bwd is not None, "reprojection behind a camera")
    if fwd is None or bwd is None:
        return OracleReport(sample.sample_id, False, tuple(checks))
    kj, ki = fj.intrinsics, fi.intrinsics
    in_b = (0 <= fwd[0] < kj.width and 0 <= fwd[1] < kj.height
            and 0 <= bwd[0] < ki.width and 0 <= bwd[1] < ki.height)
    add("in_bounds", in_b, f"fwd {fwd.tolist()} bwd {bwd.tolist()}")

    fwd_dev = math.hypot(fwd[0] - kj.width / 2.0, fwd[1] - kj.height / 2.0)
    bwd_dev = math.hypot(bwd[0] - ki.width / 2.0, bwd[1] - ki.height / 2.0)
    mean_dev = 0.5 * (fwd_dev + bwd_dev)
    add("deviation_gate", mean_dev < cfg.max_deviation, f"mean deviation {mean_dev:.3f}")
    add(
        "deviation_matches",
        sample.mean_deviation is not None and abs(mean_dev - sample.mean_deviation) <= _VALUE_TOL,
        f"recomputed {mean_dev:.6f} vs stored {sample.mean_deviation}",
    )

    a = m_i[:3, 3] - p_w
    b = m_j[:3, 3] - p_w
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-9 or nb <= 1e-9:
        add("viewpoint_angle", False, "degenerate ray")
        return OracleReport(sample.sample_id, False, tuple(checks))
    tau = math.degrees(math.acos(min(1.0, max(-1.0, float(np.dot(a, b) / (na * nb))))))
    edge = cfg.bin_for(tau)
    add("angle_in_bin", edge is not None, f"tau {tau:.4f}")
    add("bin_matches", edge is not None and f"{edge:g}" == sample.tag, f"recomputed bin {edge}")
    add(
        "tau_matches",
        sample.tau is not None and abs(tau - sample.tau) <= _VALUE_TOL,
        f"recomputed {tau:.6f} vs stored {sample.tau}",
    )

    v = _raw_pose_vector(_raw_relative(m_i, m_j))
    add("no_gimbal_lock", v is not None, "relative yaw at +-90 deg")
    if v is not None:
        stored = sample.pose_vector.as_array()
        add("pose_vector_matches", bool(np.abs(v - stored).max() <= _VALUE_TOL),
            f"recomputed {v.tolist()}")
        yaw = v[1]
        add("label_decidable", abs(yaw) > 1e-6, f"yaw {yaw:.2e}")
        expected_index = 0 if yaw > 0 else 1
        add("label_matches",
            sample.label_index == expected_index and sample.label == cur.BENCH_LABELS[expected_index],
            f"expected index {expected_index}")
    passed = all(ok for _, ok, _ in checks)
    return OracleReport(sample.sample_id, passed, tuple(checks))


def _check_diag(sample: cur.PairSample, seq: fr.SequenceManifest, cfg: cur.DiagConfig) -> OracleReport:
    checks: list[tuple[str, bool, str]] = []

    def add(name: str, ok: bool, detail: str = ""):
        checks.append((name, bool(ok), detail))

    fi = seq.frame_by_index(sample.src_index)
    fj = seq.frame_by_index(sample.tgt_index)
    gap = sample.tgt_index - sample.src_index
    add("gap_window", cfg.min_gap <= gap <= cfg.max_gap, f"gap {gap}")

    v = _raw_pose_vector(_raw_relative(fi.pose.matrix(), fj.pose.matrix()))
    add("no_gimbal_lock", v is not None, "relative yaw at +-90 deg")
    if v is None:
        return OracleReport(sample.sample_id, False, tuple(checks))

    bands = [cfg.thresholds.band_radians(dof) for dof in cur.DOF_ORDER]
    mags = np.abs(v)
    dominant = None
    for idx, dof in enumerate(cur.DOF_ORDER):
        lo, hi = bands[idx]
        others_ok = all(
            mags[m] < bands[m][0] for m in range(len(cur.DOF_ORDER)) if m != idx
        )
        if lo < mags[idx] <= hi and others_ok:
            dominant = dof
            break
    add("exclusive_dominant", dominant is not None,
        f"magnitudes {mags.tolist()}")
    if dominant is None:
        return OracleReport(sample.sample_id, False, tuple(checks))
    add("dof_matches", dominant == sample.tag, f"recomputed {dominant}")
    sign = 1 if v[cur.DOF_ORDER.index(dominant)] > 0 else -1
    add("sign_matches", sign == sample.sign, f"recomputed sign {sign}")
    expected_label = cur.DIAG_LABELS[dominant][0 if sign > 0 else 1]
    add("label_matches", sample.label == expected_label, f"expected {expected_label!r}")
    stored = sample.pose_vector.as_array()
    add("pose_vector_matches", bool(np.abs(v - stored).max() <= _VALUE_TOL),
        f"recomputed {v.tolist()}")
    passed = all(ok for _, ok, _ in checks)
    return OracleReport(sample.sample_id, passed, tuple(checks))


def oracle_check_pair(sample: cur.PairSample, seq: fr.SequenceManifest, cfg) -> OracleReport:
    """Re-derive every retention predicate of a sample from raw data.

    ``cfg`` is a :class:`curation.BenchConfig` for bench samples or a
    :class:`curation.DiagConfig` for diag samples and must match the
    sample's kind.
    """
    if sample.kind == "bench":
        if not isinstance(cfg, cur.BenchConfig):
            raise SynthError("bench samples need a BenchConfig")
        return _check_bench(sample, seq, cfg)
    if sample.kind == "diag":
        if not isinstance(cfg, cur.DiagConfig):
            raise SynthError("diag samples need a DiagConfig")
        return _check_diag(sample, seq, cfg)
    raise SynthError(f"unknown sample kind {sample.kind!r}")
