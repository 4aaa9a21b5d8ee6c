"""Pair-filtering pipelines that turn posed sequences into labeled samples.

Two curation modes are provided:

* **bench**: pairs that keep one 3-D point (whatever the image centers of
  both frames see) shared between the views.  The source center pixel is
  lifted with its depth, reprojected into the target frame and vice versa;
  a pair survives when the viewpoint angle at the shared point falls into
  a configured bin and the mean of the forward and backward center
  deviations stays under a pixel budget.  The symmetric mean makes the
  retention predicate invariant under swapping the two frames.
* **diag**: pairs whose relative motion is dominated by exactly one degree
  of freedom.  A pair survives when one component magnitude lies inside
  its (lower, upper] band while every other component stays below its own
  lower threshold, so the residual motion is negligible and the upper
  bound keeps both views on the same scene.

Label conventions (camera x right, y down, z forward, validated against
synthetic trajectories in the test suite):

* positive yaw turns the gaze right, positive pitch tilts it up, positive
  roll is clockwise from behind the camera;
* positive t_x moves the camera right, positive t_y moves it down (so a
  raised camera verbalizes as "Translate up"), positive t_z forward.

For bench pairs the binary ground truth follows the sign of the relative
yaw: a camera that travels left around the shared point must yaw right to
keep it centered, so the two are geometrically locked together.  Scoring
by the lateral translation sign instead is available as a config switch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import frames as fr
from . import geometry as geo
from .geometry import PoseVector

__all__ = [
    "CurationError",
    "AmbiguousMotion",
    "MissingDepthChannel",
    "BENCH_LABELS",
    "DIAG_LABELS",
    "DOF_ORDER",
    "BenchConfig",
    "DiagThresholds",
    "DiagConfig",
    "PairSample",
    "verbalize_bench",
    "verbalize_diag",
    "curate_bench",
    "curate_diag",
    "swap_sample",
    "make_sample_id",
    "write_samples",
    "read_samples",
]


class CurationError(Exception):
    """Base class for curation failures."""


class AmbiguousMotion(CurationError):
    """The component that decides the label is numerically zero."""


class MissingDepthChannel(CurationError):
    """Bench curation needs depth and intrinsics on every frame."""


# Option order is fixed; index 0 is the positive-yaw (travel left) motion.
BENCH_LABELS = ("Move left while yawing right", "Move right while yawing left")

DOF_ORDER = ("theta", "phi", "psi", "t_x", "t_y", "t_z")

# (label for positive sign, label for negative sign) per DoF.
DIAG_LABELS = {
    "theta": ("Pitch up", "Pitch down"),
    "phi": ("Yaw right", "Yaw left"),
    "psi": ("Roll clockwise", "Roll counterclockwise"),
    "t_x": ("Translate right", "Translate left"),
    "t_y": ("Translate down", "Translate up"),
    "t_z": ("Translate forward", "Translate backward"),
}

_ROTATION_DOFS = ("theta", "phi", "psi")


@dataclass(frozen=True)
class BenchConfig:
    """Knobs of the shared-point pipeline.

    ``angle_bins`` are bin lower edges in degrees; each bin spans
    ``[edge, edge + bin_width]``.  ``min_gap``/``max_gap`` bound the frame
    index difference of candidate pairs, ``max_deviation`` is the pixel
    budget for the mean center deviation, and ``per_bin_cap`` limits each
    bin via a seeded uniform draw.
    """

    angle_bins: tuple[float, ...] = (15.0, 30.0, 45.0, 60.0)
    bin_width: float = 5.0
    max_deviation: float = 300.0
    min_gap: int = 10
    max_gap: int = 500
    per_bin_cap: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        bins = tuple(float(b) for b in self.angle_bins)
        object.__setattr__(self, "angle_bins", bins)
        if not bins:
            raise CurationError("angle_bins must not be empty")
        if self.bin_width <= 0:
            raise CurationError(f"bin_width must be positive, got {self.bin_width}")
        for a, b in zip(bins, bins[1:]):
            if b < a + self.bin_width:
                raise CurationError(f"bins {a} and {b} overlap for width {self.bin_width}")
        if self.max_deviation <= 0:
            raise CurationError(f"max_deviation must be positive, got {self.max_deviation}")
        if self.min_gap < 1:
            raise CurationError(f"min_gap must be >= 1, got {self.min_gap}")
        if self.max_gap < self.min_gap:
            raise CurationError(f"max_gap {self.max_gap} < min_gap {self.min_gap}")
        if self.per_bin_cap < 1:
            raise CurationError(f"per_bin_cap must be >= 1, got {self.per_bin_cap}")

    def bin_for(self, tau_deg: float) -> float | None:
        for edge in self.angle_bins:
            if edge <= tau_deg <= edge + self.bin_width:
                return edge
        return None


@dataclass(frozen=True)
class DiagThresholds:
    """(lower, upper) band per DoF; rotations in degrees, translations metric.

    A pair is kept when exactly one component magnitude falls inside its
    band (strictly above the lower edge, at most the upper edge) while all
    other magnitudes stay strictly below their own lower edges.
    """

    theta: tuple[float, float] = (5.0, 15.0)
    phi: tuple[float, float] = (5.0, 15.0)
    psi: tuple[float, float] = (3.0, 10.0)
    t_x: tuple[float, float] = (0.15, 0.4)
    t_y: tuple[float, float] = (0.1, 0.3)
    t_z: tuple[float, float] = (0.15, 0.4)

    def __post_init__(self):
        for dof in DOF_ORDER:
            lo, hi = getattr(self, dof)
            if not (0 < lo < hi):
                raise CurationError(f"{dof}: need 0 < lower < upper, got ({lo}, {hi})")

    def band_radians(self, dof: str) -> tuple[float, float]:
        """Band converted to the internal units of a pose vector."""
        lo, hi = getattr(self, dof)
        if dof in _ROTATION_DOFS:
            return math.radians(lo), math.radians(hi)
        return float(lo), float(hi)


@dataclass(frozen=True)
class DiagConfig:
    """Bundle of everything the single-DoF pipeline needs."""

    thresholds: DiagThresholds = field(default_factory=DiagThresholds)
    min_gap: int = 10
    max_gap: int = 500
    per_dof_cap: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if self.min_gap < 1:
            raise CurationError(f"min_gap must be >= 1, got {self.min_gap}")
        if self.max_gap < self.min_gap:
            raise CurationError(f"max_gap {self.max_gap} < min_gap {self.min_gap}")
        if self.per_dof_cap < 1:
            raise CurationError(f"per_dof_cap must be >= 1, got {self.per_dof_cap}")


@dataclass(frozen=True)
class PairSample:
    """One curated (source, target) pair with its label and provenance."""

    sample_id: str
    kind: str  # "bench" | "diag"
    src_index: int
    tgt_index: int
    tag: str  # bench: bin lower edge; diag: dominant DoF name
    label: str
    label_index: int
    sign: int  # sign of the component that decided the label
    pose_vector: PoseVector
    tau: float | None = None  # degrees, bench only
    mean_deviation: float | None = None  # pixels, bench only

    def to_record(self) -> dict:
        theta_d, phi_d, psi_d = self.pose_vector.rotation_degrees()
        return {
            "sample_id": self.sample_id,
            "kind": self.kind,
            "src_index": self.src_index,
            "tgt_index": self.tgt_index,
            "tag": self.tag,
            "label": self.label,
            "label_index": self.label_index,
            "sign": self.sign,
            "tau_deg": self.tau,
            "mean_deviation_px": self.mean_deviation,
            "pose_vector": {
                "theta_deg": theta_d,
                "phi_deg": phi_d,
                "psi_deg": psi_d,
                "t_x": self.pose_vector.t_x,
                "t_y": self.pose_vector.t_y,
                "t_z": self.pose_vector.t_z,
            },
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PairSample":
        pv = rec["pose_vector"]
        vector = PoseVector(
            theta=math.radians(pv["theta_deg"]),
            phi=math.radians(pv["phi_deg"]),
            psi=math.radians(pv["psi_deg"]),
            t_x=float(pv["t_x"]),
            t_y=float(pv["t_y"]),
            t_z=float(pv["t_z"]),
        )
        return cls(
            sample_id=rec["sample_id"],
            kind=rec["kind"],
            src_index=int(rec["src_index"]),
            tgt_index=int(rec["tgt_index"]),
            tag=str(rec["tag"]),
            label=rec["label"],
            label_index=int(rec["label_index"]),
            sign=int(rec["sign"]),
            pose_vector=vector,
            tau=None if rec.get("tau_deg") is None else float(rec["tau_deg"]),
            mean_deviation=(
                None if rec.get("mean_deviation_px") is None else float(rec["mean_deviation_px"])
            ),
        )


def make_sample_id(sequence_id: str, src_index: int, tgt_index: int) -> str:
    return f"{sequence_id}:{src_index:06d}-{tgt_index:06d}"


def verbalize_bench(v: PoseVector) -> tuple[str, int]:
    """Map the sign of the relative yaw onto the two bench options.

    Raises:
        AmbiguousMotion: when ``|phi| <= 1e-6`` rad; shared-point pairs
            always carry yaw, so a zero here means the pair is unusable.
    """
    if abs(v.phi) <= 1e-6:
        raise AmbiguousMotion(f"relative yaw {v.phi:.2e} rad is too small to label")
    index = 0 if v.phi > 0 else 1
    return BENCH_LABELS[index], index


def verbalize_diag(dof: str, sign: int) -> tuple[str, int]:
    """Label for a single dominant DoF and its sign.

    Index 0 is the positive-sign option of that DoF's pair (see
    ``DIAG_LABELS``); a swap therefore flips the index.
    """
    if dof not in DIAG_LABELS:
        raise CurationError(f"unknown DoF {dof!r}")
    if sign == 0:
        raise CurationError("sign must be +1 or -1")
    index = 0 if sign > 0 else 1
    return DIAG_LABELS[dof][index], index


def _pair_window(n: int, min_gap: int, max_gap: int):
    for i in range(n):
        for j in range(i + min_gap, min(n, i + max_gap + 1)):
            yield i, j


def _cap_groups(samples: list[PairSample], group_order: Sequence[str], cap: int, seed: int) -> list[PairSample]:
    """Seeded per-group downsampling; keeps canonical (src, tgt) order."""
    rng = np.random.default_rng(seed)
    kept: list[PairSample] = []
    for tag in group_order:
        group = [s for s in samples if s.tag == tag]
        if len(group) > cap:
            chosen = sorted(rng.choice(len(group), size=cap, replace=False).tolist())
            group = [group[i] for i in chosen]
        kept.extend(group)
    kept.sort(key=lambda s: (s.src_index, s.tgt_index))
    return kept


def _format_bin(edge: float) -> str:
    return f"{edge:g}"


def curate_bench(seq: fr.SequenceManifest, cfg: BenchConfig) -> list[PairSample]:
    """Scan all frame pairs in the gap window and keep shared-point pairs.

    For each candidate (i, j): the center pixel of frame i is unprojected
    at its depth and reprojected into frame j (and symmetrically j into i).
    The pair is kept when both reprojections land inside the image, the
    viewpoint angle at the lifted point falls into a configured bin, the
    mean of the two center deviations stays below ``cfg.max_deviation``,
    and both center depths are valid.  Frames with geometric defects
    (missing depth at the center, gimbal lock, a point behind a camera)
    skip the pair but never abort the scan.

    Raises:
        MissingDepthChannel: when any frame lacks depth or intrinsics; the
            sequence as a whole is unusable for this pipeline.
    """
    for f in seq.frames:
        if f.intrinsics is None or not f.has_depth:
            raise MissingDepthChannel(
                f"frame {f.index} of sequence {seq.sequence_id!r} lacks depth or intrinsics"
            )
    n = len(seq.frames)
    # Per-frame precomputation: center depth, lifted center point, origin.
    centers: list[np.ndarray] = []
    lifted: list[np.ndarray | None] = []
    for f in seq.frames:
        k = f.intrinsics
        center = k.center_pixel
        centers.append(center)
        try:
            d = fr.center_depth(f)
            lifted.append(geo.unproject(center, d, k, f.pose))
        except (fr.MissingDepth, geo.InvalidDepth):
            lifted.append(None)

    samples: list[PairSample] = []
    for i, j in _pair_window(n, cfg.min_gap, cfg.max_gap):
        fi, fj = seq.frames[i], seq.frames[j]
        p_w, q_w = lifted[i], lifted[j]
        if p_w is None or q_w is None:
            continue
        try:
            fwd_pixel = geo.reproject(p_w, fj.intrinsics, fj.pose)
            bwd_pixel = geo.reproject(q_w, fi.intrinsics, fi.pose)
        except geo.BehindCamera:
            continue
        if not (fj.intrinsics.contains(fwd_pixel) and fi.intrinsics.contains(bwd_pixel)):
            continue
        fwd_dev = geo.center_deviation(centers[j], fwd_pixel)
        bwd_dev = geo.center_deviation(centers[i], bwd_pixel)
        mean_dev = 0.5 * (fwd_dev + bwd_dev)
        if mean_dev >= cfg.max_deviation:
            continue
        try:
            tau = geo.viewing_angle(p_w, fi.pose.translation, fj.pose.translation)
        except geo.DegenerateRay:
            continue
        edge = cfg.bin_for(tau)
        if edge is None:
            continue
        try:
            vector = geo.pose_vector(fi.pose, fj.pose)
            label, label_index = verbalize_bench(vector)
        except (geo.GimbalLock, AmbiguousMotion):
            continue
        samples.append(
            PairSample(
                sample_id=make_sample_id(seq.sequence_id, fi.index, fj.index),
                kind="bench",
                src_index=fi.index,
                tgt_index=fj.index,
                tag=_format_bin(edge),
                label=label,
                label_index=label_index,
                sign=1 if vector.phi > 0 else -1,
                pose_vector=vector,
                tau=tau,
                mean_deviation=mean_dev,
            )
        )
    order = [_format_bin(e) for e in cfg.angle_bins]
    return _cap_groups(samples, order, cfg.per_bin_cap, cfg.rng_seed)


def curate_diag(
    seq: fr.SequenceManifest,
    thresholds: DiagThresholds,
    min_gap: int = 10,
    max_gap: int = 500,
    per_dof_cap: int = 100,
    rng_seed: int = 0,
) -> list[PairSample]:
    """Keep pairs whose relative motion is dominated by exactly one DoF.

    A pair is retained when one component magnitude lies inside its
    (lower, upper] band and every other component magnitude is strictly
    below its own lower threshold.  Gimbal-locked pairs are skipped.
    """
    cfg = DiagConfig(thresholds=thresholds, min_gap=min_gap, max_gap=max_gap,
                     per_dof_cap=per_dof_cap, rng_seed=rng_seed)
    bands = {dof: thresholds.band_radians(dof) for dof in DOF_ORDER}
    n = len(seq.frames)
    samples: list[PairSample] = []
    for i, j in _pair_window(n, cfg.min_gap, cfg.max_gap):
        fi, fj = seq.frames[i], seq.frames[j]
        try:
            vector = geo.pose_vector(fi.pose, fj.pose)
        except geo.GimbalLock:
            continue
        mags = {dof: abs(vector.component(dof)) for dof in DOF_ORDER}
        dominant = None
        for dof in DOF_ORDER:
            lo, hi = bands[dof]
            if lo < mags[dof] <= hi and all(
                mags[other] < bands[other][0] for other in DOF_ORDER if other != dof
            ):
                dominant = dof
                break
        if dominant is None:
            continue
        sign = 1 if vector.component(dominant) > 0 else -1
        label, label_index = verbalize_diag(dominant, sign)
        samples.append(
            PairSample(
                sample_id=make_sample_id(seq.sequence_id, fi.index, fj.index),
                kind="diag",
                src_index=fi.index,
                tgt_index=fj.index,
                tag=dominant,
                label=label,
                label_index=label_index,
                sign=sign,
                pose_vector=vector,
            )
        )
    return _cap_groups(samples, DOF_ORDER, cfg.per_dof_cap, cfg.rng_seed)


def swap_sample(s: PairSample) -> PairSample:
    """Exchange source and target; the label becomes the logical opposite.

    The pose vector is recomputed from the inverted relative transform
    (swapping the two poses inverts their relative motion exactly); the
    viewpoint angle and the mean deviation are symmetric in the two frames
    and carry over unchanged.
    """
    rotation = geo.rotation_from_euler(s.pose_vector.theta, s.pose_vector.phi, s.pose_vector.psi)
    translation = np.array([s.pose_vector.t_x, s.pose_vector.t_y, s.pose_vector.t_z])
    inv_rotation = rotation.T
    inv_translation = -inv_rotation @ translation
    theta, phi, psi = geo.euler_from_rotation(inv_rotation)
    vector = PoseVector(theta, phi, psi, *(float(x) for x in inv_translation))
    label_index = 1 - s.label_index
    label = BENCH_LABELS[label_index] if s.kind == "bench" else DIAG_LABELS[s.tag][label_index]
    base = s.sample_id.rsplit(":", 1)[0] if ":" in s.sample_id else s.sample_id
    return replace(
        s,
        sample_id=make_sample_id(base, s.tgt_index, s.src_index),
        src_index=s.tgt_index,
        tgt_index=s.src_index,
        label=label,
        label_index=label_index,
        sign=-s.sign,
        pose_vector=vector,
    )


def write_samples(samples: Sequence[PairSample], path: Path) -> Path:
    """One sample per line, JSON with a fixed field order."""
    lines = [json.dumps(s.to_record()) for s in samples]
    fr.atomic_write_text(Path(path), "\n".join(lines) + ("\n" if lines else ""))
    return Path(path)


def read_samples(path: Path) -> list[PairSample]:
    path = Path(path)
    if not path.exists():
        raise fr.MissingFile(f"sample manifest not found: {path}")
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                samples.append(PairSample.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CurationError(f"{path}:{lineno}: bad sample record: {exc}") from exc
    return samples
