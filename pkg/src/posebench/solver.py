"""Correspondence-based relative pose: essential matrix, RANSAC, cheirality.

The estimated motion follows the same source-to-target convention as the
curation pipeline: the returned rotation and (unit) translation express
the target camera in the source camera's frame, so the epipolar
constraint reads ``x_src^T E x_tgt = 0`` with ``E = [t]x R`` in normalized
image coordinates.  Translation scale is unobservable from an essential
matrix, so only its direction is reported; the binary motion label never
needs the scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .curation import AmbiguousMotion
from .frames import MissingFile, atomic_write_text
from .geometry import Intrinsics, PoseVector, euler_from_rotation

__all__ = [
    "SolverError",
    "InsufficientPoints",
    "DegenerateConfiguration",
    "NoConsensus",
    "CheiralityAmbiguous",
    "Correspondence",
    "RansacConfig",
    "EssentialMatrix",
    "eight_point_essential",
    "ransac_essential",
    "decompose_essential",
    "estimate_relative_motion",
    "classify_pair",
    "epipolar_residuals",
    "read_correspondences",
    "write_correspondences",
]


class SolverError(Exception):
    """Base class for pose-solver failures."""


class InsufficientPoints(SolverError):
    """Fewer correspondences than the solver needs."""


class DegenerateConfiguration(SolverError):
    """The design matrix is rank-deficient beyond the expected null space."""


class NoConsensus(SolverError):
    """No hypothesis gathered enough inliers to be trusted."""


class CheiralityAmbiguous(SolverError):
    """No decomposition candidate puts a strict majority of points in front."""


class Correspondence(NamedTuple):
    """One pixel match: (u1, v1) in the source image, (u2, v2) in the target."""

    u1: float
    v1: float
    u2: float
    v2: float


@dataclass(frozen=True)
class RansacConfig:
    """Sampling budget and the inlier gate in normalized image coordinates."""

    max_iterations: int = 2000
    threshold: float = 1e-3
    confidence: float = 0.999
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise SolverError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.threshold <= 0:
            raise SolverError(f"threshold must be positive, got {self.threshold}")
        if not (0.0 < self.confidence < 1.0):
            raise SolverError(f"confidence must be in (0, 1), got {self.confidence}")


@dataclass(frozen=True, eq=False)
class EssentialMatrix:
    """Rank-2 matrix with two equal singular values, Frobenius-normalized."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise SolverError(f"essential matrix must be 3x3, got {m.shape}")
        s = np.linalg.svd(m, compute_uv=False)
        if s[2] > 1e-6 * s[0]:
            raise SolverError(f"not rank 2: singular values {s.tolist()}")
        if (s[0] - s[1]) > 1e-6 * s[0]:
            raise SolverError(f"unequal non-zero singular values {s.tolist()}")
        object.__setattr__(self, "matrix", m)


def _stack(pts: Sequence[Correspondence]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray([(p.u1, p.v1, p.u2, p.v2) for p in pts], dtype=float).reshape(-1, 4)
    if not np.all(np.isfinite(arr)):
        raise SolverError("correspondences contain non-finite coordinates")
    return arr[:, :2], arr[:, 2:]


def _normalize(pixels: np.ndarray, k: Intrinsics) -> np.ndarray:
    return np.column_stack([(pixels[:, 0] - k.cx) / k.fx, (pixels[:, 1] - k.cy) / k.fy])


def _condition(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate the centroid to the origin and scale RMS radius to sqrt(2)."""
    centroid = x.mean(axis=0)
    d = x - centroid
    rms = math.sqrt(float((d**2).sum(axis=1).mean()))
    if rms < 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / rms
    t = np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])
    return d * s, t


def _homogeneous(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(len(x))])


def _essential_from_normalized(xs: np.ndarray, xt: np.ndarray) -> np.ndarray:
    """Least-squares essential matrix from normalized coordinates.

    Solves ``hs^T E ht = 0`` after isotropic conditioning of both sides,
    then projects onto the essential manifold by forcing singular values
    (1, 1, 0).
    """
    n = len(xs)
    if n < 8:
        raise InsufficientPoints(f"need at least 8 correspondences, got {n}")
    xs_c, t_s = _condition(xs)
    xt_c, t_t = _condition(xt)
    hs = _homogeneous(xs_c)
    ht = _homogeneous(xt_c)
    a = np.einsum("ni,nj->nij", hs, ht).reshape(n, 9)
    _, sing, vt = np.linalg.svd(a)
    # Expected null space is one-dimensional; a vanishing 8th singular
    # value signals pure rotation or another degenerate arrangement.
    if sing[7] < 1e-9 * sing[0]:
        raise DegenerateConfiguration(
            f"design matrix rank-deficient (singular values {sing.tolist()})"
        )
    e_cond = vt[-1].reshape(3, 3)
    e = t_s.T @ e_cond @ t_t
    u, _, vt_e = np.linalg.svd(e)
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt_e


def epipolar_residuals(e: np.ndarray, xs: np.ndarray, xt: np.ndarray) -> np.ndarray:
    """Symmetric epipolar distance per point in normalized coordinates.

    Root sum of squared point-to-epipolar-line distances in both images.
    """
    hs = _homogeneous(xs)
    ht = _homogeneous(xt)
    val = np.einsum("ni,ij,nj->n", hs, e, ht)
    line_t = hs @ e  # epipolar line of the source point in the target image
    line_s = ht @ e.T
    nt = np.hypot(line_t[:, 0], line_t[:, 1])
    ns = np.hypot(line_s[:, 0], line_s[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        d_t = np.abs(val) / nt
        d_s = np.abs(val) / ns
    d_t = np.where(np.isfinite(d_t), d_t, np.inf)
    d_s = np.where(np.isfinite(d_s), d_s, np.inf)
    return np.sqrt(d_s**2 + d_t**2)


def eight_point_essential(
    pts: Sequence[Correspondence], k_src: Intrinsics, k_tgt: Intrinsics
) -> EssentialMatrix:
    """Normalized eight-point estimate over all given correspondences.

    Raises:
        InsufficientPoints: fewer than 8 matches.
        DegenerateConfiguration: rank-deficient input (pure rotation,
            coincident points, or similar).
    """
    src_px, tgt_px = _stack(pts)
    xs = _normalize(src_px, k_src)
    xt = _normalize(tgt_px, k_tgt)
    return EssentialMatrix(_essential_from_normalized(xs, xt))


def ransac_essential(
    pts: Sequence[Correspondence],
    k_src: Intrinsics,
    k_tgt: Intrinsics,
    cfg: RansacConfig = RansacConfig(),
) -> tuple[EssentialMatrix, np.ndarray]:
    """Robust essential-matrix fit; returns the model and its inlier mask.

    Minimal eight-point hypotheses are scored by symmetric epipolar
    distance; the iteration budget shrinks adaptively with the best inlier
    ratio at the configured confidence.  The final model is re-estimated
    on all inliers of the best hypothesis.  Fully deterministic for a
    fixed ``cfg.rng_seed``.

    Raises:
        NoConsensus: when the best support is no better than a minimal
            sample fitting itself (fewer than 9 inliers for n > 8).
    """
    src_px, tgt_px = _stack(pts)
    n = len(src_px)
    if n < 8:
        raise InsufficientPoints(f"need at least 8 correspondences, got {n}")
    xs = _normalize(src_px, k_src)
    xt = _normalize(tgt_px, k_tgt)
    rng = np.random.default_rng(cfg.rng_seed)

    best_count = 0
    best_mask: np.ndarray | None = None
    best_e: np.ndarray | None = None
    needed = cfg.max_iterations
    it = 0
    while it < min(needed, cfg.max_iterations):
        sample = rng.choice(n, size=8, replace=False)
        it += 1
        try:
            e = _essential_from_normalized(xs[sample], xt[sample])
        except DegenerateConfiguration:
            continue
        mask = epipolar_residuals(e, xs, xt) < cfg.threshold
        count = int(mask.sum())
        if count > best_count:
            # Local optimization: a minimal sample amplifies noise, so refit
            # on the hypothesis inliers while the support keeps growing.
            for _ in range(3):
                if count < 9:
                    break
                try:
                    e_ref = _essential_from_normalized(xs[mask], xt[mask])
                except (InsufficientPoints, DegenerateConfiguration):
                    break
                mask_ref = epipolar_residuals(e_ref, xs, xt) < cfg.threshold
                count_ref = int(mask_ref.sum())
                if count_ref <= count:
                    break
                e, mask, count = e_ref, mask_ref, count_ref
            best_count, best_mask, best_e = count, mask, e
            w = count / n
            p_sample = w**8
            if p_sample >= 1.0:
                needed = it
            else:
                denom = math.log1p(-p_sample)  # stays negative even when p underflows
                if denom < 0.0:
                    needed = min(
                        cfg.max_iterations,
                        math.ceil(math.log(1.0 - cfg.confidence) / denom),
                    )

    min_support = 8 if n == 8 else 9
    if best_mask is None or best_count < min_support:
        raise NoConsensus(f"best support {best_count} of {n} is below {min_support}")
    final_e, final_mask = best_e, best_mask
    try:
        refit = _essential_from_normalized(xs[best_mask], xt[best_mask])
        refit_mask = epipolar_residuals(refit, xs, xt) < cfg.threshold
        if int(refit_mask.sum()) >= min_support:
            final_e, final_mask = refit, refit_mask
    except (InsufficientPoints, DegenerateConfiguration):
        pass
    return EssentialMatrix(final_e), final_mask


_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def _triangulate_depths(r: np.ndarray, t: np.ndarray, xs: np.ndarray, xt: np.ndarray) -> np.ndarray:
    """Per-point (z_tgt, z_src) from linear two-view triangulation.

    The target camera is [I | 0]; the source camera is [R | t] so that
    ``p_src = R p_tgt + t``.  Points at (numerical) infinity get depth 0.
    """
    p_tgt = np.hstack([np.eye(3), np.zeros((3, 1))])
    p_src = np.hstack([r, t.reshape(3, 1)])
    depths = np.zeros((len(xs), 2))
    for idx in range(len(xs)):
        a = np.vstack(
            [
                xt[idx, 0] * p_tgt[2] - p_tgt[0],
                xt[idx, 1] * p_tgt[2] - p_tgt[1],
                xs[idx, 0] * p_src[2] - p_src[0],
                xs[idx, 1] * p_src[2] - p_src[1],
            ]
        )
        _, _, vt = np.linalg.svd(a)
        x_h = vt[-1]
        if abs(x_h[3]) < 1e-12:
            continue
        x = x_h[:3] / x_h[3]
        depths[idx, 0] = x[2]
        depths[idx, 1] = float(r[2] @ x + t[2])
    return depths


def decompose_essential(
    e: EssentialMatrix,
    pts: Sequence[Correspondence],
    k_src: Intrinsics,
    k_tgt: Intrinsics,
) -> tuple[np.ndarray, np.ndarray]:
    """Pick the (R, t) candidate that puts the points in front of both views.

    Of the four SVD candidates, returns the one with the strictly largest
    count of triangulated points having positive depth in both cameras;
    the translation comes back as a unit vector because its scale is
    unobservable.

    Raises:
        CheiralityAmbiguous: no candidate wins a strict majority of points.
    """
    src_px, tgt_px = _stack(pts)
    if len(src_px) < 1:
        raise InsufficientPoints("need at least 1 correspondence for cheirality")
    xs = _normalize(src_px, k_src)
    xt = _normalize(tgt_px, k_tgt)
    u, _, vt = np.linalg.svd(e.matrix)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    r1 = u @ _W @ vt
    r2 = u @ _W.T @ vt
    t = u[:, 2]
    candidates = [(r1, t), (r1, -t), (r2, t), (r2, -t)]
    counts = []
    for r_cand, t_cand in candidates:
        depths = _triangulate_depths(r_cand, t_cand, xs, xt)
        counts.append(int(np.sum((depths[:, 0] > 0) & (depths[:, 1] > 0))))
    best = int(np.argmax(counts))
    best_count = counts[best]
    if 2 * best_count <= len(xs) or counts.count(best_count) > 1:
        raise CheiralityAmbiguous(f"front-point counts {counts} over {len(xs)} points")
    r_best, t_best = candidates[best]
    return r_best, t_best / np.linalg.norm(t_best)


def estimate_relative_motion(
    pts: Sequence[Correspondence],
    k_src: Intrinsics,
    k_tgt: Intrinsics,
    cfg: RansacConfig = RansacConfig(),
) -> tuple[PoseVector, np.ndarray]:
    """Full pipeline: RANSAC fit, cheirality-resolved decomposition, angles.

    Returns the source-to-target pose vector (translation components form
    a unit direction) and the inlier mask.
    """
    e, mask = ransac_essential(pts, k_src, k_tgt, cfg)
    inliers = [p for p, keep in zip(pts, mask) if keep]
    r, t = decompose_essential(e, inliers, k_src, k_tgt)
    theta, phi, psi = euler_from_rotation(r)
    return PoseVector(theta, phi, psi, float(t[0]), float(t[1]), float(t[2])), mask


def classify_pair(v: PoseVector, rule: str = "yaw") -> int:
    """Binary label index from a pose vector.

    ``rule="yaw"`` uses the sign of the relative yaw (positive yaw is
    option 0, the travel-left motion); ``rule="lateral"`` uses the sign of
    the lateral translation (negative t_x, i.e. leftward travel, is option
    0).  Both agree on shared-point orbit motion; the option indexing
    matches ``curation.BENCH_LABELS``.

    Raises:
        AmbiguousMotion: the governing component is below 1e-9.
    """
    if rule == "yaw":
        governing = v.phi
        if abs(governing) <= 1e-9:
            raise AmbiguousMotion(f"yaw {governing:.2e} too small to classify")
        return 0 if governing > 0 else 1
    if rule == "lateral":
        governing = v.t_x
        if abs(governing) <= 1e-9:
            raise AmbiguousMotion(f"lateral translation {governing:.2e} too small to classify")
        return 0 if governing < 0 else 1
    raise SolverError(f"unknown classification rule {rule!r} (expected 'yaw' or 'lateral')")


def read_correspondences(path: Path) -> list[Correspondence]:
    """CSV with header ``u1,v1,u2,v2``, one pixel match per row."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"correspondence file not found: {path}")
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["u1", "v1", "u2", "v2"]:
            raise SolverError(f"{path}: expected header 'u1,v1,u2,v2', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SolverError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                out.append(Correspondence(*(float(x) for x in row)))
            except ValueError as exc:
                raise SolverError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_correspondences(pts: Sequence[Correspondence], path: Path) -> Path:
    lines = ["u1,v1,u2,v2"]
    lines += [f"{p.u1!r},{p.v1!r},{p.u2!r},{p.v2!r}" for p in pts]
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
    return Path(path)
