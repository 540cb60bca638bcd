"""Pseudo-ground-truth box generation.

For each sampled grid pixel the pipeline crops a vertical cylinder of points
around the predicted box centre (one crop per anchor), tracks the cropped
points forward through optic flow + depth for a few frames, fits an oriented
box to every tracked point set, and scores each anchor by how far the fitted
boxes moved minus how much their dimensions drifted. Pixels with a surviving
anchor become full box targets (U+); the rest only supervise confidence (U-).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bev import BoxGrid, GridSpec, decode_centre, require_grid_shape
from .dataset import SequenceIndex
from .errors import DegenerateInput, MissingFrameData
from .geometry import (
    CAMERA,
    LIDAR,
    CameraIntrinsics,
    Obb3,
    PointCloud,
    RigidTransform,
    canonical_yaw,
    transform_obb,
    yaw_matrix,
)
from .sampling import SamplerConfig, grid_centres, sample_pixels, smooth_confidence

# Pixel window half-width for the nearest-valid-depth search during tracking.
_DEPTH_SEARCH_RADIUS = 7

# Covariance eigenvalue ratio below which a point set counts as rank-deficient.
_RANK_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class Anchor:
    """Expected object size; dims = (lateral, vertical, longitudinal) extents."""

    name: str
    dims: np.ndarray

    def __post_init__(self):
        dims = np.array(self.dims, dtype=float).reshape(3)
        if not np.all(dims > 0):
            raise ValueError("anchor dims must be positive")
        dims.flags.writeable = False
        object.__setattr__(self, "dims", dims)

    def volume(self) -> float:
        return float(self.dims[0] * self.dims[1] * self.dims[2])

    def crop_radius(self) -> float:
        """Horizontal radius of the anchor's crop cylinder."""
        return 0.5 * math.hypot(float(self.dims[0]), float(self.dims[2]))


def default_anchors() -> list[Anchor]:
    return [
        Anchor("pedestrian", (0.45, 1.70, 0.27)),
        Anchor("cyclist", (0.54, 1.90, 1.75)),
        Anchor("vehicle", (1.88, 1.63, 4.58)),
    ]


@dataclass(frozen=True)
class ScorerConfig:
    """Temporal-consistency scoring parameters."""

    score_threshold: float = 0.08
    moving_weight: float = 0.4
    inconsistency_weight: float = 0.15
    k_frames: int = 3

    def __post_init__(self):
        if self.k_frames < 1:
            raise ValueError("k_frames must be >= 1")
        if self.moving_weight < 0 or self.inconsistency_weight < 0:
            raise ValueError("score weights must be >= 0")


@dataclass
class TrackedPointSets:
    """K+1 point sets, all expressed in the camera frame of the start frame.

    positions[k] holds one row per original point; alive[k] marks the points
    whose track survived up to step k (set 0 is the crop itself, all alive).
    Rows of dead points carry stale values and must be ignored.
    """

    positions: np.ndarray  # (K+1, n, 3)
    alive: np.ndarray  # (K+1, n) bool

    def point_set(self, k: int) -> np.ndarray:
        return self.positions[k][self.alive[k]]

    @property
    def steps(self) -> int:
        return self.positions.shape[0] - 1


@dataclass(frozen=True, eq=False)
class PseudoLabel:
    """A full training target: pixel, fitted lidar-frame box, confidence, anchor."""

    pixel: tuple[int, int]
    box: Obb3
    confidence: float
    anchor: str

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("target confidence must lie in [0, 1]")


@dataclass
class AnchorScore:
    moving: float
    inconsistency: float
    confidence: float  # -inf when the anchor's crop or tracking degenerated


@dataclass
class PixelDiagnostics:
    pixel: tuple[int, int]
    smoothed_confidence: float
    anchor_scores: dict[str, AnchorScore] = field(default_factory=dict)
    chosen_anchor: str | None = None


@dataclass
class PgtResult:
    u_plus: list[PseudoLabel]
    u_minus: list[tuple[tuple[int, int], float]]
    diagnostics: list[PixelDiagnostics]

    def __iter__(self):
        yield self.u_plus
        yield self.u_minus


@dataclass
class FrameWindow:
    """Everything the pipeline needs for frames t .. t+K.

    depths and poses cover t..t+K (K+1 entries); flows cover t..t+K-1.
    """

    cloud: PointCloud
    depths: list[np.ndarray]
    flows: list[np.ndarray]
    poses: list[RigidTransform]
    intrinsics: CameraIntrinsics
    lidar_to_cam: RigidTransform

    def validate(self, k_frames: int):
        if len(self.depths) < k_frames + 1 or len(self.poses) < k_frames + 1:
            raise MissingFrameData(
                f"need {k_frames + 1} depths/poses, have {len(self.depths)}/{len(self.poses)}"
            )
        if len(self.flows) < k_frames:
            raise MissingFrameData(f"need {k_frames} flow images, have {len(self.flows)}")

    @staticmethod
    def from_sequence(seq: SequenceIndex, t: int, k_frames: int) -> "FrameWindow":
        if t < 0 or t + k_frames >= seq.n_frames:
            raise MissingFrameData(
                f"frame window {t}..{t + k_frames} outside sequence of {seq.n_frames} frames"
            )
        return FrameWindow(
            cloud=seq.read_cloud(t),
            depths=[seq.read_depth(t + i) for i in range(k_frames + 1)],
            flows=[seq.read_flow(t + i) for i in range(k_frames)],
            poses=[seq.poses[t + i] for i in range(k_frames + 1)],
            intrinsics=seq.calibration.intrinsics,
            lidar_to_cam=seq.calibration.lidar_to_cam,
        )


# ---------------------------------------------------------------------------
# cropping


def _crop_camera_points(pts_cam: np.ndarray, centre_cam: np.ndarray, anchor: Anchor) -> np.ndarray:
    dy = np.abs(pts_cam[:, 1] - centre_cam[1])
    dh = np.hypot(pts_cam[:, 0] - centre_cam[0], pts_cam[:, 2] - centre_cam[2])
    keep = (dy < 0.5 * anchor.dims[1]) & (dh < anchor.crop_radius())
    return pts_cam[keep]


def crop_cylinder(
    cloud: PointCloud, centre_lidar, anchor: Anchor, lidar_to_cam: RigidTransform
) -> np.ndarray:
    """Crop the points inside an anchor-sized vertical cylinder, in camera frame.

    Both the points and the centre are moved to camera space first, where the
    vertical axis is unambiguous: a point survives if its height differs from
    the centre's by less than half the anchor height and its horizontal
    distance is below half the anchor's footprint diagonal (strict tests).
    """
    if cloud.frame != LIDAR:
        raise ValueError("crop_cylinder expects a lidar-frame cloud")
    if len(cloud) == 0:
        return np.zeros((0, 3))
    pts = lidar_to_cam.apply(cloud.xyz)
    centre = lidar_to_cam.apply(np.asarray(centre_lidar, dtype=float))
    return _crop_camera_points(pts, centre, anchor)


# ---------------------------------------------------------------------------
# tracking


def _sample_flow(flow: np.ndarray, valid: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Flow values at continuous (u, v) positions.

    Bilinear over the 4 surrounding pixels when all are valid; otherwise the
    value at the nearest valid one of the 4 (ties by (row, col) order); no
    valid neighbour kills the track.
    """
    h, w = valid.shape
    c0 = np.floor(u).astype(int)
    r0 = np.floor(v).astype(int)
    fu = u - c0
    fv = v - r0

    # Candidate pixels in (row, col) lexicographic order.
    cand_r = np.stack([r0, r0, r0 + 1, r0 + 1], axis=1)
    cand_c = np.stack([c0, c0 + 1, c0, c0 + 1], axis=1)
    in_img = (cand_r >= 0) & (cand_r < h) & (cand_c >= 0) & (cand_c < w)
    rr = np.clip(cand_r, 0, h - 1)
    cc = np.clip(cand_c, 0, w - 1)
    usable = in_img & valid[rr, cc]

    out = np.zeros((len(u), 2))
    ok = usable.any(axis=1)

    all_four = usable.all(axis=1)
    if all_four.any():
        idx = np.flatnonzero(all_four)
        w00 = (1 - fu[idx]) * (1 - fv[idx])
        w01 = fu[idx] * (1 - fv[idx])
        w10 = (1 - fu[idx]) * fv[idx]
        w11 = fu[idx] * fv[idx]
        out[idx] = (
            flow[rr[idx, 0], cc[idx, 0]] * w00[:, None]
            + flow[rr[idx, 1], cc[idx, 1]] * w01[:, None]
            + flow[rr[idx, 2], cc[idx, 2]] * w10[:, None]
            + flow[rr[idx, 3], cc[idx, 3]] * w11[:, None]
        )

    partial = ok & ~all_four
    if partial.any():
        idx = np.flatnonzero(partial)
        d2 = (cand_r[idx] - v[idx, None]) ** 2 + (cand_c[idx] - u[idx, None]) ** 2
        d2[~usable[idx]] = np.inf
        pick = np.argmin(d2, axis=1)  # first minimum = (row, col) tie-break
        out[idx] = flow[rr[idx, pick], cc[idx, pick]]
    return out, ok


def _scan_depth_window(depth, u, v, rows, cols, radius):
    """Best valid pixel per point within a (2*radius+1)^2 window; inf if none.

    Row-major window order coincides with (row, col) order, so the first
    minimum argmin returns is also the lexicographic tie-break winner.
    """
    h, w = depth.shape
    n = len(u)
    span = np.arange(-radius, radius + 1)
    size = len(span)
    win_r = np.broadcast_to(rows[:, None, None] + span[None, :, None], (n, size, size))
    win_c = np.broadcast_to(cols[:, None, None] + span[None, None, :], (n, size, size))
    in_img = (win_r >= 0) & (win_r < h) & (win_c >= 0) & (win_c < w)
    rr = np.clip(win_r, 0, h - 1)
    ww = np.clip(win_c, 0, w - 1)
    usable = in_img & (depth[rr, ww] > 0)
    d2 = (win_r - v[:, None, None]) ** 2 + (win_c - u[:, None, None]) ** 2
    d2 = np.where(usable, d2, np.inf).reshape(n, -1)
    pick = np.argmin(d2, axis=1)
    ar = np.arange(n)
    return rr.reshape(n, -1)[ar, pick], ww.reshape(n, -1)[ar, pick], d2[ar, pick]


def _nearest_valid_depth(depth: np.ndarray, u: np.ndarray, v: np.ndarray, radius: int):
    """Nearest pixel with valid depth within a square window around (u, v).

    Distance is Euclidean to the continuous position; exact ties resolve to
    the lexicographically first (row, col). Returns (rows, cols, depths, ok).

    A 3x3 pre-pass resolves most points exactly: any pixel outside it is at
    least 1.5 px away, so an inside candidate nearer than that cannot be
    beaten by the full window.
    """
    rows = np.floor(v + 0.5).astype(int)
    cols = np.floor(u + 0.5).astype(int)
    best_r, best_c, best_d2 = _scan_depth_window(depth, u, v, rows, cols, 1)
    if radius > 1:
        unresolved = ~(best_d2 < 2.25)
        if unresolved.any():
            idx = np.flatnonzero(unresolved)
            fr, fc, fd2 = _scan_depth_window(depth, u[idx], v[idx], rows[idx], cols[idx], radius)
            best_r[idx], best_c[idx], best_d2[idx] = fr, fc, fd2
    ok = np.isfinite(best_d2)
    return best_r, best_c, depth[best_r, best_c], ok


def track_points(
    points,
    flows,
    depths,
    poses,
    k_frames: int,
    intrinsics: CameraIntrinsics,
) -> TrackedPointSets:
    """Track camera-frame points of frame t forward for k_frames frames.

    Each step projects the current positions into the image, advances them by
    the optic flow, snaps to the nearest valid depth pixel of the next frame
    and backprojects. Tracked sets for k >= 1 are mapped back into frame t via
    the ego poses; points whose projection or depth search fails are masked
    out from that step onward.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    if len(depths) < k_frames + 1 or len(poses) < k_frames + 1 or len(flows) < k_frames:
        raise MissingFrameData(
            f"tracking {k_frames} steps needs {k_frames + 1} depths/poses and {k_frames} flows"
        )
    positions = np.zeros((k_frames + 1, n, 3))
    alive = np.zeros((k_frames + 1, n), dtype=bool)
    positions[0] = pts
    alive[0] = True
    if n == 0:
        return TrackedPointSets(positions, alive)

    current = pts.copy()  # camera coords at frame t+k
    live = np.ones(n, dtype=bool)
    to_start = poses[0].invert()
    for k in range(k_frames):
        z = current[:, 2]
        live &= z > 0
        safe_z = np.where(z > 0, z, 1.0)
        u = intrinsics.fx * current[:, 0] / safe_z + intrinsics.cx
        v = intrinsics.fy * current[:, 1] / safe_z + intrinsics.cy
        flow_uv, flow_ok = _sample_flow(flows[k], depths[k] > 0, u, v)
        live &= flow_ok
        u2 = u + flow_uv[:, 0]
        v2 = v + flow_uv[:, 1]
        pr, pc, d, depth_ok = _nearest_valid_depth(depths[k + 1], u2, v2, _DEPTH_SEARCH_RADIUS)
        live &= depth_ok
        safe_d = np.where(d > 0, d, 1.0)
        nxt = np.stack(
            [
                (pc - intrinsics.cx) / intrinsics.fx * safe_d,
                (pr - intrinsics.cy) / intrinsics.fy * safe_d,
                safe_d,
            ],
            axis=1,
        )
        current = np.where(live[:, None], nxt, current)
        to_frame_t = to_start.compose(poses[k + 1])
        positions[k + 1] = to_frame_t.apply(current)
        alive[k + 1] = live
    return TrackedPointSets(positions, alive)


# ---------------------------------------------------------------------------
# box fitting


def principal_direction(points) -> np.ndarray:
    """Unit eigenvector of the point covariance with the largest eigenvalue."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    centred = pts - pts.mean(axis=0)
    cov = centred.T @ centred / len(pts)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, 2]


def fit_obb(points) -> Obb3:
    """Fit an oriented box to camera-frame points.

    Centre = point mean; yaw = angle of the first principal component in the
    BEV plane; dims = axis extents after undoing the yaw. The fit is
    canonicalized so the box-local x extent never exceeds the z extent
    (swapping the horizontal axes rotates the yaw by 90 degrees and leaves the
    geometry untouched), which makes fits of the same object comparable across
    frames. Raises DegenerateInput for < 3 points or rank-deficient spreads.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateInput(f"box fitting needs >= 3 points, got {len(pts)}")
    centre = pts.mean(axis=0)
    centred = pts - centre
    cov = centred.T @ centred / len(pts)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= _RANK_EPS * max(vals[2], _RANK_EPS):
        raise DegenerateInput("point covariance is rank-deficient")
    e = vecs[:, 2]
    yaw = canonical_yaw(math.atan2(e[2], e[0]))
    local = centred @ yaw_matrix(CAMERA, yaw)  # rotate by -yaw about vertical
    dims = local.max(axis=0) - local.min(axis=0)
    if dims[0] > dims[2]:
        dims = dims[[2, 1, 0]]
        yaw = canonical_yaw(yaw + 0.5 * math.pi)
    return Obb3(centre, dims, yaw, CAMERA)


# ---------------------------------------------------------------------------
# scoring and anchor selection


def moving_score(boxes) -> float:
    """Total distance the fitted box centres travelled across the set."""
    boxes = list(boxes)
    return float(
        sum(
            np.linalg.norm(boxes[k].centre - boxes[k - 1].centre)
            for k in range(1, len(boxes))
        )
    )


def inconsistency_score(boxes) -> float:
    """Summed dimension drift of the fitted boxes relative to the first one."""
    boxes = list(boxes)
    return float(
        sum(np.linalg.norm(boxes[k].dims - boxes[0].dims) for k in range(1, len(boxes)))
    )


def combined_confidence(moving: float, inconsistency: float, cfg: ScorerConfig) -> float:
    return cfg.moving_weight * moving - cfg.inconsistency_weight * inconsistency


def select_anchor(scores, anchors, score_threshold: float):
    """Pick the surviving anchor with the largest volume, if any survive.

    `scores` and `anchors` are parallel sequences. Anchors scoring below the
    threshold are dropped; exact volume ties resolve to the earlier anchor.
    Returns (anchor, score) or None.
    """
    best = None
    for anchor, score in zip(anchors, scores):
        if score < score_threshold:
            continue
        if best is None or anchor.volume() > best[0].volume():
            best = (anchor, score)
    return best


def _clamp01(value: float) -> float:
    if value != value or value == -math.inf:  # NaN or -inf
        return 0.0
    return min(max(value, 0.0), 1.0)


def generate_pseudo_labels(
    window: FrameWindow,
    grid: BoxGrid,
    spec: GridSpec,
    anchors=None,
    sampler_cfg: SamplerConfig | None = None,
    scorer_cfg: ScorerConfig | None = None,
) -> PgtResult:
    """Run the full crop/track/fit/score pipeline over sampled pixels.

    Pixels with a surviving anchor yield a PseudoLabel whose box is the fit of
    the crop itself (step 0) brought back into lidar space; their target
    confidence is the anchor's score clamped to [0, 1]. The rest land in U-
    with the clamped best score across anchors (empty or degenerate crops
    score -inf and clamp to 0). Results are ordered by pixel.
    """
    anchors = list(anchors) if anchors is not None else default_anchors()
    sampler_cfg = sampler_cfg or SamplerConfig()
    scorer_cfg = scorer_cfg or ScorerConfig()
    require_grid_shape(grid, spec)
    window.validate(scorer_cfg.k_frames)

    cam_to_lidar = window.lidar_to_cam.invert()
    centres = grid_centres(grid, spec)
    pixels = sorted(sample_pixels(grid, spec, sampler_cfg))
    cloud_cam = window.lidar_to_cam.apply(window.cloud.xyz)

    u_plus: list[PseudoLabel] = []
    u_minus: list[tuple[tuple[int, int], float]] = []
    diagnostics: list[PixelDiagnostics] = []
    for pixel in pixels:
        code = grid.code_at(pixel)
        predicted_centre = decode_centre(pixel, code, spec)
        centre_cam = window.lidar_to_cam.apply(predicted_centre)
        diag = PixelDiagnostics(
            pixel=pixel,
            smoothed_confidence=smooth_confidence(grid, spec, pixel, centres),
        )
        scores = []
        first_fits = {}
        for anchor in anchors:
            crop = _crop_camera_points(cloud_cam, centre_cam, anchor)
            score = AnchorScore(0.0, 0.0, -math.inf)
            if len(crop) >= 3:
                try:
                    tracked = track_points(
                        crop,
                        window.flows,
                        window.depths,
                        window.poses,
                        scorer_cfg.k_frames,
                        window.intrinsics,
                    )
                    boxes = [fit_obb(tracked.point_set(k)) for k in range(tracked.steps + 1)]
                except DegenerateInput:
                    boxes = None
                if boxes is not None:
                    score.moving = moving_score(boxes)
                    score.inconsistency = inconsistency_score(boxes)
                    score.confidence = combined_confidence(
                        score.moving, score.inconsistency, scorer_cfg
                    )
                    first_fits[anchor.name] = boxes[0]
            diag.anchor_scores[anchor.name] = score
            scores.append(score.confidence)
        selected = select_anchor(scores, anchors, scorer_cfg.score_threshold)
        if selected is not None:
            anchor, score = selected
            box_lidar = transform_obb(first_fits[anchor.name], cam_to_lidar, LIDAR)
            u_plus.append(PseudoLabel(pixel, box_lidar, _clamp01(score), anchor.name))
            diag.chosen_anchor = anchor.name
        else:
            u_minus.append((pixel, _clamp01(max(scores, default=-math.inf))))
        diagnostics.append(diag)
    return PgtResult(u_plus, u_minus, diagnostics)
