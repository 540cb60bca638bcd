"""On-disk formats and sequence ingestion.

Directory layout of a sequence:

    sequence/
      velodyne/000000.bin ...   point clouds, 4 x float32-LE per point
      depth/000000.bin+json ... sparse depth rasters (depth <= 0 marks invalid)
      flow/000000.bin+json ...  forward optic flow rasters, 2 channels
      poses.txt                 one 3x4 row-major camera->world matrix per line
      calib.txt                 intrinsics + lidar->camera extrinsics
      label_2/000000.txt ...    KITTI-format labels (optional)

All binary payloads are little-endian float32 with a JSON sidecar recording
shape, dtype and the invalid-value sentinel.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bev import BoxGrid, GridSpec, require_grid_shape
from .errors import MalformedFile, MalformedLine, ShapeMismatch
from .geometry import AABB2, CAMERA, CameraIntrinsics, Obb3, PointCloud, RigidTransform

_POINT_RECORD_BYTES = 16  # 4 little-endian float32 per point


# ---------------------------------------------------------------------------
# point clouds


def read_cloud(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % _POINT_RECORD_BYTES:
        raise MalformedFile(
            f"{path}: size {len(raw)} is not a multiple of {_POINT_RECORD_BYTES}"
        )
    pts = np.frombuffer(raw, dtype="<f4").astype(float).reshape(-1, 4)
    if pts.size:
        pts[:, 3] = np.clip(pts[:, 3], 0.0, 1.0)
    return PointCloud(pts, frame="lidar")


def write_cloud(path, cloud: PointCloud):
    Path(path).write_bytes(cloud.points.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# poses


def _reorthonormalize(rot: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rot)
    fix = np.diag([1.0, 1.0, np.linalg.det(u @ vt)])
    return u @ fix @ vt


def read_poses(path) -> list[RigidTransform]:
    """Parse one 3x4 row-major camera->world matrix per line.

    Rotations drifting from orthonormality by more than 1e-6 are repaired with
    a warning; drift beyond 1e-3 is rejected.
    """
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 12:
            raise MalformedLine(f"{path}:{lineno + 1}: expected 12 values, got {len(fields)}")
        try:
            values = np.array([float(v) for v in fields]).reshape(3, 4)
        except ValueError as exc:
            raise MalformedLine(f"{path}:{lineno + 1}: {exc}") from exc
        rot, tra = values[:, :3], values[:, 3]
        drift = max(
            np.abs(rot.T @ rot - np.eye(3)).max(), abs(np.linalg.det(rot) - 1.0)
        )
        if drift > 1e-3:
            raise MalformedLine(f"{path}:{lineno + 1}: rotation drift {drift:.3g} beyond 1e-3")
        if drift > 1e-6:
            warnings.warn(f"{path}:{lineno + 1}: re-orthonormalizing rotation (drift {drift:.3g})")
            rot = _reorthonormalize(rot)
        poses.append(RigidTransform(rot, tra))
    return poses


def write_poses(path, poses):
    lines = []
    for pose in poses:
        m = np.hstack([pose.rotation, pose.translation.reshape(3, 1)])
        lines.append(" ".join(f"{v:.17g}" for v in m.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class Calibration:
    lidar_to_cam: RigidTransform
    intrinsics: CameraIntrinsics


def read_calib(path) -> Calibration:
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        if ":" not in line:
            raise MalformedLine(f"{path}:{lineno + 1}: expected 'key: values'")
        key, _, rest = line.partition(":")
        try:
            entries[key.strip()] = [float(v) for v in rest.split()]
        except ValueError as exc:
            raise MalformedLine(f"{path}:{lineno + 1}: {exc}") from exc
    try:
        fx, fy, cx, cy, width, height = entries["intrinsics"]
        extr = np.array(entries["lidar_to_cam"]).reshape(3, 4)
    except (KeyError, ValueError) as exc:
        raise MalformedLine(f"{path}: missing or malformed calibration entries") from exc
    return Calibration(
        RigidTransform(extr[:, :3], extr[:, 3]),
        CameraIntrinsics(fx, fy, cx, cy, int(width), int(height)),
    )


def write_calib(path, calib: Calibration):
    intr = calib.intrinsics
    extr = np.hstack(
        [calib.lidar_to_cam.rotation, calib.lidar_to_cam.translation.reshape(3, 1)]
    )
    lines = [
        "intrinsics: "
        + " ".join(
            f"{v:.17g}" for v in (intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height)
        ),
        "lidar_to_cam: " + " ".join(f"{v:.17g}" for v in extr.reshape(-1)),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# KITTI-format labels

_SKIPPED_CLASSES = {"DontCare"}


@dataclass
class LabelRecord:
    """One KITTI label row. The box is camera-frame with a volumetric centre.

    KITTI stores dims as (h, w, l) = (dims_y, dims_x, dims_z) and the location
    as the box-bottom centre; the conversions below shift by h/2 on y. The raw
    rotation_y is kept verbatim so that re-writing a parsed file does not lose
    the representative chosen by the annotator (Obb3 canonicalizes yaw).
    """

    cls: str
    box: Obb3
    bbox2d: AABB2 = field(default_factory=lambda: AABB2((0.0, 0.0), (0.0, 0.0)))
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float = -10.0
    rotation_y: float | None = None
    score: float | None = None

    def __post_init__(self):
        if self.rotation_y is None:
            self.rotation_y = self.box.yaw


def _label_from_fields(fields, where) -> LabelRecord:
    if len(fields) not in (15, 16):
        raise MalformedLine(f"{where}: expected 15 or 16 columns, got {len(fields)}")
    cls = fields[0]
    try:
        vals = [float(v) for v in fields[1:]]
    except ValueError as exc:
        raise MalformedLine(f"{where}: {exc}") from exc
    trunc, occ, alpha = vals[0], int(vals[1]), vals[2]
    left, top, right, bottom = vals[3:7]
    h, w, l = vals[7:10]
    x, y, z = vals[10:13]
    rot_y = vals[13]
    score = vals[14] if len(vals) == 15 else None
    box = Obb3((x, y - h / 2.0, z), (w, h, l), rot_y, CAMERA)
    return LabelRecord(
        cls=cls,
        box=box,
        bbox2d=AABB2((left, top), (right, bottom)),
        truncation=trunc,
        occlusion=occ,
        alpha=alpha,
        rotation_y=rot_y,
        score=score,
    )


def read_labels(path) -> list[LabelRecord]:
    """Parse a KITTI label file, skipping DontCare rows."""
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        fields = line.split()
        if fields[0] in _SKIPPED_CLASSES:
            continue
        records.append(_label_from_fields(fields, f"{path}:{lineno + 1}"))
    return records


def label_line(record: LabelRecord) -> str:
    box = record.box
    w, h, l = box.dims[0], box.dims[1], box.dims[2]
    bottom_centre = (box.centre[0], box.centre[1] + h / 2.0, box.centre[2])
    fields = [
        record.cls,
        f"{record.truncation:.6f}",
        str(int(record.occlusion)),
        f"{record.alpha:.6f}",
        f"{record.bbox2d.min_corner[0]:.6f}",
        f"{record.bbox2d.min_corner[1]:.6f}",
        f"{record.bbox2d.max_corner[0]:.6f}",
        f"{record.bbox2d.max_corner[1]:.6f}",
        f"{h:.6f}",
        f"{w:.6f}",
        f"{l:.6f}",
        f"{bottom_centre[0]:.6f}",
        f"{bottom_centre[1]:.6f}",
        f"{bottom_centre[2]:.6f}",
        f"{record.rotation_y:.6f}",
    ]
    if record.score is not None:
        fields.append(f"{record.score:.6f}")
    return " ".join(fields)


def write_labels(path, records):
    Path(path).write_text("".join(label_line(r) + "\n" for r in records))


# ---------------------------------------------------------------------------
# flat binary rasters (depth, flow, BEV images, box grids)


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_raster(path, array, sentinel=None):
    """Write a (rows, cols[, channels]) array as float32-LE plus a JSON sidecar."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("raster must be 2D or 3D")
    Path(path).write_bytes(arr.tobytes())
    meta = {
        "rows": arr.shape[0],
        "cols": arr.shape[1],
        "channels": arr.shape[2],
        "dtype": "<f4",
        "order": "row-major",
        "sentinel": sentinel,
    }
    _sidecar_path(path).write_text(json.dumps(meta) + "\n")


def read_raster(path):
    """Read a raster written by write_raster; returns (array, sentinel)."""
    meta_path = _sidecar_path(path)
    if not meta_path.exists():
        raise MalformedFile(f"{path}: missing sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    rows, cols, channels = meta["rows"], meta["cols"], meta["channels"]
    raw = Path(path).read_bytes()
    expected = rows * cols * channels * 4
    if len(raw) != expected:
        raise MalformedFile(f"{path}: size {len(raw)}, sidecar implies {expected}")
    arr = np.frombuffer(raw, dtype="<f4").astype(float).reshape(rows, cols, channels)
    if channels == 1:
        arr = arr[:, :, 0]
    return arr, meta.get("sentinel")


def write_depth(path, depth):
    """Depth raster; entries <= 0 mark invalid pixels."""
    write_raster(path, depth, sentinel=0.0)


def read_depth(path) -> np.ndarray:
    arr, _ = read_raster(path)
    if arr.ndim != 2:
        raise MalformedFile(f"{path}: depth raster must have a single channel")
    return arr


def write_flow(path, flow):
    write_raster(path, flow, sentinel=None)


def read_flow(path) -> np.ndarray:
    arr, _ = read_raster(path)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise MalformedFile(f"{path}: flow raster must have two channels")
    return arr


def write_box_grid(path, grid: BoxGrid):
    write_raster(path, grid.data, sentinel=None)


def read_box_grid(path, spec: GridSpec) -> BoxGrid:
    arr, _ = read_raster(path)
    if arr.ndim != 3 or arr.shape[2] != 8:
        raise ShapeMismatch(f"{path}: box grid must have 8 channels")
    grid = BoxGrid(arr)
    require_grid_shape(grid, spec)
    return grid


# ---------------------------------------------------------------------------
# sequences


@dataclass
class SequenceIndex:
    """Resolved paths and shared calibration for one recorded/simulated sequence."""

    root: Path
    calibration: Calibration
    poses: list[RigidTransform]
    n_frames: int

    def cloud_path(self, t) -> Path:
        return self.root / "velodyne" / f"{t:06d}.bin"

    def depth_path(self, t) -> Path:
        return self.root / "depth" / f"{t:06d}.bin"

    def flow_path(self, t) -> Path:
        return self.root / "flow" / f"{t:06d}.bin"

    def label_path(self, t) -> Path:
        return self.root / "label_2" / f"{t:06d}.txt"

    def read_cloud(self, t) -> PointCloud:
        return read_cloud(self.cloud_path(t))

    def read_depth(self, t) -> np.ndarray:
        return read_depth(self.depth_path(t))

    def read_flow(self, t) -> np.ndarray:
        return read_flow(self.flow_path(t))

    def read_labels(self, t) -> list[LabelRecord]:
        return read_labels(self.label_path(t))


def load_sequence(root) -> SequenceIndex:
    """Index a sequence directory, checking the frame files are contiguous from 0."""
    root = Path(root)
    velo = root / "velodyne"
    if not velo.is_dir():
        raise MalformedFile(f"{root}: missing velodyne/ directory")
    frames = sorted(velo.glob("*.bin"))
    indices = sorted(int(p.stem) for p in frames)
    if indices != list(range(len(indices))):
        raise MalformedFile(f"{root}: frame indices are not contiguous from 0")
    calib = read_calib(root / "calib.txt")
    poses = read_poses(root / "poses.txt")
    if len(poses) < len(indices):
        raise MalformedFile(
            f"{root}: {len(poses)} poses for {len(indices)} frames"
        )
    index = SequenceIndex(root, calib, poses, len(indices))
    for sub, suffix in (("depth", ".bin"), ("flow", ".bin")):
        if (root / sub).is_dir():
            for t in range(index.n_frames):
                p = root / sub / f"{t:06d}{suffix}"
                if not p.exists():
                    raise MalformedFile(f"{root}: missing {p.relative_to(root)}")
    return index
