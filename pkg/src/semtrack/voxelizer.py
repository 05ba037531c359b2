"""Semantic point-cloud voxelization.

Points are projected into the front camera, painted with the class id found
at their pixel, and binned into a dense grid over the region of interest.
Each occupied cell stores one scalar feature:

* ``occupancy``: 1 for any occupied cell;
* ``intensity``: ``1 + mean intensity`` of the cell's points;
* ``semantic``: ``1 + c / (num_classes - 1)`` where ``c`` is the most
  frequent class among the cell's painted points (smallest id on ties).

Empty cells hold 0, so non-empty intensity/semantic cells live in ``[1, 2]``.

Grids serialize to the SVXL container: a 32-byte little-endian header
(``b"SVXL"``, version ``u32``, dims ``3 x u32``, mode ``u8``, 11 zero bytes)
followed by ``float32`` values in C order over ``(x, y, z)`` indices.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CalibrationError, ConfigError, DimensionError, FormatError, GridSpecError

MODES = ("occupancy", "intensity", "semantic")
SVXL_MAGIC = b"SVXL"
SVXL_VERSION = 1
_HEADER = struct.Struct("<4sI3IB11x")
assert _HEADER.size == 32


@dataclass
class PointCloud:
    """``points`` is an ``(N, 4)`` float array of ``x, y, z, intensity``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise DimensionError(f"point array must be (N, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DimensionError("point cloud contains non-finite values")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass
class SemanticMap:
    class_ids: np.ndarray  # (height, width) integer image
    num_classes: int = 19

    def __post_init__(self):
        ids = np.asarray(self.class_ids)
        if ids.ndim != 2:
            raise DimensionError(f"class map must be 2D, got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_classes):
            raise DimensionError(
                f"class ids must lie in [0, {self.num_classes}), found "
                f"[{ids.min()}, {ids.max()}]"
            )
        self.class_ids = ids.astype(np.int64)

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]


@dataclass
class Calibration:
    projection: np.ndarray  # 3x4, camera P2
    rectification: np.ndarray = field(default_factory=lambda: np.eye(3))
    lidar_to_cam: np.ndarray = field(default_factory=lambda: np.eye(4)[:3])
    image_size: Optional[tuple[int, int]] = None  # (width, height)

    def __post_init__(self):
        self.projection = np.asarray(self.projection, dtype=float).reshape(3, 4)
        self.rectification = np.asarray(self.rectification, dtype=float).reshape(3, 3)
        self.lidar_to_cam = np.asarray(self.lidar_to_cam, dtype=float).reshape(3, 4)
        for name in ("projection", "rectification", "lidar_to_cam"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise CalibrationError(f"{name} contains non-finite values")
        if np.linalg.matrix_rank(self.projection) < 3:
            raise CalibrationError("projection matrix is rank deficient")
        rot = self.lidar_to_cam[:, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise CalibrationError("lidar_to_cam rotation is not orthonormal")
        # files print ~7 significant digits, so allow 1e-5 slack here
        rect = self.rectification
        if not np.allclose(rect @ rect.T, np.eye(3), atol=1e-5):
            raise CalibrationError("rectification matrix is not orthonormal")

    def lidar_to_rect(self, xyz: np.ndarray) -> np.ndarray:
        """Sensor-frame points to rectified camera coordinates."""
        xyz = np.asarray(xyz, dtype=float)
        cam = xyz @ self.lidar_to_cam[:, :3].T + self.lidar_to_cam[:, 3]
        return cam @ self.rectification.T

    def rect_to_lidar(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=float)
        cam = np.linalg.solve(self.rectification, np.atleast_2d(xyz).T).T
        rot = self.lidar_to_cam[:, :3]
        out = (cam - self.lidar_to_cam[:, 3]) @ rot  # rot is orthonormal
        return out.reshape(np.shape(xyz))


@dataclass(frozen=True)
class GridSpec:
    roi_min: tuple[float, float, float] = (0.0, -40.0, -2.73)
    roi_max: tuple[float, float, float] = (60.0, 40.0, 1.27)
    dims: tuple[int, int, int] = (768, 1024, 21)

    def __post_init__(self):
        if len(self.roi_min) != 3 or len(self.roi_max) != 3 or len(self.dims) != 3:
            raise GridSpecError("roi_min, roi_max and dims must have 3 entries")
        if any(int(d) != d or d <= 0 for d in self.dims):
            raise GridSpecError(f"grid dims must be positive integers, got {self.dims}")
        if any(hi <= lo for lo, hi in zip(self.roi_min, self.roi_max)):
            raise GridSpecError("roi_max must exceed roi_min on every axis")
        object.__setattr__(self, "roi_min", tuple(float(v) for v in self.roi_min))
        object.__setattr__(self, "roi_max", tuple(float(v) for v in self.roi_max))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def cell_size(self) -> np.ndarray:
        return (np.array(self.roi_max) - np.array(self.roi_min)) / np.array(self.dims)

    @property
    def num_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=float)
        lo, hi = np.array(self.roi_min), np.array(self.roi_max)
        return np.all((xyz >= lo) & (xyz <= hi), axis=-1)

    def cell_index(self, xyz: np.ndarray) -> np.ndarray:
        """Integer ``(N, 3)`` cell indices; points on the upper face go to the last cell."""
        idx = np.floor((np.asarray(xyz, dtype=float) - np.array(self.roi_min)) / self.cell_size)
        idx = np.clip(idx, 0, np.array(self.dims) - 1)
        return idx.astype(np.int64)


@dataclass
class VoxelGrid:
    spec: GridSpec
    mode: str
    values: np.ndarray  # float32, shape spec.dims

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown voxel mode {self.mode!r}")

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(SVXL_MAGIC, SVXL_VERSION, *self.spec.dims, MODES.index(self.mode))
        body = np.ascontiguousarray(self.values, dtype="<f4").tobytes(order="C")
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes, spec: Optional[GridSpec] = None) -> "VoxelGrid":
        """Parse an SVXL buffer. ROI bounds are not stored, pass ``spec`` to restore them."""
        if len(data) < _HEADER.size:
            raise FormatError("truncated SVXL header", offset=len(data))
        magic, version, nx, ny, nz, mode = _HEADER.unpack_from(data)
        if magic != SVXL_MAGIC:
            raise FormatError(f"bad SVXL magic {magic!r}", offset=0)
        if version != SVXL_VERSION:
            raise FormatError(f"unsupported SVXL version {version}", offset=4)
        if mode >= len(MODES):
            raise FormatError(f"unknown SVXL mode {mode}", offset=20)
        expected = _HEADER.size + 4 * nx * ny * nz
        if len(data) != expected:
            raise FormatError(f"SVXL body size mismatch: expected {expected} bytes",
                              offset=len(data))
        if spec is None:
            spec = GridSpec(dims=(nx, ny, nz))
        elif spec.dims != (nx, ny, nz):
            raise DimensionError(f"grid dims {spec.dims} do not match file {(nx, ny, nz)}")
        values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(nx, ny, nz)
        return cls(spec, MODES[mode], values.astype(np.float32))


def project_to_image(cloud: PointCloud, calib: Calibration,
                     image_size: Optional[tuple[int, int]] = None):
    """Project sensor points into the image.

    Returns ``(uv, in_view)`` where ``uv`` is ``(N, 2)`` float pixel
    coordinates and ``in_view`` flags points in front of the camera whose
    nearest pixel lies inside ``image_size = (width, height)``. Without an
    image size only the depth test applies.
    """
    size = image_size or calib.image_size
    rect = calib.lidar_to_rect(cloud.xyz)
    homog = np.hstack([rect, np.ones((len(rect), 1))]) @ calib.projection.T
    depth = homog[:, 2]
    front = depth > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = homog[:, :2] / np.where(front, depth, 1.0)[:, None]
    uv[~front] = np.nan
    in_view = front.copy()
    if size is not None:
        px = _nearest_pixel(uv[front])
        w, h = size
        in_view[front] = (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
    return uv, in_view


def _nearest_pixel(uv: np.ndarray) -> np.ndarray:
    # round half up
    return np.floor(uv + 0.5).astype(np.int64)


def paint_semantics(cloud: PointCloud, semantic: SemanticMap,
                    calib: Calibration) -> np.ndarray:
    """Per-point class id, ``-1`` for points the camera does not see."""
    if calib.image_size is not None and tuple(calib.image_size) != (semantic.width,
                                                                     semantic.height):
        raise DimensionError(
            f"class map is {semantic.width}x{semantic.height} but calibration expects "
            f"{calib.image_size[0]}x{calib.image_size[1]}"
        )
    labels = np.full(len(cloud), -1, dtype=np.int64)
    if len(cloud) == 0:
        return labels
    uv, in_view = project_to_image(cloud, calib, (semantic.width, semantic.height))
    px = _nearest_pixel(uv[in_view])
    labels[in_view] = semantic.class_ids[px[:, 1], px[:, 0]]
    return labels


def voxelize(cloud: PointCloud, labels: Optional[np.ndarray] = None,
             spec: GridSpec = GridSpec(), mode: str = "occupancy",
             num_classes: int = 19, unlabeled_as_occupied: bool = False) -> VoxelGrid:
    """Bin a point cloud into a dense feature grid.

    ``labels`` (semantic mode only) holds one class id per point, ``-1`` for
    points outside the camera view. Cells whose points are all unlabeled stay
    empty unless ``unlabeled_as_occupied`` is set, in which case they get 1.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown voxel mode {mode!r}")
    values = np.zeros(spec.num_cells, dtype=np.float32)
    keep = spec.contains(cloud.xyz)
    if not np.any(keep):
        return VoxelGrid(spec, mode, values.reshape(spec.dims))
    idx = spec.cell_index(cloud.xyz[keep])
    nx, ny, nz = spec.dims
    flat = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]

    if mode == "occupancy":
        values[flat] = 1.0
    elif mode == "intensity":
        inten = np.clip(cloud.intensity[keep], 0.0, 1.0)
        cells, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
        sums = np.bincount(inverse, weights=inten, minlength=len(cells))
        values[cells] = (1.0 + sums / counts).astype(np.float32)
    else:
        if labels is None:
            raise ConfigError("semantic mode needs per-point labels")
        if num_classes < 2:
            raise ConfigError("semantic mode needs at least two classes")
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (len(cloud),):
            raise DimensionError("labels must hold one entry per point")
        lab = lab[keep]
        if np.any(lab >= num_classes):
            raise DimensionError(f"label outside [0, {num_classes})")
        if unlabeled_as_occupied:
            values[flat] = 1.0
        seen = lab >= 0
        if np.any(seen):
            key = flat[seen] * num_classes + lab[seen]
            keys, counts = np.unique(key, return_counts=True)
            cells, classes = keys // num_classes, keys % num_classes
            # per cell: highest count first, then smallest class id
            order = np.lexsort((classes, -counts, cells))
            cells, classes = cells[order], classes[order]
            first = np.ones(len(cells), dtype=bool)
            first[1:] = cells[1:] != cells[:-1]
            values[cells[first]] = (1.0 + classes[first] / (num_classes - 1)).astype(np.float32)
    return VoxelGrid(spec, mode, values.reshape(spec.dims))
