"""Readers and writers for KITTI-style files.

Formats handled:

* velodyne scans: little-endian ``float32`` quadruples ``x, y, z, intensity``;
* object labels (15 fields, +1 score) and tracking labels (17 fields, +1
  score, leading ``frame track_id``);
* calibration text files (``P2``, ``R0_rect``, ``Tr_velo_to_cam``);
* 8-bit single-channel PNG class maps.

Labels live in the rectified camera frame with the location at the bottom
center of the box. ``box_from_record`` / ``record_from_box`` bridge to
sensor-frame :class:`~semtrack.geometry.OrientedBox3D` and are the only place
where the yaw convention is converted.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import CalibrationError, ConfigError, DimensionError, FormatError, InputError
from .geometry import OrientedBox3D, wrap_angle
from .voxelizer import Calibration, PointCloud, SemanticMap

FLAVORS = ("object", "tracking")
_BASE_FIELDS = {"object": 15, "tracking": 17}
MAX_FRAMES = 1_000_000  # sequences are padded to max(frame) + 1, so bound it


# ------------------------------------------------------------------ velodyne

def read_point_cloud(data: bytes) -> PointCloud:
    if len(data) % 16:
        raise FormatError("trailing partial point record", offset=len(data) - len(data) % 16)
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        bad = int(np.argwhere(~np.isfinite(pts))[0, 0])
        raise FormatError("non-finite point coordinate", offset=16 * bad)
    return PointCloud(pts.astype(np.float64))


def write_point_cloud(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


# -------------------------------------------------------------------- labels

@dataclass
class LabelRecord:
    type: str
    truncated: float = 0.0
    occluded: int = 0
    alpha: float = 0.0
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    dimensions: tuple[float, float, float] = (1.0, 1.0, 1.0)  # h, w, l
    location: tuple[float, float, float] = (0.0, 0.0, 0.0)  # x, y, z camera frame
    rotation_y: float = 0.0
    score: Optional[float] = None
    frame: Optional[int] = None
    track_id: Optional[int] = None

    @property
    def evaluable(self) -> bool:
        return self.type != "DontCare"


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def format_record(rec: LabelRecord, flavor: str) -> str:
    parts = []
    if flavor == "tracking":
        parts += [str(int(rec.frame)), str(int(rec.track_id))]
    parts += [rec.type, _fmt(rec.truncated), str(int(rec.occluded)), _fmt(rec.alpha)]
    parts += [_fmt(v) for v in rec.bbox]
    parts += [_fmt(v) for v in rec.dimensions]
    parts += [_fmt(v) for v in rec.location]
    parts.append(_fmt(rec.rotation_y))
    if rec.score is not None:
        parts.append(_fmt(rec.score))
    return " ".join(parts)


def format_labels(records: Iterable[LabelRecord], flavor: str = "tracking") -> str:
    _check_flavor(flavor)
    lines = [format_record(r, flavor) for r in records]
    return "".join(line + "\n" for line in lines)


def _check_flavor(flavor):
    if flavor not in FLAVORS:
        raise ConfigError(f"flavor must be one of {FLAVORS}, got {flavor!r}")


def _to_float(tok: str, lineno: int, name: str) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise FormatError(f"field {name!r} is not a number: {tok!r}", line=lineno) from None
    if not math.isfinite(v):
        raise FormatError(f"field {name!r} is not finite: {tok!r}", line=lineno)
    return v


def _to_int(tok: str, lineno: int, name: str) -> int:
    try:
        return int(tok)
    except ValueError:
        v = _to_float(tok, lineno, name)
        if v != int(v):
            raise FormatError(f"field {name!r} is not an integer: {tok!r}",
                              line=lineno) from None
        return int(v)


def parse_labels(text, flavor: str = "tracking") -> list[LabelRecord]:
    """Parse label text (``str`` or ``bytes``) into records.

    Blank lines are skipped. Any malformed line raises :class:`FormatError`
    carrying its 1-based line number.
    """
    _check_flavor(flavor)
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"label file is not valid UTF-8: {exc.reason}",
                              offset=exc.start) from None
    base = _BASE_FIELDS[flavor]
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) not in (base, base + 1):
            raise FormatError(
                f"expected {base} or {base + 1} fields for {flavor} labels, got {len(tok)}",
                line=lineno,
            )
        rec = LabelRecord(type="")
        if flavor == "tracking":
            rec.frame = _to_int(tok[0], lineno, "frame")
            rec.track_id = _to_int(tok[1], lineno, "track_id")
            if not 0 <= rec.frame < MAX_FRAMES:
                raise FormatError(f"frame index {rec.frame} outside [0, {MAX_FRAMES})",
                                  line=lineno)
            tok = tok[2:]
        rec.type = tok[0]
        rec.truncated = _to_float(tok[1], lineno, "truncated")
        rec.occluded = _to_int(tok[2], lineno, "occluded")
        rec.alpha = _to_float(tok[3], lineno, "alpha")
        rec.bbox = tuple(_to_float(t, lineno, "bbox") for t in tok[4:8])
        rec.dimensions = tuple(_to_float(t, lineno, "dimensions") for t in tok[8:11])
        rec.location = tuple(_to_float(t, lineno, "location") for t in tok[11:14])
        rec.rotation_y = _to_float(tok[14], lineno, "rotation_y")
        if len(tok) == 16:
            rec.score = _to_float(tok[15], lineno, "score")
        if rec.evaluable:
            if abs(rec.rotation_y) > math.pi + 1e-6:
                raise FormatError(f"rotation_y {rec.rotation_y} outside [-pi, pi]", line=lineno)
            if min(rec.dimensions) <= 0:
                raise FormatError("box dimensions must be positive", line=lineno)
        records.append(rec)
    return records


# ------------------------------------------------------------- calibration

_CALIB_KEYS = {
    "P2": ("P2",),
    "R0_rect": ("R0_rect", "R_rect"),
    "Tr_velo_to_cam": ("Tr_velo_to_cam", "Tr_velo_cam"),
}
_CALIB_SIZES = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


def read_calibration(text) -> Calibration:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"calibration is not valid UTF-8: {exc.reason}",
                              offset=exc.start) from None
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        key = tok[0].rstrip(":")
        raw[key] = (lineno, tok[1:])
    mats = {}
    for name, aliases in _CALIB_KEYS.items():
        found = next((a for a in aliases if a in raw), None)
        if found is None:
            raise FormatError(f"calibration is missing {name}", key=name)
        lineno, vals = raw[found]
        if len(vals) != _CALIB_SIZES[name]:
            raise FormatError(f"{name} needs {_CALIB_SIZES[name]} values, got {len(vals)}",
                              line=lineno, key=name)
        mats[name] = np.array([_to_float(v, lineno, name) for v in vals])
    try:
        return Calibration(
            projection=mats["P2"].reshape(3, 4),
            rectification=mats["R0_rect"].reshape(3, 3),
            lidar_to_cam=mats["Tr_velo_to_cam"].reshape(3, 4),
        )
    except CalibrationError as exc:
        raise FormatError(f"invalid calibration: {exc}") from None


def format_calibration(calib: Calibration) -> str:
    def row(name, m):
        return name + ": " + " ".join(f"{v:.12e}" for v in np.ravel(m)) + "\n"

    return (row("P2", calib.projection) + row("R0_rect", calib.rectification)
            + row("Tr_velo_to_cam", calib.lidar_to_cam))


def default_calibration() -> Calibration:
    """Axis-swap calibration (``x_cam = -y, y_cam = -z, z_cam = x``), KITTI-like intrinsics."""
    tr = np.array([[0.0, -1.0, 0.0, 0.0],
                   [0.0, 0.0, -1.0, 0.0],
                   [1.0, 0.0, 0.0, 0.0]])
    proj = np.array([[721.5377, 0.0, 609.5593, 0.0],
                     [0.0, 721.5377, 172.854, 0.0],
                     [0.0, 0.0, 1.0, 0.0]])
    return Calibration(proj, np.eye(3), tr, image_size=(1242, 375))


# ----------------------------------------------------------- semantic maps

def read_semantic_png(data: bytes, num_classes: int = 19) -> SemanticMap:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:  # Pillow raises a zoo of types on corrupt data
        raise FormatError(f"cannot decode class map: {exc}") from None
    if img.mode not in ("L", "P"):
        raise FormatError(f"class map must be 8-bit single channel, got mode {img.mode}")
    ids = np.asarray(img, dtype=np.uint8)
    try:
        return SemanticMap(ids, num_classes)
    except DimensionError as exc:
        raise FormatError(str(exc)) from None


def write_semantic_png(semantic: SemanticMap) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(semantic.class_ids.astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


# ------------------------------------------------- frame annotations / boxes

@dataclass
class AnnotatedObject:
    box: OrientedBox3D
    cls: str = "Car"
    track_id: Optional[int] = None
    score: Optional[float] = None


@dataclass
class FrameAnnotations:
    frame: int
    objects: list[AnnotatedObject] = field(default_factory=list)

    def __post_init__(self):
        ids = [o.track_id for o in self.objects if o.track_id is not None]
        if len(ids) != len(set(ids)):
            raise InputError(f"duplicate track ids in frame {self.frame}")


def _cam_rotation(calib: Calibration) -> np.ndarray:
    return calib.rectification @ calib.lidar_to_cam[:, :3]


def box_from_record(rec: LabelRecord, calib: Calibration) -> OrientedBox3D:
    """Camera-frame label to sensor-frame box.

    The bottom-center location is lifted by ``h/2`` (camera ``y`` points
    down). The yaw is the sensor-horizontal heading whose camera image points
    along ``(cos ry, 0, -sin ry)`` in the camera x-z plane, which makes this
    the exact inverse of :func:`record_from_box` even when the sensor and
    camera vertical axes are slightly tilted. For the axis-swap calibration
    it reduces to ``yaw = -ry - pi/2``.
    """
    h, w, l = rec.dimensions
    x, y, z = rec.location
    center = calib.rect_to_lidar(np.array([x, y - 0.5 * h, z]))
    ry = rec.rotation_y
    m = _cam_rotation(calib)
    normal = np.array([math.sin(ry), 0.0, math.cos(ry)])  # orthogonal to the heading
    yaw = math.atan2(-normal @ m[:, 0], normal @ m[:, 1])
    heading = m @ np.array([math.cos(yaw), math.sin(yaw), 0.0])
    if heading[0] * math.cos(ry) - heading[2] * math.sin(ry) < 0:
        yaw += math.pi
    return OrientedBox3D(tuple(center), (l, w, h), yaw)


def record_from_box(box: OrientedBox3D, calib: Calibration, cls: str = "Car",
                    **fields) -> LabelRecord:
    l, w, h = box.size
    center = calib.lidar_to_rect(np.array(box.center))
    heading = _cam_rotation(calib) @ np.array([math.cos(box.yaw), math.sin(box.yaw), 0.0])
    ry = wrap_angle(math.atan2(-heading[2], heading[0]))
    loc = (float(center[0]), float(center[1] + 0.5 * h), float(center[2]))
    alpha = wrap_angle(ry - math.atan2(loc[0], loc[2]))
    return LabelRecord(type=cls, alpha=alpha, dimensions=(h, w, l), location=loc,
                       rotation_y=ry, **fields)


def annotations_from_records(records: Sequence[LabelRecord], calib: Calibration,
                             num_frames: Optional[int] = None) -> list[FrameAnnotations]:
    """Group records by frame (``frame=None`` counts as frame 0), dropping ``DontCare``.

    Negative track ids become ``None``.

    The result covers frames ``0 .. max(frame)`` (or ``num_frames``) so that
    empty frames keep sequences aligned.
    """
    frames = [r.frame or 0 for r in records]
    n = max(frames, default=-1) + 1
    if num_frames is not None:
        n = max(n, num_frames)
    out = [FrameAnnotations(i) for i in range(n)]
    for rec, f in zip(records, frames):
        if not rec.evaluable:
            continue
        # negative ids (KITTI writes -1) mean "no identity"
        tid = rec.track_id if rec.track_id is not None and rec.track_id >= 0 else None
        out[f].objects.append(
            AnnotatedObject(box_from_record(rec, calib), rec.type, tid, rec.score)
        )
    for fa in out:
        fa.__post_init__()  # re-check track id uniqueness after filling
    return out


def records_from_annotations(frames: Sequence[FrameAnnotations],
                             calib: Calibration) -> list[LabelRecord]:
    out = []
    for fa in frames:
        for obj in fa.objects:
            out.append(record_from_box(obj.box, calib, obj.cls, score=obj.score,
                                       frame=fa.frame,
                                       track_id=-1 if obj.track_id is None else obj.track_id))
    return out


def read_labels(text, flavor: str = "tracking", calib: Optional[Calibration] = None,
                num_frames: Optional[int] = None) -> list[FrameAnnotations]:
    """Parse label text straight into sensor-frame frame annotations."""
    return annotations_from_records(parse_labels(text, flavor), calib or default_calibration(),
                                    num_frames)


def write_labels(frames: Sequence[FrameAnnotations], flavor: str = "tracking",
                 calib: Optional[Calibration] = None) -> str:
    return format_labels(records_from_annotations(frames, calib or default_calibration()),
                         flavor)


def load_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")
