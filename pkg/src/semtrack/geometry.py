"""Oriented 3D boxes, the SRTs similarity score and an exact rotated IoU.

Boxes are yaw-only cuboids: ``center = (x, y, z)``, ``size = (l, w, h)`` with
``l`` along the heading direction, ``yaw`` about the vertical axis.

Two flavours of each metric exist:

* scalar functions on :class:`OrientedBox3D` (``srts``, ``rotated_iou_3d``),
  written with plain ``math`` so per-pair calls stay cheap;
* batch kernels on ``(N, 7)`` arrays (``srts_batch``, ``rotated_iou_3d_batch``)
  used by the evaluation matchers and the benchmark.

The scalar IoU clips polygons with Sutherland-Hodgman, the batch IoU collects
candidate vertices (corners inside the other box plus edge crossings) and
orders them by angle. The two code paths check each other in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidBoxError

__all__ = [
    "OrientedBox3D",
    "SrtsParams",
    "wrap_angle",
    "srts_scale",
    "srts_rotation",
    "srts_translation",
    "srts",
    "rotated_iou_3d",
    "bev_corners",
    "srts_batch",
    "rotated_iou_3d_batch",
    "boxes_to_array",
    "points_in_box",
]

TWO_PI = 2.0 * math.pi
_EMPTY_AREA = 1e-12


def wrap_angle(angle):
    """Wrap an angle (scalar or array) into ``(-pi, pi]``."""
    if isinstance(angle, np.ndarray):
        return np.pi - np.mod(np.pi - angle, TWO_PI)
    return math.pi - math.fmod(math.fmod(math.pi - angle, TWO_PI) + TWO_PI, TWO_PI)


@dataclass(frozen=True)
class OrientedBox3D:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        try:
            center = tuple(float(c) for c in self.center)
            size = tuple(float(s) for s in self.size)
            yaw = float(self.yaw)
        except (TypeError, ValueError) as exc:
            raise InvalidBoxError(f"box fields must be numeric: {exc}") from None
        if len(center) != 3 or len(size) != 3:
            raise InvalidBoxError("center and size must be 3-vectors")
        if not all(math.isfinite(v) for v in center + size + (yaw,)):
            raise InvalidBoxError(f"non-finite box field in {center}, {size}, {yaw}")
        if not all(s > 0.0 for s in size):
            raise InvalidBoxError(f"box sizes must be strictly positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(yaw))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "OrientedBox3D":
        """Build from ``[x, y, z, l, w, h, yaw]``."""
        if len(values) != 7:
            raise InvalidBoxError(f"expected 7 values, got {len(values)}")
        return cls(tuple(values[0:3]), tuple(values[3:6]), values[6])

    def as_array(self) -> np.ndarray:
        return np.array(self.center + self.size + (self.yaw,), dtype=float)

    @property
    def volume(self) -> float:
        l, w, h = self.size
        return l * w * h

    @property
    def diagonal(self) -> float:
        l, w, h = self.size
        return math.sqrt(l * l + w * w + h * h)

    def transformed(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0,
                    dyaw: float = 0.0) -> "OrientedBox3D":
        """Rotate about the origin by ``dyaw`` then translate."""
        c, s = math.cos(dyaw), math.sin(dyaw)
        x, y, z = self.center
        return OrientedBox3D(
            (c * x - s * y + dx, s * x + c * y + dy, z + dz), self.size, self.yaw + dyaw
        )


@dataclass(frozen=True)
class SrtsParams:
    w_s: float = 0.3
    w_t: float = 1.0
    w_r: float = 0.5
    alpha: float = 0.3
    beta: float = 0.3
    gamma: float = 0.4
    symmetric_scale: bool = field(default=False)

    def __post_init__(self):
        if not (self.w_s > 0 and self.w_t > 0):
            raise ConfigError("w_s and w_t must be positive")
        if not (0.0 < self.w_r <= 1.0):
            raise ConfigError("w_r must lie in (0, 1]")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("alpha, beta, gamma must be non-negative")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-12:
            raise ConfigError("alpha + beta + gamma must equal 1")

    @classmethod
    def from_dict(cls, data: dict) -> "SrtsParams":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown SRTs parameters: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


DEFAULT_SRTS = SrtsParams()


def _size_ratios(a: OrientedBox3D, b: OrientedBox3D, symmetric: bool):
    if symmetric:
        return [max(p, q) / min(p, q) for p, q in zip(a.size, b.size)]
    return [q / p for p, q in zip(a.size, b.size)]


def srts_scale(a: OrientedBox3D, b: OrientedBox3D, w_s: float = 0.3,
               symmetric: bool = False) -> float:
    """Scale sub-score. ``a`` is the reference box: ratios are ``b / a``.

    With ``symmetric=True`` every ratio is ``max / min`` per axis, which makes
    the score independent of argument order.
    """
    if w_s <= 0:
        raise ConfigError("w_s must be positive")
    dev = sum(abs(1.0 - s) for s in _size_ratios(a, b, symmetric))
    return 1.0 - min(dev / w_s, 1.0)


def srts_rotation(yaw_a: float, yaw_b: float, w_r: float = 0.5) -> float:
    if not (0.0 < w_r <= 1.0):
        raise ConfigError("w_r must lie in (0, 1]")
    if not (math.isfinite(yaw_a) and math.isfinite(yaw_b)):
        raise ConfigError("yaw angles must be finite")
    theta = abs(wrap_angle(yaw_b - yaw_a))
    return max(0.0, 1.0 - theta / (w_r * math.pi))


def srts_translation(a: OrientedBox3D, b: OrientedBox3D,
                     w_t: float = 1.0) -> tuple[float, int]:
    """Translation sub-score and intersection penalty ``(S_t, p_t)``.

    Each box gets a radius of half its 3D diagonal scaled by ``w_t``; ``p_t``
    drops to 0 once the centers are further apart than the summed radii.
    """
    radii = 0.5 * w_t * (a.diagonal + b.diagonal)
    assert radii > 0.0
    t = math.dist(a.center, b.center)
    penalty = 0 if radii < t else 1
    return max(0.0, (radii - t) / radii), penalty


def srts(a: OrientedBox3D, b: OrientedBox3D, params: SrtsParams = DEFAULT_SRTS) -> float:
    s_t, p_t = srts_translation(a, b, params.w_t)
    if p_t == 0:
        return 0.0
    s_s = srts_scale(a, b, params.w_s, params.symmetric_scale)
    s_r = srts_rotation(a.yaw, b.yaw, params.w_r)
    return params.alpha * s_s + params.beta * s_t + params.gamma * s_r


# ---------------------------------------------------------------- rotated IoU

def bev_corners(box: OrientedBox3D) -> list[tuple[float, float]]:
    """Footprint corners, counter-clockwise."""
    x, y, _ = box.center
    hl, hw = 0.5 * box.size[0], 0.5 * box.size[1]
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = []
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((x + c * u - s * v, y + s * u + c * v))
    return out


def _shoelace(poly) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return 0.5 * abs(acc)


def _clip(subject, clipper):
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    output = subject
    n = len(clipper)
    for i in range(n):
        if not output:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = output
        output = []
        px, py = inp[-1]
        p_side = ex * (py - ay) - ey * (px - ax)
        for qx, qy in inp:
            q_side = ex * (qy - ay) - ey * (qx - ax)
            if q_side >= 0.0:
                if p_side < 0.0:
                    t = p_side / (p_side - q_side)
                    output.append((px + t * (qx - px), py + t * (qy - py)))
                output.append((qx, qy))
            elif p_side >= 0.0:
                t = p_side / (p_side - q_side)
                output.append((px + t * (qx - px), py + t * (qy - py)))
            px, py, p_side = qx, qy, q_side
    return output


def rotated_iou_3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    za0, za1 = a.center[2] - 0.5 * a.size[2], a.center[2] + 0.5 * a.size[2]
    zb0, zb1 = b.center[2] - 0.5 * b.size[2], b.center[2] + 0.5 * b.size[2]
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    area = _shoelace(_clip(bev_corners(a), bev_corners(b)))
    if area < _EMPTY_AREA:
        return 0.0
    inter = area * dz
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))


def points_in_box(points: np.ndarray, box: OrientedBox3D) -> np.ndarray:
    """Boolean mask of ``points[:, :3]`` inside ``box`` (closed faces)."""
    pts = np.asarray(points, dtype=float)[:, :3] - np.asarray(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = c * pts[:, 0] + s * pts[:, 1]
    v = -s * pts[:, 0] + c * pts[:, 1]
    half = 0.5 * np.asarray(box.size)
    return (np.abs(u) <= half[0]) & (np.abs(v) <= half[1]) & (np.abs(pts[:, 2]) <= half[2])


# ------------------------------------------------------------- batch kernels

def boxes_to_array(boxes: Sequence[OrientedBox3D]) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.stack([b.as_array() for b in boxes])


def srts_batch(a: np.ndarray, b: np.ndarray, params: SrtsParams = DEFAULT_SRTS) -> np.ndarray:
    """Element-wise SRTs for ``(N, 7)`` arrays (rows paired, broadcasting allowed)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if params.symmetric_scale:
        ratio = np.maximum(a[..., 3:6], b[..., 3:6]) / np.minimum(a[..., 3:6], b[..., 3:6])
    else:
        ratio = b[..., 3:6] / a[..., 3:6]
    s_s = 1.0 - np.minimum(np.abs(1.0 - ratio).sum(axis=-1) / params.w_s, 1.0)
    theta = np.abs(wrap_angle(b[..., 6] - a[..., 6]))
    s_r = np.maximum(0.0, 1.0 - theta / (params.w_r * np.pi))
    radii = 0.5 * params.w_t * (
        np.sqrt((a[..., 3:6] ** 2).sum(axis=-1)) + np.sqrt((b[..., 3:6] ** 2).sum(axis=-1))
    )
    t = np.sqrt(((a[..., 0:3] - b[..., 0:3]) ** 2).sum(axis=-1))
    s_t = np.maximum(0.0, (radii - t) / radii)
    p_t = (radii >= t).astype(float)
    return p_t * (params.alpha * s_s + params.beta * s_t + params.gamma * s_r)


def _bev_corners_batch(boxes: np.ndarray) -> np.ndarray:
    # (N, 4, 2), counter-clockwise
    hl = 0.5 * boxes[:, 3]
    hw = 0.5 * boxes[:, 4]
    c = np.cos(boxes[:, 6])
    s = np.sin(boxes[:, 6])
    u = np.stack([hl, -hl, -hl, hl], axis=1)
    v = np.stack([hw, hw, -hw, -hw], axis=1)
    x = boxes[:, 0:1] + c[:, None] * u - s[:, None] * v
    y = boxes[:, 1:2] + s[:, None] * u + c[:, None] * v
    return np.stack([x, y], axis=2)


def _inside_rect(points: np.ndarray, boxes: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # points (N, K, 2) tested against boxes (N, 7)
    d = points - boxes[:, None, 0:2]
    c = np.cos(boxes[:, 6])[:, None]
    s = np.sin(boxes[:, 6])[:, None]
    u = c * d[..., 0] + s * d[..., 1]
    v = -s * d[..., 0] + c * d[..., 1]
    return (np.abs(u) <= 0.5 * boxes[:, 3:4] + tol) & (np.abs(v) <= 0.5 * boxes[:, 4:5] + tol)


def _edge_crossings(ca: np.ndarray, cb: np.ndarray):
    # All 16 edge pairs; returns points (N, 16, 2) and validity mask (N, 16).
    p = ca[:, :, None, :]
    r = (np.roll(ca, -1, axis=1) - ca)[:, :, None, :]
    q = cb[:, None, :, :]
    sv = (np.roll(cb, -1, axis=1) - cb)[:, None, :, :]
    denom = r[..., 0] * sv[..., 1] - r[..., 1] * sv[..., 0]
    qp = q - p
    parallel = np.abs(denom) < 1e-12
    safe = np.where(parallel, 1.0, denom)
    t = (qp[..., 0] * sv[..., 1] - qp[..., 1] * sv[..., 0]) / safe
    u = (qp[..., 0] * r[..., 1] - qp[..., 1] * r[..., 0]) / safe
    ok = ~parallel & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    pts = p + t[..., None] * r
    n = ca.shape[0]
    return pts.reshape(n, 16, 2), ok.reshape(n, 16)


def rotated_iou_3d_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise exact IoU for paired ``(N, 7)`` box arrays."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    n = a.shape[0]
    if n == 0:
        return np.zeros(0)
    ca = _bev_corners_batch(a)
    cb = _bev_corners_batch(b)
    cross, cross_ok = _edge_crossings(ca, cb)
    pts = np.concatenate([ca, cb, cross], axis=1)
    ok = np.concatenate([_inside_rect(ca, b), _inside_rect(cb, a), cross_ok], axis=1)

    count = ok.sum(axis=1)
    centroid = (pts * ok[..., None]).sum(axis=1) / np.maximum(count, 1)[:, None]
    ang = np.arctan2(pts[..., 1] - centroid[:, None, 1], pts[..., 0] - centroid[:, None, 0])
    ang = np.where(ok, ang, np.inf)
    order = np.argsort(ang, axis=1, kind="stable")
    pts = np.take_along_axis(pts, order[..., None], axis=1)
    ok = np.take_along_axis(ok, order, axis=1)
    # invalid slots collapse onto the first vertex and add no area
    pts = np.where(ok[..., None], pts, pts[:, :1, :])
    nxt = np.roll(pts, -1, axis=1)
    area = 0.5 * np.abs((pts[..., 0] * nxt[..., 1] - nxt[..., 0] * pts[..., 1]).sum(axis=1))
    area = np.where((count >= 3) & (area >= _EMPTY_AREA), area, 0.0)

    dz = np.minimum(a[:, 2] + 0.5 * a[:, 5], b[:, 2] + 0.5 * b[:, 5]) - np.maximum(
        a[:, 2] - 0.5 * a[:, 5], b[:, 2] - 0.5 * b[:, 5]
    )
    inter = area * np.maximum(dz, 0.0)
    union = a[:, 3:6].prod(axis=1) + b[:, 3:6].prod(axis=1) - inter
    return np.clip(inter / union, 0.0, 1.0)
