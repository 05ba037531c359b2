"""CLEAR-MOT tracking metrics, detection AP and the point-count post-filter.

Matching works natively in 3D with either the rotated IoU or SRTs as the
similarity; a pair matches when its similarity reaches the threshold and the
classes agree.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError
from .geometry import DEFAULT_SRTS, SrtsParams, boxes_to_array, points_in_box, \
    rotated_iou_3d_batch, srts_batch
from .kitti_io import AnnotatedObject, FrameAnnotations
from .voxelizer import PointCloud

MATCHERS = ("iou", "srts")
_FORBIDDEN = 1e6


def similarity_matrix(gt: Sequence[AnnotatedObject], hyp: Sequence[AnnotatedObject],
                      matcher: str = "srts", params: SrtsParams = DEFAULT_SRTS) -> np.ndarray:
    """``(len(gt), len(hyp))`` similarities; cross-class pairs are 0.

    SRTs takes the ground-truth box as the scale reference.
    """
    if matcher not in MATCHERS:
        raise InputError(f"matcher must be one of {MATCHERS}, got {matcher!r}")
    n, m = len(gt), len(hyp)
    if n == 0 or m == 0:
        return np.zeros((n, m))
    a = np.repeat(boxes_to_array([o.box for o in gt]), m, axis=0)
    b = np.tile(boxes_to_array([o.box for o in hyp]), (n, 1))
    sim = srts_batch(a, b, params) if matcher == "srts" else rotated_iou_3d_batch(a, b)
    sim = sim.reshape(n, m)
    same = np.array([[g.cls == h.cls for h in hyp] for g in gt])
    return np.where(same, sim, 0.0)


@dataclass
class MotReport:
    mota: float
    motp: float
    mostly_tracked: float
    mostly_lost: float
    false_positives: int
    misses: int
    id_switches: int
    matches: int
    num_gt: int
    num_trajectories: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        return _aligned(self.to_dict())


def _aligned(d: dict) -> str:
    width = max(len(k) for k in d)
    lines = []
    for k, v in d.items():
        val = f"{v:.6f}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {val:>12}")
    return "\n".join(lines) + "\n"


def _check_aligned(gt, hyp):
    if len(gt) != len(hyp):
        raise InputError(f"sequences are not frame-aligned: {len(gt)} vs {len(hyp)} frames")
    for g, h in zip(gt, hyp):
        if g.frame != h.frame:
            raise InputError(f"frame index mismatch: {g.frame} vs {h.frame}")


def clear_mot(gt: Sequence[FrameAnnotations], hyp: Sequence[FrameAnnotations],
              matcher: str = "srts", threshold: float = 0.7,
              params: SrtsParams = DEFAULT_SRTS) -> MotReport:
    """CLEAR-MOT bookkeeping over frame-aligned sequences.

    Per frame, correspondences from the previous frame are kept while their
    similarity stays at or above ``threshold``; the remaining objects are
    matched by a minimum-cost assignment on ``1 - similarity`` that first
    maximizes the number of valid pairs. An identity switch is counted when a
    ground-truth track is matched to a different hypothesis id than the last
    one it was matched to.
    """
    _check_aligned(gt, hyp)
    last_match: dict = {}  # gt id -> hyp id, most recent match
    active: dict = {}  # gt id -> hyp id matched in the previous frame
    fp = fn = idsw = matches = total_gt = 0
    sim_sum = 0.0
    present: dict = {}
    covered: dict = {}
    for g_frame, h_frame in zip(gt, hyp):
        g_objs, h_objs = g_frame.objects, h_frame.objects
        total_gt += len(g_objs)
        sim = similarity_matrix(g_objs, h_objs, matcher, params)
        g_ids = [o.track_id for o in g_objs]
        h_ids = [o.track_id for o in h_objs]
        if None in g_ids or None in h_ids:
            raise InputError(f"frame {g_frame.frame}: every object needs a track id")
        h_index = {hid: j for j, hid in enumerate(h_ids) if hid is not None}
        pairs = []
        used_g, used_h = set(), set()
        for i, gid in enumerate(g_ids):
            hid = active.get(gid)
            j = h_index.get(hid) if hid is not None else None
            if j is not None and j not in used_h and sim[i, j] >= threshold:
                pairs.append((i, j))
                used_g.add(i)
                used_h.add(j)
        rest_g = [i for i in range(len(g_objs)) if i not in used_g]
        rest_h = [j for j in range(len(h_objs)) if j not in used_h]
        if rest_g and rest_h:
            sub = sim[np.ix_(rest_g, rest_h)]
            cost = np.where(sub >= threshold, 1.0 - sub, _FORBIDDEN)
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                if cost[r, c] < _FORBIDDEN:
                    pairs.append((rest_g[r], rest_h[c]))
        new_active = {}
        for i, j in pairs:
            gid, hid = g_ids[i], h_ids[j]
            if gid in last_match and last_match[gid] != hid:
                idsw += 1
            last_match[gid] = hid
            new_active[gid] = hid
            sim_sum += float(sim[i, j])
            covered[gid] = covered.get(gid, 0) + 1
        for gid in g_ids:
            present[gid] = present.get(gid, 0) + 1
        active = new_active
        matches += len(pairs)
        fn += len(g_objs) - len(pairs)
        fp += len(h_objs) - len(pairs)
    n_traj = len(present)
    ratios = [covered.get(g, 0) / present[g] for g in present]
    mt = sum(r >= 0.8 for r in ratios) / n_traj if n_traj else 0.0
    ml = sum(r <= 0.2 for r in ratios) / n_traj if n_traj else 0.0
    mota = 1.0 - (fn + fp + idsw) / max(total_gt, 1)
    motp = sim_sum / matches if matches else 0.0
    return MotReport(mota, motp, mt, ml, fp, fn, idsw, matches, total_gt, n_traj)


@dataclass
class PrCurve:
    precision: np.ndarray
    recall: np.ndarray
    scores: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["score", "precision", "recall"])
        for s, p, r in zip(self.scores, self.precision, self.recall):
            w.writerow([f"{s:.6f}", f"{p:.6f}", f"{r:.6f}"])
        return buf.getvalue()


def precision_recall(detections: Sequence[FrameAnnotations], gt: Sequence[FrameAnnotations],
                     matcher: str = "iou", threshold: float = 0.7,
                     params: SrtsParams = DEFAULT_SRTS) -> tuple[PrCurve, int]:
    """Greedy score-descending matching over all frames.

    Each detection, in order of decreasing score (stable on ties), takes the
    unmatched ground truth in its frame with the highest similarity at or
    above ``threshold``. Returns the PR curve and the ground-truth count.
    """
    _check_aligned(gt, detections)
    entries = []  # (score, frame index, object index)
    sims = []
    for k, (d_frame, g_frame) in enumerate(zip(detections, gt)):
        sims.append(similarity_matrix(g_frame.objects, d_frame.objects, matcher, params))
        for j, obj in enumerate(d_frame.objects):
            if obj.score is None:
                raise InputError("detections need scores for average precision")
            entries.append((obj.score, k, j))
    n_gt = sum(len(f.objects) for f in gt)
    order = sorted(range(len(entries)), key=lambda e: -entries[e][0])
    taken = [np.zeros(len(f.objects), dtype=bool) for f in gt]
    tp = np.zeros(len(order))
    for rank, e in enumerate(order):
        _, k, j = entries[e]
        col = sims[k][:, j] if sims[k].size else np.zeros(0)
        cand = np.where(~taken[k] & (col >= threshold), col, -np.inf)
        if cand.size and np.isfinite(cand.max()):
            taken[k][int(np.argmax(cand))] = True
            tp[rank] = 1.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(order) + 1) if len(order) else np.zeros(0)
    recall = ctp / n_gt if n_gt else np.zeros(len(order))
    scores = np.array([entries[e][0] for e in order], dtype=float)
    return PrCurve(precision, recall, scores), n_gt


def interpolated_ap(curve: PrCurve, points: int = 40) -> float:
    """Mean over recall levels ``1/points .. 1`` of the best precision at that recall or more."""
    if curve.recall.size == 0:
        return 0.0
    total = 0.0
    for k in range(1, points + 1):
        level = k / points
        mask = curve.recall >= level - 1e-12
        total += float(curve.precision[mask].max()) if np.any(mask) else 0.0
    return total / points


def average_precision(detections: Sequence[FrameAnnotations], gt: Sequence[FrameAnnotations],
                      matcher: str = "iou", threshold: float = 0.7,
                      params: SrtsParams = DEFAULT_SRTS, points: int = 40) -> float:
    curve, n_gt = precision_recall(detections, gt, matcher, threshold, params)
    if n_gt == 0:
        return 0.0
    return interpolated_ap(curve, points)


def point_count_filter(detections: FrameAnnotations, cloud: PointCloud, min_points: int = 13,
                       max_range: float = 52.0, conjunction: str = "and") -> FrameAnnotations:
    """Drop sparse detections near the sensor.

    A detection is removed when it holds fewer than ``min_points`` points
    *and* its center is closer than ``max_range`` (3D distance from the
    sensor origin). ``conjunction="or"`` removes on either condition.
    """
    if conjunction not in ("and", "or"):
        raise InputError("conjunction must be 'and' or 'or'")
    kept = []
    for obj in detections.objects:
        count = int(points_in_box(cloud.points, obj.box).sum()) if len(cloud) else 0
        sparse = count < min_points
        near = math.hypot(*obj.box.center) < max_range
        drop = (sparse and near) if conjunction == "and" else (sparse or near)
        if not drop:
            kept.append(obj)
    return FrameAnnotations(detections.frame, kept)


def cardinality_error(truth: Sequence[FrameAnnotations],
                      estimates: Sequence[FrameAnnotations]) -> float:
    """Mean absolute difference between estimated and true object counts per frame."""
    _check_aligned(truth, estimates)
    if not truth:
        return 0.0
    return float(np.mean([abs(len(t.objects) - len(e.objects)) for t, e in zip(truth, estimates)]))
