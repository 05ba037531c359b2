"""Synthetic multi-target scenarios under coordinated-turn motion.

Ground truth targets drive piecewise-constant ``(speed, yaw_rate)`` segments
through :func:`~semtrack.tracker.ct_transition`; detections are rendered with
missed detections, Gaussian box noise and Poisson clutter.

Randomness comes from numpy's ``PCG64`` bit generator (PCG XSL-RR 128/64)
seeded with the scenario seed. Truth and measurements draw from independent
child streams (``SeedSequence(seed).spawn(2)``), so changing a detection
parameter never changes the truth.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .geometry import OrientedBox3D, wrap_angle
from .kitti_io import AnnotatedObject, FrameAnnotations
from .tracker import Measurement, ct_transition

GROUND_Z = -1.73  # lidar mounting height above the road, KITTI


@dataclass
class ScenarioConfig:
    num_targets: int = 5
    duration: int = 100
    dt: float = 0.1
    roi_min: tuple = (0.0, -40.0, -2.73)
    roi_max: tuple = (60.0, 40.0, 1.27)
    # per-target (birth, death) frame windows, death exclusive; None = whole run
    windows: Optional[list] = None
    R: list = field(default_factory=lambda: [0.5**2] * 6 + [0.1**2])
    p_detect: float = 0.9
    clutter_rate: float = 10.0
    seed: int = 0
    category: str = "Car"
    size_range: dict = field(default_factory=lambda: {
        "l": [3.5, 5.0], "w": [1.5, 2.0], "h": [1.4, 1.8]})
    speed_range: tuple = (1.0, 5.0)
    yaw_rate_range: tuple = (-0.3, 0.3)
    segment_frames: tuple = (20, 40)
    margin: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.p_detect <= 1.0:
            raise ConfigError("p_detect must lie in [0, 1]")
        if self.dt <= 0 or self.duration < 0 or self.num_targets < 0:
            raise ConfigError("dt > 0, duration >= 0 and num_targets >= 0 required")
        if self.clutter_rate < 0:
            raise ConfigError("clutter_rate must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if np.asarray(self.R).shape != (7,) or min(self.R) < 0:
            raise ConfigError("R must list 7 non-negative variances")
        if self.windows is not None and len(self.windows) != self.num_targets:
            raise ConfigError("windows needs one (birth, death) pair per target")
        self.roi_min = tuple(float(v) for v in self.roi_min)
        self.roi_max = tuple(float(v) for v in self.roi_max)
        # JSON hands back lists; keep one canonical form so configs compare equal
        self.speed_range = tuple(self.speed_range)
        self.yaw_rate_range = tuple(self.yaw_rate_range)
        self.segment_frames = tuple(self.segment_frames)
        if self.windows is not None:
            self.windows = [tuple(int(v) for v in w) for w in self.windows]
        self.R = [float(v) for v in self.R]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roi_min"], d["roi_max"] = list(self.roi_min), list(self.roi_max)
        d["speed_range"] = list(self.speed_range)
        d["yaw_rate_range"] = list(self.yaw_rate_range)
        d["segment_frames"] = list(self.segment_frames)
        if self.windows is not None:
            d["windows"] = [list(w) for w in self.windows]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("scenario config must be a JSON object")
        return cls.from_dict(data)

    @property
    def size_volume(self) -> float:
        return math.prod(hi - lo for lo, hi in self.size_range.values())

    def clutter_density(self) -> float:
        """Clutter per unit of measurement space (position x size x yaw)."""
        roi = math.prod(hi - lo for lo, hi in zip(self.roi_min, self.roi_max))
        return self.clutter_rate / (roi * self.size_volume * 2.0 * math.pi)


@dataclass
class Scenario:
    config: ScenarioConfig
    truth: list[FrameAnnotations]
    measurements: list[list[Measurement]]
    detected: list[int] = field(default_factory=list)  # per frame


def _streams(seed: int):
    truth_seq, meas_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(truth_seq)), \
        np.random.Generator(np.random.PCG64(meas_seq))


def _inside(state: np.ndarray, cfg: ScenarioConfig) -> bool:
    box = OrientedBox3D(tuple(state[0:3]), tuple(state[3:6]), state[6])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw = 0.5 * box.size[0], 0.5 * box.size[1]
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        x = box.center[0] + c * u - s * v
        y = box.center[1] + s * u + c * v
        if not (cfg.roi_min[0] <= x <= cfg.roi_max[0] and cfg.roi_min[1] <= y <= cfg.roi_max[1]):
            return False
    z0, z1 = box.center[2] - 0.5 * box.size[2], box.center[2] + 0.5 * box.size[2]
    return cfg.roi_min[2] <= z0 and z1 <= cfg.roi_max[2]


def _sample_trajectory(rng, cfg: ScenarioConfig, length: int) -> Optional[np.ndarray]:
    lo = np.array(cfg.roi_min[:2]) + cfg.margin
    hi = np.array(cfg.roi_max[:2]) - cfg.margin
    if np.any(hi <= lo):
        return None
    sz = cfg.size_range
    l, w, h = (rng.uniform(*sz["l"]), rng.uniform(*sz["w"]), rng.uniform(*sz["h"]))
    x, y = rng.uniform(lo, hi)
    state = np.array([x, y, GROUND_Z + 0.5 * h, l, w, h, rng.uniform(-math.pi, math.pi),
                      0.0, 0.0])
    states = np.empty((length, 9))
    k = 0
    while k < length:
        seg = int(rng.integers(cfg.segment_frames[0], cfg.segment_frames[1] + 1))
        state[7] = rng.uniform(*cfg.speed_range)
        state[8] = rng.uniform(*cfg.yaw_rate_range)
        for _ in range(min(seg, length - k)):
            if not _inside(state, cfg):
                return None
            states[k] = state
            state = ct_transition(state, cfg.dt)
            k += 1
    return states


def generate_truth(config: ScenarioConfig, max_attempts: int = 1000) -> list[FrameAnnotations]:
    """Per-frame ground truth with persistent track ids ``0..num_targets-1``."""
    rng, _ = _streams(config.seed)
    frames = [FrameAnnotations(k) for k in range(config.duration)]
    for tid in range(config.num_targets):
        if config.windows is None:
            start, stop = 0, config.duration
        else:
            start, stop = config.windows[tid]
            start, stop = max(0, int(start)), min(config.duration, int(stop))
        if stop <= start:
            continue
        for _ in range(max_attempts):
            traj = _sample_trajectory(rng, config, stop - start)
            if traj is not None:
                break
        else:
            raise ConfigError(
                f"could not keep target {tid} inside the ROI for {stop - start} frames; "
                "the ROI is too small for the requested motion"
            )
        for k, st in enumerate(traj):
            box = OrientedBox3D(tuple(st[0:3]), tuple(st[3:6]), st[6])
            frames[start + k].objects.append(AnnotatedObject(box, config.category, tid))
    return frames


def render_measurements(truth: list[FrameAnnotations], config: ScenarioConfig):
    """Noisy detections per frame plus the number of true detections in each.

    Truth detections come first in each frame, then clutter.
    """
    _, rng = _streams(config.seed)
    std = np.sqrt(np.asarray(config.R, dtype=float))
    lo, hi = np.array(config.roi_min), np.array(config.roi_max)
    sz = config.size_range
    out, detected = [], []
    for fa in truth:
        frame = []
        for obj in fa.objects:
            hit = rng.random() < config.p_detect
            noise = rng.standard_normal(7) * std
            if not hit:
                continue
            z = obj.box.as_array() + noise
            z[3:6] = np.maximum(z[3:6], 1e-2)
            z[6] = wrap_angle(z[6])
            frame.append(Measurement(z, obj.cls, float(rng.uniform(0.5, 1.0))))
        detected.append(len(frame))
        for _ in range(int(rng.poisson(config.clutter_rate))):
            c = rng.uniform(lo, hi)
            size = [rng.uniform(*sz["l"]), rng.uniform(*sz["w"]), rng.uniform(*sz["h"])]
            yaw = wrap_angle(rng.uniform(-math.pi, math.pi))
            frame.append(Measurement(np.concatenate([c, size, [yaw]]), config.category,
                                     float(rng.uniform(0.1, 0.6))))
        out.append(frame)
    return out, detected


def simulate(config: ScenarioConfig) -> Scenario:
    truth = generate_truth(config)
    measurements, detected = render_measurements(truth, config)
    return Scenario(config, truth, measurements, detected)


def measurements_to_annotations(frames) -> list[FrameAnnotations]:
    """Detections as frame annotations (no track ids), e.g. for KITTI export."""
    return [
        FrameAnnotations(k, [AnnotatedObject(OrientedBox3D.from_array(m.z), m.cls, None, m.score)
                             for m in ms])
        for k, ms in enumerate(frames)
    ]
