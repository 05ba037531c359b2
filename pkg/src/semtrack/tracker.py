"""Labeled multi-Bernoulli tracker for oriented 3D boxes.

Each track is a labeled Bernoulli component: an existence probability ``r``
and a single Gaussian over the 9-dim state ``[x, y, z, l, w, h, yaw, v,
yaw_rate]``. Measurements are boxes ``[x, y, z, l, w, h, yaw]`` observed
through ``H = [I_7 0]``.

One :meth:`LMBFilter.step` runs predict, associate, update, birth, prune and
extract in that order:

* prediction pushes every track through the coordinated-turn model with an
  augmented unscented transform (acceleration and yaw-acceleration noise);
* association builds the track/measurement probability matrix, normalized per
  measurement so that ``sum_i p_a[i, j] + p_na[j] == 1``;
* update collapses each track's missed-detection and per-measurement Kalman
  hypotheses back into one Gaussian;
* measurements with ``p_na`` above ``P_na`` spawn new tracks;
* the number of reported targets is the rounded mean of the cardinality
  distribution, i.e. ``round(sum r)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import ConfigError, InputError, NumericalError
from .geometry import OrientedBox3D, wrap_angle

STATE_DIM = 9
MEAS_DIM = 7
YAW = 6
SPEED = 7
YAW_RATE = 8
H = np.hstack([np.eye(MEAS_DIM), np.zeros((MEAS_DIM, 2))])
_SMALL_TURN = 1e-6


@dataclass
class FilterConfig:
    R: list = field(default_factory=lambda: [0.5**2] * 6 + [0.1**2])
    sigma_a: float = 17.89
    sigma_alpha: float = 1.49
    p_survival: float = 0.99
    p_detect: float = 0.9
    clutter_intensity: float = 2.5e-4
    P_na: float = 0.5
    r_birth: float = 0.3
    birth_rate: Optional[float] = 0.3
    r_prune: float = 1e-3
    gate: float = float(chi2.ppf(0.99, MEAS_DIM))
    birth_std: list = field(
        default_factory=lambda: [1.0, 1.0, 0.5, 0.5, 0.5, 0.3, 0.2, 10.0, 0.5]
    )
    size_noise_std: float = 0.01
    ut_alpha: float = 1.0
    ut_beta: float = 2.0
    ut_kappa: Optional[float] = None
    dt: float = 0.1

    def __post_init__(self):
        for name in ("p_survival", "p_detect", "P_na", "r_birth", "r_prune"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.sigma_a < 0 or self.sigma_alpha < 0 or self.size_noise_std < 0:
            raise ConfigError("noise standard deviations must be non-negative")
        if self.clutter_intensity < 0 or self.gate <= 0 or self.dt <= 0:
            raise ConfigError("clutter_intensity >= 0, gate > 0 and dt > 0 required")
        if self.birth_rate is not None and self.birth_rate <= 0:
            raise ConfigError("birth_rate must be positive or null")
        r = np.asarray(self.R, dtype=float)
        if r.shape not in ((MEAS_DIM,), (MEAS_DIM, MEAS_DIM)):
            raise ConfigError(f"R must be a 7-vector diagonal or a 7x7 matrix, got {r.shape}")
        if len(self.birth_std) != STATE_DIM or min(self.birth_std) <= 0:
            raise ConfigError("birth_std needs 9 positive entries")
        try:
            np.linalg.cholesky(self.R_matrix)
        except np.linalg.LinAlgError:
            raise ConfigError("R must be positive definite") from None

    @property
    def R_matrix(self) -> np.ndarray:
        r = np.asarray(self.R, dtype=float)
        return np.diag(r) if r.ndim == 1 else r

    @property
    def birth_cov(self) -> np.ndarray:
        return np.diag(np.square(self.birth_std))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["R"] = np.asarray(self.R, dtype=float).tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "FilterConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown filter config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "FilterConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"filter config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("filter config must be a JSON object")
        return cls.from_dict(data)


@dataclass
class TargetState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(STATE_DIM, STATE_DIM)

    def is_valid(self, tol: float = 1e-9) -> bool:
        P = self.covariance
        if not np.allclose(P, P.T, atol=tol):
            return False
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            return False
        return True


@dataclass
class Track:
    label: tuple[int, int]  # (birth frame, birth index)
    existence: float
    state: TargetState
    cls: str = "Car"
    age: int = 0

    @property
    def box(self) -> OrientedBox3D:
        m = self.state.mean
        size = np.maximum(m[3:6], 1e-3)
        return OrientedBox3D(tuple(m[0:3]), tuple(size), m[YAW])


@dataclass
class Measurement:
    z: np.ndarray
    cls: str = "Car"
    score: float = 1.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float).reshape(MEAS_DIM)
        if not np.all(np.isfinite(self.z)):
            raise InputError("measurement contains non-finite values")
        if np.any(self.z[3:6] <= 0):
            raise InputError("measurement sizes must be positive")
        self.z[YAW] = wrap_angle(self.z[YAW])

    @classmethod
    def from_box(cls, box: OrientedBox3D, category: str = "Car",
                 score: float = 1.0) -> "Measurement":
        return cls(box.as_array(), category, score)


# ------------------------------------------------------------------- motion

def ct_transition(state: np.ndarray, dt: float) -> np.ndarray:
    """Coordinated-turn step for one state or a stack of states ``(..., 9)``."""
    s = np.asarray(state, dtype=float)
    out = s.copy()
    phi, v, w = s[..., YAW], s[..., SPEED], s[..., YAW_RATE]
    small = np.abs(w) < _SMALL_TURN
    w_safe = np.where(small, 1.0, w)
    phi_new = phi + w * dt
    dx_turn = v / w_safe * (np.sin(phi_new) - np.sin(phi))
    dy_turn = v / w_safe * (np.cos(phi) - np.cos(phi_new))
    # second-order expansion around w = 0
    dx_line = v * dt * np.cos(phi) - 0.5 * v * w * dt * dt * np.sin(phi)
    dy_line = v * dt * np.sin(phi) + 0.5 * v * w * dt * dt * np.cos(phi)
    out[..., 0] += np.where(small, dx_line, dx_turn)
    out[..., 1] += np.where(small, dy_line, dy_turn)
    out[..., YAW] = wrap_angle(np.asarray(phi_new))
    return out


def _noisy_transition(states: np.ndarray, noise: np.ndarray, dt: float) -> np.ndarray:
    # noise columns: longitudinal acceleration, yaw acceleration
    out = ct_transition(states, dt)
    a, alpha = noise[..., 0], noise[..., 1]
    phi = states[..., YAW]
    half = 0.5 * dt * dt
    out[..., 0] += half * a * np.cos(phi)
    out[..., 1] += half * a * np.sin(phi)
    out[..., SPEED] += dt * a
    out[..., YAW] = wrap_angle(out[..., YAW] + half * alpha)
    out[..., YAW_RATE] += dt * alpha
    return out


def _ut_weights(n: int, config: FilterConfig):
    kappa = 3.0 - n if config.ut_kappa is None else config.ut_kappa
    lam = config.ut_alpha**2 * (n + kappa) - n
    if n + lam <= 0:
        raise ConfigError("unscented transform spread n + lambda must be positive")
    wm = np.full(2 * n + 1, 0.5 / (n + lam))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + 1.0 - config.ut_alpha**2 + config.ut_beta
    return n + lam, wm, wc


def _jitter(P: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``P + jitter * I``, with the smallest jitter that works."""
    try:
        return np.linalg.cholesky(P), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = max(np.trace(P) / len(P), 1e-12)
    for rel in (1e-12, 1e-10, 1e-8, 1e-6):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(P + jitter * np.eye(len(P))), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"{what} is not positive definite")


def _cholesky(P: np.ndarray, what: str) -> np.ndarray:
    return _jitter(0.5 * (P + P.T), what)[0]


def _stabilize(P: np.ndarray, what: str) -> np.ndarray:
    """Symmetrize and add diagonal jitter only if ``P`` is not positive definite."""
    P = 0.5 * (P + P.T)
    jitter = _jitter(P, what)[1]
    return P + jitter * np.eye(len(P)) if jitter else P


def _weighted_state_mean(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    mean = weights @ points
    mean[YAW] = math.atan2(weights @ np.sin(points[:, YAW]), weights @ np.cos(points[:, YAW]))
    return mean


def _residuals(points: np.ndarray, mean: np.ndarray) -> np.ndarray:
    d = points - mean
    d[:, YAW] = wrap_angle(d[:, YAW])
    return d


def ukf_predict(mean: np.ndarray, cov: np.ndarray, dt: float,
                config: FilterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Unscented prediction of one Gaussian through the noisy CT model.

    The state is augmented with the two process-noise inputs; the square
    root of the augmented covariance is block diagonal, so zero process noise
    is allowed. Floor noise on ``z, l, w, h`` is added afterwards.
    """
    n = STATE_DIM + 2
    spread, wm, wc = _ut_weights(n, config)
    L = _cholesky(cov, "state covariance")
    root = np.zeros((n, n))
    root[:STATE_DIM, :STATE_DIM] = L
    root[STATE_DIM, STATE_DIM] = config.sigma_a
    root[STATE_DIM + 1, STATE_DIM + 1] = config.sigma_alpha
    root *= math.sqrt(spread)
    center = np.concatenate([mean, [0.0, 0.0]])
    sigma = np.vstack([center, center + root.T, center - root.T])
    sigma[:, YAW] = wrap_angle(sigma[:, YAW])
    moved = _noisy_transition(sigma[:, :STATE_DIM], sigma[:, STATE_DIM:], dt)
    m = _weighted_state_mean(moved, wm)
    d = _residuals(moved, m)
    P = (d * wc[:, None]).T @ d
    floor = config.size_noise_std**2
    P[2:6, 2:6] += floor * np.eye(4)
    return m, _stabilize(P, "predicted covariance")


def predict(tracks: Sequence[Track], dt: float, config: FilterConfig) -> list[Track]:
    if dt <= 0:
        raise InputError("dt must be positive")
    out = []
    for trk in tracks:
        m, P = ukf_predict(trk.state.mean, trk.state.covariance, dt, config)
        out.append(replace(trk, existence=trk.existence * config.p_survival,
                           state=TargetState(m, P), age=trk.age + 1))
    return out


# --------------------------------------------------------------- association

@dataclass
class Association:
    """Per-pair association weights plus cached Kalman updates.

    ``p_a`` is ``(tracks, measurements)``, ``p_na`` has one entry per
    measurement. ``means``/``covs`` hold the updated Gaussian of each gated
    pair and ``gated`` marks which pairs are valid.
    """

    p_a: np.ndarray
    p_na: np.ndarray
    gated: np.ndarray
    likelihood: np.ndarray
    means: np.ndarray
    covs: np.ndarray


def _kalman_pairs(trk: Track, Z: np.ndarray, R: np.ndarray, gate: float):
    m, P = trk.state.mean, trk.state.covariance
    S = H @ P @ H.T + R
    try:
        S_chol = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError:
        raise NumericalError("innovation covariance is not positive definite") from None
    nu = Z - m[:MEAS_DIM]
    nu[:, YAW] = wrap_angle(nu[:, YAW])
    white = np.linalg.solve(S_chol, nu.T)  # (7, M)
    d2 = np.sum(white**2, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(S_chol)))
    lik = np.exp(-0.5 * d2 - 0.5 * (MEAS_DIM * math.log(2 * math.pi) + log_det))
    PHt = P @ H.T
    K = np.linalg.solve(S, PHt.T).T  # P H^T S^-1, S symmetric
    means = m + nu @ K.T
    means[:, YAW] = wrap_angle(means[:, YAW])
    IKH = np.eye(STATE_DIM) - K @ H
    cov = IKH @ P @ IKH.T + K @ R @ K.T  # Joseph form
    cov = 0.5 * (cov + cov.T)
    return d2 <= gate, lik, means, cov


def associate(tracks: Sequence[Track], measurements: Sequence[Measurement],
              config: FilterConfig) -> Association:
    """Association matrix and non-assignment probabilities.

    A gated, class-compatible pair gets weight
    ``w_ij = r_i p_D g_ij / (1 - r_i p_D)`` with ``g_ij`` the Gaussian
    innovation likelihood. Per measurement,
    ``p_a[i, j] = w_ij / (kappa + sum_k w_kj)`` and ``p_na[j] = 1 - sum_i p_a[i, j]``
    where ``kappa`` is the clutter intensity. For one track and one
    measurement this is the exact Bernoulli posterior.
    """
    nt, nm = len(tracks), len(measurements)
    gated = np.zeros((nt, nm), dtype=bool)
    lik = np.zeros((nt, nm))
    means = np.zeros((nt, nm, STATE_DIM))
    covs = np.zeros((nt, STATE_DIM, STATE_DIM))
    if nm:
        Z = np.stack([mz.z for mz in measurements])
        classes = np.array([mz.cls for mz in measurements], dtype=object)
        R = config.R_matrix
        for i, trk in enumerate(tracks):
            ok, g, mu, P = _kalman_pairs(trk, Z, R, config.gate)
            gated[i] = ok & (classes == trk.cls)
            lik[i] = np.where(gated[i], g, 0.0)
            means[i] = mu
            covs[i] = P
    pd = config.p_detect
    r = np.array([t.existence for t in tracks], dtype=float).reshape(nt, 1)
    odds = np.divide(r * pd, 1.0 - r * pd, out=np.full_like(r, 1e300), where=(r * pd) < 1.0)
    w = np.where(gated, odds * lik, 0.0)
    total = config.clutter_intensity + w.sum(axis=0)
    safe = np.where(total > 0, total, 1.0)
    p_a = np.where(total > 0, w / safe, 0.0)
    p_na = np.where(total > 0, config.clutter_intensity / safe, 1.0)
    return Association(p_a, p_na, gated, lik, means, covs)


def _moment_match(weights: np.ndarray, means: np.ndarray, covs: np.ndarray):
    weights = weights / weights.sum()
    m = _weighted_state_mean(means, weights)
    d = _residuals(means, m)
    P = np.einsum("k,kij->ij", weights, covs) + (d * weights[:, None]).T @ d
    return m, 0.5 * (P + P.T)


def update(tracks: Sequence[Track], measurements: Sequence[Measurement],
           config: FilterConfig, association: Optional[Association] = None) -> list[Track]:
    """Posterior tracks from the association weights.

    Track ``i`` is detected with probability ``B_i = sum_j p_a[i, j]``
    (capped at 1). Otherwise it is missed, and a missed Bernoulli keeps
    existence ``r (1 - p_D) / (1 - r p_D)``. The spatial posterior mixes the
    missed (predicted) Gaussian with the per-measurement Kalman updates using
    the same weights.
    """
    if association is None:
        association = associate(tracks, measurements, config)
    pd = config.p_detect
    out = []
    for i, trk in enumerate(tracks):
        r = trk.existence
        beta = association.p_a[i] if len(measurements) else np.zeros(0)
        detected = float(beta.sum())
        if detected > 1.0:
            beta = beta / detected
            detected = 1.0
        denom = 1.0 - r * pd
        r_miss = r * (1.0 - pd) / denom if denom > 0 else 0.0
        w_miss = (1.0 - detected) * r_miss
        r_post = min(1.0, max(0.0, detected + w_miss))
        idx = np.flatnonzero(beta > 0)
        if r_post <= 0.0 or idx.size == 0:
            state = trk.state
        else:
            weights = np.concatenate([[w_miss], beta[idx]])
            means = np.vstack([trk.state.mean, association.means[i, idx]])
            covs = np.concatenate([trk.state.covariance[None],
                                   np.repeat(association.covs[i][None], idx.size, axis=0)])
            keep = weights > 0
            m, P = _moment_match(weights[keep], means[keep], covs[keep])
            state = TargetState(m, _stabilize(P, "posterior covariance"))
        out.append(replace(trk, existence=r_post, state=state))
    return out


def birth(measurements: Sequence[Measurement], p_na: np.ndarray, config: FilterConfig,
          time: int = 0) -> list[Track]:
    """New tracks from measurements no existing track explains.

    Measurement ``j`` spawns a track when ``p_na[j] > P_na``. Its existence
    is ``r_birth`` or, when ``birth_rate`` is set, the expected birth count
    shared out in proportion to ``p_na`` and capped at ``r_birth``.
    Labels are ``(time, j)``.
    """
    p_na = np.asarray(p_na, dtype=float)
    chosen = [j for j in range(len(measurements)) if p_na[j] > config.P_na]
    if not chosen:
        return []
    if config.birth_rate is None:
        r_new = np.full(len(chosen), config.r_birth)
    else:
        share = p_na[chosen] / p_na[chosen].sum()
        r_new = np.minimum(config.r_birth, config.birth_rate * share)
    out = []
    for j, r in zip(chosen, r_new):
        mz = measurements[j]
        mean = np.concatenate([mz.z, [0.0, 0.0]])
        out.append(Track((time, j), float(r), TargetState(mean, config.birth_cov), mz.cls, 0))
    return out


def prune(tracks: Sequence[Track], config: FilterConfig) -> list[Track]:
    return [t for t in tracks if t.existence >= config.r_prune]


def cardinality_distribution(existences: Sequence[float]) -> np.ndarray:
    """Exact ``rho(n)``, ``n = 0..len(existences)``, by sequential convolution.

    Adding one Bernoulli component of existence ``r`` maps ``rho`` to
    ``(1 - r) rho(n) + r rho(n - 1)``; ``r = 1`` is a pure shift.
    """
    r = np.asarray(existences, dtype=float).ravel()
    if np.any(~np.isfinite(r)) or np.any((r < 0) | (r > 1)):
        raise InputError("existence probabilities must lie in [0, 1]")
    rho = np.zeros(len(r) + 1)
    rho[0] = 1.0
    for k, rk in enumerate(r, start=1):
        rho[1:k + 1] = (1.0 - rk) * rho[1:k + 1] + rk * rho[0:k]
        rho[0] *= 1.0 - rk
    return rho


def extract(tracks: Sequence[Track]) -> list[Track]:
    """The ``round(E[n])`` most probable tracks; ties go to the older label."""
    if not tracks:
        return []
    rho = cardinality_distribution([t.existence for t in tracks])
    n_e = int(math.floor(float(np.arange(len(rho)) @ rho) + 0.5))
    ranked = sorted(tracks, key=lambda t: (-t.existence, t.label))
    return ranked[:n_e]


# -------------------------------------------------------------------- filter

class LMBFilter:
    """Sequential LMB filter; one :meth:`step` per frame."""

    def __init__(self, config: Optional[FilterConfig] = None):
        self.config = config or FilterConfig()
        self.tracks: list[Track] = []
        self.time = -1
        self._ids: dict[tuple[int, int], int] = {}

    def track_id(self, label: tuple[int, int]) -> int:
        """Stable small integer for a label, assigned in first-request order."""
        if label not in self._ids:
            self._ids[label] = len(self._ids)
        return self._ids[label]

    @property
    def num_reported(self) -> int:
        """How many distinct tracks have been handed an id so far."""
        return len(self._ids)

    def step(self, measurements: Sequence[Measurement],
             dt: Optional[float] = None) -> list[Track]:
        cfg = self.config
        dt = cfg.dt if dt is None else dt
        if dt <= 0:
            raise InputError("dt must be positive")
        self.time += 1
        tracks = predict(self.tracks, dt, cfg)
        assoc = associate(tracks, measurements, cfg)
        tracks = update(tracks, measurements, cfg, assoc)
        tracks += birth(measurements, assoc.p_na, cfg, self.time)
        self.tracks = prune(tracks, cfg)
        return extract(self.tracks)

    def run(self, frames: Sequence[Sequence[Measurement]],
            dt: Optional[float] = None) -> list[list[Track]]:
        return [self.step(ms, dt) for ms in frames]


def step(filt: LMBFilter, measurements: Sequence[Measurement],
         dt: Optional[float] = None) -> tuple[LMBFilter, list[Track]]:
    extracted = filt.step(measurements, dt)
    return filt, extracted
