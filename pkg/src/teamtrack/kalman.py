"""Constant-velocity Kalman filter on (cx, cy, w, h) boxes.

State is an 8-vector (cx, cy, w, h, vcx, vcy, vw, vh); process and
measurement noise are diagonal and scaled by the box height, following the
usual tracking-by-detection setup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingBox

_STD_POS = 1.0 / 20.0   # position/size noise, relative to box height
_STD_VEL = 1.0 / 160.0  # velocity noise, relative to box height

_DIM = 8
_F = np.eye(_DIM)
_F[:4, 4:] = np.eye(4)          # x += v * (1 frame)
_H = np.eye(4, _DIM)            # observe (cx, cy, w, h)


@dataclass(frozen=True)
class TrackState:
    """Gaussian belief over one track's box and velocity."""

    mean: np.ndarray        # shape (8,)
    covariance: np.ndarray  # shape (8, 8), symmetric positive-definite

    def __post_init__(self):
        if self.mean.shape != (_DIM,) or self.covariance.shape != (_DIM, _DIM):
            raise ValueError("bad state shapes")
        if self.mean[2] <= 0 or self.mean[3] <= 0:
            raise ValueError("state width/height must stay positive")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")

    def box(self) -> BoundingBox:
        cx, cy, w, h = self.mean[:4]
        return BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)


def _box_to_measurement(box: BoundingBox) -> np.ndarray:
    cx, cy = box.center
    return np.array([cx, cy, box.width, box.height], dtype=np.float64)


def initiate(box: BoundingBox) -> TrackState:
    """Open a new track on an unmatched detection: zero velocity, broad
    covariance."""
    mean = np.zeros(_DIM)
    mean[:4] = _box_to_measurement(box)
    h = box.height
    std = np.array([2 * _STD_POS * h] * 4 + [10 * _STD_VEL * h] * 4)
    return TrackState(mean, np.diag(std**2))


def kalman_predict(state: TrackState) -> TrackState:
    """Advance the belief by one frame under the constant-velocity model."""
    h = state.mean[3]
    std = np.array([_STD_POS * h] * 4 + [_STD_VEL * h] * 4)
    q = np.diag(std**2)
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T + q
    mean[2] = max(mean[2], 1e-3)
    mean[3] = max(mean[3], 1e-3)
    return TrackState(mean, 0.5 * (cov + cov.T))


def kalman_update(
    state: TrackState, measurement: BoundingBox, measurement_var: np.ndarray | None = None
) -> TrackState:
    """Standard Kalman correction on the four observed box components.

    ``measurement_var`` overrides the default height-scaled diagonal
    measurement noise (useful for tests).
    """
    z = _box_to_measurement(measurement)
    if measurement_var is None:
        h = measurement.height
        measurement_var = np.full(4, (_STD_POS * h) ** 2)
    r = np.diag(measurement_var)
    s = _H @ state.covariance @ _H.T + r
    gain = state.covariance @ _H.T @ np.linalg.inv(s)
    innovation = z - _H @ state.mean
    mean = state.mean + gain @ innovation
    cov = (np.eye(_DIM) - gain @ _H) @ state.covariance
    mean[2] = max(mean[2], 1e-3)
    mean[3] = max(mean[3], 1e-3)
    return TrackState(mean, 0.5 * (cov + cov.T))
