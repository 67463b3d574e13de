"""Planar ego-velocity from a single-chip Doppler point cloud.

Static scatterers observed from a sensor moving with planar velocity ``v`` show
a radial-speed field ``v_r(theta) = a cos(theta) + b sin(theta)`` with
``(a, b) = -v``. The field is fitted with 2-point RANSAC, refined by least
squares on the consensus set, and negated into the ego-velocity.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import TimeStamp, Vec2, wrap_angle
from .errors import (
    DegenerateGeometryError,
    DegenerateProjectionError,
    EstimationFailedError,
    InvalidParamsError,
    InvalidTimestampsError,
)
from .ingest import DopplerFrame, DopplerTarget

log = logging.getLogger(__name__)

_RANK_TOL = 1e-9
_MIN_PAIR_SINE = 1e-6


@dataclass(frozen=True)
class RadialObservation:
    theta: float
    v_r: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.theta) and math.isfinite(self.v_r)):
            raise DegenerateProjectionError("radial observation must be finite")
        object.__setattr__(self, "theta", wrap_angle(self.theta))


@dataclass(frozen=True)
class BodyVelocity:
    vx: float
    vy: float
    t: TimeStamp
    n_inliers: int = 0
    residual_rms: float = 0.0

    def vec(self) -> Vec2:
        return Vec2(self.vx, self.vy)


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 100
    inlier_threshold: float = 0.1  # m/s
    min_inliers: int = 5
    seed: int = 0
    planar_eps: float = 0.05  # m; targets closer than this to the z axis are dropped

    def __post_init__(self) -> None:
        if self.max_iterations <= 0:
            raise InvalidParamsError("max_iterations must be > 0")
        if not self.inlier_threshold > 0:
            raise InvalidParamsError("inlier_threshold must be > 0")
        if self.min_inliers < 2:
            raise InvalidParamsError("min_inliers must be >= 2")
        if self.planar_eps < 0:
            raise InvalidParamsError("planar_eps must be >= 0")


def project_radial(target: DopplerTarget, planar_eps: float = 0.05) -> RadialObservation:
    """Project a 3D Doppler detection onto the xy plane: v_r = (rho / r) * v_d."""
    rho = math.hypot(target.x, target.y)
    r = math.sqrt(target.x**2 + target.y**2 + target.z**2)
    if rho <= planar_eps or r == 0:
        raise DegenerateProjectionError(f"target at planar distance {rho:.3g} m is too close to the z axis")
    return RadialObservation(math.atan2(target.y, target.x), rho / r * target.doppler)


def project_points(points: np.ndarray, planar_eps: float = 0.05) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection of an (N, 5) target array.

    Returns (theta, v_r, r) for the targets that survive the planar-distance check.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 5)
    rho = np.hypot(pts[:, 0], pts[:, 1])
    r = np.linalg.norm(pts[:, :3], axis=1)
    keep = (rho > planar_eps) & (r > 0)
    if not np.all(keep):
        log.debug("dropped %d targets near the z axis", int(np.sum(~keep)))
    pts, rho, r = pts[keep], rho[keep], r[keep]
    return np.arctan2(pts[:, 1], pts[:, 0]), rho / r * pts[:, 3], r


def fit_radial_field(theta: np.ndarray, v_r: np.ndarray) -> np.ndarray:
    """Least-squares (a, b) of v_r = a cos(theta) + b sin(theta)."""
    theta = np.asarray(theta, dtype=float)
    v_r = np.asarray(v_r, dtype=float)
    if theta.size < 2:
        raise DegenerateGeometryError(f"need at least 2 observations, got {theta.size}")
    A = np.column_stack([np.cos(theta), np.sin(theta)])
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= _RANK_TOL * max(s[0], 1.0):
        raise DegenerateGeometryError("observations do not span two distinct azimuths")
    sol, *_ = np.linalg.lstsq(A, v_r, rcond=None)
    return sol


def solve_velocity_lsq(obs: Sequence[RadialObservation]) -> Vec2:
    """Fit the radial-speed field over ``obs`` (model as written, no sign flip)."""
    theta = np.array([o.theta for o in obs], dtype=float)
    v_r = np.array([o.v_r for o in obs], dtype=float)
    a, b = fit_radial_field(theta, v_r)
    return Vec2(float(a), float(b))


def ransac_consensus(theta: np.ndarray, v_r: np.ndarray, params: RansacParams) -> np.ndarray:
    """Boolean inlier mask of the largest 2-point consensus set.

    Inputs must already be in canonical (sorted) order; the sample sequence
    depends only on ``len(theta)`` and ``params.seed``.
    """
    n = theta.size
    if n < 2:
        return np.zeros(n, dtype=bool)
    rng = np.random.default_rng(params.seed)
    i = rng.integers(0, n, size=params.max_iterations)
    j = rng.integers(0, n - 1, size=params.max_iterations)
    j = j + (j >= i)

    c, s = np.cos(theta), np.sin(theta)
    det = c[i] * s[j] - s[i] * c[j]
    ok = np.abs(det) > _MIN_PAIR_SINE
    if not np.any(ok):
        return np.zeros(n, dtype=bool)
    i, j, det = i[ok], j[ok], det[ok]
    a = (v_r[i] * s[j] - v_r[j] * s[i]) / det
    b = (c[i] * v_r[j] - c[j] * v_r[i]) / det
    resid = np.abs(v_r[None, :] - a[:, None] * c[None, :] - b[:, None] * s[None, :])
    inliers = resid < params.inlier_threshold
    best = int(np.argmax(inliers.sum(axis=1)))
    return inliers[best]


def estimate_velocity(
    frame: DopplerFrame | Sequence[DopplerTarget] | np.ndarray,
    params: RansacParams = RansacParams(),
    t: TimeStamp | None = None,
) -> BodyVelocity:
    """Sensor ego-velocity (vx, vy) from one Doppler frame."""
    if isinstance(frame, DopplerFrame):
        points, t = frame.points, frame.t if t is None else t
    elif isinstance(frame, np.ndarray):
        points = frame
    else:
        points = np.array([[p.x, p.y, p.z, p.doppler, p.intensity] for p in frame], dtype=float)
    t = 0.0 if t is None else t

    theta, v_r, r = project_points(points, params.planar_eps)
    # canonical order makes the result independent of input permutation
    order = np.lexsort((v_r, r, theta))
    theta, v_r = theta[order], v_r[order]

    mask = ransac_consensus(theta, v_r, params)
    n_in = int(mask.sum())
    if n_in < params.min_inliers:
        raise EstimationFailedError(
            f"best consensus has {n_in} inliers of {theta.size}, need {params.min_inliers} (t={t})"
        )
    try:
        a, b = fit_radial_field(theta[mask], v_r[mask])
    except DegenerateGeometryError as e:
        raise EstimationFailedError(f"consensus set is degenerate: {e}") from None
    res = v_r[mask] - a * np.cos(theta[mask]) - b * np.sin(theta[mask])
    return BodyVelocity(-float(a), -float(b), t, n_in, float(np.sqrt(np.mean(res**2))))


def interpolate_velocity(
    v_prev: BodyVelocity, v_curr: BodyVelocity, t_c_prev: TimeStamp, t_c_curr: TimeStamp
) -> Vec2:
    """Velocity at the midpoint of a cascade interval, linear between two single-chip estimates."""
    dt_s = v_curr.t - v_prev.t
    if not dt_s > 0:
        raise InvalidTimestampsError(f"single-chip estimates not increasing in time (dt_s={dt_s})")
    tau = (t_c_curr + t_c_prev) / 2.0 - v_prev.t
    return Vec2(
        (v_curr.vx - v_prev.vx) / dt_s * tau + v_prev.vx,
        (v_curr.vy - v_prev.vy) / dt_s * tau + v_prev.vy,
    )


def bracket_index(times: Sequence[float], t_mid: float) -> int:
    """Index i such that (times[i], times[i + 1]) brackets ``t_mid``.

    Picks the last sample with time <= t_mid; clamps to the first/last pair when
    the midpoint lies outside the stream (linear extrapolation then applies).
    """
    if len(times) < 2:
        raise InvalidTimestampsError("need at least two single-chip frames to bracket a cascade interval")
    i = bisect.bisect_right(times, t_mid) - 1
    return min(max(i, 0), len(times) - 2)
