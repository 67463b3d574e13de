"""Rotation-only registration of two heatmap feature sets.

The previous frame's features are first shifted by the interpolated ego
velocity so only a rotation about the sensor origin remains. Source points are
then classified against the target with a polar error
``alpha * dr**2 + beta * dtheta**2``: too far -> removed for the rest of the
run, too close or outside the ROI -> neglected this iteration, otherwise
matched to the nearest target. The rotation of each iteration is the
intensity-weighted Procrustes solution over the matches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Vec2, rot2, wrap_angle, wrap_angles
from .errors import (
    DegenerateWeightsError,
    InvalidParamsError,
    NoMatchesError,
    NoTargetsError,
    RegistrationError,
    UndefinedRotationError,
)
from .preprocess import FeatureSet, Roi

log = logging.getLogger(__name__)

REMOVE = -2
NEGLECT = -1


@dataclass(frozen=True)
class SamplingParams:
    eps_min: float = 1e-4
    eps_max: float = 1.0
    alpha: float = 1.0  # 1/m^2
    beta: float = 10.0  # 1/rad^2

    def __post_init__(self) -> None:
        if not 0 <= self.eps_min < self.eps_max:
            raise InvalidParamsError("need 0 <= eps_min < eps_max")
        if self.alpha < 0 or self.beta < 0 or not self.alpha + self.beta > 0:
            raise InvalidParamsError("alpha, beta must be >= 0 with a positive sum")


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 20
    rot_tolerance: float = 1e-4  # rad
    roi: Roi = Roi()

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidParamsError("max_iterations must be >= 1")
        if not self.rot_tolerance > 0:
            raise InvalidParamsError("rot_tolerance must be > 0")


@dataclass(frozen=True, eq=False)
class Classification:
    """Per-source labels: REMOVE, NEGLECT or the index of the matched target."""

    labels: np.ndarray
    e_min: np.ndarray
    in_roi: np.ndarray

    @property
    def matched(self) -> np.ndarray:
        return self.labels >= 0

    def counts(self) -> dict[str, int]:
        return {
            "match": int(np.sum(self.labels >= 0)),
            "neglect": int(np.sum(self.labels == NEGLECT)),
            "remove": int(np.sum(self.labels == REMOVE)),
        }


@dataclass(eq=False)
class IcpResult:
    yaw: float
    iterations: int
    matched_pairs_final: int
    converged: bool
    per_iteration_yaw: list[float] = field(default_factory=list)
    degraded: bool = False
    labels: np.ndarray | None = None
    forward: IcpResult | None = None
    backward: IcpResult | None = None


def rectify(prev: FeatureSet, v_c: Vec2, dt_c: float) -> FeatureSet:
    """Shift previous-frame features by -v_c * dt_c (Cartesian), back to polar."""
    if not dt_c > 0:
        raise InvalidParamsError(f"dt_c must be > 0, got {dt_c}")
    xy = prev.xy() - np.array([v_c.x, v_c.y]) * dt_c
    keep = np.any(xy != 0.0, axis=1)
    if not np.all(keep):
        log.warning("rectification moved %d feature(s) onto the sensor origin; dropped", int(np.sum(~keep)))
    return FeatureSet.from_cartesian(xy[keep], prev.intensity[keep], prev.method, prev.t)


def pair_error(a, b, p: SamplingParams) -> float:
    """alpha * (r_a - r_b)^2 + beta * wrap(theta_a - theta_b)^2 for two PolarPoints."""
    return p.alpha * (a.r - b.r) ** 2 + p.beta * wrap_angle(a.theta - b.theta) ** 2


def error_matrix(src_r, src_theta, tgt_r, tgt_theta, p: SamplingParams) -> np.ndarray:
    dr = src_r[:, None] - tgt_r[None, :]
    dth = wrap_angles(src_theta[:, None] - tgt_theta[None, :])
    return p.alpha * dr**2 + p.beta * dth**2


def in_view(source: FeatureSet, roi: Roi, origin=(0.0, 0.0)) -> np.ndarray:
    """ROI membership as seen from a sensor at ``origin`` (same axes as ``source``)."""
    ox, oy = float(origin[0]), float(origin[1])
    if ox == 0.0 and oy == 0.0:
        return roi.contains(source.r, source.theta)
    xy = source.xy() - np.array([ox, oy])
    return roi.contains(np.hypot(xy[:, 0], xy[:, 1]), np.arctan2(xy[:, 1], xy[:, 0]))


def classify(source: FeatureSet, target: FeatureSet, p: SamplingParams, roi: Roi | None = None,
             origin=(0.0, 0.0)) -> Classification:
    """Label each source point REMOVE, NEGLECT or with its nearest target index.

    ``origin`` is the position of the sensor that observed ``target``; a
    source point it could not have seen is out of the ROI.
    """
    if len(target) == 0:
        raise NoTargetsError("target feature set is empty")
    E = error_matrix(source.r, source.theta, target.r, target.theta, p)
    idx = np.argmin(E, axis=1)
    e_min = E[np.arange(len(source)), idx]
    in_roi = in_view(source, roi, origin) if roi is not None else np.ones(len(source), dtype=bool)
    labels = idx.astype(np.int64)
    labels[e_min > p.eps_max] = REMOVE
    labels[(e_min < p.eps_min) | ~in_roi] = NEGLECT
    return Classification(labels, e_min, in_roi)


def weighted_rotation(src: np.ndarray, tgt: np.ndarray, weights: np.ndarray) -> float:
    """Yaw of the proper rotation R minimising sum_i w_i |tgt_i - R src_i|^2.

    Weights are normalised to sum 1 before the solve.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    tgt = np.asarray(tgt, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float).ravel()
    if len(src) == 0 or len(src) != len(tgt) or len(w) != len(src):
        raise DegenerateWeightsError(f"need matching non-empty pair arrays, got {len(src)}/{len(tgt)}/{len(w)}")
    total = w.sum()
    if np.any(w < 0) or not np.all(np.isfinite(w)) or not total > 0:
        raise DegenerateWeightsError("weights must be finite, >= 0 and have a positive sum")
    w = w / total
    H = (src * w[:, None]).T @ tgt
    scale = float(np.sum(w * np.linalg.norm(src, axis=1) * np.linalg.norm(tgt, axis=1)))
    if not np.any(H) or np.linalg.norm(H) <= 1e-14 * scale:
        raise UndefinedRotationError("cross-covariance vanishes; rotation undefined")
    U, _, Vt = np.linalg.svd(H)
    V = Vt.T
    d = np.sign(np.linalg.det(V @ U.T))
    R = V @ np.diag([1.0, d]) @ U.T
    return math.atan2(R[1, 0], R[0, 0])


def _normalised(w: np.ndarray) -> np.ndarray:
    m = w.max() if w.size else 0.0
    return w / m if m > 0 else np.zeros_like(w)


def one_way_wicp(source: FeatureSet, target: FeatureSet, sp: SamplingParams | None = SamplingParams(),
                 ip: IcpParams = IcpParams(), target_origin=(0.0, 0.0)) -> IcpResult:
    """Rotation (rad) that carries ``source`` onto ``target``.

    ``target_origin`` locates the sensor that observed ``target`` (non-zero
    when the target is a rectified previous frame). With ``sp=None`` this is
    the classic weighted ICP: every source point is matched to its Euclidean
    nearest target, no removal or neglect.
    """
    if len(source) == 0 or len(target) == 0:
        raise NoMatchesError("empty source or target feature set")
    tgt_xy = target.xy()
    w_src = _normalised(source.intensity)
    w_tgt = _normalised(target.intensity)
    active = np.ones(len(source), dtype=bool)
    total = 0.0
    history: list[float] = []
    labels = np.full(len(source), NEGLECT, dtype=np.int64)
    n_matched = 0
    converged = False

    for it in range(1, ip.max_iterations + 1):
        theta = wrap_angles(source.theta + total)
        labels = np.full(len(source), REMOVE, dtype=np.int64)
        if sp is None:
            xy = np.column_stack([source.r * np.cos(theta), source.r * np.sin(theta)])
            d2 = ((xy[:, None, :] - tgt_xy[None, :, :]) ** 2).sum(axis=2)
            labels[:] = np.argmin(d2, axis=1)
            close = np.zeros(len(source), dtype=bool)
        else:
            idx = np.flatnonzero(active)
            cls = classify(FeatureSet(source.r[idx], theta[idx], source.intensity[idx]), target, sp, ip.roi,
                           target_origin)
            labels[idx] = cls.labels
            active[idx[cls.labels == REMOVE]] = False
            close = np.zeros(len(source), dtype=bool)
            close[idx] = (cls.e_min < sp.eps_min) & cls.in_roi

        m = labels >= 0
        n_matched = int(m.sum())
        if n_matched == 0:
            if np.any(close):
                # every usable point already coincides with a target
                history.append(total)
                converged = True
                break
            raise NoMatchesError(f"no source point matched at iteration {it}")
        src_xy = np.column_stack([source.r[m] * np.cos(theta[m]), source.r[m] * np.sin(theta[m])])
        pair_w = 0.5 * (w_src[m] + w_tgt[labels[m]])
        try:
            delta = weighted_rotation(src_xy, tgt_xy[labels[m]], pair_w)
        except (DegenerateWeightsError, UndefinedRotationError) as e:
            raise NoMatchesError(f"iteration {it}: {e}") from None
        total = wrap_angle(total + delta)
        history.append(total)
        if abs(delta) < ip.rot_tolerance:
            converged = True
            break

    return IcpResult(total, len(history), n_matched, converged, history, labels=labels)


def two_way_mwicp(prev_rect: FeatureSet, curr: FeatureSet, sp: SamplingParams | None = SamplingParams(),
                  ip: IcpParams = IcpParams(), prev_origin=(0.0, 0.0)) -> IcpResult:
    """Mean of the forward (curr -> prev_rect) and sign-flipped backward runs.

    The result is the rotation carrying ``curr`` onto ``prev_rect``.
    ``prev_origin`` is the previous sensor position after rectification,
    ``-v * dt``.
    """
    fwd = bwd = None
    try:
        fwd = one_way_wicp(curr, prev_rect, sp, ip, prev_origin)
    except RegistrationError as e:
        log.debug("forward ICP failed: %s", e)
    try:
        bwd = one_way_wicp(prev_rect, curr, sp, ip)
    except RegistrationError as e:
        log.debug("backward ICP failed: %s", e)

    if fwd is None and bwd is None:
        raise NoMatchesError("both ICP directions failed")
    if fwd is not None and bwd is not None:
        yaw = wrap_angle(fwd.yaw + 0.5 * wrap_angle(-bwd.yaw - fwd.yaw))
        return IcpResult(
            yaw,
            max(fwd.iterations, bwd.iterations),
            min(fwd.matched_pairs_final, bwd.matched_pairs_final),
            fwd.converged and bwd.converged,
            fwd.per_iteration_yaw,
            labels=fwd.labels,
            forward=fwd,
            backward=bwd,
        )
    one = fwd if fwd is not None else bwd
    yaw = one.yaw if fwd is not None else wrap_angle(-one.yaw)
    return IcpResult(yaw, one.iterations, one.matched_pairs_final, one.converged, one.per_iteration_yaw,
                     degraded=True, labels=one.labels, forward=fwd, backward=bwd)


def rotation_objective(src: np.ndarray, tgt: np.ndarray, w: np.ndarray, yaw: float) -> float:
    """sum_i w_i |tgt_i - R(yaw) src_i|^2 with weights normalised to sum 1."""
    w = np.asarray(w, dtype=float) / np.sum(w)
    res = np.asarray(tgt) - np.asarray(src) @ rot2(yaw).T
    return float(np.sum(w * np.sum(res**2, axis=1)))
