"""Frame-to-frame radar odometry: Doppler velocity + heatmap yaw -> SE(2) trajectory."""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .core import Pose2, TimeStamp, Trajectory, Vec2, wrap_angle
from .errors import (
    DatasetTooShortError,
    EstimationFailedError,
    InvalidParamsError,
    RegistrationError,
)
from .ingest import CASCADE, Dataset
from .preprocess import CfarParams, FeatureSet, Method, Roi, collapse_elevation, extract
from .registration import IcpParams, IcpResult, SamplingParams, one_way_wicp, rectify, two_way_mwicp
from .velocity import BodyVelocity, RansacParams, bracket_index, estimate_velocity, interpolate_velocity

log = logging.getLogger(__name__)

__all__ = [
    "FallbackPolicy", "FrameEstimate", "IcpMode", "PipelineConfig", "Trajectory",
    "integrate_pose", "run_pipeline", "estimates_to_json",
]


class FallbackPolicy(str, enum.Enum):
    HOLD_LAST = "hold_last"
    ZERO_MOTION = "zero_motion"


class IcpMode(str, enum.Enum):
    TWO_WAY = "two-way"
    ONE_WAY = "one-way"


@dataclass(frozen=True)
class PipelineConfig:
    preprocessor: Method = Method.TOPK
    k: int = 200
    cfar: CfarParams = CfarParams()
    sampling: SamplingParams | None = SamplingParams()  # None: classic wICP, no remove/neglect
    icp: IcpParams = IcpParams()
    icp_mode: IcpMode = IcpMode.TWO_WAY
    ransac: RansacParams = RansacParams()
    fallback_policy: FallbackPolicy = FallbackPolicy.HOLD_LAST
    roi: Roi | None = None  # None: cascade sensor spec of the dataset

    def __post_init__(self) -> None:
        object.__setattr__(self, "preprocessor", Method(self.preprocessor))
        object.__setattr__(self, "icp_mode", IcpMode(self.icp_mode))
        object.__setattr__(self, "fallback_policy", FallbackPolicy(self.fallback_policy))
        if self.k < 1:
            raise InvalidParamsError("k must be >= 1")

    @classmethod
    def from_mapping(cls, m: Mapping[str, Any]) -> PipelineConfig:
        """Build from the TOML schema (see README); unknown keys are rejected."""
        known = {"pipeline", "cfar", "sampling", "icp", "ransac", "roi", "eval"}
        unknown = set(m) - known
        if unknown:
            raise InvalidParamsError(f"unknown config sections: {sorted(unknown)}")
        pipe = dict(m.get("pipeline", {}))
        use_sampling = pipe.pop("sampling", True)
        kwargs: dict[str, Any] = {}
        for key in ("preprocessor", "k", "icp_mode", "fallback_policy"):
            if key in pipe:
                kwargs[key] = pipe.pop(key)
        if pipe:
            raise InvalidParamsError(f"unknown [pipeline] keys: {sorted(pipe)}")
        try:
            kwargs["cfar"] = CfarParams(**m.get("cfar", {}))
            kwargs["sampling"] = SamplingParams(**m.get("sampling", {})) if use_sampling else None
            kwargs["icp"] = IcpParams(**m.get("icp", {}))
            kwargs["ransac"] = RansacParams(**m.get("ransac", {}))
            if "roi" in m:
                kwargs["roi"] = Roi(**m["roi"])
            return cls(**kwargs)
        except TypeError as e:
            raise InvalidParamsError(str(e)) from None

    def to_mapping(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "pipeline": {
                "preprocessor": self.preprocessor.value,
                "k": self.k,
                "icp_mode": self.icp_mode.value,
                "sampling": self.sampling is not None,
                "fallback_policy": self.fallback_policy.value,
            },
            "cfar": dataclasses.asdict(self.cfar),
            "sampling": dataclasses.asdict(self.sampling or SamplingParams()),
            "icp": {"max_iterations": self.icp.max_iterations, "rot_tolerance": self.icp.rot_tolerance},
            "ransac": dataclasses.asdict(self.ransac),
        }
        if self.roi is not None:
            out["roi"] = dataclasses.asdict(self.roi)
        return out


@dataclass(frozen=True)
class FrameFlags:
    velocity_fallback: bool = False
    icp_degraded: bool = False
    icp_failed: bool = False


@dataclass(frozen=True)
class FrameEstimate:
    t: TimeStamp
    v: Vec2
    dyaw: float
    dt: float
    flags: FrameFlags = FrameFlags()

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise InvalidParamsError(f"frame interval must be > 0, got {self.dt}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "t": self.t, "vx": self.v.x, "vy": self.v.y, "dyaw": self.dyaw, "dt": self.dt,
            **dataclasses.asdict(self.flags),
        }


def integrate_pose(prev: Pose2, est: FrameEstimate) -> Pose2:
    """Midpoint step: advance along the heading halfway through the yaw increment."""
    heading = prev.yaw + 0.5 * est.dyaw
    c, s = math.cos(heading), math.sin(heading)
    return Pose2(
        prev.x + (c * est.v.x - s * est.v.y) * est.dt,
        prev.y + (s * est.v.x + c * est.v.y) * est.dt,
        wrap_angle(prev.yaw + est.dyaw),
        est.t,
    )


def _velocities(ds: Dataset, params: RansacParams) -> list[BodyVelocity | None]:
    out: list[BodyVelocity | None] = []
    for frame in ds.singlechip_frames:
        try:
            out.append(estimate_velocity(frame, params))
        except EstimationFailedError as e:
            log.debug("velocity estimation failed: %s", e)
            out.append(None)
    return out


def register(prev_rect: FeatureSet, curr: FeatureSet, cfg: PipelineConfig, icp: IcpParams,
             prev_origin=(0.0, 0.0)) -> IcpResult:
    """Yaw increment of the body between the two frames (rotation carrying curr onto prev_rect).

    ``prev_origin`` is where the previous sensor sits after rectification.
    """
    if cfg.icp_mode is IcpMode.TWO_WAY:
        return two_way_mwicp(prev_rect, curr, cfg.sampling, icp, prev_origin)
    # one-way: previous frame is the source, current frame the target
    res = one_way_wicp(prev_rect, curr, cfg.sampling, icp)
    res.yaw = wrap_angle(-res.yaw)
    return res


def run_pipeline(ds: Dataset, cfg: PipelineConfig = PipelineConfig(),
                 debug: list[dict[str, Any]] | None = None) -> tuple[Trajectory, list[FrameEstimate]]:
    """Estimate one pose per cascade frame; the first frame anchors the identity pose.

    If ``debug`` is a list, one diagnostic record per frame step is appended.
    """
    if len(ds.cascade_frames) < 2 or len(ds.singlechip_frames) < 2:
        raise DatasetTooShortError(
            f"need >= 2 cascade and >= 2 single-chip frames, got "
            f"{len(ds.cascade_frames)} / {len(ds.singlechip_frames)}"
        )
    roi = cfg.roi or Roi.from_spec(ds.specs[CASCADE])
    icp = dataclasses.replace(cfg.icp, roi=roi)
    vels = _velocities(ds, cfg.ransac)
    sc_times = [f.t for f in ds.singlechip_frames]

    def features(i: int) -> FeatureSet:
        return extract(collapse_elevation(ds.cascade_frames[i]), cfg.preprocessor, cfg.k, cfg.cfar, roi)

    pose = Pose2(0.0, 0.0, 0.0, ds.cascade_frames[0].t)
    poses = [pose]
    estimates: list[FrameEstimate] = []
    last_v = Vec2(0.0, 0.0)
    prev_feat = features(0)

    for i in range(1, len(ds.cascade_frames)):
        t0, t1 = ds.cascade_frames[i - 1].t, ds.cascade_frames[i].t
        dt = t1 - t0
        j = bracket_index(sc_times, 0.5 * (t0 + t1))
        vp, vc = vels[j], vels[j + 1]
        fallback = vp is None or vc is None
        if fallback:
            v = last_v if cfg.fallback_policy is FallbackPolicy.HOLD_LAST else Vec2(0.0, 0.0)
        else:
            v = interpolate_velocity(vp, vc, t0, t1)
            last_v = v

        curr_feat = features(i)
        prev_rect = rectify(prev_feat, v, dt)
        degraded = failed = False
        result = None
        try:
            result = register(prev_rect, curr_feat, cfg, icp, (-v.x * dt, -v.y * dt))
            dyaw, degraded = result.yaw, result.degraded
        except RegistrationError as e:
            log.info("frame %d (t=%.3f): registration failed: %s", i, t1, e)
            dyaw, failed = 0.0, True

        est = FrameEstimate(t1, v, dyaw, dt, FrameFlags(fallback, degraded, failed))
        estimates.append(est)
        pose = integrate_pose(pose, est)
        poses.append(pose)
        if debug is not None:
            debug.append(_debug_record(i, est, prev_rect, curr_feat, result))
        prev_feat = curr_feat

    return Trajectory(poses), estimates


def _debug_record(i: int, est: FrameEstimate, prev_rect: FeatureSet, curr: FeatureSet,
                  result: IcpResult | None) -> dict[str, Any]:
    rec: dict[str, Any] = {"frame": i, **est.to_dict(), "n_prev": len(prev_rect), "n_curr": len(curr)}
    if result is not None:
        rec["iterations"] = result.iterations
        rec["converged"] = result.converged
        rec["per_iteration_yaw"] = list(result.per_iteration_yaw)
        if result.labels is not None:
            labels = np.asarray(result.labels)
            rec["labels"] = labels.tolist()
            rec["match_pairs"] = [[int(s), int(t)] for s, t in enumerate(labels) if t >= 0]
    return rec


def estimates_to_json(estimates: list[FrameEstimate]) -> str:
    return json.dumps([e.to_dict() for e in estimates], indent=1, sort_keys=True) + "\n"
