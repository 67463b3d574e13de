from __future__ import annotations

import math

import numpy as np
import pytest

from radar_odom import sim
from radar_odom.core import Pose2, Vec2
from radar_odom.errors import DatasetTooShortError, InvalidParamsError
from radar_odom.ingest import Dataset
from radar_odom.odometry import (
    FallbackPolicy,
    FrameEstimate,
    FrameFlags,
    IcpMode,
    PipelineConfig,
    estimates_to_json,
    integrate_pose,
    run_pipeline,
)
from radar_odom.preprocess import Method
from radar_odom.velocity import RansacParams


def test_integrate_pose_examples():
    p = integrate_pose(Pose2(1.0, 2.0, 0.3, 0.0), FrameEstimate(0.2, Vec2(0, 0), 0.0, 0.2))
    assert (p.x, p.y, p.yaw, p.t) == (1.0, 2.0, 0.3, 0.2)
    p = integrate_pose(Pose2(), FrameEstimate(0.2, Vec2(1, 0), 0.0, 0.2))
    assert (p.x, p.y, p.yaw) == (0.2, 0.0, 0.0)
    p = integrate_pose(Pose2(), FrameEstimate(1.0, Vec2(1, 0), math.pi / 2, 1.0))
    assert p.x == pytest.approx(math.sqrt(2) / 2) and p.y == pytest.approx(math.sqrt(2) / 2)
    assert p.yaw == pytest.approx(math.pi / 2)


def test_frame_estimate_requires_positive_dt():
    with pytest.raises(InvalidParamsError):
        FrameEstimate(0.0, Vec2(0, 0), 0.0, 0.0)


def test_config_round_trip_and_validation():
    cfg = PipelineConfig(preprocessor=Method.CFAR, k=50, icp_mode="one-way", sampling=None)
    back = PipelineConfig.from_mapping(cfg.to_mapping())
    assert back.preprocessor is Method.CFAR and back.k == 50 and back.icp_mode is IcpMode.ONE_WAY
    assert back.sampling is None
    assert PipelineConfig.from_mapping({}) == PipelineConfig()
    with pytest.raises(InvalidParamsError):
        PipelineConfig.from_mapping({"bogus": {}})
    with pytest.raises(InvalidParamsError):
        PipelineConfig.from_mapping({"pipeline": {"nope": 1}})
    with pytest.raises(InvalidParamsError):
        PipelineConfig.from_mapping({"sampling": {"eps": 1}})
    with pytest.raises(InvalidParamsError):
        PipelineConfig(k=0)


@pytest.fixture(scope="module")
def stationary():
    return sim.simulate(*sim.fixture("stationary"))


def test_stationary_stays_at_origin(stationary):
    ds, gt = stationary
    tr, est = run_pipeline(ds)
    assert np.abs(tr.xy()).max() < 1e-9
    assert max(abs(e.dyaw) for e in est) < 1e-9
    assert np.array_equal(tr.times(), [h.t for h in ds.cascade_frames])
    assert tr.poses[0] == Pose2(0.0, 0.0, 0.0, ds.cascade_frames[0].t)


def test_pipeline_deterministic(stationary):
    ds, _ = sim.simulate(*sim.fixture("square_noisy", seed=3))
    a, ea = run_pipeline(ds)
    b, eb = run_pipeline(ds)
    assert a == b and estimates_to_json(ea) == estimates_to_json(eb)


def test_straight_line_endpoint():
    ds, gt = sim.simulate(*sim.fixture("straight"))
    tr, _ = run_pipeline(ds)
    end = tr.xy()[-1]
    assert np.linalg.norm(end - gt.xy()[-1]) <= 0.02 * 10.0
    assert end[0] == pytest.approx(10.0, abs=0.2)


def test_too_short(stationary):
    ds, _ = stationary
    with pytest.raises(DatasetTooShortError):
        run_pipeline(Dataset(ds.singlechip_frames, ds.cascade_frames[:1], None, ds.specs))


def test_velocity_fallback_policies():
    # every Doppler frame fails RANSAC when min_inliers exceeds the target count
    ds, _ = sim.simulate(*sim.fixture("straight"))
    cfg = PipelineConfig(ransac=RansacParams(min_inliers=10_000))
    for policy in FallbackPolicy:
        tr, est = run_pipeline(ds, PipelineConfig(ransac=cfg.ransac, fallback_policy=policy))
        assert all(e.flags.velocity_fallback for e in est)
        assert all(e.v == Vec2(0.0, 0.0) for e in est)


def test_debug_records(stationary):
    ds, _ = stationary
    dbg: list = []
    _, est = run_pipeline(ds, debug=dbg)
    assert len(dbg) == len(est) == len(ds.cascade_frames) - 1
    rec = dbg[0]
    assert {"frame", "dyaw", "labels", "match_pairs", "per_iteration_yaw"} <= set(rec)
    assert all(isinstance(p, list) and len(p) == 2 for p in rec["match_pairs"])


def test_flags_serialise():
    e = FrameEstimate(0.2, Vec2(1, 0), 0.1, 0.2, FrameFlags(icp_failed=True))
    assert e.to_dict()["icp_failed"] is True
