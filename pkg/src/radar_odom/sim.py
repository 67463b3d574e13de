"""Synthetic scenes with known motion, for checking every pipeline stage.

Landmarks are static 2D reflectors in the world frame. The platform follows a
piecewise-constant body twist. Single-chip frames carry the radial component
of each visible landmark's relative velocity; cascade frames splat landmark
reflectivity into a range-azimuth grid with a 3x3 Gaussian footprint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import load_toml
from .core import Pose2, Trajectory, rot2
from .errors import InvalidParamsError
from .ingest import (
    CASCADE,
    CASCADE_SPEC,
    SINGLECHIP,
    SINGLECHIP_SPEC,
    Dataset,
    DopplerFrame,
    Heatmap,
    SensorSpec,
)
from .ingest import write_dataset as _write_dataset

_SINGLECHIP_STREAM = 1
_CASCADE_STREAM = 2
_MIN_RANGE = 0.1


@dataclass(frozen=True, eq=False)
class Scene:
    landmarks: np.ndarray  # (N, 3): x, y, reflectivity
    clutter_density: float = 0.0  # spurious heatmap points per frame
    noise_sigma_intensity: float = 0.0  # heatmap noise floor, fraction of peak reflectivity
    doppler_noise_sigma: float = 0.0  # m/s
    outlier_fraction: float = 0.0
    seed: int = 0
    n_range: int = 128
    n_azimuth: int = 128
    azimuth_spacing: str = "sine"  # "sine" (FFT grid) or "uniform"
    n_elevation: int = 1
    splat_sigma: float = 0.6  # bins
    clutter_reflectivity: float = 0.15  # fraction of mean landmark reflectivity
    singlechip_offset: float = 0.03  # s, single-chip clock offset against the cascade

    def __post_init__(self) -> None:
        lm = np.asarray(self.landmarks, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(lm)) or np.any(lm[:, 2] < 0):
            raise InvalidParamsError("landmarks must be finite with reflectivity >= 0")
        object.__setattr__(self, "landmarks", lm)
        for name in ("clutter_density", "noise_sigma_intensity", "doppler_noise_sigma", "splat_sigma",
                     "clutter_reflectivity"):
            if getattr(self, name) < 0:
                raise InvalidParamsError(f"{name} must be >= 0")
        if not 0 <= self.outlier_fraction < 1:
            raise InvalidParamsError("outlier_fraction must be in [0, 1)")
        if self.azimuth_spacing not in ("sine", "uniform"):
            raise InvalidParamsError("azimuth_spacing must be 'sine' or 'uniform'")
        if min(self.n_range, self.n_azimuth, self.n_elevation) < 1:
            raise InvalidParamsError("heatmap dimensions must be >= 1")


@dataclass(frozen=True)
class Segment:
    duration: float
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class MotionProfile:
    segments: tuple[Segment, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in self.segments)
        if not segs:
            raise InvalidParamsError("motion profile needs at least one segment")
        if any(not s.duration > 0 for s in segs):
            raise InvalidParamsError("segment durations must be > 0")
        object.__setattr__(self, "segments", segs)

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def _locate(self, t: float) -> tuple[int, float]:
        start = 0.0
        for i, s in enumerate(self.segments):
            if t < start + s.duration or i == len(self.segments) - 1:
                return i, start
            start += s.duration
        raise AssertionError("unreachable")

    def twist_at(self, t: float) -> Segment:
        if t < 0:
            return self.segments[0]
        return self.segments[self._locate(t)[0]]

    def pose_at(self, t: float) -> Pose2:
        """Exact integration of the piecewise-constant twist from the origin at t=0.

        Times before 0 or after the end extrapolate the first/last segment.
        """
        x = y = yaw = 0.0
        start = 0.0
        for i, s in enumerate(self.segments):
            last = i == len(self.segments) - 1
            tau = t - start if last else min(t - start, s.duration)
            x, y, yaw = _advance(x, y, yaw, s, tau)
            if last or t - start <= s.duration:
                break
            start += s.duration
        return Pose2(x, y, yaw, t)


def _advance(x: float, y: float, yaw: float, s: Segment, tau: float) -> tuple[float, float, float]:
    w = s.yaw_rate
    if abs(w * tau) < 1e-12:
        dx, dy = s.vx * tau, s.vy * tau
    else:
        sn, cs = math.sin(w * tau), math.cos(w * tau)
        dx = (sn * s.vx - (1.0 - cs) * s.vy) / w
        dy = ((1.0 - cs) * s.vx + sn * s.vy) / w
    c, sy = math.cos(yaw), math.sin(yaw)
    return x + c * dx - sy * dy, y + sy * dx + c * dy, yaw + w * tau


# --- measurement models ---------------------------------------------------------


def body_frame(landmarks_xy: np.ndarray, pose: Pose2) -> np.ndarray:
    """World landmark positions expressed in the body frame at ``pose``."""
    return (np.asarray(landmarks_xy, dtype=float) - [pose.x, pose.y]) @ rot2(pose.yaw)


def visible(body_xy: np.ndarray, spec: SensorSpec) -> np.ndarray:
    r = np.hypot(body_xy[:, 0], body_xy[:, 1])
    az = np.arctan2(body_xy[:, 1], body_xy[:, 0])
    return (r > _MIN_RANGE) & (r <= spec.max_range) & (np.abs(az) <= spec.max_azimuth)


def radial_doppler(body_xy: np.ndarray, v: Sequence[float], yaw_rate: float = 0.0) -> np.ndarray:
    """Radial speed of static points seen from a sensor moving with body twist (v, yaw_rate).

    Relative velocity of a static point is -(v + w x p); its radial part is -v . p_hat
    (the rotational term is tangential). Positive = receding.
    """
    p = np.asarray(body_xy, dtype=float)
    rel = -(np.asarray(v, dtype=float)[None, :] + yaw_rate * np.column_stack([-p[:, 1], p[:, 0]]))
    return np.sum(rel * p, axis=1) / np.hypot(p[:, 0], p[:, 1])


def doppler_targets(rng: np.random.Generator, body_xy: np.ndarray, v: Sequence[float], yaw_rate: float,
                    spec: SensorSpec, noise_sigma: float = 0.0, outlier_fraction: float = 0.0,
                    intensity: np.ndarray | None = None) -> np.ndarray:
    """(N, 5) single-chip targets: the given static points plus moving-object outliers.

    Outliers make up ``outlier_fraction`` of the returned targets; each carries
    the static Doppler of its position biased by +-U(0.5, 3) m/s.
    """
    body_xy = np.asarray(body_xy, dtype=float).reshape(-1, 2)
    n = len(body_xy)
    dop = radial_doppler(body_xy, v, yaw_rate)
    if noise_sigma > 0:
        dop = dop + rng.normal(0.0, noise_sigma, n)
    inten = np.ones(n) if intensity is None else np.asarray(intensity, dtype=float)
    static = np.column_stack([body_xy, np.zeros(n), dop, inten])

    n_out = int(round(n * outlier_fraction / (1.0 - outlier_fraction))) if n else 0
    if n_out == 0:
        return static
    r = rng.uniform(0.5, spec.max_range, n_out)
    az = rng.uniform(-spec.max_azimuth, spec.max_azimuth, n_out)
    oxy = np.column_stack([r * np.cos(az), r * np.sin(az)])
    bias = rng.choice([-1.0, 1.0], n_out) * rng.uniform(0.5, 3.0, n_out)
    odop = radial_doppler(oxy, v, yaw_rate) + bias
    outliers = np.column_stack([oxy, np.zeros(n_out), odop, rng.uniform(0.2, 1.0, n_out)])
    return np.vstack([static, outliers])


def azimuth_bins(n: int, max_azimuth: float, spacing: str = "sine") -> np.ndarray:
    """Azimuth bin centres spanning the FOV.

    ``sine`` mimics the virtual-array FFT grid (denser ahead, sparser at the
    sides); ``uniform`` spaces bins evenly in angle.
    """
    if spacing == "uniform" or n == 1:
        return np.linspace(-max_azimuth, max_azimuth, n) if n > 1 else np.zeros(1)
    return np.arcsin(np.linspace(-math.sin(max_azimuth), math.sin(max_azimuth), n))


def render_heatmap(rng: np.random.Generator | None, body_xy: np.ndarray, reflectivity: np.ndarray,
                   scene: Scene, spec: SensorSpec, t: float) -> Heatmap:
    """Splat reflectors into a range x azimuth (x elevation) grid."""
    az_bins = azimuth_bins(scene.n_azimuth, spec.max_azimuth, scene.azimuth_spacing).astype(np.float32)
    az_f = az_bins.astype(float)
    grid = np.zeros((scene.n_range, scene.n_azimuth))
    pts = np.asarray(body_xy, dtype=float).reshape(-1, 2)
    refl = np.asarray(reflectivity, dtype=float).ravel()

    if rng is not None and scene.clutter_density > 0:
        n_clutter = rng.poisson(scene.clutter_density)
        cr = rng.uniform(0.3, spec.max_range, n_clutter)
        ca = rng.uniform(-spec.max_azimuth, spec.max_azimuth, n_clutter)
        level = scene.clutter_reflectivity * (refl.mean() if refl.size else 1.0)
        pts = np.vstack([pts, np.column_stack([cr * np.cos(ca), cr * np.sin(ca)])])
        refl = np.concatenate([refl, level * rng.uniform(0.5, 1.0, n_clutter)])

    r = np.hypot(pts[:, 0], pts[:, 1])
    az = np.arctan2(pts[:, 1], pts[:, 0])
    u = r / spec.range_res - 0.5
    ok = (r > _MIN_RANGE) & (u > -1.0) & (u < scene.n_range) & (az >= az_f[0]) & (az <= az_f[-1])
    w = np.interp(az[ok], az_f, np.arange(scene.n_azimuth, dtype=float))
    u, amp = u[ok], refl[ok]
    ci, cj = np.rint(u).astype(int), np.rint(w).astype(int)
    two_s2 = 2.0 * max(scene.splat_sigma, 1e-6) ** 2
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            i, j = ci + di, cj + dj
            inb = (i >= 0) & (i < scene.n_range) & (j >= 0) & (j < scene.n_azimuth)
            val = amp * np.exp(-((i - u) ** 2 + (j - w) ** 2) / two_s2)
            np.add.at(grid, (i[inb], j[inb]), val[inb])

    if rng is not None and scene.noise_sigma_intensity > 0:
        peak = scene.landmarks[:, 2].max() if len(scene.landmarks) else 1.0
        grid += np.abs(rng.normal(0.0, scene.noise_sigma_intensity * peak, grid.shape))

    if scene.n_elevation > 1:
        e = np.arange(scene.n_elevation) - (scene.n_elevation - 1) / 2.0
        profile = np.exp(-0.5 * (e / max(scene.n_elevation / 4.0, 0.5)) ** 2)
        grid3 = grid[:, :, None] * profile[None, None, :]
    else:
        grid3 = grid[:, :, None]
    return Heatmap(spec.range_res, az_bins, grid3.astype(np.float32), t)


# --- scenario -------------------------------------------------------------------


def _frame_rng(seed: int, stream: int, i: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, i])


def simulate(scene: Scene, motion: MotionProfile,
             specs: Mapping[str, SensorSpec] | None = None) -> tuple[Dataset, Trajectory]:
    """Generate both sensor streams plus ground truth sampled at the cascade frames."""
    specs = dict(specs or {SINGLECHIP: SINGLECHIP_SPEC, CASCADE: CASCADE_SPEC})
    sc_spec, cc_spec = specs[SINGLECHIP], specs[CASCADE]
    T = motion.duration
    lm_xy, lm_refl = scene.landmarks[:, :2], scene.landmarks[:, 2]

    n_c = int(math.floor(T * cc_spec.framerate + 1e-9)) + 1
    t_c = [j / cc_spec.framerate for j in range(n_c)]
    period = 1.0 / sc_spec.framerate
    first = scene.singlechip_offset - period * math.ceil(scene.singlechip_offset / period + 1e-12)
    n_s = int(math.floor((T + period - first) / period + 1e-9)) + 1
    t_s = [first + i * period for i in range(n_s)]

    singlechip = []
    for i, t in enumerate(t_s):
        rng = _frame_rng(scene.seed, _SINGLECHIP_STREAM, i)
        pose, tw = motion.pose_at(t), motion.twist_at(t)
        b = body_frame(lm_xy, pose)
        vis = visible(b, sc_spec)
        pts = doppler_targets(rng, b[vis], (tw.vx, tw.vy), tw.yaw_rate, sc_spec,
                              scene.doppler_noise_sigma, scene.outlier_fraction, lm_refl[vis])
        singlechip.append(DopplerFrame(t, pts))

    cascade, gt = [], []
    for j, t in enumerate(t_c):
        rng = _frame_rng(scene.seed, _CASCADE_STREAM, j)
        pose = motion.pose_at(t)
        b = body_frame(lm_xy, pose)
        cascade.append(render_heatmap(rng, b, lm_refl, scene, cc_spec, t))
        gt.append(pose)
    truth = Trajectory(gt)
    return Dataset(singlechip, cascade, truth, specs), truth


def write_dataset(ds: Dataset, root_path: str | Path) -> Path:
    return _write_dataset(ds, root_path)


# --- canned fixtures --------------------------------------------------------------


def wall(p0: Sequence[float], p1: Sequence[float], spacing: float) -> np.ndarray:
    n = max(int(round(math.dist(p0, p1) / spacing)), 1)
    s = np.linspace(0.0, 1.0, n + 1)
    return np.asarray(p0, dtype=float)[None, :] * (1 - s[:, None]) + np.asarray(p1, dtype=float)[None, :] * s[:, None]


def room_landmarks(seed: int = 0, lo: float = -2.0, hi: float = 7.0, spacing: float = 0.6,
                   pillars: int = 12) -> np.ndarray:
    """Walls of a square room plus scattered pillars, with random reflectivity."""
    rng = np.random.default_rng([seed, 99])
    corners = [(lo, lo), (hi, lo), (hi, hi), (lo, hi)]
    walls = np.vstack([wall(corners[k], corners[(k + 1) % 4], spacing)[:-1] for k in range(4)])
    walls = walls + rng.normal(0.0, 0.08, walls.shape)
    inner = rng.uniform(lo + 0.8, hi - 0.8, (pillars, 2))
    # keep pillars off the square path itself
    on_path = (np.minimum.reduce([np.abs(inner[:, 0]), np.abs(inner[:, 0] - 5), np.abs(inner[:, 1]),
                                  np.abs(inner[:, 1] - 5)]) < 0.6)
    inner = inner[~on_path]
    xy = np.vstack([walls, inner])
    refl = np.concatenate([rng.uniform(0.3, 1.0, len(walls)), rng.uniform(0.6, 1.0, len(inner))])
    return np.column_stack([xy, refl])


def scattered_landmarks(seed: int = 0, n: int = 300, r_min: float = 1.0, r_max: float = 7.0,
                        min_sep: float = 0.25) -> np.ndarray:
    """``n`` point reflectors spread uniformly over an annulus around the origin, at least ``min_sep`` apart."""
    rng = np.random.default_rng([seed, 5])
    pts: list[tuple[float, float]] = []
    while len(pts) < n:
        r = math.sqrt(rng.uniform(r_min**2, r_max**2))
        a = rng.uniform(-math.pi, math.pi)
        p = (r * math.cos(a), r * math.sin(a))
        if all(math.dist(p, q) >= min_sep for q in pts):
            pts.append(p)
    return np.column_stack([np.array(pts), rng.uniform(0.4, 1.0, n)])


def corridor_landmarks(seed: int = 0, half_width: float = 1.5, x0: float = -2.0, x1: float = 14.0,
                       spacing: float = 0.6) -> np.ndarray:
    """Two parallel walls along +x, mirror images of each other up to jitter."""
    rng = np.random.default_rng([seed, 97])
    xy = np.vstack([wall((x0, half_width), (x1, half_width), spacing),
                    wall((x0, -half_width), (x1, -half_width), spacing)])
    xy = xy + rng.normal(0.0, 0.08, xy.shape)
    return np.column_stack([xy, rng.uniform(0.3, 1.0, len(xy))])


def square_motion(side: float = 5.0, speed: float = 1.0, turn_time: float = 2.0) -> MotionProfile:
    segs = []
    for _ in range(4):
        segs.append(Segment(side / speed, speed, 0.0, 0.0))
        segs.append(Segment(turn_time, 0.0, 0.0, math.pi / 2 / turn_time))
    return MotionProfile(tuple(segs))


NOISY = dict(noise_sigma_intensity=0.05, doppler_noise_sigma=0.05, outlier_fraction=0.1, clutter_density=10.0)


def fixture(name: str, seed: int = 0) -> tuple[Scene, MotionProfile]:
    """Named scenarios used by the tests and ``radar-odom sim --fixture``."""
    room = room_landmarks(seed)
    if name == "stationary":
        return Scene(room, seed=seed), MotionProfile((Segment(4.0),))
    if name == "straight":
        return Scene(corridor_landmarks(seed), seed=seed), MotionProfile((Segment(10.0, 1.0),))
    if name == "square":
        return Scene(room, seed=seed), square_motion()
    if name == "square_noisy":
        return Scene(room, seed=seed, **NOISY), square_motion()
    if name == "rotation":
        # dense point reflectors all around; a narrow splat keeps one dominant cell per reflector
        return Scene(scattered_landmarks(seed), seed=seed, splat_sigma=0.3), MotionProfile(
            (Segment(6.0, 0.0, 0.0, math.radians(20.0)),))
    if name == "challenge_clutter":
        # many small equal-reflectivity objects, no dominant reflector
        rng = np.random.default_rng([seed, 7])
        xy = rng.uniform(-6.0, 8.0, (400, 2))
        xy = xy[np.hypot(xy[:, 0], xy[:, 1] - 0.0) > 0.8]
        return (Scene(np.column_stack([xy, np.full(len(xy), 0.5)]), seed=seed, **NOISY),
                MotionProfile((Segment(4.0, 0.8, 0.0, 0.0), Segment(3.0, 0.5, 0.0, math.radians(15.0)))))
    if name == "challenge_corridor":
        # narrow hallway: dense reflectors close to the sensor on both sides
        left = wall((-2.0, 0.8), (20.0, 0.8), 0.25)
        right = wall((-2.0, -0.8), (20.0, -0.8), 0.25)
        rng = np.random.default_rng([seed, 8])
        xy = np.vstack([left, right])
        return (Scene(np.column_stack([xy, rng.uniform(0.4, 1.0, len(xy))]), seed=seed),
                MotionProfile((Segment(6.0, 1.0, 0.0, 0.0), Segment(2.0, 0.8, 0.0, math.radians(10.0)))))
    raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")


FIXTURES = ("stationary", "straight", "square", "square_noisy", "rotation", "challenge_clutter",
            "challenge_corridor")


# --- config files -----------------------------------------------------------------


def scene_from_mapping(m: Mapping[str, Any]) -> tuple[Scene, MotionProfile]:
    """Scene and motion from a config mapping.

    ``[scene]`` holds Scene fields; landmarks come from ``landmarks = [[x, y, refl], ...]``
    or ``room = {seed, lo, hi, spacing, pillars}``. ``[motion]`` holds
    ``segments = [[duration, vx, vy, yaw_rate_deg], ...]``. A top-level
    ``fixture = "<name>"`` starts from a canned scenario and applies overrides.
    """
    sc = dict(m.get("scene", {}))
    seed = int(sc.get("seed", m.get("seed", 0)))
    if "fixture" in m:
        base_scene, base_motion = fixture(str(m["fixture"]), seed)
    else:
        base_scene, base_motion = None, None
    if "landmarks" in sc:
        landmarks = np.asarray(sc.pop("landmarks"), dtype=float)
    elif "room" in sc:
        landmarks = room_landmarks(**sc.pop("room"))
    elif base_scene is not None:
        landmarks = base_scene.landmarks
    else:
        raise InvalidParamsError("scene config needs landmarks, room, or fixture")
    if base_scene is not None:
        fields_ = {k: getattr(base_scene, k) for k in Scene.__dataclass_fields__ if k != "landmarks"}
        fields_.update(sc)
        sc = fields_
    sc["seed"] = seed
    try:
        scene = Scene(landmarks, **sc)
    except TypeError as e:
        raise InvalidParamsError(f"bad [scene] keys: {e}") from None
    if "motion" in m:
        segs = [Segment(float(d), float(vx), float(vy), math.radians(float(w)))
                for d, vx, vy, w in m["motion"]["segments"]]
        motion = MotionProfile(tuple(segs))
    elif base_motion is not None:
        motion = base_motion
    else:
        raise InvalidParamsError("scene config needs [motion] segments or fixture")
    return scene, motion


def load_scene_config(path: str | Path) -> tuple[Scene, MotionProfile]:
    return scene_from_mapping(load_toml(path))
